//! Tape gradients against central finite differences, for every primitive.

use interact_core::nn::gradcheck::{central_differences, max_relative_error};
use interact_core::nn::{Activation, GruCell, Graph, Mat, ParamId, ParamSet, ParamTensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize, lo: f64, hi: f64) -> ParamId {
    let v = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    ps.push(ParamTensor::new(name, vec![rows, cols], v).unwrap())
}

/// Builds the loss twice: once on the tape for backward, once per perturbed
/// parameter set for the numeric oracle (forward value only).
fn check(seed: u64, build: impl Fn(&mut Graph<'_>, &mut ChaCha8Rng) -> Var, setup: impl Fn(&mut ParamSet, &mut ChaCha8Rng)) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    setup(&mut ps, &mut rng);
    let build_seed = rng.gen::<u64>();
    let loss_of = |p: &ParamSet| {
        let mut g = Graph::new(p);
        let mut r = ChaCha8Rng::seed_from_u64(build_seed);
        let out = build(&mut g, &mut r);
        g.value(out).get(0, 0)
    };
    let mut g = Graph::new(&ps);
    let mut r = ChaCha8Rng::seed_from_u64(build_seed);
    let out = build(&mut g, &mut r);
    let analytic = g.backward(out).unwrap();
    let numeric = central_differences(&ps, STEP, loss_of);
    max_relative_error(&analytic, &numeric)
}

/// Random linear functional of a node, reducing it to a scalar.
fn project(g: &mut Graph<'_>, rng: &mut ChaCha8Rng, v: Var) -> Var {
    let n = g.value(v).data().len();
    let w = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    g.weighted_sum(v, w).unwrap()
}

fn p(g: &mut Graph<'_>, i: usize) -> Var {
    g.param(ParamId(i))
}

fn two(ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
    rand_tensor(ps, rng, "a", 3, 4, -1.0, 1.0);
    rand_tensor(ps, rng, "b", 3, 4, -1.0, 1.0);
}

fn four_gauss(ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
    rand_tensor(ps, rng, "m1", 2, 3, -1.0, 1.0);
    rand_tensor(ps, rng, "lv1", 2, 3, -1.0, 1.0);
    rand_tensor(ps, rng, "m2", 2, 3, -1.0, 1.0);
    rand_tensor(ps, rng, "lv2", 2, 3, -1.0, 1.0);
}

fn assert_all_seeds(name: &str, f: impl Fn(u64) -> f64) {
    for seed in 0..10 {
        let e = f(seed);
        assert!(e < TOL, "{name} seed {seed}: relative error {e:e}");
    }
}

#[test]
fn linear_gradients() {
    assert_all_seeds("linear", |s| {
        check(
            s,
            |g, r| {
                let (x, w, b) = (p(g, 0), p(g, 1), p(g, 2));
                let y = g.linear(x, w, Some(b)).unwrap();
                project(g, r, y)
            },
            |ps, r| {
                rand_tensor(ps, r, "x", 3, 5, -1.0, 1.0);
                rand_tensor(ps, r, "w", 4, 5, -1.0, 1.0);
                rand_tensor(ps, r, "b", 1, 4, -1.0, 1.0);
            },
        )
    });
}

#[test]
fn elementwise_gradients() {
    for which in 0..3 {
        assert_all_seeds("elementwise", |s| {
            check(
                s,
                |g, r| {
                    let (a, b) = (p(g, 0), p(g, 1));
                    let y = match which {
                        0 => g.add(a, b).unwrap(),
                        1 => g.sub(a, b).unwrap(),
                        _ => g.mul(a, b).unwrap(),
                    };
                    project(g, r, y)
                },
                two,
            )
        });
    }
}

#[test]
fn unary_gradients() {
    for which in 0..6 {
        assert_all_seeds("unary", |s| {
            check(
                s,
                |g, r| {
                    let a = p(g, 0);
                    let y = match which {
                        0 => g.act(a, Activation::Tanh),
                        1 => g.act(a, Activation::Sigmoid),
                        2 => g.act(a, Activation::Relu),
                        3 => g.exp(a),
                        4 => g.clamp(a, -10.0, 10.0),
                        _ => g.affine(a, -1.7, 0.3),
                    };
                    project(g, r, y)
                },
                |ps, r| {
                    // keep relu inputs away from its kink
                    let v = (0..12)
                        .map(|_| {
                            let x: f64 = r.gen_range(0.05..1.0);
                            if r.gen_bool(0.5) {
                                x
                            } else {
                                -x
                            }
                        })
                        .collect();
                    ps.push(ParamTensor::new("a", vec![3, 4], v).unwrap());
                },
            )
        });
    }
}

#[test]
fn structural_gradients() {
    for which in 0..4 {
        assert_all_seeds("structural", |s| {
            check(
                s,
                |g, r| {
                    let (a, b) = (p(g, 0), p(g, 1));
                    match which {
                        0 => {
                            let y = g.concat(a, b).unwrap();
                            project(g, r, y)
                        }
                        1 => {
                            let y = g.slice(a, 1, 2).unwrap();
                            project(g, r, y)
                        }
                        2 => {
                            let y = g.row_sum(a);
                            let y2 = g.mul(y, y).unwrap();
                            project(g, r, y2)
                        }
                        _ => {
                            let y = g.mul(a, b).unwrap();
                            g.sum_all(y)
                        }
                    }
                },
                two,
            )
        });
    }
}

#[test]
fn gaussian_op_gradients() {
    for which in 0..4 {
        assert_all_seeds("gaussian", |s| {
            check(
                s,
                |g, r| {
                    let (m1, lv1, m2, lv2) = (p(g, 0), p(g, 1), p(g, 2), p(g, 3));
                    match which {
                        0 => {
                            let y = g.kl_diag(m1, lv1, m2, lv2).unwrap();
                            project(g, r, y)
                        }
                        1 => {
                            let y = g.loglik(m2, m1, lv1).unwrap();
                            project(g, r, y)
                        }
                        2 => {
                            let noise = Mat::from_vec(2, 3, (0..6).map(|_| r.gen_range(-2.0..2.0)).collect());
                            let y = g.reparam(m1, lv1, noise).unwrap();
                            project(g, r, y)
                        }
                        _ => {
                            let samples = 8;
                            let mk = |r: &mut ChaCha8Rng| {
                                Mat::from_vec(2, samples * 3, (0..2 * samples * 3).map(|_| r.gen_range(-2.0..2.0)).collect())
                            };
                            let (np, nq) = (mk(r), mk(r));
                            let y = g.jsd((m1, lv1), (m2, lv2), np, nq, samples).unwrap();
                            project(g, r, y)
                        }
                    }
                },
                four_gauss,
            )
        });
    }
}

#[test]
fn gru_step_gradients() {
    assert_all_seeds("gru", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
        let mut ps = ParamSet::new();
        let cell = GruCell::new(&mut ps, "gru", 3, 4, &mut rng);
        for t in ps.iter_mut() {
            t.values.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        let h0 = rand_tensor(&mut ps, &mut rng, "h0", 2, 4, -1.0, 1.0);
        let x = rand_tensor(&mut ps, &mut rng, "x", 2, 3, -1.0, 1.0);
        let weights: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let build = |g: &mut Graph<'_>| {
            let (hv, xv) = (g.param(h0), g.param(x));
            let h1 = cell.forward_graph(g, hv, xv).unwrap();
            let h2 = cell.forward_graph(g, h1, xv).unwrap();
            g.weighted_sum(h2, weights.clone()).unwrap()
        };
        let mut g = Graph::new(&ps);
        let out = build(&mut g);
        let analytic = g.backward(out).unwrap();
        let numeric = central_differences(&ps, STEP, |p| {
            let mut g = Graph::new(p);
            let out = build(&mut g);
            g.value(out).get(0, 0)
        });
        max_relative_error(&analytic, &numeric)
    });
}
