use interact_core::data::{AgentKind, Normalizer, WindowSpec};
use interact_core::embedding::{EmbeddingConfig, EmbeddingModel};
use interact_core::nn::gaussian::{gaussian_loglik, reparameterize, standard_normal_vec, GaussianParams};
use interact_core::nn::gradcheck::{central_differences, max_relative_error};
use interact_core::nn::{Graph, Mat, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64, latent: usize, dims: usize, w: usize) -> EmbeddingModel {
    let cfg = EmbeddingConfig {
        latent_dim: latent,
        hidden: vec![5],
        window: WindowSpec { w, stride: 1 },
        seed,
        ..EmbeddingConfig::default()
    };
    EmbeddingModel::new(cfg, AgentKind::Human, Normalizer::identity(AgentKind::Human, dims)).unwrap()
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let model = tiny(seed, 3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = Mat::from_vec(4, 6, (0..24).map(|_| rng.gen_range(-1.5..1.5)).collect());
        let noise = Mat::from_vec(4, 3, standard_normal_vec(&mut rng, 12));
        let loss_of = |p: &ParamSet| {
            let mut m = model.clone();
            m.params = p.clone();
            let mut g = Graph::new(&m.params);
            let l = m.batch_loss(&mut g, &x, noise.clone(), 1.0).unwrap();
            g.value(l).get(0, 0)
        };
        let mut g = Graph::new(&model.params);
        let l = model.batch_loss(&mut g, &x, noise.clone(), 1.0).unwrap();
        let analytic = g.backward(l).unwrap();
        let numeric = central_differences(&model.params, 1e-5, loss_of);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

#[test]
fn elbo_bounds_importance_sampled_marginal() {
    let n = 10_000;
    for seed in 0..4 {
        let model = tiny(seed, 2, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7 + seed);
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let q = model.encode(&x).unwrap();
        let prior = GaussianParams::standard(2);
        let mut weights = Vec::with_capacity(n);
        let mut elbos = Vec::with_capacity(n);
        for _ in 0..n {
            let eps = standard_normal_vec(&mut rng, 2);
            let z = reparameterize(&q, &eps).unwrap();
            let px = model.decode(&z).unwrap();
            let lw = gaussian_loglik(&x, &px).unwrap() + gaussian_loglik(&z, &prior).unwrap() - gaussian_loglik(&z, &q).unwrap();
            weights.push(lw);
            elbos.push(model.elbo(&x, &eps).unwrap().elbo);
        }
        let log_px = log_mean_exp(&weights);
        let mean_elbo = elbos.iter().sum::<f64>() / n as f64;
        let sd = (elbos.iter().map(|e| (e - mean_elbo).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean_elbo <= log_px + 3.0 * sd / (n as f64).sqrt(), "seed {seed}: {mean_elbo} > {log_px}");
    }
}
