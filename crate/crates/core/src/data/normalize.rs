use serde::{Deserialize, Serialize};

use super::types::{AgentKind, InteractionTrial};
use crate::error::{Error, Result};

/// Per-dimension affine normalization `(x - shift) / scale`.
///
/// Human streams are z-scored. Robot joints are mapped from `[min, max]` onto
/// `[-1, 1]`, and the range is kept for the range-normalized error metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub kind: AgentKind,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn dims(&self) -> usize {
        self.shift.len()
    }

    pub fn identity(kind: AgentKind, dims: usize) -> Self {
        Self {
            kind,
            shift: vec![0.0; dims],
            scale: vec![1.0; dims],
            min: vec![0.0; dims],
            max: vec![0.0; dims],
        }
    }

    /// Fits from every frame of the given rows.
    pub fn fit_frames<'a>(kind: AgentKind, frames: impl IntoIterator<Item = &'a Vec<f64>>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        let mut rows: Vec<&Vec<f64>> = Vec::new();
        for f in frames {
            if n == 0 {
                sum = vec![0.0; f.len()];
                min = f.clone();
                max = f.clone();
            } else if f.len() != sum.len() {
                return Err(Error::InvalidArgument(format!(
                    "frame with {} dims, expected {}",
                    f.len(),
                    sum.len()
                )));
            }
            for (d, v) in f.iter().enumerate() {
                sum[d] += v;
                min[d] = min[d].min(*v);
                max[d] = max[d].max(*v);
            }
            rows.push(f);
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientData("no frames to fit a normalizer".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        sum_sq.resize(mean.len(), 0.0);
        for f in &rows {
            for (d, v) in f.iter().enumerate() {
                sum_sq[d] += (v - mean[d]).powi(2);
            }
        }
        let (shift, scale) = match kind {
            AgentKind::Human => {
                let std = sum_sq.iter().map(|s| (s / n as f64).sqrt());
                (mean.clone(), std.map(|s| if s > 1e-12 { s } else { 1.0 }).collect())
            }
            AgentKind::Robot => min
                .iter()
                .zip(&max)
                .map(|(lo, hi)| {
                    let half = (hi - lo) / 2.0;
                    ((hi + lo) / 2.0, if half > 1e-12 { half } else { 1.0 })
                })
                .unzip(),
        };
        Ok(Self {
            kind,
            shift,
            scale,
            min,
            max,
        })
    }

    pub fn apply_frame(&self, frame: &[f64]) -> Vec<f64> {
        frame
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.shift[i % self.dims()]) / self.scale[i % self.dims()])
            .collect()
    }

    pub fn invert_frame(&self, frame: &[f64]) -> Vec<f64> {
        frame
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.scale[i % self.dims()] + self.shift[i % self.dims()])
            .collect()
    }

    /// Applies to every frame; also accepts flat windows (length a multiple of dims).
    pub fn apply(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames.iter().map(|f| self.apply_frame(f)).collect()
    }

    pub fn invert(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames.iter().map(|f| self.invert_frame(f)).collect()
    }

    /// Range `max - min` of a dimension in the fitting data.
    pub fn range(&self, dim: usize) -> f64 {
        self.max[dim] - self.min[dim]
    }
}

/// Fits on every stream of `kind` in the (training) trials.
pub fn fit_normalizer(train: &[InteractionTrial], kind: AgentKind) -> Result<Normalizer> {
    let frames = train.iter().flat_map(|t| t.streams_of(kind)).flat_map(|s| s.frames.iter());
    Normalizer::fit_frames(kind, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_values() {
        let rows = [vec![0.0, 5.0], vec![2.0, 5.0]];
        let n = Normalizer::fit_frames(AgentKind::Human, rows.iter()).unwrap();
        assert_eq!(n.shift, vec![1.0, 5.0]);
        assert_eq!(n.scale, vec![1.0, 1.0]);
        assert_eq!(n.apply_frame(&[2.0, 7.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn robot_range() {
        let rows = [vec![-1.0, 0.5], vec![3.0, 0.5]];
        let n = Normalizer::fit_frames(AgentKind::Robot, rows.iter()).unwrap();
        assert_eq!(n.apply_frame(&[3.0, 0.5]), vec![1.0, 0.0]);
        assert_eq!(n.apply_frame(&[-1.0, 0.5]), vec![-1.0, 0.0]);
        assert_eq!(n.range(0), 4.0);
        assert_eq!(n.range(1), 0.0);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        for kind in [AgentKind::Human, AgentKind::Robot] {
            let n = Normalizer::fit_frames(kind, rows.iter()).unwrap();
            let back = n.invert(&n.apply(&rows));
            for (a, b) in rows.iter().flatten().zip(back.iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_window_uses_dim_cycle() {
        let rows = [vec![0.0, 10.0], vec![2.0, 30.0]];
        let n = Normalizer::fit_frames(AgentKind::Human, rows.iter()).unwrap();
        assert_eq!(n.apply_frame(&[0.0, 10.0, 2.0, 30.0]), vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn empty_is_error() {
        assert!(Normalizer::fit_frames(AgentKind::Human, std::iter::empty()).is_err());
    }
}
