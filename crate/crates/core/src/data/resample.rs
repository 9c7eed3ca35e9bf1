use super::types::AgentStream;
use crate::error::{Error, Result};

/// Linear interpolation onto a `target_hz` grid starting at the first frame.
pub fn resample(stream: &AgentStream, target_hz: f64) -> Result<AgentStream> {
    if !(stream.rate_hz > 0.0) || !(target_hz > 0.0) || !target_hz.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rates must be positive (source {}, target {target_hz})",
            stream.rate_hz
        )));
    }
    if target_hz == stream.rate_hz {
        return Ok(stream.clone());
    }
    let n = stream.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("cannot interpolate a stream of {n} frame(s)")));
    }
    let duration = (n - 1) as f64 / stream.rate_hz;
    let count = (duration * target_hz + 1e-9).floor() as usize + 1;
    let mut frames = Vec::with_capacity(count);
    for k in 0..count {
        let pos = k as f64 / target_hz * stream.rate_hz;
        let i = (pos.floor() as usize).min(n - 2);
        let a = pos - i as f64;
        let (f0, f1) = (&stream.frames[i], &stream.frames[i + 1]);
        frames.push(f0.iter().zip(f1).map(|(x0, x1)| x0 + a * (x1 - x0)).collect());
    }
    Ok(AgentStream {
        kind: stream.kind,
        dims: stream.dims,
        frames,
        rate_hz: target_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::AgentKind;

    fn stream(values: Vec<Vec<f64>>, hz: f64) -> AgentStream {
        AgentStream::new(AgentKind::Human, values, hz).unwrap()
    }

    #[test]
    fn ramp_100_to_40() {
        let s = stream((0..5).map(|i| vec![i as f64]).collect(), 100.0);
        let r = resample(&s, 40.0).unwrap();
        assert_eq!(r.frames, vec![vec![0.0], vec![2.5]]);
        assert_eq!(r.rate_hz, 40.0);
    }

    #[test]
    fn identity_rate() {
        let s = stream(vec![vec![1.0, 2.0]], 40.0);
        assert_eq!(resample(&s, 40.0).unwrap(), s);
    }

    #[test]
    fn sine_matches_analytic() {
        let f = |t: f64| (2.0 * std::f64::consts::PI * 2.0 * t).sin();
        let s = stream((0..300).map(|i| vec![f(i as f64 / 100.0)]).collect(), 100.0);
        let r = resample(&s, 40.0).unwrap();
        let worst = r
            .frames
            .iter()
            .enumerate()
            .map(|(k, v)| (v[0] - f(k as f64 / 40.0)).abs())
            .fold(0.0, f64::max);
        // Chord error of linear interpolation at a 100 Hz midpoint.
        let bound = (2.0 * std::f64::consts::PI * 2.0 * 0.01f64).powi(2) / 8.0;
        assert!(worst <= bound + 1e-12, "{worst} > {bound}");
        assert!(worst > 0.9 * bound);
    }

    #[test]
    fn single_frame_needs_interpolation() {
        let s = stream(vec![vec![1.0]], 100.0);
        assert!(resample(&s, 40.0).is_err());
    }
}
