use super::normalize::Normalizer;
use super::types::{AgentStream, WindowSpec};
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Number of windows `floor((T - w) / stride) + 1`, or 0 when `T < w`.
pub fn window_count(t: usize, spec: WindowSpec) -> usize {
    if t < spec.w || spec.stride == 0 {
        0
    } else {
        (t - spec.w) / spec.stride + 1
    }
}

/// Frame-major flattening of `frames[t..t + w]`.
pub fn flat_window(frames: &[Vec<f64>], t: usize, w: usize) -> Vec<f64> {
    frames[t..t + w].iter().flatten().copied().collect()
}

pub fn extract_windows(stream: &AgentStream, spec: WindowSpec) -> Result<Vec<(usize, Vec<f64>)>> {
    if spec.w == 0 || spec.stride == 0 {
        return Err(Error::InvalidArgument("window length and stride must be positive".into()));
    }
    if stream.len() < spec.w {
        return Err(Error::InsufficientData(format!(
            "stream has {} frames, window needs {}",
            stream.len(),
            spec.w
        )));
    }
    Ok((0..window_count(stream.len(), spec))
        .map(|k| {
            let t = k * spec.stride;
            (t, flat_window(&stream.frames, t, spec.w))
        })
        .collect())
}

/// Normalized flat windows of every stream stacked as rows. Streams shorter
/// than one window contribute nothing.
pub fn normalized_windows<'a>(
    streams: impl IntoIterator<Item = &'a AgentStream>,
    normalizer: &Normalizer,
    spec: WindowSpec,
) -> Result<Mat> {
    let cols = spec.w * normalizer.dims();
    let mut data = Vec::new();
    for s in streams {
        if s.dims != normalizer.dims() {
            return Err(Error::Shape {
                op: "normalized_windows",
                expected: normalizer.dims().to_string(),
                got: s.dims.to_string(),
            });
        }
        if s.len() < spec.w {
            continue;
        }
        let frames = normalizer.apply(&s.frames);
        for k in 0..window_count(frames.len(), spec) {
            let t = k * spec.stride;
            for f in &frames[t..t + spec.w] {
                data.extend_from_slice(f);
            }
        }
    }
    Ok(Mat::from_vec(data.len() / cols.max(1), cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::AgentKind;
    use proptest::prelude::*;

    fn ramp(t: usize, dims: usize) -> AgentStream {
        let frames = (0..t).map(|i| (0..dims).map(|d| (i * 10 + d) as f64).collect()).collect();
        AgentStream::new(AgentKind::Human, frames, 40.0).unwrap()
    }

    #[test]
    fn counts_and_content() {
        let s = ramp(100, 3);
        let ws = extract_windows(&s, WindowSpec { w: 40, stride: 1 }).unwrap();
        assert_eq!(ws.len(), 61);
        let (t, win) = &ws[5];
        assert_eq!(*t, 5);
        let expected: Vec<f64> = s.frames[5..45].iter().flatten().copied().collect();
        assert_eq!(win, &expected);

        let short = ramp(40, 2);
        let one = extract_windows(&short, WindowSpec { w: 40, stride: 3 }).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].1, short.frames.concat());
        assert!(extract_windows(&ramp(39, 2), WindowSpec::default()).is_err());
    }

    proptest! {
        #[test]
        fn count_formula(t in 1usize..200, w in 1usize..60, stride in 1usize..20) {
            prop_assume!(t >= w);
            let ws = extract_windows(&ramp(t, 1), WindowSpec { w, stride }).unwrap();
            prop_assert_eq!(ws.len(), (t - w) / stride + 1);
            for (k, (start, win)) in ws.iter().enumerate() {
                prop_assert_eq!(*start, k * stride);
                prop_assert_eq!(win.len(), w);
            }
        }
    }
}
