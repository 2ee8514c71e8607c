use crate::error::{Error, Result};

use super::FeatureMatrix;

/// Slides a window of `window` frames with the given `stride` over the
/// zero-padded frame stream and mean-pools each window into one snippet row.
///
/// The stream is padded with `pad` zero frames at both ends, so the snippet
/// count is `(n_frames + 2*pad - window) / stride + 1`.
pub fn window_snippets(
    frames: &FeatureMatrix,
    window: usize,
    stride: usize,
    pad: usize,
) -> Result<FeatureMatrix> {
    let n_frames = frames.rows();
    if n_frames == 0 || window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "need frames >= 1, window >= 1, stride >= 1 (got {n_frames}, {window}, {stride})"
        )));
    }
    let padded = n_frames + 2 * pad;
    if window > padded {
        return Err(Error::InvalidArgument(format!(
            "window {window} exceeds padded length {padded}"
        )));
    }
    let d = frames.cols();
    let count = (padded - window) / stride + 1;
    let mut out = FeatureMatrix::zeros(count, d);
    let mut acc = vec![0.0f64; d];
    for t in 0..count {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let start = t * stride;
        for p in start..start + window {
            // padded index p maps to frame p - pad when inside the real stream
            if p < pad || p - pad >= n_frames {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(frames.row(p - pad)) {
                *a += f64::from(v);
            }
        }
        for (o, a) in out.row_mut(t).iter_mut().zip(&acc) {
            *o = (a / window as f64) as f32;
        }
    }
    Ok(out)
}
