use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::Tensor;

/// How a flat square image becomes a time series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    /// One image row per step.
    #[default]
    RowScan,
    /// One input line per pixel; a pixel fires once, brighter pixels earlier.
    ThresholdCrossing,
}

fn side_of(d: usize) -> Result<usize> {
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d || d == 0 {
        return Err(invalid(format!("image of {d} pixels is not square")));
    }
    Ok(side)
}

/// Spike step for intensity `p` in `[0, 1]`; `None` for black pixels.
fn crossing_step(p: f64, steps: usize) -> Option<usize> {
    (p > 0.0).then(|| (((1.0 - p) * steps as f64).floor() as usize).min(steps - 1))
}

/// `[N × side²]` images to `[N × T × D]` sequences. `steps` is only used by
/// threshold crossing (row scan always has one step per row).
pub fn image_to_sequence(images: &Tensor, mode: SequenceMode, steps: usize) -> Result<Tensor> {
    let [n, d] = *images.shape() else {
        return Err(invalid(format!("expected [N × pixels], got {:?}", images.shape())));
    };
    let side = side_of(d)?;
    match mode {
        SequenceMode::RowScan => images.reshape(&[n, side, side]),
        SequenceMode::ThresholdCrossing => {
            if steps == 0 {
                return Err(invalid("threshold crossing needs at least one step"));
            }
            let mut out = vec![0.0; n * steps * d];
            for (i, img) in images.data().chunks(d).enumerate() {
                for (j, &p) in img.iter().enumerate() {
                    if let Some(t) = crossing_step(p, steps) {
                        out[(i * steps + t) * d + j] = 1.0;
                    }
                }
            }
            Tensor::new(vec![n, steps, d], out)
        }
    }
}
