use crate::error::{Error, Result};
use crate::geometry::{dot, NormalMap};

/// Mean of `1 − n·ñ` over the shared foreground mask; lies in [0, 2].
pub fn cosine_loss(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    pred.same_layout(gt)?;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for ((p, g), &m) in pred.normals.iter().zip(&gt.normals).zip(&pred.mask) {
        if m {
            total += 1.0 - dot(*p, *g) as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(total / count as f64)
}
