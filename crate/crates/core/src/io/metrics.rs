//! Masked relative ℓ2 errors.

use crate::error::{invalid, Result};
use crate::forward::ImagePair;
use crate::geometry::Mask;

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub rel_err_lambda: f64,
    pub rel_err_mu: f64,
    /// (λ, μ) errors per iterate; a single entry for one image.
    pub series: Vec<(f64, f64)>,
}

fn masked_rel(a: &[f64], b: &[f64], m: &[bool], what: &str) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for ((x, y), &k) in a.iter().zip(b).zip(m) {
        if k {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    if den == 0.0 {
        return invalid(format!("ground-truth {what} has zero norm on the disk"));
    }
    Ok((num / den).sqrt())
}

fn pair(u: &ImagePair, truth: &ImagePair, mask: &Mask) -> Result<(f64, f64)> {
    if u.lambda.dim() != truth.lambda.dim() || mask.n != u.n() {
        return invalid("metrics: shape mismatch");
    }
    let m = mask.data.as_slice().unwrap();
    Ok((
        masked_rel(u.lambda_slice(), truth.lambda_slice(), m, "emission")?,
        masked_rel(u.mu_slice(), truth.mu_slice(), m, "attenuation")?,
    ))
}

/// ‖(u−u†)·mask‖ / ‖u†·mask‖ per channel.
pub fn compute_metrics(u: &ImagePair, truth: &ImagePair, mask: &Mask) -> Result<Metrics> {
    let e = pair(u, truth, mask)?;
    Ok(Metrics { rel_err_lambda: e.0, rel_err_mu: e.1, series: vec![e] })
}

/// Metrics of the last iterate with the whole error series.
pub fn trajectory_metrics(iterates: &[ImagePair], truth: &ImagePair, mask: &Mask) -> Result<Metrics> {
    let series = iterates.iter().map(|u| pair(u, truth, mask)).collect::<Result<Vec<_>>>()?;
    let &(l, m) = series.last().ok_or_else(|| crate::Error::Invalid("empty trajectory".into()))?;
    Ok(Metrics { rel_err_lambda: l, rel_err_mu: m, series })
}
