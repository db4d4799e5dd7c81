//! 8-bit binary PGM rendering with fixed per-channel scaling to the bounds.

use std::path::{Path, PathBuf};

use crate::error::{invalid, Result};
use crate::forward::ImagePair;
use crate::io::formats::write_atomic;

pub fn pgm_bytes(plane: &[f64], n: usize, bound: f64) -> Vec<u8> {
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(plane.iter().map(|v| ((v / bound).clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Writes `<stem>_lambda.pgm` and `<stem>_mu.pgm`.
pub fn render(u: &ImagePair, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    if u.lambda.iter().chain(u.mu.iter()).any(|v| !v.is_finite()) {
        return invalid("cannot render non-finite image");
    }
    let n = u.n();
    let name = stem.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let pl = stem.with_file_name(format!("{name}_lambda.pgm"));
    let pm = stem.with_file_name(format!("{name}_mu.pgm"));
    write_atomic(&pl, &pgm_bytes(u.lambda_slice(), n, u.bounds.lambda_max))?;
    write_atomic(&pm, &pgm_bytes(u.mu_slice(), n, u.bounds.mu_max))?;
    Ok((pl, pm))
}
