#![allow(dead_code)]
use num_complex::Complex64;
use pget_core::accelerator::fno::SpectralWeights;
use pget_core::accelerator::nn::{gelu, pointwise, Feat};
use pget_core::forward::{Bounds, ImagePair, Projector};
use pget_core::geometry::{build_grid, build_ray_tables, DetectorSpec, Mask};
use rand::Rng;

pub fn projector(n: usize, h: f64, n_angles: usize) -> Projector {
    let g = build_grid(n, h).unwrap();
    let det = DetectorSpec::with_angles(&g, n_angles);
    Projector::new(build_ray_tables(&g, &det).unwrap())
}

/// Random admissible pair: λ ∈ [0, lmax], μ ∈ [0, mmax] inside the disk.
pub fn random_pair(mask: &Mask, rng: &mut impl Rng, lmax: f64, mmax: f64) -> ImagePair {
    let mut u = ImagePair::zeros(mask.n, Bounds::default());
    for ((l, m), &b) in u.lambda.iter_mut().zip(u.mu.iter_mut()).zip(mask.data.iter()) {
        if b {
            *l = lmax * rng.random::<f64>();
            *m = mmax * rng.random::<f64>();
        }
    }
    u
}

/// Random perturbation supported on the disk.
pub fn random_dir(mask: &Mask, rng: &mut impl Rng, sl: f64, sm: f64) -> ImagePair {
    let mut u = ImagePair::zeros(mask.n, Bounds::default());
    for ((l, m), &b) in u.lambda.iter_mut().zip(u.mu.iter_mut()).zip(mask.data.iter()) {
        if b {
            *l = sl * (rng.random::<f64>() - 0.5);
            *m = sm * (rng.random::<f64>() - 0.5);
        }
    }
    u
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(f64::MIN_POSITIVE)
}

/// fno_layer by explicit DFT sums over the retained modes.
pub fn dense_fno_layer(v: &Feat, r: &SpectralWeights, a: &[f64], ab: &[f64], sb: &[f64]) -> Vec<f64> {
    let (ci, co, m, n) = (v.c, r.c_out, r.modes, v.h);
    let tau = 2.0 * std::f64::consts::PI / n as f64;
    let freqs: Vec<isize> = (0..m).map(|p| p as isize - (m / 2) as isize).collect();
    let spec: Vec<Vec<Complex64>> = (0..ci)
        .map(|c| {
            let mut out = Vec::new();
            for &kx in &freqs {
                for &ky in &freqs {
                    let mut acc = Complex64::default();
                    for i in 0..n {
                        for j in 0..n {
                            let ph = -tau * (kx * i as isize + ky * j as isize) as f64;
                            acc += v.plane(c)[i * n + j] * Complex64::from_polar(1.0, ph);
                        }
                    }
                    out.push(acc);
                }
            }
            out
        })
        .collect();
    let lin = pointwise(v, a, Some(ab), co);
    let mut want = vec![0.0; co * n * n];
    for o in 0..co {
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::default();
                for (p, &kx) in freqs.iter().enumerate() {
                    for (q, &ky) in freqs.iter().enumerate() {
                        let y: Complex64 = (0..ci).map(|c| r.get(o, c, p, q) * spec[c][p * m + q]).sum();
                        acc += y * Complex64::from_polar(1.0, tau * (kx * i as isize + ky * j as isize) as f64);
                    }
                }
                let k = i * n + j;
                want[o * n * n + k] = gelu(lin.plane(o)[k] + acc.re / (n * n) as f64 + sb[o]);
            }
        }
    }
    want
}
