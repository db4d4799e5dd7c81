//! Discrete attenuated-Radon forward model with exact Jacobian-vector and
//! adjoint products.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{geometry_hash, Mask, RayTables, RotationOp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lambda_max: f64,
    pub mu_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { lambda_max: 1.0e6, mu_max: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub lambda: Array2<f64>,
    pub mu: Array2<f64>,
    pub bounds: Bounds,
}

impl ImagePair {
    pub fn zeros(n: usize, bounds: Bounds) -> ImagePair {
        ImagePair { lambda: Array2::zeros((n, n)), mu: Array2::zeros((n, n)), bounds }
    }

    /// Constant pair inside the mask.
    pub fn constant(mask: &Mask, lambda: f64, mu: f64, bounds: Bounds) -> ImagePair {
        let f = |v: f64| mask.data.mapv(|b| if b { v } else { 0.0 });
        ImagePair { lambda: f(lambda), mu: f(mu), bounds }
    }

    pub fn n(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn lambda_slice(&self) -> &[f64] {
        self.lambda.as_slice().expect("standard layout")
    }

    pub fn mu_slice(&self) -> &[f64] {
        self.mu.as_slice().expect("standard layout")
    }

    /// Stacked vector (λ then μ).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.lambda.len());
        v.extend(self.lambda.iter());
        v.extend(self.mu.iter());
        v
    }

    pub fn from_vec(n: usize, v: &[f64], bounds: Bounds) -> ImagePair {
        assert_eq!(v.len(), 2 * n * n);
        ImagePair {
            lambda: Array2::from_shape_vec((n, n), v[..n * n].to_vec()).unwrap(),
            mu: Array2::from_shape_vec((n, n), v[n * n..].to_vec()).unwrap(),
            bounds,
        }
    }

    pub fn apply_mask(&mut self, mask: &Mask) {
        mask.apply(&mut self.lambda);
        mask.apply(&mut self.mu);
    }

    /// Checks the ImagePair invariants.
    pub fn validate(&self, mask: &Mask) -> Result<()> {
        if mask.n != self.n() || self.mu.dim() != self.lambda.dim() {
            return invalid("image / mask shape mismatch");
        }
        for (k, (&l, &m)) in self.lambda.iter().zip(self.mu.iter()).enumerate() {
            if !l.is_finite() || !m.is_finite() {
                return Err(Error::NonFinite("image pair"));
            }
            let tol_l = 1e-12 * self.bounds.lambda_max;
            let tol_m = 1e-12 * self.bounds.mu_max;
            if l < -tol_l || m < -tol_m || l > self.bounds.lambda_max + tol_l || m > self.bounds.mu_max + tol_m {
                return invalid(format!("pixel {k} outside bounds"));
            }
            if !mask.data.as_slice().unwrap()[k] && (l != 0.0 || m != 0.0) {
                return invalid(format!("pixel {k} nonzero outside disk"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    /// [n_offsets, n_angles]
    pub y: Array2<f64>,
    pub grid_hash: u64,
}

impl Sinogram {
    pub fn norm(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

const ANGLE_CHUNK: usize = 4;
const ROTATION_CACHE_LIMIT: usize = 2_000_000;

/// Forward operator bound to a set of ray tables.
#[derive(Clone, Debug)]
pub struct Projector {
    pub tables: RayTables,
    rotations: Vec<RotationOp>,
    hash: u64,
}

impl Projector {
    pub fn new(tables: RayTables) -> Projector {
        let n = tables.grid.n_px;
        // sparse rotation caches cost ~48 bytes per pixel and angle
        let cache = n * n * tables.det.n_angles <= ROTATION_CACHE_LIMIT;
        let rotations = tables.det.angles().iter().map(|&t| RotationOp::new(n, t, cache)).collect();
        let hash = geometry_hash(&tables.grid, &tables.det);
        Projector { tables, rotations, hash }
    }

    pub fn n_px(&self) -> usize {
        self.tables.grid.n_px
    }

    pub fn n_offsets(&self) -> usize {
        self.tables.det.n_offsets
    }

    pub fn n_angles(&self) -> usize {
        self.rotations.len()
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn mask(&self) -> &Mask {
        &self.tables.mask
    }

    fn check(&self, lambda: &[f64], mu: &[f64]) -> Result<()> {
        let nn = self.tables.grid.n_pixels();
        if lambda.len() != nn || mu.len() != nn {
            return invalid(format!(
                "table/grid mismatch: tables for {} pixels, image has {}",
                nn,
                lambda.len()
            ));
        }
        Ok(())
    }

    fn to_sinogram(&self, cols: Vec<Vec<f64>>) -> Sinogram {
        let (no, na) = (self.n_offsets(), self.n_angles());
        let mut y = Array2::zeros((no, na));
        for (a, col) in cols.into_iter().enumerate() {
            for (o, v) in col.into_iter().enumerate() {
                y[[o, a]] = v;
            }
        }
        Sinogram { y, grid_hash: self.hash }
    }

    pub fn project(&self, u: &ImagePair) -> Result<Sinogram> {
        self.project_raw(u.lambda_slice(), u.mu_slice())
    }

    pub fn project_raw(&self, lambda: &[f64], mu: &[f64]) -> Result<Sinogram> {
        self.check(lambda, mu)?;
        let t = &self.tables;
        let nn = t.grid.n_pixels();
        let cols: Vec<Vec<f64>> = self
            .rotations
            .par_iter()
            .map(|rot| {
                let mut la = vec![0.0; nn];
                let mut ma = vec![0.0; nn];
                rot.apply_into(lambda, &mut la);
                rot.apply_into(mu, &mut ma);
                let mut col = vec![0.0; t.det.n_offsets];
                let mut atten = vec![0.0; t.n_sources()];
                t.chain.integrate(&ma, &mut atten);
                for (s, &m) in t.sources.iter().enumerate() {
                    let lm = la[m];
                    if lm == 0.0 {
                        continue;
                    }
                    for f in t.fp_ptr[s]..t.fp_ptr[s + 1] {
                        col[t.fp_off[f] as usize] += lm * t.fp_r[f] * (-t.fp_c[f] * atten[s]).exp();
                    }
                }
                col
            })
            .collect();
        Ok(self.to_sinogram(cols))
    }

    /// Precomputes rotated emission and footprint-weighted transmission
    /// factors at u for repeated jvp / vjp evaluation.
    pub fn linearize(&self, u: &ImagePair) -> Result<Linearization<'_>> {
        self.linearize_raw(u.lambda_slice(), u.mu_slice())
    }

    pub fn linearize_raw(&self, lambda: &[f64], mu: &[f64]) -> Result<Linearization<'_>> {
        self.check(lambda, mu)?;
        let t = &self.tables;
        let nn = t.grid.n_pixels();
        let per_angle: Vec<AngleCache> = self
            .rotations
            .par_iter()
            .map(|rot| {
                let mut la = vec![0.0; nn];
                let mut ma = vec![0.0; nn];
                rot.apply_into(lambda, &mut la);
                rot.apply_into(mu, &mut ma);
                let mut e = vec![0.0; t.fp_off.len()];
                let mut atten = vec![0.0; t.n_sources()];
                t.chain.integrate(&ma, &mut atten);
                for s in 0..t.sources.len() {
                    for f in t.fp_ptr[s]..t.fp_ptr[s + 1] {
                        e[f] = t.fp_r[f] * (-t.fp_c[f] * atten[s]).exp();
                    }
                }
                let lam_src = t.sources.iter().map(|&m| la[m]).collect();
                AngleCache { lam_src, e }
            })
            .collect();
        Ok(Linearization { p: self, per_angle })
    }
}

struct AngleCache {
    lam_src: Vec<f64>,
    e: Vec<f64>,
}

pub struct Linearization<'a> {
    p: &'a Projector,
    per_angle: Vec<AngleCache>,
}

impl Linearization<'_> {
    pub fn projector(&self) -> &Projector {
        self.p
    }

    /// F(u) from the cached factors.
    pub fn value(&self) -> Sinogram {
        let t = &self.p.tables;
        let cols = self
            .per_angle
            .iter()
            .map(|c| {
                let mut col = vec![0.0; t.det.n_offsets];
                for s in 0..t.sources.len() {
                    for f in t.fp_ptr[s]..t.fp_ptr[s + 1] {
                        col[t.fp_off[f] as usize] += c.lam_src[s] * c.e[f];
                    }
                }
                col
            })
            .collect();
        self.p.to_sinogram(cols)
    }

    pub fn jvp(&self, du: &ImagePair) -> Result<Sinogram> {
        self.jvp_raw(du.lambda_slice(), du.mu_slice())
    }

    pub fn jvp_raw(&self, dlambda: &[f64], dmu: &[f64]) -> Result<Sinogram> {
        self.p.check(dlambda, dmu)?;
        let t = &self.p.tables;
        let nn = t.grid.n_pixels();
        let cols: Vec<Vec<f64>> = self
            .per_angle
            .par_iter()
            .zip(self.p.rotations.par_iter())
            .map(|(c, rot)| {
                let mut dla = vec![0.0; nn];
                let mut dma = vec![0.0; nn];
                rot.apply_into(dlambda, &mut dla);
                rot.apply_into(dmu, &mut dma);
                let mut col = vec![0.0; t.det.n_offsets];
                let mut datten = vec![0.0; t.n_sources()];
                t.chain.integrate(&dma, &mut datten);
                for (s, &m) in t.sources.iter().enumerate() {
                    let da = datten[s];
                    let dl = dla[m];
                    let lam = c.lam_src[s];
                    for f in t.fp_ptr[s]..t.fp_ptr[s + 1] {
                        col[t.fp_off[f] as usize] += c.e[f] * (dl - lam * t.fp_c[f] * da);
                    }
                }
                col
            })
            .collect();
        Ok(self.p.to_sinogram(cols))
    }

    pub fn vjp(&self, w: &Sinogram) -> Result<(Array2<f64>, Array2<f64>)> {
        let (gl, gm) = self.vjp_raw(w)?;
        let n = self.p.n_px();
        Ok((
            Array2::from_shape_vec((n, n), gl).unwrap(),
            Array2::from_shape_vec((n, n), gm).unwrap(),
        ))
    }

    pub fn vjp_raw(&self, w: &Sinogram) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = &self.p.tables;
        let nn = t.grid.n_pixels();
        if w.y.dim() != (self.p.n_offsets(), self.p.n_angles()) {
            return invalid("sinogram shape does not match detector");
        }
        let n_ang = self.p.n_angles();
        // fixed chunking keeps the summation order independent of the thread count
        let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_ang.div_ceil(ANGLE_CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let mut gl = vec![0.0; nn];
                let mut gm = vec![0.0; nn];
                let mut gla = vec![0.0; nn];
                let mut gma = vec![0.0; nn];
                let mut ga = vec![0.0; t.n_sources()];
                for a in chunk * ANGLE_CHUNK..((chunk + 1) * ANGLE_CHUNK).min(n_ang) {
                    let c = &self.per_angle[a];
                    gla.iter_mut().for_each(|v| *v = 0.0);
                    gma.iter_mut().for_each(|v| *v = 0.0);
                    for (s, &m) in t.sources.iter().enumerate() {
                        let mut acc_l = 0.0;
                        let mut acc_a = 0.0;
                        for f in t.fp_ptr[s]..t.fp_ptr[s + 1] {
                            let ew = c.e[f] * w.y[[t.fp_off[f] as usize, a]];
                            acc_l += ew;
                            acc_a += ew * t.fp_c[f];
                        }
                        gla[m] += acc_l;
                        ga[s] = -c.lam_src[s] * acc_a;
                    }
                    t.chain.scatter(&mut ga, &mut gma);
                    let rot = &self.p.rotations[a];
                    rot.apply_transpose_add(&gla, &mut gl);
                    rot.apply_transpose_add(&gma, &mut gm);
                }
                (gl, gm)
            })
            .collect();
        let mut gl = vec![0.0; nn];
        let mut gm = vec![0.0; nn];
        for (cl, cm) in chunks {
            for (a, b) in gl.iter_mut().zip(cl) {
                *a += b;
            }
            for (a, b) in gm.iter_mut().zip(cm) {
                *a += b;
            }
        }
        Ok((gl, gm))
    }
}

pub fn project(u: &ImagePair, p: &Projector) -> Result<Sinogram> {
    p.project(u)
}

pub fn jvp(u: &ImagePair, du: &ImagePair, p: &Projector) -> Result<Sinogram> {
    p.linearize(u)?.jvp(du)
}

pub fn vjp(u: &ImagePair, w: &Sinogram, p: &Projector) -> Result<(Array2<f64>, Array2<f64>)> {
    p.linearize(u)?.vjp(w)
}

/// y + level·‖y‖₂/√N·ε with ε ~ N(0,1) drawn from ChaCha8 seeded by `seed`.
pub fn add_noise(y: &Sinogram, level: f64, seed: u64) -> Sinogram {
    let mut out = y.clone();
    if level == 0.0 || y.is_empty() {
        return out;
    }
    let sigma = level * y.norm() / (y.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.y.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * e;
    }
    out
}
