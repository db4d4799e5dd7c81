//! Regularized least-squares objective in bound-normalized variables.
//!
//! The optimizer works with x = (λ/λ_max, μ/μ_max) stacked into one vector
//! of length 2n². The data residual is divided by σ_y = ‖y^δ‖/√N so that the
//! α weights are dimensionless. The stacked residual is
//!
//!   r̃ = ((F(u) − y^δ)/σ_y, √(2α₁)·w⊙a, √(2α₂)·w⊙b)
//!
//! and f = ½‖r̃‖².

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{Bounds, ImagePair, Linearization, Projector, Sinogram};
use crate::geometry::{GridSpec, Mask};
use crate::phantom::{AssemblySpec, LATTICE};

use super::constraints::Constraints;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub decay_factor: f64,
    pub freeze_after: usize,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig { alpha1: 1.0, alpha2: 1.0, decay_factor: 5.0, freeze_after: 3 }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return invalid("alphas must be nonnegative");
        }
        if !(self.decay_factor >= 1.0) {
            return invalid("decay_factor must be >= 1");
        }
        Ok(())
    }

    /// (α₁, α₂) at outer iteration k.
    pub fn alphas_at(&self, k: usize) -> (f64, f64) {
        let d = self.decay_factor.powi(k.min(self.freeze_after) as i32);
        (self.alpha1 / d, self.alpha2 / d)
    }
}

/// Diagonal of P₁ = P₂: zero on dilated rod-lattice sites and outside the
/// disk, one elsewhere.
pub fn geometry_weights(grid: &GridSpec, spec: &AssemblySpec, mask: &Mask) -> Vec<f64> {
    let n = grid.n_px;
    let r = spec.rod_radius + grid.pixel_size;
    let centers: Vec<(f64, f64)> =
        (0..LATTICE).flat_map(|i| (0..LATTICE).map(move |j| (i, j))).map(|(i, j)| spec.lattice_center(i, j)).collect();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if !mask.get(i, j) {
                continue;
            }
            let (x, y) = grid.pixel_center(i, j);
            let near = centers.iter().any(|&(cx, cy)| (x - cx).hypot(y - cy) <= r);
            w[i * n + j] = if near { 0.0 } else { 1.0 };
        }
    }
    w
}

/// Everything that is fixed during a reconstruction.
pub struct Problem<'a> {
    pub projector: &'a Projector,
    pub y: &'a Sinogram,
    pub bounds: Bounds,
    pub weights: Vec<f64>,
    pub constraints: Constraints,
    /// Data residual scale σ_y.
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct Objective {
    pub f: f64,
    /// Stacked residual: data block then two regularization blocks.
    pub r: Vec<f64>,
}

impl Objective {
    pub fn data_term(&self, n_data: usize) -> f64 {
        0.5 * self.r[..n_data].iter().map(|v| v * v).sum::<f64>()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl<'a> Problem<'a> {
    pub fn new(projector: &'a Projector, y: &'a Sinogram, bounds: Bounds, weights: Vec<f64>, constraints: Constraints) -> Result<Problem<'a>> {
        let n = projector.n_px();
        if y.y.dim() != (projector.n_offsets(), projector.n_angles()) {
            return invalid("sinogram shape does not match the detector");
        }
        if y.grid_hash != projector.hash() {
            return invalid("sinogram geometry hash mismatch");
        }
        if weights.len() != n * n || constraints.n_pixels() != n * n {
            return invalid("weights / constraints size mismatch");
        }
        check_finite(y.y.as_slice().unwrap(), "measured sinogram")?;
        let norm_y = y.norm();
        let sigma = if norm_y > 0.0 { norm_y / (y.len() as f64).sqrt() } else { 1.0 };
        Ok(Problem { projector, y, bounds, weights, constraints, sigma })
    }

    pub fn n_px(&self) -> usize {
        self.projector.n_px()
    }

    pub fn n_vars(&self) -> usize {
        2 * self.n_px() * self.n_px()
    }

    pub fn n_data(&self) -> usize {
        self.y.len()
    }

    pub fn n_residual(&self) -> usize {
        self.n_data() + self.n_vars()
    }

    pub fn to_normalized(&self, u: &ImagePair) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_vars());
        x.extend(u.lambda.iter().map(|v| v / self.bounds.lambda_max));
        x.extend(u.mu.iter().map(|v| v / self.bounds.mu_max));
        x
    }

    pub fn to_physical(&self, x: &[f64]) -> ImagePair {
        let n = self.n_px();
        let nn = n * n;
        let v: Vec<f64> = x[..nn]
            .iter()
            .map(|a| a * self.bounds.lambda_max)
            .chain(x[nn..].iter().map(|b| b * self.bounds.mu_max))
            .collect();
        ImagePair::from_vec(n, &v, self.bounds)
    }

    fn physical_planes(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nn = self.n_px() * self.n_px();
        (
            x[..nn].iter().map(|a| a * self.bounds.lambda_max).collect(),
            x[nn..].iter().map(|b| b * self.bounds.mu_max).collect(),
        )
    }

    fn reg_block(&self, x: &[f64], alphas: (f64, f64), r: &mut Vec<f64>) {
        let nn = self.n_px() * self.n_px();
        let (c1, c2) = ((2.0 * alphas.0).sqrt(), (2.0 * alphas.1).sqrt());
        r.extend((0..nn).map(|k| c1 * self.weights[k] * x[k]));
        r.extend((0..nn).map(|k| c2 * self.weights[k] * x[nn + k]));
    }

    fn objective_from(&self, fx: &Sinogram, x: &[f64], alphas: (f64, f64)) -> Result<Objective> {
        let mut r = Vec::with_capacity(self.n_residual());
        r.extend(fx.y.iter().zip(self.y.y.iter()).map(|(a, b)| (a - b) / self.sigma));
        self.reg_block(x, alphas, &mut r);
        check_finite(&r, "residual")?;
        let f = 0.5 * dot(&r, &r);
        Ok(Objective { f, r })
    }

    /// f and r̃ at normalized x. x must be feasible.
    pub fn eval(&self, x: &[f64], alphas: (f64, f64)) -> Result<Objective> {
        if x.len() != self.n_vars() {
            return invalid("variable vector has the wrong length");
        }
        if !self.constraints.is_feasible(x, 1e-12) {
            return invalid("iterate is infeasible");
        }
        let (l, m) = self.physical_planes(x);
        let fx = self.projector.project_raw(&l, &m)?;
        self.objective_from(&fx, x, alphas)
    }

    pub fn linearize(&self, x: &[f64], alphas: (f64, f64)) -> Result<LinearModel<'_>> {
        if !self.constraints.is_feasible(x, 1e-12) {
            return invalid("iterate is infeasible");
        }
        let (l, m) = self.physical_planes(x);
        let lin = self.projector.linearize_raw(&l, &m)?;
        let obj = self.objective_from(&lin.value(), x, alphas)?;
        Ok(LinearModel { problem: self, lin, x: x.to_vec(), alphas, obj })
    }
}

/// Gauss–Newton model of f around a fixed iterate.
pub struct LinearModel<'a> {
    pub problem: &'a Problem<'a>,
    pub lin: Linearization<'a>,
    pub x: Vec<f64>,
    pub alphas: (f64, f64),
    pub obj: Objective,
}

impl LinearModel<'_> {
    pub fn f(&self) -> f64 {
        self.obj.f
    }

    pub fn residual(&self) -> &[f64] {
        &self.obj.r
    }

    /// J̃·s for a normalized step s (restricted to disk pixels); the result
    /// lives in residual space.
    pub fn jvp(&self, s: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let (mut dl, mut dm) = p.physical_planes(s);
        for (k, &f) in p.constraints.free.iter().enumerate() {
            if !f {
                dl[k] = 0.0;
                dm[k] = 0.0;
            }
        }
        let jy = self.lin.jvp_raw(&dl, &dm)?;
        let mut out = Vec::with_capacity(p.n_residual());
        out.extend(jy.y.iter().map(|v| v / p.sigma));
        p.reg_block(s, self.alphas, &mut out);
        check_finite(&out, "jvp")?;
        Ok(out)
    }

    /// J̃ᵀ·v for v in residual space.
    pub fn vjp(&self, v: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let nn = p.n_px() * p.n_px();
        let nd = p.n_data();
        let w = Sinogram {
            y: ndarray::Array2::from_shape_vec(p.y.y.dim(), v[..nd].iter().map(|t| t / p.sigma).collect()).unwrap(),
            grid_hash: p.y.grid_hash,
        };
        let (gl, gm) = self.lin.vjp_raw(&w)?;
        let (c1, c2) = ((2.0 * self.alphas.0).sqrt(), (2.0 * self.alphas.1).sqrt());
        let reg = &v[nd..];
        let mut out = Vec::with_capacity(2 * nn);
        out.extend((0..nn).map(|k| gl[k] * p.bounds.lambda_max + c1 * p.weights[k] * reg[k]));
        out.extend((0..nn).map(|k| gm[k] * p.bounds.mu_max + c2 * p.weights[k] * reg[nn + k]));
        // variables live on the disk only
        for k in 0..nn {
            if !p.constraints.free[k] {
                out[k] = 0.0;
                out[nn + k] = 0.0;
            }
        }
        check_finite(&out, "vjp")?;
        Ok(out)
    }

    /// ∇f = J̃ᵀr̃.
    pub fn gradient(&self) -> Result<Vec<f64>> {
        self.vjp(&self.obj.r)
    }

    /// m(s) given J̃s.
    pub fn model_from_js(&self, js: &[f64]) -> f64 {
        let r = &self.obj.r;
        0.5 * dot(r, r) + dot(js, r) + 0.5 * dot(js, js)
    }

    /// m(0) − m(s) given J̃s.
    pub fn decrease_from_js(&self, js: &[f64]) -> f64 {
        -dot(js, &self.obj.r) - 0.5 * dot(js, js)
    }

    pub fn model_value(&self, s: &[f64]) -> Result<f64> {
        Ok(self.model_from_js(&self.jvp(s)?))
    }
}
