use serde::{Deserialize, Serialize};

use crate::geometry::Mask;

/// Convex per-pixel feasible set, expressed in bound-normalized variables
/// a = λ/λ_max, b = μ/μ_max:
///
///   0 ≤ a ≤ 1,  0 ≤ b ≤ 1,  a ≤ low_emission + b·(μ_max/mu_ref)
///
/// i.e. strongly emitting pixels need a minimum of attenuation. Pixels
/// outside the disk are pinned to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    /// Emission fraction allowed at zero attenuation.
    pub low_emission: f64,
    /// Attenuation (mm⁻¹) at which the λ limit has risen by a full λ_max.
    pub mu_ref: f64,
    /// Disable the linear wedge (box constraints only).
    pub linear: bool,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        // midpoint between water (0.0085) and the lowest rod attenuation (0.12)
        ConstraintConfig { low_emission: 0.05, mu_ref: 0.5 * (0.0085 + 0.12), linear: true }
    }
}

#[derive(Clone, Debug)]
pub struct Constraints {
    pub free: Vec<bool>,
    eps: f64,
    gamma: f64,
    linear: bool,
}

type P = (f64, f64);

const WEDGE_SLACK: f64 = 1e-14;

fn project_segment(p: P, a: P, b: P) -> P {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return a;
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    (a.0 + t * dx, a.1 + t * dy)
}

impl Constraints {
    pub fn new(mask: &Mask, mu_max: f64, cfg: &ConstraintConfig) -> Constraints {
        Constraints {
            free: mask.data.iter().copied().collect(),
            eps: cfg.low_emission,
            gamma: mu_max / cfg.mu_ref,
            linear: cfg.linear,
        }
    }

    pub fn box_only(mask: &Mask) -> Constraints {
        Constraints { free: mask.data.iter().copied().collect(), eps: 1.0, gamma: 0.0, linear: false }
    }

    pub fn n_pixels(&self) -> usize {
        self.free.len()
    }

    fn pixel_feasible(&self, a: f64, b: f64, tol: f64) -> bool {
        (-tol..=1.0 + tol).contains(&a)
            && (-tol..=1.0 + tol).contains(&b)
            && (!self.linear || a <= self.eps + self.gamma * b + tol)
    }

    /// Euclidean projection of one (a, b) pair onto the feasible polygon.
    pub fn project_pixel(&self, a: f64, b: f64) -> (f64, f64) {
        let (ca, cb) = (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
        // the slack keeps points returned from the slanted edge fixed
        if !self.linear || ca <= self.eps + self.gamma * cb + WEDGE_SLACK {
            return (ca, cb);
        }
        // vertices as (a, b), counter-clockwise
        let b_star = ((1.0 - self.eps) / self.gamma).min(1.0);
        let verts: [P; 5] = [(0.0, 0.0), (self.eps, 0.0), (1.0, b_star), (1.0, 1.0), (0.0, 1.0)];
        let mut best = (f64::INFINITY, (0.0, 0.0));
        for k in 0..5 {
            let q = project_segment((a, b), verts[k], verts[(k + 1) % 5]);
            let d = (q.0 - a).powi(2) + (q.1 - b).powi(2);
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    /// In-place projection of a stacked normalized vector (a-plane, b-plane).
    pub fn project(&self, x: &mut [f64]) {
        let n = self.free.len();
        let (xa, xb) = x.split_at_mut(n);
        for k in 0..n {
            if !self.free[k] {
                xa[k] = 0.0;
                xb[k] = 0.0;
                continue;
            }
            let (a, b) = self.project_pixel(xa[k], xb[k]);
            xa[k] = a;
            xb[k] = b;
        }
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        let n = self.free.len();
        (0..n).all(|k| {
            if self.free[k] {
                self.pixel_feasible(x[k], x[n + k], tol)
            } else {
                x[k] == 0.0 && x[n + k] == 0.0
            }
        })
    }
}
