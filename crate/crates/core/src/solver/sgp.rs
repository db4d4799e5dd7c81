//! Inner solver for the damped, constrained Gauss–Newton subproblem
//!
//!   min_s q(s) = ½‖J̃s + r̃‖² + ½β‖s‖²   s.t. x + s ∈ 𝒞
//!
//! by gradient projection with alternating Barzilai–Borwein steplengths and a
//! non-monotone Armijo rule. q is quadratic, so every trial point is
//! evaluated from J̃d without further operator applications. The result is
//! compared against a projected Cauchy step and the better of the two, after
//! scaling into the trust ball, is returned.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::objective::{dot, norm, LinearModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    /// Stop when ‖G(s)‖ ≤ tol·‖G(0)‖ (projected-gradient mapping).
    pub tol: f64,
    pub max_inner: usize,
    /// Non-monotone line-search memory.
    pub memory: usize,
    pub armijo: f64,
    pub power_iters: usize,
    /// Multiplier on the power-iteration curvature estimate.
    pub curvature_safety: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig { tol: 1e-6, max_inner: 200, memory: 10, armijo: 1e-4, power_iters: 8, curvature_safety: 1.1 }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) || self.memory == 0 || !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.curvature_safety >= 1.0) {
            return invalid("invalid inner solver configuration");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepSource {
    Sgp,
    Cauchy,
    Zero,
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    /// Normalized step, already inside the trust ball.
    pub s: Vec<f64>,
    /// J̃s.
    pub js: Vec<f64>,
    pub model_decrease: f64,
    pub source: StepSource,
    /// ‖G‖ = L·‖P(x − g/L) − x‖ at s = 0.
    pub grad_map_norm: f64,
    /// Curvature bound L ≥ ‖J̃ᵀJ̃ + βI‖ used for the Cauchy step.
    pub curvature: f64,
    pub iterations: usize,
}

impl InnerResult {
    /// Lower bound ½‖G‖·min(Δ, ‖G‖/L) guaranteed by the Cauchy step.
    pub fn cauchy_bound(&self, delta: f64) -> f64 {
        if self.curvature <= 0.0 {
            return 0.0;
        }
        0.5 * self.grad_map_norm * delta.min(self.grad_map_norm / self.curvature)
    }
}

struct Quad<'m, 'a> {
    model: &'m LinearModel<'a>,
    beta: f64,
}

impl Quad<'_, '_> {
    /// q from J̃s and s.
    fn value(&self, js: &[f64], s: &[f64]) -> f64 {
        let r = self.model.residual();
        let mut acc = 0.0;
        for (a, b) in js.iter().zip(r) {
            let t = a + b;
            acc += t * t;
        }
        0.5 * acc + 0.5 * self.beta * dot(s, s)
    }

    fn gradient(&self, js: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let r = self.model.residual();
        let v: Vec<f64> = js.iter().zip(r).map(|(a, b)| a + b).collect();
        let mut g = self.model.vjp(&v)?;
        for (gi, si) in g.iter_mut().zip(s) {
            *gi += self.beta * si;
        }
        Ok(g)
    }

    fn curvature(&self, iters: usize) -> Result<f64> {
        let n = self.model.x.len();
        let free = &self.model.problem.constraints.free;
        let nn = free.len();
        // deterministic start with mixed signs on free pixels
        let mut v: Vec<f64> = (0..n)
            .map(|k| if free[k % nn] { 1.0 + 0.5 * (((k * 7919) % 13) as f64 / 13.0 - 0.5) } else { 0.0 })
            .collect();
        let mut est = 0.0;
        for _ in 0..iters.max(1) {
            let nv = norm(&v);
            if nv == 0.0 {
                return Ok(self.beta);
            }
            v.iter_mut().for_each(|t| *t /= nv);
            let jv = self.model.jvp(&v)?;
            let mut w = self.model.vjp(&jv)?;
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi += self.beta * vi;
            }
            est = dot(&w, &v);
            v = w;
        }
        Ok(est.max(self.beta))
    }
}

fn scale_to_ball(s: &mut [f64], js: &mut [f64], delta: f64) {
    let ns = norm(s);
    if ns > delta && ns > 0.0 {
        let t = delta / ns;
        s.iter_mut().for_each(|v| *v *= t);
        js.iter_mut().for_each(|v| *v *= t);
    }
}

fn projected_step(model: &LinearModel<'_>, s: &[f64], g: &[f64], alpha: f64) -> Vec<f64> {
    let x = &model.x;
    let mut z: Vec<f64> = (0..x.len()).map(|k| x[k] + s[k] - alpha * g[k]).collect();
    model.problem.constraints.project(&mut z);
    (0..x.len()).map(|k| z[k] - x[k] - s[k]).collect()
}

pub fn sgp_solve(model: &LinearModel<'_>, beta: f64, delta: f64, cfg: &InnerConfig) -> Result<InnerResult> {
    if !(beta >= 0.0) || !(delta > 0.0) {
        return invalid("sgp_solve needs beta >= 0 and delta > 0");
    }
    let n = model.x.len();
    let nr = model.residual().len();
    let q = Quad { model, beta };
    let g0 = model.gradient()?;
    let zero = InnerResult {
        s: vec![0.0; n],
        js: vec![0.0; nr],
        model_decrease: 0.0,
        source: StepSource::Zero,
        grad_map_norm: 0.0,
        curvature: 0.0,
        iterations: 0,
    };
    if g0.iter().all(|v| *v == 0.0) {
        return Ok(zero);
    }

    // projected Cauchy step with a verified curvature bound
    let mut lc = cfg.curvature_safety * q.curvature(cfg.power_iters)?;
    let q0 = q.value(&vec![0.0; nr], &vec![0.0; n]);
    let zeros = vec![0.0; n];
    let (mut dc, mut jdc);
    loop {
        dc = projected_step(model, &zeros, &g0, 1.0 / lc);
        jdc = model.jvp(&dc)?;
        let lhs = q.value(&jdc, &dc);
        let rhs = q0 + dot(&g0, &dc) + 0.5 * lc * dot(&dc, &dc);
        if lhs <= rhs + 1e-12 * q0.abs() {
            break;
        }
        lc *= 2.0;
        if !lc.is_finite() {
            return Err(Error::NonFinite("curvature estimate"));
        }
    }
    let grad_map_norm = lc * norm(&dc);
    if grad_map_norm == 0.0 {
        return Ok(InnerResult { curvature: lc, ..zero });
    }

    // SGP iterations from s = 0
    let mut s = vec![0.0; n];
    let mut js = vec![0.0; nr];
    let mut qs = q0;
    let mut g = g0.clone();
    let mut alpha = 1.0 / lc;
    let (a_min, a_max) = (1e-5 / lc, 1e5 / lc);
    let mut history = std::collections::VecDeque::with_capacity(cfg.memory);
    history.push_back(q0);
    let mut best = (q0, s.clone(), js.clone());
    let mut iterations = 0;
    for it in 0..cfg.max_inner {
        let d = projected_step(model, &s, &g, alpha);
        let nd = norm(&d);
        if nd / alpha <= cfg.tol * grad_map_norm {
            break;
        }
        iterations = it + 1;
        let jd = model.jvp(&d)?;
        let gd = dot(&g, &d);
        let curv = dot(&jd, &jd) + beta * dot(&d, &d);
        let qmax = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lam = 1.0;
        let mut qn;
        loop {
            qn = qs + lam * gd + 0.5 * lam * lam * curv;
            if qn <= qmax + cfg.armijo * lam * gd || lam < 1e-12 {
                break;
            }
            lam *= 0.5;
        }
        if !qn.is_finite() {
            return Err(Error::NonFinite("inner objective"));
        }
        for k in 0..n {
            s[k] += lam * d[k];
        }
        for k in 0..nr {
            js[k] += lam * jd[k];
        }
        qs = qn;
        if history.len() == cfg.memory {
            history.pop_front();
        }
        history.push_back(qs);
        if qs < best.0 {
            best = (qs, s.clone(), js.clone());
        }
        let g_new = q.gradient(&js, &s)?;
        // BB steplengths from the actual step and gradient change
        let sy: f64 = (0..n).map(|k| lam * d[k] * (g_new[k] - g[k])).sum();
        let ss = lam * lam * nd * nd;
        let yy: f64 = (0..n).map(|k| (g_new[k] - g[k]).powi(2)).sum();
        g = g_new;
        if sy > 0.0 {
            let bb = if it % 2 == 0 { ss / sy } else { sy / yy };
            alpha = bb.clamp(a_min, a_max);
        } else {
            alpha = a_max;
        }
    }

    let (_, mut s_sgp, mut js_sgp) = best;
    scale_to_ball(&mut s_sgp, &mut js_sgp, delta);
    scale_to_ball(&mut dc, &mut jdc, delta);
    let dec_sgp = model.decrease_from_js(&js_sgp);
    let dec_c = model.decrease_from_js(&jdc);
    let (s, js, dec, source) = if dec_sgp >= dec_c { (s_sgp, js_sgp, dec_sgp, StepSource::Sgp) } else { (dc, jdc, dec_c, StepSource::Cauchy) };
    Ok(InnerResult { s, js, model_decrease: dec, source, grad_map_norm, curvature: lc, iterations })
}
