use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::ImagePair;

use super::objective::{norm, LinearModel, Problem, RegularizationConfig};
use super::sgp::{sgp_solve, InnerConfig, InnerResult, StepSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eta: f64,
    pub kappa: f64,
    /// β₀ = beta0_factor·‖J̃ᵀr̃‖/‖r̃‖.
    pub beta0_factor: f64,
    /// Δ₀ = delta0_factor·‖u_bounds‖ in normalized units.
    pub delta0_factor: f64,
    pub retry_max: usize,
    pub inner: InnerConfig,
    pub reg: RegularizationConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eta: 0.1,
            kappa: 0.1,
            beta0_factor: 1e2,
            delta0_factor: 0.1,
            retry_max: 8,
            inner: InnerConfig::default(),
            reg: RegularizationConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 0.25) {
            return invalid("eta must lie in (0, 1/4)");
        }
        if !(self.kappa > 0.0) || !(self.beta0_factor >= 0.0) || !(self.delta0_factor > 0.0) {
            return invalid("kappa, beta0_factor, delta0_factor must be positive");
        }
        self.inner.validate()?;
        self.reg.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrustRegionState {
    /// Normalized iterate.
    pub x: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
    pub eta: f64,
    pub kappa: f64,
    pub alphas: (f64, f64),
    pub k: usize,
}

impl TrustRegionState {
    /// β₀ and Δ₀ from the heuristics in `cfg` at the feasible starting point.
    pub fn initial(problem: &Problem<'_>, u0: &ImagePair, cfg: &SolverConfig) -> Result<TrustRegionState> {
        Self::at(problem, u0, 0, cfg)
    }

    /// Fresh state at a given outer iteration (α from the decay schedule).
    pub fn at(problem: &Problem<'_>, u0: &ImagePair, k: usize, cfg: &SolverConfig) -> Result<TrustRegionState> {
        let x = problem.to_normalized(u0);
        let alphas = cfg.reg.alphas_at(k);
        let model = problem.linearize(&x, alphas)?;
        let g = model.gradient()?;
        let nr = norm(model.residual());
        let beta = if nr > 0.0 { cfg.beta0_factor * norm(&g) / nr } else { 0.0 };
        let n_free = problem.constraints.free.iter().filter(|b| **b).count();
        let delta = cfg.delta0_factor * (2.0 * n_free as f64).sqrt();
        Ok(TrustRegionState { x, beta, delta, eta: cfg.eta, kappa: cfg.kappa, alphas, k })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 0.25) || !(self.delta > 0.0) || !(self.beta >= 0.0) {
            return invalid("invalid trust-region state");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StepProposal {
    pub s: Vec<f64>,
    pub js: Vec<f64>,
    pub model_decrease: f64,
    pub rho: f64,
    pub accepted: bool,
    pub f_old: f64,
    pub f_new: f64,
    pub source: StepSource,
    pub retries: usize,
    /// Trust radius and Cauchy bound the accepted step was measured against.
    pub delta_used: f64,
    pub cauchy_bound: f64,
}

/// ρ = (f(x) − f(x+s)) / (m(0) − m(s)).
pub fn rho(f_old: f64, f_new: f64, model_decrease: f64) -> Result<f64> {
    if model_decrease == 0.0 || !model_decrease.is_finite() {
        return Err(Error::Stall("zero model decrease: agreement ratio undefined".into()));
    }
    Ok((f_old - f_new) / model_decrease)
}

pub fn add(x: &[f64], s: &[f64]) -> Vec<f64> {
    x.iter().zip(s).map(|(a, b)| a + b).collect()
}

/// One trust-region iteration at `state` with its current α. On acceptance
/// the state is *not* moved; the caller applies `x + s` (possibly replaced
/// by a safeguarded step) and bumps the iteration counter.
pub fn lm_step(state: &mut TrustRegionState, model: &LinearModel<'_>, cfg: &SolverConfig) -> Result<StepProposal> {
    state.validate()?;
    let problem = model.problem;
    let f_old = model.f();
    for retry in 0..=cfg.retry_max {
        let inner: InnerResult = sgp_solve(model, state.beta, state.delta, &cfg.inner)?;
        let bound = inner.cauchy_bound(state.delta);
        let slack = 1e-9 * f_old.abs().max(1e-300);
        assert!(
            inner.model_decrease + slack >= bound,
            "Cauchy decrease violated: {} < {}",
            inner.model_decrease,
            bound
        );
        if inner.model_decrease <= 0.0 {
            return Err(Error::Stall(format!("no model decrease at k={} (stationary point)", state.k)));
        }
        let x_new = add(&state.x, &inner.s);
        let f_new = problem.eval(&x_new, state.alphas)?.f;
        let r = rho(f_old, f_new, inner.model_decrease)?;
        if r > state.eta {
            let delta_used = state.delta;
            let ns = norm(&inner.s);
            if r > 0.75 && ns >= 0.8 * state.delta {
                state.delta *= 2.0;
                state.beta *= 0.2;
            }
            return Ok(StepProposal {
                s: inner.s,
                js: inner.js,
                model_decrease: inner.model_decrease,
                rho: r,
                accepted: true,
                f_old,
                f_new,
                source: inner.source,
                retries: retry,
                delta_used,
                cauchy_bound: bound,
            });
        }
        state.beta = if state.beta > 0.0 { state.beta * 10.0 } else { 1e-8 };
        state.delta *= 0.25;
    }
    Err(Error::Stall(format!("retry budget exhausted at k={}", state.k)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchTag {
    Lm,
    Accelerated,
    Start,
}

impl BranchTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            BranchTag::Lm => "lm",
            BranchTag::Accelerated => "accel",
            BranchTag::Start => "start",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub k: usize,
    /// f(u_k) under α^(k).
    pub f: f64,
    /// Agreement ratio of the step that produced u_k (NaN for u_0).
    pub rho: f64,
    pub beta: f64,
    pub delta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub rel_err_lambda: Option<f64>,
    pub rel_err_mu: Option<f64>,
    pub branch: BranchTag,
    /// m_{k−1}(0) − m_{k−1}(s_lm) and f(u_{k−1}) − f(u_k), both under α^(k−1).
    pub model_decrease: f64,
    pub actual_decrease: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub iterates: Vec<ImagePair>,
    pub records: Vec<TrajectoryRecord>,
    pub stalled: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &ImagePair {
        self.iterates.last().expect("trajectory holds u0")
    }

    pub fn log_text(&self) -> String {
        let mut s = String::from("k\tf\trho\tbeta\tdelta\talpha1\talpha2\trel_err_lambda\trel_err_mu\tbranch\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "nan".into());
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{:.12e}\t{:.6}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{}\t{}\t{}",
                r.k,
                r.f,
                r.rho,
                r.beta,
                r.delta,
                r.alpha1,
                r.alpha2,
                opt(r.rel_err_lambda),
                opt(r.rel_err_mu),
                r.branch.as_str()
            );
        }
        if let Some(reason) = &self.stalled {
            let _ = writeln!(s, "# stalled: {reason}");
        }
        s
    }
}

/// Masked relative ℓ2 errors (λ, μ).
pub fn relative_errors(u: &ImagePair, truth: &ImagePair) -> (f64, f64) {
    let rel = |a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>| {
        let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        if den > 0.0 { num / den } else { num }
    };
    (rel(&u.lambda, &truth.lambda), rel(&u.mu, &truth.mu))
}

pub(crate) fn record(
    problem: &Problem<'_>,
    state: &TrustRegionState,
    f: f64,
    truth: Option<&ImagePair>,
    branch: BranchTag,
    rho: f64,
    model_decrease: f64,
    actual_decrease: f64,
) -> TrajectoryRecord {
    let u = problem.to_physical(&state.x);
    let errs = truth.map(|t| relative_errors(&u, t));
    TrajectoryRecord {
        k: state.k,
        f,
        rho,
        beta: state.beta,
        delta: state.delta,
        alpha1: state.alphas.0,
        alpha2: state.alphas.1,
        rel_err_lambda: errs.map(|e| e.0),
        rel_err_mu: errs.map(|e| e.1),
        branch,
        model_decrease,
        actual_decrease,
    }
}

/// Plain LM reconstruction for `iters` outer iterations.
pub fn lm_solve(problem: &Problem<'_>, u0: &ImagePair, iters: usize, cfg: &SolverConfig, truth: Option<&ImagePair>) -> Result<Trajectory> {
    cfg.validate()?;
    let mut state = TrustRegionState::initial(problem, u0, cfg)?;
    let f0 = problem.eval(&state.x, state.alphas)?.f;
    let mut traj = Trajectory {
        iterates: vec![problem.to_physical(&state.x)],
        records: vec![record(problem, &state, f0, truth, BranchTag::Start, f64::NAN, 0.0, 0.0)],
        stalled: None,
    };
    for _ in 0..iters {
        let model = problem.linearize(&state.x, state.alphas)?;
        let prop = match lm_step(&mut state, &model, cfg) {
            Ok(p) => p,
            Err(Error::Stall(msg)) => {
                traj.stalled = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        drop(model);
        state.x = add(&state.x, &prop.s);
        state.k += 1;
        state.alphas = cfg.reg.alphas_at(state.k);
        let f_k = problem.eval(&state.x, state.alphas)?.f;
        traj.iterates.push(problem.to_physical(&state.x));
        traj.records.push(record(
            problem,
            &state,
            f_k,
            truth,
            BranchTag::Lm,
            prop.rho,
            prop.model_decrease,
            prop.f_old - prop.f_new,
        ));
    }
    Ok(traj)
}
