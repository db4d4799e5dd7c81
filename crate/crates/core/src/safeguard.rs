//! Safeguarded acceleration: a learned proposal replaces the LM step only
//! if it does at least as well on the model and passes the agreement test.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::accelerator::Accelerator;
use crate::error::{invalid, Error, Result};
use crate::forward::ImagePair;
use crate::solver::lm::{add, record};
use crate::solver::objective::LinearModel;
use crate::solver::{lm_step, BranchTag, Problem, RegularizationConfig, SolverConfig, StepProposal, Trajectory, TrustRegionState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafeguardConfig {
    pub solver: SolverConfig,
    /// Threshold on ρ(s̃); plays the role of both κ and η in the check.
    pub accept_threshold: f64,
    /// Consecutive stalled iterations that end the run.
    pub max_stalls: usize,
}

impl Default for SafeguardConfig {
    fn default() -> Self {
        SafeguardConfig { solver: SolverConfig::default(), accept_threshold: 0.1, max_stalls: 2 }
    }
}

impl SafeguardConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.accept_threshold > 0.0) || self.max_stalls == 0 {
            return invalid("accept_threshold must be positive and max_stalls >= 1");
        }
        Ok(())
    }
}

pub fn decay_alpha(k: usize, reg: &RegularizationConfig) -> (f64, f64) {
    reg.alphas_at(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Accelerated,
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchDecision {
    pub chosen: Branch,
    pub rho_tilde: f64,
    pub m_tilde: f64,
    pub m_lm: f64,
    pub threshold: f64,
    pub reason: String,
}

/// Tests the proposal ũ against the LM step `prop` computed from `model`.
/// Returns the next normalized iterate and the decision.
pub fn check_and_select(
    model: &LinearModel<'_>,
    prop: &StepProposal,
    u_tilde: &ImagePair,
    threshold: f64,
) -> Result<(Vec<f64>, BranchDecision)> {
    let problem = model.problem;
    if !(prop.model_decrease > 0.0) {
        return Err(Error::Stall("LM step has no model decrease".into()));
    }
    let m0 = model.f();
    let m_lm = m0 - prop.model_decrease;
    let x_lm = add(&model.x, &prop.s);
    let fallback = |rho_tilde: f64, m_tilde: f64, reason: String| {
        (x_lm.clone(), BranchDecision { chosen: Branch::Fallback, rho_tilde, m_tilde, m_lm, threshold, reason })
    };
    if u_tilde.n() != problem.n_px() {
        return invalid("proposal shape mismatch");
    }
    let mut xt = problem.to_normalized(u_tilde);
    if xt.iter().any(|v| !v.is_finite()) {
        return Ok(fallback(f64::NAN, f64::NAN, "non-finite proposal".into()));
    }
    problem.constraints.project(&mut xt);
    let st: Vec<f64> = xt.iter().zip(&model.x).map(|(a, b)| a - b).collect();
    let dec_t = model.decrease_from_js(&model.jvp(&st)?);
    let m_tilde = m0 - dec_t;
    let f_t = match problem.eval(&xt, model.alphas) {
        Ok(o) => o.f,
        Err(Error::NonFinite(_)) => return Ok(fallback(f64::NAN, m_tilde, "non-finite objective at proposal".into())),
        Err(e) => return Err(e),
    };
    let rho_tilde = if dec_t > 0.0 { (m0 - f_t) / dec_t } else { f64::NAN };
    let model_ok = m_tilde <= m_lm;
    let rho_ok = rho_tilde > threshold;
    if model_ok && rho_ok {
        let d = BranchDecision {
            chosen: Branch::Accelerated,
            rho_tilde,
            m_tilde,
            m_lm,
            threshold,
            reason: "model and agreement tests passed".into(),
        };
        return Ok((xt, d));
    }
    let reason = match (model_ok, rho_ok) {
        (false, false) => format!("m(s~)={m_tilde:.6e} > m(s_lm)={m_lm:.6e} and rho~={rho_tilde:.4} <= {threshold}"),
        (false, true) => format!("m(s~)={m_tilde:.6e} > m(s_lm)={m_lm:.6e}"),
        _ => format!("rho~={rho_tilde:.4} <= {threshold}"),
    };
    Ok(fallback(rho_tilde, m_tilde, reason))
}

#[derive(Clone, Debug)]
pub struct AcceleratedTrajectory {
    pub traj: Trajectory,
    /// One entry per completed iteration (None if no proposal was made).
    pub decisions: Vec<Option<BranchDecision>>,
    pub warnings: Vec<String>,
}

impl AcceleratedTrajectory {
    pub fn accepted(&self) -> usize {
        self.decisions.iter().flatten().filter(|d| d.chosen == Branch::Accelerated).count()
    }

    pub fn log_text(&self) -> String {
        let mut s = self.traj.log_text();
        for (k, d) in self.decisions.iter().enumerate() {
            if let Some(d) = d {
                let tag = if d.chosen == Branch::Accelerated { "accelerated" } else { "fallback" };
                let _ = writeln!(
                    s,
                    "# decision k={} {tag} rho_tilde={:.6} m_tilde={:.6e} m_lm={:.6e} kappa=eta={}: {}",
                    k + 1,
                    d.rho_tilde,
                    d.m_tilde,
                    d.m_lm,
                    d.threshold,
                    d.reason
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "# warning: {w}");
        }
        s
    }
}

/// LM iteration with safeguarded learned proposals. With an accelerator
/// that never wins it reproduces `lm_solve` exactly.
pub fn accelerated_solve(
    problem: &Problem<'_>,
    u0: &ImagePair,
    iters: usize,
    cfg: &SafeguardConfig,
    accel: &dyn Accelerator,
    truth: Option<&ImagePair>,
) -> Result<AcceleratedTrajectory> {
    cfg.validate()?;
    let scfg = &cfg.solver;
    let mask = problem.projector.mask();
    let mut state = TrustRegionState::initial(problem, u0, scfg)?;
    let f0 = problem.eval(&state.x, state.alphas)?.f;
    let mut out = AcceleratedTrajectory {
        traj: Trajectory {
            iterates: vec![problem.to_physical(&state.x)],
            records: vec![record(problem, &state, f0, truth, BranchTag::Start, f64::NAN, 0.0, 0.0)],
            stalled: None,
        },
        decisions: Vec::new(),
        warnings: Vec::new(),
    };
    let mut stalls = 0;
    for _ in 0..iters {
        let model = problem.linearize(&state.x, state.alphas)?;
        let prop = match lm_step(&mut state, &model, scfg) {
            Ok(p) => p,
            Err(Error::Stall(msg)) => {
                stalls += 1;
                if stalls >= cfg.max_stalls {
                    out.traj.stalled = Some(msg);
                    break;
                }
                out.warnings.push(format!("k={}: {msg}; retrying", state.k));
                continue;
            }
            Err(e) => return Err(e),
        };
        stalls = 0;
        let u = problem.to_physical(&state.x);
        let s = problem.to_physical(&prop.s);
        let (x_next, decision) = match accel.propose(state.k, &u, &s, mask)? {
            Some(ut) => {
                let (x, d) = check_and_select(&model, &prop, &ut, cfg.accept_threshold)?;
                (x, Some(d))
            }
            None => {
                out.warnings.push(format!("k={}: no network for this iteration, pure LM step", state.k));
                (add(&state.x, &prop.s), None)
            }
        };
        let accelerated = matches!(&decision, Some(d) if d.chosen == Branch::Accelerated);
        let (f_prev_alpha, rho_used) = if accelerated {
            let f = problem.eval(&x_next, state.alphas)?.f;
            (f, decision.as_ref().unwrap().rho_tilde)
        } else {
            (prop.f_new, prop.rho)
        };
        let actual = prop.f_old - f_prev_alpha;
        let guard = cfg.accept_threshold.min(state.eta) * prop.model_decrease;
        assert!(
            actual + 1e-9 * prop.f_old.abs().max(1e-300) >= guard,
            "never-worse inequality violated at k={}: {actual} < {guard}",
            state.k
        );
        drop(model);
        state.x = x_next;
        state.k += 1;
        state.alphas = scfg.reg.alphas_at(state.k);
        let f_k = problem.eval(&state.x, state.alphas)?.f;
        out.traj.iterates.push(problem.to_physical(&state.x));
        let branch = if accelerated { BranchTag::Accelerated } else { BranchTag::Lm };
        out.traj.records.push(record(problem, &state, f_k, truth, branch, rho_used, prop.model_decrease, actual));
        out.decisions.push(decision);
    }
    Ok(out)
}
