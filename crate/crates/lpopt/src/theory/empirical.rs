//! Join a training run's telemetry to a theorem right-hand side.

use crate::error::Error;
use crate::theory::bounds::{adam_bound, muon_bound, AdamBoundInput, MuonBoundInput};
use crate::trainloop::RunResult;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub enum BoundInput {
    Adam(AdamBoundInput),
    Muon(MuonBoundInput),
}

#[derive(Debug, Clone)]
pub struct BoundComparison {
    /// Adam: momentum-weighted mean of ||grad F(W_t)||_F^2 with weights
    /// proportional to (1 - beta1^(T-t)). Muon: plain mean of
    /// ||grad F(W_t)||_F.
    pub empirical: f64,
    pub bound_total: f64,
    /// Whether R, L, D (and the variance proxy) supplied in the input were
    /// consistent with everything observed on the trajectory.
    pub assumptions_certified: bool,
    /// Set only when assumptions were certified and the empirical statistic
    /// still exceeded the bound beyond roundoff.
    pub bound_violated: bool,
    /// For the Muon bound: the C2 that would make the bound exactly tight
    /// (diagnostic only; None when the quantization block is zero).
    pub c2_tight: Option<f64>,
}

impl BoundComparison {
    pub fn to_pairs(&self) -> Vec<(&'static str, f64)> {
        let mut pairs = vec![
            ("empirical", self.empirical),
            ("bound_total", self.bound_total),
            (
                "assumptions_certified",
                if self.assumptions_certified { 1.0 } else { 0.0 },
            ),
            ("bound_violated", if self.bound_violated { 1.0 } else { 0.0 }),
        ];
        if let Some(c2) = self.c2_tight {
            pairs.push(("C2_tight", c2));
        }
        pairs
    }
}

/// Compare a run's gradient statistics with the matching theorem bound.
///
/// The run must carry telemetry for every iteration. The caller supplies
/// honest estimates of R, L, D in the bound input; they are re-checked
/// against the trajectory and the comparison flags a violation only when
/// those assumptions actually held.
pub fn empirical_vs_bound(run: &RunResult, input: &BoundInput) -> Result<BoundComparison> {
    if run.config.telemetry_every != 1 {
        return Err(Error::MismatchedRun {
            what: "bound comparison needs telemetry_every = 1".into(),
        });
    }
    let t_run = run.config.iters;
    match input {
        BoundInput::Adam(ai) => {
            if ai.iters != t_run {
                return Err(Error::MismatchedRun {
                    what: format!("input T = {} but run T = {}", ai.iters, t_run),
                });
            }
            let report = adam_bound(ai)?;
            let mut weight_sum = 0.0;
            let mut stat = 0.0;
            for rec in &run.records {
                let w = 1.0 - ai.beta1.powi((t_run - rec.t) as i32);
                weight_sum += w;
                stat += w * rec.grad_norm * rec.grad_norm;
            }
            let empirical = stat / weight_sum;
            // R must dominate every observed entrywise gradient plus the
            // sqrt(eps) margin; L and D must dominate their observed values
            let certified = ai.grad_inf_bound - ai.epsilon.sqrt() >= run.aux.grad_inf_max
                && ai.smoothness >= run.aux.l_hat
                && ai.init_norm >= run.aux.w0_frob
                && ai.f0_minus_fstar >= 0.0;
            let violated = certified && empirical > report.total * (1.0 + 1e-9);
            Ok(BoundComparison {
                empirical,
                bound_total: report.total,
                assumptions_certified: certified,
                bound_violated: violated,
                c2_tight: None,
            })
        }
        BoundInput::Muon(mi) => {
            if mi.iters != t_run {
                return Err(Error::MismatchedRun {
                    what: format!("input T = {} but run T = {}", mi.iters, t_run),
                });
            }
            let report = muon_bound(mi)?;
            let empirical = run.records.iter().map(|r| r.grad_norm).sum::<f64>()
                / run.records.len() as f64;
            // with noise_sigma = 0 the variance assumption holds exactly;
            // otherwise sigma must dominate the configured noise level
            let sigma_needed = run.config.problem.noise_sigma
                * ((run.config.problem.m * run.config.problem.n) as f64).sqrt();
            // all three objectives are bounded below by zero, so delta must
            // dominate the observed initial value
            let certified = mi.smoothness >= run.aux.l_hat
                && mi.delta >= run.aux.f0
                && mi.sigma >= sigma_needed;
            let violated = certified && empirical > report.total * (1.0 + 1e-9);
            let quant_unit = if mi.c2 > 0.0 {
                report.quant_block / mi.c2
            } else {
                0.0
            };
            let c2_tight = (quant_unit > 0.0).then(|| {
                let rest = report.total - report.quant_block;
                (empirical - rest) / quant_unit
            });
            Ok(BoundComparison {
                empirical,
                bound_total: report.total,
                assumptions_certified: certified,
                bound_violated: violated,
                c2_tight,
            })
        }
    }
}
