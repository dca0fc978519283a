//! Quantized Adam and quantized Muon as pure state-transition functions.
//!
//! States persist *quantized* moments: the full-precision accumulators exist
//! only transiently inside a step, and what the next step sees is exactly
//! what a low-precision store would hold. Disabling the quantization policy
//! recovers the full-precision reference algorithms bit for bit.

use crate::error::Error;
use crate::fpquant::{quantize_mat, QuantPolicy};
use crate::mat::Mat;
use crate::rng::RngStream;
use crate::svd::{msign, OrthoMethod, NS_COEFFS};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepSchedule {
    /// `eta_t = (1 - beta1) * sqrt(sum_{j<=t} beta2^j) * eta`, the
    /// second-moment-corrected schedule (t counted from 0).
    PaperOmega,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: StepSchedule,
}

impl AdamHyper {
    pub fn new(eta: f64) -> AdamHyper {
        AdamHyper {
            eta,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule: StepSchedule::Constant,
        }
    }

    /// Step size applied at 0-based iteration `t`. The omega schedule is
    /// strictly increasing toward `(1 - beta1) eta / sqrt(1 - beta2)`.
    pub fn step_size(&self, t: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.eta,
            StepSchedule::PaperOmega => {
                let b2t = self.beta2.powi(t as i32 + 1);
                (1.0 - self.beta1) * self.eta * ((1.0 - b2t) / (1.0 - self.beta2)).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuonHyper {
    pub eta: f64,
    pub beta: f64,
    pub ortho_method: OrthoMethod,
    pub ns_iters: usize,
    pub ns_coeffs: [f64; 3],
}

impl MuonHyper {
    pub fn new(eta: f64) -> MuonHyper {
        MuonHyper {
            eta,
            beta: 0.9,
            ortho_method: OrthoMethod::ExactSvd,
            ns_iters: 10,
            ns_coeffs: NS_COEFFS,
        }
    }
}

/// Which momentum recursion Adam runs.
///
/// `WeightedSum` accumulates `M_t = b1 M + G` (the analysis form);
/// `WeightedAverage` is standard Adam's `M_t = b1 M + (1 - b1) G`. Under
/// matched relative perturbations the two are exactly proportional, which
/// [`adam_equivalence_probe`] demonstrates on scalar trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdamVariant {
    WeightedSum,
    WeightedAverage,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    /// Iteration counter, from 0.
    pub t: usize,
    /// First moment as stored (quantized).
    pub m: Mat,
    /// Second moment as stored (quantized); entrywise >= 0 at all times.
    pub v: Mat,
    pub variant: AdamVariant,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, variant: AdamVariant) -> AdamState {
        AdamState {
            t: 0,
            m: Mat::zeros(rows, cols),
            v: Mat::zeros(rows, cols),
            variant,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MuonState {
    pub t: usize,
    /// Momentum as stored (quantized).
    pub m: Mat,
}

impl MuonState {
    pub fn new(rows: usize, cols: usize) -> MuonState {
        MuonState {
            t: 0,
            m: Mat::zeros(rows, cols),
        }
    }
}

/// Per-step measurements fed to telemetry. Error/norm pairs are squared
/// Frobenius sums so multi-block callers can aggregate before taking the
/// ratio.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub update_norm_sq: f64,
    /// (||M - Q(M)||^2, ||M||^2) at the state-store point; None when the
    /// component is disabled.
    pub m_quant: Option<(f64, f64)>,
    pub v_quant: Option<(f64, f64)>,
}

fn check_grad(w: &Mat, g: &Mat) -> Result<()> {
    if !w.same_shape(g) {
        return Err(Error::DimMismatch {
            op: "optimizer step",
            lhs_rows: w.rows(),
            lhs_cols: w.cols(),
            rhs_rows: g.rows(),
            rhs_cols: g.cols(),
        });
    }
    if let Some(idx) = g.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient { block: 0, index: idx });
    }
    Ok(())
}

fn quant_pair(full: &Mat, spec: &crate::fpquant::QuantSpec, rng: &mut RngStream) -> Result<(Mat, Option<(f64, f64)>)> {
    if spec.is_identity() {
        return Ok((full.clone(), None));
    }
    let q = quantize_mat(full, spec, rng)?;
    let err = q.sub(full)?.frob_norm_sq();
    Ok((q, Some((err, full.frob_norm_sq()))))
}

/// One quantized-Adam step. Returns the new weights, the successor state
/// (with freshly quantized moments), and step measurements.
pub fn adam_step(
    w: &Mat,
    g: &Mat,
    h: &AdamHyper,
    s: &AdamState,
    policy: &QuantPolicy,
    rng: &mut RngStream,
) -> Result<(Mat, AdamState, StepStats)> {
    check_grad(w, g)?;
    let t = s.t;
    let g_sq = g.hadamard(g)?;
    let (m_t, v_t) = match (s.variant, t) {
        (AdamVariant::WeightedSum, 0) => (g.clone(), g_sq),
        (AdamVariant::WeightedSum, _) => (
            s.m.scale(h.beta1).add(g)?,
            s.v.scale(h.beta2).add(&g_sq)?,
        ),
        (AdamVariant::WeightedAverage, 0) => {
            (g.scale(1.0 - h.beta1), g_sq.scale(1.0 - h.beta2))
        }
        (AdamVariant::WeightedAverage, _) => (
            s.m.scale(h.beta1).add_scaled(1.0 - h.beta1, g)?,
            s.v.scale(h.beta2).add_scaled(1.0 - h.beta2, &g_sq)?,
        ),
    };
    let eta_t = h.step_size(t);
    let eps = h.epsilon;
    let update = m_t.zip_map(&v_t, "adam update", |m, v| m / (v + eps).sqrt())?;
    let w_next = w.add_scaled(-eta_t, &update)?;
    let (m_q, m_quant) = quant_pair(&m_t, &policy.moment1, rng)?;
    let (v_q, v_quant) = quant_pair(&v_t, &policy.moment2, rng)?;
    let stats = StepStats {
        update_norm_sq: update.frob_norm_sq() * eta_t * eta_t,
        m_quant,
        v_quant,
    };
    Ok((
        w_next,
        AdamState {
            t: t + 1,
            m: m_q,
            v: v_q,
            variant: s.variant,
        },
        stats,
    ))
}

/// One quantized-Muon step. A zero momentum skips the update (the
/// partial-isometry limit of the orthogonalizer at 0).
pub fn muon_step(
    w: &Mat,
    g: &Mat,
    h: &MuonHyper,
    s: &MuonState,
    policy: &QuantPolicy,
    rng: &mut RngStream,
) -> Result<(Mat, MuonState, StepStats)> {
    check_grad(w, g)?;
    let t = s.t;
    let m_t = if t == 0 {
        g.clone()
    } else {
        s.m.scale(h.beta).add_scaled(1.0 - h.beta, g)?
    };
    let (w_next, update_norm_sq) = if m_t.frob_norm() == 0.0 {
        (w.clone(), 0.0)
    } else {
        let o = msign(&m_t, h.ortho_method, h.ns_iters, h.ns_coeffs)?;
        (w.add_scaled(-h.eta, &o)?, o.frob_norm_sq() * h.eta * h.eta)
    };
    let (m_q, m_quant) = quant_pair(&m_t, &policy.moment1, rng)?;
    let stats = StepStats {
        update_norm_sq,
        m_quant,
        v_quant: None,
    };
    Ok((w_next, MuonState { t: t + 1, m: m_q }, stats))
}

/// Scalar probe for the weighted-sum / weighted-average equivalence.
///
/// Runs `a_k = beta (a_{k-1} + d_{k-1}) + b_k` against
/// `c_k = beta (c_{k-1} + e_{k-1}) + (1 - beta) b_k` from `a_0 = c_0 = 0`,
/// with the same relative perturbation factors `d_k = delta_k a_k`,
/// `e_k = delta_k c_k`. Returns both trajectories (`a_1.., c_1..`); under
/// matched factors `c_k = (1 - beta) a_k` holds exactly.
pub fn adam_equivalence_probe(
    beta: f64,
    q: f64,
    inputs: &[f64],
    deltas: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::PreconditionViolated {
            name: "equivalence probe: beta in (0, 1)".into(),
        });
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::PreconditionViolated {
            name: "equivalence probe: q in [0, 1)".into(),
        });
    }
    if deltas.len() != inputs.len() {
        return Err(Error::Config("inputs and deltas must have equal length".into()));
    }
    if deltas.iter().any(|d| d.abs() > q) {
        return Err(Error::PreconditionViolated {
            name: "equivalence probe: |delta_k| <= q".into(),
        });
    }
    let mut a = 0.0f64;
    let mut c = 0.0f64;
    let mut a_seq = Vec::with_capacity(inputs.len());
    let mut c_seq = Vec::with_capacity(inputs.len());
    for (k, &b) in inputs.iter().enumerate() {
        // delta at index k-1 perturbs the stored state entering step k
        let d_prev = if k == 0 { 0.0 } else { deltas[k - 1] };
        a = beta * (a + d_prev * a) + b;
        c = beta * (c + d_prev * c) + (1.0 - beta) * b;
        a_seq.push(a);
        c_seq.push(c);
    }
    Ok((a_seq, c_seq))
}
