//! Numeric certification of the supporting inequalities.
//!
//! Each checker draws random parameters and sequences inside its lemma's
//! hypotheses, evaluates both sides, and fails loudly on any violation. A
//! passing suite reports how close each inequality came to being tight
//! (max LHS/RHS over all trials).

use crate::error::Error;
use crate::fpquant::{quantize_mat, quantize_scalar, QuantPolicy, QuantSpec, Rounding};
use crate::mat::Mat;
use crate::optim::{muon_step, MuonHyper, MuonState};
use crate::rng::RngStream;
use crate::svd::OrthoMethod;
use crate::Result;

#[derive(Debug, Clone)]
pub struct LemmaReport {
    pub name: &'static str,
    pub trials: usize,
    /// Max LHS/RHS over every checked inequality instance (<= 1 iff the
    /// lemma held everywhere). Instances with RHS = 0 require LHS = 0 and do
    /// not contribute to the ratio.
    pub max_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct LemmaSuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub lemmas: Vec<LemmaReport>,
}

/// Tracks tightness and detects violations with a small float-roundoff
/// allowance.
struct Tracker {
    name: &'static str,
    max_ratio: f64,
}

const ROUND_SLACK: f64 = 1e-9;

impl Tracker {
    fn new(name: &'static str) -> Tracker {
        Tracker {
            name,
            max_ratio: 0.0,
        }
    }

    fn check(&mut self, lhs: f64, rhs: f64, witness: impl Fn() -> String) -> Result<()> {
        debug_assert!(lhs.is_finite() && rhs.is_finite(), "{}", self.name);
        if rhs == 0.0 {
            if lhs.abs() > 1e-12 {
                return Err(Error::LemmaViolated {
                    name: self.name.into(),
                    witness: format!("LHS {lhs:e} with zero RHS; {}", witness()),
                });
            }
            return Ok(());
        }
        let ratio = lhs / rhs;
        if ratio > 1.0 + ROUND_SLACK {
            return Err(Error::LemmaViolated {
                name: self.name.into(),
                witness: format!("LHS {lhs:e} > RHS {rhs:e}; {}", witness()),
            });
        }
        if ratio > self.max_ratio {
            self.max_ratio = ratio;
        }
        Ok(())
    }

    fn into_report(self, trials: usize) -> LemmaReport {
        LemmaReport {
            name: self.name,
            trials,
            max_ratio: self.max_ratio,
        }
    }
}

fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

fn len_draw(rng: &mut RngStream, max: usize) -> usize {
    1 + (rng.next_u64() % max as u64) as usize
}

/// Sum-ratio inequality: for 0 < b1 < b2 <= 1,
/// `sum_j c_j^2/(eps + b_j) <= (ln(1 + b_n/eps) - n ln b2) / ((1-b1)(1-b1/b2))`.
fn check_sum_ratio(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let b1 = uniform(rng, 0.05, 0.95);
    let b2 = if rng.next_f64() < 0.1 {
        1.0
    } else {
        b1 + (1.0 - b1) * uniform(rng, 0.05, 1.0)
    };
    let eps = 10f64.powf(uniform(rng, -8.0, 0.0));
    let n = len_draw(rng, 60);
    let scale = 10f64.powf(uniform(rng, -2.0, 2.0));
    let (mut b, mut c, mut lhs) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let a = scale * rng.next_normal();
        b = b2 * b + a * a;
        c = b1 * c + a;
        lhs += c * c / (eps + b);
    }
    let rhs = ((1.0 + b / eps).ln() - n as f64 * b2.ln()) / ((1.0 - b1) * (1.0 - b1 / b2));
    tr.check(lhs, rhs, || format!("b1={b1} b2={b2} eps={eps} n={n}"))
}

/// Geometric sum with sqrt weights: `sum rho^k sqrt(k+1) <= 2/(1-rho)^1.5`.
fn check_geom_sqrt(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let rho = uniform(rng, 0.01, 0.99);
    let k_max = len_draw(rng, 400);
    let mut lhs = 0.0;
    let mut pow = 1.0;
    for k in 0..k_max {
        lhs += pow * ((k + 1) as f64).sqrt();
        pow *= rho;
    }
    let rhs = 2.0 / (1.0 - rho).powf(1.5);
    tr.check(lhs, rhs, || format!("rho={rho} K={k_max}"))
}

/// Geometric sum with k^1.5-ish weights:
/// `sum rho^k sqrt(k)(k+1) <= 4 rho/(1-rho)^2.5`.
fn check_geom_k32(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let rho = uniform(rng, 0.01, 0.99);
    let k_max = len_draw(rng, 400);
    let mut lhs = 0.0;
    let mut pow = 1.0;
    for k in 0..k_max {
        lhs += pow * (k as f64).sqrt() * (k + 1) as f64;
        pow *= rho;
    }
    let rhs = 4.0 * rho / (1.0 - rho).powf(2.5);
    tr.check(lhs, rhs, || format!("rho={rho} K={k_max}"))
}

/// Finite geometric Cauchy ratio: with a^2 < b,
/// `sum a^k |g_k| / sqrt(sum b^k g_k^2) <= sqrt(1/(1 - a^2/b))`.
fn check_finite_cauchy(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let a = uniform(rng, 0.05, 0.99);
    let b = a * a + (1.0 - a * a) * uniform(rng, 0.01, 1.0);
    let n = len_draw(rng, 80);
    let (mut num, mut den_sq) = (0.0f64, 0.0f64);
    let (mut pa, mut pb) = (1.0f64, 1.0f64);
    for _ in 0..n {
        let g = rng.next_normal();
        num += pa * g.abs();
        den_sq += pb * g * g;
        pa *= a;
        pb *= b;
    }
    if den_sq == 0.0 {
        return Ok(());
    }
    let lhs = num / den_sq.sqrt();
    let rhs = (1.0 / (1.0 - a * a / b)).sqrt();
    tr.check(lhs, rhs, || format!("a={a} b={b} n={n}"))
}

/// Quantized-momentum error ratio: with
/// `r' = b1^2 (1+qM)^2/(b2(1-qV)) < 1`,
/// `sum b1^k((1+qM)^k - 1)|g_k| / sqrt(sum (b2(1-qV))^k g_k^2)
///   <= qM sqrt(r'(1+r')) / ((1+qM)(1-r')^1.5)`.
fn check_refined_cauchy(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let (b1, b2, qm, qv) = loop {
        let b1 = uniform(rng, 0.05, 0.95);
        let b2 = uniform(rng, 0.5, 0.9999);
        let qm = uniform(rng, 0.0, 0.2);
        let qv = uniform(rng, 0.0, 0.2);
        if b1 * b1 * (1.0 + qm) * (1.0 + qm) < b2 * (1.0 - qv) * 0.999 {
            break (b1, b2, qm, qv);
        }
    };
    let r_prime = b1 * b1 * (1.0 + qm) * (1.0 + qm) / (b2 * (1.0 - qv));
    let n = len_draw(rng, 80);
    let (mut num, mut den_sq) = (0.0f64, 0.0f64);
    let (mut pb1, mut pq, mut pbv) = (1.0f64, 1.0f64, 1.0f64);
    for _ in 0..n {
        let g = rng.next_normal();
        num += pb1 * (pq - 1.0) * g.abs();
        den_sq += pbv * g * g;
        pb1 *= b1;
        pq *= 1.0 + qm;
        pbv *= b2 * (1.0 - qv);
    }
    if den_sq == 0.0 {
        return Ok(());
    }
    let lhs = num / den_sq.sqrt();
    let rhs = qm * (r_prime * (1.0 + r_prime)).sqrt() / ((1.0 + qm) * (1.0 - r_prime).powf(1.5));
    tr.check(lhs, rhs, || format!("b1={b1} b2={b2} qm={qm} qv={qv} n={n}"))
}

/// Perturbed-vs-clean linear system error:
/// `|a_t - b_t| <= sum_j [(k(1+q))^(t-j) - k^(t-j)] |d_j|`.
fn check_discrete_error(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let k = uniform(rng, 0.05, 0.95);
    let q = if rng.next_f64() < 0.1 {
        0.0
    } else {
        k * uniform(rng, 0.0, 0.999)
    };
    let n = len_draw(rng, 50);
    let mut a = 0.0f64;
    let mut b = 0.0f64;
    let mut c_prev = 0.0f64; // perturbation of the stored previous state
    let mut ds: Vec<f64> = Vec::with_capacity(n);
    for t in 1..=n {
        let d = rng.next_normal();
        ds.push(d.abs());
        a = k * (a + c_prev) + d;
        b = k * b + d;
        c_prev = q * uniform(rng, -1.0, 1.0) * a;
        let lhs = (a - b).abs();
        let mut rhs = 0.0;
        for (idx, dj) in ds.iter().enumerate().take(t - 1) {
            let j = idx + 1;
            let e = (t - j) as i32;
            rhs += ((k * (1.0 + q)).powi(e) - k.powi(e)) * dj;
        }
        tr.check(lhs, rhs, || format!("k={k} q={q} t={t}"))?;
    }
    Ok(())
}

/// Second-moment sandwich under relative state perturbations:
/// `sum (b2(1-q))^(t-j) g_j^2 <= v_t <= sum (b2(1+q))^(t-j) g_j^2`.
/// Half the trials use synthetic worst-case perturbations, half the real
/// quantizer.
fn check_moment_sandwich(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let b2 = uniform(rng, 0.5, 0.9999);
    let use_quantizer = rng.next_u64() & 1 == 0;
    let mantissa = 1 + (rng.next_u64() % 16) as u32;
    let q = if use_quantizer {
        (2.0f64).powi(-(mantissa as i32))
    } else {
        uniform(rng, 0.0, 0.3)
    };
    let spec = QuantSpec::new(mantissa, Rounding::Stochastic);
    let n = len_draw(rng, 50);
    let scale = 10f64.powf(uniform(rng, -1.0, 1.0));
    let mut v = 0.0f64;
    let (mut lb, mut ub) = (0.0f64, 0.0f64);
    for t in 0..n {
        let g = scale * rng.next_normal();
        let g2 = g * g;
        if t == 0 {
            v = g2;
            lb = g2;
            ub = g2;
        } else {
            let stored = if use_quantizer {
                quantize_scalar(v, &spec, rng)?
            } else {
                v * (1.0 + q * uniform(rng, -1.0, 1.0))
            };
            v = b2 * stored + g2;
            lb = b2 * (1.0 - q) * lb + g2;
            ub = b2 * (1.0 + q) * ub + g2;
        }
        // both directions as ratio checks
        tr.check(lb, v, || format!("lower: b2={b2} q={q} t={t}"))?;
        tr.check(v, ub, || format!("upper: b2={b2} q={q} t={t}"))?;
    }
    Ok(())
}

/// Matrix quantization error through the real quantizer:
/// `||X^Q - X||_F <= q ||X||_F`.
fn check_matrix_quant(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let rows = len_draw(rng, 12);
    let cols = len_draw(rng, 12);
    let mantissa = (rng.next_u64() % 24) as u32;
    let mode = match rng.next_u64() % 3 {
        0 => Rounding::Truncate,
        1 => Rounding::NearestEven,
        _ => Rounding::Stochastic,
    };
    let spec = QuantSpec::new(mantissa, mode);
    let scale = 10f64.powf(uniform(rng, -3.0, 3.0));
    let x = Mat::gaussian(rows, cols, rng).scale(scale);
    let xq = quantize_mat(&x, &spec, rng)?;
    let lhs = xq.sub(&x)?.frob_norm();
    let rhs = spec.q() * x.frob_norm();
    tr.check(lhs, rhs, || format!("{rows}x{cols} M={mantissa} {mode:?}"))
}

/// Muon weight growth through real steps:
/// `||W_t||_F <= ||W_0||_F + t eta sqrt(r)`.
fn check_muon_weight_growth(rng: &mut RngStream, tr: &mut Tracker) -> Result<()> {
    let rows = len_draw(rng, 6);
    let cols = len_draw(rng, 6);
    let r = rows.min(cols) as f64;
    let h = MuonHyper {
        eta: 10f64.powf(uniform(rng, -4.0, -1.0)),
        beta: uniform(rng, 0.1, 0.99),
        ortho_method: OrthoMethod::ExactSvd,
        ns_iters: 0,
        ns_coeffs: crate::svd::NS_COEFFS,
    };
    let policy = if rng.next_u64() & 1 == 0 {
        QuantPolicy::disabled()
    } else {
        QuantPolicy::uniform(1 + (rng.next_u64() % 10) as u32, Rounding::Stochastic)
    };
    let mut w = Mat::gaussian(rows, cols, rng);
    let w0 = w.frob_norm();
    let mut state = MuonState::new(rows, cols);
    let steps = len_draw(rng, 10);
    let mut step_rng = RngStream::new(rng.next_u64(), 0);
    for t in 1..=steps {
        let g = Mat::gaussian(rows, cols, rng);
        let (w1, s1, _) = muon_step(&w, &g, &h, &state, &policy, &mut step_rng)?;
        w = w1;
        state = s1;
        let lhs = w.frob_norm();
        let rhs = w0 + t as f64 * h.eta * r.sqrt();
        tr.check(lhs, rhs, || format!("{rows}x{cols} eta={} t={t}", h.eta))?;
    }
    Ok(())
}

/// Run every lemma checker for `trials` randomized trials at `seed`. A
/// violation anywhere aborts with `LemmaViolated`.
pub fn check_lemma_suite(seed: u64, trials: usize) -> Result<LemmaSuiteReport> {
    if trials < 1 {
        return Err(Error::Config("lemma suite needs trials >= 1".into()));
    }
    type Checker = fn(&mut RngStream, &mut Tracker) -> Result<()>;
    let checkers: [(&'static str, Checker); 9] = [
        ("sum_ratio", check_sum_ratio),
        ("geometric_sqrt_sum", check_geom_sqrt),
        ("geometric_k32_sum", check_geom_k32),
        ("finite_cauchy", check_finite_cauchy),
        ("refined_cauchy", check_refined_cauchy),
        ("discrete_error", check_discrete_error),
        ("moment_sandwich", check_moment_sandwich),
        ("matrix_quant_error", check_matrix_quant),
        ("muon_weight_growth", check_muon_weight_growth),
    ];
    let mut lemmas = Vec::with_capacity(checkers.len());
    for (idx, (name, checker)) in checkers.iter().enumerate() {
        let mut tracker = Tracker::new(name);
        for trial in 0..trials {
            let mut rng = RngStream::new(seed, crate::rng::derive_stream(idx as u64, 0, trial as u64));
            checker(&mut rng, &mut tracker)?;
        }
        lemmas.push(tracker.into_report(trials));
    }
    Ok(LemmaSuiteReport {
        seed,
        trials,
        lemmas,
    })
}
