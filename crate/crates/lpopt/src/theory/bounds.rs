//! Term-by-term evaluation of the Adam and Muon convergence-bound
//! right-hand sides.

use crate::error::Error;
use crate::Result;

/// Inputs to the quantized-Adam bound. `grad_inf_bound` is the a.s. bound R
/// on the entrywise stochastic gradient (with `R > sqrt(epsilon)`),
/// `smoothness` the Lipschitz constant of the gradient, `init_norm` the
/// bound D on the initial weight Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamBoundInput {
    pub iters: usize,
    /// Trainable parameter count d = m * n.
    pub dim: f64,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub q_g: f64,
    pub q_m: f64,
    pub q_v: f64,
    pub q_w: f64,
    pub grad_inf_bound: f64,
    pub smoothness: f64,
    pub init_norm: f64,
    pub f0_minus_fstar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamBoundReport {
    pub total: f64,
    pub initial: f64,
    pub log_term_c: f64,
    pub qtilde_over_t: f64,
    pub wg_term: f64,
    pub weight_growth_term: f64,
    pub r_prime: f64,
    pub c_const: f64,
    pub qtilde: f64,
}

impl AdamBoundReport {
    pub fn to_pairs(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("total", self.total),
            ("initial", self.initial),
            ("log_term_C", self.log_term_c),
            ("Qtilde_over_T", self.qtilde_over_t),
            ("wg_term", self.wg_term),
            ("weight_growth_term", self.weight_growth_term),
            ("r_prime", self.r_prime),
            ("C", self.c_const),
            ("Qtilde", self.qtilde),
        ]
    }
}

fn require(ok: bool, name: &str, failures: &mut Vec<String>) {
    if !ok {
        failures.push(name.to_string());
    }
}

impl AdamBoundInput {
    pub fn r_prime(&self) -> f64 {
        self.beta1 * self.beta1 * (1.0 + self.q_m) * (1.0 + self.q_m)
            / (self.beta2 * (1.0 - self.q_v))
    }

    /// Every violated precondition, by name.
    pub fn violated_preconditions(&self) -> Vec<String> {
        let mut f = Vec::new();
        require(self.iters >= 1, "T >= 1", &mut f);
        require(self.dim >= 1.0, "d >= 1", &mut f);
        require(self.eta > 0.0, "eta > 0", &mut f);
        require(0.0 < self.beta1 && self.beta1 < 1.0, "beta1 in (0, 1)", &mut f);
        require(0.0 < self.beta2 && self.beta2 < 1.0, "beta2 in (0, 1)", &mut f);
        require(self.epsilon > 0.0, "epsilon > 0", &mut f);
        for (q, name) in [
            (self.q_g, "q_G in [0, 1)"),
            (self.q_m, "q_M in [0, 1)"),
            (self.q_v, "q_V in [0, 1)"),
            (self.q_w, "q_W in [0, 1)"),
        ] {
            require((0.0..1.0).contains(&q), name, &mut f);
        }
        require(
            self.grad_inf_bound > self.epsilon.sqrt(),
            "R > sqrt(epsilon)",
            &mut f,
        );
        require(
            self.beta1 * (1.0 + self.q_m) < self.beta2 * (1.0 - self.q_v),
            "beta1(1+q_M) < beta2(1-q_V)",
            &mut f,
        );
        require(
            self.beta1 * self.beta1 * (1.0 + self.q_m) * (1.0 + self.q_m)
                < self.beta2 * (1.0 - self.q_v),
            "beta1^2(1+q_M)^2 < beta2(1-q_V)",
            &mut f,
        );
        require(
            2.0 * self.beta1 / (1.0 - self.beta1) <= self.iters as f64,
            "2 beta1/(1-beta1) <= T",
            &mut f,
        );
        f
    }

    pub fn check_preconditions(&self) -> Result<()> {
        let v = self.violated_preconditions();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::PreconditionViolated { name: v.join("; ") })
        }
    }
}

/// `(1 - q)/q * (1 - (1-q)^T)` with its analytic limit `T` at `q = 0`,
/// evaluated through expm1/ln1p so tiny `q` keeps full precision.
fn geometric_qv_sum(iters: usize, q_v: f64) -> f64 {
    let t = iters as f64;
    if q_v == 0.0 {
        return t;
    }
    let one_minus_pow = -f64::exp_m1(t * f64::ln_1p(-q_v));
    (1.0 - q_v) / q_v * one_minus_pow
}

/// Evaluate the simplified quantized-Adam bound, term by term.
pub fn adam_bound(input: &AdamBoundInput) -> Result<AdamBoundReport> {
    input.check_preconditions()?;
    let t = input.iters as f64;
    let d = input.dim;
    let (b1, b2) = (input.beta1, input.beta2);
    let (qg, qm, qv, qw) = (input.q_g, input.q_m, input.q_v, input.q_w);
    let r = input.grad_inf_bound;
    let l = input.smoothness;
    let eps = input.epsilon;
    let eta = input.eta;
    let rq = (1.0 + qg) * r;
    let r_prime = input.r_prime();

    let initial = 4.0 * rq * input.f0_minus_fstar / (eta * t);

    let denom_pair = (1.0 - b1 * (1.0 + qm)) * (1.0 - b1 * (1.0 + qm) / (b2 * (1.0 - qv)));
    let c_const = 24.0 * d * rq * rq * (1.0 - b1).sqrt()
        / ((1.0 - b1 / b2).powf(1.5) * (1.0 - b2).sqrt())
        + 2.0 * d * eta * l * rq * (1.0 - b1) * (1.0 - b1) / (denom_pair * (1.0 - b2))
        + 4.0 * d * eta * eta * l * l * b1 * (1.0 - b1) / (denom_pair * (1.0 - b2).powf(1.5));
    let log_inner = (1.0 + rq * rq / (eps * (1.0 - b2 * (1.0 - qv)))).ln()
        - t * (b2 * (1.0 - qv)).ln();
    let log_term_c = c_const / t * log_inner;

    let qtilde = 4.0 * (1.0 + qg) * qm * d * r * r * (1.0 - b1) * t / (1.0 - b2).sqrt()
        * (r_prime * (1.0 + r_prime)).sqrt()
        / ((1.0 + qm) * (1.0 - r_prime).powf(1.5))
        + 4.0 * (1.0 + qg) * d * r * r * (1.0 - b1) * (t - geometric_qv_sum(input.iters, qv))
            / ((1.0 - b1 * b1 / (b2 * (1.0 - qv))) * (1.0 - b2)).sqrt();
    let qtilde_over_t = qtilde / t;

    let wg_term = 4.0 * (1.0 + qg) * d / (eps * (1.0 - b2)).sqrt()
        * (qg * r * r * r + l * qw * r * r * input.init_norm);

    let weight_growth_term = 2.0 * (1.0 - b1) * d.powf(1.5) * eta * l * qw * (1.0 + qg) * r * r * t
        / (eps.sqrt() * (1.0 - b2) * (1.0 - r_prime).sqrt());

    let total = initial + log_term_c + qtilde_over_t + wg_term + weight_growth_term;
    Ok(AdamBoundReport {
        total,
        initial,
        log_term_c,
        qtilde_over_t,
        wg_term,
        weight_growth_term,
        r_prime,
        c_const,
        qtilde,
    })
}

/// Inputs to the quantized-Muon bound. `c2` is the bound's absolute
/// constant, not pinned numerically by the analysis; default 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuonBoundInput {
    pub iters: usize,
    pub eta: f64,
    pub beta: f64,
    /// r = min(m, n).
    pub rank: f64,
    pub workers: f64,
    pub sigma: f64,
    pub smoothness: f64,
    /// Bound on F(W_0) - F*.
    pub delta: f64,
    pub q_g: f64,
    pub q_w: f64,
    pub q_m: f64,
    pub c2: f64,
}

impl MuonBoundInput {
    pub fn violated_preconditions(&self) -> Vec<String> {
        let mut f = Vec::new();
        require(self.iters >= 1, "T >= 1", &mut f);
        require(self.eta > 0.0, "eta > 0", &mut f);
        require(0.0 < self.beta && self.beta < 1.0, "beta in (0, 1)", &mut f);
        require(self.rank >= 1.0, "r >= 1", &mut f);
        require(self.workers >= 1.0, "B >= 1", &mut f);
        require(self.sigma >= 0.0, "sigma >= 0", &mut f);
        require(self.c2 >= 0.0, "C2 >= 0", &mut f);
        for (q, name) in [
            (self.q_g, "q_G in [0, 1)"),
            (self.q_w, "q_W in [0, 1)"),
            (self.q_m, "q_M in [0, 1)"),
        ] {
            require((0.0..1.0).contains(&q), name, &mut f);
        }
        require(
            self.beta * (1.0 + self.q_m) < 1.0,
            "beta(1+q_M) < 1",
            &mut f,
        );
        f
    }

    pub fn check_preconditions(&self) -> Result<()> {
        let v = self.violated_preconditions();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::PreconditionViolated { name: v.join("; ") })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuonBoundReport {
    pub total: f64,
    pub initial: f64,
    pub momentum_bias: f64,
    pub variance_tail: f64,
    pub variance_stationary: f64,
    pub smoothness_term: f64,
    pub quant_block: f64,
}

impl MuonBoundReport {
    pub fn to_pairs(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("total", self.total),
            ("initial", self.initial),
            ("momentum_bias", self.momentum_bias),
            ("variance_tail", self.variance_tail),
            ("variance_stationary", self.variance_stationary),
            ("smoothness_term", self.smoothness_term),
            ("quant_block", self.quant_block),
        ]
    }
}

/// Evaluate the quantized-Muon bound, term by term.
pub fn muon_bound(input: &MuonBoundInput) -> Result<MuonBoundReport> {
    input.check_preconditions()?;
    let t = input.iters as f64;
    let (eta, beta) = (input.eta, input.beta);
    let r = input.rank;
    let b = input.workers;
    let sigma = input.sigma;
    let l = input.smoothness;
    let (qg, qw, qm) = (input.q_g, input.q_w, input.q_m);

    let initial = input.delta / (eta * t);
    let momentum_bias = 2.0 * beta * l * eta * r / (1.0 - beta);
    let variance_tail = 6.0 * sigma * r.sqrt() / (t * (1.0 - beta) * b.sqrt());
    let variance_stationary = ((1.0 - beta) / (1.0 + beta)).sqrt() * 6.0 * sigma * r.sqrt() / b.sqrt();
    let smoothness_term = l * eta * r / 2.0;
    let quant_block = input.c2
        * (qg + qw
            + (qg + qw) * t * eta
            + qm * beta / (1.0 - beta * (1.0 + qm)) * (1.0 + t * eta));
    let total = initial + momentum_bias + variance_tail + variance_stationary + smoothness_term
        + quant_block;
    Ok(MuonBoundReport {
        total,
        initial,
        momentum_bias,
        variance_tail,
        variance_stationary,
        smoothness_term,
        quant_block,
    })
}

/// One row of a rate-schedule grid evaluation.
#[derive(Debug, Clone, Copy)]
pub struct GridRow {
    pub iters: usize,
    pub total: f64,
    /// Total rescaled by the claimed rate; bounded iff the rate holds.
    pub scaled: f64,
}

/// Evaluate the Adam bound under its theorem schedule
/// (`eta = T^-1/2`, `1 - beta2 = 1/T`, `q_G = q_M = 1/T`,
/// `q_V = q_W = 1/T^2`) and rescale by `sqrt(T)/ln T`.
pub fn adam_rate_grid(iters: &[usize]) -> Result<Vec<GridRow>> {
    iters
        .iter()
        .map(|&t| {
            let tf = t as f64;
            let input = AdamBoundInput {
                iters: t,
                dim: 100.0,
                eta: tf.powf(-0.5),
                beta1: 0.9,
                beta2: 1.0 - 1.0 / tf,
                epsilon: 1e-8,
                q_g: 1.0 / tf,
                q_m: 1.0 / tf,
                q_v: 1.0 / (tf * tf),
                q_w: 1.0 / (tf * tf),
                grad_inf_bound: 1.0,
                smoothness: 1.0,
                init_norm: 1.0,
                f0_minus_fstar: 1.0,
            };
            let total = adam_bound(&input)?.total;
            Ok(GridRow {
                iters: t,
                total,
                scaled: total * tf.sqrt() / tf.ln(),
            })
        })
        .collect()
}

/// Evaluate the Muon bound under its theorem schedule
/// (`1 - beta = T^-1/2`, `eta = T^-3/4`, `B = 1`, `q_G = q_W = T^-1/2`) and
/// rescale by `T^1/4`.
///
/// The momentum error is taken as `q_M = 1/T`. Inside the bound the factor
/// `q_M beta / (1 - beta(1+q_M))` stays bounded only when `q_M` shrinks a
/// power of `T^-1/2` faster than `1 - beta`; `q_M = Theta(T^-1/2)` makes
/// that factor grow like `sqrt(T)` and the rescaled total diverge, so the
/// faster decay (still within the stated `O(T^-1/2)` envelope) is the
/// schedule under which the claimed rate holds.
pub fn muon_rate_grid(iters: &[usize]) -> Result<Vec<GridRow>> {
    iters
        .iter()
        .map(|&t| {
            let tf = t as f64;
            let input = MuonBoundInput {
                iters: t,
                eta: tf.powf(-0.75),
                beta: 1.0 - tf.powf(-0.5),
                rank: 50.0,
                workers: 1.0,
                sigma: 1.0,
                smoothness: 1.0,
                delta: 1.0,
                q_g: tf.powf(-0.5),
                q_w: tf.powf(-0.5),
                q_m: 1.0 / tf,
                c2: 1.0,
            };
            let total = muon_bound(&input)?.total;
            Ok(GridRow {
                iters: t,
                total,
                scaled: total * tf.powf(0.25),
            })
        })
        .collect()
}
