//! Master/worker quantized training loop with telemetry capture.
//!
//! Workers are simulated in-process: the master quantizes weights, each
//! worker computes a stochastic gradient at the quantized weights and sends
//! it through the gradient quantizer, and the master averages the results in
//! ascending worker order before the optimizer step. Worker evaluation may
//! run in parallel; every random draw is keyed by (seed, component, worker,
//! iteration), so results are identical regardless of scheduling.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::Error;
use crate::fpquant::{quantize_mat, Component, QuantPolicy, QuantSpec};
use crate::mat::{blocks_checksum, blocks_frob_norm, Mat};
use crate::optim::{
    adam_step, muon_step, AdamHyper, AdamState, AdamVariant, MuonHyper, MuonState, StepStats,
};
use crate::problems::{batch_stream, Problem, ProblemSpec};
use crate::rng::{derive_stream, RngStream};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerKind {
    Adam(AdamHyper),
    Muon(MuonHyper),
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam(_) => "adam",
            OptimizerKind::Muon(_) => "muon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerKind,
    pub policy: QuantPolicy,
    /// Iteration count T.
    pub iters: usize,
    /// Simulated worker count B.
    pub workers: usize,
    pub seed: u64,
    pub telemetry_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters < 1 {
            return Err(Error::Config("iters must be >= 1".into()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.telemetry_every < 1 {
            return Err(Error::Config("telemetry_every must be >= 1".into()));
        }
        self.problem.validate()
    }
}

/// One telemetry row. Measured relative errors are `None` when the component
/// is disabled or the reference tensor had zero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub t: usize,
    pub loss: f64,
    /// Frobenius norm of the true gradient at W_t.
    pub grad_norm: f64,
    pub qerr_w: Option<f64>,
    pub qerr_g: Option<f64>,
    pub qerr_m: Option<f64>,
    pub qerr_v: Option<f64>,
    pub update_norm: f64,
    pub wall_ns: u64,
}

/// Trajectory statistics the bound evaluators need; not part of the CSV
/// schema.
#[derive(Debug, Clone, Default)]
pub struct RunAux {
    /// Max over iterations of the entrywise true-gradient bound.
    pub grad_inf_max: f64,
    /// Max observed ||grad F(x) - grad F(y)|| / ||x - y|| along the
    /// trajectory: an empirical lower estimate of the smoothness constant.
    pub l_hat: f64,
    pub w0_frob: f64,
    pub grad0_frob: f64,
    pub f0: f64,
    pub f_final: f64,
    /// ||W_t||_F at each telemetry row (pre-update, aligned with records).
    pub weight_frob_at_records: Vec<f64>,
}

enum OptState {
    Adam(Vec<AdamState>),
    Muon(Vec<MuonState>),
}

#[derive(Default, Clone, Copy)]
struct QuantAgg {
    err_sq: f64,
    norm_sq: f64,
    measured: bool,
}

impl QuantAgg {
    fn add(&mut self, pair: Option<(f64, f64)>) {
        if let Some((e, n)) = pair {
            self.err_sq += e;
            self.norm_sq += n;
            self.measured = true;
        }
    }

    fn add_parts(&mut self, err_sq: f64, norm_sq: f64, measured: bool) {
        if measured {
            self.err_sq += err_sq;
            self.norm_sq += norm_sq;
            self.measured = true;
        }
    }

    /// Measured relative error, `None` when unmeasured or zero reference.
    fn ratio(self) -> Option<f64> {
        if !self.measured || self.norm_sq == 0.0 {
            None
        } else {
            Some((self.err_sq / self.norm_sq).sqrt())
        }
    }
}

fn quantize_blocks(
    blocks: &[Mat],
    spec: &QuantSpec,
    rng: &mut RngStream,
) -> Result<(Vec<Mat>, f64, f64, bool)> {
    if spec.is_identity() {
        return Ok((blocks.to_vec(), 0.0, 0.0, false));
    }
    let mut out = Vec::with_capacity(blocks.len());
    let mut err_sq = 0.0;
    let mut norm_sq = 0.0;
    for b in blocks {
        let q = quantize_mat(b, spec, rng)?;
        err_sq += q.sub(b)?.frob_norm_sq();
        norm_sq += b.frob_norm_sq();
        out.push(q);
    }
    Ok((out, err_sq, norm_sq, true))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<TrainRecord>,
    pub final_checksum: u64,
    /// Mean grad_norm over telemetry rows in the last 100 iterations.
    pub tail_grad_norm: f64,
    pub config: TrainConfig,
    pub aux: RunAux,
}

/// Run the quantized training loop for `cfg.iters` iterations.
pub fn run_training(cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    let problem = Problem::new(&cfg.problem)?;
    let mut w = problem.initial_point(cfg.seed);
    let batch = cfg.problem.batch_size.max(1);

    let mut opt_state = match &cfg.optimizer {
        OptimizerKind::Adam(_) => OptState::Adam(
            w.iter()
                .map(|b| AdamState::new(b.rows(), b.cols(), AdamVariant::WeightedSum))
                .collect(),
        ),
        OptimizerKind::Muon(_) => {
            OptState::Muon(w.iter().map(|b| MuonState::new(b.rows(), b.cols())).collect())
        }
    };

    let mut records = Vec::with_capacity(cfg.iters / cfg.telemetry_every + 1);
    let mut aux = RunAux {
        w0_frob: blocks_frob_norm(&w),
        ..RunAux::default()
    };
    let mut prev_point: Option<(Vec<Mat>, Vec<Mat>)> = None;

    for t in 0..cfg.iters {
        let started = Instant::now();
        let (loss, true_grad) = problem.true_loss_grad(&w).map_err(|e| e.at_iteration(t))?;
        let grad_norm = blocks_frob_norm(&true_grad);
        let w_frob = blocks_frob_norm(&w);
        let grad_inf = true_grad.iter().fold(0.0f64, |m, b| m.max(b.max_abs()));
        aux.grad_inf_max = aux.grad_inf_max.max(grad_inf);
        if t == 0 {
            aux.grad0_frob = grad_norm;
            aux.f0 = loss;
        }
        if let Some((pw, pg)) = &prev_point {
            let dw: f64 = w
                .iter()
                .zip(pw)
                .map(|(a, b)| a.sub(b).map(|d| d.frob_norm_sq()))
                .sum::<Result<f64>>()?
                .sqrt();
            if dw > 0.0 {
                let dg: f64 = true_grad
                    .iter()
                    .zip(pg)
                    .map(|(a, b)| a.sub(b).map(|d| d.frob_norm_sq()))
                    .sum::<Result<f64>>()?
                    .sqrt();
                aux.l_hat = aux.l_hat.max(dg / dw);
            }
        }
        prev_point = Some((w.clone(), true_grad));

        // (1) master quantizes weights for transmission
        let mut w_rng = RngStream::new(cfg.seed, derive_stream(Component::Weights.tag(), 0, t as u64));
        let (wq, w_err_sq, w_norm_sq, w_measured) =
            quantize_blocks(&w, &cfg.policy.weights, &mut w_rng).map_err(|e| e.at_iteration(t))?;
        let mut w_agg = QuantAgg::default();
        w_agg.add_parts(w_err_sq, w_norm_sq, w_measured);

        // (2) workers evaluate at the quantized weights and quantize their
        // gradients
        let eval_worker = |i: usize| -> Result<(Vec<Mat>, f64, f64, bool)> {
            let mut sample_rng = batch_stream(cfg.seed, i as u64, t as u64);
            let sample = problem.sample_grad(&wq, &mut sample_rng, batch)?;
            for (bi, block) in sample.grad.iter().enumerate() {
                if let Some(idx) = block.as_slice().iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient { block: bi, index: idx });
                }
            }
            let mut g_rng = RngStream::new(
                cfg.seed,
                derive_stream(Component::Gradients.tag(), i as u64, t as u64),
            );
            quantize_blocks(&sample.grad, &cfg.policy.gradients, &mut g_rng)
        };
        let worker_grads: Vec<(Vec<Mat>, f64, f64, bool)> = if cfg.workers > 1 {
            (0..cfg.workers)
                .into_par_iter()
                .map(eval_worker)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_iteration(t))?
        } else {
            (0..cfg.workers)
                .map(eval_worker)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_iteration(t))?
        };

        // (3) master reduction in ascending worker order
        let mut g_agg = QuantAgg::default();
        let mut g_hat: Vec<Mat> = Vec::new();
        for (i, (gq, e_sq, n_sq, measured)) in worker_grads.into_iter().enumerate() {
            g_agg.add_parts(e_sq, n_sq, measured);
            if i == 0 {
                g_hat = gq;
            } else {
                for (bi, block) in gq.iter().enumerate() {
                    g_hat[bi] = g_hat[bi].add(block).map_err(|e| e.at_iteration(t))?;
                }
            }
        }
        let scale = 1.0 / cfg.workers as f64;
        for block in g_hat.iter_mut() {
            *block = block.scale(scale);
        }

        // (4) optimizer step; moment quantization draws from a per-iteration
        // stream consumed block by block
        let mut step_rng = RngStream::new(
            cfg.seed,
            derive_stream(Component::Moment1.tag() ^ Component::Moment2.tag(), 0, t as u64),
        );
        let mut update_norm_sq = 0.0;
        let mut m_agg = QuantAgg::default();
        let mut v_agg = QuantAgg::default();
        let mut absorb = |stats: StepStats, m_agg: &mut QuantAgg, v_agg: &mut QuantAgg| {
            update_norm_sq += stats.update_norm_sq;
            m_agg.add(stats.m_quant);
            v_agg.add(stats.v_quant);
        };
        match (&cfg.optimizer, &mut opt_state) {
            (OptimizerKind::Adam(h), OptState::Adam(states)) => {
                for (bi, state) in states.iter_mut().enumerate() {
                    let (w1, s1, stats) =
                        adam_step(&w[bi], &g_hat[bi], h, state, &cfg.policy, &mut step_rng)
                            .map_err(|e| e.at_iteration(t))?;
                    w[bi] = w1;
                    *state = s1;
                    absorb(stats, &mut m_agg, &mut v_agg);
                }
            }
            (OptimizerKind::Muon(h), OptState::Muon(states)) => {
                for (bi, state) in states.iter_mut().enumerate() {
                    let (w1, s1, stats) =
                        muon_step(&w[bi], &g_hat[bi], h, state, &cfg.policy, &mut step_rng)
                            .map_err(|e| e.at_iteration(t))?;
                    w[bi] = w1;
                    *state = s1;
                    absorb(stats, &mut m_agg, &mut v_agg);
                }
            }
            _ => unreachable!("state kind matches optimizer kind"),
        }

        // (5) telemetry
        if t % cfg.telemetry_every == 0 {
            aux.weight_frob_at_records.push(w_frob);
            records.push(TrainRecord {
                t,
                loss,
                grad_norm,
                qerr_w: w_agg.ratio(),
                qerr_g: g_agg.ratio(),
                qerr_m: m_agg.ratio(),
                qerr_v: v_agg.ratio(),
                update_norm: update_norm_sq.sqrt(),
                wall_ns: started.elapsed().as_nanos() as u64,
            });
        }
        aux.f_final = loss;
    }

    Ok(RunResult {
        final_checksum: blocks_checksum(&w),
        tail_grad_norm: tail_grad_norm_from_records(&records, cfg.iters),
        config: cfg.clone(),
        aux,
        records,
    })
}

/// Component subset selector for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentSet {
    pub weights: bool,
    pub gradients: bool,
    pub moment1: bool,
    pub moment2: bool,
}

impl ComponentSet {
    pub fn all() -> ComponentSet {
        ComponentSet {
            weights: true,
            gradients: true,
            moment1: true,
            moment2: true,
        }
    }

    /// Parse selector letters, e.g. `"wg"` or `"wgmv"`.
    pub fn parse(s: &str) -> Result<ComponentSet> {
        let mut set = ComponentSet {
            weights: false,
            gradients: false,
            moment1: false,
            moment2: false,
        };
        for ch in s.chars() {
            match ch {
                'w' => set.weights = true,
                'g' => set.gradients = true,
                'm' => set.moment1 = true,
                'v' => set.moment2 = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown component selector '{other}' (use w, g, m, v)"
                    )))
                }
            }
        }
        Ok(set)
    }

    pub fn contains(&self, c: Component) -> bool {
        match c {
            Component::Weights => self.weights,
            Component::Gradients => self.gradients,
            Component::Moment1 => self.moment1,
            Component::Moment2 => self.moment2,
        }
    }
}

/// Derive the per-mantissa config used by [`sweep`].
pub fn config_for_mantissa(base: &TrainConfig, mantissa: u32, components: ComponentSet) -> TrainConfig {
    let mut cfg = base.clone();
    for c in Component::ALL {
        if components.contains(c) {
            let rounding = if base.policy.component(c).enabled {
                base.policy.component(c).rounding
            } else {
                crate::fpquant::Rounding::Stochastic
            };
            *cfg.policy.component_mut(c) = QuantSpec::new(mantissa, rounding);
        }
    }
    cfg
}

/// One run per mantissa length, same seed; runs dispatch in parallel and the
/// output order matches `mantissas`.
pub fn sweep(base: &TrainConfig, mantissas: &[u32], components: ComponentSet) -> Result<Vec<RunResult>> {
    if mantissas.is_empty() {
        return Err(Error::Config("sweep needs a nonempty mantissa list".into()));
    }
    let configs: Vec<TrainConfig> = mantissas
        .iter()
        .map(|&m| config_for_mantissa(base, m, components))
        .collect();
    configs.par_iter().map(run_training).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

pub const CSV_HEADER: &str = "t,loss,grad_norm_F,qerr_W,qerr_G,qerr_M,qerr_V,update_norm_F,wall_ns";

/// Telemetry rows as CSV. Floats print as shortest round-trip decimals and
/// nulls as empty fields. The wall_ns column is kept in the schema but
/// emitted empty so identical configurations produce byte-identical files.
pub fn records_to_csv(records: &[TrainRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64 + 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},\n",
            r.t,
            r.loss,
            r.grad_norm,
            fmt_opt(r.qerr_w),
            fmt_opt(r.qerr_g),
            fmt_opt(r.qerr_m),
            fmt_opt(r.qerr_v),
            r.update_norm,
        ));
    }
    out
}

/// Telemetry rows as JSON lines with the same field names as the CSV header.
pub fn records_to_jsonl(records: &[TrainRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or("null".to_string(), |x| format!("{x}"));
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{{\"t\":{},\"loss\":{},\"grad_norm_F\":{},\"qerr_W\":{},\"qerr_G\":{},\"qerr_M\":{},\"qerr_V\":{},\"update_norm_F\":{},\"wall_ns\":null}}\n",
            r.t,
            r.loss,
            r.grad_norm,
            opt(r.qerr_w),
            opt(r.qerr_g),
            opt(r.qerr_m),
            opt(r.qerr_v),
            r.update_norm,
        ));
    }
    out
}

/// Parse records written by [`records_to_csv`].
pub fn records_from_csv(text: &str) -> Result<Vec<TrainRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::Format(format!("bad CSV header: {other:?}"))),
    }
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| Error::Format(format!("bad float {s:?}: {e}")))
        }
    };
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Format(format!("line {}: expected 9 fields", ln + 2)));
        }
        out.push(TrainRecord {
            t: fields[0]
                .parse()
                .map_err(|e| Error::Format(format!("bad t: {e}")))?,
            loss: fields[1]
                .parse()
                .map_err(|e| Error::Format(format!("bad loss: {e}")))?,
            grad_norm: fields[2]
                .parse()
                .map_err(|e| Error::Format(format!("bad grad_norm: {e}")))?,
            qerr_w: parse_opt(fields[3])?,
            qerr_g: parse_opt(fields[4])?,
            qerr_m: parse_opt(fields[5])?,
            qerr_v: parse_opt(fields[6])?,
            update_norm: fields[7]
                .parse()
                .map_err(|e| Error::Format(format!("bad update_norm: {e}")))?,
            wall_ns: if fields[8].is_empty() {
                0
            } else {
                fields[8]
                    .parse()
                    .map_err(|e| Error::Format(format!("bad wall_ns: {e}")))?
            },
        });
    }
    Ok(out)
}

/// Recompute the tail statistic from telemetry rows, matching
/// [`run_training`]'s definition exactly.
pub fn tail_grad_norm_from_records(records: &[TrainRecord], total_iters: usize) -> f64 {
    let tail_start = total_iters.saturating_sub(100);
    let tail: Vec<f64> = records
        .iter()
        .filter(|r| r.t >= tail_start)
        .map(|r| r.grad_norm)
        .collect();
    if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpquant::Rounding;
    use crate::svd::OrthoMethod;

    fn small_adam_cfg() -> TrainConfig {
        TrainConfig {
            problem: ProblemSpec::rosenbrock(6, 8),
            optimizer: OptimizerKind::Adam(AdamHyper::new(5e-4)),
            policy: QuantPolicy::disabled(),
            iters: 40,
            workers: 1,
            seed: 0,
            telemetry_every: 1,
        }
    }

    #[test]
    fn disabled_policy_matches_reference_loop_bit_exactly() {
        // the identity quantizer leaves the trajectory equal to a plain
        // full-precision Adam loop on the same stream of gradients
        let cfg = small_adam_cfg();
        let run = run_training(&cfg).unwrap();

        let problem = Problem::new(&cfg.problem).unwrap();
        let mut w = problem.initial_point(cfg.seed);
        let h = match &cfg.optimizer {
            OptimizerKind::Adam(h) => *h,
            _ => unreachable!(),
        };
        let mut s = AdamState::new(6, 8, AdamVariant::WeightedSum);
        for t in 0..cfg.iters {
            let mut sample_rng = batch_stream(cfg.seed, 0, t as u64);
            let g = problem.sample_grad(&w, &mut sample_rng, 1).unwrap();
            let mut rng = RngStream::new(0, 0);
            let (w1, s1, _) =
                adam_step(&w[0], &g.grad[0], &h, &s, &QuantPolicy::disabled(), &mut rng).unwrap();
            w = vec![w1];
            s = s1;
        }
        assert_eq!(run.final_checksum, blocks_checksum(&w));
    }

    #[test]
    fn identical_configs_are_checksum_identical_with_parallel_workers() {
        let mut cfg = small_adam_cfg();
        cfg.workers = 4;
        cfg.problem.noise_sigma = 0.3;
        cfg.policy = QuantPolicy::uniform(8, Rounding::Stochastic);
        let a = run_training(&cfg).unwrap();
        let b = run_training(&cfg).unwrap();
        assert_eq!(a.final_checksum, b.final_checksum);
        assert_eq!(records_to_csv(&a.records), records_to_csv(&b.records));
    }

    #[test]
    fn worker_average_recomputes() {
        // B=4 quantized gradient average equals an independent recomputation
        let mut cfg = small_adam_cfg();
        cfg.workers = 4;
        cfg.iters = 1;
        cfg.problem.noise_sigma = 0.5;
        cfg.policy = QuantPolicy::uniform(6, Rounding::Stochastic);
        let problem = Problem::new(&cfg.problem).unwrap();
        let w = problem.initial_point(cfg.seed);
        let mut w_rng =
            RngStream::new(cfg.seed, derive_stream(Component::Weights.tag(), 0, 0));
        let (wq, _, _, _) = quantize_blocks(&w, &cfg.policy.weights, &mut w_rng).unwrap();
        let mut avg = Mat::zeros(6, 8);
        for i in 0..4u64 {
            let mut sr = batch_stream(cfg.seed, i, 0);
            let s = problem.sample_grad(&wq, &mut sr, cfg.problem.batch_size).unwrap();
            let mut gr = RngStream::new(cfg.seed, derive_stream(Component::Gradients.tag(), i, 0));
            let gq = quantize_mat(&s.grad[0], &cfg.policy.gradients, &mut gr).unwrap();
            avg = avg.add(&gq).unwrap();
        }
        avg = avg.scale(0.25);
        // replicate the loop's first step and compare
        let run = run_training(&cfg).unwrap();
        let h = AdamHyper::new(5e-4);
        let s0 = AdamState::new(6, 8, AdamVariant::WeightedSum);
        let mut step_rng = RngStream::new(
            cfg.seed,
            derive_stream(Component::Moment1.tag() ^ Component::Moment2.tag(), 0, 0),
        );
        let (w1, _, _) = adam_step(&w[0], &avg, &h, &s0, &cfg.policy, &mut step_rng).unwrap();
        assert_eq!(run.final_checksum, blocks_checksum(&[w1]));
    }

    #[test]
    fn measured_errors_respect_policy_bounds() {
        let mut cfg = small_adam_cfg();
        cfg.policy = QuantPolicy::uniform(5, Rounding::Stochastic);
        cfg.iters = 30;
        let run = run_training(&cfg).unwrap();
        let q = cfg.policy.q_w();
        for r in &run.records {
            for (name, v) in [
                ("W", r.qerr_w),
                ("G", r.qerr_g),
                ("M", r.qerr_m),
                ("V", r.qerr_v),
            ] {
                if let Some(e) = v {
                    assert!(e <= q, "t={} qerr_{name} = {e} > {q}", r.t);
                }
            }
        }
    }

    #[test]
    fn telemetry_row_count_and_stride() {
        let mut cfg = small_adam_cfg();
        cfg.iters = 10;
        cfg.telemetry_every = 3;
        let run = run_training(&cfg).unwrap();
        // ceil(10 / 3) = 4 rows at t = 0, 3, 6, 9
        assert_eq!(run.records.len(), 4);
        assert_eq!(
            run.records.iter().map(|r| r.t).collect::<Vec<_>>(),
            vec![0, 3, 6, 9]
        );
    }

    #[test]
    fn loss_is_monotone_after_warmup_without_quantization() {
        let mut cfg = small_adam_cfg();
        cfg.problem = ProblemSpec::rosenbrock(10, 12);
        cfg.iters = 600;
        let run = run_training(&cfg).unwrap();
        for pair in run.records.windows(2) {
            if pair[0].t >= 100 {
                assert!(
                    pair[1].loss <= pair[0].loss * (1.0 + 1e-12),
                    "loss increased at t={}",
                    pair[1].t
                );
            }
        }
    }

    #[test]
    fn muon_weight_growth_invariant_at_telemetry_points() {
        let mut cfg = small_adam_cfg();
        cfg.optimizer = OptimizerKind::Muon(MuonHyper::new(1e-3));
        cfg.policy = QuantPolicy::uniform(6, Rounding::Stochastic);
        cfg.iters = 120;
        let run = run_training(&cfg).unwrap();
        let r = 6f64; // min(6, 8)
        let tol = OrthoMethod::ExactSvd.norm_tol();
        let eta = 1e-3;
        let w0 = run.aux.w0_frob;
        for (rec, &wn) in run.records.iter().zip(&run.aux.weight_frob_at_records) {
            let bound = w0 + rec.t as f64 * eta * (r * (1.0 + tol)).sqrt();
            assert!(wn <= bound * (1.0 + 1e-12), "t={}: {wn} > {bound}", rec.t);
        }
    }

    #[test]
    fn sweep_contract() {
        let cfg = small_adam_cfg();
        assert!(sweep(&cfg, &[], ComponentSet::all()).is_err());
        let single = sweep(&cfg, &[8], ComponentSet::all()).unwrap();
        let direct = run_training(&config_for_mantissa(&cfg, 8, ComponentSet::all())).unwrap();
        assert_eq!(single[0].final_checksum, direct.final_checksum);
        let multi = sweep(&cfg, &[4, 8, 16], ComponentSet::all()).unwrap();
        assert_eq!(multi.len(), 3);
        for (run, &m) in multi.iter().zip(&[4u32, 8, 16]) {
            assert_eq!(run.config.policy.weights.mantissa_bits, m);
            assert!(run.config.policy.weights.enabled);
        }
    }

    #[test]
    fn selector_leaves_unselected_components_alone() {
        let cfg = small_adam_cfg();
        let set = ComponentSet::parse("gv").unwrap();
        let derived = config_for_mantissa(&cfg, 7, set);
        assert!(!derived.policy.weights.enabled);
        assert!(!derived.policy.moment1.enabled);
        assert!(derived.policy.gradients.enabled);
        assert_eq!(derived.policy.gradients.mantissa_bits, 7);
        assert!(derived.policy.moment2.enabled);
        assert!(ComponentSet::parse("x").is_err());
    }

    #[test]
    fn csv_round_trip_preserves_records_and_tail() {
        let mut cfg = small_adam_cfg();
        cfg.policy = QuantPolicy::uniform(9, Rounding::Stochastic);
        cfg.iters = 25;
        let run = run_training(&cfg).unwrap();
        let text = records_to_csv(&run.records);
        let parsed = records_from_csv(&text).unwrap();
        assert_eq!(parsed.len(), run.records.len());
        for (a, b) in parsed.iter().zip(&run.records) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.grad_norm.to_bits(), b.grad_norm.to_bits());
            assert_eq!(a.qerr_w, b.qerr_w);
        }
        let tail = tail_grad_norm_from_records(&parsed, cfg.iters);
        assert_eq!(tail.to_bits(), run.tail_grad_norm.to_bits());
    }

    #[test]
    fn errors_carry_iteration_context() {
        let mut cfg = small_adam_cfg();
        // a step size this large overflows the cubic gradient terms within
        // a couple of iterations
        cfg.optimizer = OptimizerKind::Adam(AdamHyper::new(1e150));
        cfg.problem.noise_sigma = 0.0;
        cfg.iters = 50;
        match run_training(&cfg) {
            Err(Error::AtIteration { .. }) => {}
            other => panic!("expected iteration-tagged failure, got {:?}", other.map(|r| r.tail_grad_norm)),
        }
    }
}
