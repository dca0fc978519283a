//! Flat `section.key = value` configuration with command-line overrides.
//!
//! The format is a plain text file: one assignment per line, `#` starts a
//! comment, unknown keys are rejected. Overrides use the same `key=value`
//! syntax and are applied after the file.

use std::collections::BTreeMap;

use lpopt::fpquant::{QuantPolicy, QuantSpec, Rounding};
use lpopt::optim::{AdamHyper, MuonHyper, StepSchedule};
use lpopt::problems::{ProblemKind, ProblemSpec};
use lpopt::svd::{OrthoMethod, NS_COEFFS};
use lpopt::theory::{AdamBoundInput, MuonBoundInput};
use lpopt::trainloop::{OptimizerKind, TrainConfig};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> CResult<T> {
    Err(ConfigError(msg.into()))
}

/// Ordered key -> value assignments (later assignments win).
pub fn parse_assignments(text: &str, source: &str) -> CResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("{source}:{}: expected key = value", ln + 1));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub format: OutputFormat,
}

// Intermediate builder so adam/muon keys can arrive in any order.
struct Builder {
    problem: ProblemSpec,
    opt_kind: String,
    adam: AdamHyper,
    muon: MuonHyper,
    policy: QuantPolicy,
    iters: usize,
    workers: usize,
    seed: u64,
    telemetry_every: usize,
    format: OutputFormat,
}

impl Builder {
    fn new() -> Builder {
        Builder {
            problem: ProblemSpec::rosenbrock(50, 100),
            opt_kind: "adam".into(),
            adam: AdamHyper::new(5e-4),
            muon: MuonHyper::new(5e-4),
            policy: QuantPolicy::disabled(),
            iters: 10_000,
            workers: 1,
            seed: 0,
            telemetry_every: 1,
        format: OutputFormat::Csv,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> CResult<T> {
    v.parse::<T>()
        .map_err(|_| ConfigError(format!("bad value {v:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> CResult<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<T>(key, s))
        .collect()
}

fn parse_rounding(key: &str, v: &str) -> CResult<Rounding> {
    match v {
        "truncate" => Ok(Rounding::Truncate),
        "nearest_even" => Ok(Rounding::NearestEven),
        "stochastic" => Ok(Rounding::Stochastic),
        _ => err(format!("bad rounding {v:?} for {key} (truncate | nearest_even | stochastic)")),
    }
}

fn apply_policy_key(policy: &mut QuantPolicy, comp: &str, field: &str, value: &str) -> CResult<()> {
    let mut targets: Vec<&mut QuantSpec> = Vec::new();
    match comp {
        "weights" => targets.push(&mut policy.weights),
        "gradients" => targets.push(&mut policy.gradients),
        "moment1" => targets.push(&mut policy.moment1),
        "moment2" => targets.push(&mut policy.moment2),
        "all" => {
            targets.push(&mut policy.weights);
            targets.push(&mut policy.gradients);
            targets.push(&mut policy.moment1);
            targets.push(&mut policy.moment2);
        }
        _ => return err(format!("unknown policy component {comp:?}")),
    }
    for spec in targets {
        match field {
            "mantissa" => {
                if value == "off" {
                    *spec = QuantSpec::disabled();
                } else {
                    let m: u32 = parse_num("policy mantissa", value)?;
                    let rounding = if spec.enabled { spec.rounding } else { Rounding::Stochastic };
                    *spec = QuantSpec::new(m, rounding);
                }
            }
            "rounding" => {
                spec.rounding = parse_rounding("policy rounding", value)?;
            }
            _ => return err(format!("unknown policy field {field:?}")),
        }
    }
    Ok(())
}

/// Build the effective run configuration from file text plus overrides.
pub fn build_cli_config(text: &str, source: &str, overrides: &[String]) -> CResult<CliConfig> {
    let mut assignments = parse_assignments(text, source)?;
    for (i, o) in overrides.iter().enumerate() {
        let mut extra = parse_assignments(o, &format!("override[{i}]"))?;
        if extra.len() != 1 {
            return err(format!("override[{i}] must be a single key=value"));
        }
        assignments.append(&mut extra);
    }

    let mut b = Builder::new();
    for (key, value) in &assignments {
        let v = value.as_str();
        match key.as_str() {
            "problem.kind" => {
                b.problem.kind = match v {
                    "rosenbrock" => ProblemKind::Rosenbrock,
                    "mlp" => ProblemKind::SyntheticMlp,
                    "quadratic" => ProblemKind::Quadratic,
                    _ => return err(format!("unknown problem.kind {v:?}")),
                }
            }
            "problem.m" => b.problem.m = parse_num(key, v)?,
            "problem.n" => b.problem.n = parse_num(key, v)?,
            "problem.noise_sigma" => b.problem.noise_sigma = parse_num(key, v)?,
            "problem.mlp_layers" => b.problem.mlp_layers = parse_list(key, v)?,
            "problem.dataset_seed" => b.problem.dataset_seed = parse_num(key, v)?,
            "problem.dataset_size" => b.problem.dataset_size = parse_num(key, v)?,
            "problem.num_classes" => b.problem.num_classes = parse_num(key, v)?,
            "problem.batch_size" => b.problem.batch_size = parse_num(key, v)?,
            "optimizer.kind" => match v {
                "adam" | "muon" => b.opt_kind = v.to_string(),
                _ => return err(format!("unknown optimizer.kind {v:?}")),
            },
            "optimizer.eta" => {
                b.adam.eta = parse_num(key, v)?;
                b.muon.eta = b.adam.eta;
            }
            "optimizer.beta1" => b.adam.beta1 = parse_num(key, v)?,
            "optimizer.beta2" => b.adam.beta2 = parse_num(key, v)?,
            "optimizer.epsilon" => b.adam.epsilon = parse_num(key, v)?,
            "optimizer.schedule" => {
                b.adam.schedule = match v {
                    "constant" => StepSchedule::Constant,
                    "omega" => StepSchedule::PaperOmega,
                    _ => return err(format!("unknown optimizer.schedule {v:?} (constant | omega)")),
                }
            }
            "optimizer.beta" => b.muon.beta = parse_num(key, v)?,
            "optimizer.ortho" => {
                b.muon.ortho_method = match v {
                    "svd" => OrthoMethod::ExactSvd,
                    "newton_schulz" => OrthoMethod::NewtonSchulz,
                    _ => return err(format!("unknown optimizer.ortho {v:?} (svd | newton_schulz)")),
                }
            }
            "optimizer.ns_iters" => b.muon.ns_iters = parse_num(key, v)?,
            "optimizer.ns_coeffs" => {
                let c: Vec<f64> = parse_list(key, v)?;
                if c.len() != 3 {
                    return err("optimizer.ns_coeffs needs exactly 3 values");
                }
                b.muon.ns_coeffs = [c[0], c[1], c[2]];
            }
            "run.iters" => b.iters = parse_num(key, v)?,
            "run.workers" => b.workers = parse_num(key, v)?,
            "run.seed" => b.seed = parse_num(key, v)?,
            "run.telemetry_every" => b.telemetry_every = parse_num(key, v)?,
            "output.format" => {
                b.format = match v {
                    "csv" => OutputFormat::Csv,
                    "jsonl" => OutputFormat::Jsonl,
                    _ => return err(format!("unknown output.format {v:?} (csv | jsonl)")),
                }
            }
            _ if key.starts_with("policy.") => {
                let rest = &key["policy.".len()..];
                let Some((comp, field)) = rest.split_once('.') else {
                    return err(format!("unknown key {key:?}"));
                };
                apply_policy_key(&mut b.policy, comp, field, v)?;
            }
            _ => return err(format!("unknown key {key:?}")),
        }
    }

    let optimizer = match b.opt_kind.as_str() {
        "adam" => OptimizerKind::Adam(b.adam),
        _ => OptimizerKind::Muon(b.muon),
    };
    let train = TrainConfig {
        problem: b.problem,
        optimizer,
        policy: b.policy,
        iters: b.iters,
        workers: b.workers,
        seed: b.seed,
        telemetry_every: b.telemetry_every,
    };
    train.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(CliConfig {
        train,
        format: b.format,
    })
}

fn fmt_spec(spec: &QuantSpec) -> Vec<(String, String)> {
    if spec.enabled {
        vec![
            ("mantissa".into(), spec.mantissa_bits.to_string()),
            ("rounding".into(), spec.rounding.name().into()),
        ]
    } else {
        vec![("mantissa".into(), "off".into())]
    }
}

/// Canonical flat `key = value` echo of the effective configuration.
pub fn echo_config(cfg: &CliConfig) -> String {
    let mut lines: Vec<(String, String)> = Vec::new();
    let p = &cfg.train.problem;
    lines.push(("problem.kind".into(), p.kind.name().into()));
    match p.kind {
        ProblemKind::SyntheticMlp => {
            let widths: Vec<String> = p.mlp_layers.iter().map(|w| w.to_string()).collect();
            lines.push(("problem.mlp_layers".into(), widths.join(",")));
            lines.push(("problem.dataset_seed".into(), p.dataset_seed.to_string()));
            lines.push(("problem.dataset_size".into(), p.dataset_size.to_string()));
            lines.push(("problem.num_classes".into(), p.num_classes.to_string()));
            lines.push(("problem.batch_size".into(), p.batch_size.to_string()));
        }
        _ => {
            lines.push(("problem.m".into(), p.m.to_string()));
            lines.push(("problem.n".into(), p.n.to_string()));
            lines.push(("problem.noise_sigma".into(), p.noise_sigma.to_string()));
        }
    }
    match &cfg.train.optimizer {
        OptimizerKind::Adam(h) => {
            lines.push(("optimizer.kind".into(), "adam".into()));
            lines.push(("optimizer.eta".into(), h.eta.to_string()));
            lines.push(("optimizer.beta1".into(), h.beta1.to_string()));
            lines.push(("optimizer.beta2".into(), h.beta2.to_string()));
            lines.push(("optimizer.epsilon".into(), h.epsilon.to_string()));
            let sched = match h.schedule {
                StepSchedule::Constant => "constant",
                StepSchedule::PaperOmega => "omega",
            };
            lines.push(("optimizer.schedule".into(), sched.into()));
        }
        OptimizerKind::Muon(h) => {
            lines.push(("optimizer.kind".into(), "muon".into()));
            lines.push(("optimizer.eta".into(), h.eta.to_string()));
            lines.push(("optimizer.beta".into(), h.beta.to_string()));
            lines.push(("optimizer.ortho".into(), h.ortho_method.name().into()));
            lines.push(("optimizer.ns_iters".into(), h.ns_iters.to_string()));
            if h.ns_coeffs != NS_COEFFS {
                let c = h.ns_coeffs.map(|x| x.to_string());
                lines.push(("optimizer.ns_coeffs".into(), c.join(",")));
            }
        }
    }
    for (name, spec) in [
        ("weights", &cfg.train.policy.weights),
        ("gradients", &cfg.train.policy.gradients),
        ("moment1", &cfg.train.policy.moment1),
        ("moment2", &cfg.train.policy.moment2),
    ] {
        for (field, value) in fmt_spec(spec) {
            lines.push((format!("policy.{name}.{field}"), value));
        }
    }
    lines.push(("run.iters".into(), cfg.train.iters.to_string()));
    lines.push(("run.workers".into(), cfg.train.workers.to_string()));
    lines.push(("run.seed".into(), cfg.train.seed.to_string()));
    lines.push(("run.telemetry_every".into(), cfg.train.telemetry_every.to_string()));
    let fmt = match cfg.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Jsonl => "jsonl",
    };
    lines.push(("output.format".into(), fmt.into()));
    let mut out = String::new();
    for (k, v) in lines {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

/// Parse a bound-parameter file: `theorem = adam | muon` plus the theorem's
/// inputs.
pub enum BoundParams {
    Adam(AdamBoundInput),
    Muon(MuonBoundInput),
}

pub fn parse_bound_params(text: &str, source: &str) -> CResult<BoundParams> {
    let assignments = parse_assignments(text, source)?;
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (k, v) in assignments {
        map.insert(k, v);
    }
    let theorem = map
        .remove("theorem")
        .ok_or_else(|| ConfigError("missing key 'theorem' (adam | muon)".into()))?;
    let mut take = |key: &str, default: Option<f64>| -> CResult<f64> {
        match map.remove(key) {
            Some(v) => parse_num(key, &v),
            None => default.ok_or_else(|| ConfigError(format!("missing key {key:?}"))),
        }
    };
    let params = match theorem.as_str() {
        "adam" => {
            let input = AdamBoundInput {
                iters: take("T", None)? as usize,
                dim: take("d", None)?,
                eta: take("eta", None)?,
                beta1: take("beta1", None)?,
                beta2: take("beta2", None)?,
                epsilon: take("epsilon", None)?,
                q_g: take("q_G", Some(0.0))?,
                q_m: take("q_M", Some(0.0))?,
                q_v: take("q_V", Some(0.0))?,
                q_w: take("q_W", Some(0.0))?,
                grad_inf_bound: take("R", None)?,
                smoothness: take("L", None)?,
                init_norm: take("D", None)?,
                f0_minus_fstar: take("F0_minus_Fstar", None)?,
            };
            BoundParams::Adam(input)
        }
        "muon" => {
            let input = MuonBoundInput {
                iters: take("T", None)? as usize,
                eta: take("eta", None)?,
                beta: take("beta", None)?,
                rank: take("r", None)?,
                workers: take("B", Some(1.0))?,
                sigma: take("sigma", None)?,
                smoothness: take("L", None)?,
                delta: take("Delta", None)?,
                q_g: take("q_G", Some(0.0))?,
                q_w: take("q_W", Some(0.0))?,
                q_m: take("q_M", Some(0.0))?,
                c2: take("C2", Some(1.0))?,
            };
            BoundParams::Muon(input)
        }
        other => return err(format!("unknown theorem {other:?} (adam | muon)")),
    };
    if let Some(unknown) = map.keys().next() {
        return err(format!("unknown key {unknown:?}"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips_through_echo() {
        let text = "\
# demo config
problem.kind = rosenbrock
problem.m = 10
problem.n = 12
optimizer.kind = adam
optimizer.eta = 0.0005
policy.all.mantissa = 8
policy.all.rounding = stochastic
run.iters = 100
run.seed = 7
";
        let cfg = build_cli_config(text, "test", &[]).unwrap();
        assert_eq!(cfg.train.iters, 100);
        assert_eq!(cfg.train.policy.weights.mantissa_bits, 8);
        let echo = echo_config(&cfg);
        let cfg2 = build_cli_config(&echo, "echo", &[]).unwrap();
        assert_eq!(cfg2.train, cfg.train);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(build_cli_config("problem.kindd = rosenbrock", "t", &[]).is_err());
        assert!(build_cli_config("policy.weights.bits = 3", "t", &[]).is_err());
        assert!(build_cli_config("", "t", &["nope=1".into()]).is_err());
    }

    #[test]
    fn overrides_apply_after_file() {
        let cfg = build_cli_config(
            "run.seed = 1",
            "t",
            &["run.seed=9".into(), "policy.gradients.mantissa=4".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert!(cfg.train.policy.gradients.enabled);
        assert!(!cfg.train.policy.weights.enabled);
    }

    #[test]
    fn bound_params_parse() {
        let adam = "\
theorem = adam
T = 1000
d = 25
eta = 0.001
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8
R = 1
L = 1
D = 1
F0_minus_Fstar = 1
";
        assert!(matches!(
            parse_bound_params(adam, "t").unwrap(),
            BoundParams::Adam(_)
        ));
        assert!(parse_bound_params("theorem = adam\nT = 10\nbogus = 1", "t").is_err());
    }
}
