//! Monte Carlo study of FDR and power.
//!
//! Each run draws a stream of hypotheses: a Bernoulli(`pi1`) label marks a
//! true effect, null p-values are Uniform(0, 1) and alternative p-values
//! follow Beta(`a`, 1), sampled by inverse CDF as `U^(1/a)`. Every protocol
//! under comparison sees the identical stream for a given run, fed through
//! a [`Session`] exactly as live results would be.
//!
//! Randomness comes from ChaCha20 keyed by the seed, with one stream id per
//! (run, purpose), so runs are independent of each other and of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::protocol::{ProtocolConfig, ProtocolError, ProtocolState};
use crate::session::{OutcomeStatus, ResearchError, Session};

/// Reference values for the default configuration.
pub mod table1 {
    pub const N_HYPOTHESES: usize = 2000;
    pub const PI1: f64 = 0.1;
    pub const BETA_A: f64 = 0.15;
    pub const ALPHA: f64 = 0.05;
    pub const RUNS: usize = 100;
    pub const SEED: u64 = 20_251_017;

    pub const NAIVE_FDR: f64 = 0.4090;
    pub const NAIVE_POWER: f64 = 0.6399;
    pub const LORD_FDR: f64 = 0.0106;
    pub const LORD_POWER: f64 = 0.2900;

    pub const NAIVE_FDR_TOL: f64 = 0.03;
    pub const NAIVE_POWER_TOL: f64 = 0.01;
    pub const NAIVE_ANALYTIC_SE_MULTIPLE: f64 = 3.0;
    pub const LORD_FDR_TOL: f64 = 0.02;
    pub const LORD_FDR_BATCH_CAP: f64 = 0.08;
    pub const LORD_POWER_RANGE: (f64, f64) = (0.15, 0.45);
}

const PURPOSE_LABELS: u64 = 0;
const PURPOSE_P_VALUES: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureConfig {
    pub n_hypotheses: usize,
    pub pi1: f64,
    pub beta_a: f64,
    pub seed: u64,
    pub n_runs: usize,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            n_hypotheses: table1::N_HYPOTHESES,
            pi1: table1::PI1,
            beta_a: table1::BETA_A,
            seed: table1::SEED,
            n_runs: table1::RUNS,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.n_hypotheses < 1 {
            return Err(ProtocolError::invalid_config("n must be at least 1"));
        }
        if self.n_runs < 1 {
            return Err(ProtocolError::invalid_config("runs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.pi1) {
            return Err(ProtocolError::invalid_config(format!(
                "pi1 = {} outside [0, 1]",
                self.pi1
            )));
        }
        if !(self.beta_a > 0.0 && self.beta_a.is_finite()) {
            return Err(ProtocolError::invalid_config(format!(
                "beta shape a = {} must be positive",
                self.beta_a
            )));
        }
        Ok(())
    }
}

fn substream(seed: u64, run_index: u64, purpose: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((run_index << 8) | purpose);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub is_true_effect: bool,
    pub p_value: f64,
}

/// Deterministic in `(config.seed, run_index)`.
pub fn sample_hypothesis_stream(config: &MixtureConfig, run_index: u64) -> Vec<Hypothesis> {
    let mut labels = substream(config.seed, run_index, PURPOSE_LABELS);
    let mut draws = substream(config.seed, run_index, PURPOSE_P_VALUES);
    let inv_a = 1.0 / config.beta_a;
    (0..config.n_hypotheses)
        .map(|_| {
            let is_true_effect = labels.gen::<f64>() < config.pi1;
            let u: f64 = draws.gen();
            let p_value = if is_true_effect { u.powf(inv_a) } else { u };
            Hypothesis {
                is_true_effect,
                p_value,
            }
        })
        .collect()
}

/// FNV-1a over labels and p-value bit patterns.
pub fn stream_digest(stream: &[Hypothesis]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for x in stream {
        eat(&[u8::from(x.is_true_effect)]);
        eat(&x.p_value.to_bits().to_le_bytes());
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub rejections: usize,
    pub false_positives: usize,
    pub true_positives: usize,
    pub n_true_effects: usize,
    pub fdp: f64,
    pub power: f64,
    pub stream_digest: u64,
}

impl RunResult {
    fn tally(stream: &[Hypothesis], decisions: &[bool]) -> Self {
        let mut r = Self {
            rejections: 0,
            false_positives: 0,
            true_positives: 0,
            n_true_effects: 0,
            fdp: 0.0,
            power: 0.0,
            stream_digest: stream_digest(stream),
        };
        for (h, &rejected) in stream.iter().zip(decisions) {
            r.n_true_effects += usize::from(h.is_true_effect);
            if rejected {
                r.rejections += 1;
                if h.is_true_effect {
                    r.true_positives += 1;
                } else {
                    r.false_positives += 1;
                }
            }
        }
        r.fdp = r.false_positives as f64 / r.rejections.max(1) as f64;
        r.power = r.true_positives as f64 / r.n_true_effects.max(1) as f64;
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSummary {
    pub protocol: String,
    pub target_alpha: f64,
    pub empirical_fdr: f64,
    pub mean_power: f64,
    pub stderr_fdr: f64,
    pub stderr_power: f64,
    pub runs: Vec<RunResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub config: MixtureConfig,
    pub per_protocol: Vec<ProtocolSummary>,
}

impl SimulationReport {
    pub fn protocol(&self, name: &str) -> Option<&ProtocolSummary> {
        self.per_protocol.iter().find(|p| p.protocol == name)
    }

    /// Plain-text table.
    pub fn to_table(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "Monte Carlo: N={} pi1={} a={} runs={} seed={}\n",
            c.n_hypotheses, c.pi1, c.beta_a, c.n_runs, c.seed
        );
        out.push_str(&format!(
            "{:<10} {:>7} {:>13} {:>9} {:>9} {:>11}\n",
            "protocol", "target", "empirical FDR", "(stderr)", "power", "(stderr)"
        ));
        for p in &self.per_protocol {
            out.push_str(&format!(
                "{:<10} {:>7.4} {:>13.4} {:>9.4} {:>9.4} {:>11.4}\n",
                p.protocol, p.target_alpha, p.empirical_fdr, p.stderr_fdr, p.mean_power, p.stderr_power
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("protocol,target_alpha,empirical_fdr,stderr_fdr,power,stderr_power,runs\n");
        for p in &self.per_protocol {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.protocol,
                p.target_alpha,
                p.empirical_fdr,
                p.stderr_fdr,
                p.mean_power,
                p.stderr_power,
                p.runs.len()
            ));
        }
        out
    }
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs one replicate: the same stream through each protocol's session.
pub fn simulate_run(
    config: &MixtureConfig,
    protocols: &[ProtocolConfig],
    run_index: u64,
) -> Result<Vec<RunResult>, ResearchError> {
    let stream = sample_hypothesis_stream(config, run_index);
    let p_values: Vec<f64> = stream.iter().map(|h| h.p_value).collect();
    protocols
        .iter()
        .map(|protocol| {
            let mut session = Session::<ProtocolState>::open(protocol.clone())?;
            let trace = session.run_protocol_sequence(&p_values);
            if let crate::session::SessionStatus::Halted(err) = trace.status {
                return Err(err);
            }
            let decisions: Vec<bool> = trace
                .outcomes
                .iter()
                .map(|o| matches!(o.status, OutcomeStatus::Tested { is_discovery: true, .. }))
                .collect();
            Ok(RunResult::tally(&stream, &decisions))
        })
        .collect()
}

pub fn run_simulation(
    config: &MixtureConfig,
    protocols: &[ProtocolConfig],
    parallel: bool,
) -> Result<SimulationReport, ResearchError> {
    config.validate().map_err(ResearchError::ProtocolViolation)?;
    let runs: Vec<Vec<RunResult>> = if parallel {
        (0..config.n_runs as u64)
            .into_par_iter()
            .map(|r| simulate_run(config, protocols, r))
            .collect::<Result<_, _>>()?
    } else {
        (0..config.n_runs as u64)
            .map(|r| simulate_run(config, protocols, r))
            .collect::<Result<_, _>>()?
    };

    let per_protocol = protocols
        .iter()
        .enumerate()
        .map(|(i, protocol)| {
            let results: Vec<RunResult> = runs.iter().map(|r| r[i].clone()).collect();
            let (empirical_fdr, stderr_fdr) = mean_and_stderr(results.iter().map(|r| r.fdp));
            let (mean_power, stderr_power) = mean_and_stderr(results.iter().map(|r| r.power));
            ProtocolSummary {
                protocol: protocol.name().to_owned(),
                target_alpha: protocol.alpha(),
                empirical_fdr,
                mean_power,
                stderr_fdr,
                stderr_power,
                runs: results,
            }
        })
        .collect();
    Ok(SimulationReport {
        config: config.clone(),
        per_protocol,
    })
}

/// Closed-form `(FDR, power)` of the fixed-threshold rule under the
/// mixture: power is the Beta(a, 1) CDF at `alpha`, FDR the share of nulls
/// among expected rejections.
pub fn analytic_naive_expectations(config: &MixtureConfig, alpha: f64) -> (f64, f64) {
    let power = alpha.powf(config.beta_a);
    let null_mass = (1.0 - config.pi1) * alpha;
    let fdr = null_mass / (null_mass + config.pi1 * power);
    (fdr, power)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            detail,
        }
    }
}

/// Compares a report for the default configuration with the reference
/// table. Expects protocols named `naive` and `LORD++`.
pub fn check_table1(report: &SimulationReport) -> Vec<Check> {
    use table1::*;
    let mut checks = Vec::new();
    let (Some(naive), Some(lord)) = (report.protocol("naive"), report.protocol("LORD++")) else {
        checks.push(Check::new(
            "protocols present",
            false,
            "report needs both naive and LORD++".into(),
        ));
        return checks;
    };
    let (an_fdr, an_power) = analytic_naive_expectations(&report.config, naive.target_alpha);

    let d = (naive.empirical_fdr - NAIVE_FDR).abs();
    checks.push(Check::new(
        "naive FDR vs reference",
        d <= NAIVE_FDR_TOL,
        format!("{:.4} vs {NAIVE_FDR} (|diff| {d:.4} <= {NAIVE_FDR_TOL})", naive.empirical_fdr),
    ));
    let d = (naive.empirical_fdr - an_fdr).abs();
    let bound = NAIVE_ANALYTIC_SE_MULTIPLE * naive.stderr_fdr;
    checks.push(Check::new(
        "naive FDR vs closed form",
        d <= bound,
        format!("{:.4} vs {an_fdr:.4} (|diff| {d:.4} <= 3 SE = {bound:.4})", naive.empirical_fdr),
    ));
    let d = (naive.mean_power - NAIVE_POWER).abs();
    checks.push(Check::new(
        "naive power vs reference",
        d <= NAIVE_POWER_TOL,
        format!(
            "{:.4} vs {NAIVE_POWER} (|diff| {d:.4} <= {NAIVE_POWER_TOL}; closed form {an_power:.4})",
            naive.mean_power
        ),
    ));
    checks.push(Check::new(
        "LORD++ FDR <= target",
        lord.empirical_fdr <= lord.target_alpha,
        format!("{:.4} <= {}", lord.empirical_fdr, lord.target_alpha),
    ));
    let d = (lord.empirical_fdr - LORD_FDR).abs();
    checks.push(Check::new(
        "LORD++ FDR vs reference",
        d <= LORD_FDR_TOL,
        format!("{:.4} vs {LORD_FDR} (|diff| {d:.4} <= {LORD_FDR_TOL})", lord.empirical_fdr),
    ));
    let (lo, hi) = LORD_POWER_RANGE;
    checks.push(Check::new(
        "LORD++ power in range",
        (lo..=hi).contains(&lord.mean_power),
        format!(
            "{:.4} in [{lo}, {hi}] (reference {LORD_POWER} depends on w0 and schedule)",
            lord.mean_power
        ),
    ));
    checks
}
