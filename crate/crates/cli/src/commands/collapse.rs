use anyhow::Result;
use rayon::prelude::*;
use rdmsim::collapse::{
    collapse_outcome, ensemble_statistics, instantaneous_k, run_trajectory_with, CollapseConfig, CollapseTrajectory,
    KMode,
};
use rdmsim::hilbert::{EnergySuperposition, UnitMode};
use rdmsim::seed::trial_rng;
use rdmsim::stats::binomial_sigma;
use rdmsim::C64;
use serde::Deserialize;

use super::{nonzero, require};
use crate::output::{RunOutput, Table};
use crate::row;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateInput {
    pub energies: Vec<f64>,
    pub probabilities: Option<Vec<f64>>,
    pub amplitudes: Option<Vec<C64>>,
    #[serde(default)]
    pub units: UnitMode,
}

impl StateInput {
    fn build(&self) -> Result<EnergySuperposition> {
        Ok(match (&self.probabilities, &self.amplitudes) {
            (Some(p), None) => EnergySuperposition::from_probabilities(&self.energies, p, self.units)?,
            (None, Some(a)) => EnergySuperposition::new(self.energies.clone(), a.clone(), self.units)?,
            _ => anyhow::bail!("precondition violated: give exactly one of `probabilities` and `amplitudes`"),
        })
    }
}

fn config(units: UnitMode, k: Option<f64>, epsilon: f64, seed: u64) -> Result<CollapseConfig> {
    let base = match units {
        UnitMode::Natural => CollapseConfig::natural(),
        UnitMode::PhysicalEv => CollapseConfig::physical(),
    };
    let k_mode = k.map_or(KMode::Dynamic, KMode::Frozen);
    let cfg = CollapseConfig {
        k_mode,
        epsilon,
        seed,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

fn epsilon() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub state: StateInput,
    /// Frozen `k`; omitted means `k = dE(t) t_P / hbar` every step.
    pub k: Option<f64>,
    #[serde(default = "epsilon")]
    pub epsilon: f64,
    #[serde(default = "one_trial")]
    pub trials: usize,
    #[serde(default = "max_steps")]
    pub max_steps: usize,
    #[serde(skip)]
    built: Option<EnergySuperposition>,
}

fn one_trial() -> usize {
    1
}

fn max_steps() -> usize {
    100_000_000
}

/// Rejects configurations whose first step would already trip the `k <= 1`
/// guard, so the run cannot fail half way for that reason.
fn check_k(s: &EnergySuperposition, k: Option<f64>, epsilon: f64) -> Result<()> {
    let cfg = config(s.units(), k, epsilon, 0)?;
    if k.is_none() {
        let k0 = instantaneous_k(&s.merge_degenerate().0, &cfg);
        require(k0 <= 1.0, || {
            format!("initial k = {k0:e} exceeds 1 (energy spread beyond the Planck scale)")
        })?;
    }
    Ok(())
}

pub fn prepare_run(mut p: RunParams) -> Result<RunParams> {
    nonzero("trials", p.trials)?;
    nonzero("max_steps", p.max_steps)?;
    let s = p.state.build()?;
    check_k(&s, p.k, p.epsilon)?;
    p.built = Some(s);
    Ok(p)
}

fn trajectory_table(name: &str, runs: &[(usize, CollapseTrajectory)]) -> Table {
    let mut t = Table::new(name, &["trial", "step", "branch", "energy", "probability", "staying"]);
    for (trial, run) in runs {
        for (step, probs) in run.probabilities.iter().enumerate() {
            // staying branch drawn during the step that produced this row
            let stay = if step == 0 { -1 } else { run.staying[step - 1] as i64 };
            for (b, q) in probs.iter().enumerate() {
                t.push(row![*trial, step, b, run.energies[b], *q, stay]);
            }
        }
    }
    t
}

pub fn run(p: &RunParams, seed: u64) -> Result<RunOutput> {
    let s0 = p.built.as_ref().expect("prepared");
    let cfg = config(s0.units(), p.k, p.epsilon, seed)?;
    let results: Vec<(Option<usize>, usize)> = (0..p.trials)
        .into_par_iter()
        .map(|i| collapse_outcome(s0, &cfg, p.max_steps, &mut trial_rng(seed, i as u64)))
        .collect::<rdmsim::Result<_>>()?;
    let merged = s0.merge_degenerate().0;
    let p0 = merged.probabilities();

    let mut outcomes = Table::new("outcomes", &["trial", "decided", "outcome", "steps"]);
    let mut counts = vec![0u64; merged.len()];
    let mut undecided = 0u64;
    let mut steps: Vec<usize> = Vec::new();
    for (i, (o, n)) in results.iter().enumerate() {
        match o {
            Some(b) => {
                counts[*b] += 1;
                steps.push(*n);
                outcomes.push(row![i, true, *b as i64, *n]);
            }
            None => {
                undecided += 1;
                outcomes.push(row![i, false, -1i64, *n]);
            }
        }
    }
    let mut freq = Table::new(
        "frequencies",
        &[
            "branch",
            "energy",
            "initial_probability",
            "count",
            "frequency",
            "binomial_sigma",
        ],
    );
    for (b, c) in counts.iter().enumerate() {
        freq.push(row![
            b,
            merged.energies()[b],
            p0[b],
            *c,
            *c as f64 / p.trials as f64,
            binomial_sigma(p0[b], p.trials)
        ]);
    }

    let first = run_trajectory_with(s0, &cfg, p.max_steps, &mut trial_rng(seed, 0))?;
    let mut out = RunOutput {
        tables: vec![outcomes, freq, trajectory_table("trajectory", &[(0, first)])],
        ..Default::default()
    };
    steps.sort_unstable();
    let median = match steps.len() {
        0 => None,
        n if n % 2 == 1 => Some(steps[n / 2] as f64),
        n => Some((steps[n / 2 - 1] + steps[n / 2]) as f64 / 2.0),
    };
    out.note("trials", p.trials);
    out.note("undecided", undecided);
    if let Some(m) = median {
        out.note("median_steps", m);
        if let Some(k) = p.k {
            out.note("median_steps_times_k2", m * k * k);
        }
    }
    let shown: Vec<String> = counts
        .iter()
        .map(|c| format!("{:.4}", *c as f64 / p.trials as f64))
        .collect();
    out.line = format!(
        "{} trials, outcome frequencies [{}], undecided {undecided}, median steps {}",
        p.trials,
        shown.join(", "),
        median.map_or("n/a".into(), |m| m.to_string())
    );
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleParams {
    pub state: StateInput,
    pub k: Option<f64>,
    #[serde(default = "epsilon")]
    pub epsilon: f64,
    pub n_trials: usize,
    pub n_steps: usize,
    #[serde(default = "stride")]
    pub stride: usize,
    /// Trials whose full paths (up to collapse or `n_steps`) are written.
    #[serde(default = "recorded")]
    pub record_trials: usize,
    #[serde(skip)]
    built: Option<EnergySuperposition>,
}

fn stride() -> usize {
    1
}

fn recorded() -> usize {
    10
}

pub fn prepare_ensemble(mut p: EnsembleParams) -> Result<EnsembleParams> {
    nonzero("n_trials", p.n_trials)?;
    nonzero("stride", p.stride)?;
    let s = p.state.build()?;
    check_k(&s, p.k, p.epsilon)?;
    p.built = Some(s);
    Ok(p)
}

pub fn ensemble(p: &EnsembleParams, seed: u64) -> Result<RunOutput> {
    let s0 = p.built.as_ref().expect("prepared");
    let cfg = config(s0.units(), p.k, p.epsilon, seed)?;
    let series = ensemble_statistics(s0, &cfg, p.n_trials, p.n_steps, p.stride)?;
    let m = series.energies.len();

    let mut means = Table::new("slices", &["step", "branch", "mean_p", "se_p"]);
    let mut pairs = match p.k {
        Some(_) => Table::new("pairs", &["step", "i", "j", "mean_pp", "se_pp", "predicted"]),
        None => Table::new("pairs", &["step", "i", "j", "mean_pp", "se_pp"]),
    };
    let p0 = &series.slices[0].mean_p;
    let mut worst_drift: f64 = 0.0;
    let mut worst_decay: f64 = 0.0;
    for sl in &series.slices {
        for (b, (mu, se)) in sl.mean_p.iter().zip(&sl.se_p).enumerate() {
            means.push(row![sl.step, b, *mu, *se]);
            if sl.step > 0 && *se > 0.0 {
                worst_drift = worst_drift.max((mu - p0[b]).abs() / se);
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                let (mu, se) = sl.pair(i, j);
                let Some(k) = p.k else {
                    pairs.push(row![sl.step, i, j, mu, se]);
                    continue;
                };
                // with frozen k every step multiplies E[P_i P_j] by 1 - k^2
                let predicted = (1.0 - k * k).powi(sl.step as i32) * p0[i] * p0[j];
                if sl.step > 0 && se > 0.0 {
                    worst_decay = worst_decay.max((mu - predicted).abs() / se);
                }
                pairs.push(row![sl.step, i, j, mu, se, predicted]);
            }
        }
    }

    let record: Vec<usize> = (0..p.n_trials.min(p.record_trials)).collect();
    let runs: Vec<(usize, CollapseTrajectory)> = record
        .par_iter()
        .map(|&i| {
            Ok((
                i,
                run_trajectory_with(s0, &cfg, p.n_steps, &mut trial_rng(seed, i as u64))?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut out = RunOutput {
        tables: vec![means, pairs, trajectory_table("trajectories", &runs)],
        ..Default::default()
    };
    out.note("n_trials", p.n_trials);
    out.note("slices", series.slices.len());
    out.note("max_mean_p_deviation_se", worst_drift);
    out.line = format!(
        "{} trials x {} steps, worst mean-P drift {worst_drift:.2} SE",
        p.n_trials, p.n_steps
    );
    if p.k.is_some() && m > 1 {
        out.note("max_pair_decay_deviation_se", worst_decay);
        out.line
            .push_str(&format!(", worst P_iP_j deviation from (1-k^2)^n {worst_decay:.2} SE"));
    }
    Ok(out)
}
