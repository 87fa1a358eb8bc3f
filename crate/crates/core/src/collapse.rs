//! Energy-conserved discrete collapse.
//!
//! Every Planck instant one energy branch `s` is drawn with probability
//! `P_s`, and all branch probabilities move towards it:
//!
//! ```text
//! P_i <- P_i + k (delta_{E_s, E_i} - P_i),    k = dE t_P / hbar
//! ```
//!
//! The update is a martingale, `E[P_i'] = P_i`, so outcome frequencies follow
//! the Born rule and the ensemble energy distribution is conserved.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{C_M_PER_S, ELECTRON_MASS_EV, HBAR_EV_S, H_EV_S, PLANCK_TIME_S};
use crate::error::{invalid, Error, Result};
use crate::hilbert::{energy_uncertainty, EnergySuperposition, NORM_TOLERANCE};
use crate::rdm::DiscreteSampler;
use crate::seed::{rng_from_seed, trial_rng, SimRng};
use crate::stats::mean_and_se;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KMode {
    /// `k = dE(t) t_P / hbar`, recomputed every step.
    Dynamic,
    /// Constant `k`.
    Frozen(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaEReducer {
    /// `sqrt(sum_j sum_i P_i (E_ji - mean_j)^2)`
    Rms,
    /// `sum_j sqrt(sum_i P_i (E_ji - mean_j)^2)`
    LinearSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseConfig {
    pub k_mode: KMode,
    pub reducer: DeltaEReducer,
    pub t_planck: f64,
    pub hbar: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl CollapseConfig {
    /// `hbar = t_P = 1`.
    pub fn natural() -> Self {
        Self {
            k_mode: KMode::Dynamic,
            reducer: DeltaEReducer::Rms,
            t_planck: 1.0,
            hbar: 1.0,
            epsilon: 1e-6,
            seed: 0,
        }
    }

    /// Energies in eV, times in seconds.
    pub fn physical() -> Self {
        Self {
            t_planck: PLANCK_TIME_S,
            hbar: HBAR_EV_S,
            ..Self::natural()
        }
    }

    pub fn frozen(k: f64) -> Self {
        Self {
            k_mode: KMode::Frozen(k),
            ..Self::natural()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_planck > 0.0 && self.t_planck.is_finite()) {
            return Err(invalid("t_P must be positive"));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(invalid("hbar must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("collapse epsilon must lie in (0, 1)"));
        }
        if let KMode::Frozen(k) = self.k_mode {
            if !(0.0..=1.0).contains(&k) {
                return Err(invalid(format!("frozen k = {k} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// `E_P = hbar / t_P`.
    pub fn planck_energy(&self) -> f64 {
        self.hbar / self.t_planck
    }
}

fn spread(p: &[f64], energies: &[f64]) -> f64 {
    // deviations from a reference branch keep equal energies exactly equal
    let e0 = energies[0];
    let total: f64 = p.iter().sum();
    let mean: f64 = p.iter().zip(energies).map(|(p, e)| p * (e - e0)).sum::<f64>() / total;
    (p.iter()
        .zip(energies)
        .map(|(p, e)| p * (e - e0 - mean).powi(2))
        .sum::<f64>()
        / total)
        .sqrt()
}

fn k_for(p: &[f64], energies: &[f64], cfg: &CollapseConfig) -> Result<f64> {
    let k = match cfg.k_mode {
        KMode::Frozen(k) => k,
        KMode::Dynamic => spread(p, energies) * cfg.t_planck / cfg.hbar,
    };
    if k > 1.0 {
        return Err(Error::SuperPlanckian { k });
    }
    Ok(k)
}

/// Applies the update for staying branch `s` in place. Branches degenerate
/// with `E_s` share the `k` pull in proportion to their weight, which is the
/// update of the merged branch split back out. The staying group receives
/// the exact complement of the others, so every entry stays inside [0, 1].
fn apply_update(p: &mut [f64], energies: &[f64], k: f64, s: usize) {
    let es = energies[s];
    let group: f64 = p.iter().zip(energies).filter(|(_, e)| **e == es).map(|(p, _)| *p).sum();
    let mut others = 0.0;
    for (pi, e) in p.iter_mut().zip(energies) {
        if *e != es {
            *pi *= 1.0 - k;
            others += *pi;
        }
    }
    let new_group = (1.0 - others).clamp(0.0, 1.0);
    for (pi, e) in p.iter_mut().zip(energies) {
        if *e == es {
            *pi = if group > 0.0 { *pi / group * new_group } else { 0.0 };
        }
    }
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> Result<usize> {
    Ok(DiscreteSampler::new(p, NORM_TOLERANCE)?.sample(rng))
}

/// One Planck instant. Returns the updated state and the staying branch.
pub fn collapse_step<R: Rng + ?Sized>(
    s: &EnergySuperposition,
    cfg: &CollapseConfig,
    rng: &mut R,
) -> Result<(EnergySuperposition, usize)> {
    cfg.validate()?;
    let mut p = s.probabilities();
    let k = k_for(&p, s.energies(), cfg)?;
    let stay = draw(&p, rng)?;
    apply_update(&mut p, s.energies(), k, stay);
    let amps = s
        .amplitudes()
        .iter()
        .zip(&p)
        .zip(s.energies())
        .map(|((c, pi), e)| {
            let phase = if c.norm() > 0.0 {
                c / c.norm()
            } else {
                C64::new(1.0, 0.0)
            };
            phase * pi.sqrt() * C64::from_polar(1.0, -e * cfg.t_planck / cfg.hbar)
        })
        .collect();
    Ok((s.with_amplitudes(amps), stay))
}

/// Exact one-step ensemble average `sum_s P_s P'(s)` of the probabilities.
/// Equals `P` when the update is a martingale.
pub fn expected_update(s: &EnergySuperposition, cfg: &CollapseConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let p = s.probabilities();
    let k = k_for(&p, s.energies(), cfg)?;
    let mut mean = vec![0.0; p.len()];
    for (stay, w) in p.iter().enumerate() {
        let mut q = p.clone();
        apply_update(&mut q, s.energies(), k, stay);
        for (m, qi) in mean.iter_mut().zip(&q) {
            *m += w * qi;
        }
    }
    Ok(mean)
}

/// A recorded collapse run on the degeneracy-merged state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseTrajectory {
    /// Energies of the merged branches.
    pub energies: Vec<f64>,
    /// `merged[i]` is the merged branch holding original branch `i`.
    pub merged: Vec<usize>,
    /// Probabilities before the first step and after every step.
    pub probabilities: Vec<Vec<f64>>,
    /// Staying branch drawn at every step.
    pub staying: Vec<usize>,
    /// Merged branch whose probability passed `1 - epsilon`, if any.
    pub outcome: Option<usize>,
    pub steps: usize,
}

fn collapsed(p: &[f64], eps: f64) -> Option<usize> {
    p.iter().position(|x| *x > 1.0 - eps)
}

/// Iterates [`collapse_step`] from `s0` (after merging degenerate branches)
/// until one branch exceeds `1 - epsilon` or `max_steps` is reached.
pub fn run_trajectory(s0: &EnergySuperposition, cfg: &CollapseConfig, max_steps: usize) -> Result<CollapseTrajectory> {
    let mut rng = rng_from_seed(cfg.seed);
    run_trajectory_with(s0, cfg, max_steps, &mut rng)
}

pub fn run_trajectory_with<R: Rng + ?Sized>(
    s0: &EnergySuperposition,
    cfg: &CollapseConfig,
    max_steps: usize,
    rng: &mut R,
) -> Result<CollapseTrajectory> {
    cfg.validate()?;
    let (s, merged) = s0.merge_degenerate();
    let energies = s.energies().to_vec();
    let mut p = s.probabilities();
    let mut out = CollapseTrajectory {
        energies,
        merged,
        probabilities: vec![p.clone()],
        staying: Vec::new(),
        outcome: collapsed(&p, cfg.epsilon),
        steps: 0,
    };
    while out.outcome.is_none() && out.steps < max_steps {
        let k = k_for(&p, &out.energies, cfg).map_err(|e| step_error(e, out.steps))?;
        let stay = draw(&p, rng)?;
        apply_update(&mut p, &out.energies, k, stay);
        out.steps += 1;
        out.staying.push(stay);
        out.probabilities.push(p.clone());
        out.outcome = collapsed(&p, cfg.epsilon);
    }
    Ok(out)
}

fn step_error(e: Error, step: usize) -> Error {
    match e {
        Error::SuperPlanckian { k } => Error::StepGuard {
            step,
            detail: format!("k = {k} exceeds 1"),
        },
        other => other,
    }
}

/// Like [`run_trajectory_with`] but keeps only the outcome and step count.
pub fn collapse_outcome<R: Rng + ?Sized>(
    s0: &EnergySuperposition,
    cfg: &CollapseConfig,
    max_steps: usize,
    rng: &mut R,
) -> Result<(Option<usize>, usize)> {
    cfg.validate()?;
    let (s, _) = s0.merge_degenerate();
    let energies = s.energies();
    let mut p = s.probabilities();
    let sampler_check = DiscreteSampler::new(&p, NORM_TOLERANCE)?;
    drop(sampler_check);
    let mut steps = 0;
    while collapsed(&p, cfg.epsilon).is_none() && steps < max_steps {
        let k = k_for(&p, energies, cfg).map_err(|e| step_error(e, steps))?;
        let stay = sample_unchecked(&p, rng);
        apply_update(&mut p, energies, k, stay);
        steps += 1;
    }
    Ok((collapsed(&p, cfg.epsilon), steps))
}

fn sample_unchecked<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Outcome tallies over independent trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub trials: usize,
    /// Counts per merged branch.
    pub counts: Vec<u64>,
    /// Trials that did not collapse within the step budget.
    pub undecided: u64,
    /// Steps to collapse of every decided trial, in trial order.
    pub steps: Vec<usize>,
}

impl OutcomeSummary {
    pub fn median_steps(&self) -> f64 {
        let mut s: Vec<usize> = self.steps.clone();
        s.sort_unstable();
        match s.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => s[n / 2] as f64,
            n => (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0,
        }
    }
}

/// Runs `trials` independent trajectories (seeded by `derive_seed(cfg.seed, i)`)
/// to collapse.
pub fn outcome_statistics(
    s0: &EnergySuperposition,
    cfg: &CollapseConfig,
    trials: usize,
    max_steps: usize,
) -> Result<OutcomeSummary> {
    cfg.validate()?;
    let m = s0.merge_degenerate().0.len();
    let results: Vec<Result<(Option<usize>, usize)>> = (0..trials)
        .into_par_iter()
        .map(|i| collapse_outcome(s0, cfg, max_steps, &mut trial_rng(cfg.seed, i as u64)))
        .collect();
    let mut summary = OutcomeSummary {
        trials,
        counts: vec![0; m],
        undecided: 0,
        steps: Vec::new(),
    };
    for r in results {
        match r? {
            (Some(b), n) => {
                summary.counts[b] += 1;
                summary.steps.push(n);
            }
            (None, _) => summary.undecided += 1,
        }
    }
    Ok(summary)
}

/// Ensemble means at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSlice {
    pub step: usize,
    pub mean_p: Vec<f64>,
    pub se_p: Vec<f64>,
    /// Row-major `m x m`; entry `(i, j)` is the mean of `P_i P_j`.
    pub mean_pp: Vec<f64>,
    pub se_pp: Vec<f64>,
}

impl EnsembleSlice {
    pub fn pair(&self, i: usize, j: usize) -> (f64, f64) {
        let m = self.mean_p.len();
        (self.mean_pp[i * m + j], self.se_pp[i * m + j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub trials: usize,
    pub energies: Vec<f64>,
    pub slices: Vec<EnsembleSlice>,
}

/// Means and standard errors of `P_i` and `P_i P_j` over `n_trials`
/// trajectories, sampled at steps `0, stride, 2 stride, ..` up to `n_steps`.
/// Trajectories keep stepping after they collapse.
pub fn ensemble_statistics(
    s0: &EnergySuperposition,
    cfg: &CollapseConfig,
    n_trials: usize,
    n_steps: usize,
    slice_stride: usize,
) -> Result<EnsembleSeries> {
    cfg.validate()?;
    if n_trials == 0 || slice_stride == 0 {
        return Err(invalid("need at least one trial and a positive slice stride"));
    }
    let (s, _) = s0.merge_degenerate();
    let energies = s.energies().to_vec();
    let p0 = s.probabilities();
    let slice_steps: Vec<usize> = (0..=n_steps).step_by(slice_stride).collect();
    let runs: Vec<Result<Vec<Vec<f64>>>> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng: SimRng = trial_rng(cfg.seed, i as u64);
            let mut p = p0.clone();
            let mut rec = Vec::with_capacity(slice_steps.len());
            let mut next = 0;
            for step in 0..=n_steps {
                if next < slice_steps.len() && slice_steps[next] == step {
                    rec.push(p.clone());
                    next += 1;
                }
                if step == n_steps {
                    break;
                }
                let k = k_for(&p, &energies, cfg).map_err(|e| step_error(e, step))?;
                let stay = sample_unchecked(&p, &mut rng);
                apply_update(&mut p, &energies, k, stay);
            }
            Ok(rec)
        })
        .collect();
    let runs: Vec<Vec<Vec<f64>>> = runs.into_iter().collect::<Result<_>>()?;
    let m = energies.len();
    let slices = slice_steps
        .iter()
        .enumerate()
        .map(|(idx, &step)| {
            let mut mean_p = Vec::with_capacity(m);
            let mut se_p = Vec::with_capacity(m);
            for i in 0..m {
                let (mu, se) = mean_and_se(&runs.iter().map(|r| r[idx][i]).collect::<Vec<_>>());
                mean_p.push(mu);
                se_p.push(se);
            }
            let mut mean_pp = Vec::with_capacity(m * m);
            let mut se_pp = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m {
                    let (mu, se) = mean_and_se(&runs.iter().map(|r| r[idx][i] * r[idx][j]).collect::<Vec<_>>());
                    mean_pp.push(mu);
                    se_pp.push(se);
                }
            }
            EnsembleSlice {
                step,
                mean_p,
                se_p,
                mean_pp,
                se_pp,
            }
        })
        .collect();
    Ok(EnsembleSeries {
        trials: n_trials,
        energies,
        slices,
    })
}

/// `tau_c = (hbar / dE)^2 / t_P`.
pub fn collapse_time(delta_e: f64, cfg: &CollapseConfig) -> Result<f64> {
    if !(delta_e > 0.0 && delta_e.is_finite()) {
        return Err(invalid(format!("energy uncertainty must be positive, got {delta_e}")));
    }
    Ok((cfg.hbar / delta_e).powi(2) / cfg.t_planck)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativisticCollapseTime {
    pub tau_c: f64,
    /// `(1 + v/c)^-2`
    pub factor: f64,
    pub regime: String,
}

/// Collapse time seen from a frame moving at `v` relative to the preferred
/// frame, in the `E ~ pc` regime.
pub fn relativistic_collapse_time(
    delta_e: f64,
    v: f64,
    c: f64,
    cfg: &CollapseConfig,
) -> Result<RelativisticCollapseTime> {
    if !(c > 0.0) {
        return Err(invalid("c must be positive"));
    }
    if !(v.abs() < c) {
        return Err(Error::Superluminal { v, c });
    }
    let factor = (1.0 + v / c).powi(-2);
    Ok(RelativisticCollapseTime {
        tau_c: factor * collapse_time(delta_e, cfg)?,
        factor,
        regime: "high-energy limit, E ~ pc".into(),
    })
}

/// Branch energies of each subsystem: `energies[j][i]` is `E_ji`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyBodyBranchTable {
    energies: Vec<Vec<f64>>,
    amplitudes: Vec<C64>,
}

impl ManyBodyBranchTable {
    pub fn new(energies: Vec<Vec<f64>>, amplitudes: Vec<C64>) -> Result<Self> {
        let m = amplitudes.len();
        if m == 0 || energies.is_empty() {
            return Err(invalid("need at least one subsystem and one branch"));
        }
        if let Some(row) = energies.iter().find(|r| r.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: row.len(),
            });
        }
        if energies.iter().flatten().any(|e| !e.is_finite()) {
            return Err(invalid("energies must be finite"));
        }
        let total: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized {
                total,
                tolerance: NORM_TOLERANCE,
            });
        }
        Ok(Self { energies, amplitudes })
    }

    pub fn from_probabilities(energies: Vec<Vec<f64>>, probabilities: &[f64]) -> Result<Self> {
        Self::new(
            energies,
            probabilities.iter().map(|p| C64::new(p.max(0.0).sqrt(), 0.0)).collect(),
        )
    }

    pub fn subsystems(&self) -> usize {
        self.energies.len()
    }
    pub fn branches(&self) -> usize {
        self.amplitudes.len()
    }
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Energy uncertainty of every subsystem.
    pub fn subsystem_uncertainties(&self) -> Vec<f64> {
        let p = self.probabilities();
        self.energies.iter().map(|row| spread(&p, row)).collect()
    }
}

pub fn manybody_delta_e(t: &ManyBodyBranchTable, reducer: DeltaEReducer) -> f64 {
    let parts = t.subsystem_uncertainties();
    match reducer {
        DeltaEReducer::Rms => parts.iter().map(|d| d * d).sum::<f64>().sqrt(),
        DeltaEReducer::LinearSum => parts.iter().sum(),
    }
}

/// Total uncertainty of `count` identical subsystems each contributing `each`.
pub fn identical_subsystems_delta_e(count: u64, each: f64, reducer: DeltaEReducer) -> f64 {
    match reducer {
        DeltaEReducer::Rms => (count as f64).sqrt() * each,
        DeltaEReducer::LinearSum => count as f64 * each,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleInvarianceReport {
    pub k: f64,
    /// Largest deviation of a group's update from the two-level update.
    pub max_residual: f64,
    /// `|sum of group probabilities - 1|` after the update.
    pub sum_residual: f64,
}

/// Checks that the summed probability of every group follows the two-level
/// update `P_G <- P_G + k (1[s in G] - P_G)` when branch `staying` is drawn.
pub fn scale_invariance_check(
    s: &EnergySuperposition,
    cfg: &CollapseConfig,
    grouping: &[Vec<usize>],
    staying: usize,
) -> Result<ScaleInvarianceReport> {
    cfg.validate()?;
    let m = s.len();
    let mut seen = vec![false; m];
    for i in grouping.iter().flatten() {
        if *i >= m || seen[*i] {
            return Err(invalid(format!("grouping is not a partition of 0..{m}")));
        }
        seen[*i] = true;
    }
    if seen.iter().any(|x| !x) || grouping.iter().any(|g| g.is_empty()) {
        return Err(invalid(format!("grouping is not a partition of 0..{m}")));
    }
    if staying >= m {
        return Err(invalid("staying branch out of range"));
    }
    let p = s.probabilities();
    let k = k_for(&p, s.energies(), cfg)?;
    let mut after = p.clone();
    apply_update(&mut after, s.energies(), k, staying);
    let mut max_residual: f64 = 0.0;
    let mut total = 0.0;
    for g in grouping {
        let before: f64 = g.iter().map(|i| p[*i]).sum();
        let now: f64 = g.iter().map(|i| after[*i]).sum();
        let hit = if g.contains(&staying) { 1.0 } else { 0.0 };
        max_residual = max_residual.max((now - (before + k * (hit - before))).abs());
        total += now;
    }
    Ok(ScaleInvarianceReport {
        k,
        max_residual,
        sum_residual: (total - 1.0).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonParticle {
    Massless,
    /// Rest energy in eV.
    Massive(u64),
}

/// Energy levels in eV of a particle confined to the horizon radius `r_u`
/// (metres): `n^2 h c / 4 R_U` (massless) or `n^2 h^2 / 32 m R_U^2` (massive).
pub fn horizon_energy_levels(r_u: f64, particle: HorizonParticle, n_max: u32) -> Result<Vec<f64>> {
    if !(r_u > 0.0) || n_max == 0 {
        return Err(invalid("need R_U > 0 and n_max >= 1"));
    }
    let hc = H_EV_S * C_M_PER_S;
    let base = match particle {
        HorizonParticle::Massless => hc / (4.0 * r_u),
        HorizonParticle::Massive(mc2) => hc * hc / (32.0 * mc2 as f64 * r_u * r_u),
    };
    Ok((1..=n_max).map(|n| (n as f64).powi(2) * base).collect())
}

/// Electron rest energy rounded to whole eV, for [`HorizonParticle::Massive`].
pub fn electron() -> HorizonParticle {
    HorizonParticle::Massive(ELECTRON_MASS_EV.round() as u64)
}

/// One line of the collapse-time calculator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalculatorRow {
    pub name: String,
    pub delta_e_ev: f64,
    pub tau_c_s: f64,
    pub quoted_target_s: f64,
    /// Allowed ratio between `tau_c_s` and the target, either way.
    pub tolerance_factor: f64,
}

impl CalculatorRow {
    pub fn within_target(&self) -> bool {
        let r = self.tau_c_s / self.quoted_target_s;
        r <= self.tolerance_factor && r >= 1.0 / self.tolerance_factor
    }
}

/// Quoted estimates for concrete systems, evaluated with the physical
/// constants.
pub fn reference_scenarios() -> Vec<CalculatorRow> {
    let cfg = CollapseConfig::physical();
    let neuron_assembly = identical_subsystems_delta_e(10_000_000, 1e4, DeltaEReducer::LinearSum);
    let rows: [(&str, f64, f64, f64); 8] = [
        ("atomic photon emission", 1e-6, 1e25, 10.0),
        ("SQUID supercurrents", 8.6e-6, 1e23, 10.0),
        ("Ta-180 isomer (full gap)", 75e3, 1200.0, 10.0),
        ("dust particle accretion", 1e8, 1e-4, 10.0),
        ("Geiger counter", 1e9, 1e-5, 10.0),
        ("avalanche photodiode", 2.5e11, 1.25e-10, 3.0),
        ("single neuron", 1e4, 1e5, 10.0),
        ("neuron assembly (linear sum)", neuron_assembly, 1e-9, 10.0),
    ];
    rows.iter()
        .map(|(name, de, target, tol)| CalculatorRow {
            name: name.to_string(),
            delta_e_ev: *de,
            tau_c_s: collapse_time(*de, &cfg).expect("positive energies"),
            quoted_target_s: *target,
            tolerance_factor: *tol,
        })
        .collect()
}

/// Convenience: dynamic-mode `k` for a state.
pub fn instantaneous_k(s: &EnergySuperposition, cfg: &CollapseConfig) -> f64 {
    energy_uncertainty(s) * cfg.t_planck / cfg.hbar
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::UnitMode;
    use crate::stats::binomial_sigma;

    fn two_level(p: [f64; 2]) -> EnergySuperposition {
        EnergySuperposition::from_probabilities(&[0.0, 1.0], &p, UnitMode::Natural).unwrap()
    }

    /// Fixed draw: a generator whose first f64 lands in the given branch.
    fn rng_drawing(p: &[f64], target: usize) -> SimRng {
        (0..)
            .map(rng_from_seed)
            .find(|r| {
                let mut r = r.clone();
                draw(p, &mut r).unwrap() == target
            })
            .unwrap()
    }

    #[test]
    fn eigenstate_is_a_fixed_point() {
        let s = EnergySuperposition::from_probabilities(&[0.0, 1.0], &[1.0, 0.0], UnitMode::Natural).unwrap();
        let mut rng = rng_from_seed(1);
        let (next, stay) = collapse_step(&s, &CollapseConfig::natural(), &mut rng).unwrap();
        assert_eq!(stay, 0);
        assert_eq!(next.probabilities(), vec![1.0, 0.0]);
        let t = run_trajectory(&s, &CollapseConfig::natural(), 100).unwrap();
        assert_eq!((t.outcome, t.steps), (Some(0), 0));
    }

    #[test]
    fn hand_evaluated_step() {
        let s = two_level([0.5, 0.5]);
        assert!((instantaneous_k(&s, &CollapseConfig::natural()) - 0.5).abs() < 1e-15);
        let mut rng = rng_drawing(&[0.5, 0.5], 1);
        let (next, stay) = collapse_step(&s, &CollapseConfig::natural(), &mut rng).unwrap();
        assert_eq!(stay, 1);
        let p = next.probabilities();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn phases_advance_with_energy() {
        let s = two_level([0.5, 0.5]);
        let cfg = CollapseConfig::frozen(0.0);
        let (next, _) = collapse_step(&s, &cfg, &mut rng_from_seed(0)).unwrap();
        let rel = next.amplitudes()[1] / next.amplitudes()[0];
        assert!((rel.arg() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn super_planckian_rejected() {
        let s = EnergySuperposition::from_probabilities(&[0.0, 4.0], &[0.5, 0.5], UnitMode::Natural).unwrap();
        let err = collapse_step(&s, &CollapseConfig::natural(), &mut rng_from_seed(0)).unwrap_err();
        assert!(matches!(err, Error::SuperPlanckian { .. }));
        assert!(err.is_numeric());
    }

    #[test]
    fn martingale_identity_is_exact() {
        // average the post-step probabilities over the staying draw
        let e = [0.0, 0.3, 0.7, 1.0];
        let p = [0.1, 0.2, 0.3, 0.4];
        let k = 0.37;
        let mut mean = [0.0; 4];
        for s in 0..4 {
            let mut q = p;
            apply_update(&mut q, &e, k, s);
            for i in 0..4 {
                mean[i] += p[s] * q[i];
            }
        }
        for i in 0..4 {
            assert!((mean[i] - p[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn off_diagonal_decay_is_exact_in_expectation() {
        // E[P_i' P_j'] = (1 - k^2) P_i P_j for i != j and any number of branches
        let e = [0.0, 0.3, 0.7];
        let p = [0.2, 0.3, 0.5];
        let k = 0.2;
        let mut mean = 0.0;
        for s in 0..3 {
            let mut q = p;
            apply_update(&mut q, &e, k, s);
            mean += p[s] * q[0] * q[2];
        }
        assert!((mean - (1.0 - k * k) * p[0] * p[2]).abs() < 1e-15);
    }

    #[test]
    fn degenerate_branches_merge() {
        let s = EnergySuperposition::from_probabilities(&[0.0, 1.0, 0.0], &[0.2, 0.5, 0.3], UnitMode::Natural).unwrap();
        let t = run_trajectory(&s, &CollapseConfig::natural().with_seed(3), 100_000).unwrap();
        assert_eq!(t.energies.len(), 2);
        assert_eq!(t.merged[0], t.merged[2]);
        let mut rng = rng_from_seed(0);
        let (next, _) = collapse_step(&s, &CollapseConfig::natural(), &mut rng).unwrap();
        assert!((next.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // degenerate branches keep their ratio
        let q = next.probabilities();
        assert!((q[0] / q[2] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn born_rule_small_ensemble() {
        let s = two_level([0.3, 0.7]);
        let cfg = CollapseConfig::frozen(0.1).with_seed(42);
        let out = outcome_statistics(&s, &cfg, 4000, 1_000_000).unwrap();
        assert_eq!(out.undecided, 0);
        let f = out.counts[0] as f64 / 4000.0;
        assert!((f - 0.3).abs() < 3.0 * binomial_sigma(0.3, 4000), "{f}");
    }

    #[test]
    fn ensemble_series_tracks_decay() {
        let s = two_level([0.5, 0.5]);
        let k = 0.1;
        let series = ensemble_statistics(&s, &CollapseConfig::frozen(k).with_seed(7), 4000, 50, 10).unwrap();
        assert_eq!(series.slices.len(), 6);
        for sl in &series.slices {
            assert!((sl.mean_p[0] - 0.5).abs() <= 3.0 * sl.se_p[0] + 1e-15);
            let (pp, se) = sl.pair(0, 1);
            let expected = (1.0 - k * k).powi(sl.step as i32) * 0.25;
            assert!(
                (pp - expected).abs() <= 3.0 * se + 1e-15,
                "step {} {pp} {expected}",
                sl.step
            );
        }
    }

    #[test]
    fn single_trial_series_is_that_trajectory() {
        let s = two_level([0.4, 0.6]);
        let cfg = CollapseConfig::frozen(0.05).with_seed(11);
        let series = ensemble_statistics(&s, &cfg, 1, 20, 1).unwrap();
        let mut rng = trial_rng(11, 0);
        let t = run_trajectory_with(
            &s,
            &CollapseConfig {
                epsilon: 1e-300_f64.max(f64::MIN_POSITIVE),
                ..cfg
            },
            20,
            &mut rng,
        )
        .unwrap();
        for (sl, p) in series.slices.iter().zip(&t.probabilities) {
            assert_eq!(&sl.mean_p, p);
            assert!(sl.se_p.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn deterministic_regardless_of_threads() {
        let s = two_level([0.3, 0.7]);
        let cfg = CollapseConfig::frozen(0.05).with_seed(5);
        let a = ensemble_statistics(&s, &cfg, 200, 30, 10).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| ensemble_statistics(&s, &cfg, 200, 30, 10).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn collapse_time_examples() {
        let cfg = CollapseConfig::physical();
        let tau = |e| collapse_time(e, &cfg).unwrap();
        assert!((tau(1e-6) / 8.04e24 - 1.0).abs() < 0.01);
        assert!((tau(8.6e-6) / 1.087e23 - 1.0).abs() < 0.01);
        assert!((tau(2.5e11) / 1.286e-10 - 1.0).abs() < 0.01);
        assert!(collapse_time(0.0, &cfg).is_err());
        for row in reference_scenarios() {
            assert!(row.within_target(), "{row:?}");
        }
    }

    #[test]
    fn relativistic_factor() {
        let cfg = CollapseConfig::physical();
        let c = C_M_PER_S;
        assert_eq!(relativistic_collapse_time(1.0, 0.0, c, &cfg).unwrap().factor, 1.0);
        let third = relativistic_collapse_time(1.0, 1.0 / 3.0, 1.0, &cfg).unwrap();
        assert!((third.factor - 9.0 / 16.0).abs() < 1e-15);
        let moving = relativistic_collapse_time(1.0, 6.0e4, c, &cfg).unwrap();
        let frac = 1.0 - moving.factor;
        assert!((frac / 4e-4 - 1.0).abs() < 0.05, "{frac}");
        assert!(matches!(
            relativistic_collapse_time(1.0, c, c, &cfg),
            Err(Error::Superluminal { .. })
        ));
    }

    #[test]
    fn manybody_examples() {
        let single = ManyBodyBranchTable::from_probabilities(vec![vec![0.0, 2.0]], &[0.5, 0.5]).unwrap();
        let es = EnergySuperposition::from_probabilities(&[0.0, 2.0], &[0.5, 0.5], UnitMode::Natural).unwrap();
        for r in [DeltaEReducer::Rms, DeltaEReducer::LinearSum] {
            assert!((manybody_delta_e(&single, r) - energy_uncertainty(&es)).abs() < 1e-15);
        }
        let two = ManyBodyBranchTable::from_probabilities(vec![vec![0.0, 1.0], vec![0.0, 1.0]], &[0.5, 0.5]).unwrap();
        assert!((manybody_delta_e(&two, DeltaEReducer::Rms) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((manybody_delta_e(&two, DeltaEReducer::LinearSum) - 1.0).abs() < 1e-15);
        let product =
            ManyBodyBranchTable::from_probabilities(vec![vec![3.0, 3.0], vec![-1.0, -1.0]], &[0.5, 0.5]).unwrap();
        assert_eq!(manybody_delta_e(&product, DeltaEReducer::Rms), 0.0);
    }

    #[test]
    fn scale_invariance_examples() {
        let s =
            EnergySuperposition::from_probabilities(&[0.0, 0.1, 0.2, 0.3], &[0.1, 0.2, 0.3, 0.4], UnitMode::Natural)
                .unwrap();
        let cfg = CollapseConfig::natural();
        let singletons: Vec<Vec<usize>> = (0..4).map(|i| vec![i]).collect();
        let r = scale_invariance_check(&s, &cfg, &singletons, 2).unwrap();
        assert!(r.max_residual < 1e-15);
        let r = scale_invariance_check(&s, &cfg, &[vec![0, 1], vec![2, 3]], 1).unwrap();
        assert!(r.max_residual < 1e-15 && r.sum_residual < 1e-15);
        assert!(scale_invariance_check(&s, &cfg, &[vec![0, 1], vec![1, 2, 3]], 1).is_err());
        assert!(scale_invariance_check(&s, &cfg, &[vec![0, 1]], 1).is_err());
    }

    #[test]
    fn horizon_levels() {
        let photon = horizon_energy_levels(1e25, HorizonParticle::Massless, 2).unwrap();
        assert!((photon[0] / 3.1e-32 - 1.0).abs() < 0.01);
        assert!((photon[1] / photon[0] - 4.0).abs() < 1e-12);
        let e = horizon_energy_levels(1e25, electron(), 1).unwrap();
        assert!((e[0] / 9.4e-70 - 1.0).abs() < 0.01, "{}", e[0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state(w: &[f64]) -> EnergySuperposition {
            let total: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|x| x / total).collect();
            let e: Vec<f64> = (0..w.len()).map(|i| 0.1 * i as f64).collect();
            EnergySuperposition::from_probabilities(&e, &p, UnitMode::Natural).unwrap()
        }

        proptest! {
            #[test]
            fn step_keeps_probabilities_bounded(
                w in proptest::collection::vec(0.01f64..1.0, 1..8),
                k in 0.0f64..=1.0,
                seed in any::<u64>(),
            ) {
                let mut s = state(&w);
                let cfg = CollapseConfig::frozen(k);
                let mut rng = rng_from_seed(seed);
                for _ in 0..20 {
                    s = collapse_step(&s, &cfg, &mut rng).unwrap().0;
                    let p = s.probabilities();
                    prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                }
            }

            #[test]
            fn every_partition_is_scale_invariant(
                w in proptest::collection::vec(0.01f64..1.0, 8),
                labels in proptest::collection::vec(0usize..4, 8),
                staying in 0usize..8,
            ) {
                let s = state(&w);
                let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 4];
                for (i, g) in labels.iter().enumerate() {
                    groups[*g].push(i);
                }
                groups.retain(|g| !g.is_empty());
                let r = scale_invariance_check(&s, &CollapseConfig::natural(), &groups, staying).unwrap();
                prop_assert!(r.max_residual < 1e-14);
                prop_assert!(r.sum_residual < 1e-14);
            }

            #[test]
            fn relativistic_ratio_is_exact(v in -0.99f64..0.99, de in 1e-3f64..1e3) {
                let cfg = CollapseConfig::natural();
                let r = relativistic_collapse_time(de, v, 1.0, &cfg).unwrap();
                let ratio = r.tau_c / collapse_time(de, &cfg).unwrap();
                prop_assert!((ratio / (1.0 + v).powi(-2) - 1.0).abs() < 1e-14);
            }
        }
    }
}
