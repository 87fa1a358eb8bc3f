//! Discrete beable dynamics in the style of Bell and Vink.
//!
//! A definite configuration (a site index) jumps stochastically with rates
//! built from the quantum probability current, so that an ensemble of
//! configurations tracks `|<x_n|psi(t)>|^2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hilbert::{born_probabilities, ComplexVectorState, HermitianOperator};
use crate::rdm::{DiscreteSampler, StayTrajectory};
use crate::seed::{rng_from_seed, trial_rng};
use crate::stats::{chi_square_gof, ChiSquareTest};
use crate::C64;

/// Occupations below this are treated as empty when dividing by them.
pub const OCCUPATION_FLOOR: f64 = 1e-12;
/// Upper bound on the total jump probability per step.
pub const STEP_GUARD: f64 = 0.1;

/// `J_nm = 2 Im(psi_n^* H_nm psi_m)`; `hbar dP_n/dt = sum_m J_nm`.
pub fn probability_current(h: &HermitianOperator, psi: &ComplexVectorState) -> Result<DMatrix<f64>> {
    let d = h.dim();
    if psi.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: psi.dim(),
        });
    }
    let a = psi.amplitudes();
    Ok(DMatrix::from_fn(d, d, |n, m| {
        2.0 * (a[n].conj() * h.entry(n, m) * a[m]).im
    }))
}

/// Jump rates; `rates[(m, n)] * dt` is the probability of jumping `n -> m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRateMatrix {
    rates: DMatrix<f64>,
}

impl TransitionRateMatrix {
    pub fn new(rates: DMatrix<f64>) -> Result<Self> {
        if !rates.is_square() {
            return Err(invalid("rate matrix must be square"));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("rates must be finite and non-negative"));
        }
        let mut rates = rates;
        rates.fill_diagonal(0.0);
        Ok(Self { rates })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            rates: DMatrix::zeros(dim, dim),
        }
    }
    pub fn dim(&self) -> usize {
        self.rates.nrows()
    }
    /// Rate of the jump `from -> to`.
    pub fn rate(&self, to: usize, from: usize) -> f64 {
        self.rates[(to, from)]
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rates
    }
    /// Total rate of leaving `from`.
    pub fn outflow(&self, from: usize) -> f64 {
        self.rates.column(from).sum()
    }
    pub fn max_outflow(&self) -> f64 {
        (0..self.dim()).map(|n| self.outflow(n)).fold(0.0, f64::max)
    }
}

fn check_probabilities(p: &[f64], dim: usize) -> Result<()> {
    if p.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(invalid("occupations must be finite and non-negative"));
    }
    Ok(())
}

/// Bell's minimal solution: `T_nm = J_nm / (hbar P_m)` where `J_nm > 0`.
pub fn bell_transition_rates(j: &DMatrix<f64>, p: &[f64], hbar: f64) -> Result<TransitionRateMatrix> {
    let d = j.nrows();
    check_probabilities(p, d)?;
    let mut t = DMatrix::zeros(d, d);
    for m in 0..d {
        for n in 0..d {
            if n == m || j[(n, m)] <= 0.0 {
                continue;
            }
            if p[m] < OCCUPATION_FLOOR {
                return Err(Error::DegenerateOccupation {
                    site: m,
                    probability: p[m],
                });
            }
            t[(n, m)] = j[(n, m)] / (hbar * p[m]);
        }
    }
    Ok(TransitionRateMatrix { rates: t })
}

/// Adds the homogeneous solution `T0_nm = c / P_m` to every off-diagonal rate.
pub fn add_homogeneous_noise(t: &TransitionRateMatrix, p: &[f64], c: f64) -> Result<TransitionRateMatrix> {
    let d = t.dim();
    check_probabilities(p, d)?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(invalid("noise rate must be non-negative"));
    }
    if c == 0.0 {
        return Ok(t.clone());
    }
    if let Some((m, pm)) = p.iter().enumerate().find(|(_, x)| **x < OCCUPATION_FLOOR) {
        return Err(Error::DegenerateOccupation {
            site: m,
            probability: *pm,
        });
    }
    let mut rates = t.rates.clone();
    for m in 0..d {
        for n in 0..d {
            if n != m {
                rates[(n, m)] += c / p[m];
            }
        }
    }
    Ok(TransitionRateMatrix { rates })
}

/// `max |J_nm / hbar - (T_nm P_m - T_mn P_n)|`.
pub fn detailed_relation_residual(j: &DMatrix<f64>, t: &TransitionRateMatrix, p: &[f64], hbar: f64) -> f64 {
    let d = j.nrows();
    let mut worst: f64 = 0.0;
    for n in 0..d {
        for m in 0..d {
            if n != m {
                let r = j[(n, m)] / hbar - (t.rate(n, m) * p[m] - t.rate(m, n) * p[n]);
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

/// One explicit Euler step of `dP_n/dt = sum_m (T_nm P_m - T_mn P_n)`,
/// applied as pairwise transfers so the total is conserved by construction.
pub fn master_equation_step(p: &[f64], t: &TransitionRateMatrix, dt: f64) -> Result<Vec<f64>> {
    let d = t.dim();
    check_probabilities(p, d)?;
    let worst = dt * t.max_outflow();
    if !(worst < STEP_GUARD) {
        return Err(Error::StepGuard {
            step: 0,
            detail: format!("dt * max outflow = {worst} must stay below {STEP_GUARD}"),
        });
    }
    let mut out = p.to_vec();
    for m in 0..d {
        for n in 0..d {
            if n != m {
                let flow = dt * t.rate(n, m) * p[m];
                out[n] += flow;
                out[m] -= flow;
            }
        }
    }
    Ok(out)
}

/// Exact propagator `exp(-i H dt / hbar)` from the eigendecomposition.
pub fn propagator(h: &HermitianOperator, dt: f64, hbar: f64) -> DMatrix<C64> {
    let spec = h.spectrum();
    let v = &spec.eigenvectors;
    let phases = DVector::from_iterator(
        spec.eigenvalues.len(),
        spec.eigenvalues.iter().map(|e| C64::from_polar(1.0, -e * dt / hbar)),
    );
    v * DMatrix::from_diagonal(&phases) * v.adjoint()
}

fn apply(u: &DMatrix<C64>, psi: &[C64]) -> Vec<C64> {
    (u * DVector::from_column_slice(psi)).iter().cloned().collect()
}

/// Rates for every step of a run, evaluated at the midpoint state of each
/// step, together with `|psi|^2` at the step boundaries. Shared by all
/// trajectories of an ensemble.
#[derive(Debug, Clone)]
pub struct RateSchedule {
    pub dt: f64,
    pub rates: Vec<TransitionRateMatrix>,
    /// `probabilities[s]` is `|psi(s dt)|^2`, for `s = 0..=steps`.
    pub probabilities: Vec<Vec<f64>>,
}

impl RateSchedule {
    pub fn new(
        h: &HermitianOperator,
        psi0: &ComplexVectorState,
        dt: f64,
        steps: usize,
        hbar: f64,
        noise: f64,
    ) -> Result<Self> {
        if psi0.dim() != h.dim() {
            return Err(Error::DimensionMismatch {
                expected: h.dim(),
                got: psi0.dim(),
            });
        }
        if !(dt > 0.0 && dt.is_finite() && hbar > 0.0) {
            return Err(invalid("dt and hbar must be positive"));
        }
        let full = propagator(h, dt, hbar);
        let half = propagator(h, dt / 2.0, hbar);
        let mut psi = psi0.amplitudes().to_vec();
        let mut rates = Vec::with_capacity(steps);
        let mut probabilities = Vec::with_capacity(steps + 1);
        probabilities.push(born_probabilities(psi0)?);
        for step in 0..steps {
            let mid = ComplexVectorState::normalized(apply(&half, &psi))?;
            let p_mid = born_probabilities(&mid)?;
            let j = probability_current(h, &mid)?;
            let t = bell_transition_rates(&j, &p_mid, hbar)
                .and_then(|t| add_homogeneous_noise(&t, &p_mid, noise))
                .map_err(|e| match e {
                    Error::DegenerateOccupation { site, probability } => Error::NumericFailure {
                        step,
                        reason: format!("occupation {probability:e} at site {site} below floor"),
                    },
                    other => other,
                })?;
            let worst = dt * t.max_outflow();
            if !(worst < STEP_GUARD) {
                return Err(Error::StepGuard {
                    step,
                    detail: format!("dt * max outflow = {worst} must stay below {STEP_GUARD}"),
                });
            }
            rates.push(t);
            psi = apply(&full, &psi);
            let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            psi.iter_mut().for_each(|c| *c /= norm);
            probabilities.push(psi.iter().map(|c| c.norm_sqr()).collect());
        }
        Ok(Self {
            dt,
            rates,
            probabilities,
        })
    }

    pub fn steps(&self) -> usize {
        self.rates.len()
    }

    /// Walks one trajectory from `start`; returns the site after every step
    /// (length `steps + 1`, including the start).
    pub fn walk<R: Rng + ?Sized>(&self, start: usize, rng: &mut R) -> Vec<u32> {
        let mut site = start;
        let mut path = Vec::with_capacity(self.steps() + 1);
        path.push(site as u32);
        for t in &self.rates {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for m in 0..t.dim() {
                if m == site {
                    continue;
                }
                acc += t.rate(m, site) * self.dt;
                if u < acc {
                    site = m;
                    break;
                }
            }
            path.push(site as u32);
        }
        path
    }
}

/// Co-evolves `psi` exactly and a beable starting at `beable0` with per-step
/// jump probabilities `T_mn dt`.
pub fn jump_trajectory(
    h: &HermitianOperator,
    psi0: &ComplexVectorState,
    beable0: usize,
    dt: f64,
    steps: usize,
    hbar: f64,
    seed: u64,
) -> Result<StayTrajectory> {
    if beable0 >= h.dim() {
        return Err(invalid(format!("start site {beable0} out of range")));
    }
    let schedule = RateSchedule::new(h, psi0, dt, steps, hbar, 0.0)?;
    let mut rng = rng_from_seed(seed);
    StayTrajectory::new(schedule.walk(beable0, &mut rng), h.dim(), dt, seed)
}

/// χ² comparison of the ensemble at one time slice with `|psi(t)|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub step: usize,
    pub time: f64,
    pub counts: Vec<u64>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub trajectories: usize,
    pub noise: f64,
    pub slices: Vec<SliceReport>,
    /// First-jump time of every trajectory (`steps * dt` if it never jumped).
    #[serde(skip)]
    pub first_jump_times: Vec<f64>,
}

impl EquivarianceReport {
    pub fn min_p_value(&self) -> f64 {
        self.slices.iter().map(|s| s.p_value).fold(1.0, f64::min)
    }
}

/// Runs `trajectories` walks whose start sites are drawn from `|psi0|^2` and
/// tests the site histogram at `slices` evenly spaced steps (the last one at
/// the end of the run) against `|psi(t)|^2`.
#[allow(clippy::too_many_arguments)]
pub fn equivariance_ensemble(
    h: &HermitianOperator,
    psi0: &ComplexVectorState,
    dt: f64,
    steps: usize,
    hbar: f64,
    noise: f64,
    trajectories: usize,
    slices: usize,
    master_seed: u64,
) -> Result<EquivarianceReport> {
    if slices == 0 || slices > steps || trajectories == 0 {
        return Err(invalid("need 1 <= slices <= steps and at least one trajectory"));
    }
    let schedule = RateSchedule::new(h, psi0, dt, steps, hbar, noise)?;
    let start = DiscreteSampler::new(&schedule.probabilities[0], 1e-10)?;
    let slice_steps: Vec<usize> = (1..=slices).map(|i| i * steps / slices).collect();
    let runs: Vec<(Vec<u32>, f64)> = (0..trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(master_seed, i as u64);
            let s0 = start.sample(&mut rng);
            let path = schedule.walk(s0, &mut rng);
            let first = path
                .iter()
                .position(|s| *s as usize != s0)
                .map_or(steps as f64 * dt, |k| k as f64 * dt);
            (slice_steps.iter().map(|&k| path[k]).collect(), first)
        })
        .collect();
    let d = h.dim();
    let mut reports = Vec::with_capacity(slices);
    for (idx, &step) in slice_steps.iter().enumerate() {
        let mut counts = vec![0u64; d];
        for (sites, _) in &runs {
            counts[sites[idx] as usize] += 1;
        }
        let expected = schedule.probabilities[step].clone();
        let ChiSquareTest { statistic, p_value, .. } = chi_square_gof(&counts, &expected)?;
        reports.push(SliceReport {
            step,
            time: step as f64 * dt,
            counts,
            expected,
            statistic,
            p_value,
        });
    }
    Ok(EquivarianceReport {
        trajectories,
        noise,
        slices: reports,
        first_jump_times: runs.into_iter().map(|(_, t)| t).collect(),
    })
}

/// `max_n |sum_m J_nm(t)/hbar - (P_n(t+dt) - P_n(t-dt)) / 2dt|` along the exact
/// evolution of `psi`.
pub fn current_balance_residual(h: &HermitianOperator, psi: &ComplexVectorState, dt: f64, hbar: f64) -> Result<f64> {
    let j = probability_current(h, psi)?;
    let fwd = apply(&propagator(h, dt, hbar), psi.amplitudes());
    let back = apply(&propagator(h, -dt, hbar), psi.amplitudes());
    Ok((0..h.dim())
        .map(|n| {
            let rate = j.row(n).sum() / hbar;
            let fd = (fwd[n].norm_sqr() - back[n].norm_sqr()) / (2.0 * dt);
            (rate - fd).abs()
        })
        .fold(0.0, f64::max))
}

/// Two-site Rabi system `H = -omega sigma_x` starting from
/// `(sqrt(0.8), sqrt(0.2))`; populations oscillate inside `[0.2, 0.8]`.
pub fn rabi_system(omega: f64) -> (HermitianOperator, ComplexVectorState) {
    let h = HermitianOperator::from_real_rows(&[&[0.0, -omega], &[-omega, 0.0]]).expect("symmetric");
    let psi = ComplexVectorState::from_real(&[0.8f64.sqrt(), 0.2f64.sqrt()]).expect("normalized");
    (h, psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_two_sample;

    fn two_site() -> (HermitianOperator, ComplexVectorState) {
        let h = HermitianOperator::from_real_rows(&[&[0.0, -1.0], &[-1.0, 0.0]]).unwrap();
        let s = 0.5f64.sqrt();
        let psi = ComplexVectorState::new(vec![C64::new(s, 0.0), C64::new(0.0, s)]).unwrap();
        (h, psi)
    }

    #[test]
    fn current_examples() {
        let (h, psi) = two_site();
        let j = probability_current(&h, &psi).unwrap();
        assert!((j[(0, 1)] + 1.0).abs() < 1e-15);
        assert!((j[(1, 0)] - 1.0).abs() < 1e-15);

        let real = ComplexVectorState::from_real(&[0.6, 0.8]).unwrap();
        assert!(probability_current(&h, &real).unwrap().iter().all(|x| *x == 0.0));

        let spec = h.spectrum();
        let ground = ComplexVectorState::new(spec.eigenvectors.column(0).iter().cloned().collect()).unwrap();
        assert!(probability_current(&h, &ground)
            .unwrap()
            .iter()
            .all(|x| x.abs() < 1e-15));
        assert!(probability_current(&h, &ComplexVectorState::basis(3, 0).unwrap()).is_err());
    }

    #[test]
    fn bell_rates_examples() {
        let (h, psi) = two_site();
        let j = probability_current(&h, &psi).unwrap();
        let t = bell_transition_rates(&j, &[0.5, 0.5], 1.0).unwrap();
        assert!((t.rate(1, 0) - 2.0).abs() < 1e-15);
        assert_eq!(t.rate(0, 1), 0.0);
        assert!(detailed_relation_residual(&j, &t, &[0.5, 0.5], 1.0) < 1e-15);

        let zero = bell_transition_rates(&DMatrix::zeros(3, 3), &[0.2, 0.3, 0.5], 1.0).unwrap();
        assert_eq!(zero, TransitionRateMatrix::zeros(3));

        let err = bell_transition_rates(&j, &[0.0, 1.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateOccupation { site: 0, .. }));
    }

    #[test]
    fn noise_examples() {
        let (h, psi) = two_site();
        let j = probability_current(&h, &psi).unwrap();
        let t = bell_transition_rates(&j, &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(add_homogeneous_noise(&t, &[0.5, 0.5], 0.0).unwrap(), t);
        let noisy = add_homogeneous_noise(&t, &[0.5, 0.5], 1.0).unwrap();
        assert!((noisy.rate(1, 0) - 4.0).abs() < 1e-15);
        assert!((noisy.rate(0, 1) - 2.0).abs() < 1e-15);
        assert!(detailed_relation_residual(&j, &noisy, &[0.5, 0.5], 1.0) < 1e-15);
        assert!(add_homogeneous_noise(&t, &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn master_step_examples() {
        let p = [0.5, 0.5];
        assert_eq!(
            master_equation_step(&p, &TransitionRateMatrix::zeros(2), 0.01).unwrap(),
            p.to_vec()
        );
        let mut m = DMatrix::zeros(2, 2);
        m[(1, 0)] = 2.0;
        let t = TransitionRateMatrix::new(m).unwrap();
        let out = master_equation_step(&p, &t, 0.01).unwrap();
        assert!((out[0] - 0.49).abs() < 1e-15 && (out[1] - 0.51).abs() < 1e-15);
        assert!(matches!(
            master_equation_step(&p, &t, 0.1),
            Err(Error::StepGuard { .. })
        ));
    }

    #[test]
    fn noise_leaves_master_evolution_unchanged() {
        // rates are rebuilt from the evolving occupations, so the homogeneous
        // part carries no net flow
        let (h, psi0) = rabi_system(1.0);
        let dt = 0.001;
        let u = propagator(&h, dt, 1.0);
        let run = |c: f64| {
            let mut psi = psi0.amplitudes().to_vec();
            let mut p = born_probabilities(&psi0).unwrap();
            for _ in 0..2000 {
                let state = ComplexVectorState::normalized(psi.clone()).unwrap();
                let j = probability_current(&h, &state).unwrap();
                let t = add_homogeneous_noise(&bell_transition_rates(&j, &p, 1.0).unwrap(), &p, c).unwrap();
                p = master_equation_step(&p, &t, dt).unwrap();
                psi = apply(&u, &psi);
            }
            p
        };
        let clean = run(0.0);
        for c in [0.1, 1.0, 10.0] {
            let noisy = run(c);
            for (a, b) in clean.iter().zip(&noisy) {
                assert!((a - b).abs() < 1e-9, "c = {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn eigenstate_never_jumps() {
        let h = HermitianOperator::from_real_rows(&[&[1.0, 0.5, 0.0], &[0.5, 0.0, 0.2], &[0.0, 0.2, -1.0]]).unwrap();
        let spec = h.spectrum();
        let psi = ComplexVectorState::normalized(spec.eigenvectors.column(1).iter().cloned().collect()).unwrap();
        let t = jump_trajectory(&h, &psi, 1, 0.01, 1000, 1.0, 5).unwrap();
        assert!(t.stays().iter().all(|s| *s == 1));
    }

    #[test]
    fn trajectory_is_reproducible_and_guarded() {
        let (h, psi) = rabi_system(1.0);
        let a = jump_trajectory(&h, &psi, 0, 0.001, 3000, 1.0, 17).unwrap();
        assert_eq!(a, jump_trajectory(&h, &psi, 0, 0.001, 3000, 1.0, 17).unwrap());
        assert_eq!(a.instants(), 3001);
        assert!(matches!(
            jump_trajectory(&h, &psi, 0, 0.5, 100, 1.0, 1),
            Err(Error::StepGuard { .. })
        ));
    }

    #[test]
    fn current_balance_is_second_order() {
        let (h, psi) = two_site();
        let r1 = current_balance_residual(&h, &psi, 0.01, 1.0).unwrap();
        let r2 = current_balance_residual(&h, &psi, 0.005, 1.0).unwrap();
        assert!(r1 < 1e-3);
        assert!((r1 / r2 - 4.0).abs() < 0.1, "{}", r1 / r2);
    }

    #[test]
    fn small_ensemble_is_equivariant() {
        let (h, psi) = rabi_system(1.0);
        let report = equivariance_ensemble(&h, &psi, 0.001, 2000, 1.0, 0.0, 4000, 5, 3).unwrap();
        assert!(report.min_p_value() > 1e-3, "{:?}", report.slices);
        let noisy = equivariance_ensemble(&h, &psi, 0.001, 2000, 1.0, 1.0, 4000, 5, 3).unwrap();
        assert!(noisy.min_p_value() > 1e-3);
    }

    #[test]
    fn halving_dt_keeps_first_jump_distribution() {
        let (h, psi) = rabi_system(1.0);
        let a = equivariance_ensemble(&h, &psi, 0.002, 1000, 1.0, 0.0, 4000, 1, 8).unwrap();
        let b = equivariance_ensemble(&h, &psi, 0.001, 2000, 1.0, 0.0, 4000, 1, 9).unwrap();
        assert!(ks_two_sample(&a.first_jump_times, &b.first_jump_times).unwrap().p_value > 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_system(d: usize, vals: &[f64]) -> (HermitianOperator, ComplexVectorState) {
            let mut m = DMatrix::zeros(d, d);
            let mut k = 0;
            for i in 0..d {
                for j in i..d {
                    let z = if i == j {
                        C64::new(vals[k], 0.0)
                    } else {
                        C64::new(vals[k], vals[k + 1])
                    };
                    k += 2;
                    m[(i, j)] = z;
                    m[(j, i)] = z.conj();
                }
            }
            let amps = (0..d)
                .map(|i| C64::new(vals[k + 2 * i] + 0.1, vals[k + 2 * i + 1]))
                .collect();
            (
                HermitianOperator::new(m).unwrap(),
                ComplexVectorState::normalized(amps).unwrap(),
            )
        }

        proptest! {
            #[test]
            fn current_is_antisymmetric_and_rates_satisfy_the_relation(
                d in 2usize..5,
                vals in proptest::collection::vec(-1.0f64..1.0, 40),
                c in 0.0f64..5.0,
            ) {
                let (h, psi) = random_system(d, &vals);
                let j = probability_current(&h, &psi).unwrap();
                prop_assert!((&j + j.transpose()).amax() < 1e-12);
                let p = born_probabilities(&psi).unwrap();
                prop_assume!(p.iter().all(|x| *x > 1e-6));
                let t = bell_transition_rates(&j, &p, 1.0).unwrap();
                prop_assert!(detailed_relation_residual(&j, &t, &p, 1.0) < 1e-10);
                for n in 0..d {
                    for m in 0..d {
                        prop_assert!(t.rate(n, m) == 0.0 || t.rate(m, n) == 0.0);
                    }
                }
                let noisy = add_homogeneous_noise(&t, &p, c).unwrap();
                prop_assert!(detailed_relation_residual(&j, &noisy, &p, 1.0) < 1e-10 * (1.0 + c));
            }

            #[test]
            fn master_step_conserves_probability(
                p in proptest::collection::vec(0.01f64..1.0, 2..6),
                r in proptest::collection::vec(0.0f64..3.0, 36),
            ) {
                let total: f64 = p.iter().sum();
                let p: Vec<f64> = p.iter().map(|x| x / total).collect();
                let d = p.len();
                let t = TransitionRateMatrix::new(DMatrix::from_fn(d, d, |i, j| r[i * 6 + j])).unwrap();
                let dt = 0.09 / t.max_outflow().max(1e-9);
                let out = master_equation_step(&p, &t, dt).unwrap();
                prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
                prop_assert!(out.iter().all(|x| *x >= 0.0));
            }
        }
    }
}
