//! Built-in invariant suites, run by `rdmsim verify`.
//!
//! Every suite draws its random instances from its own derived seed, so the
//! report is identical across runs and thread counts.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::beable::{bell_transition_rates, detailed_relation_residual, master_equation_step, probability_current};
use crate::collapse::{expected_update, scale_invariance_check, CollapseConfig};
use crate::error::Result;
use crate::frames::{edwards_winnie_transform, interval, lorentz_transform, one_way_speeds, Event, SynchronyParams};
use crate::hilbert::{
    born_probabilities, hardy_unitary_check, pbr_orthogonality_table, ComplexVectorState, EnergySuperposition,
    HermitianOperator, UnitMode,
};
use crate::protective::{zeno_protective_run, CouplingProfile, PointerState, ProtectiveSetup};
use crate::rdm::{sample_stays, site_counts};
use crate::schrodinger::{evolve_grid, reconstruct_wavefunction, DensityPair, GridWavefunction};
use crate::seed::{derive_seed, rng_from_seed, SimRng};
use crate::stats::chi_square_gof;
use crate::C64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub checks: u64,
    pub failures: u64,
    /// Largest residual seen, to compare with `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Random instances per suite; frame suites use 50 times as many.
    pub cases: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            cases: 200,
        }
    }
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    checks: u64,
    failures: u64,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            checks: 0,
            failures: 0,
            worst: 0.0,
        }
    }

    /// Records a residual; NaN counts as a failure.
    fn residual(&mut self, r: f64) {
        self.checks += 1;
        if !(r <= self.tolerance) {
            self.failures += 1;
        }
        if r.is_nan() || r > self.worst {
            self.worst = r;
        }
    }

    fn holds(&mut self, ok: bool) {
        self.residual(if ok { 0.0 } else { f64::INFINITY });
    }

    fn record(&mut self, r: Result<f64>) {
        match r {
            Ok(v) => self.residual(v),
            Err(_) => self.residual(f64::INFINITY),
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name.to_string(),
            checks: self.checks,
            failures: self.failures,
            worst: self.worst,
            tolerance: self.tolerance,
        }
    }
}

fn random_state(rng: &mut SimRng, d: usize) -> ComplexVectorState {
    let amps = (0..d)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ComplexVectorState::normalized(amps).expect("non-zero random vector")
}

fn random_hermitian(rng: &mut SimRng, d: usize) -> HermitianOperator {
    let m = DMatrix::from_fn(d, d, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    HermitianOperator::new((&m + m.adjoint()) * C64::new(0.5, 0.0)).expect("symmetrized")
}

fn random_probabilities(rng: &mut SimRng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn hilbert_normalization(rng: &mut SimRng, cases: usize) -> SuiteResult {
    let mut t = Tally::new("hilbert.normalization", 1e-10);
    for _ in 0..cases {
        let d = rng.random_range(1..=8);
        let s = random_state(rng, d);
        t.residual((s.norm_sqr() - 1.0).abs());
        t.record(born_probabilities(&s).map(|p| (p.iter().sum::<f64>() - 1.0).abs()));
    }
    t.finish()
}

fn hilbert_expectation(rng: &mut SimRng, cases: usize) -> SuiteResult {
    let mut t = Tally::new("hilbert.real-expectation", 1e-12);
    for _ in 0..cases {
        let d = rng.random_range(1..=8);
        let (s, a) = (random_state(rng, d), random_hermitian(rng, d));
        let v: C64 = a
            .apply(&s)
            .expect("same dim")
            .iter()
            .zip(s.amplitudes())
            .map(|(x, c)| c.conj() * x)
            .sum();
        t.residual(v.im.abs());
    }
    t.finish()
}

fn hilbert_no_go() -> SuiteResult {
    let mut t = Tally::new("hilbert.no-go", 1e-12);
    let pbr = pbr_orthogonality_table();
    t.residual(pbr.orthonormality_error);
    t.holds(pbr.zero_entries(1e-12) == vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    for row in pbr.table {
        t.residual((row.iter().sum::<f64>() - 1.0).abs());
    }
    let hardy = hardy_unitary_check();
    t.holds(hardy.passed());
    t.residual(hardy.max_residual);
    t.finish()
}

fn random_packet(rng: &mut SimRng) -> GridWavefunction {
    let sigma = rng.random_range(1.0..2.5);
    let center = rng.random_range(-3.0..3.0);
    let p0 = rng.random_range(-1.5..1.5);
    GridWavefunction::gaussian(-20.0, 40.0 / 256.0, 256, center, sigma, p0, 1.0, 1.0).expect("packet fits the grid")
}

fn schrodinger_unitarity(rng: &mut SimRng, cases: usize) -> SuiteResult {
    let mut t = Tally::new("schrodinger.unitarity", 1e-10);
    for _ in 0..cases.div_ceil(10) {
        let psi = random_packet(rng);
        let v: Vec<f64> = (0..psi.len()).map(|k| 0.05 * psi.x(k).powi(2).min(20.0)).collect();
        t.record(evolve_grid(&psi, &v, 0.01, 50).map(|out| (out.norm_sqr() - 1.0).abs()));
    }
    t.finish()
}

fn schrodinger_reconstruction(rng: &mut SimRng, cases: usize) -> SuiteResult {
    let mut t = Tally::new("schrodinger.reconstruction", 1e-8);
    for _ in 0..cases.div_ceil(10) {
        let psi = random_packet(rng);
        let d = DensityPair::from_wavefunction(&psi);
        t.record(reconstruct_wavefunction(&d, 1.0, 1.0).map(|r| {
            let back = DensityPair::from_wavefunction(&r);
            let dr = back
                .rho
                .iter()
                .zip(&d.rho)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let dj = back.j.iter().zip(&d.j).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            dr.max(dj)
        }));
    }
    t.finish()
}

fn rdm_born(rng: &mut SimRng, cases: usize) -> SuiteResult {
    // residual is 1e-4 - p, so a failure means p < 1e-4
    let mut t = Tally::new("rdm.born-frequencies", 0.0);
    for _ in 0..cases.div_ceil(10) {
        let m = rng.random_range(2..=12);
        let p = random_probabilities(rng, m);
        let seed = rng.random();
        t.record(
            sample_stays(&p, 10_000, seed)
                .and_then(|traj| chi_square_gof(&site_counts(&traj), &p))
                .map(|c| (1e-4 - c.p_value).max(0.0)),
        );
    }
    t.finish()
}

fn beable_rates(rng: &mut SimRng, cases: usize) -> SuiteResult {
    let mut t = Tally::new("beable.rates", 1e-10);
    for _ in 0..cases {
        let d = rng.random_range(2..=6);
        let (psi, h) = (random_state(rng, d), random_hermitian(rng, d));
        let p = born_probabilities(&psi).expect("normalized");
        let j = probability_current(&h, &psi).expect("same dim");
        let Ok(rates) = bell_transition_rates(&j, &p, 1.0) else {
            t.holds(false);
            continue;
        };
        t.holds(rates.matrix().iter().all(|r| *r >= 0.0));
        t.residual(detailed_relation_residual(&j, &rates, &p, 1.0));
        let dt = 0.05 / rates.max_outflow().max(1.0);
        t.record(master_equation_step(&p, &rates, dt).map(|q| (q.iter().sum::<f64>() - 1.0).abs()));
    }
    t.finish()
}

fn random_superposition(rng: &mut SimRng) -> EnergySuperposition {
    let m = rng.random_range(2..=6);
    let p = random_probabilities(rng, m);
    let e: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
    EnergySuperposition::from_probabilities(&e, &p, UnitMode::Natural).expect("valid superposition")
}

fn collapse_martingale(rng: &mut SimRng, cases: usize) -> SuiteResult {
    let mut t = Tally::new("collapse.martingale", 1e-12);
    for _ in 0..cases {
        let s = random_superposition(rng);
        let cfg = CollapseConfig::frozen(rng.random_range(0.0..1.0));
        t.record(expected_update(&s, &cfg).map(|mean| {
            mean.iter()
                .zip(s.probabilities())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        }));
    }
    t.finish()
}

fn collapse_scale_invariance(rng: &mut SimRng, cases: usize) -> SuiteResult {
    let mut t = Tally::new("collapse.scale-invariance", 1e-12);
    for _ in 0..cases {
        let s = random_superposition(rng);
        let m = s.len();
        let cut = rng.random_range(1..m);
        let grouping = vec![(0..cut).collect::<Vec<_>>(), (cut..m).collect()];
        let cfg = CollapseConfig::frozen(rng.random_range(0.0..1.0));
        let staying = rng.random_range(0..m);
        match scale_invariance_check(&s, &cfg, &grouping, staying) {
            Ok(r) => t.residual(r.max_residual.max(r.sum_residual)),
            Err(_) => t.holds(false),
        }
    }
    t.finish()
}

fn protective_shift(rng: &mut SimRng, cases: usize) -> SuiteResult {
    // the surviving branch's shift is <A> times its norm up to O(1/N^2)
    let mut t = Tally::new("protective.shift", 1e-6);
    for _ in 0..cases.div_ceil(20) {
        let d = rng.random_range(2..=4);
        let (psi, a) = (random_state(rng, d), random_hermitian(rng, d));
        let run = ProtectiveSetup::new(psi, a, 1000, 1.0, CouplingProfile::Constant, PointerState::standard())
            .and_then(|s| zeno_protective_run(&s));
        match run {
            Ok(r) => {
                t.holds(r.survival_probability <= 1.0 + 1e-12);
                t.residual((r.pointer_shift - r.expectation * r.survival_probability).abs());
            }
            Err(_) => t.holds(false),
        }
    }
    t.finish()
}

fn random_event(rng: &mut SimRng) -> Event {
    Event::natural(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0))
}

fn frames_algebra(rng: &mut SimRng, cases: usize) -> Vec<SuiteResult> {
    let mut inv = Tally::new("frames.interval", 1e-12);
    let mut group = Tally::new("frames.boost-group", 1e-12);
    let mut ew = Tally::new("frames.edwards-winnie", 1e-12);
    let mut two_way = Tally::new("frames.two-way-speed", 1e-12);
    for _ in 0..cases * 50 {
        let (a, b) = (random_event(rng), random_event(rng));
        let v = rng.random_range(-0.99..0.99);
        let scale = 1.0 + (a.t - b.t).powi(2) + (a.x - b.x).powi(2);
        let boosted = lorentz_transform(&a, v).and_then(|ta| Ok((ta, lorentz_transform(&b, v)?)));
        inv.record(boosted.and_then(|(ta, tb)| Ok((interval(&a, &b)? - interval(&ta, &tb)?).abs() / scale)));

        let ext = 1.0 + a.t.abs() + a.x.abs();
        group.record(
            lorentz_transform(&a, v)
                .and_then(|e| lorentz_transform(&e, -v))
                .map(|back| (back.t - a.t).abs().max((back.x - a.x).abs()) / ext),
        );
        ew.record(SynchronyParams::standard(v, 1.0).and_then(|p| {
            let (l, w) = (lorentz_transform(&a, v)?, edwards_winnie_transform(&a, &p)?);
            Ok((l.t - w.t).abs().max((l.x - w.x).abs()) / ext)
        }));
        let k = rng.random_range(-0.999..0.999);
        two_way.record(
            SynchronyParams::new(0.0, k, -k, 1.0)
                .and_then(|p| one_way_speeds(&p))
                .map(|s| (s.two_way() - 1.0).abs().max((s.two_way_prime() - 1.0).abs())),
        );
    }
    vec![inv.finish(), group.finish(), ew.finish(), two_way.finish()]
}

/// Runs every suite. Suites run in parallel; the order of the report is fixed.
pub fn run_suites(cfg: &VerifyConfig) -> Vec<SuiteResult> {
    type Suite = fn(&mut SimRng, usize) -> Vec<SuiteResult>;
    let suites: [Suite; 11] = [
        |r, n| vec![hilbert_normalization(r, n)],
        |r, n| vec![hilbert_expectation(r, n)],
        |_, _| vec![hilbert_no_go()],
        |r, n| vec![schrodinger_unitarity(r, n)],
        |r, n| vec![schrodinger_reconstruction(r, n)],
        |r, n| vec![rdm_born(r, n)],
        |r, n| vec![beable_rates(r, n)],
        |r, n| vec![collapse_martingale(r, n)],
        |r, n| vec![collapse_scale_invariance(r, n)],
        |r, n| vec![protective_shift(r, n)],
        frames_algebra,
    ];
    suites
        .par_iter()
        .enumerate()
        .map(|(i, suite)| suite(&mut rng_from_seed(derive_seed(cfg.seed, i as u64)), cfg.cases))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let report = run_suites(&VerifyConfig { seed: 1, cases: 40 });
        assert_eq!(report.len(), 14);
        for s in &report {
            assert!(s.passed(), "{s:?}");
            assert!(s.checks > 0, "{s:?}");
        }
    }

    #[test]
    fn report_is_reproducible() {
        let cfg = VerifyConfig { seed: 9, cases: 20 };
        assert_eq!(run_suites(&cfg), run_suites(&cfg));
    }

    #[test]
    fn tally_flags_nan() {
        let mut t = Tally::new("x", 1.0);
        t.residual(f64::NAN);
        t.residual(0.5);
        let r = t.finish();
        assert_eq!((r.checks, r.failures), (2, 1));
        assert!(r.worst.is_nan());
    }
}
