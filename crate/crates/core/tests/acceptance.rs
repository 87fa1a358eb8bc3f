//! The twelve acceptance criteria, one test each. Every test writes a single
//! `PASS`/`FAIL` line straight to stdout so it shows up without
//! `--nocapture`.

use std::io::Write;

use rand::Rng;
use rdmsim::beable::{
    bell_transition_rates, detailed_relation_residual, equivariance_ensemble, probability_current, propagator,
    rabi_system,
};
use rdmsim::collapse::{
    ensemble_statistics, outcome_statistics, reference_scenarios, relativistic_collapse_time, CollapseConfig,
};
use rdmsim::constants::C_M_PER_S;
use rdmsim::frames::{
    absolute_synchrony_transform, boosted_correlation_stats, default_coincidence_tolerance, edwards_winnie_transform,
    interval, lorentz_transform, Event, SynchronyParams,
};
use rdmsim::hilbert::{
    hardy_unitary_check, pbr_orthogonality_table, ComplexVectorState, EnergySuperposition, HermitianOperator, UnitMode,
};
use rdmsim::protective::{
    tomography, uniform_partition, zeno_protective_run, CouplingProfile, PointerState, ProtectiveSetup,
};
use rdmsim::rdm::{empirical_density, sample_entangled_stays, sample_stays, EntangledBranch, Lattice, Region};
use rdmsim::schrodinger::{dispersion_check, evolve_grid, GridWavefunction};
use rdmsim::seed::rng_from_seed;
use rdmsim::stats::{binomial_sigma, loglog_slope, total_variation};
use rdmsim::C64;

fn report(n: &str, title: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{verdict} criterion {n}: {title} ({detail})").unwrap();
}

fn two_level(p: [f64; 2]) -> EnergySuperposition {
    EnergySuperposition::from_probabilities(&[0.0, 1.0], &p, UnitMode::Natural).unwrap()
}

#[test]
fn criterion_01_collapse_time_table() {
    let rows = reference_scenarios();
    let mut detail = Vec::new();
    let mut ok = true;
    for r in &rows {
        ok &= r.within_target();
        detail.push(format!("{} {:.2e} s vs {:.2e} s", r.name, r.tau_c_s, r.quoted_target_s));
    }
    report("1", "collapse-time table", ok, &detail.join("; "));
    assert!(ok);
}

#[test]
fn criterion_02_born_rule_martingale() {
    let s = two_level([0.3, 0.7]);
    let cfg = CollapseConfig::frozen(0.05).with_seed(2);
    let trials = 10_000;
    let out = outcome_statistics(&s, &cfg, trials, 1_000_000).unwrap();
    let freq = out.counts[0] as f64 / trials as f64;
    let sigma = binomial_sigma(0.3, trials);
    let freq_ok = out.undecided == 0 && (freq - 0.3).abs() < 3.0 * sigma;

    let series = ensemble_statistics(&s, &cfg, trials, 1000, 100).unwrap();
    let slices: Vec<_> = series.slices.iter().filter(|sl| sl.step > 0).collect();
    let worst = slices
        .iter()
        .map(|sl| (sl.mean_p[0] - 0.3).abs() / sl.se_p[0])
        .fold(0.0, f64::max);
    let mean_ok = slices.len() == 10 && worst < 3.0;
    report(
        "2",
        "Born-rule martingale",
        freq_ok && mean_ok,
        &format!(
            "outcome-1 frequency {freq:.4} (3 sigma = {:.4}); worst mean-P1 deviation {worst:.2} SE over 10 slices",
            3.0 * sigma
        ),
    );
    assert!(freq_ok && mean_ok);
}

#[test]
fn criterion_03_off_diagonal_decay() {
    let k = 0.1;
    let series = ensemble_statistics(
        &two_level([0.5, 0.5]),
        &CollapseConfig::frozen(k).with_seed(3),
        10_000,
        100,
        10,
    )
    .unwrap();
    let mut detail = Vec::new();
    let mut ok = true;
    for n in [10, 50, 100] {
        let sl = series.slices.iter().find(|s| s.step == n).unwrap();
        let (pp, se) = sl.pair(0, 1);
        let expected = (1.0 - k * k).powi(n as i32) * 0.25;
        ok &= (pp - expected).abs() <= 3.0 * se;
        detail.push(format!("n={n}: {pp:.5} vs {expected:.5} (SE {se:.1e})"));
    }
    report("3", "off-diagonal decay", ok, &detail.join("; "));
    assert!(ok);
}

#[test]
fn criterion_04_collapse_time_scaling() {
    let s = two_level([0.5, 0.5]);
    let mut scaled = Vec::new();
    for (i, (k, trials)) in [(0.01, 200usize), (0.03, 400), (0.1, 1000)].into_iter().enumerate() {
        let cfg = CollapseConfig::frozen(k).with_seed(40 + i as u64);
        let out = outcome_statistics(&s, &cfg, trials, 50_000_000).unwrap();
        assert_eq!(out.undecided, 0);
        scaled.push(out.median_steps() * k * k);
    }
    let hi = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let lo = scaled.iter().cloned().fold(f64::MAX, f64::min);
    let ok = hi / lo < 3.0;
    report(
        "4",
        "collapse-time scaling",
        ok,
        &format!("median steps x k^2 = {scaled:.3?}, spread factor {:.2}", hi / lo),
    );
    assert!(ok);
}

#[test]
fn criterion_05_protective_convergence() {
    let a = HermitianOperator::diagonal(&[1.0, 0.0]).unwrap();
    let ns = [100usize, 1000, 10_000];
    let runs: Vec<_> = ns
        .iter()
        .map(|n| {
            let setup = ProtectiveSetup::new(
                ComplexVectorState::plus(),
                a.clone(),
                *n,
                1.0,
                CouplingProfile::Constant,
                PointerState::standard(),
            )
            .unwrap();
            zeno_protective_run(&setup).unwrap()
        })
        .collect();
    let x: Vec<f64> = ns.iter().map(|n| *n as f64).collect();
    let shift_slope = loglog_slope(&x, &runs.iter().map(|r| r.shift_error()).collect::<Vec<_>>());
    let surv_slope = loglog_slope(&x, &runs.iter().map(|r| r.survival_deficit()).collect::<Vec<_>>());
    let last = &runs[2];
    let ok = (last.pointer_shift - 0.5).abs() <= 1e-3
        && (shift_slope + 1.0).abs() <= 0.2
        && (surv_slope + 1.0).abs() <= 0.2
        && last.width_drift() < 1e-6;
    report(
        "5",
        "protective convergence",
        ok,
        &format!(
            "shift(1e4) = {:.6}; slopes {shift_slope:.3} (shift), {surv_slope:.3} (survival); width drift {:.1e}",
            last.pointer_shift,
            last.width_drift()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_06_beable_equivariance() {
    let (h, psi) = rabi_system(1.0);
    let (dt, steps) = (0.001, 3000);
    let clean = equivariance_ensemble(&h, &psi, dt, steps, 1.0, 0.0, 10_000, 10, 6).unwrap();
    let noisy = equivariance_ensemble(&h, &psi, dt, steps, 1.0, 1.0, 10_000, 10, 6).unwrap();

    let mut residual: f64 = 0.0;
    let u = propagator(&h, 0.3, 1.0);
    let mut state = psi.clone();
    for _ in 0..10 {
        let p: Vec<f64> = state.amplitudes().iter().map(|c| c.norm_sqr()).collect();
        let j = probability_current(&h, &state).unwrap();
        let t = bell_transition_rates(&j, &p, 1.0).unwrap();
        residual = residual.max(detailed_relation_residual(&j, &t, &p, 1.0));
        let next: Vec<C64> = (0..2)
            .map(|r| (0..2).map(|c| u[(r, c)] * state.amplitudes()[c]).sum())
            .collect();
        state = ComplexVectorState::normalized(next).unwrap();
    }
    let ok = clean.min_p_value() > 1e-3 && noisy.min_p_value() > 1e-3 && residual < 1e-10;
    report(
        "6",
        "beable equivariance",
        ok,
        &format!(
            "min chi2 p {:.3} (c=0), {:.3} (c=1); detailed relation residual {residual:.1e}",
            clean.min_p_value(),
            noisy.min_p_value()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_rdm_ergodicity() {
    // two boxes of 10 sites each
    let mut probs = vec![0.03; 10];
    probs.extend(vec![0.07; 10]);
    let n = 100_000;
    let t = sample_stays(&probs, n, 7).unwrap();
    let box1 = t.stays().iter().filter(|s| **s < 10).count() as f64 / n as f64;
    let sigma = binomial_sigma(0.3, n);
    let box_ok = (box1 - 0.3).abs() < 3.0 * sigma;

    let sizes = [1_000usize, 10_000, 100_000];
    let tv: Vec<f64> = sizes
        .iter()
        .map(|&m| {
            (0..20u64)
                .map(|seed| {
                    total_variation(
                        &empirical_density(&sample_stays(&probs, m, 100 + seed).unwrap()),
                        &probs,
                    )
                })
                .sum::<f64>()
                / 20.0
        })
        .collect();
    let slope = loglog_slope(&sizes.map(|m| m as f64), &tv);
    let ok = box_ok && (slope + 0.5).abs() <= 0.1;
    report(
        "7",
        "RDM ergodicity",
        ok,
        &format!(
            "box-1 fraction {box1:.4} (3 sigma = {:.4}); TV slope {slope:.3}",
            3.0 * sigma
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_08_entanglement_frame_statistics() {
    let lat = Lattice { x0: 0.0, dx: 1.0 };
    let make = |w: f64, seed: u64| {
        let branches = [
            EntangledBranch {
                weight: w,
                region1: Region::new(0, 10).unwrap(),
                region2: Region::new(2000, 10).unwrap(),
            },
            EntangledBranch {
                weight: 1.0 - w,
                region1: Region::new(20, 10).unwrap(),
                region2: Region::new(2020, 10).unwrap(),
            },
        ];
        sample_entangled_stays(&branches, 100_000, seed).unwrap()
    };
    let rest = boosted_correlation_stats(
        &make(0.5, 80),
        &lat,
        &lat,
        0.0,
        1.0,
        default_coincidence_tolerance(1.0, 0.0, 1.0).unwrap(),
    )
    .unwrap();
    let mut ok = rest.reversed == 0;
    let mut detail = vec![format!("v=0 reversed {}", rest.reversed_fraction)];
    for (w, seed) in [(0.5, 81u64), (0.9, 82)] {
        let v = 0.3;
        let s = boosted_correlation_stats(
            &make(w, seed),
            &lat,
            &lat,
            v,
            1.0,
            default_coincidence_tolerance(1.0, v, 1.0).unwrap(),
        )
        .unwrap();
        let expected = 2.0 * w * (1.0 - w);
        // pairs sharing an instant are correlated; reversed_se accounts for that
        let sigma = s.reversed_se;
        ok &= (s.reversed_fraction - expected).abs() < 3.0 * sigma;
        detail.push(format!(
            "|a|^2={w}: reversed {:.4} vs {expected:.2} (3 sigma = {:.4})",
            s.reversed_fraction,
            3.0 * sigma
        ));
    }
    report("8", "entanglement frame statistics", ok, &detail.join("; "));
    assert!(ok);
}

#[test]
fn criterion_09_relativistic_anisotropy() {
    let cfg = CollapseConfig::physical();
    let dv = 60e3;
    let spring = relativistic_collapse_time(1.0, -dv / 2.0, C_M_PER_S, &cfg).unwrap();
    let fall = relativistic_collapse_time(1.0, dv / 2.0, C_M_PER_S, &cfg).unwrap();
    let mean = 0.5 * (spring.tau_c + fall.tau_c);
    let frac = (spring.tau_c - fall.tau_c).abs() / mean;
    let ok = (frac / 4e-4 - 1.0).abs() <= 0.05;
    report(
        "9",
        "relativistic collapse anisotropy",
        ok,
        &format!("fractional difference {frac:.4e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_10_frame_algebra() {
    let mut rng = rng_from_seed(10);
    let (mut ew, mut inv): (f64, f64) = (0.0, 0.0);
    let mut abs_sync: f64 = 0.0;
    for _ in 0..10_000 {
        let a = Event::natural(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let b = Event::natural(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let beta: f64 = rng.random_range(-0.99..0.99);
        let l = lorentz_transform(&a, beta).unwrap();
        let w = edwards_winnie_transform(&a, &SynchronyParams::standard(beta, 1.0).unwrap()).unwrap();
        let ext = 1.0 + a.t.abs() + a.x.abs();
        ew = ew.max((l.t - w.t).abs().max((l.x - w.x).abs()) / ext);
        let lb = lorentz_transform(&b, beta).unwrap();
        let scale = 1.0 + (a.t - b.t).powi(2) + (a.x - b.x).powi(2);
        inv = inv.max((interval(&a, &b).unwrap() - interval(&l, &lb).unwrap()).abs() / scale);
        let s = absolute_synchrony_transform(&a, beta).unwrap();
        abs_sync = abs_sync.max((s.t - a.t * (1.0 - beta * beta).sqrt()).abs() / ext);
    }
    let ok = ew < 1e-12 && inv < 1e-12 && abs_sync < 1e-12;
    report(
        "10",
        "frame algebra",
        ok,
        &format!("EW vs Lorentz {ew:.1e}; interval {inv:.1e}; absolute-sync time {abs_sync:.1e} over 1e4 pairs"),
    );
    assert!(ok);
}

/// RMS width ratio of a free Gaussian evolved to `t = 2 m sigma^2 / hbar`.
fn width_ratio_at_stated_doubling_time() -> f64 {
    let (n, length, sigma) = (4096, 160.0, 1.0);
    let psi = GridWavefunction::gaussian(-length / 2.0, length / n as f64, n, 0.0, sigma, 0.0, 1.0, 1.0).unwrap();
    let t = 2.0 * sigma * sigma;
    let steps = 400;
    let out = evolve_grid(&psi, &vec![0.0; n], t / steps as f64, steps).unwrap();
    out.rms_width() / psi.rms_width()
}

fn dispersion_slope() -> f64 {
    let ns = [64usize, 128, 256];
    let dx: Vec<f64> = ns.iter().map(|n| 10.0 / *n as f64).collect();
    let r: Vec<f64> = ns
        .iter()
        .map(|n| dispersion_check(2.0 * std::f64::consts::PI * 3.0 / 10.0, 1.0, 1.0, *n, 10.0))
        .collect();
    loglog_slope(&dx, &r)
}

fn tomography_slope() -> (f64, f64) {
    let psi = GridWavefunction::gaussian(-20.0, 40.0 / 1024.0, 1024, 0.0, 3.0, 0.5, 1.0, 1.0).unwrap();
    let regions = [64usize, 128, 256];
    let errs: Vec<f64> = regions
        .iter()
        .map(|r| {
            tomography(&psi, &uniform_partition(1024, *r).unwrap())
                .unwrap()
                .l2_error
        })
        .collect();
    let width: Vec<f64> = regions.iter().map(|r| 40.0 / *r as f64).collect();
    (loglog_slope(&width, &errs), errs[2])
}

#[test]
fn criterion_11_schrodinger_checks() {
    let ratio = width_ratio_at_stated_doubling_time();
    let doubling_ok = (ratio / 2.0 - 1.0).abs() <= 0.02;
    let disp = dispersion_slope();
    let disp_ok = (disp - 2.0).abs() <= 0.2;
    let (tomo, tomo_err) = tomography_slope();
    let tomo_ok = (tomo - 1.0).abs() <= 0.2 && tomo_err < 1e-2;
    report(
        "11",
        "Schrodinger checks",
        doubling_ok && disp_ok && tomo_ok,
        &format!(
            "width ratio at t = 2m sigma^2/hbar {ratio:.4} vs 2 [{}]; dispersion order {disp:.3} [{}]; tomography order {tomo:.3}, error at 256 regions {tomo_err:.1e} [{}]",
            if doubling_ok { "ok" } else { "unattainable: exact ratio is sqrt 2" },
            if disp_ok { "ok" } else { "fail" },
            if tomo_ok { "ok" } else { "fail" },
        ),
    );
    // the width ratio has its own test below
    assert!(disp_ok && tomo_ok);
}

#[test]
#[ignore = "unattainable as stated: a free Gaussian's RMS width grows by sqrt(2), not 2, at t = 2 m sigma^2 / hbar"]
fn criterion_11_width_doubles_at_stated_time() {
    let ratio = width_ratio_at_stated_doubling_time();
    assert!((ratio / 2.0 - 1.0).abs() <= 0.02, "width ratio {ratio}");
}

#[test]
fn criterion_12_no_go_constructions() {
    let pbr = pbr_orthogonality_table();
    let zeros = pbr.zero_entries(1e-12);
    // preparation j is excluded by outcome j, in the order the states are listed
    let pattern_ok = zeros == vec![(0, 0), (1, 1), (2, 2), (3, 3)];
    let rest_ok = pbr.table.iter().flatten().filter(|v| **v >= 1e-12).count() == 12;
    let hardy = hardy_unitary_check();
    let ok = pattern_ok && rest_ok && pbr.orthonormality_error < 1e-12 && hardy.passed();
    report(
        "12",
        "no-go constructions",
        ok,
        &format!("PBR zeros at {zeros:?}; Hardy residual {:.1e}", hardy.max_residual),
    );
    assert!(ok);
}
