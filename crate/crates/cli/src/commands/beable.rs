use anyhow::Result;
use rdmsim::beable::{
    add_homogeneous_noise, bell_transition_rates, detailed_relation_residual, equivariance_ensemble, jump_trajectory,
    probability_current, propagator, rabi_system,
};
use rdmsim::hilbert::{ComplexVectorState, HermitianOperator};
use rdmsim::seed::derive_seed;
use rdmsim::C64;
use serde::Deserialize;

use super::{nonzero, one, positive, require, OperatorSpec, StateSpec};
use crate::output::{RunOutput, Table};
use crate::row;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Hamiltonian; defaults to the two-site Rabi system `-omega sigma_x`.
    pub hamiltonian: Option<OperatorSpec>,
    pub omega: Option<f64>,
    /// Initial state; required with `hamiltonian`.
    pub psi: Option<StateSpec>,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub hbar: f64,
    /// Homogeneous noise strength `c`.
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "trajectories")]
    pub trajectories: usize,
    #[serde(default = "slices")]
    pub slices: usize,
    /// Start site of the recorded sample path.
    #[serde(default)]
    pub start_site: usize,
    #[serde(skip)]
    system: Option<(HermitianOperator, ComplexVectorState)>,
}

fn trajectories() -> usize {
    10_000
}

fn slices() -> usize {
    10
}

pub fn prepare(mut p: Params) -> Result<Params> {
    positive("dt", p.dt)?;
    positive("hbar", p.hbar)?;
    nonzero("steps", p.steps)?;
    nonzero("trajectories", p.trajectories)?;
    require(p.slices >= 1 && p.slices <= p.steps, || {
        "need 1 <= slices <= steps".into()
    })?;
    require(p.noise >= 0.0 && p.noise.is_finite(), || {
        "noise must be non-negative".into()
    })?;
    let system = match (&p.hamiltonian, &p.psi) {
        (Some(h), Some(psi)) => {
            require(p.omega.is_none(), || {
                "`omega` only applies to the default Rabi system".into()
            })?;
            (h.build()?, psi.build()?)
        }
        (Some(_), None) => {
            return Err(anyhow::anyhow!(
                "precondition violated: `hamiltonian` needs an initial `psi`"
            ))
        }
        (None, psi) => {
            let (h, default_psi) = rabi_system(p.omega.unwrap_or(1.0));
            (
                h,
                match psi {
                    Some(s) => s.build()?,
                    None => default_psi,
                },
            )
        }
    };
    require(system.0.dim() == system.1.dim(), || {
        format!(
            "psi has dimension {} but the Hamiltonian {}",
            system.1.dim(),
            system.0.dim()
        )
    })?;
    require(p.start_site < system.0.dim(), || {
        format!("start_site {} out of range", p.start_site)
    })?;
    p.system = Some(system);
    Ok(p)
}

pub fn run(p: &Params, seed: u64) -> Result<RunOutput> {
    let (h, psi0) = p.system.as_ref().expect("prepared");
    let report = equivariance_ensemble(h, psi0, p.dt, p.steps, p.hbar, p.noise, p.trajectories, p.slices, seed)?;

    let mut hist = Table::new("slices", &["step", "time", "site", "count", "expected"]);
    let mut tests = Table::new("slice_tests", &["step", "time", "chi2", "p_value", "detailed_residual"]);
    let mut worst_residual: f64 = 0.0;
    for s in &report.slices {
        for (site, (c, e)) in s.counts.iter().zip(&s.expected).enumerate() {
            hist.push(row![s.step, s.time, site, *c, *e]);
        }
        // the detailed relation at this slice, with the same noise as the run
        let u = propagator(h, s.time, p.hbar);
        let amps: Vec<C64> = (0..h.dim())
            .map(|r| (0..h.dim()).map(|c| u[(r, c)] * psi0.amplitudes()[c]).sum())
            .collect();
        let psi = ComplexVectorState::normalized(amps)?;
        let probs: Vec<f64> = psi.amplitudes().iter().map(|a| a.norm_sqr()).collect();
        let j = probability_current(h, &psi)?;
        let mut rates = bell_transition_rates(&j, &probs, p.hbar)?;
        if p.noise > 0.0 {
            rates = add_homogeneous_noise(&rates, &probs, p.noise)?;
        }
        let residual = detailed_relation_residual(&j, &rates, &probs, p.hbar);
        worst_residual = worst_residual.max(residual);
        tests.push(row![s.step, s.time, s.statistic, s.p_value, residual]);
    }

    let path = jump_trajectory(
        h,
        psi0,
        p.start_site,
        p.dt,
        p.steps,
        p.hbar,
        derive_seed(seed, u64::MAX),
    )?;
    let mut walk = Table::new("path", &["instant", "time", "site"]);
    for (i, s) in path.stays().iter().enumerate() {
        walk.push(row![i, path.time(i), *s]);
    }

    let mut out = RunOutput {
        tables: vec![hist, tests, walk],
        ..Default::default()
    };
    let jumps = report
        .first_jump_times
        .iter()
        .filter(|t| **t < p.steps as f64 * p.dt)
        .count();
    out.note("trajectories", p.trajectories);
    out.note("noise", p.noise);
    out.note("min_p_value", report.min_p_value());
    out.note("max_detailed_residual", worst_residual);
    out.note("trajectories_that_jumped", jumps);
    out.line = format!(
        "{} trajectories, noise {}, min chi2 p {:.4}, detailed residual {:.1e}",
        p.trajectories,
        p.noise,
        report.min_p_value(),
        worst_residual
    );
    Ok(out)
}
