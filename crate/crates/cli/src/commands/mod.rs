//! One module per subcommand. Each parses and validates its parameters in
//! `prepare` (before any work starts) and produces a [`RunOutput`] in `run`.

use anyhow::{anyhow, bail, Result};
use rdmsim::hilbert::{ComplexVectorState, HermitianOperator};
use rdmsim::schrodinger::GridWavefunction;
use rdmsim::C64;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::output::RunOutput;
use crate::scenario::{Module, Resolved};

mod beable;
mod collapse;
mod frames;
mod protect;
mod rdm;
mod tau_c;
mod verify;

pub enum Job {
    RdmSample(rdm::Params),
    BeableRun(beable::Params),
    CollapseRun(collapse::RunParams),
    CollapseEnsemble(collapse::EnsembleParams),
    TauC(tau_c::Params),
    ProtectRun(protect::Params),
    ProtectSweep(protect::Params),
    Tomography(protect::TomographyParams),
    FramesAnalyze(frames::Params),
    Verify(verify::Params),
}

pub fn prepare(s: &Resolved) -> Result<Job> {
    let m = s.module;
    Ok(match m {
        Module::RdmSample => Job::RdmSample(rdm::prepare(parse(m, &s.params)?)?),
        Module::BeableRun => Job::BeableRun(beable::prepare(parse(m, &s.params)?)?),
        Module::CollapseRun => Job::CollapseRun(collapse::prepare_run(parse(m, &s.params)?)?),
        Module::CollapseEnsemble => Job::CollapseEnsemble(collapse::prepare_ensemble(parse(m, &s.params)?)?),
        Module::TauC => Job::TauC(tau_c::prepare(parse(m, &s.params)?)?),
        Module::ProtectRun => Job::ProtectRun(protect::prepare(parse(m, &s.params)?, false)?),
        Module::ProtectSweep => Job::ProtectSweep(protect::prepare(parse(m, &s.params)?, true)?),
        Module::Tomography => Job::Tomography(protect::prepare_tomography(parse(m, &s.params)?)?),
        Module::FramesAnalyze => Job::FramesAnalyze(frames::prepare(parse(m, &s.params)?)?),
        Module::Verify => Job::Verify(verify::prepare(parse(m, &s.params)?)?),
    })
}

impl Job {
    pub fn run(&self, seed: u64) -> Result<RunOutput> {
        match self {
            Job::RdmSample(p) => rdm::run(p, seed),
            Job::BeableRun(p) => beable::run(p, seed),
            Job::CollapseRun(p) => collapse::run(p, seed),
            Job::CollapseEnsemble(p) => collapse::ensemble(p, seed),
            Job::TauC(p) => tau_c::run(p),
            Job::ProtectRun(p) => protect::run(p),
            Job::ProtectSweep(p) => protect::sweep(p),
            Job::Tomography(p) => protect::tomography(p),
            Job::FramesAnalyze(p) => frames::run(p, seed),
            Job::Verify(p) => verify::run(p, seed),
        }
    }
}

fn parse<T: DeserializeOwned>(m: Module, params: &toml::Table) -> Result<T> {
    toml::Value::Table(params.clone())
        .try_into()
        .map_err(|e| anyhow!("invalid parameters for {}: {}", m.name(), e.to_string().trim()))
}

fn require(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(anyhow!("precondition violated: {}", what()))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    require(v > 0.0 && v.is_finite(), || {
        format!("{name} must be positive and finite, got {v}")
    })
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    require(v > 0, || format!("{name} must be at least 1"))
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Amplitudes as plain reals or `[re, im]` pairs; must be normalized.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl StateSpec {
    pub fn build(&self) -> Result<ComplexVectorState> {
        Ok(match self {
            StateSpec::Real(v) => ComplexVectorState::from_real(v)?,
            StateSpec::Complex(v) => ComplexVectorState::new(v.clone())?,
        })
    }
}

/// Real rows, complex rows of `[re, im]` pairs, or `{ diagonal = [..] }`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Real(Vec<Vec<f64>>),
    Complex(Vec<Vec<C64>>),
    Diagonal { diagonal: Vec<f64> },
}

impl OperatorSpec {
    pub fn build(&self) -> Result<HermitianOperator> {
        Ok(match self {
            OperatorSpec::Real(rows) => {
                let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                if rows.iter().any(|r| r.len() != rows.len()) {
                    bail!("precondition violated: operator rows must form a square matrix");
                }
                HermitianOperator::from_real_rows(&refs)?
            }
            OperatorSpec::Complex(rows) => HermitianOperator::try_from(rows.clone())?,
            OperatorSpec::Diagonal { diagonal } => HermitianOperator::diagonal(diagonal)?,
        })
    }
}

/// Gaussian packet on a periodic grid starting at `x0`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub x0: f64,
    pub dx: f64,
    pub points: usize,
    pub center: f64,
    pub sigma: f64,
    #[serde(default)]
    pub p0: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub hbar: f64,
}

impl GaussianSpec {
    pub fn build(&self) -> Result<GridWavefunction> {
        positive("dx", self.dx)?;
        positive("sigma", self.sigma)?;
        positive("mass", self.mass)?;
        positive("hbar", self.hbar)?;
        require(self.points >= 2, || "a grid needs at least 2 points".into())?;
        Ok(GridWavefunction::gaussian(
            self.x0,
            self.dx,
            self.points,
            self.center,
            self.sigma,
            self.p0,
            self.mass,
            self.hbar,
        )?)
    }
}
