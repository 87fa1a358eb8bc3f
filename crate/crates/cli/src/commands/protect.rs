use anyhow::Result;
use rayon::prelude::*;
use rdmsim::protective::{
    first_order_branch_check, tomography as run_tomography, uniform_partition, unprotected_measurement,
    zeno_protective_run, CouplingProfile, PointerState, ProtectiveSetup, ZenoRun,
};
use rdmsim::schrodinger::{flux_density, position_density};
use rdmsim::stats::loglog_slope;
use serde::Deserialize;

use super::{nonzero, one, require, GaussianSpec, OperatorSpec, StateSpec};
use crate::output::{RunOutput, Table};
use crate::row;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointerSpec {
    #[serde(default)]
    pub x0: f64,
    pub w0: f64,
    pub grid_start: f64,
    pub dx: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub psi: StateSpec,
    pub observable: OperatorSpec,
    /// Number of protective projections (`protect-run`).
    pub n: Option<usize>,
    /// Projection counts to sweep (`protect-sweep`).
    #[serde(default)]
    pub ns: Vec<usize>,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "constant")]
    pub profile: CouplingProfile,
    /// Defaults to width 4 on 1024 points over [-40, 40).
    pub pointer: Option<PointerSpec>,
    /// Also compare one sub-step against its first-order expansion.
    #[serde(default)]
    pub first_order: bool,
    #[serde(skip)]
    setups: Vec<ProtectiveSetup>,
}

fn constant() -> CouplingProfile {
    CouplingProfile::Constant
}

pub fn prepare(mut p: Params, sweep: bool) -> Result<Params> {
    let counts = if sweep {
        require(p.n.is_none(), || "protect-sweep takes `ns`, not `n`".into())?;
        require(!p.ns.is_empty(), || "protect-sweep needs a non-empty `ns` list".into())?;
        p.ns.clone()
    } else {
        require(p.ns.is_empty(), || "protect-run takes `n`, not `ns`".into())?;
        vec![p
            .n
            .ok_or_else(|| anyhow::anyhow!("precondition violated: protect-run needs `n`"))?]
    };
    for n in &counts {
        nonzero("n", *n)?;
    }
    let pointer = match &p.pointer {
        Some(s) => PointerState::gaussian(s.x0, s.w0, s.grid_start, s.dx, s.points)?,
        None => PointerState::standard(),
    };
    let psi = p.psi.build()?;
    let a = p.observable.build()?;
    p.setups = counts
        .iter()
        .map(|&n| ProtectiveSetup::new(psi.clone(), a.clone(), n, p.tau, p.profile, pointer.clone()))
        .collect::<rdmsim::Result<_>>()?;
    Ok(p)
}

fn pointer_table(run: &ZenoRun) -> Table {
    let g = &run.final_pointer;
    let mut t = Table::new("pointer", &["x", "re_phi", "im_phi", "density"]);
    for (k, c) in g.samples().iter().enumerate() {
        t.push(row![g.x(k), c.re, c.im, c.norm_sqr()]);
    }
    t
}

fn note_run(out: &mut RunOutput, r: &ZenoRun) {
    out.note("n", r.n);
    out.note("expectation", r.expectation);
    out.note("pointer_shift", r.pointer_shift);
    out.note("shift_error", r.shift_error());
    out.note("conditional_shift", r.conditional_shift);
    out.note("survival_probability", r.survival_probability);
    out.note("width_drift", r.width_drift());
}

pub fn run(p: &Params) -> Result<RunOutput> {
    let setup = &p.setups[0];
    let r = zeno_protective_run(setup)?;
    let un = unprotected_measurement(setup)?;
    let mut branches = Table::new("unprotected", &["eigenvalue", "weight", "pointer_mean"]);
    for b in &un.branches {
        branches.push(row![
            b.eigenvalue,
            b.weight,
            b.pointer.mean_position() - setup.pointer.x0
        ]);
    }

    let mut out = RunOutput {
        tables: vec![pointer_table(&r), branches],
        ..Default::default()
    };
    note_run(&mut out, &r);
    out.note("unprotected_pointer_purity", un.pointer_purity);
    out.note("unprotected_entangled", un.is_entangled());
    if p.first_order {
        let f = first_order_branch_check(setup)?;
        out.note("first_order_orthogonal_norm", f.orthogonal_norm);
        out.note("first_order_predicted_norm", f.predicted_norm);
        out.note("first_order_residual", f.residual);
    }
    out.line = format!(
        "N = {}: shift {:.6} vs <A> = {:.6}, survival {:.6}, width drift {:.1e}",
        r.n,
        r.pointer_shift,
        r.expectation,
        r.survival_probability,
        r.width_drift()
    );
    if let Some(w) = &r.warning {
        out.note("warning", w.as_str());
        out.line.push_str(&format!(" [warning: {w}]"));
    }
    Ok(out)
}

pub fn sweep(p: &Params) -> Result<RunOutput> {
    let runs: Vec<ZenoRun> = p
        .setups
        .par_iter()
        .map(zeno_protective_run)
        .collect::<rdmsim::Result<_>>()?;
    let mut t = Table::new(
        "sweep",
        &[
            "n",
            "pointer_shift",
            "shift_error",
            "conditional_shift",
            "survival_probability",
            "survival_deficit",
            "width_drift",
        ],
    );
    for r in &runs {
        t.push(row![
            r.n,
            r.pointer_shift,
            r.shift_error(),
            r.conditional_shift,
            r.survival_probability,
            r.survival_deficit(),
            r.width_drift()
        ]);
    }
    let last = runs.last().expect("non-empty sweep");
    let mut out = RunOutput {
        tables: vec![t],
        ..Default::default()
    };
    note_run(&mut out, last);
    out.line = format!(
        "{} runs, shift at N = {}: {:.6}",
        runs.len(),
        last.n,
        last.pointer_shift
    );
    if runs.len() >= 2 {
        let ns: Vec<f64> = runs.iter().map(|r| r.n as f64).collect();
        let shift = loglog_slope(&ns, &runs.iter().map(|r| r.shift_error()).collect::<Vec<_>>());
        let surv = loglog_slope(&ns, &runs.iter().map(|r| r.survival_deficit()).collect::<Vec<_>>());
        out.note("shift_error_slope", shift);
        out.note("survival_deficit_slope", surv);
        out.line.push_str(&format!(
            ", log-log slopes {shift:.3} (shift error) and {surv:.3} (survival deficit)"
        ));
    }
    if let Some(w) = runs.iter().find_map(|r| r.warning.as_ref()) {
        out.note("warning", w.as_str());
        out.line.push_str(&format!(" [warning: {w}]"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyParams {
    pub gaussian: GaussianSpec,
    /// Region counts; each uses a uniform partition of the grid.
    pub regions: Vec<usize>,
}

pub fn prepare_tomography(p: TomographyParams) -> Result<TomographyParams> {
    let psi = p.gaussian.build()?;
    require(!p.regions.is_empty(), || {
        "tomography needs at least one region count".into()
    })?;
    for r in &p.regions {
        uniform_partition(psi.len(), *r)?;
    }
    Ok(p)
}

pub fn tomography(p: &TomographyParams) -> Result<RunOutput> {
    let psi = p.gaussian.build()?;
    let reports = p
        .regions
        .par_iter()
        .map(|&r| run_tomography(&psi, &uniform_partition(psi.len(), r)?))
        .collect::<rdmsim::Result<Vec<_>>>()?;
    let mut t = Table::new(
        "tomography",
        &["regions", "region_width", "l2_error", "fidelity_residual"],
    );
    let mut widths = Vec::new();
    for (r, rep) in p.regions.iter().zip(&reports) {
        let w = psi.length() / *r as f64;
        widths.push(w);
        t.push(row![*r, w, rep.l2_error, rep.fidelity_residual]);
    }

    // profiles for the finest partition
    let (finest, _) = p
        .regions
        .iter()
        .enumerate()
        .max_by_key(|(_, r)| **r)
        .expect("non-empty");
    let rec = &reports[finest].reconstructed;
    let (rho_t, j_t, rho_r, j_r) = (
        position_density(&psi),
        flux_density(&psi),
        position_density(rec),
        flux_density(rec),
    );
    let mut prof = Table::new(
        "profiles",
        &["x", "rho_true", "j_true", "rho_reconstructed", "j_reconstructed"],
    );
    for k in 0..psi.len() {
        prof.push(row![psi.x(k), rho_t[k], j_t[k], rho_r[k], j_r[k]]);
    }

    let mut out = RunOutput {
        tables: vec![t, prof],
        ..Default::default()
    };
    let errs: Vec<f64> = reports.iter().map(|r| r.l2_error).collect();
    out.note("finest_regions", p.regions[finest]);
    out.note("finest_l2_error", errs[finest]);
    out.line = format!(
        "finest partition ({} regions) error {:.3e}",
        p.regions[finest], errs[finest]
    );
    if p.regions.len() >= 2 {
        let order = loglog_slope(&widths, &errs);
        out.note("convergence_order", order);
        out.line.push_str(&format!(", convergence order {order:.3}"));
    }
    Ok(out)
}
