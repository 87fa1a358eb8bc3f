use anyhow::Result;
use rayon::prelude::*;
use rdmsim::frames::{
    boosted_correlation_stats, default_coincidence_tolerance, interval, multiparticle_appearance_scan, one_way_speeds,
    simultaneity_frame, Event, SynchronyParams,
};
use rdmsim::rdm::{sample_entangled_stays, sample_stays, EntangledBranch, Lattice, PairedStayTrajectory};
use rdmsim::seed::derive_seed;
use serde::Deserialize;

use super::{nonzero, one, positive, require};
use crate::output::{RunOutput, Table};
use crate::row;

fn unit_lattice() -> Lattice {
    Lattice { x0: 0.0, dx: 1.0 }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSpec {
    pub branches: Vec<EntangledBranch>,
    pub instants: usize,
    #[serde(default = "unit_lattice")]
    pub lattice: Lattice,
    #[serde(default = "one")]
    pub dt_instant: f64,
    /// Coincidence tolerance; defaults to half the boosted instant spacing.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppearanceSpec {
    pub probabilities: Vec<f64>,
    pub instants: usize,
    #[serde(default = "unit_lattice")]
    pub lattice: Lattice,
    #[serde(default = "one")]
    pub dt_instant: f64,
    #[serde(default)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default = "one")]
    pub c: f64,
    /// Frame velocities for the correlation, appearance and one-way tables.
    #[serde(default)]
    pub velocities: Vec<f64>,
    pub correlation: Option<CorrelationSpec>,
    pub appearance: Option<AppearanceSpec>,
    /// Consecutive pairs `(0, 1), (2, 3), ..` get their simultaneity frame.
    #[serde(default)]
    pub events: Vec<EventSpec>,
    /// `[k, k']` synchrony parameters for the one-way light-speed table.
    pub synchrony: Option<[f64; 2]>,
}

pub fn prepare(p: Params) -> Result<Params> {
    positive("c", p.c)?;
    for v in &p.velocities {
        require(v.abs() < p.c, || format!("frame velocity {v} is not below c = {}", p.c))?;
    }
    require(
        p.correlation.is_some() || p.appearance.is_some() || !p.events.is_empty() || p.synchrony.is_some(),
        || "nothing to analyze: give correlation, appearance, events or synchrony".into(),
    )?;
    let needs_v = p.correlation.is_some() || p.appearance.is_some() || p.synchrony.is_some();
    require(!needs_v || !p.velocities.is_empty(), || {
        "`velocities` must not be empty".into()
    })?;
    if let Some(c) = &p.correlation {
        nonzero("correlation.instants", c.instants)?;
        positive("correlation.dt_instant", c.dt_instant)?;
        require(
            c.branches.iter().all(|b| b.region1.len > 0 && b.region2.len > 0),
            || "branch regions must not be empty".into(),
        )?;
        if let Some(t) = c.tolerance {
            require(t >= 0.0, || "tolerance must be non-negative".into())?;
        }
    }
    if let Some(a) = &p.appearance {
        nonzero("appearance.instants", a.instants)?;
        positive("appearance.dt_instant", a.dt_instant)?;
        require(a.tolerance >= 0.0, || "tolerance must be non-negative".into())?;
    }
    require(p.events.len().is_multiple_of(2), || {
        "`events` must hold complete pairs".into()
    })?;
    if let Some([k, kp]) = p.synchrony {
        for v in &p.velocities {
            one_way_speeds(&SynchronyParams::new(*v, k, kp, p.c)?)?;
        }
    }
    Ok(p)
}

fn correlation(spec: &CorrelationSpec, p: &Params, seed: u64, out: &mut RunOutput) -> Result<()> {
    let t = sample_entangled_stays(&spec.branches, spec.instants, seed)?;
    let t = PairedStayTrajectory {
        dt_instant: spec.dt_instant,
        ..t
    };
    let total: f64 = spec.branches.iter().map(|b| b.weight).sum();
    // two instants carry different branch labels with probability 1 - sum w^2
    let expected = 1.0 - spec.branches.iter().map(|b| (b.weight / total).powi(2)).sum::<f64>();
    let stats = p
        .velocities
        .par_iter()
        .map(|&v| {
            let tol = match spec.tolerance {
                Some(t) => t,
                None => default_coincidence_tolerance(spec.dt_instant, v, p.c)?,
            };
            boosted_correlation_stats(&t, &spec.lattice, &spec.lattice, v, p.c, tol)
        })
        .collect::<rdmsim::Result<Vec<_>>>()?;
    let mut table = Table::new(
        "correlation",
        &[
            "v",
            "tolerance",
            "pairs",
            "kept",
            "reversed",
            "reversed_fraction",
            "expected_boosted",
            "reversed_se",
        ],
    );
    let mut worst: f64 = 0.0;
    for s in &stats {
        if s.v != 0.0 && s.reversed_se > 0.0 {
            worst = worst.max((s.reversed_fraction - expected).abs() / s.reversed_se);
        }
        table.push(row![
            s.v,
            s.tolerance,
            s.pairs,
            s.kept,
            s.reversed,
            s.reversed_fraction,
            expected,
            s.reversed_se
        ]);
    }
    out.tables.push(table);
    out.note("synchronized_instants", t.synchronized_instants());
    out.note("expected_reversed_fraction", expected);
    out.note("max_reversed_deviation_sigma", worst);
    out.line.push_str(&format!(
        "reversed fraction in moving frames within {worst:.2} sigma of {expected:.4}; synchronized instants {}/{}; ",
        t.synchronized_instants(),
        t.instants()
    ));
    Ok(())
}

fn appearance(spec: &AppearanceSpec, p: &Params, seed: u64, out: &mut RunOutput) -> Result<()> {
    let t = sample_stays(&spec.probabilities, spec.instants, seed)?.with_dt_instant(spec.dt_instant)?;
    let counts = p
        .velocities
        .par_iter()
        .map(|&v| multiparticle_appearance_scan(&t, &spec.lattice, v, p.c, spec.tolerance))
        .collect::<rdmsim::Result<Vec<_>>>()?;
    let mut table = Table::new("appearance", &["v", "tolerance", "coincident_pairs"]);
    for (v, n) in p.velocities.iter().zip(&counts) {
        table.push(row![*v, spec.tolerance, *n]);
    }
    out.tables.push(table);
    out.note("max_coincident_pairs", counts.iter().copied().max().unwrap_or(0));
    out.line.push_str(&format!("multi-place appearances {counts:?}; "));
    Ok(())
}

pub fn run(p: &Params, seed: u64) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    if let Some(spec) = &p.correlation {
        correlation(spec, p, derive_seed(seed, 0), &mut out)?;
    }
    if let Some(spec) = &p.appearance {
        appearance(spec, p, derive_seed(seed, 1), &mut out)?;
    }
    if !p.events.is_empty() {
        let mut table = Table::new(
            "simultaneity",
            &["t1", "x1", "t2", "x2", "interval", "spacelike", "frame_velocity"],
        );
        let mut found = 0;
        for pair in p.events.chunks(2) {
            let a = Event::new(pair[0].t, pair[0].x, "S", p.c)?;
            let b = Event::new(pair[1].t, pair[1].x, "S", p.c)?;
            let s = interval(&a, &b)?;
            let v = match simultaneity_frame(&a, &b) {
                Ok(v) => {
                    found += 1;
                    Some(v)
                }
                Err(rdmsim::Error::NotSpacelike) => None,
                Err(e) => return Err(e.into()),
            };
            // no frame exists for timelike or lightlike pairs; report v = 0 and spacelike = false
            table.push(row![a.t, a.x, b.t, b.x, s, v.is_some(), v.unwrap_or(0.0)]);
        }
        out.tables.push(table);
        out.note("simultaneity_frames", found);
        out.line.push_str(&format!(
            "{found}/{} event pairs have a simultaneity frame; ",
            p.events.len() / 2
        ));
    }
    if let Some([k, kp]) = p.synchrony {
        let mut table = Table::new(
            "one_way",
            &[
                "v",
                "k",
                "k_prime",
                "plus_x",
                "minus_x",
                "plus_x_prime",
                "minus_x_prime",
                "two_way_prime",
            ],
        );
        for v in &p.velocities {
            let s = one_way_speeds(&SynchronyParams::new(*v, k, kp, p.c)?)?;
            table.push(row![
                *v,
                k,
                kp,
                s.plus_x,
                s.minus_x,
                s.plus_x_prime,
                s.minus_x_prime,
                s.two_way_prime()
            ]);
        }
        out.tables.push(table);
    }
    let trimmed = out.line.trim_end_matches([' ', ';']).to_string();
    out.line = trimmed;
    Ok(out)
}
