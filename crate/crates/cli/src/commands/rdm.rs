use anyhow::Result;
use rayon::prelude::*;
use rdmsim::rdm::{
    empirical_density, sample_entangled_stays, sample_stays, write_run_binary, EntangledBranch, Region, RunRecord,
};
use rdmsim::schrodinger::position_density;
use rdmsim::seed::derive_seed;
use rdmsim::stats::{binomial_sigma, loglog_slope, total_variation};
use serde::Deserialize;

use super::{nonzero, one, positive, require, yes, GaussianSpec};
use crate::output::{RunOutput, Table};
use crate::row;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub instants: usize,
    #[serde(default = "one")]
    pub dt_instant: f64,
    /// Site probabilities.
    pub probabilities: Option<Vec<f64>>,
    /// Sample `|psi|^2 dx` of a Gaussian packet instead.
    pub gaussian: Option<GaussianSpec>,
    /// Entangled two-particle branches instead.
    pub branches: Option<Vec<EntangledBranch>>,
    /// Regions whose occupancy fraction is reported (single particle only).
    #[serde(default)]
    pub regions: Vec<Region>,
    /// Sample sizes for the total-variation convergence table.
    #[serde(default)]
    pub tv_sizes: Vec<usize>,
    #[serde(default = "tv_repeats")]
    pub tv_repeats: usize,
    /// Also write the binary run file.
    #[serde(default = "yes")]
    pub binary: bool,
}

fn tv_repeats() -> usize {
    20
}

pub fn prepare(p: Params) -> Result<Params> {
    nonzero("instants", p.instants)?;
    positive("dt_instant", p.dt_instant)?;
    let sources = [p.probabilities.is_some(), p.gaussian.is_some(), p.branches.is_some()];
    require(sources.iter().filter(|s| **s).count() == 1, || {
        "exactly one of `probabilities`, `gaussian`, `branches` must be given".into()
    })?;
    if let Some(g) = &p.gaussian {
        g.build()?;
    }
    if let Some(b) = &p.branches {
        require(b.iter().all(|b| b.region1.len > 0 && b.region2.len > 0), || {
            "branch regions must not be empty".into()
        })?;
        require(p.regions.is_empty() && p.tv_sizes.is_empty(), || {
            "`regions` and `tv_sizes` apply to single-particle sampling only".into()
        })?;
    }
    require(p.regions.iter().all(|r| r.len > 0), || {
        "regions must not be empty".into()
    })?;
    require(p.tv_sizes.iter().all(|n| *n > 0), || "tv_sizes must be positive".into())?;
    nonzero("tv_repeats", p.tv_repeats)?;
    Ok(p)
}

fn site_probabilities(p: &Params) -> Result<Vec<f64>> {
    if let Some(probs) = &p.probabilities {
        return Ok(probs.clone());
    }
    let psi = p.gaussian.as_ref().expect("validated source").build()?;
    let probs: Vec<f64> = position_density(&psi).iter().map(|r| r * psi.dx()).collect();
    let total: f64 = probs.iter().sum();
    Ok(probs.iter().map(|q| q / total).collect())
}

pub fn run(p: &Params, seed: u64) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    if let Some(branches) = &p.branches {
        let t = sample_entangled_stays(branches, p.instants, seed)?;
        let t = rdmsim::rdm::PairedStayTrajectory {
            dt_instant: p.dt_instant,
            ..t
        };
        let mut stays = Table::new("stays", &["instant", "site1", "site2", "branch1", "branch2"]);
        for i in 0..t.instants() {
            stays.push(row![i, t.stays1[i], t.stays2[i], t.branches1[i], t.branches2[i]]);
        }
        out.tables.push(stays);
        let sync = t.synchronized_instants() as f64 / t.instants() as f64;
        out.note("instants", t.instants());
        out.note("synchronized_fraction", sync);
        out.line = format!("{} paired instants, synchronized fraction {sync}", t.instants());
        if p.binary {
            let mut bytes = Vec::new();
            write_run_binary(&RunRecord::Paired(t), &mut bytes)?;
            out.raw.push(("run.bin".into(), bytes));
        }
        return Ok(out);
    }

    let probs = site_probabilities(p)?;
    let t = sample_stays(&probs, p.instants, seed)?.with_dt_instant(p.dt_instant)?;
    let mut stays = Table::new("stays", &["instant", "site"]);
    for (i, s) in t.stays().iter().enumerate() {
        stays.push(row![i, *s]);
    }
    let density = empirical_density(&t);
    let mut dens = Table::new("density", &["site", "empirical", "expected"]);
    for (k, (e, q)) in density.iter().zip(&probs).enumerate() {
        dens.push(row![k, *e, *q]);
    }
    let tv = total_variation(&density, &probs);
    out.tables.push(stays);
    out.tables.push(dens);
    out.note("instants", t.instants());
    out.note("sites", t.sites());
    out.note("total_variation", tv);
    out.line = format!(
        "{} instants over {} sites, TV distance {tv:.3e}",
        t.instants(),
        t.sites()
    );

    if !p.regions.is_empty() {
        let mut regions = Table::new("regions", &["start", "len", "fraction", "expected", "binomial_sigma"]);
        for r in &p.regions {
            require(r.end() <= probs.len(), || {
                format!("region [{}, {}) exceeds {} sites", r.start, r.end(), probs.len())
            })?;
            let frac = t.stays().iter().filter(|s| r.contains(**s as usize)).count() as f64 / t.instants() as f64;
            let expected: f64 = probs[r.start..r.end()].iter().sum();
            regions.push(row![
                r.start,
                r.len,
                frac,
                expected,
                binomial_sigma(expected, t.instants())
            ]);
        }
        out.tables.push(regions);
    }

    if !p.tv_sizes.is_empty() {
        let jobs: Vec<(usize, usize)> = p
            .tv_sizes
            .iter()
            .flat_map(|&n| (0..p.tv_repeats).map(move |r| (n, r)))
            .collect();
        let values: Vec<f64> = jobs
            .par_iter()
            .map(|&(n, r)| {
                let s = sample_stays(&probs, n, derive_seed(seed, r as u64))?;
                Ok(total_variation(&empirical_density(&s), &probs))
            })
            .collect::<Result<_>>()?;
        let mut table = Table::new("tv", &["instants", "mean_tv"]);
        let mut means = Vec::new();
        for (i, &n) in p.tv_sizes.iter().enumerate() {
            let chunk = &values[i * p.tv_repeats..(i + 1) * p.tv_repeats];
            let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
            means.push(mean);
            table.push(row![n, mean]);
        }
        out.tables.push(table);
        if p.tv_sizes.len() >= 2 {
            let slope = loglog_slope(&p.tv_sizes.iter().map(|n| *n as f64).collect::<Vec<_>>(), &means);
            out.note("tv_slope", slope);
            out.line.push_str(&format!(", TV slope {slope:.3}"));
        }
    }

    if p.binary {
        let mut bytes = Vec::new();
        write_run_binary(&RunRecord::Single(t), &mut bytes)?;
        out.raw.push(("run.bin".into(), bytes));
    }
    Ok(out)
}
