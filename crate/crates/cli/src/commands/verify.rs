use anyhow::Result;
use rdmsim::verify::{run_suites, VerifyConfig};
use serde::Deserialize;

use super::nonzero;
use crate::output::{RunOutput, Table};
use crate::row;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Random instances per suite.
    #[serde(default = "cases")]
    pub cases: usize,
}

fn cases() -> usize {
    VerifyConfig::default().cases
}

pub fn prepare(p: Params) -> Result<Params> {
    nonzero("cases", p.cases)?;
    Ok(p)
}

pub fn run(p: &Params, seed: u64) -> Result<RunOutput> {
    let results = run_suites(&VerifyConfig { seed, cases: p.cases });
    let mut t = Table::new(
        "suites",
        &["suite", "checks", "failures", "worst", "tolerance", "passed"],
    );
    for r in &results {
        t.push(row![
            r.name.as_str(),
            r.checks,
            r.failures,
            r.worst,
            r.tolerance,
            r.passed()
        ]);
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    let checks: u64 = results.iter().map(|r| r.checks).sum();
    let mut out = RunOutput {
        tables: vec![t],
        ..Default::default()
    };
    out.note("suites", results.len());
    out.note("checks", checks);
    out.note("failed_suites", failed.len());
    let counts: Vec<String> = results
        .iter()
        .map(|r| format!("{} {}/{}", r.name, r.checks - r.failures, r.checks))
        .collect();
    out.line = format!(
        "{}/{} suites passed ({})",
        results.len() - failed.len(),
        results.len(),
        counts.join(", ")
    );
    if !failed.is_empty() {
        out.failure = Some(format!("invariant suites failed: {}", failed.join(", ")));
    }
    Ok(out)
}
