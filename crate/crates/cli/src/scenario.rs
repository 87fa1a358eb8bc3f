//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "born-rule"
//! module = "collapse-run"
//! master_seed = 2
//! output_dir = "born-rule"   # optional, relative to --out-dir
//!
//! [params]
//! trials = 10000
//! k = 0.05
//! state = { energies = [0.0, 1.0], probabilities = [0.3, 0.7] }
//! ```
//!
//! Its canonical form is the JSON rendering of the resolved scenario with
//! keys sorted; the manifest hashes that form.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Module {
    RdmSample,
    BeableRun,
    CollapseRun,
    CollapseEnsemble,
    TauC,
    ProtectRun,
    ProtectSweep,
    Tomography,
    FramesAnalyze,
    Verify,
}

impl Module {
    pub fn name(self) -> &'static str {
        match self {
            Module::RdmSample => "rdm-sample",
            Module::BeableRun => "beable-run",
            Module::CollapseRun => "collapse-run",
            Module::CollapseEnsemble => "collapse-ensemble",
            Module::TauC => "tau-c",
            Module::ProtectRun => "protect-run",
            Module::ProtectSweep => "protect-sweep",
            Module::Tomography => "tomography",
            Module::FramesAnalyze => "frames-analyze",
            Module::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    module: Module,
    master_seed: Option<u64>,
    output_dir: Option<String>,
    #[serde(default)]
    params: toml::Table,
}

/// A scenario after flags and overrides are applied.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub name: String,
    pub module: Module,
    pub master_seed: u64,
    #[serde(skip)]
    pub output_dir: String,
    pub params: toml::Table,
}

impl Resolved {
    pub fn canonical_json(&self) -> Result<Vec<u8>> {
        // toml::Table keeps its keys sorted, so this is canonical
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

pub struct Request<'a> {
    pub module: Option<Module>,
    pub overrides: &'a [String],
    pub seed: Option<u64>,
}

pub fn from_flags(module: Module, req: &Request) -> Result<Resolved> {
    let mut params = toml::Table::new();
    apply_overrides(&mut params, req.overrides)?;
    Ok(Resolved {
        name: module.name().into(),
        module,
        master_seed: req.seed.unwrap_or(0),
        output_dir: module.name().into(),
        params,
    })
}

pub fn load_file(path: &Path, req: &Request) -> Result<Resolved> {
    let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    let file: ScenarioFile = toml::from_str(&text).with_context(|| format!("malformed scenario {}", path.display()))?;
    if let Some(m) = req.module {
        if m != file.module {
            bail!(
                "scenario {} is for module `{}` but the `{}` subcommand was given",
                path.display(),
                file.module.name(),
                m.name()
            );
        }
    }
    let name = match file.name {
        Some(n) => n,
        None => path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario")
            .to_string(),
    };
    if name.is_empty() || name.contains(['/', '\\']) {
        bail!("scenario name `{name}` must be non-empty and contain no path separators");
    }
    let mut params = file.params;
    apply_overrides(&mut params, req.overrides)?;
    Ok(Resolved {
        output_dir: file.output_dir.unwrap_or_else(|| name.clone()),
        name,
        module: file.module,
        master_seed: req.seed.or(file.master_seed).unwrap_or(0),
        params,
    })
}

/// Scenario files named by `path`: the file itself, or every `*.toml` in the
/// directory in name order.
pub fn scenario_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no scenario files (*.toml) in {}", path.display());
    }
    Ok(out)
}

/// `key=value` pairs; dotted keys reach into nested tables and values are
/// parsed as TOML, falling back to a bare string.
pub fn apply_overrides(params: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let Some((key, raw)) = o.split_once('=') else {
            bail!("parameter override `{o}` is not of the form key=value");
        };
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            bail!("parameter override `{o}` has an empty key segment");
        }
        let mut table = &mut *params;
        for p in &parts[..parts.len() - 1] {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = match entry {
                toml::Value::Table(t) => t,
                _ => bail!("parameter override `{o}`: `{p}` is not a table"),
            };
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_toml_values_and_nest() {
        let mut t = toml::Table::new();
        apply_overrides(
            &mut t,
            &[
                "k=0.05".into(),
                "state.probabilities=[0.3, 0.7]".into(),
                "mode=fast".into(),
            ],
        )
        .unwrap();
        assert_eq!(t["k"].as_float(), Some(0.05));
        assert_eq!(t["state"]["probabilities"].as_array().unwrap().len(), 2);
        assert_eq!(t["mode"].as_str(), Some("fast"));
        assert!(apply_overrides(&mut t, &["novalue".into()]).is_err());
        assert!(apply_overrides(&mut t, &["k.x=1".into()]).is_err());
    }
}
