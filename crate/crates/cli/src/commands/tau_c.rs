use anyhow::Result;
use rdmsim::collapse::{
    collapse_time, identical_subsystems_delta_e, reference_scenarios, relativistic_collapse_time, CollapseConfig,
    DeltaEReducer,
};
use rdmsim::constants::C_M_PER_S;
use serde::Deserialize;

use super::{positive, require};
use crate::output::{RunOutput, Table};
use crate::row;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct System {
    pub name: String,
    /// Energy uncertainty in eV.
    pub delta_e_ev: Option<f64>,
    /// Or `count` identical subsystems of spread `each_ev`, combined by
    /// `reducer`.
    pub count: Option<u64>,
    pub each_ev: Option<f64>,
    #[serde(default = "rms")]
    pub reducer: DeltaEReducer,
}

fn rms() -> DeltaEReducer {
    DeltaEReducer::Rms
}

impl System {
    fn delta_e(&self) -> Result<f64> {
        let de = match (self.delta_e_ev, self.count, self.each_ev) {
            (Some(de), None, None) => de,
            (None, Some(n), Some(each)) => {
                positive(&format!("each_ev of `{}`", self.name), each)?;
                require(n > 0, || format!("count of `{}` must be positive", self.name))?;
                identical_subsystems_delta_e(n, each, self.reducer)
            }
            _ => anyhow::bail!(
                "precondition violated: system `{}` needs either delta_e_ev or both count and each_ev",
                self.name
            ),
        };
        positive(&format!("energy uncertainty of `{}`", self.name), de)?;
        Ok(de)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// `"reference"` evaluates the built-in table of quoted estimates.
    pub pack: Option<String>,
    #[serde(default)]
    pub systems: Vec<System>,
    /// Observer velocities (m/s) for the relativistic factor `(1 + v/c)^-2`.
    #[serde(default)]
    pub velocities_m_s: Vec<f64>,
}

pub fn prepare(p: Params) -> Result<Params> {
    match (&p.pack, p.systems.is_empty()) {
        (Some(name), true) => require(name == "reference", || {
            format!("unknown pack `{name}`, expected `reference`")
        })?,
        (None, false) => {
            for s in &p.systems {
                s.delta_e()?;
            }
        }
        (None, true) => anyhow::bail!("precondition violated: give `pack = \"reference\"` or a list of `systems`"),
        (Some(_), false) => anyhow::bail!("precondition violated: `pack` and `systems` are mutually exclusive"),
    }
    for v in &p.velocities_m_s {
        require(v.abs() < C_M_PER_S, || format!("velocity {v} m/s is not below c"))?;
    }
    Ok(p)
}

pub fn run(p: &Params) -> Result<RunOutput> {
    let cfg = CollapseConfig::physical();
    let mut out = RunOutput::default();
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    if p.pack.is_some() {
        let pack = reference_scenarios();
        let mut t = Table::new(
            "tau_c",
            &[
                "system",
                "delta_e_ev",
                "tau_c_s",
                "target_s",
                "tolerance_factor",
                "within_target",
            ],
        );
        let mut hits = 0;
        for r in &pack {
            hits += r.within_target() as usize;
            t.push(row![
                r.name.as_str(),
                r.delta_e_ev,
                r.tau_c_s,
                r.quoted_target_s,
                r.tolerance_factor,
                r.within_target()
            ]);
            rows.push((r.name.clone(), r.delta_e_ev, r.tau_c_s));
        }
        out.tables.push(t);
        out.note("within_target", hits);
        out.note("systems", pack.len());
        out.line = format!("{hits}/{} systems within their target range", pack.len());
    } else {
        let mut t = Table::new("tau_c", &["system", "delta_e_ev", "tau_c_s"]);
        for s in &p.systems {
            let de = s.delta_e()?;
            let tau = collapse_time(de, &cfg)?;
            t.push(row![s.name.as_str(), de, tau]);
            rows.push((s.name.clone(), de, tau));
        }
        out.tables.push(t);
        out.note("systems", rows.len());
        out.line = format!("{} systems evaluated", rows.len());
    }

    if !p.velocities_m_s.is_empty() {
        let mut t = Table::new("relativistic", &["system", "v_m_s", "factor", "tau_c_s", "regime"]);
        for (name, de, _) in &rows {
            for v in &p.velocities_m_s {
                let r = relativistic_collapse_time(*de, *v, C_M_PER_S, &cfg)?;
                t.push(row![name.as_str(), *v, r.factor, r.tau_c, r.regime.as_str()]);
            }
        }
        out.tables.push(t);
        if let [a, b] = p.velocities_m_s[..] {
            let fa = relativistic_collapse_time(1.0, a, C_M_PER_S, &cfg)?.factor;
            let fb = relativistic_collapse_time(1.0, b, C_M_PER_S, &cfg)?.factor;
            let frac = (fa - fb).abs() / (0.5 * (fa + fb));
            out.note("fractional_difference", frac);
            out.line.push_str(&format!(
                ", fractional tau_c difference between {a} and {b} m/s: {frac:.4e}"
            ));
        }
    }
    Ok(out)
}
