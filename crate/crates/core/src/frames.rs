//! Relativistic bookkeeping for stay and collapse events in 1+1 dimensions.
//!
//! Coordinates carry `c` explicitly, so natural (`c = 1`) and SI units use the
//! same code. Stay events from a discrete trajectory are matched across a
//! boost by transformed-time coincidence within a stated tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rdm::{Lattice, PairedStayTrajectory, StayTrajectory};

/// Relative tolerance for the built-in coincidence checks.
const COINCIDENCE_CHECK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub frame: String,
    pub c: f64,
}

impl Event {
    pub fn new(t: f64, x: f64, frame: impl Into<String>, c: f64) -> Result<Self> {
        if !t.is_finite() || !x.is_finite() {
            return Err(invalid(format!("event coordinates must be finite, got t={t}, x={x}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("speed of light must be positive"));
        }
        Ok(Self {
            t,
            x,
            frame: frame.into(),
            c,
        })
    }

    /// Event in frame `S` with `c = 1`.
    pub fn natural(t: f64, x: f64) -> Self {
        Self::new(t, x, "S", 1.0).expect("finite natural event")
    }
}

fn check_speed(v: f64, c: f64) -> Result<f64> {
    if !v.is_finite() || v.abs() >= c {
        return Err(Error::Superluminal { v, c });
    }
    Ok(1.0 / (1.0 - (v / c).powi(2)).sqrt())
}

fn boosted_tag(frame: &str, v: f64) -> String {
    format!("{frame}'(v={v})")
}

/// Standard boost to the frame moving with velocity `v` along `x`.
pub fn lorentz_transform(e: &Event, v: f64) -> Result<Event> {
    let gamma = check_speed(v, e.c)?;
    Ok(Event {
        t: gamma * (e.t - e.x * v / (e.c * e.c)),
        x: gamma * (e.x - v * e.t),
        frame: boosted_tag(&e.frame, v),
        c: e.c,
    })
}

/// `c^2 dt^2 - dx^2`; positive for timelike pairs.
pub fn interval(a: &Event, b: &Event) -> Result<f64> {
    if a.c != b.c {
        return Err(invalid("events use different values of c"));
    }
    let dt = b.t - a.t;
    let dx = b.x - a.x;
    Ok(a.c * a.c * dt * dt - dx * dx)
}

fn verify_coincident(a: &Event, b: &Event, v: f64) -> Result<()> {
    let (ta, tb) = (lorentz_transform(a, v)?.t, lorentz_transform(b, v)?.t);
    let scale = a.t.abs() + b.t.abs() + (a.x.abs() + b.x.abs()) / a.c;
    if (ta - tb).abs() > COINCIDENCE_CHECK * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NumericFailure {
            step: 0,
            reason: format!("boosted times {ta} and {tb} differ at v = {v}"),
        });
    }
    Ok(())
}

/// Velocity of the frame in which `e1` and `e2` are simultaneous,
/// `v = c^2 (t2 - t1) / (x2 - x1)`.
pub fn simultaneity_frame(e1: &Event, e2: &Event) -> Result<f64> {
    if interval(e1, e2)? >= 0.0 {
        return Err(Error::NotSpacelike);
    }
    let v = e1.c * e1.c * (e2.t - e1.t) / (e2.x - e1.x);
    check_speed(v, e1.c)?;
    verify_coincident(e1, e2, v)?;
    Ok(v)
}

/// Simultaneous stay of both particles of an entangled pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStay {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
}

/// `(v', v'')`: the frame in which particle 1's stay at `a` is simultaneous
/// with particle 2's stay at `b`, and the frame pairing particle 2 at `a`
/// with particle 1 at `b`.
pub fn entangled_frame_velocities(a: PairStay, b: PairStay, c: f64) -> Result<(f64, f64)> {
    let one = |x_a: f64, x_b: f64| -> Result<f64> {
        let ea = Event::new(a.t, x_a, "S", c)?;
        let eb = Event::new(b.t, x_b, "S", c)?;
        if a.t == b.t {
            return Ok(0.0);
        }
        let v = c * c * (a.t - b.t) / (x_a - x_b);
        check_speed(v, c)?;
        verify_coincident(&ea, &eb, v)?;
        Ok(v)
    };
    Ok((one(a.x1, b.x2)?, one(a.x2, b.x1)?))
}

/// Velocity and one-way light speed directionality in `S` (`k`) and in the
/// moving frame `S'` (`k_prime`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynchronyParams {
    pub v: f64,
    pub k: f64,
    pub k_prime: f64,
    pub c: f64,
}

impl SynchronyParams {
    pub fn new(v: f64, k: f64, k_prime: f64, c: f64) -> Result<Self> {
        check_speed(v, c)?;
        for (name, val) in [("k", k), ("k'", k_prime)] {
            if !(-1.0..=1.0).contains(&val) {
                return Err(invalid(format!("{name} = {val} outside [-1, 1]")));
            }
        }
        Ok(Self { v, k, k_prime, c })
    }

    /// Einstein synchrony in both frames.
    pub fn standard(v: f64, c: f64) -> Result<Self> {
        Self::new(v, 0.0, 0.0, c)
    }

    /// Clocks in `S'` set from the isotropic frame `S`: `k = 0`, `k' = -beta`.
    pub fn absolute(v: f64, c: f64) -> Result<Self> {
        Self::new(v, 0.0, -v / c, c)
    }

    pub fn beta(&self) -> f64 {
        self.v / self.c
    }

    pub fn eta(&self) -> Result<f64> {
        let b = self.beta();
        let d = (1.0 + b * self.k).powi(2) - b * b;
        if !(d > 0.0) {
            return Err(invalid(format!("degenerate synchrony: (1 + beta k)^2 - beta^2 = {d}")));
        }
        Ok(1.0 / d.sqrt())
    }
}

/// Edwards-Winnie transformation with synchrony parameters `k`, `k'`.
pub fn edwards_winnie_transform(e: &Event, p: &SynchronyParams) -> Result<Event> {
    if e.c != p.c {
        return Err(invalid("event and synchrony parameters use different c"));
    }
    let eta = p.eta()?;
    let b = p.beta();
    let (k, kp) = (p.k, p.k_prime);
    Ok(Event {
        t: eta * (1.0 + b * (k + kp)) * e.t + eta * (b * (k * k - 1.0) + k - kp) * e.x / p.c,
        x: eta * (e.x - p.v * e.t),
        frame: boosted_tag(&e.frame, p.v),
        c: p.c,
    })
}

pub fn absolute_synchrony_transform(e: &Event, v: f64) -> Result<Event> {
    edwards_winnie_transform(e, &SynchronyParams::absolute(v, e.c)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneWaySpeeds {
    pub plus_x: f64,
    pub minus_x: f64,
    pub plus_x_prime: f64,
    pub minus_x_prime: f64,
}

impl OneWaySpeeds {
    /// Two-way speed in `S`, the harmonic mean of the one-way speeds.
    pub fn two_way(&self) -> f64 {
        2.0 / (1.0 / self.plus_x + 1.0 / self.minus_x)
    }
    pub fn two_way_prime(&self) -> f64 {
        2.0 / (1.0 / self.plus_x_prime + 1.0 / self.minus_x_prime)
    }
}

/// `c/(1 - k)`, `c/(1 + k)` and the same with `k'`.
pub fn one_way_speeds(p: &SynchronyParams) -> Result<OneWaySpeeds> {
    if p.k.abs() >= 1.0 || p.k_prime.abs() >= 1.0 {
        return Err(invalid(format!(
            "|k| = 1 gives an infinite one-way speed (k = {}, k' = {})",
            p.k, p.k_prime
        )));
    }
    Ok(OneWaySpeeds {
        plus_x: p.c / (1.0 - p.k),
        minus_x: p.c / (1.0 + p.k),
        plus_x_prime: p.c / (1.0 - p.k_prime),
        minus_x_prime: p.c / (1.0 + p.k_prime),
    })
}

/// Half the boosted spacing between consecutive instants.
pub fn default_coincidence_tolerance(dt_instant: f64, v: f64, c: f64) -> Result<f64> {
    Ok(0.5 * check_speed(v, c)? * dt_instant)
}

fn boosted_times(stays: &[u32], lattice: &Lattice, dt: f64, v: f64, c: f64) -> Result<Vec<f64>> {
    let gamma = check_speed(v, c)?;
    Ok(stays
        .iter()
        .enumerate()
        .map(|(i, s)| gamma * (i as f64 * dt - v * lattice.position(*s) / (c * c)))
        .collect())
}

/// Indices of `times` sorted by value.
fn sorted_order(times: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|a, b| times[*a].total_cmp(&times[*b]));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStats {
    pub v: f64,
    pub tolerance: f64,
    pub pairs: u64,
    pub kept: u64,
    pub reversed: u64,
    pub kept_fraction: f64,
    pub reversed_fraction: f64,
    /// Standard error of `reversed_fraction` when every instant carries one
    /// branch label, drawn independently per instant, shared by both
    /// particles. Pairs that share an instant are correlated, so this
    /// exceeds the binomial error unless the branch weights are equal.
    pub reversed_se: f64,
}

/// Transforms both particles' stays to the frame moving at `v`, pairs every
/// particle-1 stay with each particle-2 stay whose boosted time lies within
/// `tolerance`, and classifies the pairs by whether their branch labels
/// agree.
pub fn boosted_correlation_stats(
    traj: &PairedStayTrajectory,
    lattice1: &Lattice,
    lattice2: &Lattice,
    v: f64,
    c: f64,
    tolerance: f64,
) -> Result<CorrelationStats> {
    if !(tolerance >= 0.0) {
        return Err(invalid("coincidence tolerance must be non-negative"));
    }
    let dt = traj.dt_instant;
    let t1 = boosted_times(&traj.stays1, lattice1, dt, v, c)?;
    let t2 = boosted_times(&traj.stays2, lattice2, dt, v, c)?;
    let order2 = sorted_order(&t2);
    let sorted2: Vec<f64> = order2.iter().map(|i| t2[*i]).collect();
    let matches: Vec<(u64, u64, Vec<u32>)> = t1
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let lo = sorted2.partition_point(|s| *s < t - tolerance);
            let hi = sorted2.partition_point(|s| *s <= t + tolerance);
            let (mut k, mut r) = (0u64, 0u64);
            let mut partners = Vec::new();
            for j in &order2[lo..hi] {
                if traj.branches1[i] == traj.branches2[*j] {
                    k += 1;
                } else {
                    r += 1;
                }
                if *j != i {
                    partners.push(*j as u32);
                }
            }
            (k, r, partners)
        })
        .collect();
    let kept: u64 = matches.iter().map(|m| m.0).sum();
    let reversed: u64 = matches.iter().map(|m| m.1).sum();
    let pairs = kept + reversed;
    if pairs == 0 {
        return Err(Error::InsufficientOverlap { tolerance });
    }
    Ok(CorrelationStats {
        v,
        tolerance,
        pairs,
        kept,
        reversed,
        kept_fraction: kept as f64 / pairs as f64,
        reversed_fraction: reversed as f64 / pairs as f64,
        reversed_se: reversed_standard_error(&traj.branches1, &matches, pairs),
    })
}

/// `sqrt(Var R) / pairs` for the reversed count `R` over pairs of distinct
/// instants. With label weights `w_b` (estimated from the labels), one pair
/// has variance `q(1 - q)` with `q = 1 - sum w^2`, and two pairs sharing one
/// instant have covariance `sum w (1 - w)^2 - q^2`.
fn reversed_standard_error(labels: &[u32], matches: &[(u64, u64, Vec<u32>)], pairs: u64) -> f64 {
    let n = labels.len() as f64;
    let mut counts: Vec<f64> = Vec::new();
    for &b in labels {
        if counts.len() <= b as usize {
            counts.resize(b as usize + 1, 0.0);
        }
        counts[b as usize] += 1.0;
    }
    let w: Vec<f64> = counts.iter().map(|c| c / n).collect();
    let q = 1.0 - w.iter().map(|w| w * w).sum::<f64>();
    let cov = w.iter().map(|w| w * (1.0 - w).powi(2)).sum::<f64>() - q * q;
    let mut degree = vec![0u64; labels.len()];
    let mut distinct = 0u64;
    for (i, (_, _, partners)) in matches.iter().enumerate() {
        degree[i] += partners.len() as u64;
        distinct += partners.len() as u64;
        for j in partners {
            degree[*j as usize] += 1;
        }
    }
    let shared: f64 = degree.iter().map(|d| (d * d.saturating_sub(1) / 2) as f64).sum();
    let var = distinct as f64 * q * (1.0 - q) + 2.0 * cov * shared;
    var.max(0.0).sqrt() / pairs as f64
}

/// Pairs of distinct instants whose boosted times agree within `tolerance`
/// while the particle sits at different positions: the particle appears at
/// two places at once in the moving frame.
pub fn multiparticle_appearance_scan(
    traj: &StayTrajectory,
    lattice: &Lattice,
    v: f64,
    c: f64,
    tolerance: f64,
) -> Result<u64> {
    if !(tolerance >= 0.0) {
        return Err(invalid("coincidence tolerance must be non-negative"));
    }
    let times = boosted_times(traj.stays(), lattice, traj.dt_instant(), v, c)?;
    let order = sorted_order(&times);
    let stays = traj.stays();
    Ok((0..order.len())
        .into_par_iter()
        .map(|a| {
            let (i, ti) = (order[a], times[order[a]]);
            order[a + 1..]
                .iter()
                .take_while(|j| times[**j] - ti <= tolerance)
                .filter(|j| stays[**j] != stays[i])
                .count() as u64
        })
        .sum())
}

/// Interval in a moving frame between two collapse events that are
/// simultaneous in `S`: one removes a branch of weight `w_removed` in one
/// region, the other renormalizes the surviving branch elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseWindow {
    pub start: f64,
    pub end: f64,
    /// Total norm between the two events as seen in the moving frame.
    pub intermediate_norm: f64,
}

pub fn collapse_window(removal: &Event, growth: &Event, w_removed: f64, v: f64) -> Result<CollapseWindow> {
    if !(0.0..=1.0).contains(&w_removed) {
        return Err(invalid("branch weight must lie in [0, 1]"));
    }
    let r = lorentz_transform(removal, v)?.t;
    let g = lorentz_transform(growth, v)?.t;
    // removal first: the particle exists only with the surviving weight;
    // growth first: both branches coexist with total norm above one
    let intermediate_norm = if r < g {
        1.0 - w_removed
    } else if g < r {
        1.0 + w_removed
    } else {
        1.0
    };
    Ok(CollapseWindow {
        start: r.min(g),
        end: r.max(g),
        intermediate_norm,
    })
}
