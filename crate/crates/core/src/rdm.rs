//! Random discontinuous motion: at every discrete instant the particle stays
//! at one site drawn from `|psi|^2`, independently of the other instants.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::hilbert::NORM_TOLERANCE;
use crate::schrodinger::{position_density, GridWavefunction, GRID_NORM_TOLERANCE};
use crate::seed::rng_from_seed;

/// Magic bytes opening a binary trajectory file.
pub const RUN_MAGIC: [u8; 4] = *b"RDMT";
/// Current binary format version.
pub const RUN_FORMAT_VERSION: u16 = 1;

/// One particle's stays, one site index per instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayTrajectory {
    stays: Vec<u32>,
    sites: usize,
    dt_instant: f64,
    seed: u64,
}

impl StayTrajectory {
    pub fn new(stays: Vec<u32>, sites: usize, dt_instant: f64, seed: u64) -> Result<Self> {
        if let Some(bad) = stays.iter().find(|s| **s as usize >= sites) {
            return Err(invalid(format!("stay index {bad} out of range for {sites} sites")));
        }
        if !(dt_instant > 0.0 && dt_instant.is_finite()) {
            return Err(invalid("instant duration must be positive"));
        }
        Ok(Self {
            stays,
            sites,
            dt_instant,
            seed,
        })
    }

    pub fn instants(&self) -> usize {
        self.stays.len()
    }
    pub fn stays(&self) -> &[u32] {
        &self.stays
    }
    pub fn sites(&self) -> usize {
        self.sites
    }
    pub fn dt_instant(&self) -> f64 {
        self.dt_instant
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn with_dt_instant(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("instant duration must be positive"));
        }
        self.dt_instant = dt;
        Ok(self)
    }

    /// Time of instant `i`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt_instant
    }
}

/// Maps site indices to positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub x0: f64,
    pub dx: f64,
}

impl Lattice {
    pub fn position(&self, site: u32) -> f64 {
        self.x0 + site as f64 * self.dx
    }
}

/// Contiguous block of sites `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub start: usize,
    pub len: usize,
}

impl Region {
    pub fn new(start: usize, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(invalid("region must not be empty"));
        }
        Ok(Self { start, len })
    }
    pub fn end(&self) -> usize {
        self.start + self.len
    }
    pub fn contains(&self, site: usize) -> bool {
        site >= self.start && site < self.end()
    }
}

/// Inverse-CDF sampler over a discrete distribution.
#[derive(Debug, Clone)]
pub(crate) struct DiscreteSampler {
    cdf: Vec<f64>,
}

impl DiscreteSampler {
    pub fn new(probs: &[f64], tolerance: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("distribution must have at least one entry"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let mut acc = 0.0;
        let cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if (acc - 1.0).abs() > tolerance {
            return Err(Error::NotNormalized { total: acc, tolerance });
        }
        Ok(Self { cdf })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().unwrap();
        let u = rng.random::<f64>() * total;
        self.cdf.partition_point(|c| *c <= u).min(self.cdf.len() - 1)
    }
}

/// Draws `n` iid stays from the probability vector `probs`.
pub fn sample_stays(probs: &[f64], n: usize, seed: u64) -> Result<StayTrajectory> {
    if n == 0 {
        return Err(invalid("need at least one instant"));
    }
    let sampler = DiscreteSampler::new(probs, NORM_TOLERANCE)?;
    let mut rng = rng_from_seed(seed);
    let stays = (0..n).map(|_| sampler.sample(&mut rng) as u32).collect();
    StayTrajectory::new(stays, probs.len(), 1.0, seed)
}

/// Draws stays from the binned density `|psi_k|^2 dx` of a grid wavefunction.
pub fn sample_stays_grid(psi: &GridWavefunction, n: usize, seed: u64) -> Result<StayTrajectory> {
    let probs: Vec<f64> = position_density(psi).iter().map(|r| r * psi.dx()).collect();
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > GRID_NORM_TOLERANCE {
        return Err(Error::NotNormalized {
            total,
            tolerance: GRID_NORM_TOLERANCE,
        });
    }
    let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
    sample_stays(&probs, n, seed)
}

/// Fraction of instants spent at each site.
pub fn empirical_density(t: &StayTrajectory) -> Vec<f64> {
    let counts = site_counts(t);
    let n = t.instants().max(1) as f64;
    counts.iter().map(|c| *c as f64 / n).collect()
}

pub fn site_counts(t: &StayTrajectory) -> Vec<u64> {
    let mut counts = vec![0u64; t.sites()];
    for s in t.stays() {
        counts[*s as usize] += 1;
    }
    counts
}

/// `Q |psi(x)|^2`.
pub fn effective_charge_density(psi: &GridWavefunction, q: f64) -> Vec<f64> {
    position_density(psi).iter().map(|r| q * r).collect()
}

/// One branch of an entangled two-particle state: with probability `weight`
/// particle 1 is found in `region1` and particle 2 in `region2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntangledBranch {
    pub weight: f64,
    pub region1: Region,
    pub region2: Region,
}

/// Stays of two particles sampled on a shared clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedStayTrajectory {
    pub stays1: Vec<u32>,
    pub stays2: Vec<u32>,
    pub branches1: Vec<u32>,
    pub branches2: Vec<u32>,
    pub sites: usize,
    pub dt_instant: f64,
    pub seed: u64,
}

impl PairedStayTrajectory {
    pub fn instants(&self) -> usize {
        self.stays1.len()
    }

    /// Number of instants at which the two particles' branch labels agree.
    pub fn synchronized_instants(&self) -> usize {
        self.branches1
            .iter()
            .zip(&self.branches2)
            .filter(|(a, b)| a == b)
            .count()
    }

    fn validate(&self) -> Result<()> {
        let n = self.stays1.len();
        for len in [self.stays2.len(), self.branches1.len(), self.branches2.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if self
            .stays1
            .iter()
            .chain(&self.stays2)
            .any(|s| *s as usize >= self.sites)
        {
            return Err(invalid("stay index out of range"));
        }
        Ok(())
    }
}

/// Per instant: draw a branch by weight, then each particle's site uniformly
/// inside that branch's region for it. Both particles carry the same branch
/// label at every instant.
pub fn sample_entangled_stays(branches: &[EntangledBranch], n: usize, seed: u64) -> Result<PairedStayTrajectory> {
    if n == 0 {
        return Err(invalid("need at least one instant"));
    }
    let weights: Vec<f64> = branches.iter().map(|b| b.weight).collect();
    let sampler = DiscreteSampler::new(&weights, NORM_TOLERANCE)?;
    for b in branches {
        if b.region1.len == 0 || b.region2.len == 0 {
            return Err(invalid("branch regions must not be empty"));
        }
    }
    let sites = branches
        .iter()
        .map(|b| b.region1.end().max(b.region2.end()))
        .max()
        .unwrap_or(0);
    let mut rng = rng_from_seed(seed);
    let mut out = PairedStayTrajectory {
        stays1: Vec::with_capacity(n),
        stays2: Vec::with_capacity(n),
        branches1: Vec::with_capacity(n),
        branches2: Vec::with_capacity(n),
        sites,
        dt_instant: 1.0,
        seed,
    };
    for _ in 0..n {
        let k = sampler.sample(&mut rng);
        let b = &branches[k];
        out.stays1
            .push((b.region1.start + rng.random_range(0..b.region1.len)) as u32);
        out.stays2
            .push((b.region2.start + rng.random_range(0..b.region2.len)) as u32);
        out.branches1.push(k as u32);
        out.branches2.push(k as u32);
    }
    Ok(out)
}

/// `instant,site` rows.
pub fn write_stays_csv<W: Write>(t: &StayTrajectory, mut out: W) -> Result<()> {
    writeln!(out, "instant,site")?;
    for (i, s) in t.stays().iter().enumerate() {
        writeln!(out, "{i},{s}")?;
    }
    Ok(())
}

/// `instant,site1,site2,branch1,branch2` rows.
pub fn write_paired_csv<W: Write>(t: &PairedStayTrajectory, mut out: W) -> Result<()> {
    writeln!(out, "instant,site1,site2,branch1,branch2")?;
    for i in 0..t.instants() {
        writeln!(
            out,
            "{i},{},{},{},{}",
            t.stays1[i], t.stays2[i], t.branches1[i], t.branches2[i]
        )?;
    }
    Ok(())
}

/// Contents of a binary run file.
#[derive(Debug, Clone, PartialEq)]
pub enum RunRecord {
    Single(StayTrajectory),
    Paired(PairedStayTrajectory),
}

const KIND_SINGLE: u8 = 0;
const KIND_PAIRED: u8 = 1;

/// Binary layout, little-endian:
///
/// ```text
/// magic    [u8; 4]  "RDMT"
/// version  u16      1
/// kind     u8       0 = single, 1 = paired
/// reserved u8       0
/// dims     u32      number of sites
/// seed     u64
/// instants u64
/// dt       f64      instant duration
/// data     u32 * instants          (single)
///          u32 * 4 * instants      (paired: site1, site2, branch1, branch2 per instant)
/// ```
pub fn write_run_binary<W: Write>(record: &RunRecord, mut out: W) -> Result<()> {
    let (kind, dims, seed, n, dt) = match record {
        RunRecord::Single(t) => (KIND_SINGLE, t.sites, t.seed, t.instants(), t.dt_instant),
        RunRecord::Paired(p) => (KIND_PAIRED, p.sites, p.seed, p.instants(), p.dt_instant),
    };
    let dims = u32::try_from(dims).map_err(|_| invalid("too many sites for the binary format"))?;
    out.write_all(&RUN_MAGIC)?;
    out.write_u16::<LittleEndian>(RUN_FORMAT_VERSION)?;
    out.write_u8(kind)?;
    out.write_u8(0)?;
    out.write_u32::<LittleEndian>(dims)?;
    out.write_u64::<LittleEndian>(seed)?;
    out.write_u64::<LittleEndian>(n as u64)?;
    out.write_f64::<LittleEndian>(dt)?;
    match record {
        RunRecord::Single(t) => {
            for s in t.stays() {
                out.write_u32::<LittleEndian>(*s)?;
            }
        }
        RunRecord::Paired(p) => {
            for i in 0..n {
                for v in [p.stays1[i], p.stays2[i], p.branches1[i], p.branches2[i]] {
                    out.write_u32::<LittleEndian>(v)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_run_binary<R: Read>(mut input: R) -> Result<RunRecord> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != RUN_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = input.read_u16::<LittleEndian>()?;
    if version != RUN_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = input.read_u8()?;
    let _reserved = input.read_u8()?;
    let dims = input.read_u32::<LittleEndian>()? as usize;
    let seed = input.read_u64::<LittleEndian>()?;
    let n = input.read_u64::<LittleEndian>()? as usize;
    let dt = input.read_f64::<LittleEndian>()?;
    match kind {
        KIND_SINGLE => {
            let mut stays = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                stays.push(input.read_u32::<LittleEndian>()?);
            }
            Ok(RunRecord::Single(StayTrajectory::new(stays, dims, dt, seed)?))
        }
        KIND_PAIRED => {
            let mut p = PairedStayTrajectory {
                stays1: Vec::new(),
                stays2: Vec::new(),
                branches1: Vec::new(),
                branches2: Vec::new(),
                sites: dims,
                dt_instant: dt,
                seed,
            };
            for _ in 0..n {
                p.stays1.push(input.read_u32::<LittleEndian>()?);
                p.stays2.push(input.read_u32::<LittleEndian>()?);
                p.branches1.push(input.read_u32::<LittleEndian>()?);
                p.branches2.push(input.read_u32::<LittleEndian>()?);
            }
            p.validate()?;
            Ok(RunRecord::Paired(p))
        }
        other => Err(Error::Format(format!("unknown record kind {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{binomial_sigma, chi_square_gof, loglog_slope, total_variation};
    use crate::C64;

    fn two_box(a2: f64, n: usize, box_len: usize) -> Vec<f64> {
        // box 1 at the start, box 2 at the end, uniform inside each
        let mut p = vec![0.0; n];
        for k in 0..box_len {
            p[k] = a2 / box_len as f64;
            p[n - 1 - k] = (1.0 - a2) / box_len as f64;
        }
        p
    }

    #[test]
    fn point_distribution() {
        let t = sample_stays(&[0.0, 0.0, 1.0, 0.0], 1000, 1).unwrap();
        assert!(t.stays().iter().all(|s| *s == 2));
        assert_eq!(empirical_density(&t), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            sample_stays(&[0.5, 0.6], 10, 0),
            Err(Error::NotNormalized { .. })
        ));
        assert!(sample_stays(&[1.0], 0, 0).is_err());
        assert!(sample_stays(&[1.5, -0.5], 10, 0).is_err());
    }

    #[test]
    fn two_boxes_at_equal_weight() {
        let n = 100_000;
        let t = sample_stays(&two_box(0.5, 40, 10), n, 11).unwrap();
        let box1 = t.stays().iter().filter(|s| **s < 10).count() as f64 / n as f64;
        assert!((box1 - 0.5).abs() < 3.0 * binomial_sigma(0.5, n));
    }

    #[test]
    fn uniform_passes_chi_square() {
        let d = 16;
        let probs = vec![1.0 / d as f64; d];
        let t = sample_stays(&probs, 100_000, 5).unwrap();
        assert!(chi_square_gof(&site_counts(&t), &probs).unwrap().p_value > 1e-3);
    }

    #[test]
    fn reproducible_from_seed() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(
            sample_stays(&probs, 5000, 9).unwrap(),
            sample_stays(&probs, 5000, 9).unwrap()
        );
        assert_ne!(
            sample_stays(&probs, 5000, 9).unwrap(),
            sample_stays(&probs, 5000, 10).unwrap()
        );
    }

    #[test]
    fn two_peak_grid_histogram() {
        let n = 128;
        let psi = GridWavefunction::from_fn(-16.0, 0.25, n, 1.0, 1.0, |x| {
            let a = (0.2f64).sqrt() * (-(x + 8.0).powi(2) / 2.0).exp();
            let b = (0.8f64).sqrt() * (-(x - 8.0).powi(2) / 2.0).exp();
            C64::new(a + b, 0.0)
        })
        .unwrap();
        let t = sample_stays_grid(&psi, 200_000, 3).unwrap();
        let h = empirical_density(&t);
        let left: f64 = h[..n / 2].iter().sum();
        assert!((left - 0.2).abs() < 3.0 * binomial_sigma(0.2, 200_000));
    }

    #[test]
    fn hydrogen_like_profile_within_poisson_errors() {
        let n_sites = 200;
        let psi =
            GridWavefunction::from_fn(-10.0, 0.1, n_sites, 1.0, 1.0, |x| C64::new((-x.abs()).exp(), 0.0)).unwrap();
        let probs: Vec<f64> = position_density(&psi).iter().map(|r| r * psi.dx()).collect();
        let n = 1_000_000;
        let t = sample_stays_grid(&psi, n, 21).unwrap();
        for (c, p) in site_counts(&t).iter().zip(&probs) {
            let expected = p * n as f64;
            assert!((*c as f64 - expected).abs() < 5.0 * expected.sqrt().max(1.0));
        }
    }

    #[test]
    fn total_variation_falls_as_inverse_root_n() {
        let probs: Vec<f64> = (1..=20).map(|i| i as f64 / 210.0).collect();
        let ns = [1_000usize, 10_000, 100_000];
        let tv: Vec<f64> = ns
            .iter()
            .map(|&n| {
                (0..20)
                    .map(|r| total_variation(&empirical_density(&sample_stays(&probs, n, 1000 + r).unwrap()), &probs))
                    .sum::<f64>()
                    / 20.0
            })
            .collect();
        let slope = loglog_slope(&ns.map(|n| n as f64), &tv);
        assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn charge_density_examples() {
        let psi = GridWavefunction::from_fn(0.0, 0.5, 40, 1.0, 1.0, |x| {
            let amp = if x < 5.0 {
                0.3f64.sqrt()
            } else if x >= 15.0 {
                0.7f64.sqrt()
            } else {
                0.0
            };
            C64::new(amp, 0.0)
        })
        .unwrap();
        assert!(effective_charge_density(&psi, 0.0).iter().all(|q| *q == 0.0));
        let q = effective_charge_density(&psi, 2.0);
        let box1: f64 = q[..10].iter().sum::<f64>() * psi.dx();
        assert!((box1 - 0.6).abs() < 1e-12);
        let total: f64 = effective_charge_density(&psi, -1.0).iter().sum::<f64>() * psi.dx();
        assert!((total + 1.0).abs() < 1e-8);
    }

    fn pair_branches(a2: f64) -> Vec<EntangledBranch> {
        vec![
            EntangledBranch {
                weight: a2,
                region1: Region { start: 0, len: 10 },
                region2: Region { start: 100, len: 10 },
            },
            EntangledBranch {
                weight: 1.0 - a2,
                region1: Region { start: 20, len: 10 },
                region2: Region { start: 120, len: 10 },
            },
        ]
    }

    #[test]
    fn entangled_stays_are_synchronized() {
        let n = 100_000;
        let all_u = sample_entangled_stays(&pair_branches(1.0), 1000, 2).unwrap();
        assert!(all_u.branches1.iter().all(|b| *b == 0));
        for a2 in [0.5, 0.3] {
            let p = sample_entangled_stays(&pair_branches(a2), n, 4).unwrap();
            assert_eq!(p.synchronized_instants(), n);
            let freq = p.branches1.iter().filter(|b| **b == 0).count() as f64 / n as f64;
            assert!((freq - a2).abs() < 3.0 * binomial_sigma(a2, n));
            let branches = pair_branches(a2);
            for i in 0..n {
                let b = &branches[p.branches1[i] as usize];
                assert!(b.region1.contains(p.stays1[i] as usize));
                assert!(b.region2.contains(p.stays2[i] as usize));
            }
        }
        assert!(sample_entangled_stays(&pair_branches(0.5)[..1], 10, 0).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let t = sample_stays(&[0.25; 4], 100, 8).unwrap().with_dt_instant(0.5).unwrap();
        let mut buf = Vec::new();
        write_run_binary(&RunRecord::Single(t.clone()), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"RDMT");
        assert_eq!(buf.len(), 36 + 400);
        assert_eq!(read_run_binary(&buf[..]).unwrap(), RunRecord::Single(t));

        let p = sample_entangled_stays(&pair_branches(0.4), 50, 1).unwrap();
        let mut buf = Vec::new();
        write_run_binary(&RunRecord::Paired(p.clone()), &mut buf).unwrap();
        assert_eq!(read_run_binary(&buf[..]).unwrap(), RunRecord::Paired(p));

        buf[0] = b'X';
        assert!(matches!(read_run_binary(&buf[..]), Err(Error::Format(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn stays_index_the_support(w in proptest::collection::vec(0.0f64..1.0, 1..12), seed in any::<u64>()) {
                let total: f64 = w.iter().sum();
                prop_assume!(total > 1e-3);
                let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
                let t = sample_stays(&probs, 500, seed).unwrap();
                prop_assert_eq!(t.instants(), 500);
                for s in t.stays() {
                    prop_assert!(probs[*s as usize] > 0.0);
                }
            }

            #[test]
            fn charge_integrates_to_q(q in -5.0f64..5.0, c in proptest::collection::vec(-1.0f64..1.0, 16)) {
                prop_assume!(c.iter().any(|x| x.abs() > 1e-3));
                let psi = GridWavefunction::from_fn(0.0, 0.5, 16, 1.0, 1.0, |x| {
                    let k = (x / 0.5).round() as usize;
                    C64::new(c[k], c[(k + 3) % 16])
                }).unwrap();
                let total: f64 = effective_charge_density(&psi, q).iter().sum::<f64>() * psi.dx();
                prop_assert!((total - q).abs() < 1e-8);
            }

            #[test]
            fn entangled_labels_always_agree(a2 in 0.0f64..=1.0, seed in any::<u64>()) {
                let branches = vec![
                    EntangledBranch { weight: a2, region1: Region { start: 0, len: 3 }, region2: Region { start: 5, len: 3 } },
                    EntangledBranch { weight: 1.0 - a2, region1: Region { start: 10, len: 3 }, region2: Region { start: 15, len: 3 } },
                ];
                let p = sample_entangled_stays(&branches, 300, seed).unwrap();
                prop_assert_eq!(p.synchronized_instants(), 300);
            }
        }
    }
}
