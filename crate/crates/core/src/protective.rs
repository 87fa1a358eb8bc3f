//! Protective measurement with Zeno protection.
//!
//! The pointer couples through `H_I = g(t) P A`. Over one sub-step of length
//! `tau/N` the coupling translates the pointer by `delta_n a_k` in the
//! `a_k`-eigenspace of `A`, with `delta_n = (tau/N) g(t_n)`. Projecting the
//! system back onto `|psi>` then leaves the pointer in
//!
//! ```text
//! Phi_{n+1}(p) = sum_k P_k exp(-i delta_n a_k p / hbar) Phi_n(p),   P_k = |<a_k|psi>|^2
//! ```
//!
//! so the whole run is a pointwise product in momentum space. The norm of
//! the surviving branch is the probability that every projection succeeded.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hilbert::{expectation_value, ComplexVectorState, HermitianOperator};
use crate::rdm::Region;
use crate::schrodinger::{
    fft_wavenumbers, flux_density, position_density, reconstruct_wavefunction, DensityPair, FftPair, GridWavefunction,
};
use crate::C64;

/// Eigenvalues closer than this are treated as one eigenspace.
pub const EIGEN_GROUP_TOLERANCE: f64 = 1e-10;
/// Pointer packets must stay this many widths away from the grid edges.
pub const POINTER_MARGIN_WIDTHS: f64 = 6.0;

/// Gaussian pointer on its own grid, `hbar = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerState {
    pub grid: GridWavefunction,
    pub x0: f64,
    pub w0: f64,
}

impl PointerState {
    /// `w0` is the standard deviation of `|phi|^2`.
    pub fn gaussian(x0: f64, w0: f64, grid_start: f64, dx: f64, n: usize) -> Result<Self> {
        if !(w0 >= 4.0 * dx) {
            return Err(Error::PointerDomain(format!("width {w0} is below 4 dx = {}", 4.0 * dx)));
        }
        let grid = GridWavefunction::gaussian(grid_start, dx, n, x0, w0, 0.0, 1.0, 1.0)?;
        let p = Self { grid, x0, w0 };
        p.check_contains(x0)?;
        Ok(p)
    }

    /// Width 4 on 1024 points spanning [-40, 40), centred at 0.
    pub fn standard() -> Self {
        Self::gaussian(0.0, 4.0, -40.0, 80.0 / 1024.0, 1024).expect("valid default pointer")
    }

    fn check_contains(&self, centre: f64) -> Result<()> {
        let lo = self.grid.x0() + POINTER_MARGIN_WIDTHS * self.w0;
        let hi = self.grid.x0() + self.grid.length() - POINTER_MARGIN_WIDTHS * self.w0;
        if centre < lo || centre > hi {
            return Err(Error::PointerDomain(format!(
                "pointer centre {centre} leaves the usable range [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Time profile of the coupling, normalized so that `integral g dt = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingProfile {
    /// `g = 1 / tau`.
    Constant,
    /// Rises linearly from 0 to `2/tau` at `tau/2` and back to 0.
    Triangular,
}

impl CouplingProfile {
    pub fn value(&self, t: f64, tau: f64) -> f64 {
        if !(0.0..=tau).contains(&t) {
            return 0.0;
        }
        match self {
            Self::Constant => 1.0 / tau,
            Self::Triangular => {
                let half = tau / 2.0;
                let rise = if t <= half { t } else { tau - t };
                2.0 * rise / (half * tau)
            }
        }
    }

    /// Per-step pointer shifts per unit eigenvalue, `(tau/N) g(n tau/N)` for
    /// `n = 1..=N`.
    pub fn step_shifts(&self, n: usize, tau: f64) -> Vec<f64> {
        let h = tau / n as f64;
        (1..=n).map(|k| h * self.value(k as f64 * h, tau)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectiveSetup {
    pub psi: ComplexVectorState,
    pub observable: HermitianOperator,
    /// Number of protective projections.
    pub n: usize,
    pub tau: f64,
    pub profile: CouplingProfile,
    pub pointer: PointerState,
}

impl ProtectiveSetup {
    pub fn new(
        psi: ComplexVectorState,
        observable: HermitianOperator,
        n: usize,
        tau: f64,
        profile: CouplingProfile,
        pointer: PointerState,
    ) -> Result<Self> {
        if psi.dim() != observable.dim() {
            return Err(Error::DimensionMismatch {
                expected: observable.dim(),
                got: psi.dim(),
            });
        }
        if n == 0 {
            return Err(invalid("need at least one protective projection"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("measurement time must be positive"));
        }
        let s = Self {
            psi,
            observable,
            n,
            tau,
            profile,
            pointer,
        };
        let total: f64 = s.profile.step_shifts(n, tau).iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("sampled coupling integrates to {total}, not 1")));
        }
        Ok(s)
    }

    /// Eigenvalues of `A` with the weight and projection of `psi` on each
    /// eigenspace.
    pub fn eigen_components(&self) -> Vec<EigenComponent> {
        eigen_components(&self.psi, &self.observable)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenComponent {
    pub eigenvalue: f64,
    pub weight: f64,
    /// `Pi_k |psi>`.
    pub projection: Vec<C64>,
}

fn eigen_components(psi: &ComplexVectorState, a: &HermitianOperator) -> Vec<EigenComponent> {
    let spec = a.spectrum();
    let d = psi.dim();
    let mut out: Vec<EigenComponent> = Vec::new();
    for (idx, lambda) in spec.eigenvalues.iter().enumerate() {
        let v = spec.eigenvectors.column(idx);
        let overlap: C64 = v.iter().zip(psi.amplitudes()).map(|(vi, c)| vi.conj() * c).sum();
        let part: Vec<C64> = v.iter().map(|vi| vi * overlap).collect();
        match out.last_mut() {
            Some(last) if (lambda - last.eigenvalue).abs() <= EIGEN_GROUP_TOLERANCE * (1.0 + lambda.abs()) => {
                for (p, q) in last.projection.iter_mut().zip(&part) {
                    *p += q;
                }
                last.weight += overlap.norm_sqr();
            }
            _ => out.push(EigenComponent {
                eigenvalue: *lambda,
                weight: overlap.norm_sqr(),
                projection: part,
            }),
        }
    }
    debug_assert!(out.iter().all(|c| c.projection.len() == d));
    out
}

fn translated(pointer: &GridWavefunction, fft: &FftPair, shift: f64) -> Vec<C64> {
    let mut buf = pointer.samples().to_vec();
    fft.forward.process(&mut buf);
    for (c, k) in buf.iter_mut().zip(fft_wavenumbers(pointer.len(), pointer.dx())) {
        *c *= C64::from_polar(1.0, -k * shift);
    }
    fft.inverse_normalized(&mut buf);
    buf
}

/// One pointer branch of the unprotected measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerBranch {
    pub eigenvalue: f64,
    pub weight: f64,
    pub pointer: GridWavefunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnprotectedOutcome {
    pub branches: Vec<PointerBranch>,
    /// `Tr rho_pointer^2`; below 1 when system and pointer are entangled.
    pub pointer_purity: f64,
}

impl UnprotectedOutcome {
    pub fn is_entangled(&self) -> bool {
        self.branches.len() > 1 && self.pointer_purity < 1.0 - 1e-12
    }
}

/// Impulsive von Neumann coupling with no protection: the pointer of every
/// eigencomponent is translated by its eigenvalue.
pub fn unprotected_measurement(setup: &ProtectiveSetup) -> Result<UnprotectedOutcome> {
    let pointer = &setup.pointer;
    let fft = FftPair::new(pointer.grid.len());
    let mut branches = Vec::new();
    for c in setup.eigen_components() {
        if c.weight <= 1e-15 {
            continue;
        }
        pointer.check_contains(pointer.x0 + c.eigenvalue)?;
        let moved = translated(&pointer.grid, &fft, c.eigenvalue);
        branches.push(PointerBranch {
            eigenvalue: c.eigenvalue,
            weight: c.weight,
            pointer: pointer.grid.with_samples(moved)?,
        });
    }
    let mut purity = 0.0;
    for a in &branches {
        for b in &branches {
            purity += a.weight * b.weight * a.pointer.inner(&b.pointer)?.norm_sqr();
        }
    }
    Ok(UnprotectedOutcome {
        branches,
        pointer_purity: purity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenoRun {
    pub n: usize,
    /// `<A>` in the protected state.
    pub expectation: f64,
    /// `<Phi|(X - x0)|Phi>` on the surviving (unnormalized) branch.
    pub pointer_shift: f64,
    /// Centre of the normalized surviving pointer minus `x0`.
    pub conditional_shift: f64,
    /// Probability that all `N` projections found the system in `psi`.
    pub survival_probability: f64,
    pub initial_width: f64,
    pub final_width: f64,
    pub warning: Option<String>,
    /// Normalized surviving pointer.
    pub final_pointer: GridWavefunction,
}

impl ZenoRun {
    pub fn shift_error(&self) -> f64 {
        (self.pointer_shift - self.expectation).abs()
    }
    pub fn survival_deficit(&self) -> f64 {
        1.0 - self.survival_probability
    }
    pub fn width_drift(&self) -> f64 {
        (self.final_width / self.initial_width - 1.0).abs()
    }
}

/// Runs the `N` coupling sub-steps, each followed by a projection onto `psi`
/// that keeps only the surviving branch.
pub fn zeno_protective_run(setup: &ProtectiveSetup) -> Result<ZenoRun> {
    let pointer = &setup.pointer;
    let comps = setup.eigen_components();
    let expectation = expectation_value(&setup.psi, &setup.observable)?;
    let max_a = comps
        .iter()
        .filter(|c| c.weight > 1e-15)
        .map(|c| c.eigenvalue.abs())
        .fold(0.0, f64::max);
    pointer.check_contains(pointer.x0 + max_a)?;
    pointer.check_contains(pointer.x0 - max_a)?;

    let grid = &pointer.grid;
    let n_pts = grid.len();
    let fft = FftPair::new(n_pts);
    let ks = fft_wavenumbers(n_pts, grid.dx());
    let mut phi = grid.samples().to_vec();
    fft.forward.process(&mut phi);

    let shifts = setup.profile.step_shifts(setup.n, setup.tau);
    let uniform = shifts.iter().all(|d| *d == shifts[0]);
    for (c, k) in phi.iter_mut().zip(&ks) {
        let factor = |delta: f64| -> C64 {
            comps
                .iter()
                .map(|e| e.weight * C64::from_polar(1.0, -delta * e.eigenvalue * k))
                .sum()
        };
        if uniform {
            // identical sub-steps: raise one factor to the N-th power
            *c *= pow_u(factor(shifts[0]), setup.n);
        } else {
            for d in &shifts {
                *c *= factor(*d);
            }
        }
    }
    fft.inverse_normalized(&mut phi);
    if phi.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NumericFailure {
            step: setup.n,
            reason: "non-finite pointer amplitude".into(),
        });
    }

    let dx = grid.dx();
    let survival: f64 = dx * phi.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let moment: f64 = dx
        * phi
            .iter()
            .enumerate()
            .map(|(i, c)| (grid.x(i) - pointer.x0) * c.norm_sqr())
            .sum::<f64>();
    let norm = survival.sqrt();
    let normalized: Vec<C64> = phi.iter().map(|c| c / norm).collect();
    let final_pointer = grid.with_samples(normalized)?;
    let warning = (survival < 0.5).then(|| {
        format!(
            "protection failed: survival {survival:.4} < 0.5 with N = {}; increase N",
            setup.n
        )
    });
    Ok(ZenoRun {
        n: setup.n,
        expectation,
        pointer_shift: moment,
        conditional_shift: moment / survival,
        survival_probability: survival,
        initial_width: grid.rms_width(),
        final_width: final_pointer.rms_width(),
        warning,
        final_pointer,
    })
}

fn pow_u(mut base: C64, mut e: usize) -> C64 {
    let mut acc = C64::new(1.0, 0.0);
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// Component of the state orthogonal to `psi` after the first sub-step,
/// against its first-order prediction `-delta (A - <A>) psi (x) phi'(x - delta <A>)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderReport {
    pub delta: f64,
    /// `||(A - <A>) psi||`
    pub spread: f64,
    pub orthogonal_norm: f64,
    /// `delta ||(A - <A>) psi|| ||phi'||`
    pub predicted_norm: f64,
    /// Norm of the difference between actual and predicted components.
    pub residual: f64,
}

pub fn first_order_branch_check(setup: &ProtectiveSetup) -> Result<FirstOrderReport> {
    let pointer = &setup.pointer.grid;
    let comps = setup.eigen_components();
    let mean = expectation_value(&setup.psi, &setup.observable)?;
    let delta = setup.profile.step_shifts(setup.n, setup.tau)[0];
    let fft = FftPair::new(pointer.len());
    let ks = fft_wavenumbers(pointer.len(), pointer.dx());
    let psi = setup.psi.amplitudes();
    let d = psi.len();

    // actual: sum_k (Pi_k psi - P_k psi) (x) phi(x - delta a_k)
    let mut actual = vec![vec![C64::new(0.0, 0.0); pointer.len()]; d];
    for c in &comps {
        let moved = translated(pointer, &fft, delta * c.eigenvalue);
        for j in 0..d {
            let coeff = c.projection[j] - psi[j] * c.weight;
            for (a, m) in actual[j].iter_mut().zip(&moved) {
                *a += coeff * m;
            }
        }
    }
    // predicted: -delta (A - <A>) psi (x) phi'(x - delta <A>)
    let mut dphi = pointer.samples().to_vec();
    fft.forward.process(&mut dphi);
    for (c, k) in dphi.iter_mut().zip(&ks) {
        *c *= C64::new(0.0, *k) * C64::from_polar(1.0, -k * delta * mean);
    }
    fft.inverse_normalized(&mut dphi);
    let centred: Vec<C64> = {
        let a_psi = setup.observable.apply(&setup.psi)?;
        a_psi.iter().zip(psi).map(|(x, p)| x - p * mean).collect()
    };
    let dx = pointer.dx();
    let mut resid = 0.0;
    let mut orth = 0.0;
    for j in 0..d {
        for (a, dp) in actual[j].iter().zip(&dphi) {
            let pred = -delta * centred[j] * dp;
            resid += (a - pred).norm_sqr();
            orth += a.norm_sqr();
        }
    }
    let spread = centred.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let dphi_norm = (dx * dphi.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
    Ok(FirstOrderReport {
        delta,
        spread,
        orthogonal_norm: (dx * orth).sqrt(),
        predicted_norm: delta * spread * dphi_norm,
        residual: (dx * resid).sqrt(),
    })
}

/// `d<X>/dt = g(t) <A>` for protected evolution.
pub fn pointer_shift_rate(psi: &ComplexVectorState, a: &HermitianOperator, g_t: f64) -> Result<f64> {
    Ok(g_t * expectation_value(psi, a)?)
}

/// Integral of [`pointer_shift_rate`] over `[0, tau]` by the composite
/// Simpson rule on `2m` intervals.
pub fn integrated_shift(
    psi: &ComplexVectorState,
    a: &HermitianOperator,
    profile: CouplingProfile,
    tau: f64,
    m: usize,
) -> Result<f64> {
    let n = 2 * m.max(1);
    let h = tau / n as f64;
    let mut total = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += w * pointer_shift_rate(psi, a, profile.value(i as f64 * h, tau))?;
    }
    Ok(total * h / 3.0)
}

fn check_region(psi: &GridWavefunction, region: &Region) -> Result<()> {
    if region.len == 0 {
        return Err(invalid("measurement region is empty"));
    }
    if region.end() > psi.len() {
        return Err(invalid(format!(
            "region {region:?} extends past {} grid points",
            psi.len()
        )));
    }
    Ok(())
}

/// `(1/v) integral_V |psi|^2 dx`.
pub fn measure_density(psi: &GridWavefunction, region: &Region) -> Result<f64> {
    check_region(psi, region)?;
    let rho = position_density(psi);
    Ok(rho[region.start..region.end()].iter().sum::<f64>() / region.len as f64)
}

/// `(1/v) integral_V j dx`.
pub fn measure_flux(psi: &GridWavefunction, region: &Region) -> Result<f64> {
    check_region(psi, region)?;
    let j = flux_density(psi);
    Ok(j[region.start..region.end()].iter().sum::<f64>() / region.len as f64)
}

/// Splits `n_sites` into `regions` contiguous blocks whose sizes differ by at
/// most one.
pub fn uniform_partition(n_sites: usize, regions: usize) -> Result<Vec<Region>> {
    if regions == 0 || regions > n_sites {
        return Err(invalid(format!("cannot split {n_sites} sites into {regions} regions")));
    }
    let base = n_sites / regions;
    let extra = n_sites % regions;
    let mut start = 0;
    Ok((0..regions)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = Region { start, len };
            start += len;
            r
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyReport {
    pub regions: Vec<Region>,
    pub measured_density: Vec<f64>,
    pub measured_flux: Vec<f64>,
    pub reconstructed: GridWavefunction,
    /// `min_theta ||e^{i theta} rec - true||`.
    pub l2_error: f64,
    /// Largest gap between region averages of the reconstruction's own
    /// `(rho, j)` and the measured values.
    pub fidelity_residual: f64,
}

pub const MIN_TOMOGRAPHY_REGIONS: usize = 16;

/// Measures the region-averaged density and flux of `psi_true`, assembles
/// piecewise-constant profiles and reconstructs the wavefunction from them.
pub fn tomography(psi_true: &GridWavefunction, partition: &[Region]) -> Result<TomographyReport> {
    if partition.len() < MIN_TOMOGRAPHY_REGIONS {
        return Err(invalid(format!(
            "tomography needs at least {MIN_TOMOGRAPHY_REGIONS} regions, got {}",
            partition.len()
        )));
    }
    let mut covered = vec![false; psi_true.len()];
    for r in partition {
        check_region(psi_true, r)?;
        for c in &mut covered[r.start..r.end()] {
            if *c {
                return Err(invalid("regions overlap"));
            }
            *c = true;
        }
    }
    if covered.iter().any(|c| !c) {
        return Err(invalid("regions do not cover the grid"));
    }
    let measured_density: Vec<f64> = partition
        .iter()
        .map(|r| measure_density(psi_true, r))
        .collect::<Result<_>>()?;
    let measured_flux: Vec<f64> = partition
        .iter()
        .map(|r| measure_flux(psi_true, r))
        .collect::<Result<_>>()?;
    let n = psi_true.len();
    let mut rho = vec![0.0; n];
    let mut j = vec![0.0; n];
    for ((r, d), f) in partition.iter().zip(&measured_density).zip(&measured_flux) {
        for k in r.start..r.end() {
            rho[k] = *d;
            j[k] = *f;
        }
    }
    let pair = DensityPair::new(psi_true.x0(), psi_true.dx(), rho, j)?;
    let reconstructed = reconstruct_wavefunction(&pair, psi_true.mass(), psi_true.hbar())?;
    let l2_error = reconstructed.distance_up_to_phase(psi_true)?;
    let mut fidelity_residual: f64 = 0.0;
    for ((r, d), f) in partition.iter().zip(&measured_density).zip(&measured_flux) {
        fidelity_residual = fidelity_residual
            .max((measure_density(&reconstructed, r)? - d).abs())
            .max((measure_flux(&reconstructed, r)? - f).abs());
    }
    Ok(TomographyReport {
        regions: partition.to_vec(),
        measured_density,
        measured_flux,
        reconstructed,
        l2_error,
        fidelity_residual,
    })
}
