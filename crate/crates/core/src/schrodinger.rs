//! Unitary evolution and the position/flux description of a wavefunction.
//!
//! Grids are uniform, one-dimensional and periodic. Spatial derivatives use
//! centered second-order differences with periodic wrap; the time stepper is
//! a Strang split of kinetic (momentum-space) and potential (position-space)
//! phase factors, which is exactly unitary on the grid.

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use crate::constants::HBAR_EV_S;
use crate::error::{invalid, Error, Result};
use crate::hilbert::{EnergySuperposition, UnitMode};
use crate::C64;

/// Tolerance on `dx * sum |psi_k|^2 = 1`.
pub const GRID_NORM_TOLERANCE: f64 = 1e-8;
/// Relative density threshold defining the support used by reconstruction.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Complex samples `psi(x0 + k dx)` on a periodic grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWavefunction {
    x0: f64,
    dx: f64,
    samples: Vec<C64>,
    mass: f64,
    hbar: f64,
}

fn check_grid(x0: f64, dx: f64, n: usize, mass: f64, hbar: f64) -> Result<()> {
    if n < 8 || !n.is_multiple_of(2) {
        return Err(invalid(format!("grid needs an even number of samples >= 8, got {n}")));
    }
    if !(dx > 0.0 && dx.is_finite() && x0.is_finite()) {
        return Err(invalid("grid spacing must be positive and finite"));
    }
    if !(mass > 0.0 && hbar > 0.0 && mass.is_finite() && hbar.is_finite()) {
        return Err(invalid("mass and hbar must be positive"));
    }
    Ok(())
}

impl GridWavefunction {
    pub fn new(x0: f64, dx: f64, samples: Vec<C64>, mass: f64, hbar: f64) -> Result<Self> {
        check_grid(x0, dx, samples.len(), mass, hbar)?;
        if samples.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(invalid("samples must be finite"));
        }
        let psi = Self {
            x0,
            dx,
            samples,
            mass,
            hbar,
        };
        let total = psi.norm_sqr();
        if (total - 1.0).abs() > GRID_NORM_TOLERANCE {
            return Err(Error::NotNormalized {
                total,
                tolerance: GRID_NORM_TOLERANCE,
            });
        }
        Ok(psi)
    }

    /// Builds samples without the normalization check. Meant for diagnostics
    /// such as feeding deliberately corrupted frames to [`continuity_residual`].
    pub fn from_raw_unchecked(x0: f64, dx: f64, samples: Vec<C64>, mass: f64, hbar: f64) -> Self {
        Self {
            x0,
            dx,
            samples,
            mass,
            hbar,
        }
    }

    /// Samples `f(x)` and normalizes.
    pub fn from_fn(x0: f64, dx: f64, n: usize, mass: f64, hbar: f64, f: impl Fn(f64) -> C64) -> Result<Self> {
        check_grid(x0, dx, n, mass, hbar)?;
        let mut samples: Vec<C64> = (0..n).map(|k| f(x0 + k as f64 * dx)).collect();
        let norm = (dx * samples.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid("cannot normalize: zero or non-finite norm"));
        }
        samples.iter_mut().for_each(|c| *c /= norm);
        Self::new(x0, dx, samples, mass, hbar)
    }

    /// Gaussian packet with position standard deviation `sigma` (of `|psi|^2`)
    /// centered at `center`, carrying mean momentum `p0`.
    #[allow(clippy::too_many_arguments)]
    pub fn gaussian(
        x0: f64,
        dx: f64,
        n: usize,
        center: f64,
        sigma: f64,
        p0: f64,
        mass: f64,
        hbar: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("Gaussian width must be positive"));
        }
        Self::from_fn(x0, dx, n, mass, hbar, |x| {
            let y = x - center;
            C64::from_polar((-y * y / (4.0 * sigma * sigma)).exp(), p0 * x / hbar)
        })
    }

    /// `exp(i p x / hbar) / sqrt(L)` with `p = 2 pi hbar mode / L`.
    pub fn plane_wave(x0: f64, dx: f64, n: usize, mode: i64, mass: f64, hbar: f64) -> Result<Self> {
        let p = plane_wave_momentum(mode, n as f64 * dx, hbar);
        Self::from_fn(x0, dx, n, mass, hbar, |x| C64::from_polar(1.0, p * x / hbar))
    }

    pub fn with_samples(&self, samples: Vec<C64>) -> Result<Self> {
        Self::new(self.x0, self.dx, samples, self.mass, self.hbar)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn mass(&self) -> f64 {
        self.mass
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn samples(&self) -> &[C64] {
        &self.samples
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    /// Period of the grid.
    pub fn length(&self) -> f64 {
        self.len() as f64 * self.dx
    }
    pub fn x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }
    pub fn positions(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.x(k)).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.dx * self.samples.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// `<x>` computed on the unwrapped grid coordinates.
    pub fn mean_position(&self) -> f64 {
        let w = self.norm_sqr();
        self.dx
            * self
                .samples
                .iter()
                .enumerate()
                .map(|(k, c)| self.x(k) * c.norm_sqr())
                .sum::<f64>()
            / w
    }

    /// RMS width of `|psi|^2`.
    pub fn rms_width(&self) -> f64 {
        let w = self.norm_sqr();
        let m = self.mean_position();
        let var = self.dx
            * self
                .samples
                .iter()
                .enumerate()
                .map(|(k, c)| (self.x(k) - m).powi(2) * c.norm_sqr())
                .sum::<f64>()
            / w;
        var.sqrt()
    }

    /// `<self|other>` with the `dx` measure. Grids must agree.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        self.check_same_grid(other)?;
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * self.dx)
    }

    /// `min_theta || e^{i theta} self - other ||`.
    pub fn distance_up_to_phase(&self, other: &Self) -> Result<f64> {
        let ov = self.inner(other)?;
        let phase = if ov.norm() > 0.0 {
            ov / ov.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        Ok((self.dx
            * self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| (a * phase - b).norm_sqr())
                .sum::<f64>())
        .sqrt())
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        if (self.dx - other.dx).abs() > 1e-12 * self.dx || (self.x0 - other.x0).abs() > 1e-12 * self.dx.max(1.0) {
            return Err(invalid("wavefunctions live on different grids"));
        }
        Ok(())
    }
}

/// Momentum of the plane wave with `mode` periods across a box of length
/// `length`.
pub fn plane_wave_momentum(mode: i64, length: f64, hbar: f64) -> f64 {
    2.0 * PI * hbar * mode as f64 / length
}

fn hbar_for(units: UnitMode) -> f64 {
    match units {
        UnitMode::Natural => 1.0,
        UnitMode::PhysicalEv => HBAR_EV_S,
    }
}

/// `c_i -> c_i exp(-i E_i t / hbar)`, with hbar taken from the state's units.
pub fn evolve_phases(s: &EnergySuperposition, t: f64) -> EnergySuperposition {
    let hbar = hbar_for(s.units());
    let amps = s
        .energies()
        .iter()
        .zip(s.amplitudes())
        .map(|(e, c)| c * C64::from_polar(1.0, -e * t / hbar))
        .collect();
    s.with_amplitudes(amps)
}

/// Angular wavenumbers matching the FFT output ordering.
pub(crate) fn fft_wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let l = n as f64 * dx;
    (0..n)
        .map(|q| {
            let q = if q < n / 2 { q as f64 } else { q as f64 - n as f64 };
            2.0 * PI * q / l
        })
        .collect()
}

pub(crate) struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Inverse transform including the `1/n` factor.
    pub fn inverse_normalized(&self, buf: &mut [C64]) {
        self.inverse.process(buf);
        let s = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }
}

/// Strang split-step evolution of `i hbar psi_t = -(hbar^2/2m) psi_xx + V psi`
/// on the periodic grid, `steps` steps of size `dt`.
pub fn evolve_grid(psi: &GridWavefunction, potential: &[f64], dt: f64, steps: usize) -> Result<GridWavefunction> {
    let n = psi.len();
    if potential.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: potential.len(),
        });
    }
    if !dt.is_finite() {
        return Err(invalid("time step must be finite"));
    }
    let vmax = potential.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !vmax.is_finite() {
        return Err(invalid("potential must be finite"));
    }
    if vmax * dt.abs() / psi.hbar >= 0.5 {
        return Err(Error::StepGuard {
            step: 0,
            detail: format!("max|V| dt / hbar = {} must stay below 0.5", vmax * dt.abs() / psi.hbar),
        });
    }
    if steps == 0 {
        return Ok(psi.clone());
    }
    let fft = FftPair::new(n);
    let half_potential: Vec<C64> = potential
        .iter()
        .map(|v| C64::from_polar(1.0, -v * dt / (2.0 * psi.hbar)))
        .collect();
    let kinetic: Vec<C64> = fft_wavenumbers(n, psi.dx)
        .iter()
        .map(|k| C64::from_polar(1.0, -psi.hbar * k * k * dt / (2.0 * psi.mass)))
        .collect();
    let mut buf = psi.samples.clone();
    for step in 0..steps {
        buf.iter_mut().zip(&half_potential).for_each(|(c, f)| *c *= f);
        fft.forward.process(&mut buf);
        buf.iter_mut().zip(&kinetic).for_each(|(c, f)| *c *= f);
        fft.inverse_normalized(&mut buf);
        buf.iter_mut().zip(&half_potential).for_each(|(c, f)| *c *= f);
        if buf.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NumericFailure {
                step: step + 1,
                reason: "non-finite sample".into(),
            });
        }
    }
    Ok(GridWavefunction {
        samples: buf,
        ..psi.clone()
    })
}

/// `rho_k = |psi_k|^2`.
pub fn position_density(psi: &GridWavefunction) -> Vec<f64> {
    psi.samples.iter().map(|c| c.norm_sqr()).collect()
}

/// `j_k = (hbar/m) Im(psi_k^* (psi_{k+1} - psi_{k-1}) / 2dx)` with periodic wrap.
pub fn flux_density(psi: &GridWavefunction) -> Vec<f64> {
    let n = psi.len();
    let s = &psi.samples;
    let scale = psi.hbar / (psi.mass * 2.0 * psi.dx);
    (0..n)
        .map(|k| {
            let next = s[(k + 1) % n];
            let prev = s[(k + n - 1) % n];
            scale * (s[k].conj() * (next - prev)).im
        })
        .collect()
}

/// Position and flux densities on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPair {
    pub x0: f64,
    pub dx: f64,
    pub rho: Vec<f64>,
    pub j: Vec<f64>,
}

impl DensityPair {
    pub fn new(x0: f64, dx: f64, rho: Vec<f64>, j: Vec<f64>) -> Result<Self> {
        if rho.len() != j.len() {
            return Err(Error::DimensionMismatch {
                expected: rho.len(),
                got: j.len(),
            });
        }
        if !(dx > 0.0) {
            return Err(invalid("grid spacing must be positive"));
        }
        if rho.iter().chain(&j).any(|v| !v.is_finite()) {
            return Err(invalid("densities must be finite"));
        }
        if rho.iter().any(|r| *r < 0.0) {
            return Err(invalid("position density must be non-negative"));
        }
        let total = dx * rho.iter().sum::<f64>();
        if (total - 1.0).abs() > GRID_NORM_TOLERANCE {
            return Err(Error::NotNormalized {
                total,
                tolerance: GRID_NORM_TOLERANCE,
            });
        }
        Ok(Self { x0, dx, rho, j })
    }

    pub fn from_wavefunction(psi: &GridWavefunction) -> Self {
        Self {
            x0: psi.x0,
            dx: psi.dx,
            rho: position_density(psi),
            j: flux_density(psi),
        }
    }
}

/// Max over interior snapshots and interior grid points of
/// `|d rho/dt + d j/dx|`, both by centered differences.
pub fn continuity_residual(series: &[GridWavefunction], dt: f64) -> Result<f64> {
    if series.len() < 3 {
        return Err(invalid(format!(
            "continuity check needs at least 3 snapshots, got {}",
            series.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(invalid("snapshot spacing must be positive"));
    }
    for s in &series[1..] {
        series[0].check_same_grid(s)?;
    }
    let rhos: Vec<Vec<f64>> = series.iter().map(position_density).collect();
    let dx = series[0].dx;
    let n = series[0].len();
    let mut worst: f64 = 0.0;
    for t in 1..series.len() - 1 {
        let j = flux_density(&series[t]);
        for k in 1..n - 1 {
            let drho = (rhos[t + 1][k] - rhos[t - 1][k]) / (2.0 * dt);
            let dj = (j[k + 1] - j[k - 1]) / (2.0 * dx);
            worst = worst.max((drho + dj).abs());
        }
    }
    Ok(worst)
}

/// Thomas algorithm for a symmetric tridiagonal system with diagonal `diag`
/// and off-diagonal `off` (`off[i]` couples `i` and `i + 1`).
fn solve_symmetric_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    if n == 0 {
        return Vec::new();
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off[i - 1] * c[i - 1];
        c[i] = if i + 1 < n { off[i] / m } else { 0.0 };
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Full-ring supports are solved periodically only while every link keeps
/// `a_k a_{k+1}` above this fraction of the peak density.
pub const RING_CUT_RATIO: f64 = 1e-4;
/// Weight of the first-difference penalty on link sines in the open solve.
pub const LINK_SMOOTHING: f64 = 1e-2;

/// Recovers `psi` from `(rho, j)` up to a global phase, fixed so that `psi` is
/// real and positive at the first support point.
///
/// The discrete flux is `2 m dx j_k / hbar = u_{k-1} + u_k` with link currents
/// `u_k = Im(psi_k^* psi_{k+1}) = a_k a_{k+1} sin(theta_{k+1} - theta_k)`.
/// On a periodic support the link currents are the minimum-norm solution of
/// that cyclic system (solved by FFT); on an open support they are the least
/// squares solution with vanishing currents into the empty region. Phase
/// increments are assumed to lie within `(-pi/2, pi/2)` per grid cell.
pub fn reconstruct_wavefunction(d: &DensityPair, mass: f64, hbar: f64) -> Result<GridWavefunction> {
    let n = d.rho.len();
    check_grid(d.x0, d.dx, n, mass, hbar)?;
    let d = DensityPair::new(d.x0, d.dx, d.rho.clone(), d.j.clone())?;
    let rmax = d.rho.iter().cloned().fold(0.0, f64::max);
    let support: Vec<bool> = d.rho.iter().map(|r| *r > SUPPORT_THRESHOLD * rmax).collect();
    let amp: Vec<f64> = d.rho.iter().map(|r| r.sqrt()).collect();
    let big_j: Vec<f64> = d.j.iter().map(|j| 2.0 * mass * d.dx * j / hbar).collect();

    let mut theta = vec![0.0; n];
    let increment = |u: f64, a: f64, b: f64| -> f64 {
        let ab = a * b;
        if ab <= 0.0 {
            0.0
        } else {
            (u / ab).clamp(-1.0, 1.0).asin()
        }
    };

    // A full-ring support whose weakest link is negligible is cut open there:
    // the periodic solve divides by that tiny amplitude product.
    let weakest = (0..n)
        .map(|k| (k, amp[k] * amp[(k + 1) % n]))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let ring = support.iter().all(|s| *s) && weakest.1 > RING_CUT_RATIO * rmax;
    if ring {
        let fft = FftPair::new(n);
        let mut buf: Vec<C64> = big_j.iter().map(|v| C64::new(*v, 0.0)).collect();
        fft.forward.process(&mut buf);
        for (q, c) in buf.iter_mut().enumerate() {
            let denom = C64::new(1.0, 0.0) + C64::from_polar(1.0, -2.0 * PI * q as f64 / n as f64);
            *c = if denom.norm() < 1e-12 {
                C64::new(0.0, 0.0)
            } else {
                *c / denom
            };
        }
        fft.inverse_normalized(&mut buf);
        for k in 0..n - 1 {
            theta[k + 1] = theta[k] + increment(buf[k].re, amp[k], amp[k + 1]);
        }
    } else {
        let (start, len) = if support.iter().all(|s| *s) {
            ((weakest.0 + 1) % n, n)
        } else {
            // cyclic runs of the support
            let starts: Vec<usize> = (0..n).filter(|&k| support[k] && !support[(k + n - 1) % n]).collect();
            if starts.len() > 1 {
                return Err(Error::PhaseAmbiguity { runs: starts.len() });
            }
            (starts[0], (0..n).take_while(|&i| support[(starts[0] + i) % n]).count())
        };
        let idx = |i: usize| (start + i) % n;
        // Equation i divided by rho_i: y_i = alpha_i s_{i-1} + beta_i s_i with
        // s the link sines. Scaling by rho keeps the tails as accurate as the
        // bulk; least squares handles inconsistent (measured) data.
        let a = |i: usize| amp[idx(i)];
        let y: Vec<f64> = (0..len).map(|i| big_j[idx(i)] / d.rho[idx(i)]).collect();
        let alpha = |i: usize| if i >= 1 { a(i - 1) / a(i) } else { 0.0 };
        let beta = |i: usize| if i + 1 < len { a(i + 1) / a(i) } else { 0.0 };
        let links = len.saturating_sub(1);
        // The alternating pattern s_i = (-1)^i e is unconstrained wherever the
        // amplitude is flat, so a small first-difference penalty picks the
        // smooth solution.
        let lam = LINK_SMOOTHING;
        let diag: Vec<f64> = (0..links)
            .map(|i| {
                let ends = usize::from(i > 0) + usize::from(i + 1 < links);
                beta(i).powi(2) + alpha(i + 1).powi(2) + lam * ends as f64
            })
            .collect();
        let off: Vec<f64> = (0..links.saturating_sub(1))
            .map(|i| alpha(i + 1) * beta(i + 1) - lam)
            .collect();
        let rhs: Vec<f64> = (0..links).map(|i| beta(i) * y[i] + alpha(i + 1) * y[i + 1]).collect();
        let sines = solve_symmetric_tridiagonal(&diag, &off, &rhs);
        let u: Vec<f64> = (0..links).map(|i| sines[i] * a(i) * a(i + 1)).collect();
        let mut phase = 0.0;
        theta[idx(0)] = 0.0;
        for i in 0..len.saturating_sub(1) {
            phase += increment(u[i], amp[idx(i)], amp[idx(i + 1)]);
            theta[idx(i + 1)] = phase;
        }
        // outside the support: continue the phase of the nearer edge
        let gap = n - len;
        for g in 0..gap {
            let k = idx(len + g);
            theta[k] = if g < gap / 2 { phase } else { 0.0 };
        }
    }
    let samples = amp.iter().zip(&theta).map(|(a, t)| C64::from_polar(*a, *t)).collect();
    GridWavefunction::new(d.x0, d.dx, samples, mass, hbar)
}

/// Residual of the discretized free Schrodinger equation for the plane wave
/// `exp(i (p x - E t)/hbar)`: centered differences in x (spacing `length/n`)
/// and t (step equal to the spatial spacing), maximum over the grid at t = 0.
pub fn dispersion_residual(p: f64, energy: f64, mass: f64, hbar: f64, n: usize, length: f64) -> f64 {
    let dx = length / n as f64;
    let dt = dx;
    let wave = |x: f64, t: f64| C64::from_polar(1.0, (p * x - energy * t) / hbar);
    let i = C64::new(0.0, 1.0);
    (0..n)
        .map(|k| {
            let x = k as f64 * dx;
            let dpsi_dt = (wave(x, dt) - wave(x, -dt)) / (2.0 * dt);
            let lap = (wave(x + dx, 0.0) - 2.0 * wave(x, 0.0) + wave(x - dx, 0.0)) / (dx * dx);
            (i * hbar * dpsi_dt + hbar * hbar / (2.0 * mass) * lap).norm()
        })
        .fold(0.0, f64::max)
}

/// [`dispersion_residual`] with the free-particle energy `E = p^2 / 2m`.
pub fn dispersion_check(p: f64, mass: f64, hbar: f64, n: usize, length: f64) -> f64 {
    dispersion_residual(p, p * p / (2.0 * mass), mass, hbar, n, length)
}

/// Writes `x,re,im,rho,j` rows preceded by a `#` metadata block.
pub fn write_snapshot_csv<W: Write>(psi: &GridWavefunction, mut out: W) -> Result<()> {
    writeln!(out, "# x0={:e}", psi.x0)?;
    writeln!(out, "# dx={:e}", psi.dx)?;
    writeln!(out, "# n={}", psi.len())?;
    writeln!(out, "# mass={:e}", psi.mass)?;
    writeln!(out, "# hbar={:e}", psi.hbar)?;
    writeln!(out, "x,re_psi,im_psi,rho,j")?;
    let j = flux_density(psi);
    for (k, c) in psi.samples.iter().enumerate() {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e}",
            psi.x(k),
            c.re,
            c.im,
            c.norm_sqr(),
            j[k]
        )?;
    }
    Ok(())
}
