//! Physical constants used by the calculators. Dynamics run in natural units
//! (hbar = m = c = t_P = 1) unless a config says otherwise.

/// Reduced Planck constant in eV s.
pub const HBAR_EV_S: f64 = 6.582119569e-16;
/// Planck constant in eV s.
pub const H_EV_S: f64 = 4.135667696e-15;
/// Planck time in s.
pub const PLANCK_TIME_S: f64 = 5.391247e-44;
/// Speed of light in m/s.
pub const C_M_PER_S: f64 = 2.99792458e8;
/// Electron rest energy in eV.
pub const ELECTRON_MASS_EV: f64 = 510_998.950_00;
/// Radius of the cosmological event horizon in m (order of magnitude).
pub const HORIZON_RADIUS_M: f64 = 1e25;
