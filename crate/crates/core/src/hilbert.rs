//! Finite-dimensional quantum states and observables.
//!
//! States serialize to JSON as arrays of `[re, im]` pairs, operators as rows
//! of such pairs. Deserialization re-runs the constructor checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{invalid, Error, Result};
use crate::C64;

/// Tolerance on `sum |c_i|^2 = 1` for finite-dimensional states.
pub const NORM_TOLERANCE: f64 = 1e-10;
/// Tolerance on `A = A^dagger`.
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

fn check_finite(amps: &[C64]) -> Result<()> {
    if amps.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(invalid("amplitudes must be finite"));
    }
    Ok(())
}

fn norm_sqr(amps: &[C64]) -> f64 {
    amps.iter().map(|c| c.norm_sqr()).sum()
}

fn check_normalized(amps: &[C64]) -> Result<()> {
    let total = norm_sqr(amps);
    if (total - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::NotNormalized {
            total,
            tolerance: NORM_TOLERANCE,
        });
    }
    Ok(())
}

/// A pure state `|psi> = sum_i c_i |i>` in the computational basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<C64>", into = "Vec<C64>")]
pub struct ComplexVectorState {
    amplitudes: Vec<C64>,
}

impl TryFrom<Vec<C64>> for ComplexVectorState {
    type Error = Error;
    fn try_from(amps: Vec<C64>) -> Result<Self> {
        Self::new(amps)
    }
}

impl From<ComplexVectorState> for Vec<C64> {
    fn from(s: ComplexVectorState) -> Self {
        s.amplitudes
    }
}

impl ComplexVectorState {
    /// Wraps already-normalized amplitudes.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(invalid("a state needs at least one amplitude"));
        }
        check_finite(&amplitudes)?;
        check_normalized(&amplitudes)?;
        Ok(Self { amplitudes })
    }

    /// Normalizes arbitrary (non-zero) amplitudes.
    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(invalid("a state needs at least one amplitude"));
        }
        check_finite(&amplitudes)?;
        let n = norm_sqr(&amplitudes).sqrt();
        if n == 0.0 {
            return Err(invalid("cannot normalize the zero vector"));
        }
        amplitudes.iter_mut().for_each(|c| *c /= n);
        Ok(Self { amplitudes })
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::normalized(values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    /// Computational basis state `|k>`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(invalid(format!("basis index {k} out of range for dim {dim}")));
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[k] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes: amps })
    }

    /// `|+> = (|0> + |1>)/sqrt(2)`.
    pub fn plus() -> Self {
        Self {
            amplitudes: vec![C64::new(FRAC_1_SQRT_2, 0.0); 2],
        }
    }

    /// `|-> = (|0> - |1>)/sqrt(2)`.
    pub fn minus() -> Self {
        Self {
            amplitudes: vec![C64::new(FRAC_1_SQRT_2, 0.0), C64::new(-FRAC_1_SQRT_2, 0.0)],
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn to_dvector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amplitudes)
    }
}

/// `|<a_i|psi>|^2` for every basis index.
pub fn born_probabilities(state: &ComplexVectorState) -> Result<Vec<f64>> {
    check_normalized(state.amplitudes())?;
    Ok(state.amplitudes().iter().map(|c| c.norm_sqr()).collect())
}

/// A Hermitian matrix. Energy units for Hamiltonians, dimensionless for
/// projectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<C64>>", into = "Vec<Vec<C64>>")]
pub struct HermitianOperator {
    matrix: DMatrix<C64>,
}

impl TryFrom<Vec<Vec<C64>>> for HermitianOperator {
    type Error = Error;
    fn try_from(rows: Vec<Vec<C64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("operator rows must form a square matrix"));
        }
        let matrix = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(matrix)
    }
}

impl From<HermitianOperator> for Vec<Vec<C64>> {
    fn from(op: HermitianOperator) -> Self {
        let m = &op.matrix;
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }
}

/// Eigen-decomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: DMatrix<C64>,
}

impl Spectrum {
    /// Probability weights `|<a_k|psi>|^2` per eigenvector.
    pub fn weights(&self, psi: &ComplexVectorState) -> Vec<f64> {
        let v = psi.to_dvector();
        (0..self.eigenvalues.len())
            .map(|k| self.eigenvectors.column(k).dotc(&v).norm_sqr())
            .collect()
    }
}

impl HermitianOperator {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(invalid("operator must be a non-empty square matrix"));
        }
        check_finite(matrix.as_slice())?;
        let dev = (&matrix - matrix.adjoint())
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        if dev > HERMITIAN_TOLERANCE {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self { matrix })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("operator rows must form a square matrix"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0)))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let n = values.len();
        Self::new(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    /// `|phi><phi|`.
    pub fn projector(phi: &ComplexVectorState) -> Self {
        let v = phi.to_dvector();
        Self {
            matrix: &v * v.adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.matrix[(i, j)]
    }

    pub fn apply(&self, psi: &ComplexVectorState) -> Result<DVector<C64>> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: psi.dim(),
            });
        }
        Ok(&self.matrix * psi.to_dvector())
    }

    pub fn spectrum(&self) -> Spectrum {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let eigenvectors = DMatrix::from_fn(self.dim(), self.dim(), |i, j| eig.eigenvectors[(i, order[j])]);
        Spectrum {
            eigenvalues,
            eigenvectors,
        }
    }
}

/// `<psi|A|psi>`; the imaginary residue must stay below 1e-12.
pub fn expectation_value(state: &ComplexVectorState, op: &HermitianOperator) -> Result<f64> {
    check_normalized(state.amplitudes())?;
    let a_psi = op.apply(state)?;
    let value: C64 = state
        .amplitudes()
        .iter()
        .zip(a_psi.iter())
        .map(|(c, a)| c.conj() * a)
        .sum();
    if value.im.abs() > 1e-12 {
        return Err(Error::NumericFailure {
            step: 0,
            reason: format!("expectation value has imaginary part {:e}", value.im),
        });
    }
    Ok(value.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitMode {
    /// hbar = t_P = 1.
    #[default]
    Natural,
    /// Energies in eV, times in s.
    PhysicalEv,
}

/// `sum_i c_i |E_i>`: the state the collapse model acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnergySuperposition", into = "RawEnergySuperposition")]
pub struct EnergySuperposition {
    energies: Vec<f64>,
    amplitudes: Vec<C64>,
    units: UnitMode,
}

#[derive(Serialize, Deserialize)]
struct RawEnergySuperposition {
    energies: Vec<f64>,
    amplitudes: Vec<C64>,
    #[serde(default)]
    units: UnitMode,
}

impl TryFrom<RawEnergySuperposition> for EnergySuperposition {
    type Error = Error;
    fn try_from(raw: RawEnergySuperposition) -> Result<Self> {
        Self::new(raw.energies, raw.amplitudes, raw.units)
    }
}

impl From<EnergySuperposition> for RawEnergySuperposition {
    fn from(s: EnergySuperposition) -> Self {
        Self {
            energies: s.energies,
            amplitudes: s.amplitudes,
            units: s.units,
        }
    }
}

impl EnergySuperposition {
    pub fn new(energies: Vec<f64>, amplitudes: Vec<C64>, units: UnitMode) -> Result<Self> {
        if energies.is_empty() {
            return Err(invalid("an energy superposition needs at least one branch"));
        }
        if energies.len() != amplitudes.len() {
            return Err(Error::DimensionMismatch {
                expected: energies.len(),
                got: amplitudes.len(),
            });
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(invalid("branch energies must be finite"));
        }
        check_finite(&amplitudes)?;
        check_normalized(&amplitudes)?;
        Ok(Self {
            energies,
            amplitudes,
            units,
        })
    }

    /// Real, non-negative amplitudes `sqrt(P_i)`; `probabilities` is
    /// renormalized.
    pub fn from_probabilities(energies: &[f64], probabilities: &[f64], units: UnitMode) -> Result<Self> {
        if probabilities.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = probabilities.iter().sum();
        if total <= 0.0 {
            return Err(invalid("probabilities sum to zero"));
        }
        let amps = probabilities
            .iter()
            .map(|p| C64::new((p / total).sqrt(), 0.0))
            .collect();
        Self::new(energies.to_vec(), amps, units)
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn units(&self) -> UnitMode {
        self.units
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr().min(1.0)).collect()
    }

    pub fn mean_energy(&self) -> f64 {
        self.energies
            .iter()
            .zip(&self.amplitudes)
            .map(|(e, c)| e * c.norm_sqr())
            .sum()
    }

    /// Rebuilds the state from new amplitudes, keeping energies and units.
    pub(crate) fn with_amplitudes(&self, amplitudes: Vec<C64>) -> Self {
        Self {
            energies: self.energies.clone(),
            amplitudes,
            units: self.units,
        }
    }

    /// Merges branches with identical energies into one branch carrying their
    /// total probability (phase of the first member). Returns the merged state
    /// and, for every original branch, the index of its merged branch.
    pub fn merge_degenerate(&self) -> (Self, Vec<usize>) {
        let mut energies: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        let mut phases: Vec<C64> = Vec::new();
        let mut map = Vec::with_capacity(self.len());
        for (e, c) in self.energies.iter().zip(&self.amplitudes) {
            match energies.iter().position(|x| x == e) {
                Some(k) => {
                    probs[k] += c.norm_sqr();
                    map.push(k);
                }
                None => {
                    energies.push(*e);
                    probs.push(c.norm_sqr());
                    let n = c.norm();
                    phases.push(if n > 0.0 { c / n } else { C64::new(1.0, 0.0) });
                    map.push(energies.len() - 1);
                }
            }
        }
        let amps = probs.iter().zip(&phases).map(|(p, ph)| ph * p.sqrt()).collect();
        (
            Self {
                energies,
                amplitudes: amps,
                units: self.units,
            },
            map,
        )
    }
}

/// RMS energy uncertainty `sqrt(sum_i P_i (E_i - <E>)^2)`.
pub fn energy_uncertainty(s: &EnergySuperposition) -> f64 {
    let mean = s.mean_energy();
    s.energies
        .iter()
        .zip(&s.amplitudes)
        .map(|(e, c)| c.norm_sqr() * (e - mean).powi(2))
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Amplitudes on a tensor product space, row-major over the factors (the last
/// factor varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeState {
    factor_dims: Vec<usize>,
    amplitudes: Vec<C64>,
}

impl CompositeState {
    pub fn new(factor_dims: Vec<usize>, amplitudes: Vec<C64>) -> Result<Self> {
        if factor_dims.is_empty() || factor_dims.contains(&0) {
            return Err(invalid("factor dimensions must be positive"));
        }
        let total: usize = factor_dims.iter().product();
        if total != amplitudes.len() {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: amplitudes.len(),
            });
        }
        check_finite(&amplitudes)?;
        check_normalized(&amplitudes)?;
        Ok(Self {
            factor_dims,
            amplitudes,
        })
    }

    pub fn product(factors: &[&ComplexVectorState]) -> Result<Self> {
        if factors.is_empty() {
            return Err(invalid("product of zero factors"));
        }
        let mut amps = vec![C64::new(1.0, 0.0)];
        for f in factors {
            amps = amps
                .iter()
                .flat_map(|a| f.amplitudes().iter().map(move |b| a * b))
                .collect();
        }
        Self::new(factors.iter().map(|f| f.dim()).collect(), amps)
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// The same amplitudes viewed as a flat state vector.
    pub fn as_state(&self) -> ComplexVectorState {
        ComplexVectorState {
            amplitudes: self.amplitudes.clone(),
        }
    }
}

fn two_qubit(terms: &[(f64, &ComplexVectorState, &ComplexVectorState)]) -> ComplexVectorState {
    let mut amps = vec![C64::new(0.0, 0.0); 4];
    for (w, a, b) in terms {
        for i in 0..2 {
            for j in 0..2 {
                amps[2 * i + j] += *w * a.amplitudes()[i] * b.amplitudes()[j];
            }
        }
    }
    ComplexVectorState { amplitudes: amps }
}

/// Born probabilities of the four entangled outcomes on the four product
/// preparations `{|0>,|+>} x {|0>,|+>}`.
#[derive(Debug, Clone, Serialize)]
pub struct PbrTable {
    /// `table[j][k] = |<phi_k|prep_j>|^2`: rows are preparations in the order
    /// `|00>, |0+>, |+0>, |++>`, columns are outcomes `phi_1..phi_4`.
    pub table: [[f64; 4]; 4],
    /// Largest deviation of `<phi_k|phi_l>` from `delta_kl`.
    pub orthonormality_error: f64,
}

impl PbrTable {
    /// Entries below `tol`, as `(preparation, outcome)` pairs.
    pub fn zero_entries(&self, tol: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (j, row) in self.table.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                if *v < tol {
                    out.push((j, k));
                }
            }
        }
        out
    }
}

/// Builds the four-outcome joint measurement that assigns zero probability to
/// outcome `k` for preparation `k`.
pub fn pbr_orthogonality_table() -> PbrTable {
    let zero = ComplexVectorState::basis(2, 0).expect("dim 2");
    let one = ComplexVectorState::basis(2, 1).expect("dim 2");
    let plus = ComplexVectorState::plus();
    let minus = ComplexVectorState::minus();
    let h = FRAC_1_SQRT_2;
    let phis = [
        two_qubit(&[(h, &zero, &one), (h, &one, &zero)]),
        two_qubit(&[(h, &zero, &minus), (h, &one, &plus)]),
        two_qubit(&[(h, &plus, &one), (h, &minus, &zero)]),
        two_qubit(&[(h, &plus, &minus), (h, &minus, &plus)]),
    ];
    let preps = [
        two_qubit(&[(1.0, &zero, &zero)]),
        two_qubit(&[(1.0, &zero, &plus)]),
        two_qubit(&[(1.0, &plus, &zero)]),
        two_qubit(&[(1.0, &plus, &plus)]),
    ];
    let mut table = [[0.0; 4]; 4];
    for (j, prep) in preps.iter().enumerate() {
        for (k, phi) in phis.iter().enumerate() {
            table[j][k] = phi.inner(prep).expect("dim 4").norm_sqr();
        }
    }
    let mut orthonormality_error: f64 = 0.0;
    for (k, a) in phis.iter().enumerate() {
        for (l, b) in phis.iter().enumerate() {
            let target = if k == l { 1.0 } else { 0.0 };
            let dev = (a.inner(b).expect("dim 4") - C64::new(target, 0.0)).norm();
            orthonormality_error = orthonormality_error.max(dev);
        }
    }
    PbrTable {
        table,
        orthonormality_error,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HardyReport {
    /// `U|psi_1> = |psi_1>`.
    pub invariant_ok: bool,
    /// `U (psi_1 + psi_2)/sqrt2 = (psi_1 - psi_2)/sqrt2`.
    pub flip_ok: bool,
    /// The superpositions before and after `U` are orthogonal.
    pub orthogonal_ok: bool,
    pub max_residual: f64,
}

impl HardyReport {
    pub fn passed(&self) -> bool {
        self.invariant_ok && self.flip_ok && self.orthogonal_ok
    }
}

/// Checks `U = diag(1, -1)` in the `{psi_1, psi_2}` basis.
pub fn hardy_unitary_check() -> HardyReport {
    let u = HermitianOperator::diagonal(&[1.0, -1.0]).expect("diagonal is Hermitian");
    let psi1 = ComplexVectorState::basis(2, 0).expect("dim 2");
    let plus = ComplexVectorState::plus();
    let minus = ComplexVectorState::minus();
    let dist = |a: &DVector<C64>, b: &ComplexVectorState| (a - b.to_dvector()).norm();
    let r1 = dist(&u.apply(&psi1).expect("dim 2"), &psi1);
    let r2 = dist(&u.apply(&plus).expect("dim 2"), &minus);
    let r3 = plus.inner(&minus).expect("dim 2").norm();
    let tol = 1e-12;
    HardyReport {
        invariant_ok: r1 < tol,
        flip_ok: r2 < tol,
        orthogonal_ok: r3 < tol,
        max_residual: r1.max(r2).max(r3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn born_probabilities_examples() {
        let s = ComplexVectorState::basis(2, 0).unwrap();
        assert_eq!(born_probabilities(&s).unwrap(), vec![1.0, 0.0]);
        let p = born_probabilities(&ComplexVectorState::plus()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let s = ComplexVectorState::new(vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        let p = born_probabilities(&s).unwrap();
        assert!((p[0] - 0.36).abs() < 1e-15);
        assert!((p[1] - 0.64).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_state_is_rejected() {
        let err = ComplexVectorState::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { .. }));
    }

    #[test]
    fn expectation_examples() {
        let a = HermitianOperator::diagonal(&[2.0, -1.0]).unwrap();
        let e1 = ComplexVectorState::basis(2, 1).unwrap();
        assert_eq!(expectation_value(&e1, &a).unwrap(), -1.0);

        let p0 = HermitianOperator::projector(&ComplexVectorState::basis(2, 0).unwrap());
        let v = expectation_value(&ComplexVectorState::plus(), &p0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);

        let s = ComplexVectorState::from_real(&[0.6, 0.8]).unwrap();
        assert!((expectation_value(&s, &a).unwrap() - 0.08).abs() < 1e-14);
    }

    #[test]
    fn expectation_dimension_mismatch() {
        let a = HermitianOperator::diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let err = expectation_value(&ComplexVectorState::plus(), &a).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(HermitianOperator::new(m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn energy_uncertainty_examples() {
        let s = EnergySuperposition::from_probabilities(&[5.0], &[1.0], UnitMode::Natural).unwrap();
        assert_eq!(energy_uncertainty(&s), 0.0);
        let s = EnergySuperposition::from_probabilities(&[0.0, 1.0], &[0.5, 0.5], UnitMode::Natural).unwrap();
        assert!((energy_uncertainty(&s) - 0.5).abs() < 1e-15);
        // mean 0.7, variance 0.5*0.49 + 0.3*0.09 + 0.2*1.69 = 0.61
        let s = EnergySuperposition::from_probabilities(&[0.0, 1.0, 2.0], &[0.5, 0.3, 0.2], UnitMode::Natural).unwrap();
        assert!((energy_uncertainty(&s) - 0.61f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn merge_degenerate_sums_probabilities() {
        let s = EnergySuperposition::from_probabilities(&[1.0, 2.0, 1.0], &[0.2, 0.5, 0.3], UnitMode::Natural).unwrap();
        let (m, map) = s.merge_degenerate();
        assert_eq!(m.energies(), &[1.0, 2.0]);
        assert_eq!(map, vec![0, 1, 0]);
        let p = m.probabilities();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!((energy_uncertainty(&m) - energy_uncertainty(&s)).abs() < 1e-15);
    }

    #[test]
    fn pbr_table_zero_pattern() {
        let t = pbr_orthogonality_table();
        assert!(t.orthonormality_error < 1e-12);
        assert_eq!(t.zero_entries(1e-12), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        // |00> row: 0, 1/4, 1/4, 1/2 by direct expansion
        let row = t.table[0];
        assert!((row[1] - 0.25).abs() < 1e-15);
        assert!((row[2] - 0.25).abs() < 1e-15);
        assert!((row[3] - 0.5).abs() < 1e-15);
        for row in t.table {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hardy_checks_pass() {
        let r = hardy_unitary_check();
        assert!(r.passed(), "{r:?}");
        assert!(r.max_residual < 1e-12);
    }

    #[test]
    fn composite_product_is_normalized() {
        let s = CompositeState::product(&[&ComplexVectorState::plus(), &ComplexVectorState::minus()]).unwrap();
        assert_eq!(s.factor_dims(), &[2, 2]);
        assert!((s.as_state().norm_sqr() - 1.0).abs() < 1e-15);
        assert!((s.amplitudes()[1].re + 0.5).abs() < 1e-15);
        assert!(CompositeState::new(vec![2, 2], vec![c(1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn json_is_pairs() {
        let s = ComplexVectorState::new(vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, "[[0.6,0.0],[0.0,0.8]]");
        let back: ComplexVectorState = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<ComplexVectorState>("[[1.0,0.0],[1.0,0.0]]").is_err());
        let op: HermitianOperator = serde_json::from_str("[[[1,0],[0,-1]],[[0,1],[2,0]]]").unwrap();
        assert_eq!(op.entry(0, 1), c(0.0, -1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state(dim: usize) -> impl Strategy<Value = ComplexVectorState> {
            proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim)
                .prop_filter("non-zero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
                .prop_map(|v| {
                    ComplexVectorState::normalized(v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap()
                })
        }

        fn hermitian(dim: usize) -> impl Strategy<Value = HermitianOperator> {
            proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), dim * dim).prop_map(move |v| {
                let m = DMatrix::from_fn(dim, dim, |i, j| C64::new(v[i * dim + j].0, v[i * dim + j].1));
                HermitianOperator::new((&m + m.adjoint()) * C64::new(0.5, 0.0)).unwrap()
            })
        }

        proptest! {
            #[test]
            fn expectation_is_real((s, a) in (1usize..6).prop_flat_map(|d| (state(d), hermitian(d)))) {
                let a_psi = a.apply(&s).unwrap();
                let v: C64 = s.amplitudes().iter().zip(a_psi.iter()).map(|(c, x)| c.conj() * x).sum();
                prop_assert!(v.im.abs() < 1e-12);
            }

            #[test]
            fn two_level_uncertainty_closed_form(e1 in -5.0f64..5.0, e2 in -5.0f64..5.0, p in 0.0f64..1.0) {
                let s = EnergySuperposition::from_probabilities(&[e1, e2], &[p, 1.0 - p], UnitMode::Natural).unwrap();
                let closed = (p * (1.0 - p)).sqrt() * (e1 - e2).abs();
                prop_assert!((energy_uncertainty(&s) - closed).abs() < 1e-12);
            }

            #[test]
            fn normalize_closes(s in (1usize..8).prop_flat_map(state)) {
                prop_assert!((s.norm_sqr() - 1.0).abs() < NORM_TOLERANCE);
            }
        }
    }
}
