//! Dense complex linear algebra and validated quantum-state types.
//!
//! Dimensions stay small (≤ ~16) in every scenario this crate targets, so
//! all routines are dense and favor numerical robustness over speed. The
//! heavy lifting (Hermitian eigendecomposition, SVD) is delegated to
//! `nalgebra`; this module adds the validation layer: density matrices are
//! Hermitized, positivity-clamped and trace-normalized on construction,
//! projector families are checked for idempotence, orthogonality and
//! completeness.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Dense complex matrix, the generic operator type used throughout.
pub type CMatrix = DMatrix<Complex64>;

/// Max asymmetry `|A - A†|` tolerated before an input is rejected as
/// non-Hermitian.
pub const HERM_INPUT_TOL: f64 = 1e-8;
/// Eigenvalues in `(-PSD_TOL, 0)` are clamped to zero on density-matrix
/// construction; anything below `-PSD_TOL` is rejected.
pub const PSD_TOL: f64 = 1e-10;
/// Eigenvalues closer than this are merged into a single eigenprojector.
pub const GROUP_TOL: f64 = 1e-8;
/// Traces at or below this are treated as zero.
pub const ZERO_TRACE_TOL: f64 = 1e-14;
/// Tolerance on projector-family invariants (idempotence, orthogonality,
/// completeness).
pub const PROJECTOR_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:.6e})")]
    NotPositive(f64),
    #[error("matrix trace is numerically zero ({0:.3e})")]
    ZeroTrace(f64),
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("eigensolver did not converge")]
    EigenFailure,
    #[error("projector {index} is not idempotent (residual {residual:.3e})")]
    NotIdempotent { index: usize, residual: f64 },
    #[error("projectors {0} and {1} are not orthogonal (residual {2:.3e})")]
    NotOrthogonal(usize, usize, f64),
    #[error("projector family does not sum to the identity (residual {0:.3e})")]
    Incomplete(f64),
    #[error("projector labels must be distinct and match the projector count")]
    BadLabels,
}

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// dim×dim identity matrix.
pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// Conjugate transpose.
pub fn dagger(a: &CMatrix) -> CMatrix {
    a.adjoint()
}

/// Matrix trace.
pub fn trace(a: &CMatrix) -> Complex64 {
    a.diagonal().iter().sum()
}

pub(crate) fn all_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub(crate) fn check_square_finite(a: &CMatrix) -> Result<usize, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Err(LinalgError::NotSquare { rows: 0, cols: 0 });
    }
    if !all_finite(a) {
        return Err(LinalgError::NonFinite);
    }
    Ok(a.nrows())
}

/// Max entrywise modulus of `A - A†`.
pub fn herm_asymmetry(a: &CMatrix) -> f64 {
    let d = a - dagger(a);
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `(A + A†)/2`.
pub fn hermitize(a: &CMatrix) -> CMatrix {
    (a + dagger(a)).scale(0.5)
}

/// Max entrywise modulus of `A - B`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn singular_values(a: &CMatrix) -> Result<Vec<f64>, LinalgError> {
    let svd = nalgebra::linalg::SVD::try_new(a.clone(), false, false, f64::EPSILON, 0)
        .ok_or(LinalgError::EigenFailure)?;
    Ok(svd.singular_values.iter().copied().collect())
}

/// Trace norm (sum of singular values). Equals `Σ|λ_i|` for Hermitian input
/// and 1 for any density matrix.
pub fn trace_norm(a: &CMatrix) -> f64 {
    singular_values(a).map(|s| s.iter().sum()).unwrap_or(f64::NAN)
}

/// Operator norm (largest singular value).
pub fn op_norm(a: &CMatrix) -> f64 {
    singular_values(a)
        .map(|s| s.iter().copied().fold(0.0, f64::max))
        .unwrap_or(f64::NAN)
}

/// Eigendecomposition of a Hermitian matrix with degenerate eigenvalues
/// merged into a single eigenprojector.
///
/// Eigenvalues are ascending; consecutive values closer than [`GROUP_TOL`]
/// share one projector, so the reconstruction `Σ λ_i P_i` reproduces the
/// input up to `1e-9·‖A‖`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub projectors: Vec<CMatrix>,
}

impl SpectralDecomposition {
    /// `Σ λ_i P_i`.
    pub fn reconstruct(&self) -> CMatrix {
        let dim = self.projectors[0].nrows();
        let mut acc = CMatrix::zeros(dim, dim);
        for (l, p) in self.eigenvalues.iter().zip(&self.projectors) {
            acc += p.scale(*l);
        }
        acc
    }
}

/// Sorted Hermitian eigendecomposition. Internal building block: no
/// degeneracy grouping, eigenvectors returned as matrix columns.
pub(crate) fn herm_eigen_raw(a: &CMatrix) -> Result<(Vec<f64>, CMatrix), LinalgError> {
    let dim = check_square_finite(a)?;
    let sym = nalgebra::linalg::SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or(LinalgError::EigenFailure)?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| sym.eigenvalues[i].total_cmp(&sym.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| sym.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(dim, dim);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &sym.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Hermitian eigendecomposition with eigenvalue clustering.
pub fn herm_eigendecompose(a: &CMatrix) -> Result<SpectralDecomposition, LinalgError> {
    let asym = herm_asymmetry(a);
    if asym > HERM_INPUT_TOL {
        return Err(LinalgError::NotHermitian(asym));
    }
    let (values, vectors) = herm_eigen_raw(&hermitize(a))?;
    let dim = values.len();
    let mut eigenvalues = Vec::new();
    let mut projectors = Vec::new();
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && values[end] - values[end - 1] <= GROUP_TOL {
            end += 1;
        }
        let mean = values[start..end].iter().sum::<f64>() / (end - start) as f64;
        let mut proj = CMatrix::zeros(dim, dim);
        for col in start..end {
            let v = vectors.column(col);
            proj += v * v.adjoint();
        }
        eigenvalues.push(mean);
        projectors.push(hermitize(&proj));
        start = end;
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        projectors,
    })
}

/// `e^{-itH}` for Hermitian `H`, computed by eigendecomposition. The result
/// is unitary to ~1e-9.
pub fn matrix_exponential_unitary(h: &CMatrix, t: f64) -> Result<CMatrix, LinalgError> {
    let asym = herm_asymmetry(h);
    if asym > HERM_INPUT_TOL {
        return Err(LinalgError::NotHermitian(asym));
    }
    let (values, vectors) = herm_eigen_raw(&hermitize(h))?;
    let dim = values.len();
    let mut u = CMatrix::zeros(dim, dim);
    for (i, lambda) in values.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -t * lambda);
        let v = vectors.column(i);
        u += (v * v.adjoint()) * phase;
    }
    Ok(u)
}

/// Hermitian, positive semidefinite, trace-one matrix: the conditional
/// state of the observed system.
///
/// Construction Hermitizes the input, rejects genuinely negative spectra,
/// clamps floating-point dust in `(-1e-10, 0)` to zero and renormalizes the
/// trace, so states stay valid through arbitrarily long measurement
/// recursions.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl DensityMatrix {
    /// Validate an arbitrary matrix as a density matrix.
    pub fn new(matrix: CMatrix) -> Result<Self, LinalgError> {
        check_square_finite(&matrix)?;
        let asym = herm_asymmetry(&matrix);
        if asym > HERM_INPUT_TOL {
            return Err(LinalgError::NotHermitian(asym));
        }
        let herm = hermitize(&matrix);
        let (values, vectors) = herm_eigen_raw(&herm)?;
        let min = values[0];
        if min < -PSD_TOL {
            return Err(LinalgError::NotPositive(min));
        }
        let dim = values.len();
        let mut rebuilt = CMatrix::zeros(dim, dim);
        for (i, lambda) in values.iter().enumerate() {
            let clamped = lambda.max(0.0);
            if clamped > 0.0 {
                let v = vectors.column(i);
                rebuilt += (v * v.adjoint()).scale(clamped);
            }
        }
        let tr = trace(&rebuilt).re;
        if tr <= ZERO_TRACE_TOL {
            return Err(LinalgError::ZeroTrace(tr));
        }
        Ok(Self {
            mat: hermitize(&rebuilt.scale(1.0 / tr)),
        })
    }

    /// Wrap a matrix that is already PSD and Hermitian by construction
    /// (e.g. the image of a valid state under a completely positive map),
    /// renormalizing the trace. Skips the eigendecomposition that `new`
    /// performs, which matters inside per-step sampling loops.
    pub(crate) fn from_positive_unchecked(mat: CMatrix) -> Result<Self, LinalgError> {
        let tr = trace(&mat).re;
        if !tr.is_finite() || tr <= ZERO_TRACE_TOL {
            return Err(LinalgError::ZeroTrace(tr));
        }
        Ok(Self {
            mat: hermitize(&mat.scale(1.0 / tr)),
        })
    }

    /// Pure state `|ψ⟩⟨ψ|` from an (unnormalized) state vector.
    pub fn from_pure(psi: &[Complex64]) -> Result<Self, LinalgError> {
        let dim = psi.len();
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 <= ZERO_TRACE_TOL {
            return Err(LinalgError::ZeroTrace(norm2));
        }
        let mut mat = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                mat[(i, j)] = psi[i] * psi[j].conj() / norm2;
            }
        }
        Self::new(mat)
    }

    /// `1/dim`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            mat: identity(dim).scale(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    /// `Tr(P ρ)` as a real number; the Born weight of a projector (or any
    /// Hermitian observable).
    pub fn weight(&self, p: &CMatrix) -> f64 {
        trace(&(p * &self.mat)).re
    }
}

/// Complete family of mutually orthogonal projectors `{Π_ν}`, labelled by
/// the facts they reveal.
#[derive(Debug, Clone)]
pub struct ProjectorFamily {
    dim: usize,
    labels: Vec<String>,
    projectors: Vec<CMatrix>,
}

impl ProjectorFamily {
    pub fn new(labels: Vec<String>, projectors: Vec<CMatrix>) -> Result<Self, LinalgError> {
        if labels.is_empty() || labels.len() != projectors.len() {
            return Err(LinalgError::BadLabels);
        }
        for i in 0..labels.len() {
            for j in (i + 1)..labels.len() {
                if labels[i] == labels[j] {
                    return Err(LinalgError::BadLabels);
                }
            }
        }
        let dim = check_square_finite(&projectors[0])?;
        for (index, p) in projectors.iter().enumerate() {
            if check_square_finite(p)? != dim {
                return Err(LinalgError::DimMismatch(p.nrows(), dim));
            }
            let asym = herm_asymmetry(p);
            if asym > PROJECTOR_TOL {
                return Err(LinalgError::NotHermitian(asym));
            }
            let residual = op_norm(&(p * p - p));
            if residual > PROJECTOR_TOL {
                return Err(LinalgError::NotIdempotent { index, residual });
            }
        }
        for i in 0..projectors.len() {
            for j in (i + 1)..projectors.len() {
                let residual = op_norm(&(&projectors[i] * &projectors[j]));
                if residual > PROJECTOR_TOL {
                    return Err(LinalgError::NotOrthogonal(i, j, residual));
                }
            }
        }
        let mut sum = CMatrix::zeros(dim, dim);
        for p in &projectors {
            sum += p;
        }
        let completeness = op_norm(&(sum - identity(dim)));
        if completeness > PROJECTOR_TOL {
            return Err(LinalgError::Incomplete(completeness));
        }
        Ok(Self {
            dim,
            labels,
            projectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, nu: usize) -> &str {
        &self.labels[nu]
    }

    pub fn projector(&self, nu: usize) -> &CMatrix {
        &self.projectors[nu]
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    pub fn rank(&self, nu: usize) -> usize {
        trace(&self.projectors[nu]).re.round() as usize
    }
}

/// Convenience constructors for common test matrices.
pub fn from_rows(rows: &[&[Complex64]]) -> CMatrix {
    let nrows = rows.len();
    let ncols = rows[0].len();
    CMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

/// Real diagonal matrix.
pub fn diag(entries: &[f64]) -> CMatrix {
    let dim = entries.len();
    CMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            Complex64::new(entries[i], 0.0)
        } else {
            C_ZERO
        }
    })
}

pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn im(x: f64) -> Complex64 {
    Complex64::new(0.0, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigma_x() -> CMatrix {
        from_rows(&[&[C_ZERO, C_ONE], &[C_ONE, C_ZERO]])
    }

    fn sigma_y() -> CMatrix {
        from_rows(&[&[C_ZERO, im(-1.0)], &[im(1.0), C_ZERO]])
    }

    // Truncated power series oracle for the matrix exponential, independent
    // of the eigendecomposition route used by the implementation.
    fn exp_series(a: &CMatrix) -> CMatrix {
        let dim = a.nrows();
        let mut acc = identity(dim);
        let mut term = identity(dim);
        for n in 1..60 {
            term = (&term * a).scale(1.0 / n as f64);
            acc += &term;
        }
        acc
    }

    #[test]
    fn validate_density_accepts_maximally_mixed() {
        let rho = DensityMatrix::new(diag(&[0.5, 0.5])).unwrap();
        assert!(max_abs_diff(rho.matrix(), &diag(&[0.5, 0.5])) < 1e-14);
    }

    #[test]
    fn validate_density_rejects_negative_eigenvalue() {
        let err = DensityMatrix::new(diag(&[1.0, -0.2, 0.2])).unwrap_err();
        assert!(matches!(err, LinalgError::NotPositive(_)));
    }

    #[test]
    fn validate_density_rejects_non_hermitian_and_zero_trace() {
        let err = DensityMatrix::new(from_rows(&[
            &[C_ONE, re(0.5)],
            &[re(0.2), C_ZERO],
        ]))
        .unwrap_err();
        assert!(matches!(err, LinalgError::NotHermitian(_)));

        let err = DensityMatrix::new(diag(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, LinalgError::ZeroTrace(_)));
    }

    #[test]
    fn validate_density_clamps_fp_dust() {
        let rho = DensityMatrix::new(diag(&[1.0, -0.5e-10])).unwrap();
        let tr = trace(rho.matrix()).re;
        assert!((tr - 1.0).abs() < 1e-10);
        let spec = herm_eigendecompose(rho.matrix()).unwrap();
        assert!(spec.eigenvalues[0] >= -PSD_TOL);
    }

    #[test]
    fn pure_state_weights() {
        // |ψ⟩ = (√0.4, √0.6): Tr(Π₀ ρ) = 0.4 by direct outer-product arithmetic.
        let rho = DensityMatrix::from_pure(&[re(0.4f64.sqrt()), re(0.6f64.sqrt())]).unwrap();
        let p0 = diag(&[1.0, 0.0]);
        assert!((rho.weight(&p0) - 0.4).abs() < 1e-12);
        assert!((trace(rho.matrix()).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigendecompose_identity_merges_degenerate_spectrum() {
        let spec = herm_eigendecompose(&identity(3)).unwrap();
        assert_eq!(spec.eigenvalues.len(), 1);
        assert!((spec.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!(max_abs_diff(&spec.projectors[0], &identity(3)) < 1e-12);
    }

    #[test]
    fn eigendecompose_diagonal() {
        let spec = herm_eigendecompose(&diag(&[0.7, 0.3])).unwrap();
        assert_eq!(spec.eigenvalues.len(), 2);
        assert!((spec.eigenvalues[0] - 0.3).abs() < 1e-12);
        assert!((spec.eigenvalues[1] - 0.7).abs() < 1e-12);
        assert!(max_abs_diff(&spec.projectors[0], &diag(&[0.0, 1.0])) < 1e-12);
        assert!(max_abs_diff(&spec.projectors[1], &diag(&[1.0, 0.0])) < 1e-12);
    }

    #[test]
    fn eigendecompose_sigma_x() {
        let spec = herm_eigendecompose(&sigma_x()).unwrap();
        assert_eq!(spec.eigenvalues.len(), 2);
        assert!((spec.eigenvalues[0] + 1.0).abs() < 1e-12);
        assert!((spec.eigenvalues[1] - 1.0).abs() < 1e-12);
        // P_∓ = (1 ∓ σ_x)/2, verified via idempotence and reconstruction.
        for p in &spec.projectors {
            assert!(op_norm(&(p * p - p)) < 1e-12);
        }
        let expected_minus = (identity(2) - sigma_x()).scale(0.5);
        assert!(max_abs_diff(&spec.projectors[0], &expected_minus) < 1e-12);
        assert!(max_abs_diff(&spec.reconstruct(), &sigma_x()) < 1e-12);
    }

    #[test]
    fn eigendecompose_sigma_y_complex_entries() {
        let spec = herm_eigendecompose(&sigma_y()).unwrap();
        assert!((spec.eigenvalues[0] + 1.0).abs() < 1e-12);
        assert!((spec.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!(max_abs_diff(&spec.reconstruct(), &sigma_y()) < 1e-12);
    }

    #[test]
    fn eigendecompose_rejects_non_hermitian() {
        let a = from_rows(&[&[C_ZERO, C_ONE], &[C_ZERO, C_ZERO]]);
        assert!(matches!(
            herm_eigendecompose(&a),
            Err(LinalgError::NotHermitian(_))
        ));
    }

    #[test]
    fn trace_norm_values() {
        assert!(trace_norm(&CMatrix::zeros(2, 2)).abs() < 1e-14);
        // diag(0.5, -0.5): singular values are the |eigenvalues| = (0.5, 0.5).
        assert!((trace_norm(&diag(&[0.5, -0.5])) - 1.0).abs() < 1e-12);
        let rho = DensityMatrix::from_pure(&[re(0.4f64.sqrt()), re(0.6f64.sqrt())]).unwrap();
        assert!((trace_norm(rho.matrix()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn op_norm_values() {
        assert!((op_norm(&identity(2)) - 1.0).abs() < 1e-12);
        assert!((op_norm(&diag(&[0.2, 0.9])) - 0.9).abs() < 1e-12);
        // Nilpotent (0 1; 0 0) has singular values (1, 0).
        let n = from_rows(&[&[C_ZERO, C_ONE], &[C_ZERO, C_ZERO]]);
        assert!((op_norm(&n) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unitary_exponential_at_zero_is_identity() {
        let u = matrix_exponential_unitary(&sigma_x(), 0.0).unwrap();
        assert!(max_abs_diff(&u, &identity(2)) < 1e-12);
    }

    #[test]
    fn unitary_exponential_pauli_closed_form() {
        // e^{-iπσ_x/2} = -iσ_x; cross-checked against a power-series oracle.
        let h = sigma_x().scale(std::f64::consts::FRAC_PI_2);
        let u = matrix_exponential_unitary(&h, 1.0).unwrap();
        let expected = sigma_x() * im(-1.0);
        assert!(max_abs_diff(&u, &expected) < 1e-9);
        let series = exp_series(&(h.clone() * im(-1.0)));
        assert!(max_abs_diff(&u, &series) < 1e-9);
    }

    #[test]
    fn unitary_exponential_inverse_property() {
        let h = hermitize(&from_rows(&[
            &[re(0.3), Complex64::new(0.1, 0.7)],
            &[Complex64::new(0.1, -0.7), re(-1.2)],
        ]));
        let u = matrix_exponential_unitary(&h, 0.83).unwrap();
        let v = matrix_exponential_unitary(&h, -0.83).unwrap();
        assert!(max_abs_diff(&(&u * &v), &identity(2)) < 1e-9);
        assert!(max_abs_diff(&(dagger(&u) * &u), &identity(2)) < 1e-9);
    }

    #[test]
    fn projector_family_validation() {
        let fam = ProjectorFamily::new(
            vec!["0".into(), "1".into()],
            vec![diag(&[1.0, 0.0]), diag(&[0.0, 1.0])],
        )
        .unwrap();
        assert_eq!(fam.dim(), 2);
        assert_eq!(fam.rank(0), 1);

        let err = ProjectorFamily::new(
            vec!["0".into(), "1".into()],
            vec![diag(&[1.0, 0.0]), diag(&[1.0, 0.0])],
        )
        .unwrap_err();
        assert!(matches!(err, LinalgError::NotOrthogonal(..)));

        let err = ProjectorFamily::new(vec!["0".into()], vec![diag(&[1.0, 0.0])]).unwrap_err();
        assert!(matches!(err, LinalgError::Incomplete(_)));

        let err = ProjectorFamily::new(vec!["0".into()], vec![diag(&[0.5, 0.5])]).unwrap_err();
        assert!(matches!(err, LinalgError::NotIdempotent { .. }));
    }
}
