//! Measurement channels: non-demolition models, per-step outcome-indexed
//! completely positive maps, perturbations, and the structural checks that
//! justify the fact decomposition.
//!
//! The reference dynamics is a `NonDemolitionModel`: a complete projector
//! family `{Π_ν}` together with amplitudes `c_ξ(ν)` defining Kraus operators
//! `C_ξ = Σ_ν c_ξ(ν) Π_ν` and conditional outcome distributions
//! `p(ξ|ν) = |c_ξ(ν)|²`. Perturbed and time-dependent dynamics are built on
//! top as [`StepDynamics`], which hands the sampler one completely positive
//! map per (step, outcome).

use crate::linalg::{
    check_square_finite, dagger, diag, herm_asymmetry, herm_eigen_raw, hermitize, identity,
    matrix_exponential_unitary, op_norm, trace, trace_norm, CMatrix, DensityMatrix, LinalgError,
    ProjectorFamily, C_ZERO, GROUP_TOL, HERM_INPUT_TOL,
};
use crate::rng::stream_rng;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Completeness tolerance on `Σ_ξ Φ_{*ξ}[1] = 1`.
pub const COMPLETENESS_TOL: f64 = 1e-10;
/// Conditional distributions closer than this in total variation make two
/// facts indistinguishable.
pub const FACT_DISTINCT_TOL: f64 = 1e-6;
/// Per-fact normalization tolerance on `Σ_ξ p(ξ|ν) = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Commutation residual above which joint diagonalization is refused.
pub const COMMUTATION_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("outcome distribution for fact {nu} sums to {sum}, expected 1")]
    NotNormalized { nu: String, sum: f64 },
    #[error("facts {0} and {1} have indistinguishable outcome distributions (TV {2:.3e})")]
    DegenerateFacts(String, String, f64),
    #[error("amplitude for outcome {xi}, fact {nu} vanishes (strict mode)")]
    ZeroAmplitude { xi: String, nu: String },
    #[error("unknown outcome label {0}")]
    UnknownOutcome(String),
    #[error("outcome maps do not commute (residual {0:.3e})")]
    NonCommuting(f64),
    #[error("no fixed point found within iteration budget")]
    NoFixedPoint,
    #[error("dynamics carries no reference non-demolition model")]
    NoReference,
    #[error("perturbation too large: 2·max‖H‖ = {0} exceeds the admissible bound {1}")]
    PerturbationTooLarge(f64, f64),
    #[error("mixture dominance violated for outcome {xi}: υ = {upsilon} ≤ ‖Υ‖ = {norm}")]
    DominanceViolated { xi: String, upsilon: f64, norm: f64 },
    #[error("assumption constants violated: d1 = {d1} must stay below d2 = {d2}")]
    AssumptionViolated { d1: f64, d2: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Finite ordered set of outcome symbols ξ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeAlphabet {
    labels: Vec<String>,
}

impl OutcomeAlphabet {
    pub fn new(labels: Vec<String>) -> Result<Self, ChannelError> {
        if labels.is_empty() {
            return Err(ChannelError::InvalidConfig(
                "alphabet must contain at least one outcome".into(),
            ));
        }
        for i in 0..labels.len() {
            for j in (i + 1)..labels.len() {
                if labels[i] == labels[j] {
                    return Err(ChannelError::InvalidConfig(format!(
                        "duplicate outcome label {}",
                        labels[i]
                    )));
                }
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, xi: usize) -> &str {
        &self.labels[xi]
    }

    pub fn index_of(&self, label: &str) -> Result<usize, ChannelError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ChannelError::UnknownOutcome(label.to_string()))
    }
}

/// One outcome's completely positive (or, for deviations, merely linear)
/// map, in Kraus or superoperator form.
///
/// Superoperators act on column-stacked `vec(ρ)`; for Kraus operators the
/// matrix is `Σ_α conj(Γ_α) ⊗ Γ_α`.
#[derive(Debug, Clone)]
pub enum OutcomeMap {
    Kraus(Vec<CMatrix>),
    Super { dim: usize, mat: CMatrix },
}

pub(crate) fn vec_col(m: &CMatrix) -> CMatrix {
    let d = m.nrows();
    CMatrix::from_fn(d * d, 1, |r, _| m[(r % d, r / d)])
}

pub(crate) fn unvec_col(v: &CMatrix, dim: usize) -> CMatrix {
    CMatrix::from_fn(dim, dim, |i, j| v[(i + dim * j, 0)])
}

impl OutcomeMap {
    pub fn dim(&self) -> usize {
        match self {
            OutcomeMap::Kraus(ops) => ops[0].nrows(),
            OutcomeMap::Super { dim, .. } => *dim,
        }
    }

    /// `Φ[ρ]`, unnormalized.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        match self {
            OutcomeMap::Kraus(ops) => {
                let dim = rho.nrows();
                let mut acc = CMatrix::zeros(dim, dim);
                for g in ops {
                    acc += g * rho * dagger(g);
                }
                acc
            }
            OutcomeMap::Super { dim, mat } => unvec_col(&(mat * vec_col(rho)), *dim),
        }
    }

    /// `Φ_*[1]`: the dual image of the identity. For completely positive
    /// maps its spectrum carries both the map norm (largest eigenvalue) and
    /// the outcome weights `Tr(Φ[ρ]) = Tr(Φ_*[1] ρ)`.
    pub fn dual_identity(&self) -> CMatrix {
        match self {
            OutcomeMap::Kraus(ops) => {
                let dim = ops[0].nrows();
                let mut acc = CMatrix::zeros(dim, dim);
                for g in ops {
                    acc += dagger(g) * g;
                }
                acc
            }
            OutcomeMap::Super { dim, mat } => {
                hermitize(&unvec_col(&(dagger(mat) * vec_col(&identity(*dim))), *dim))
            }
        }
    }

    /// Dense superoperator matrix acting on `vec(ρ)`.
    pub fn superoperator(&self) -> CMatrix {
        match self {
            OutcomeMap::Kraus(ops) => {
                let dim = ops[0].nrows();
                let mut acc = CMatrix::zeros(dim * dim, dim * dim);
                for g in ops {
                    acc += g.conjugate().kronecker(g);
                }
                acc
            }
            OutcomeMap::Super { mat, .. } => mat.clone(),
        }
    }

    /// Compose with a unitary kick applied before the map: `ρ ↦ Φ[UρU†]`.
    pub(crate) fn precompose_unitary(&self, u: &CMatrix) -> OutcomeMap {
        match self {
            OutcomeMap::Kraus(ops) => OutcomeMap::Kraus(ops.iter().map(|g| g * u).collect()),
            OutcomeMap::Super { dim, mat } => {
                let ad_u = u.conjugate().kronecker(u);
                OutcomeMap::Super {
                    dim: *dim,
                    mat: mat * ad_u,
                }
            }
        }
    }
}

/// Apply one outcome's map and report the Born weight `Tr Φ_ξ[ρ]`.
pub fn apply_outcome(map: &OutcomeMap, rho: &DensityMatrix) -> (CMatrix, f64) {
    let image = map.apply(rho.matrix());
    let weight = trace(&image).re;
    (image, weight)
}

/// Outcome-indexed family of maps with the completeness normalization
/// `Σ_ξ Φ_{*ξ}[1] = 1`.
#[derive(Debug, Clone)]
pub struct KrausFamily {
    alphabet: OutcomeAlphabet,
    maps: Vec<OutcomeMap>,
    dim: usize,
}

/// `‖Σ_ξ Φ_{*ξ}[1] − 1‖` for an arbitrary map family.
pub fn completeness_residual(maps: &[OutcomeMap]) -> f64 {
    let dim = maps[0].dim();
    let mut acc = CMatrix::zeros(dim, dim);
    for m in maps {
        acc += m.dual_identity();
    }
    op_norm(&(acc - identity(dim)))
}

impl KrausFamily {
    pub fn new(alphabet: OutcomeAlphabet, maps: Vec<OutcomeMap>) -> Result<Self, ChannelError> {
        if alphabet.len() != maps.len() {
            return Err(ChannelError::InvalidConfig(format!(
                "{} outcome labels for {} maps",
                alphabet.len(),
                maps.len()
            )));
        }
        let dim = maps[0].dim();
        for m in &maps {
            if m.dim() != dim {
                return Err(LinalgError::DimMismatch(m.dim(), dim).into());
            }
        }
        let residual = completeness_residual(&maps);
        if residual > COMPLETENESS_TOL {
            return Err(ChannelError::InvalidConfig(format!(
                "outcome maps are not trace preserving (completeness residual {residual:.3e})"
            )));
        }
        Ok(Self {
            alphabet,
            maps,
            dim,
        })
    }

    pub fn alphabet(&self) -> &OutcomeAlphabet {
        &self.alphabet
    }

    pub fn maps(&self) -> &[OutcomeMap] {
        &self.maps
    }

    pub fn map(&self, xi: usize) -> &OutcomeMap {
        &self.maps[xi]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Reference non-demolition dynamics: projectors, amplitudes, conditional
/// outcome distributions.
#[derive(Debug, Clone)]
pub struct NonDemolitionModel {
    alphabet: OutcomeAlphabet,
    projectors: ProjectorFamily,
    /// `amplitudes[xi][nu] = c_ξ(ν)`.
    amplitudes: Vec<Vec<Complex64>>,
    /// `cond_probs[xi][nu] = |c_ξ(ν)|²`.
    cond_probs: Vec<Vec<f64>>,
    /// Materialized Kraus operators `C_ξ = Σ_ν c_ξ(ν) Π_ν`.
    kraus: Vec<CMatrix>,
}

/// Total variation distance of two finite distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

impl NonDemolitionModel {
    /// Build and validate a non-demolition model from a projector family and
    /// an amplitude table. With `strict` set, any vanishing `p(ξ|ν)` is
    /// rejected (required by the perturbative estimation machinery).
    pub fn new(
        alphabet: OutcomeAlphabet,
        projectors: ProjectorFamily,
        amplitudes: Vec<Vec<Complex64>>,
        strict: bool,
    ) -> Result<Self, ChannelError> {
        let n_xi = alphabet.len();
        let n_nu = projectors.len();
        if n_xi < 2 {
            return Err(ChannelError::InvalidConfig(
                "a non-demolition model needs at least two outcomes".into(),
            ));
        }
        if amplitudes.len() != n_xi || amplitudes.iter().any(|row| row.len() != n_nu) {
            return Err(ChannelError::InvalidConfig(
                "amplitude table shape must be |alphabet| × |facts|".into(),
            ));
        }
        let cond_probs: Vec<Vec<f64>> = amplitudes
            .iter()
            .map(|row| row.iter().map(|c| c.norm_sqr()).collect())
            .collect();
        for nu in 0..n_nu {
            let sum: f64 = (0..n_xi).map(|xi| cond_probs[xi][nu]).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(ChannelError::NotNormalized {
                    nu: projectors.label(nu).to_string(),
                    sum,
                });
            }
            if strict {
                for xi in 0..n_xi {
                    if cond_probs[xi][nu] == 0.0 {
                        return Err(ChannelError::ZeroAmplitude {
                            xi: alphabet.label(xi).to_string(),
                            nu: projectors.label(nu).to_string(),
                        });
                    }
                }
            }
        }
        for nu in 0..n_nu {
            for nu2 in (nu + 1)..n_nu {
                let p: Vec<f64> = (0..n_xi).map(|xi| cond_probs[xi][nu]).collect();
                let q: Vec<f64> = (0..n_xi).map(|xi| cond_probs[xi][nu2]).collect();
                let tv = total_variation(&p, &q);
                if tv <= FACT_DISTINCT_TOL {
                    return Err(ChannelError::DegenerateFacts(
                        projectors.label(nu).to_string(),
                        projectors.label(nu2).to_string(),
                        tv,
                    ));
                }
            }
        }
        let dim = projectors.dim();
        let kraus: Vec<CMatrix> = (0..n_xi)
            .map(|xi| {
                let mut c = CMatrix::zeros(dim, dim);
                for nu in 0..n_nu {
                    c += projectors.projector(nu) * amplitudes[xi][nu];
                }
                c
            })
            .collect();
        Ok(Self {
            alphabet,
            projectors,
            amplitudes,
            cond_probs,
            kraus,
        })
    }

    /// Two-outcome, two-fact model on a qubit: `p(first outcome | fact ν)`
    /// given per fact, amplitudes real positive square roots, projectors the
    /// computational-basis ones. The workhorse desk model.
    pub fn binary_example(p_first_given_0: f64, p_first_given_1: f64) -> Self {
        let alphabet = OutcomeAlphabet::new(vec!["L".into(), "R".into()]).unwrap();
        let projectors = ProjectorFamily::new(
            vec!["0".into(), "1".into()],
            vec![diag(&[1.0, 0.0]), diag(&[0.0, 1.0])],
        )
        .unwrap();
        let amplitudes = vec![
            vec![
                Complex64::new(p_first_given_0.sqrt(), 0.0),
                Complex64::new(p_first_given_1.sqrt(), 0.0),
            ],
            vec![
                Complex64::new((1.0 - p_first_given_0).sqrt(), 0.0),
                Complex64::new((1.0 - p_first_given_1).sqrt(), 0.0),
            ],
        ];
        Self::new(alphabet, projectors, amplitudes, true).unwrap()
    }

    pub fn alphabet(&self) -> &OutcomeAlphabet {
        &self.alphabet
    }

    pub fn projectors(&self) -> &ProjectorFamily {
        &self.projectors
    }

    pub fn dim(&self) -> usize {
        self.projectors.dim()
    }

    pub fn n_outcomes(&self) -> usize {
        self.alphabet.len()
    }

    pub fn n_facts(&self) -> usize {
        self.projectors.len()
    }

    pub fn amplitude(&self, xi: usize, nu: usize) -> Complex64 {
        self.amplitudes[xi][nu]
    }

    pub fn amplitudes(&self) -> &[Vec<Complex64>] {
        &self.amplitudes
    }

    pub fn cond_prob(&self, xi: usize, nu: usize) -> f64 {
        self.cond_probs[xi][nu]
    }

    /// `p(·|ν)` as a vector over the alphabet.
    pub fn cond_dist(&self, nu: usize) -> Vec<f64> {
        (0..self.n_outcomes())
            .map(|xi| self.cond_probs[xi][nu])
            .collect()
    }

    pub fn kraus_op(&self, xi: usize) -> &CMatrix {
        &self.kraus[xi]
    }

    /// Outcome maps `Φ̃_ξ[ρ] = C_ξ ρ C_ξ†`.
    pub fn maps(&self) -> Vec<OutcomeMap> {
        self.kraus
            .iter()
            .map(|c| OutcomeMap::Kraus(vec![c.clone()]))
            .collect()
    }

    /// Born weights `Tr(Π_ν ρ)` of a state over the facts.
    pub fn born_weights(&self, rho: &DensityMatrix) -> Vec<f64> {
        (0..self.n_facts())
            .map(|nu| rho.weight(self.projectors.projector(nu)))
            .collect()
    }

    /// Per-step coherence decay factor `δ_{νν'} = Σ_ξ |c_ξ(ν)||c_ξ(ν')|`
    /// (a Bhattacharyya coefficient; < 1 for distinct facts).
    pub fn coherence_decay(&self, nu: usize, nu2: usize) -> f64 {
        (0..self.n_outcomes())
            .map(|xi| self.amplitudes[xi][nu].norm() * self.amplitudes[xi][nu2].norm())
            .sum()
    }

    /// Smallest pairwise total-variation distance of the conditional
    /// distributions.
    pub fn min_pairwise_tv(&self) -> f64 {
        let mut min = f64::INFINITY;
        for nu in 0..self.n_facts() {
            for nu2 in (nu + 1)..self.n_facts() {
                min = min.min(total_variation(&self.cond_dist(nu), &self.cond_dist(nu2)));
            }
        }
        min
    }
}

/// Residual matrix of the pairwise commutators of the dual maps, evaluated
/// exactly on the operator basis `{|i⟩⟨j|}`.
pub fn check_map_commutation(maps: &[OutcomeMap]) -> Vec<Vec<f64>> {
    let dim = maps[0].dim();
    let duals: Vec<CMatrix> = maps.iter().map(|m| dagger(&m.superoperator())).collect();
    let n = maps.len();
    let mut residuals = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let comm = &duals[a] * &duals[b] - &duals[b] * &duals[a];
            let mut worst: f64 = 0.0;
            for col in 0..dim * dim {
                let image = unvec_col(&CMatrix::from_column_slice(
                    dim * dim,
                    1,
                    comm.column(col).as_slice(),
                ), dim);
                worst = worst.max(op_norm(&image));
            }
            residuals[a][b] = worst;
            residuals[b][a] = worst;
        }
    }
    residuals
}

/// Largest pairwise commutator norm of the dual identity images
/// `Φ_{*ξ}[1]`.
pub fn check_unital_images_commute(maps: &[OutcomeMap]) -> f64 {
    let duals: Vec<CMatrix> = maps.iter().map(|m| m.dual_identity()).collect();
    let mut worst: f64 = 0.0;
    for a in 0..duals.len() {
        for b in (a + 1)..duals.len() {
            worst = worst.max(op_norm(&(&duals[a] * &duals[b] - &duals[b] * &duals[a])));
        }
    }
    worst
}

/// Joint spectral projectors of the commuting family `{Φ_{*ξ}[1]}` and the
/// per-fact eigenvalue table `p(ξ|ν)`.
///
/// Facts whose distributions coincide (within the grouping tolerance) are
/// merged into one projector. Refuses families whose unital images fail to
/// commute within [`COMMUTATION_TOL`].
pub fn joint_spectral_projectors(
    maps: &[OutcomeMap],
) -> Result<(ProjectorFamily, Vec<Vec<f64>>), ChannelError> {
    let residual = check_unital_images_commute(maps);
    if residual > COMMUTATION_TOL {
        return Err(ChannelError::NonCommuting(residual));
    }
    let dim = maps[0].dim();
    let duals: Vec<CMatrix> = maps.iter().map(|m| m.dual_identity()).collect();

    // Simultaneous block diagonalization: refine an orthonormal-basis
    // partition of the space one dual image at a time.
    let mut blocks: Vec<CMatrix> = vec![identity(dim)];
    for e in &duals {
        let mut refined = Vec::new();
        for basis in &blocks {
            let compressed = hermitize(&(dagger(basis) * e * basis));
            let (values, vectors) = herm_eigen_raw(&compressed)?;
            let m = values.len();
            let mut start = 0;
            while start < m {
                let mut end = start + 1;
                while end < m && values[end] - values[end - 1] <= GROUP_TOL {
                    end += 1;
                }
                let sub = vectors.columns(start, end - start).into_owned();
                refined.push(basis * sub);
                start = end;
            }
        }
        blocks = refined;
    }

    // Eigenvalue table per block, then merge blocks with identical rows.
    let mut dists: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| {
            let m = b.ncols() as f64;
            duals
                .iter()
                .map(|e| (trace(&(dagger(b) * e * b)).re / m).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    let mut merged_projectors: Vec<CMatrix> = Vec::new();
    let mut merged_dists: Vec<Vec<f64>> = Vec::new();
    'outer: for (block, dist) in blocks.iter().zip(dists.drain(..)) {
        let proj = hermitize(&(block * dagger(block)));
        for (existing, pd) in merged_projectors.iter_mut().zip(&merged_dists) {
            let gap = dist
                .iter()
                .zip(pd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap <= GROUP_TOL {
                *existing += proj;
                continue 'outer;
            }
        }
        merged_projectors.push(proj);
        merged_dists.push(dist);
    }

    // Deterministic order: lexicographically descending eigenvalue rows.
    let mut order: Vec<usize> = (0..merged_projectors.len()).collect();
    order.sort_by(|&a, &b| {
        for xi in 0..merged_dists[a].len() {
            match merged_dists[b][xi].total_cmp(&merged_dists[a][xi]) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    let projectors: Vec<CMatrix> = order
        .iter()
        .map(|&i| hermitize(&merged_projectors[i]))
        .collect();
    let p_table_by_fact: Vec<Vec<f64>> = order.iter().map(|&i| merged_dists[i].clone()).collect();
    let labels: Vec<String> = (0..projectors.len()).map(|i| format!("f{i}")).collect();
    let family = ProjectorFamily::new(labels, projectors)?;
    // Return the table indexed [xi][nu] to match the model convention.
    let n_xi = maps.len();
    let table: Vec<Vec<f64>> = (0..n_xi)
        .map(|xi| p_table_by_fact.iter().map(|row| row[xi]).collect())
        .collect();
    Ok((family, table))
}

/// Fixed point of the total state-evolution map `Φ(σ_S) = Σ_ξ Φ_ξ`.
///
/// Computes the spectral projection of the superoperator onto its
/// eigenvalue-1 space by smoothed power iteration — repeated squaring of
/// `(I + S)/2`, which keeps the fixed space, damps the rest of the
/// peripheral spectrum, and converges geometrically — applied to the
/// maximally mixed state. The result equals the Cesàro (ergodic) limit of
/// `Φⁿ[1/d]`: a deterministic, basis-independent representative even when
/// the fixed space is degenerate. The `faithful` flag reports whether the
/// fixed point has full rank.
pub fn stationary_state(maps: &[OutcomeMap]) -> Result<(DensityMatrix, bool), ChannelError> {
    let dim = maps[0].dim();
    let total_super = {
        let mut acc = CMatrix::zeros(dim * dim, dim * dim);
        for m in maps {
            acc += m.superoperator();
        }
        acc
    };
    let total_apply = |rho: &CMatrix| -> CMatrix {
        let mut acc = CMatrix::zeros(dim, dim);
        for m in maps {
            acc += m.apply(rho);
        }
        acc
    };
    let mixed = identity(dim).scale(1.0 / dim as f64);
    let mut smoothed = (identity(dim * dim) + &total_super).scale(0.5);
    let mut last = unvec_col(&(&smoothed * vec_col(&mixed)), dim);
    for _ in 0..60 {
        smoothed = &smoothed * &smoothed;
        let image = unvec_col(&(&smoothed * vec_col(&mixed)), dim);
        let step = trace_norm(&(&image - &last));
        last = image;
        if step <= 1e-12 {
            break;
        }
    }
    let residual = trace_norm(&(total_apply(&last) - &last));
    if residual > 1e-9 {
        return Err(ChannelError::NoFixedPoint);
    }
    let state = DensityMatrix::new(hermitize(&last))?;
    let (values, _) = herm_eigen_raw(state.matrix())?;
    let faithful = values[0] > 1e-10;
    Ok((state, faithful))
}

/// How the `d1` perturbation constant was obtained.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum D1Mode {
    /// The dynamics equals its reference; `d1 = 0` exactly.
    Exact,
    /// Closed-form bound (`2·max_k ‖H^{(k)}‖` for Hamiltonian kicks).
    Analytic,
    /// Sampled lower-bound estimate over random pure inputs; `upper` is a
    /// conservative per-Kraus bound when one is available.
    SampledLower { upper: Option<f64> },
}

/// Constants of the non-demolition closeness assumption: perturbation size
/// `d1`, outcome-weight floor `d2`, their gap `d = d2 − d1`, and the map
/// norms `‖Φ̃_ξ‖`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AssumptionConstants {
    pub d1: f64,
    pub d2: f64,
    pub d: f64,
    pub per_xi_norms: Vec<f64>,
    pub d1_mode: D1Mode,
}

/// How `d1` should be determined by [`assumption_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum D1Estimation {
    /// Use the closed-form value declared by the dynamics constructor.
    Analytic,
    /// Estimate a lower bound by maximizing the per-step trace-norm
    /// distance over random pure inputs.
    Sampled { n_samples: usize, seed: u64 },
}

/// Hamiltonian kick schedule for perturbed dynamics.
#[derive(Debug, Clone)]
pub enum HamiltonianSchedule {
    Constant(CMatrix),
    /// One Hamiltonian per step; steps past the end reuse the last entry.
    PerStep(Vec<CMatrix>),
}

impl HamiltonianSchedule {
    fn entries(&self) -> &[CMatrix] {
        match self {
            HamiltonianSchedule::Constant(h) => std::slice::from_ref(h),
            HamiltonianSchedule::PerStep(hs) => hs,
        }
    }
}

#[derive(Debug, Clone)]
struct SlotMaps {
    maps: Vec<OutcomeMap>,
    duals: Vec<CMatrix>,
}

impl SlotMaps {
    fn new(maps: Vec<OutcomeMap>) -> Self {
        let duals = maps.iter().map(|m| hermitize(&m.dual_identity())).collect();
        Self { maps, duals }
    }
}

#[derive(Debug, Clone)]
enum SlotSelect {
    /// `slot = min(k, last)`.
    PerStep { last: usize },
    /// Cycle phases: slot 0 at `k = 0`, slot 2 at burst starts (`k % m = 0`,
    /// `k > 0`), slot 1 inside bursts.
    Cycle { m: usize },
}

/// Per-step outcome-indexed dynamics `Φ^{(k)}_ξ`.
///
/// Built-in constructors produce history-independent maps; the step index
/// selects a precomposed slot. Immutable after construction and safe to
/// share across concurrent samplers.
#[derive(Debug, Clone)]
pub struct StepDynamics {
    alphabet: OutcomeAlphabet,
    dim: usize,
    reference: Option<NonDemolitionModel>,
    slots: Vec<SlotMaps>,
    select: SlotSelect,
    analytic_d1: Option<f64>,
}

impl StepDynamics {
    /// The unperturbed reference dynamics itself.
    pub fn from_model(model: &NonDemolitionModel) -> Self {
        let slots = vec![SlotMaps::new(model.maps())];
        Self {
            alphabet: model.alphabet().clone(),
            dim: model.dim(),
            reference: Some(model.clone()),
            slots,
            select: SlotSelect::PerStep { last: 0 },
            analytic_d1: Some(0.0),
        }
    }

    /// Step-independent dynamics from arbitrary outcome maps, enforcing the
    /// completeness normalization.
    pub fn from_family(family: KrausFamily, reference: Option<NonDemolitionModel>) -> Self {
        let dim = family.dim();
        let alphabet = family.alphabet().clone();
        let slots = vec![SlotMaps::new(family.maps().to_vec())];
        Self {
            alphabet,
            dim,
            reference,
            slots,
            select: SlotSelect::PerStep { last: 0 },
            analytic_d1: None,
        }
    }

    /// Step-independent dynamics without the completeness check. Intended
    /// for deliberately broken families in diagnostics; the consistency
    /// checks report the deficit instead of rejecting it.
    pub fn from_maps_unchecked(
        alphabet: OutcomeAlphabet,
        maps: Vec<OutcomeMap>,
        reference: Option<NonDemolitionModel>,
    ) -> Self {
        let dim = maps[0].dim();
        let slots = vec![SlotMaps::new(maps)];
        Self {
            alphabet,
            dim,
            reference,
            slots,
            select: SlotSelect::PerStep { last: 0 },
            analytic_d1: None,
        }
    }

    pub fn alphabet(&self) -> &OutcomeAlphabet {
        &self.alphabet
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_outcomes(&self) -> usize {
        self.alphabet.len()
    }

    pub fn reference(&self) -> Option<&NonDemolitionModel> {
        self.reference.as_ref()
    }

    /// Closed-form `d1` if the constructor could provide one.
    pub fn analytic_d1(&self) -> Option<f64> {
        self.analytic_d1
    }

    fn slot(&self, k: usize) -> &SlotMaps {
        let idx = match &self.select {
            SlotSelect::PerStep { last } => k.min(*last),
            SlotSelect::Cycle { m } => {
                if k == 0 {
                    0
                } else if k % m == 0 {
                    2
                } else {
                    1
                }
            }
        };
        &self.slots[idx]
    }

    /// The map applied at step `k` (0-based) for outcome `xi`. Built-in
    /// dynamics ignore the history prefix.
    pub fn map_at(&self, k: usize, xi: usize) -> &OutcomeMap {
        &self.slot(k).maps[xi]
    }

    /// `Φ^{(k)}_{*ξ}[1]`, precomputed per slot.
    pub fn dual_identity_at(&self, k: usize, xi: usize) -> &CMatrix {
        &self.slot(k).duals[xi]
    }

    /// Outcome weights at step `k` for state `rho` (trace of each image).
    pub fn weights_at(&self, k: usize, rho: &CMatrix) -> Vec<f64> {
        let slot = self.slot(k);
        slot.duals
            .iter()
            .map(|e| trace(&(e * rho)).re)
            .collect()
    }

    /// Unnormalized image of `rho` under outcome `xi` at step `k`.
    pub fn apply_at(&self, k: usize, xi: usize, rho: &CMatrix) -> CMatrix {
        self.slot(k).maps[xi].apply(rho)
    }

    /// Worst per-slot completeness residual `‖Σ_ξ Φ_{*ξ}[1] − 1‖`.
    pub fn completeness_residual(&self) -> f64 {
        self.slots
            .iter()
            .map(|s| completeness_residual(&s.maps))
            .fold(0.0, f64::max)
    }

    /// Number of distinct step slots (1 for homogeneous dynamics).
    pub(crate) fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub(crate) fn slot_maps(&self, idx: usize) -> &[OutcomeMap] {
        &self.slots[idx].maps
    }
}

/// Unitary-kick perturbation of a reference model: at step `k` the state is
/// conjugated by `e^{-iH^{(k)}}` before the reference Kraus operator acts.
///
/// `declared_d1`, when given, is the admissible perturbation budget: the
/// construction fails if `2·max_k ‖H^{(k)}‖` exceeds it. Without it the
/// closed-form value itself is stored (it must stay below 1).
pub fn build_hamiltonian_perturbation(
    model: &NonDemolitionModel,
    schedule: HamiltonianSchedule,
    declared_d1: Option<f64>,
) -> Result<StepDynamics, ChannelError> {
    let dim = model.dim();
    let mut max_norm: f64 = 0.0;
    for h in schedule.entries() {
        if check_square_finite(h)? != dim {
            return Err(LinalgError::DimMismatch(h.nrows(), dim).into());
        }
        let asym = herm_asymmetry(h);
        if asym > HERM_INPUT_TOL {
            return Err(LinalgError::NotHermitian(asym).into());
        }
        max_norm = max_norm.max(op_norm(h));
    }
    let analytic = 2.0 * max_norm;
    let budget = declared_d1.unwrap_or(1.0);
    if analytic > budget + 1e-15 {
        return Err(ChannelError::PerturbationTooLarge(analytic, budget));
    }
    let base = model.maps();
    let slots: Vec<SlotMaps> = schedule
        .entries()
        .iter()
        .map(|h| {
            let u = matrix_exponential_unitary(h, 1.0)?;
            Ok(SlotMaps::new(
                base.iter().map(|m| m.precompose_unitary(&u)).collect(),
            ))
        })
        .collect::<Result<_, ChannelError>>()?;
    let last = slots.len() - 1;
    Ok(StepDynamics {
        alphabet: model.alphabet().clone(),
        dim,
        reference: Some(model.clone()),
        slots,
        select: SlotSelect::PerStep { last },
        analytic_d1: Some(declared_d1.unwrap_or(analytic)),
    })
}

/// Constants of the closeness assumption for a dynamics against its
/// reference model.
///
/// `‖Φ̃_ξ‖` is exact for completely positive maps (the largest eigenvalue of
/// `Φ̃_{*ξ}[1]`), and `d2` is the smallest rescaled eigenvalue floor. `d1`
/// is either the constructor's closed-form value or a sampled lower-bound
/// estimate of the induced trace-norm distance, flagged as such.
pub fn assumption_constants(
    dyn_: &StepDynamics,
    mode: D1Estimation,
) -> Result<AssumptionConstants, ChannelError> {
    let model = dyn_.reference().ok_or(ChannelError::NoReference)?;
    let reference_maps = model.maps();
    let mut per_xi_norms = Vec::with_capacity(reference_maps.len());
    let mut d2 = f64::INFINITY;
    for m in &reference_maps {
        let (values, _) = herm_eigen_raw(&hermitize(&m.dual_identity()))?;
        let min = values[0].max(0.0);
        let max = values[values.len() - 1];
        per_xi_norms.push(max);
        d2 = d2.min(min / max);
    }
    let (d1, d1_mode) = match mode {
        D1Estimation::Analytic => {
            let v = dyn_.analytic_d1().ok_or_else(|| {
                ChannelError::InvalidConfig(
                    "dynamics carries no closed-form d1; use sampled estimation".into(),
                )
            })?;
            let mode = if v == 0.0 { D1Mode::Exact } else { D1Mode::Analytic };
            (v, mode)
        }
        D1Estimation::Sampled { n_samples, seed } => {
            let lower = sampled_d1_lower(dyn_, model, &reference_maps, n_samples, seed, &per_xi_norms);
            let upper = per_kraus_d1_upper(dyn_, model, &per_xi_norms);
            (lower, D1Mode::SampledLower { upper })
        }
    };
    if d1 >= d2 {
        return Err(ChannelError::AssumptionViolated { d1, d2 });
    }
    Ok(AssumptionConstants {
        d1,
        d2,
        d: d2 - d1,
        per_xi_norms,
        d1_mode,
    })
}

fn random_pure(dim: usize, rng: &mut impl Rng) -> CMatrix {
    let psi: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    CMatrix::from_fn(dim, dim, |i, j| psi[i] * psi[j].conj() / norm2)
}

fn sampled_d1_lower(
    dyn_: &StepDynamics,
    model: &NonDemolitionModel,
    reference_maps: &[OutcomeMap],
    n_samples: usize,
    seed: u64,
    norms: &[f64],
) -> f64 {
    let dim = model.dim();
    let mut rng = stream_rng(seed, 0);
    let mut states: Vec<CMatrix> = (0..dim)
        .map(|i| {
            CMatrix::from_fn(dim, dim, |r, c| {
                if r == i && c == i {
                    Complex64::new(1.0, 0.0)
                } else {
                    C_ZERO
                }
            })
        })
        .collect();
    states.extend((0..n_samples).map(|_| random_pure(dim, &mut rng)));
    let mut worst: f64 = 0.0;
    for slot in 0..dyn_.n_slots() {
        for (xi, reference) in reference_maps.iter().enumerate() {
            let actual = &dyn_.slot_maps(slot)[xi];
            for rho in &states {
                let delta = trace_norm(&(actual.apply(rho) - reference.apply(rho)));
                worst = worst.max(delta / norms[xi]);
            }
        }
    }
    worst
}

/// Conservative upper bound on the induced trace-norm distance when both
/// sides are single-Kraus maps: `‖Γ−Γ̃‖(‖Γ‖+‖Γ̃‖)/‖Φ̃_ξ‖`.
fn per_kraus_d1_upper(
    dyn_: &StepDynamics,
    model: &NonDemolitionModel,
    norms: &[f64],
) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for slot in 0..dyn_.n_slots() {
        for xi in 0..model.n_outcomes() {
            let reference = model.kraus_op(xi);
            match &dyn_.slot_maps(slot)[xi] {
                OutcomeMap::Kraus(ops) if ops.len() == 1 => {
                    let g = &ops[0];
                    let bound =
                        op_norm(&(g - reference)) * (op_norm(g) + op_norm(reference)) / norms[xi];
                    worst = worst.max(bound);
                }
                _ => return None,
            }
        }
    }
    Some(worst)
}

/// Mixture family `Φ̃_ξ = υ_ξ·id + Υ_ξ` with the closed-form weight floor
/// `d2 = sup_ξ (1 − 2‖Υ_ξ‖/(υ_ξ + ‖Υ_ξ‖))`.
#[derive(Debug, Clone)]
pub struct MixtureChannel {
    pub maps: Vec<OutcomeMap>,
    pub d2: f64,
    /// State-restricted norm estimates `‖Υ_ξ‖` used in the formula.
    pub deviation_norms: Vec<f64>,
}

/// Estimate `sup_ρ ‖Υ[ρ]‖` over density matrices by maximizing over basis
/// states and random pure states. A lower-bound estimate; adequate at desk
/// dimensions.
pub fn state_norm_estimate(map: &OutcomeMap, n_samples: usize, seed: u64) -> f64 {
    let dim = map.dim();
    let mut rng = stream_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        let e = CMatrix::from_fn(dim, dim, |r, c| {
            if r == i && c == i {
                Complex64::new(1.0, 0.0)
            } else {
                C_ZERO
            }
        });
        worst = worst.max(trace_norm(&map.apply(&e)));
    }
    for _ in 0..n_samples {
        let rho = random_pure(dim, &mut rng);
        worst = worst.max(trace_norm(&map.apply(&rho)));
    }
    worst
}

/// Build a mixture family from outcome weights `υ` and deviation maps `Υ`
/// (which must sum to zero). Fails with `DominanceViolated` when some
/// `υ_ξ ≤ ‖Υ_ξ‖`.
pub fn build_mixture_channel(
    alphabet: &OutcomeAlphabet,
    upsilon: &[f64],
    deviations: &[OutcomeMap],
    norm_samples: usize,
    seed: u64,
) -> Result<MixtureChannel, ChannelError> {
    if upsilon.len() != alphabet.len() || deviations.len() != alphabet.len() {
        return Err(ChannelError::InvalidConfig(
            "mixture needs one weight and one deviation per outcome".into(),
        ));
    }
    let sum: f64 = upsilon.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL || upsilon.iter().any(|&u| u <= 0.0) {
        return Err(ChannelError::InvalidConfig(
            "mixture weights must be a probability distribution".into(),
        ));
    }
    let dim = deviations[0].dim();
    let mut total = CMatrix::zeros(dim * dim, dim * dim);
    for d in deviations {
        total += d.superoperator();
    }
    let imbalance = total.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if imbalance > 1e-12 {
        return Err(ChannelError::InvalidConfig(format!(
            "deviation maps must sum to zero (residual {imbalance:.3e})"
        )));
    }
    let mut maps = Vec::with_capacity(alphabet.len());
    let mut deviation_norms = Vec::with_capacity(alphabet.len());
    // The constant must floor every outcome uniformly, so the per-outcome
    // values combine through the minimum.
    let mut d2: f64 = f64::INFINITY;
    for (xi, (dev, &u)) in deviations.iter().zip(upsilon).enumerate() {
        let norm = state_norm_estimate(dev, norm_samples, seed.wrapping_add(xi as u64));
        if u <= norm {
            return Err(ChannelError::DominanceViolated {
                xi: alphabet.label(xi).to_string(),
                upsilon: u,
                norm,
            });
        }
        d2 = d2.min(1.0 - 2.0 * norm / (u + norm));
        let sup = identity(dim * dim).scale(u) + dev.superoperator();
        maps.push(OutcomeMap::Super { dim, mat: sup });
        deviation_norms.push(norm);
    }
    Ok(MixtureChannel {
        maps,
        d2,
        deviation_norms,
    })
}

/// Measurement-cycle configuration: a burst of `measurements` probe
/// measurements of total duration `lambda1`, free Hamiltonian evolution for
/// the remaining `lambda2 − lambda1` of each cycle.
#[derive(Debug, Clone)]
pub struct CycleConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub measurements: usize,
    pub hamiltonian: CMatrix,
    pub model: NonDemolitionModel,
}

impl CycleConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.lambda1 >= 0.0 && self.lambda2 > self.lambda1) {
            return Err(ChannelError::InvalidConfig(format!(
                "need 0 ≤ lambda1 < lambda2, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        if self.measurements == 0 {
            return Err(ChannelError::InvalidConfig(
                "at least one measurement per burst".into(),
            ));
        }
        let dim = self.model.dim();
        if self.hamiltonian.nrows() != dim || self.hamiltonian.ncols() != dim {
            return Err(ChannelError::InvalidConfig(
                "system Hamiltonian dimension does not match the model".into(),
            ));
        }
        let asym = herm_asymmetry(&self.hamiltonian);
        if asym > HERM_INPUT_TOL {
            return Err(ChannelError::InvalidConfig(format!(
                "system Hamiltonian is not Hermitian (asymmetry {asym:.3e})"
            )));
        }
        Ok(())
    }
}

/// Step dynamics of the cycle protocol: measurements at relative times
/// `j·λ₁/(M−1)` inside each burst, one long unitary stretch of duration
/// `λ₂ − λ₁` between bursts.
pub fn build_cycle_dynamics(cfg: &CycleConfig) -> Result<StepDynamics, ChannelError> {
    cfg.validate()?;
    let base = cfg.model.maps();
    let dt = if cfg.measurements > 1 {
        cfg.lambda1 / (cfg.measurements - 1) as f64
    } else {
        0.0
    };
    let gap = cfg.lambda2 - cfg.lambda1;
    let u_dt = matrix_exponential_unitary(&cfg.hamiltonian, dt)?;
    let u_gap = matrix_exponential_unitary(&cfg.hamiltonian, gap)?;
    let slots = vec![
        SlotMaps::new(base.clone()),
        SlotMaps::new(base.iter().map(|m| m.precompose_unitary(&u_dt)).collect()),
        SlotMaps::new(base.iter().map(|m| m.precompose_unitary(&u_gap)).collect()),
    ];
    let h_norm = op_norm(&cfg.hamiltonian);
    let analytic_d1 = 2.0 * h_norm * dt.max(gap);
    Ok(StepDynamics {
        alphabet: cfg.model.alphabet().clone(),
        dim: cfg.model.dim(),
        reference: Some(cfg.model.clone()),
        slots,
        select: SlotSelect::Cycle {
            m: cfg.measurements,
        },
        analytic_d1: Some(analytic_d1),
    })
}
