//! The statistical layer: relative entropy, the fact estimator, exact and
//! Monte-Carlo error probabilities, closed-form decay bounds, large-deviation
//! certificates, the de Finetti decomposition, and purification diagnostics.

use crate::channels::{AssumptionConstants, ChannelError, NonDemolitionModel, StepDynamics};
use crate::exec::batch_map;
use crate::linalg::{trace, trace_norm, CMatrix, DensityMatrix, LinalgError};
use crate::rng::stream_rng;
use crate::trajectories::{
    empirical_frequencies, enumerate_protocol_measure, FrequencyTable, Protocol, TrajectoryError,
    TrajectoryRecord, ENUMERATION_BUDGET,
};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

/// Scores within this tolerance of the minimum count as tied.
pub const SCORE_TIE_TOL: f64 = 1e-12;
/// A trajectory resolves onto fact ν once `Tr(Π_ν ρ) ≥ 0.99`.
pub const THETA_RESOLUTION: f64 = 0.99;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("all relative-entropy scores are infinite; facts cannot be identified")]
    FactsUnidentifiable,
    #[error("exact enumeration too large: {0}")]
    TooLarge(String),
    #[error("trajectory carries no stored states (need stride-1 or windowed states)")]
    NoStates,
    #[error("perturbation term degenerates: d = 1 with d1 = {0} > 0")]
    DegenerateD(f64),
    #[error("fact neighborhoods of radius {radius} overlap (min pairwise TV {kappa})")]
    NeighborhoodsOverlap { radius: f64, kappa: f64 },
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Probability distribution over the outcome alphabet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeDistribution {
    probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, InferenceError> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(InferenceError::BadInput(
                "distribution entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(InferenceError::BadInput(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `I_q(p) = Σ_ξ p(ξ) ln(p(ξ)/q(ξ))`, with the conventions `0·ln(0/q) = 0`
/// and `p > 0, q = 0 ⇒ +∞`. Infinity is a value, not an error.
pub fn relative_entropy(p: &OutcomeDistribution, q: &OutcomeDistribution) -> f64 {
    relative_entropy_raw(p.probs(), q.probs())
}

pub(crate) fn relative_entropy_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            acc += pi * (pi / qi).ln();
        }
    }
    acc.max(0.0)
}

/// Result of the relative-entropy fact estimator: the minimizing fact, the
/// per-fact scores `I_{p_ν}(empirical)`, and a tie flag.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorResult {
    pub nu_hat: usize,
    pub scores: Vec<f64>,
    pub tie: bool,
}

/// Estimate the fact from a frequency window: the ν minimizing
/// `I_{p_ν}(empirical)`, with the empirical measure as the *first* argument
/// of the relative entropy. Ties (scores within [`SCORE_TIE_TOL`]) break
/// toward the lowest fact index; infinite scores are ignored unless all of
/// them are.
pub fn estimate_fact(
    freq: &FrequencyTable,
    model: &NonDemolitionModel,
) -> Result<EstimatorResult, InferenceError> {
    if freq.counts().len() != model.n_outcomes() {
        return Err(InferenceError::BadInput(format!(
            "frequency table covers {} outcomes, model has {}",
            freq.counts().len(),
            model.n_outcomes()
        )));
    }
    let empirical = freq.freqs();
    let scores: Vec<f64> = (0..model.n_facts())
        .map(|nu| relative_entropy_raw(&empirical, &model.cond_dist(nu)))
        .collect();
    let min = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(InferenceError::FactsUnidentifiable);
    }
    let candidates: Vec<usize> = (0..scores.len())
        .filter(|&nu| scores[nu] <= min + SCORE_TIE_TOL)
        .collect();
    Ok(EstimatorResult {
        nu_hat: candidates[0],
        scores,
        tie: candidates.len() >= 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorMethod {
    Exact,
    MonteCarlo,
}

/// Misidentification probability `ε^{(k,k+r)}` of the window estimator, per
/// fact and in total.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorProbabilityReport {
    pub k: usize,
    pub r: usize,
    pub method: ErrorMethod,
    /// `ε^{(k,k+r)}(ν)`: wrongly-assigned state weight on the estimator's
    /// ν-level set.
    pub per_nu: Vec<f64>,
    pub total: f64,
    pub mc_stderr: Option<Vec<f64>>,
    pub total_stderr: Option<f64>,
    pub n_samples: Option<usize>,
}

/// Error probability of estimating the fact from window `(k, k+r]`.
///
/// The exact method enumerates all protocols of length `k+r` (within the
/// 2^20 budget) and sums `Tr((1−Π_ν̂) ρ^{(k+r)}) μ(ξ̲)`; Monte Carlo averages
/// the same quantity over sampled trajectories and reports standard errors.
pub fn error_probability(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    k: usize,
    r: usize,
    method: ErrorMethod,
    n_samples: usize,
    seed: u64,
) -> Result<ErrorProbabilityReport, InferenceError> {
    let model = dynamics.reference().ok_or(ChannelError::NoReference)?;
    if r == 0 {
        return Err(InferenceError::BadInput("window length r must be ≥ 1".into()));
    }
    match method {
        ErrorMethod::Exact => {
            let depth = k + r;
            let total = (dynamics.n_outcomes() as f64).powi(depth as i32);
            if total > ENUMERATION_BUDGET {
                return Err(InferenceError::TooLarge(format!(
                    "{}^{depth} protocols exceed the exact-mode budget",
                    dynamics.n_outcomes()
                )));
            }
            let mut per_nu = vec![0.0; model.n_facts()];
            let mut counts = vec![0usize; dynamics.n_outcomes()];
            exact_walk(
                dynamics,
                model,
                0,
                k,
                depth,
                rho0.matrix(),
                &mut counts,
                &mut per_nu,
            )?;
            Ok(ErrorProbabilityReport {
                k,
                r,
                method,
                total: per_nu.iter().sum(),
                per_nu,
                mc_stderr: None,
                total_stderr: None,
                n_samples: None,
            })
        }
        ErrorMethod::MonteCarlo => {
            if n_samples == 0 {
                return Err(InferenceError::BadInput("need n_samples ≥ 1".into()));
            }
            let samples: Vec<Result<(usize, f64), InferenceError>> = batch_map(n_samples, |i| {
                // Stride k+r keeps exactly the initial and final state.
                let t = crate::trajectories::sample_trajectory_with_states(
                    dynamics, rho0, k + r, k + r, seed, i as u64,
                )?;
                let freq = empirical_frequencies(&t.protocol, model.n_outcomes(), k, k + r)?;
                let est = estimate_fact(&freq, model)?;
                let states = t.states.as_ref().expect("states requested");
                let rho = &states[states.len() - 1].1;
                let wrong = 1.0 - rho.weight(model.projectors().projector(est.nu_hat));
                Ok((est.nu_hat, wrong.clamp(0.0, 1.0)))
            });
            let mut per_sums = vec![0.0; model.n_facts()];
            let mut per_sq = vec![0.0; model.n_facts()];
            let mut tot_sum = 0.0;
            let mut tot_sq = 0.0;
            for s in samples {
                let (nu, wrong) = s?;
                per_sums[nu] += wrong;
                per_sq[nu] += wrong * wrong;
                tot_sum += wrong;
                tot_sq += wrong * wrong;
            }
            let n = n_samples as f64;
            let stderr = |sum: f64, sq: f64| {
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
                (var / n).sqrt()
            };
            let per_nu: Vec<f64> = per_sums.iter().map(|s| s / n).collect();
            let mc_stderr: Vec<f64> = per_sums
                .iter()
                .zip(&per_sq)
                .map(|(&s, &q)| stderr(s, q))
                .collect();
            Ok(ErrorProbabilityReport {
                k,
                r,
                method,
                total: tot_sum / n,
                per_nu,
                mc_stderr: Some(mc_stderr),
                total_stderr: Some(stderr(tot_sum, tot_sq)),
                n_samples: Some(n_samples),
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn exact_walk(
    dynamics: &StepDynamics,
    model: &NonDemolitionModel,
    depth: usize,
    k: usize,
    max_depth: usize,
    rho: &CMatrix,
    counts: &mut Vec<usize>,
    per_nu: &mut [f64],
) -> Result<(), InferenceError> {
    if depth == max_depth {
        let freq = FrequencyTable::from_counts((k, max_depth), counts.clone());
        let est = estimate_fact(&freq, model)?;
        let mass = trace(rho).re;
        let kept = trace(&(model.projectors().projector(est.nu_hat) * rho)).re;
        per_nu[est.nu_hat] += (mass - kept).max(0.0);
        return Ok(());
    }
    for xi in 0..dynamics.n_outcomes() {
        let image = dynamics.apply_at(depth, xi, rho);
        if depth >= k {
            counts[xi] += 1;
        }
        exact_walk(dynamics, model, depth + 1, k, max_depth, &image, counts, per_nu)?;
        if depth >= k {
            counts[xi] -= 1;
        }
    }
    Ok(())
}

/// The four closed-form right-hand sides of the estimation-fidelity bounds:
/// level-set mass vs fact weight, and error probability, each for the
/// reference dynamics and for the perturbed one.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBounds {
    /// `2C a^r`
    pub nd_mass: f64,
    /// `2C a^r + d1 d^{-r-1}/(d^{-1}-1)`
    pub mass: f64,
    /// `C a^r`
    pub nd_error: f64,
    /// `C a^r + d1 d^{-r-1}/(d^{-1}-1)`
    pub error: f64,
    /// The shared perturbation term.
    pub perturbation_term: f64,
}

/// Evaluate the estimation-fidelity bounds for window length `r` given the
/// closeness constants and a fitted decay pair `(C, a)`.
pub fn estimation_error_bounds(
    constants: &AssumptionConstants,
    c: f64,
    a: f64,
    r: usize,
) -> Result<ErrorBounds, InferenceError> {
    if !(a > 0.0 && a < 1.0) || c <= 0.0 {
        return Err(InferenceError::BadInput(format!(
            "need C > 0 and a in (0,1), got C = {c}, a = {a}"
        )));
    }
    let d = constants.d;
    let perturbation_term = if constants.d1 == 0.0 {
        0.0
    } else {
        let denom = 1.0 / d - 1.0;
        if denom <= 0.0 {
            return Err(InferenceError::DegenerateD(constants.d1));
        }
        constants.d1 * d.powi(-(r as i32) - 1) / denom
    };
    let base = c * a.powi(r as i32);
    Ok(ErrorBounds {
        nd_mass: 2.0 * base,
        mass: 2.0 * base + perturbation_term,
        nd_error: base,
        error: base + perturbation_term,
        perturbation_term,
    })
}

/// Smallest pairwise relative entropy `min_{ν≠ν'} I_{p_ν}(p_{ν'})` of the
/// model's conditional distributions.
pub fn min_pairwise_relative_entropy(model: &NonDemolitionModel) -> f64 {
    let mut min = f64::INFINITY;
    for nu in 0..model.n_facts() {
        for nu2 in 0..model.n_facts() {
            if nu != nu2 {
                min = min.min(relative_entropy_raw(
                    &model.cond_dist(nu2),
                    &model.cond_dist(nu),
                ));
            }
        }
    }
    min
}

/// `inf I_q(p)` over the closed complement of the open TV ball of `radius`
/// around `q`.
///
/// The minimizer rescales the up-moved and down-moved coordinates by common
/// factors, so the infimum is found exactly by enumerating the up/down/fixed
/// partitions of the support.
pub fn complement_entropy(q: &[f64], radius: f64) -> f64 {
    let n = q.len();
    let mut best = f64::INFINITY;
    // Ternary mask: 0 = fixed, 1 = up, 2 = down.
    let mut mask = vec![0u8; n];
    loop {
        let q_up: f64 = (0..n).filter(|&i| mask[i] == 1).map(|i| q[i]).sum();
        let q_dn: f64 = (0..n).filter(|&i| mask[i] == 2).map(|i| q[i]).sum();
        if q_up > 0.0 && q_dn >= radius {
            let up_term = (q_up + radius) * (1.0 + radius / q_up).ln();
            let dn_term = if q_dn > radius {
                (q_dn - radius) * (1.0 - radius / q_dn).ln()
            } else {
                0.0
            };
            best = best.min(up_term + dn_term);
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            mask[pos] += 1;
            if mask[pos] == 3 {
                mask[pos] = 0;
                pos += 1;
            } else {
                break;
            }
        }
    }
}

/// Empirical large-deviation certificate for the concentration of windowed
/// frequencies around `p_ν`.
#[derive(Debug, Clone, Serialize)]
pub struct SanovCertificate {
    pub nu: usize,
    /// TV radius of the fact neighborhood.
    pub radius: f64,
    /// Per-window-length exceedance frequencies `P(f^{(r)} ∉ U_ν | ν)`.
    pub exceedance: Vec<(usize, f64)>,
    /// Fitted prefactor and decay base of `C a^r`.
    pub c: f64,
    pub a: f64,
    /// Fitted decay rate `−ln a` and its standard error.
    pub rate: f64,
    pub rate_stderr: f64,
    /// `I_{p_ν}((U_ν)^c)`: the relative-entropy cost of leaving the
    /// neighborhood.
    pub complement_entropy: f64,
    /// Whether the fitted rate clears the `I/2` floor within two standard
    /// errors.
    pub certified: bool,
    pub min_pairwise_entropy: f64,
    pub n_samples: usize,
}

/// Default neighborhood radius: a third of the smallest pairwise TV
/// distance, which keeps the fact neighborhoods disjoint with margin.
pub fn default_sanov_radius(model: &NonDemolitionModel) -> f64 {
    model.min_pairwise_tv() / 3.0
}

/// Estimate the exceedance decay of windowed frequencies under fact `nu` by
/// direct i.i.d. sampling from `p_ν`, fit `C a^r` on the decaying window,
/// and compare the fitted rate against the `I/2` floor.
pub fn sanov_certificate(
    model: &NonDemolitionModel,
    nu: usize,
    radius: Option<f64>,
    r_grid: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<SanovCertificate, InferenceError> {
    let kappa = model.min_pairwise_tv();
    let radius = radius.unwrap_or_else(|| default_sanov_radius(model));
    if radius <= 0.0 || radius >= kappa / 2.0 {
        return Err(InferenceError::NeighborhoodsOverlap { radius, kappa });
    }
    let p_nu = model.cond_dist(nu);
    if p_nu.iter().any(|&p| p <= 0.0) {
        return Err(InferenceError::BadInput(
            "the concentration certificate requires strictly positive p(ξ|ν)".into(),
        ));
    }
    let n_out = model.n_outcomes();
    let exceedance: Vec<(usize, f64)> = r_grid
        .iter()
        .map(|&r| {
            let hits: Vec<u32> = batch_map(n_samples, |i| {
                let mut rng = stream_rng(seed, (r as u64) << 32 | i as u64);
                let mut counts = vec![0usize; n_out];
                for _ in 0..r {
                    let u: f64 = rng.random();
                    let mut cum = 0.0;
                    let mut drawn = n_out - 1;
                    for (xi, &p) in p_nu.iter().enumerate() {
                        cum += p;
                        if u < cum {
                            drawn = xi;
                            break;
                        }
                    }
                    counts[drawn] += 1;
                }
                let tv = 0.5
                    * counts
                        .iter()
                        .zip(&p_nu)
                        .map(|(&c, &p)| (c as f64 / r as f64 - p).abs())
                        .sum::<f64>();
                u32::from(tv >= radius)
            });
            let exc = hits.iter().map(|&h| h as f64).sum::<f64>() / n_samples as f64;
            (r, exc)
        })
        .collect();

    // Fit ln(exceedance) = ln C + r ln a on the genuinely decaying points;
    // short windows with exceedance above 1/2 stay out of the fit.
    let fit_points: Vec<(f64, f64)> = exceedance
        .iter()
        .filter(|(_, e)| *e > 0.0 && *e <= 0.5)
        .map(|(r, e)| (*r as f64, e.ln()))
        .collect();
    if fit_points.len() < 3 {
        return Err(InferenceError::BadInput(
            "not enough usable exceedance points to fit a decay rate".into(),
        ));
    }
    let (slope, intercept, slope_se) = linear_fit(&fit_points);
    let a = slope.exp();
    let c = intercept.exp();
    let rate = -slope;
    let complement = complement_entropy(&p_nu, radius);
    let certified = rate >= complement / 2.0 - 2.0 * slope_se;
    Ok(SanovCertificate {
        nu,
        radius,
        exceedance,
        c,
        a,
        rate,
        rate_stderr: slope_se,
        complement_entropy: complement,
        certified,
        min_pairwise_entropy: min_pairwise_relative_entropy(model),
        n_samples,
    })
}

/// Least-squares line fit returning (slope, intercept, slope standard error).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = points
        .iter()
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = (points.len() as f64 - 2.0).max(1.0);
    let slope_se = (ssr / dof / sxx).sqrt();
    (slope, intercept, slope_se)
}

/// De Finetti decomposition of the protocol measure: Born weights of the
/// facts and the conditional i.i.d. components.
#[derive(Debug, Clone, Serialize)]
pub struct DeFinettiDecomposition {
    pub weights: Vec<f64>,
    pub components: Vec<OutcomeDistribution>,
}

/// Decompose the exchangeable measure of a non-demolition model as the
/// Born-weighted mixture of the conditional product measures.
pub fn definetti_decompose(
    model: &NonDemolitionModel,
    rho0: &DensityMatrix,
) -> Result<DeFinettiDecomposition, InferenceError> {
    let weights = model.born_weights(rho0);
    let components = (0..model.n_facts())
        .map(|nu| OutcomeDistribution::new(model.cond_dist(nu)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DeFinettiDecomposition {
        weights,
        components,
    })
}

impl DeFinettiDecomposition {
    /// Mixture probability of one protocol: `Σ_ν w_ν ∏_j p(ξ_j|ν)`.
    pub fn protocol_probability(&self, protocol: &Protocol) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, comp)| {
                w * protocol
                    .outcomes()
                    .iter()
                    .map(|&xi| comp.probs()[xi])
                    .product::<f64>()
            })
            .sum()
    }

    /// Worst absolute deviation between the mixture and the exact protocol
    /// measure over all protocols of length ≤ `max_len`.
    pub fn verify(
        &self,
        dynamics: &StepDynamics,
        rho0: &DensityMatrix,
        max_len: usize,
    ) -> Result<f64, InferenceError> {
        let mut worst: f64 = 0.0;
        for len in 1..=max_len {
            for (protocol, exact) in enumerate_protocol_measure(dynamics, rho0, len)? {
                worst = worst.max((self.protocol_probability(&protocol) - exact).abs());
            }
        }
        Ok(worst)
    }
}

/// Trace norm of the `(ν, ν')` coherence block `Π_ν ρ Π_ν'`.
pub fn fact_block_norm(rho: &DensityMatrix, p_nu: &CMatrix, p_nu2: &CMatrix) -> f64 {
    trace_norm(&(p_nu * rho.matrix() * p_nu2))
}

/// Per-trajectory purification diagnostics: coherence-block decay, the
/// resolved fact Θ, and the distance to the projected initial state.
#[derive(Debug, Clone, Serialize)]
pub struct PurificationReport {
    /// Fact index pairs (ν < ν') the off-diagonal norms refer to.
    pub pairs: Vec<(usize, usize)>,
    /// Per stored step: `(k, ‖Π_ν ρ^{(k)} Π_ν'‖ per pair)`.
    pub offdiag: Vec<(usize, Vec<f64>)>,
    /// Resolved fact (final weight ≥ 0.99), or `None` when unresolved.
    pub theta: Option<usize>,
    /// `‖ρ^{(final)} − Π_Θ ρ⁰ Π_Θ / Tr(Π_Θ ρ⁰)‖` when Θ resolved.
    pub final_distance: Option<f64>,
    /// Per-step coherence decay coefficients `δ_{νν'}` aligned with `pairs`.
    pub delta: Vec<f64>,
    /// Born weights of the final state.
    pub final_weights: Vec<f64>,
}

/// Analyze the purification of a trajectory that carries stored states
/// (including the initial state at index 0).
pub fn purification_analysis(
    record: &TrajectoryRecord,
    model: &NonDemolitionModel,
) -> Result<PurificationReport, InferenceError> {
    let states = record.states.as_ref().ok_or(InferenceError::NoStates)?;
    if states.is_empty() || states[0].0 != 0 {
        return Err(InferenceError::NoStates);
    }
    let facts = model.projectors();
    let mut pairs = Vec::new();
    for nu in 0..facts.len() {
        for nu2 in (nu + 1)..facts.len() {
            pairs.push((nu, nu2));
        }
    }
    let offdiag: Vec<(usize, Vec<f64>)> = states
        .iter()
        .map(|(k, rho)| {
            let norms = pairs
                .iter()
                .map(|&(a, b)| fact_block_norm(rho, facts.projector(a), facts.projector(b)))
                .collect();
            (*k, norms)
        })
        .collect();
    let rho0 = &states[0].1;
    let final_state = &states[states.len() - 1].1;
    let final_weights = model.born_weights(final_state);
    let (theta, max_weight) =
        final_weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (nu, &w)| {
                if w > acc.1 {
                    (nu, w)
                } else {
                    acc
                }
            });
    let theta = (max_weight >= THETA_RESOLUTION).then_some(theta);
    let final_distance = theta.map(|nu| {
        let p = facts.projector(nu);
        let projected = p * rho0.matrix() * p;
        let weight = trace(&projected).re;
        trace_norm(&(final_state.matrix() - projected.scale(1.0 / weight)))
    });
    let delta = pairs
        .iter()
        .map(|&(a, b)| model.coherence_decay(a, b))
        .collect();
    Ok(PurificationReport {
        pairs,
        offdiag,
        theta,
        final_distance,
        delta,
        final_weights,
    })
}

/// Empirical check of the Born rule for the resolved fact.
#[derive(Debug, Clone, Serialize)]
pub struct BornRuleReport {
    pub n_traj: usize,
    pub length: usize,
    /// `Tr(Π_ν ρ⁰)`.
    pub born_weights: Vec<f64>,
    pub counts: Vec<usize>,
    pub freqs: Vec<f64>,
    /// 95% Wilson intervals per fact.
    pub wilson: Vec<(f64, f64)>,
    pub unresolved: usize,
}

fn wilson_interval(count: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96;
    let nf = n as f64;
    let p = count as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Sample `n_traj` trajectories of `length` steps, resolve Θ from the final
/// state of each, and compare the frequencies of `Θ = ν` against the Born
/// weights `Tr(Π_ν ρ⁰)`.
pub fn born_rule_check(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    model: &NonDemolitionModel,
    n_traj: usize,
    length: usize,
    seed: u64,
) -> Result<BornRuleReport, InferenceError> {
    let born_weights = model.born_weights(rho0);
    let mut counts = vec![0usize; model.n_facts()];
    let mut unresolved = 0usize;
    if n_traj > 0 {
        let thetas: Vec<Result<Option<usize>, TrajectoryError>> = batch_map(n_traj, |i| {
            let mut rho = rho0.clone();
            let mut rng = stream_rng(seed, i as u64);
            for kstep in 0..length {
                let weights = dynamics.weights_at(kstep, rho.matrix());
                let u: f64 = rng.random();
                let mut cum = 0.0;
                let mut xi = dynamics.n_outcomes() - 1;
                for (j, w) in weights.iter().enumerate() {
                    cum += w.max(0.0);
                    if u < cum {
                        xi = j;
                        break;
                    }
                }
                let image = dynamics.apply_at(kstep, xi, rho.matrix());
                rho = DensityMatrix::from_positive_unchecked(image)?;
            }
            let weights = model.born_weights(&rho);
            let (nu, max) =
                weights
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (nu, &w)| {
                        if w > acc.1 {
                            (nu, w)
                        } else {
                            acc
                        }
                    });
            Ok((max >= THETA_RESOLUTION).then_some(nu))
        });
        for t in thetas {
            match t? {
                Some(nu) => counts[nu] += 1,
                None => unresolved += 1,
            }
        }
    }
    let freqs = counts
        .iter()
        .map(|&c| if n_traj == 0 { 0.0 } else { c as f64 / n_traj as f64 })
        .collect();
    let wilson = counts.iter().map(|&c| wilson_interval(c, n_traj)).collect();
    Ok(BornRuleReport {
        n_traj,
        length,
        born_weights,
        counts,
        freqs,
        wilson,
        unresolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{D1Estimation, NonDemolitionModel, StepDynamics};
    use crate::linalg::{diag, re};
    use crate::trajectories::sample_trajectory_with_states;

    fn qd2() -> NonDemolitionModel {
        NonDemolitionModel::binary_example(0.3, 0.7)
    }

    fn psi_state() -> DensityMatrix {
        DensityMatrix::from_pure(&[re(0.4f64.sqrt()), re(0.6f64.sqrt())]).unwrap()
    }

    fn dist(v: &[f64]) -> OutcomeDistribution {
        OutcomeDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn relative_entropy_values() {
        assert_eq!(relative_entropy(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])), 0.0);
        // Σ p ln(p/q) with p = (0.7, 0.3), q = (0.3, 0.7):
        // 0.7 ln(7/3) + 0.3 ln(3/7) = 0.4 ln(7/3).
        let expected = 0.7 * (0.7f64 / 0.3).ln() + 0.3 * (0.3f64 / 0.7).ln();
        let got = relative_entropy(&dist(&[0.7, 0.3]), &dist(&[0.3, 0.7]));
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.4 * (7.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!(relative_entropy(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).is_infinite());
        assert!(
            (relative_entropy(&dist(&[0.0, 1.0]), &dist(&[0.5, 0.5])) - 2.0f64.ln()).abs()
                < 1e-15
        );
    }

    #[test]
    fn estimator_matches_exact_frequency() {
        let model = qd2();
        // f_L = 0.3 exactly: score of fact 0 is 0, no tie.
        let freq = FrequencyTable::from_counts((0, 10), vec![3, 7]);
        let est = estimate_fact(&freq, &model).unwrap();
        assert_eq!(est.nu_hat, 0);
        assert!(est.scores[0].abs() < 1e-15);
        assert!(!est.tie);
    }

    #[test]
    fn estimator_tie_breaks_by_fact_order() {
        let model = qd2();
        let freq = FrequencyTable::from_counts((0, 4), vec![2, 2]);
        let est = estimate_fact(&freq, &model).unwrap();
        assert!(est.tie);
        assert_eq!(est.nu_hat, 0);
        assert!((est.scores[0] - est.scores[1]).abs() <= SCORE_TIE_TOL);
    }

    #[test]
    fn estimator_picks_closer_fact() {
        let model = qd2();
        let freq = FrequencyTable::from_counts((0, 20), vec![13, 7]);
        let est = estimate_fact(&freq, &model).unwrap();
        assert_eq!(est.nu_hat, 1);
        assert!(est.scores[1] < est.scores[0]);
    }

    // Independent oracle: for the binary model with window (0, r], the level
    // set of fact 0 is {n_L ≤ r/2} (ties included), so
    //   ε(0) = w₁ · P(Bin(r, p(L|1)) ≤ r/2),
    //   ε(1) = w₀ · P(Bin(r, p(L|0)) > r/2).
    fn binomial_pmf(n: usize, p: f64, k: usize) -> f64 {
        let mut ln = 0.0;
        for i in 0..k {
            ln += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        (ln + (k as f64) * p.ln() + ((n - k) as f64) * (1.0 - p).ln()).exp()
    }

    fn oracle_eps(r: usize, w0: f64, w1: f64) -> (f64, f64) {
        let e0: f64 = (0..=r / 2).map(|k| binomial_pmf(r, 0.7, k)).sum::<f64>() * w1;
        let e1: f64 = (r / 2 + 1..=r).map(|k| binomial_pmf(r, 0.3, k)).sum::<f64>() * w0;
        (e0, e1)
    }

    #[test]
    fn exact_error_probability_matches_binomial_oracle() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let rho0 = psi_state();
        for r in [1, 4, 8] {
            let report =
                error_probability(&dynamics, &rho0, 0, r, ErrorMethod::Exact, 0, 0).unwrap();
            let (e0, e1) = oracle_eps(r, 0.4, 0.6);
            assert!(
                (report.per_nu[0] - e0).abs() < 1e-12,
                "r={r}: {} vs oracle {e0}",
                report.per_nu[0]
            );
            assert!((report.per_nu[1] - e1).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_error_probability_decreases_in_r() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let rho0 = psi_state();
        let eps: Vec<f64> = [4usize, 8, 12]
            .iter()
            .map(|&r| {
                error_probability(&dynamics, &rho0, 0, r, ErrorMethod::Exact, 0, 0)
                    .unwrap()
                    .total
            })
            .collect();
        assert!(eps[0] > eps[1] && eps[1] > eps[2]);
    }

    #[test]
    fn error_probability_budget_guard() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let err = error_probability(&dynamics, &psi_state(), 0, 25, ErrorMethod::Exact, 0, 0)
            .unwrap_err();
        assert!(matches!(err, InferenceError::TooLarge(_)));
    }

    #[test]
    fn bounds_closed_form() {
        let constants = AssumptionConstants {
            d1: 0.0,
            d2: 3.0 / 7.0,
            d: 3.0 / 7.0,
            per_xi_norms: vec![0.7, 0.7],
            d1_mode: crate::channels::D1Mode::Exact,
        };
        let b = estimation_error_bounds(&constants, 1.0, 0.5, 4).unwrap();
        assert_eq!(b.perturbation_term, 0.0);
        assert!((b.nd_error - 0.0625).abs() < 1e-15);
        assert!((b.mass - 0.125).abs() < 1e-15);

        let perturbed = AssumptionConstants {
            d1: 0.01,
            d2: 0.41,
            d: 0.4,
            per_xi_norms: vec![0.7, 0.7],
            d1_mode: crate::channels::D1Mode::Analytic,
        };
        let b = estimation_error_bounds(&perturbed, 1.0, 0.5, 4).unwrap();
        let expected = 0.01 * 0.4f64.powi(-5) / (1.0 / 0.4 - 1.0);
        assert!((b.perturbation_term - expected).abs() < 1e-12);
        assert!((b.error - (0.0625 + expected)).abs() < 1e-12);

        let degenerate = AssumptionConstants {
            d1: 0.01,
            d2: 1.0,
            d: 1.0,
            per_xi_norms: vec![1.0],
            d1_mode: crate::channels::D1Mode::Analytic,
        };
        assert!(matches!(
            estimation_error_bounds(&degenerate, 1.0, 0.5, 4),
            Err(InferenceError::DegenerateD(_))
        ));
        let clean = AssumptionConstants {
            d1: 0.0,
            d2: 1.0,
            d: 1.0,
            per_xi_norms: vec![1.0],
            d1_mode: crate::channels::D1Mode::Exact,
        };
        let b = estimation_error_bounds(&clean, 2.0, 0.5, 3).unwrap();
        assert!((b.nd_error - 0.25).abs() < 1e-15);
    }

    #[test]
    fn complement_entropy_binary_closed_form() {
        // Two-sided closed form: the cheaper of moving +r of mass onto
        // either coordinate.
        let q = [0.3, 0.7];
        let r = 0.1;
        let up0 = 0.4f64 * (0.4f64 / 0.3).ln() + 0.6 * (0.6f64 / 0.7).ln();
        let up1 = 0.8f64 * (0.8f64 / 0.7).ln() + 0.2 * (0.2f64 / 0.3).ln();
        let expected = up0.min(up1);
        assert!((complement_entropy(&q, r) - expected).abs() < 1e-12);
    }

    #[test]
    fn min_pairwise_entropy_value() {
        let model = qd2();
        assert!(
            (min_pairwise_relative_entropy(&model) - 0.4 * (7.0f64 / 3.0).ln()).abs() < 1e-12
        );
    }

    #[test]
    fn definetti_reproduces_protocol_measure() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let rho0 = psi_state();
        let decomposition = definetti_decompose(&model, &rho0).unwrap();
        assert!((decomposition.weights[0] - 0.4).abs() < 1e-12);
        assert!((decomposition.weights[1] - 0.6).abs() < 1e-12);
        let worst = decomposition.verify(&dynamics, &rho0, 4).unwrap();
        assert!(worst <= 1e-12);
    }

    #[test]
    fn definetti_indicator_weights_on_fact_support() {
        let model = qd2();
        let rho0 = DensityMatrix::new(diag(&[1.0, 0.0])).unwrap();
        let d = definetti_decompose(&model, &rho0).unwrap();
        assert!((d.weights[0] - 1.0).abs() < 1e-12);
        assert!(d.weights[1].abs() < 1e-12);
    }

    #[test]
    fn purification_diagonal_initial_state_has_no_coherence() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let rho0 = DensityMatrix::new(diag(&[0.4, 0.6])).unwrap();
        let t = sample_trajectory_with_states(&dynamics, &rho0, 50, 1, 3, 0).unwrap();
        let report = purification_analysis(&t, &model).unwrap();
        for (_, norms) in &report.offdiag {
            assert!(norms[0] < 1e-14);
        }
        assert!((report.delta[0] - 2.0 * 0.21f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn purification_resolves_theta_on_long_runs() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let t = sample_trajectory_with_states(&dynamics, &psi_state(), 200, 1, 5, 0).unwrap();
        let report = purification_analysis(&t, &model).unwrap();
        let theta = report.theta.expect("length 200 resolves");
        assert!(report.final_weights[theta] >= THETA_RESOLUTION);
        assert!(report.final_distance.unwrap() < 0.1);
    }

    #[test]
    fn purification_requires_states() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let t =
            crate::trajectories::sample_trajectory(&dynamics, &psi_state(), 10, 5, 0).unwrap();
        assert!(matches!(
            purification_analysis(&t, &model),
            Err(InferenceError::NoStates)
        ));
    }

    #[test]
    fn born_rule_trivial_cases() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        // Supported on Π₁: Θ = 1 always.
        let rho0 = DensityMatrix::new(diag(&[0.0, 1.0])).unwrap();
        let report = born_rule_check(&dynamics, &rho0, &model, 200, 80, 7).unwrap();
        assert_eq!(report.counts[1], 200);
        assert_eq!(report.unresolved, 0);

        let empty = born_rule_check(&dynamics, &rho0, &model, 0, 80, 7).unwrap();
        assert_eq!(empty.counts, vec![0, 0]);
    }

    #[test]
    fn sanov_certificate_on_binary_model() {
        let model = qd2();
        let grid = [20, 40, 60, 80, 100, 140, 180];
        let cert = sanov_certificate(&model, 0, Some(0.1), &grid, 4000, 13).unwrap();
        assert!(cert.a < 1.0);
        assert!(
            cert.certified,
            "rate {} vs floor {}",
            cert.rate,
            cert.complement_entropy / 2.0
        );
        // Binomial tail oracle at r = 100:
        // P(|Bin(100, 0.3)/100 − 0.3| ≥ 0.1) = 0.0374514…; the sampled
        // exceedance must sit within ~4σ of it.
        let oracle = {
            let mut acc = 0.0;
            for k in 0..=20 {
                acc += binomial_pmf(100, 0.3, k);
            }
            for k in 40..=100 {
                acc += binomial_pmf(100, 0.3, k);
            }
            acc
        };
        assert!((oracle - 0.037451429245794).abs() < 1e-12);
        let (_, exc100) = *cert.exceedance.iter().find(|(r, _)| *r == 100).unwrap();
        let se = (oracle * (1.0 - oracle) / 4000.0f64).sqrt();
        assert!((exc100 - oracle).abs() < 4.0 * se, "{exc100} vs {oracle}");

        let err = sanov_certificate(&model, 0, Some(0.3), &grid, 100, 13).unwrap_err();
        assert!(matches!(err, InferenceError::NeighborhoodsOverlap { .. }));
    }

    #[test]
    fn mc_error_probability_consistent_with_exact() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let rho0 = psi_state();
        let exact = error_probability(&dynamics, &rho0, 0, 8, ErrorMethod::Exact, 0, 0).unwrap();
        let mc = error_probability(&dynamics, &rho0, 0, 8, ErrorMethod::MonteCarlo, 20_000, 23)
            .unwrap();
        let se = mc.total_stderr.unwrap();
        assert!(
            (mc.total - exact.total).abs() < 4.0 * se,
            "mc {} exact {} se {se}",
            mc.total,
            exact.total
        );
    }

    #[test]
    fn assumption_constants_feed_bounds() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let constants =
            crate::channels::assumption_constants(&dynamics, D1Estimation::Analytic).unwrap();
        let b = estimation_error_bounds(&constants, 1.2, 0.6, 6).unwrap();
        assert_eq!(b.perturbation_term, 0.0);
        assert!((b.error - 1.2 * 0.6f64.powi(6)).abs() < 1e-15);
    }
}
