//! Slow-dynamics cycle simulation: jump trajectories of estimated facts,
//! post-burst closeness diagnostics, comparison against the explicit
//! Markov-chain limit, and windowed histories of plausible facts.
//!
//! Within one run, cycles are strictly sequential (the state recursion);
//! independent runs and Monte-Carlo history sampling parallelize across
//! seeds/streams with fixed reduction order.

use crate::channels::{
    build_cycle_dynamics, total_variation, ChannelError, CycleConfig, StepDynamics,
};
use crate::inference::{estimate_fact, InferenceError};
use crate::linalg::{
    matrix_exponential_unitary, trace, trace_norm, CMatrix, DensityMatrix, LinalgError,
    ProjectorFamily,
};
use crate::trajectories::{
    empirical_frequencies, enumerate_protocol_measure, sample_batch,
    sample_trajectory_with_states, TrajectoryError, TrajectoryRecord, ENUMERATION_BUDGET,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JumpError {
    #[error("only {got} resolved transitions, need at least {need}")]
    InsufficientResolvedCycles { got: usize, need: usize },
    #[error("enumeration too large: {0}")]
    TooLarge(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Estimate and closeness metrics for one completed measurement cycle.
#[derive(Debug, Clone, Serialize)]
pub struct CycleEstimate {
    pub cycle: usize,
    pub nu_hat: usize,
    pub tie: bool,
    /// `max_ν Tr(Π_ν ρ)` on the post-burst state.
    pub max_weight: f64,
    /// `‖ρ − Π_ν* ρ Π_ν*‖` (trace norm) for the maximizing fact.
    pub block_distance: f64,
}

/// Per-cycle fact estimates along one run.
#[derive(Debug, Clone, Serialize)]
pub struct JumpTrajectory {
    pub cycles: Vec<CycleEstimate>,
}

/// A cycle run: the jump trajectory plus the underlying measurement record
/// (with post-burst states attached at stride M).
#[derive(Debug)]
pub struct JumpRunResult {
    pub jumps: JumpTrajectory,
    pub record: TrajectoryRecord,
}

/// Run `n_cycles` measurement cycles: each burst's outcomes feed the window
/// estimator, and the post-burst state yields the closeness metrics.
/// Deterministic given the seed.
pub fn run_cycles(
    cfg: &CycleConfig,
    rho0: &DensityMatrix,
    n_cycles: usize,
    seed: u64,
) -> Result<JumpRunResult, JumpError> {
    if n_cycles == 0 {
        return Err(JumpError::BadInput("need at least one cycle".into()));
    }
    let dynamics = build_cycle_dynamics(cfg)?;
    let m = cfg.measurements;
    let record = sample_trajectory_with_states(&dynamics, rho0, n_cycles * m, m, seed, 0)?;
    let states = record.states.as_ref().expect("states requested");
    let model = &cfg.model;
    let mut cycles = Vec::with_capacity(n_cycles);
    for i in 0..n_cycles {
        let freq =
            empirical_frequencies(&record.protocol, model.n_outcomes(), i * m, (i + 1) * m)?;
        let est = estimate_fact(&freq, model)?;
        let (_, rho) = states
            .iter()
            .find(|(k, _)| *k == (i + 1) * m)
            .expect("post-burst state stored at stride M");
        let weights = model.born_weights(rho);
        let (nu_star, max_weight) =
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
        let p = model.projectors().projector(nu_star);
        let block_distance = trace_norm(&(rho.matrix() - p * rho.matrix() * p));
        cycles.push(CycleEstimate {
            cycle: i,
            nu_hat: est.nu_hat,
            tie: est.tie,
            max_weight,
            block_distance,
        });
    }
    Ok(JumpRunResult {
        jumps: JumpTrajectory { cycles },
        record,
    })
}

/// Fraction of cycles whose post-burst state is ε-pure on a fact and
/// ε-block-diagonal.
#[derive(Debug, Clone, Serialize)]
pub struct ClosenessReport {
    pub epsilon: f64,
    pub satisfied: usize,
    pub total: usize,
    pub fraction: f64,
    /// Whether the fraction clears the `1 − ε` guarantee.
    pub pass: bool,
}

/// Check how often the post-burst state is ε-close to a single fact block:
/// both `max_ν Tr(Π_ν ρ) ≥ 1 − ε` and `‖ρ − Π_ν ρ Π_ν‖ ≤ ε`.
pub fn cycle_closeness_check(
    cfg: &CycleConfig,
    rho0: &DensityMatrix,
    n_cycles: usize,
    epsilon: f64,
    seed: u64,
) -> Result<ClosenessReport, JumpError> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(JumpError::BadInput("epsilon must lie in (0, 1]".into()));
    }
    let run = run_cycles(cfg, rho0, n_cycles, seed)?;
    let satisfied = run
        .jumps
        .cycles
        .iter()
        .filter(|c| c.max_weight >= 1.0 - epsilon && c.block_distance <= epsilon)
        .count();
    let fraction = satisfied as f64 / n_cycles as f64;
    Ok(ClosenessReport {
        epsilon,
        satisfied,
        total: n_cycles,
        fraction,
        pass: fraction >= 1.0 - epsilon,
    })
}

/// Exact cycle-to-cycle transition matrix of the Markov limit:
/// `Tr(Π_ν e^{iλ₂H} Π_ν' e^{-iλ₂H} Π_ν) / Tr(Π_ν)` (the rank normalization
/// makes rows sum to one exactly for higher-rank facts).
pub fn theoretical_transition_matrix(
    projectors: &ProjectorFamily,
    hamiltonian: &CMatrix,
    lambda2: f64,
) -> Result<Vec<Vec<f64>>, JumpError> {
    let u = matrix_exponential_unitary(hamiltonian, lambda2)?;
    let u_dag = u.adjoint();
    let n = projectors.len();
    let mut t = vec![vec![0.0; n]; n];
    for nu in 0..n {
        let p_nu = projectors.projector(nu);
        let rank = trace(p_nu).re;
        for nu2 in 0..n {
            let p_nu2 = projectors.projector(nu2);
            let value = trace(&(p_nu * &u_dag * p_nu2 * &u * p_nu)).re / rank;
            t[nu][nu2] = value.clamp(0.0, 1.0);
        }
    }
    Ok(t)
}

/// Empirical vs theoretical cycle-transition statistics.
#[derive(Debug, Clone, Serialize)]
pub struct MarkovComparison {
    pub labels: Vec<String>,
    /// Raw transition counts between consecutive resolved (non-tie) cycles.
    pub counts: Vec<Vec<usize>>,
    pub row_counts: Vec<usize>,
    /// Row-normalized empirical transition frequencies.
    pub empirical: Vec<Vec<f64>>,
    pub theoretical: Vec<Vec<f64>>,
    /// Largest |empirical − theoretical| over rows with data.
    pub max_abs_deviation: f64,
    /// Transitions dropped because either endpoint cycle was a tie.
    pub dropped: usize,
    pub resolved_transitions: usize,
}

/// Tally estimated-fact transitions over a cycle run and compare with the
/// explicit Markov limit. Transitions adjacent to tie cycles are dropped and
/// reported, so the user sees the censoring rate.
pub fn markov_limit_comparison(
    cfg: &CycleConfig,
    rho0: &DensityMatrix,
    n_cycles: usize,
    seed: u64,
) -> Result<MarkovComparison, JumpError> {
    let run = run_cycles(cfg, rho0, n_cycles, seed)?;
    markov_comparison_from_cycles(cfg, &run.jumps)
}

/// As [`markov_limit_comparison`], operating on an existing jump trajectory.
pub fn markov_comparison_from_cycles(
    cfg: &CycleConfig,
    jumps: &JumpTrajectory,
) -> Result<MarkovComparison, JumpError> {
    let model = &cfg.model;
    let n = model.n_facts();
    let mut counts = vec![vec![0usize; n]; n];
    let mut dropped = 0usize;
    for pair in jumps.cycles.windows(2) {
        if pair[0].tie || pair[1].tie {
            dropped += 1;
        } else {
            counts[pair[0].nu_hat][pair[1].nu_hat] += 1;
        }
    }
    let row_counts: Vec<usize> = counts.iter().map(|row| row.iter().sum()).collect();
    let resolved: usize = row_counts.iter().sum();
    if resolved < 100 {
        return Err(JumpError::InsufficientResolvedCycles {
            got: resolved,
            need: 100,
        });
    }
    let empirical: Vec<Vec<f64>> = counts
        .iter()
        .zip(&row_counts)
        .map(|(row, &rc)| {
            row.iter()
                .map(|&c| if rc == 0 { 0.0 } else { c as f64 / rc as f64 })
                .collect()
        })
        .collect();
    let theoretical =
        theoretical_transition_matrix(model.projectors(), &cfg.hamiltonian, cfg.lambda2)?;
    let mut max_abs_deviation: f64 = 0.0;
    for nu in 0..n {
        if row_counts[nu] == 0 {
            continue;
        }
        for nu2 in 0..n {
            max_abs_deviation =
                max_abs_deviation.max((empirical[nu][nu2] - theoretical[nu][nu2]).abs());
        }
    }
    Ok(MarkovComparison {
        labels: model.projectors().labels().to_vec(),
        counts,
        row_counts,
        empirical,
        theoretical,
        max_abs_deviation,
        dropped,
        resolved_transitions: resolved,
    })
}

/// Default classification width for windows of length `r`: `r^{-1/3}` decays
/// while `√r·ε_r` still grows.
pub fn default_epsilon_r(r: usize) -> f64 {
    (r as f64).powf(-1.0 / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HistoryMethod {
    Exact,
    MonteCarlo,
}

/// Masses of windowed histories of plausible facts.
#[derive(Debug, Clone, Serialize)]
pub struct HistoryReport {
    pub r: usize,
    pub p: usize,
    pub epsilon_r: f64,
    pub method: HistoryMethod,
    /// Unambiguously classified histories `(α_1..α_p, mass)`, heaviest first.
    pub histories: Vec<(Vec<usize>, f64)>,
    /// Mass of protocols with every window near at least one fact
    /// (ambiguous windows allowed).
    pub union_coverage: f64,
    /// Mass assigned to unambiguous histories; `1 − uncovered`.
    pub assigned_mass: f64,
    /// Conservative uncovered mass δ̂: ambiguous windows count as uncovered.
    pub uncovered: f64,
    pub n_samples: Option<usize>,
}

/// Classify one window's frequency vector: `Some(ν)` if it is within
/// `epsilon` of exactly one fact's conditional distribution (total
/// variation), `None` when no fact or several facts match. The second
/// component records whether anything matched at all.
fn classify_window(freqs: &[f64], dists: &[Vec<f64>], epsilon: f64) -> (Option<usize>, bool) {
    let mut matched = None;
    let mut ambiguous = false;
    let mut any = false;
    for (nu, dist) in dists.iter().enumerate() {
        if total_variation(freqs, dist) < epsilon {
            any = true;
            if matched.is_some() {
                ambiguous = true;
            } else {
                matched = Some(nu);
            }
        }
    }
    if ambiguous {
        (None, any)
    } else {
        (matched, any)
    }
}

/// Estimate the measure of the windowed history sets: `p` consecutive
/// windows of length `r`, each classified by proximity of its empirical
/// distribution to a fact's conditional distribution.
///
/// Ambiguous windows (within ε of two facts) count as uncovered, which keeps
/// the per-history masses a conservative generalized-Born assignment; the
/// union coverage (any match allowed) is reported alongside.
#[allow(clippy::too_many_arguments)]
pub fn history_sets_probability(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    r: usize,
    p: usize,
    epsilon_r: Option<f64>,
    method: HistoryMethod,
    budget: usize,
    seed: u64,
) -> Result<HistoryReport, JumpError> {
    let model = dynamics
        .reference()
        .ok_or(ChannelError::NoReference)?
        .clone();
    if r == 0 || p == 0 {
        return Err(JumpError::BadInput("need r ≥ 1 and p ≥ 1".into()));
    }
    let epsilon = epsilon_r.unwrap_or_else(|| default_epsilon_r(r));
    let dists: Vec<Vec<f64>> = (0..model.n_facts()).map(|nu| model.cond_dist(nu)).collect();
    let mut masses: std::collections::BTreeMap<Vec<usize>, f64> =
        std::collections::BTreeMap::new();
    let mut union_coverage = 0.0;
    let mut assigned_mass = 0.0;
    let mut n_samples = None;

    let classify_protocol = |outcomes: &[usize]| -> (Option<Vec<usize>>, bool) {
        let mut history = Vec::with_capacity(p);
        let mut all_any = true;
        let mut all_unique = true;
        for w in 0..p {
            let mut counts = vec![0usize; model.n_outcomes()];
            for &xi in &outcomes[w * r..(w + 1) * r] {
                counts[xi] += 1;
            }
            let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / r as f64).collect();
            let (class, any) = classify_window(&freqs, &dists, epsilon);
            all_any &= any;
            match class {
                Some(nu) => history.push(nu),
                None => all_unique = false,
            }
        }
        ((all_unique && all_any).then_some(history), all_any)
    };

    match method {
        HistoryMethod::Exact => {
            let depth = r * p;
            if (dynamics.n_outcomes() as f64).powi(depth as i32) > ENUMERATION_BUDGET {
                return Err(JumpError::TooLarge(format!(
                    "{}^{depth} protocols exceed the exact budget",
                    dynamics.n_outcomes()
                )));
            }
            for (protocol, mass) in enumerate_protocol_measure(dynamics, rho0, depth)? {
                let (history, any) = classify_protocol(protocol.outcomes());
                if any {
                    union_coverage += mass;
                }
                if let Some(h) = history {
                    *masses.entry(h).or_insert(0.0) += mass;
                    assigned_mass += mass;
                }
            }
        }
        HistoryMethod::MonteCarlo => {
            if budget == 0 {
                return Err(JumpError::BadInput("need a positive sample budget".into()));
            }
            let outcomes: Vec<Vec<usize>> = sample_batch(dynamics, rho0, r * p, budget, seed)?
                .into_iter()
                .map(|t| t.protocol.outcomes().to_vec())
                .collect();
            let w = 1.0 / budget as f64;
            for o in &outcomes {
                let (history, any) = classify_protocol(o);
                if any {
                    union_coverage += w;
                }
                if let Some(h) = history {
                    *masses.entry(h).or_insert(0.0) += w;
                    assigned_mass += w;
                }
            }
            n_samples = Some(budget);
        }
    }
    let mut histories: Vec<(Vec<usize>, f64)> = masses.into_iter().collect();
    histories.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let assigned_mass = assigned_mass.clamp(0.0, 1.0);
    Ok(HistoryReport {
        r,
        p,
        epsilon_r: epsilon,
        method,
        histories,
        union_coverage: union_coverage.clamp(0.0, 1.0),
        assigned_mass,
        uncovered: (1.0 - assigned_mass).max(0.0),
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{CycleConfig, NonDemolitionModel, StepDynamics};
    use crate::linalg::{diag, from_rows, hermitize, im, re, C_ONE, C_ZERO};

    fn qd2() -> NonDemolitionModel {
        NonDemolitionModel::binary_example(0.3, 0.7)
    }

    fn sigma_x() -> CMatrix {
        from_rows(&[&[C_ZERO, C_ONE], &[C_ONE, C_ZERO]])
    }

    fn nd_cycle(m: usize) -> CycleConfig {
        CycleConfig {
            lambda1: 0.0,
            lambda2: 1.0,
            measurements: m,
            hamiltonian: CMatrix::zeros(2, 2),
            model: qd2(),
        }
    }

    #[test]
    fn nd_limit_never_jumps() {
        let cfg = nd_cycle(30);
        let rho0 = DensityMatrix::new(diag(&[1.0, 0.0])).unwrap();
        let run = run_cycles(&cfg, &rho0, 20, 3).unwrap();
        assert!(run.jumps.cycles.iter().all(|c| c.nu_hat == 0 && !c.tie));
        assert!(run.jumps.cycles.iter().all(|c| c.max_weight > 0.999999));
        assert!(run.jumps.cycles.iter().all(|c| c.block_distance < 1e-12));
    }

    #[test]
    fn full_flip_alternates() {
        // e^{-iλ₂ H} = e^{-i(π/2)σ_x} = -iσ_x: a deterministic flip between
        // the two fact subspaces each cycle.
        let cfg = CycleConfig {
            lambda1: 0.0,
            lambda2: 1.0,
            measurements: 50,
            hamiltonian: sigma_x().scale(std::f64::consts::FRAC_PI_2),
            model: qd2(),
        };
        let rho0 = DensityMatrix::new(diag(&[1.0, 0.0])).unwrap();
        let run = run_cycles(&cfg, &rho0, 30, 11).unwrap();
        for c in &run.jumps.cycles {
            assert_eq!(c.nu_hat, c.cycle % 2, "cycle {}", c.cycle);
            assert!(c.max_weight > 0.999999);
        }
    }

    #[test]
    fn closeness_in_nd_limit() {
        let cfg = nd_cycle(50);
        let rho0 = DensityMatrix::from_pure(&[re(0.4f64.sqrt()), re(0.6f64.sqrt())]).unwrap();
        let report = cycle_closeness_check(&cfg, &rho0, 100, 0.05, 7).unwrap();
        assert!(report.pass, "fraction {}", report.fraction);

        // One measurement per burst cannot purify.
        let cfg = nd_cycle(1);
        let report = cycle_closeness_check(&cfg, &rho0, 50, 0.05, 7).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn theoretical_matrix_values() {
        let model = qd2();
        // H = (ω/2)σ_x with λ₂ω = π/2 → off-diagonal sin²(π/4) = 1/2.
        let h = sigma_x().scale(std::f64::consts::FRAC_PI_4);
        let t = theoretical_transition_matrix(model.projectors(), &h, 1.0).unwrap();
        assert!((t[0][1] - 0.5).abs() < 1e-12);
        assert!((t[0][0] + t[0][1] - 1.0).abs() < 1e-12);
        assert!((t[1][0] + t[1][1] - 1.0).abs() < 1e-12);

        let id =
            theoretical_transition_matrix(model.projectors(), &CMatrix::zeros(2, 2), 1.0).unwrap();
        assert!((id[0][0] - 1.0).abs() < 1e-12 && id[0][1].abs() < 1e-12);
    }

    #[test]
    fn theoretical_matrix_is_basis_independent() {
        let model = qd2();
        let h = sigma_x().scale(0.37);
        let t = theoretical_transition_matrix(model.projectors(), &h, 1.3).unwrap();
        // Conjugate projectors and Hamiltonian by the same unitary.
        let g = hermitize(&from_rows(&[&[re(0.2), im(0.9)], &[im(-0.9), re(-0.4)]]));
        let u = matrix_exponential_unitary(&g, 1.0).unwrap();
        let rotated = ProjectorFamily::new(
            model.projectors().labels().to_vec(),
            model
                .projectors()
                .projectors()
                .iter()
                .map(|p| &u * p * u.adjoint())
                .collect(),
        )
        .unwrap();
        let h_rot = hermitize(&(&u * &h * u.adjoint()));
        let t2 = theoretical_transition_matrix(&rotated, &h_rot, 1.3).unwrap();
        for nu in 0..2 {
            for nu2 in 0..2 {
                assert!((t[nu][nu2] - t2[nu][nu2]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn markov_comparison_identity_in_nd_limit() {
        let cfg = nd_cycle(50);
        let rho0 = DensityMatrix::from_pure(&[re(0.4f64.sqrt()), re(0.6f64.sqrt())]).unwrap();
        let cmp = markov_limit_comparison(&cfg, &rho0, 150, 19).unwrap();
        assert!(cmp.resolved_transitions >= 100);
        assert!(cmp.max_abs_deviation < 0.05, "dev {}", cmp.max_abs_deviation);
    }

    #[test]
    fn markov_comparison_needs_enough_cycles() {
        let cfg = nd_cycle(50);
        let rho0 = DensityMatrix::new(diag(&[1.0, 0.0])).unwrap();
        let err = markov_limit_comparison(&cfg, &rho0, 20, 19).unwrap_err();
        assert!(matches!(err, JumpError::InsufficientResolvedCycles { .. }));
    }

    // Binomial oracle for the binary model: conditional on fact ν the
    // windows are i.i.d., so the mass of history (α₁, α₂) is
    // Σ_ν w_ν Π_j P(Bin(r, p(L|ν)) classifies to α_j).
    fn binomial_pmf(n: usize, p: f64, k: usize) -> f64 {
        let mut ln = 0.0;
        for i in 0..k {
            ln += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        (ln + (k as f64) * p.ln() + ((n - k) as f64) * (1.0 - p).ln()).exp()
    }

    fn window_class_probs(r: usize, p_l: f64, dists: &[Vec<f64>], eps: f64) -> Vec<f64> {
        let mut probs = vec![0.0; dists.len()];
        for n_l in 0..=r {
            let freqs = [n_l as f64 / r as f64, (r - n_l) as f64 / r as f64];
            let (class, _) = classify_window(&freqs, dists, eps);
            if let Some(nu) = class {
                probs[nu] += binomial_pmf(r, p_l, n_l);
            }
        }
        probs
    }

    #[test]
    fn history_sets_concentrate_on_constant_histories() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let rho0 = DensityMatrix::from_pure(&[re(0.4f64.sqrt()), re(0.6f64.sqrt())]).unwrap();
        let (r, eps) = (8, 0.15);
        let report = history_sets_probability(
            &dynamics,
            &rho0,
            r,
            2,
            Some(eps),
            HistoryMethod::Exact,
            0,
            0,
        )
        .unwrap();
        let mass = |h: &[usize]| {
            report
                .histories
                .iter()
                .find(|(hist, _)| hist == h)
                .map(|(_, m)| *m)
                .unwrap_or(0.0)
        };
        let dists = vec![model.cond_dist(0), model.cond_dist(1)];
        let class0 = window_class_probs(r, 0.3, &dists, eps);
        let class1 = window_class_probs(r, 0.7, &dists, eps);
        let weights = [0.4, 0.6];
        for (h, got) in &report.histories {
            let expected: f64 = weights[0] * h.iter().map(|&a| class0[a]).product::<f64>()
                + weights[1] * h.iter().map(|&a| class1[a]).product::<f64>();
            assert!((got - expected).abs() < 1e-12, "history {h:?}");
        }
        // Constant histories dominate, roughly in Born-weight proportion
        // (cross-classification shifts the exact 3:2 ratio slightly).
        assert!(mass(&[0, 0]) + mass(&[1, 1]) > 0.8 * report.assigned_mass);
        let ratio = mass(&[1, 1]) / mass(&[0, 0]);
        assert!(ratio > 1.3 && ratio < 1.7, "ratio {ratio}");
        assert!((report.assigned_mass + report.uncovered - 1.0).abs() < 1e-12);
    }

    #[test]
    fn history_sets_wide_epsilon_covers_everything_ambiguously() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let rho0 = DensityMatrix::from_pure(&[re(0.4f64.sqrt()), re(0.6f64.sqrt())]).unwrap();
        let report = history_sets_probability(
            &dynamics,
            &rho0,
            4,
            2,
            Some(1.0),
            HistoryMethod::Exact,
            0,
            0,
        )
        .unwrap();
        // Every window is within ε of both facts: full union coverage, but
        // the conservative assignment leaves everything uncovered.
        assert!((report.union_coverage - 1.0).abs() < 1e-12);
        assert_eq!(report.histories.len(), 0);
        assert!((report.uncovered - 1.0).abs() < 1e-12);
    }

    #[test]
    fn history_sets_mc_agrees_with_exact() {
        let model = qd2();
        let dynamics = StepDynamics::from_model(&model);
        let rho0 = DensityMatrix::from_pure(&[re(0.4f64.sqrt()), re(0.6f64.sqrt())]).unwrap();
        let exact = history_sets_probability(
            &dynamics,
            &rho0,
            8,
            1,
            Some(0.15),
            HistoryMethod::Exact,
            0,
            0,
        )
        .unwrap();
        let mc = history_sets_probability(
            &dynamics,
            &rho0,
            8,
            1,
            Some(0.15),
            HistoryMethod::MonteCarlo,
            20_000,
            5,
        )
        .unwrap();
        assert!((exact.assigned_mass - mc.assigned_mass).abs() < 0.02);
    }

    #[test]
    fn default_epsilon_scaling() {
        assert!((default_epsilon_r(8) - 0.5).abs() < 1e-12);
        let e = default_epsilon_r(64);
        assert!(e < 0.26 && e > 0.24);
    }
}
