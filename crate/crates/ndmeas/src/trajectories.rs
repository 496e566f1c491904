//! Sampling of measurement protocols by the generalized Born rule, exact
//! protocol-measure evaluation, empirical frequencies, and consistency
//! diagnostics.
//!
//! The conditional state is renormalized after every step and probabilities
//! accumulate in log space, so trajectories stay numerically healthy for
//! thousands of steps. Each trajectory owns an RNG stream derived from
//! `(seed, stream)`, which makes batches reproducible regardless of how they
//! are scheduled across threads.

use crate::channels::{ChannelError, OutcomeAlphabet, StepDynamics};
use crate::exec::batch_map;
use crate::linalg::{trace, DensityMatrix, LinalgError};
use crate::rng::stream_rng;
use rand::Rng;
use thiserror::Error;

/// Below this total outcome weight the dynamics is considered broken.
pub const WEIGHT_UNDERFLOW_TOL: f64 = 1e-15;
/// Budget for exhaustive protocol enumeration.
pub const ENUMERATION_BUDGET: f64 = (1u64 << 20) as f64;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("all outcome weights vanished at step {step} (max weight {max_weight:.3e})")]
    WeightUnderflow { step: usize, max_weight: f64 },
    #[error("protocols must contain at least one outcome")]
    EmptyProtocol,
    #[error("enumeration too large: {0}")]
    TooLarge(String),
    #[error("bad frequency window ({l}, {k}) for protocol length {len}")]
    BadWindow { l: usize, k: usize, len: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Finite sequence of outcome indices into an alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Protocol {
    outcomes: Vec<usize>,
}

impl Protocol {
    pub fn new(outcomes: Vec<usize>) -> Self {
        Self { outcomes }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcomes(&self) -> &[usize] {
        &self.outcomes
    }

    /// Render as a symbol string: concatenated when every label is a single
    /// character, comma-separated otherwise.
    pub fn symbol_string(&self, alphabet: &OutcomeAlphabet) -> String {
        let single = alphabet.labels().iter().all(|l| l.chars().count() == 1);
        let labels: Vec<&str> = self
            .outcomes
            .iter()
            .map(|&xi| alphabet.label(xi))
            .collect();
        if single {
            labels.concat()
        } else {
            labels.join(",")
        }
    }

    /// Parse a symbol string produced by [`Protocol::symbol_string`].
    pub fn parse(s: &str, alphabet: &OutcomeAlphabet) -> Result<Self, ChannelError> {
        let single = alphabet.labels().iter().all(|l| l.chars().count() == 1);
        let outcomes = if single {
            s.chars()
                .map(|c| alphabet.index_of(&c.to_string()))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            s.split(',')
                .filter(|t| !t.is_empty())
                .map(|t| alphabet.index_of(t))
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(Self { outcomes })
    }
}

/// One sampled trajectory: the protocol, its log probability, and optional
/// thinned conditional states (pairs of step index and state; index 0 is the
/// initial state).
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub protocol: Protocol,
    pub log_prob: f64,
    pub states: Option<Vec<(usize, DensityMatrix)>>,
    pub seed: u64,
    pub stream: u64,
}

/// Default state-thinning stride for a given length.
pub fn default_stride(length: usize) -> usize {
    (length / 256).max(1)
}

fn draw_outcome(weights: &[f64], u: f64) -> usize {
    // Cumulative-sum draw; the final bucket absorbs rounding slack.
    let mut cum = 0.0;
    for (xi, w) in weights.iter().enumerate() {
        cum += w.max(0.0);
        if u < cum {
            return xi;
        }
    }
    weights.len() - 1
}

fn sample_inner(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    length: usize,
    stride: Option<usize>,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord, TrajectoryError> {
    if length == 0 {
        return Err(TrajectoryError::EmptyProtocol);
    }
    let mut rng = stream_rng(seed, stream);
    let mut rho = rho0.clone();
    let mut outcomes = Vec::with_capacity(length);
    let mut log_prob = 0.0;
    let mut states = stride.map(|_| vec![(0usize, rho0.clone())]);
    for k in 0..length {
        let weights = dynamics.weights_at(k, rho.matrix());
        let max_weight = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max_weight < WEIGHT_UNDERFLOW_TOL {
            return Err(TrajectoryError::WeightUnderflow { step: k, max_weight });
        }
        let u: f64 = rng.random();
        let xi = draw_outcome(&weights, u);
        let image = dynamics.apply_at(k, xi, rho.matrix());
        rho = DensityMatrix::from_positive_unchecked(image)?;
        log_prob += weights[xi].ln();
        outcomes.push(xi);
        if let Some(list) = states.as_mut() {
            let stride = stride.unwrap();
            if (k + 1) % stride == 0 || k + 1 == length {
                list.push((k + 1, rho.clone()));
            }
        }
    }
    Ok(TrajectoryRecord {
        protocol: Protocol::new(outcomes),
        log_prob,
        states,
        seed,
        stream,
    })
}

/// Sample one trajectory of `length` steps. At each step the outcome is
/// drawn with probability `Tr Φ^{(k)}_ξ[ρ]` and the state is replaced by the
/// normalized image. Deterministic given `(seed, stream)`.
pub fn sample_trajectory(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    length: usize,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord, TrajectoryError> {
    sample_inner(dynamics, rho0, length, None, seed, stream)
}

/// Like [`sample_trajectory`] but keeping conditional states every `stride`
/// steps (plus the initial and final state).
pub fn sample_trajectory_with_states(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    length: usize,
    stride: usize,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord, TrajectoryError> {
    sample_inner(dynamics, rho0, length, Some(stride.max(1)), seed, stream)
}

/// Sample a batch of trajectories on streams `0..n`, in parallel when the
/// `parallel` feature is enabled. Output order is by stream index either way.
pub fn sample_batch(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    length: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    let results = batch_map(n, |i| {
        sample_trajectory(dynamics, rho0, length, seed, i as u64)
    });
    results.into_iter().collect()
}

/// Exact log probability of a fixed protocol, accumulated step by step in
/// log space. A vanishing step weight yields `-inf` (the protocol has
/// measure zero), not an error.
pub fn protocol_log_probability(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    protocol: &Protocol,
) -> Result<f64, TrajectoryError> {
    if protocol.is_empty() {
        return Err(TrajectoryError::EmptyProtocol);
    }
    let mut rho = rho0.clone();
    let mut log_prob = 0.0;
    for (k, &xi) in protocol.outcomes().iter().enumerate() {
        let image = dynamics.apply_at(k, xi, rho.matrix());
        let weight = trace(&image).re;
        if weight <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        log_prob += weight.ln();
        rho = DensityMatrix::from_positive_unchecked(image)?;
    }
    Ok(log_prob)
}

fn check_enumeration_budget(n_outcomes: usize, depth: usize) -> Result<(), TrajectoryError> {
    let total = (n_outcomes as f64).powi(depth as i32);
    if total > ENUMERATION_BUDGET {
        return Err(TrajectoryError::TooLarge(format!(
            "{n_outcomes}^{depth} protocols exceed the enumeration budget"
        )));
    }
    Ok(())
}

/// Exhaustively verify the Kolmogorov consistency identity
/// `Σ_{ξ_k} μ(ξ_1..ξ_k) = μ(ξ_1..ξ_{k-1})` for all prefixes up to `k_max`;
/// returns the worst absolute residual. Trace-preserving dynamics satisfy it
/// to machine precision; a non-normalized family reports its deficit here.
pub fn marginal_consistency_check(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    k_max: usize,
) -> Result<f64, TrajectoryError> {
    check_enumeration_budget(dynamics.n_outcomes(), k_max)?;
    fn walk(
        dynamics: &StepDynamics,
        depth: usize,
        k_max: usize,
        rho: &crate::linalg::CMatrix,
        mass: f64,
        worst: &mut f64,
    ) {
        if depth == k_max {
            return;
        }
        let mut child_sum = 0.0;
        let mut children = Vec::with_capacity(dynamics.n_outcomes());
        for xi in 0..dynamics.n_outcomes() {
            let image = dynamics.apply_at(depth, xi, rho);
            let w = trace(&image).re;
            child_sum += w;
            children.push((image, w));
        }
        *worst = (*worst).max((child_sum - mass).abs());
        for (image, w) in children {
            if w > 0.0 {
                walk(dynamics, depth + 1, k_max, &image, w, worst);
            }
        }
    }
    let mut worst = 0.0;
    walk(dynamics, 0, k_max, rho0.matrix(), 1.0, &mut worst);
    Ok(worst)
}

/// Exact protocol probabilities for every protocol of length `k`, as pairs
/// of (protocol, probability). Enumeration order is lexicographic in outcome
/// indices.
pub fn enumerate_protocol_measure(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    k: usize,
) -> Result<Vec<(Protocol, f64)>, TrajectoryError> {
    check_enumeration_budget(dynamics.n_outcomes(), k)?;
    let mut out = Vec::new();
    fn walk(
        dynamics: &StepDynamics,
        depth: usize,
        k: usize,
        rho: &crate::linalg::CMatrix,
        prefix: &mut Vec<usize>,
        out: &mut Vec<(Protocol, f64)>,
    ) {
        if depth == k {
            out.push((Protocol::new(prefix.clone()), trace(rho).re.max(0.0)));
            return;
        }
        for xi in 0..dynamics.n_outcomes() {
            let image = dynamics.apply_at(depth, xi, rho);
            prefix.push(xi);
            walk(dynamics, depth + 1, k, &image, prefix, out);
            prefix.pop();
        }
    }
    walk(
        dynamics,
        0,
        k,
        rho0.matrix(),
        &mut Vec::with_capacity(k),
        &mut out,
    );
    Ok(out)
}

/// Worst deviation `|μ(ξ_π) − μ(ξ)|` over all length-`k` protocols and all
/// permutations π. Non-demolition models pass at 1e-12; perturbed dynamics
/// report the magnitude of their exchangeability violation.
pub fn exchangeability_check(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    k: usize,
) -> Result<f64, TrajectoryError> {
    if k > 5 {
        return Err(TrajectoryError::TooLarge(
            "exchangeability enumeration is limited to k ≤ 5".into(),
        ));
    }
    let measure = enumerate_protocol_measure(dynamics, rho0, k)?;
    // Two protocols are permutations of one another iff their outcome
    // multisets agree, so group by sorted outcomes and compare extremes.
    let mut groups: std::collections::BTreeMap<Vec<usize>, (f64, f64)> =
        std::collections::BTreeMap::new();
    for (protocol, p) in measure {
        let mut key = protocol.outcomes().to_vec();
        key.sort_unstable();
        let entry = groups.entry(key).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        entry.0 = entry.0.min(p);
        entry.1 = entry.1.max(p);
    }
    Ok(groups
        .values()
        .map(|(lo, hi)| hi - lo)
        .fold(0.0, f64::max))
}

/// Outcome counts over a window `(l, k]` of a protocol. Counts are exact;
/// frequencies are the rationals `count/(k-l)` evaluated in `f64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    window: (usize, usize),
    counts: Vec<usize>,
}

impl FrequencyTable {
    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn window_len(&self) -> usize {
        self.window.1 - self.window.0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn count(&self, xi: usize) -> usize {
        self.counts[xi]
    }

    pub fn freq(&self, xi: usize) -> f64 {
        self.counts[xi] as f64 / self.window_len() as f64
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|xi| self.freq(xi)).collect()
    }

    pub fn from_counts(window: (usize, usize), counts: Vec<usize>) -> Self {
        Self { window, counts }
    }
}

/// Empirical outcome frequencies of measurements `l+1 ..= k` of a protocol.
pub fn empirical_frequencies(
    protocol: &Protocol,
    n_outcomes: usize,
    l: usize,
    k: usize,
) -> Result<FrequencyTable, TrajectoryError> {
    if !(l < k && k <= protocol.len()) {
        return Err(TrajectoryError::BadWindow {
            l,
            k,
            len: protocol.len(),
        });
    }
    let mut counts = vec![0usize; n_outcomes];
    for &xi in &protocol.outcomes()[l..k] {
        counts[xi] += 1;
    }
    Ok(FrequencyTable {
        window: (l, k),
        counts,
    })
}

/// Running frequencies `f^{(k)}` of one outcome along a protocol,
/// `k = 1..=len`.
pub fn running_frequency(protocol: &Protocol, xi: usize) -> Vec<f64> {
    let mut count = 0usize;
    protocol
        .outcomes()
        .iter()
        .enumerate()
        .map(|(idx, &o)| {
            if o == xi {
                count += 1;
            }
            count as f64 / (idx + 1) as f64
        })
        .collect()
}

/// Centered, √k-scaled fluctuations `φ^{(k)} = √k (f^{(k)} − m_α)`.
#[derive(Debug, Clone)]
pub struct FluctuationSeries {
    pub m_alpha: f64,
    pub values: Vec<f64>,
}

/// Build the fluctuation series from a running-frequency sequence
/// (`freqs[k-1] = f^{(k)}`).
pub fn fluctuation_series(freqs: &[f64], m_alpha: f64) -> FluctuationSeries {
    let values = freqs
        .iter()
        .enumerate()
        .map(|(idx, f)| ((idx + 1) as f64).sqrt() * (f - m_alpha))
        .collect();
    FluctuationSeries { m_alpha, values }
}

/// Monte-Carlo estimate of the fluctuation generating function
/// `F^{(k)}(h) = ln E[e^{h φ^{(k)}}]` on a grid of `h` values, with central
/// difference estimates of its first two derivatives at 0.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CltReport {
    pub k: usize,
    pub n_samples: usize,
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub f_stderr: Vec<f64>,
    pub d1_at_zero: f64,
    pub d1_stderr: f64,
    pub d2_at_zero: f64,
    pub d2_stderr: f64,
}

/// Estimate the generating function of the fluctuation variable of outcome
/// `xi` around mean `m_alpha` at length `k`, over `n_samples` trajectories.
///
/// The derivative estimates use the smallest symmetric `±h` pair present in
/// the grid; `F(0) = 0` holds exactly and is used for the second difference.
#[allow(clippy::too_many_arguments)]
pub fn clt_diagnostic(
    dynamics: &StepDynamics,
    rho0: &DensityMatrix,
    xi: usize,
    m_alpha: f64,
    k: usize,
    h_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<CltReport, TrajectoryError> {
    let phis: Vec<f64> = sample_batch(dynamics, rho0, k, n_samples, seed)?
        .into_iter()
        .map(|t| {
            let count = t.protocol.outcomes().iter().filter(|&&o| o == xi).count();
            (k as f64).sqrt() * (count as f64 / k as f64 - m_alpha)
        })
        .collect();
    let n = n_samples as f64;
    let mut h_sorted = h_grid.to_vec();
    h_sorted.sort_by(f64::total_cmp);
    let mut f_values = Vec::with_capacity(h_sorted.len());
    let mut f_stderr = Vec::with_capacity(h_sorted.len());
    for &h in &h_sorted {
        if h == 0.0 {
            f_values.push(0.0);
            f_stderr.push(0.0);
            continue;
        }
        let samples: Vec<f64> = phis.iter().map(|&phi| (h * phi).exp()).collect();
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        f_values.push(mean.ln());
        f_stderr.push((var / n).sqrt() / mean);
    }
    let pair = h_sorted
        .iter()
        .filter(|&&h| h > 0.0 && h_sorted.iter().any(|&g| g == -h))
        .fold(f64::INFINITY, |acc, &h| acc.min(h));
    let (d1, d1_se, d2, d2_se) = if pair.is_finite() {
        let ip = h_sorted.iter().position(|&h| h == pair).unwrap();
        let imn = h_sorted.iter().position(|&h| h == -pair).unwrap();
        let (fp, fm) = (f_values[ip], f_values[imn]);
        let (sp, sm) = (f_stderr[ip], f_stderr[imn]);
        let se = (sp * sp + sm * sm).sqrt();
        (
            (fp - fm) / (2.0 * pair),
            se / (2.0 * pair),
            (fp + fm) / (pair * pair),
            se / (pair * pair),
        )
    } else {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    };
    Ok(CltReport {
        k,
        n_samples,
        h: h_sorted,
        f: f_values,
        f_stderr,
        d1_at_zero: d1,
        d1_stderr: d1_se,
        d2_at_zero: d2,
        d2_stderr: d2_se,
    })
}
