//! JSON model documents and delimited-text emission.
//!
//! A model file fixes the dimension, the fact projectors, the outcome
//! alphabet and the amplitude table, and optionally an initial state, a
//! perturbation and a cycle section. Complex entries are stored as
//! `[re, im]` pairs. Numeric payloads round-trip bit-exactly: the JSON
//! writer emits the shortest decimal that re-parses to the identical `f64`.

use crate::channels::{
    build_cycle_dynamics, build_hamiltonian_perturbation, build_mixture_channel, ChannelError,
    CycleConfig, HamiltonianSchedule, NonDemolitionModel, OutcomeAlphabet, OutcomeMap,
    StepDynamics,
};
use crate::linalg::{CMatrix, DensityMatrix, LinalgError, ProjectorFamily};
use crate::trajectories::TrajectoryRecord;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid model document: {0}")]
    Invalid(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Row-major complex matrix as `[re, im]` pairs.
pub type MatrixData = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_data(m: &CMatrix) -> MatrixData {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn data_to_matrix(data: &MatrixData) -> Result<CMatrix, ModelFileError> {
    let rows = data.len();
    if rows == 0 {
        return Err(ModelFileError::Invalid("empty matrix".into()));
    }
    let cols = data[0].len();
    if data.iter().any(|r| r.len() != cols) {
        return Err(ModelFileError::Invalid("ragged matrix rows".into()));
    }
    Ok(CMatrix::from_fn(rows, cols, |i, j| {
        Complex64::new(data[i][j][0], data[i][j][1])
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactEntry {
    pub label: String,
    pub projector: MatrixData,
}

/// Optional perturbation attached to the reference model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PerturbationSpec {
    /// Constant per-step unitary kick generated by this Hermitian matrix.
    Hamiltonian { matrix: MatrixData },
    /// Mixture family `Φ̃_ξ = υ_ξ id + Υ_ξ` with per-outcome deviation
    /// superoperators (dim²×dim², column-stacked convention) summing to 0.
    Mixture {
        upsilon: Vec<f64>,
        deviations: Vec<MatrixData>,
    },
}

/// Optional measurement-cycle section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    pub m: usize,
    pub h_p: MatrixData,
}

/// The on-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub dim: usize,
    pub facts: Vec<FactEntry>,
    pub alphabet: Vec<String>,
    /// `amplitudes[xi][nu] = [re, im]` of `c_ξ(ν)`.
    pub amplitudes: Vec<Vec<[f64; 2]>>,
    /// Initial state ρ⁰; maximally mixed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<CycleSpec>,
}

impl ModelDocument {
    /// Snapshot an in-memory model (without perturbation or cycle sections).
    pub fn from_model(model: &NonDemolitionModel) -> Self {
        Self {
            dim: model.dim(),
            facts: (0..model.n_facts())
                .map(|nu| FactEntry {
                    label: model.projectors().label(nu).to_string(),
                    projector: matrix_to_data(model.projectors().projector(nu)),
                })
                .collect(),
            alphabet: model.alphabet().labels().to_vec(),
            amplitudes: (0..model.n_outcomes())
                .map(|xi| {
                    (0..model.n_facts())
                        .map(|nu| {
                            let c = model.amplitude(xi, nu);
                            [c.re, c.im]
                        })
                        .collect()
                })
                .collect(),
            initial_state: None,
            perturbation: None,
            cycle: None,
        }
    }

    /// Build and validate the reference model.
    pub fn to_model(&self, strict: bool) -> Result<NonDemolitionModel, ModelFileError> {
        let alphabet = OutcomeAlphabet::new(self.alphabet.clone())?;
        let mut labels = Vec::with_capacity(self.facts.len());
        let mut projectors = Vec::with_capacity(self.facts.len());
        for f in &self.facts {
            labels.push(f.label.clone());
            let p = data_to_matrix(&f.projector)?;
            if p.nrows() != self.dim {
                return Err(ModelFileError::Invalid(format!(
                    "projector {} is {}x{}, expected dim {}",
                    f.label,
                    p.nrows(),
                    p.ncols(),
                    self.dim
                )));
            }
            projectors.push(p);
        }
        let family = ProjectorFamily::new(labels, projectors)?;
        if self.amplitudes.len() != self.alphabet.len()
            || self.amplitudes.iter().any(|row| row.len() != self.facts.len())
        {
            return Err(ModelFileError::Invalid(
                "amplitude table must be |alphabet| × |facts|".into(),
            ));
        }
        let amplitudes: Vec<Vec<Complex64>> = self
            .amplitudes
            .iter()
            .map(|row| row.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
            .collect();
        Ok(NonDemolitionModel::new(alphabet, family, amplitudes, strict)?)
    }

    /// Initial state: the document's, or maximally mixed.
    pub fn initial_state(&self) -> Result<DensityMatrix, ModelFileError> {
        match &self.initial_state {
            Some(data) => {
                let m = data_to_matrix(data)?;
                Ok(DensityMatrix::new(m)?)
            }
            None => Ok(DensityMatrix::maximally_mixed(self.dim)),
        }
    }

    /// The step dynamics this document describes: the reference model with
    /// the perturbation section applied when present. A cycle section, when
    /// present, takes precedence over a plain perturbation.
    pub fn to_dynamics(&self, strict: bool) -> Result<StepDynamics, ModelFileError> {
        let model = self.to_model(strict)?;
        if let Some(cycle) = &self.cycle {
            let cfg = self.cycle_config_with(model, cycle)?;
            return Ok(build_cycle_dynamics(&cfg)?);
        }
        match &self.perturbation {
            None => Ok(StepDynamics::from_model(&model)),
            Some(PerturbationSpec::Hamiltonian { matrix }) => {
                let h = data_to_matrix(matrix)?;
                Ok(build_hamiltonian_perturbation(
                    &model,
                    HamiltonianSchedule::Constant(h),
                    None,
                )?)
            }
            Some(PerturbationSpec::Mixture { upsilon, deviations }) => {
                let maps: Vec<OutcomeMap> = deviations
                    .iter()
                    .map(|d| {
                        let mat = data_to_matrix(d)?;
                        if mat.nrows() != self.dim * self.dim {
                            return Err(ModelFileError::Invalid(
                                "mixture deviations must be dim²×dim² superoperators".into(),
                            ));
                        }
                        Ok(OutcomeMap::Super {
                            dim: self.dim,
                            mat,
                        })
                    })
                    .collect::<Result<_, ModelFileError>>()?;
                let mixture =
                    build_mixture_channel(model.alphabet(), upsilon, &maps, 128, 0x6d78)?;
                Ok(StepDynamics::from_maps_unchecked(
                    model.alphabet().clone(),
                    mixture.maps,
                    Some(model),
                ))
            }
        }
    }

    fn cycle_config_with(
        &self,
        model: NonDemolitionModel,
        cycle: &CycleSpec,
    ) -> Result<CycleConfig, ModelFileError> {
        Ok(CycleConfig {
            lambda1: cycle.lambda1,
            lambda2: cycle.lambda2,
            measurements: cycle.m,
            hamiltonian: data_to_matrix(&cycle.h_p)?,
            model,
        })
    }

    /// Cycle configuration, if the document has a cycle section.
    pub fn to_cycle_config(&self, strict: bool) -> Result<Option<CycleConfig>, ModelFileError> {
        match &self.cycle {
            None => Ok(None),
            Some(cycle) => {
                let cfg = self.cycle_config_with(self.to_model(strict)?, cycle)?;
                cfg.validate()?;
                Ok(Some(cfg))
            }
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model documents serialize")
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        std::fs::write(path, self.to_json_string() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Write trajectory records as delimited text: one record per line with the
/// protocol symbol string, the log probability to 17 significant digits, the
/// seed and the stream.
pub fn write_trajectories<W: Write>(
    mut w: W,
    records: &[TrajectoryRecord],
    alphabet: &OutcomeAlphabet,
) -> io::Result<()> {
    writeln!(w, "protocol\tlog_prob\tseed\tstream")?;
    for t in records {
        writeln!(
            w,
            "{}\t{:.16e}\t{}\t{}",
            t.protocol.symbol_string(alphabet),
            t.log_prob,
            t.seed,
            t.stream
        )?;
    }
    Ok(())
}

/// Read back a trajectory file written by [`write_trajectories`]; states are
/// not part of the text format.
pub fn read_trajectories<R: BufRead>(
    r: R,
    alphabet: &OutcomeAlphabet,
) -> Result<Vec<TrajectoryRecord>, ModelFileError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if idx == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(ModelFileError::Invalid(format!(
                "line {}: expected 4 tab-separated fields",
                idx + 1
            )));
        }
        let protocol = crate::trajectories::Protocol::parse(fields[0], alphabet)?;
        let parse_err =
            |what: &str| ModelFileError::Invalid(format!("line {}: bad {what}", idx + 1));
        out.push(TrajectoryRecord {
            protocol,
            log_prob: fields[1].parse().map_err(|_| parse_err("log_prob"))?,
            states: None,
            seed: fields[2].parse().map_err(|_| parse_err("seed"))?,
            stream: fields[3].parse().map_err(|_| parse_err("stream"))?,
        });
    }
    Ok(out)
}

/// Write a numeric table as tab-separated text with full f64 precision.
pub fn write_series<W: Write>(mut w: W, header: &[&str], rows: &[Vec<f64>]) -> io::Result<()> {
    writeln!(w, "{}", header.join("\t"))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(w, "{}", cells.join("\t"))?;
    }
    Ok(())
}
