//! Experiment specification files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{validate_spec, AdversaryError, AdversarySpec, AttackSchedule, Phase};
use crate::matching::SyncSnapshot;
use crate::model::{validate_config, AttackVector, ModelError, SystemConfig};

pub const DEFAULT_STRIDE: u64 = 100;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {path}: {reason}")]
    Validation { path: String, reason: String },
}

impl SpecError {
    fn validation(path: impl Into<String>, reason: impl ToString) -> Self {
        SpecError::Validation {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

fn default_active_phases() -> Vec<Phase> {
    vec![Phase::Exploration, Phase::Matching]
}

/// `adversary` section of a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryDoc {
    None,
    IidSingleArm {
        p: f64,
        #[serde(default = "default_active_phases")]
        active_phases: Vec<Phase>,
    },
    IidPerArm {
        p: Vec<f64>,
    },
    /// Either a CSV file of `t,w_1,...,w_M` rows (relative paths resolve
    /// against the spec file) or inline `[t, [w_1, ..., w_M]]` entries.
    Schedule {
        #[serde(default)]
        csv: Option<PathBuf>,
        #[serde(default)]
        entries: Option<Vec<(u64, Vec<u8>)>>,
    },
}

impl Default for AdversaryDoc {
    fn default() -> Self {
        AdversaryDoc::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationOptions {
    #[serde(default = "yes")]
    pub count_while_waiting: bool,
}

impl Default for ExplorationOptions {
    fn default() -> Self {
        ExplorationOptions {
            count_while_waiting: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingOptions {
    #[serde(default)]
    pub sync_snapshot: SyncSnapshot,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn default_stride() -> u64 {
    DEFAULT_STRIDE
}

/// Raw spec document, before adversary resolution and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDoc {
    pub system: SystemConfig,
    #[serde(default)]
    pub adversary: AdversaryDoc,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default = "default_stride")]
    pub stride: u64,
    /// Stop every run after this many steps, mid-phase if need be.
    #[serde(default)]
    pub horizon: Option<u64>,
    #[serde(default)]
    pub exploration: ExplorationOptions,
    #[serde(default)]
    pub matching: MatchingOptions,
    /// Write `trace.csv` with every matching-phase round.
    #[serde(default)]
    pub trace: bool,
    /// Add the exact-chain report to `summary.json` (tiny instances only).
    #[serde(default)]
    pub oracle_check: bool,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub adversary: AdversarySpec,
    pub replications: usize,
    pub stride: u64,
    pub horizon: Option<u64>,
    pub count_while_waiting: bool,
    pub sync_snapshot: SyncSnapshot,
    pub trace: bool,
    pub oracle_check: bool,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Defaults around a system: no adversary, one replication.
    pub fn new(system: SystemConfig, adversary: AdversarySpec) -> Self {
        ExperimentSpec {
            system,
            adversary,
            replications: 1,
            stride: DEFAULT_STRIDE,
            horizon: None,
            count_while_waiting: true,
            sync_snapshot: SyncSnapshot::default(),
            trace: false,
            oracle_check: false,
            workers: None,
            output_dir: None,
        }
    }

    pub fn validate(self) -> Result<Self, SpecError> {
        let system = validate_config(self.system).map_err(|e| match e {
            ModelError::ParameterViolation { field, reason } => SpecError::validation(format!("system.{field}"), reason),
            other => SpecError::validation("system.means", other),
        })?;
        let adversary = validate_spec(self.adversary, &system).map_err(|e| SpecError::validation("adversary", e))?;
        if self.replications == 0 {
            return Err(SpecError::validation("replications", "must be at least 1"));
        }
        if self.stride == 0 {
            return Err(SpecError::validation("stride", "must be at least 1"));
        }
        if self.horizon == Some(0) {
            return Err(SpecError::validation("horizon", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(SpecError::validation("workers", "must be at least 1"));
        }
        Ok(ExperimentSpec {
            system,
            adversary,
            ..self
        })
    }
}

fn attack_bits(bits: &[u8], t: u64, arms: usize) -> Result<AttackVector, SpecError> {
    let path = || format!("adversary.entries[t={t}]");
    if bits.len() != arms {
        return Err(SpecError::validation(path(), format!("expected {arms} bits, found {}", bits.len())));
    }
    bits.iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(SpecError::validation(path(), format!("bit {b} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>, _>>()
        .map(AttackVector)
}

fn resolve_adversary(doc: AdversaryDoc, arms: usize, base_dir: &Path) -> Result<AdversarySpec, SpecError> {
    Ok(match doc {
        AdversaryDoc::None => AdversarySpec::None,
        AdversaryDoc::IidSingleArm { p, active_phases } => AdversarySpec::IidSingleArm { p, active_phases },
        AdversaryDoc::IidPerArm { p } => AdversarySpec::IidPerArm { p },
        AdversaryDoc::Schedule { csv, entries } => match (csv, entries) {
            (Some(path), None) => {
                let full = base_dir.join(path);
                let file = std::fs::File::open(&full).map_err(|source| SpecError::Io { path: full.clone(), source })?;
                let schedule = AttackSchedule::from_csv(file, arms).map_err(|e: AdversaryError| {
                    SpecError::validation("adversary.csv", e)
                })?;
                AdversarySpec::Schedule(schedule)
            }
            (None, Some(entries)) => {
                let parsed = entries
                    .iter()
                    .map(|(t, bits)| Ok((*t, attack_bits(bits, *t, arms)?)))
                    .collect::<Result<Vec<_>, SpecError>>()?;
                AdversarySpec::Schedule(AttackSchedule::new(parsed))
            }
            _ => {
                return Err(SpecError::validation(
                    "adversary",
                    "a schedule needs exactly one of `csv` or `entries`",
                ))
            }
        },
    })
}

impl SpecDoc {
    pub fn into_spec(self, base_dir: &Path) -> Result<ExperimentSpec, SpecError> {
        let adversary = resolve_adversary(self.adversary, self.system.arms, base_dir)?;
        ExperimentSpec {
            system: self.system,
            adversary,
            replications: self.replications,
            stride: self.stride,
            horizon: self.horizon,
            count_while_waiting: self.exploration.count_while_waiting,
            sync_snapshot: self.matching.sync_snapshot,
            trace: self.trace,
            oracle_check: self.oracle_check,
            workers: self.workers,
            output_dir: self.output_dir,
        }
        .validate()
    }
}

/// Parses and validates a spec from JSON text; relative paths inside it
/// resolve against `base_dir`.
pub fn parse_spec_str(text: &str, base_dir: &Path) -> Result<ExperimentSpec, SpecError> {
    let doc: SpecDoc = serde_json::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
    doc.into_spec(base_dir)
}

pub fn parse_spec(path: &Path) -> Result<ExperimentSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_spec_str(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": {
            "K": 2, "M": 2, "means": [[0.9, 0.2], [0.3, 0.8]],
            "reward_model": {"type": "deterministic"},
            "delta_exp": 0.0, "epsilon": 0.01, "kappa": 3, "beta": 2,
            "T0": 10, "c2": 10, "c3": 10, "epochs": 2, "base_seed": 7
        }
    }"#;

    fn parse(text: &str) -> Result<ExperimentSpec, SpecError> {
        parse_spec_str(text, Path::new("."))
    }

    #[test]
    fn minimal_defaults() {
        let s = parse(MINIMAL).unwrap();
        assert_eq!(s.adversary, AdversarySpec::None);
        assert_eq!((s.replications, s.stride), (1, DEFAULT_STRIDE));
        assert!(s.count_while_waiting);
        assert_eq!(s.sync_snapshot, SyncSnapshot::PostUpdate);
    }

    #[test]
    fn missing_epsilon_names_field() {
        let text = MINIMAL.replace(r#""epsilon": 0.01, "#, "");
        match parse(&text) {
            Err(SpecError::Parse(msg)) => assert!(msg.contains("epsilon"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn epsilon_out_of_range() {
        let text = MINIMAL.replace(r#""epsilon": 0.01"#, r#""epsilon": 1.5"#);
        match parse(&text) {
            Err(SpecError::Validation { path, .. }) => assert_eq!(path, "system.epsilon"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replacen('{', r#"{"colour": 1, "#, 1);
        assert!(matches!(parse(&text), Err(SpecError::Parse(_))));
        let text = MINIMAL.replace(r#""base_seed": 7"#, r#""base_seed": 7, "seed": 1"#);
        assert!(matches!(parse(&text), Err(SpecError::Parse(_))));
    }

    #[test]
    fn zero_epochs_rejected() {
        let text = MINIMAL.replace(r#""epochs": 2"#, r#""epochs": 0"#);
        assert!(matches!(parse(&text), Err(SpecError::Validation { .. })));
    }

    #[test]
    fn adversary_variants() {
        let with = |adv: &str| {
            let text = MINIMAL.trim_end().trim_end_matches('}').to_string() + &format!(r#", "adversary": {adv} }}"#);
            parse(&text)
        };
        let s = with(r#"{"type": "iid_single_arm", "p": 0.4}"#).unwrap();
        assert_eq!(
            s.adversary,
            AdversarySpec::IidSingleArm { p: 0.4, active_phases: vec![Phase::Exploration, Phase::Matching] }
        );
        assert!(with(r#"{"type": "iid_per_arm", "p": [0.5, 0.5]}"#).is_ok());
        assert!(matches!(
            with(r#"{"type": "iid_per_arm", "p": [1.0, 0.2]}"#),
            Err(SpecError::Validation { .. })
        ));
        let s = with(r#"{"type": "schedule", "entries": [[1, [0, 1]], [3, [1, 0]]]}"#).unwrap();
        assert!(matches!(s.adversary, AdversarySpec::Schedule(_)));
        assert!(with(r#"{"type": "schedule", "entries": [[1, [1, 0]], [2, [1, 0]]]}"#).is_err());
        assert!(with(r#"{"type": "schedule"}"#).is_err());
    }

    #[test]
    fn schedule_csv_relative_to_spec() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("attacks.csv"), "t,w_1,w_2\n1,0,1\n2,0,0\n").unwrap();
        let text = MINIMAL.trim_end().trim_end_matches('}').to_string()
            + r#", "adversary": {"type": "schedule", "csv": "attacks.csv"} }"#;
        let spec_path = dir.path().join("spec.json");
        std::fs::write(&spec_path, text).unwrap();
        let s = parse_spec(&spec_path).unwrap();
        match s.adversary {
            AdversarySpec::Schedule(sched) => assert_eq!(sched.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
