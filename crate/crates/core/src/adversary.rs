//! Oblivious attack generators.
//!
//! Every model keeps each arm attack-free with positive probability at every
//! step, which is what lets exploration terminate.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AttackVector, SystemConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("arm {arm} is attacked with probability one ({context})")]
    AttackProbabilityOne { arm: usize, context: String },
    #[error("{0}")]
    Invalid(String),
    #[error("schedule CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Exploration,
    Matching,
    Exploitation,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Exploration, Phase::Matching, Phase::Exploitation];

    pub fn index(self) -> usize {
        match self {
            Phase::Exploration => 0,
            Phase::Matching => 1,
            Phase::Exploitation => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Exploration => "exploration",
            Phase::Matching => "matching",
            Phase::Exploitation => "exploitation",
        };
        f.write_str(s)
    }
}

/// A phase of a given epoch (`epoch >= 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseTag {
    pub phase: Phase,
    pub epoch: u32,
}

impl PhaseTag {
    pub fn new(phase: Phase, epoch: u32) -> Self {
        debug_assert!(epoch >= 1);
        PhaseTag { phase, epoch }
    }
}

/// Explicit attack vectors keyed by 1-based time index; unlisted steps are
/// attack-free.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackSchedule {
    entries: BTreeMap<u64, AttackVector>,
}

impl AttackSchedule {
    pub fn new(entries: impl IntoIterator<Item = (u64, AttackVector)>) -> Self {
        AttackSchedule {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, t: u64) -> Option<&AttackVector> {
        self.entries.get(&t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_time(&self) -> Option<u64> {
        self.entries.keys().next_back().copied()
    }

    /// Reads `t,w_1,...,w_M` rows; a header row is optional.
    pub fn from_csv<R: Read>(reader: R, arms: usize) -> Result<Self, AdversaryError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = BTreeMap::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| AdversaryError::Csv(e.to_string()))?;
            if line == 0 && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("t")) {
                continue;
            }
            if record.len() != arms + 1 {
                return Err(AdversaryError::Csv(format!(
                    "row {}: expected {} fields, found {}",
                    line + 1,
                    arms + 1,
                    record.len()
                )));
            }
            let t: u64 = record[0]
                .parse()
                .map_err(|_| AdversaryError::Csv(format!("row {}: bad time index", line + 1)))?;
            let bits = record
                .iter()
                .skip(1)
                .map(|f| match f {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(AdversaryError::Csv(format!(
                        "row {}: attack bit {other:?} is not 0 or 1",
                        line + 1
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if entries.insert(t, AttackVector(bits)).is_some() {
                return Err(AdversaryError::Csv(format!("duplicate time index {t}")));
            }
        }
        Ok(AttackSchedule { entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdversarySpec {
    None,
    /// With probability `p` one uniformly chosen arm is attacked, during the
    /// listed phases only.
    IidSingleArm { p: f64, active_phases: Vec<Phase> },
    /// Arm `m` is attacked independently with probability `p[m]`.
    IidPerArm { p: Vec<f64> },
    Schedule(AttackSchedule),
}

impl AdversarySpec {
    /// The adversary of the published experiment: `p = 0.4`, exploration and
    /// matching phases only.
    pub fn reference() -> Self {
        AdversarySpec::IidSingleArm {
            p: 0.4,
            active_phases: vec![Phase::Exploration, Phase::Matching],
        }
    }

    pub fn iid_single_arm_all_phases(p: f64) -> Self {
        AdversarySpec::IidSingleArm {
            p,
            active_phases: Phase::ALL.to_vec(),
        }
    }
}

/// Draws the attack vector for step `t` (1-based) in `phase`.
pub fn next_attack<R: Rng + ?Sized>(
    spec: &AdversarySpec,
    arms: usize,
    t: u64,
    phase: PhaseTag,
    rng: &mut R,
) -> AttackVector {
    match spec {
        AdversarySpec::None => AttackVector::none(arms),
        AdversarySpec::IidSingleArm { p, active_phases } => {
            if !active_phases.contains(&phase.phase) {
                return AttackVector::none(arms);
            }
            if rng.random::<f64>() < *p {
                AttackVector::single(arms, rng.random_range(0..arms))
            } else {
                AttackVector::none(arms)
            }
        }
        AdversarySpec::IidPerArm { p } => {
            AttackVector(p.iter().map(|&pm| rng.random::<f64>() < pm).collect())
        }
        AdversarySpec::Schedule(s) => s
            .get(t)
            .cloned()
            .unwrap_or_else(|| AttackVector::none(arms)),
    }
}

fn check_probability(p: f64, arm: usize, context: &str) -> Result<(), AdversaryError> {
    if p.is_nan() || p < 0.0 {
        return Err(AdversaryError::Invalid(format!(
            "{context}: attack probability {p} is negative or NaN"
        )));
    }
    if p >= 1.0 {
        return Err(AdversaryError::AttackProbabilityOne {
            arm: arm + 1,
            context: context.to_string(),
        });
    }
    Ok(())
}

/// Accepts `spec` iff no arm can be attacked with certainty.
///
/// A schedule is rejected when some arm is attacked at every step
/// `1..=t_last` of the schedule's span.
pub fn validate_spec(spec: AdversarySpec, config: &SystemConfig) -> Result<AdversarySpec, AdversaryError> {
    let arms = config.arms;
    match &spec {
        AdversarySpec::None => {}
        AdversarySpec::IidSingleArm { p, .. } => {
            // Each arm is hit with probability p / M.
            check_probability(*p, 0, "iid_single_arm.p")?;
        }
        AdversarySpec::IidPerArm { p } => {
            if p.len() != arms {
                return Err(AdversaryError::Invalid(format!(
                    "iid_per_arm.p has {} entries, expected M = {arms}",
                    p.len()
                )));
            }
            for (m, &pm) in p.iter().enumerate() {
                check_probability(pm, m, &format!("iid_per_arm.p[{m}]"))?;
            }
        }
        AdversarySpec::Schedule(s) => {
            for (&t, w) in &s.entries {
                if t == 0 {
                    return Err(AdversaryError::Invalid("schedule time indices start at 1".into()));
                }
                if w.0.len() != arms {
                    return Err(AdversaryError::Invalid(format!(
                        "schedule entry at t = {t} has {} bits, expected M = {arms}",
                        w.0.len()
                    )));
                }
            }
            if let Some(last) = s.last_time() {
                if s.len() as u64 == last {
                    for m in 0..arms {
                        if s.entries.values().all(|w| w.is_attacked(m)) {
                            return Err(AdversaryError::AttackProbabilityOne {
                                arm: m + 1,
                                context: format!("schedule attacks it at every step 1..={last}"),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(spec)
}

/// Exact per-step distribution of attack vectors for the i.i.d. models
/// (phase restrictions ignored).
pub fn attack_marginal(spec: &AdversarySpec, arms: usize) -> Result<Vec<(AttackVector, f64)>, AdversaryError> {
    match spec {
        AdversarySpec::None => Ok(vec![(AttackVector::none(arms), 1.0)]),
        AdversarySpec::IidSingleArm { p, .. } => {
            let mut out = vec![(AttackVector::none(arms), 1.0 - p)];
            out.extend((0..arms).map(|m| (AttackVector::single(arms, m), p / arms as f64)));
            out.retain(|(_, q)| *q > 0.0);
            Ok(out)
        }
        AdversarySpec::IidPerArm { p } => {
            let mut out = Vec::with_capacity(1 << arms);
            for mask in 0u32..(1 << arms) {
                let bits: Vec<bool> = (0..arms).map(|m| mask & (1 << m) != 0).collect();
                let q: f64 = bits
                    .iter()
                    .zip(p)
                    .map(|(&b, &pm)| if b { pm } else { 1.0 - pm })
                    .product();
                if q > 0.0 {
                    out.push((AttackVector(bits), q));
                }
            }
            Ok(out)
        }
        AdversarySpec::Schedule(_) => Err(AdversaryError::Invalid(
            "schedules have no stationary per-step marginal".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tag(phase: Phase) -> PhaseTag {
        PhaseTag::new(phase, 1)
    }

    #[test]
    fn none_never_attacks() {
        let mut rng = stream(0, 1);
        for t in 1..100 {
            assert!(!next_attack(&AdversarySpec::None, 3, t, tag(Phase::Matching), &mut rng).any());
        }
    }

    #[test]
    fn inactive_phase_is_quiet() {
        let spec = AdversarySpec::reference();
        let mut rng = stream(0, 1);
        for t in 1..1000 {
            assert_eq!(
                next_attack(&spec, 3, t, tag(Phase::Exploitation), &mut rng),
                AttackVector::none(3)
            );
        }
    }

    #[test]
    fn single_arm_frequencies() {
        let spec = AdversarySpec::IidSingleArm {
            p: 0.9,
            active_phases: vec![Phase::Exploration, Phase::Matching],
        };
        let mut rng = stream(5, 1);
        let n = 100_000;
        let mut any = 0;
        let mut per_arm = [0usize; 3];
        for t in 1..=n {
            let w = next_attack(&spec, 3, t, tag(Phase::Exploration), &mut rng);
            assert!(w.count() <= 1);
            if w.any() {
                any += 1;
            }
            for m in 0..3 {
                per_arm[m] += w.is_attacked(m) as usize;
            }
        }
        let freq = any as f64 / n as f64;
        assert!((0.894..=0.906).contains(&freq), "{freq}");
        for c in per_arm {
            let f = c as f64 / n as f64;
            let se = (0.3f64 * 0.7 / n as f64).sqrt();
            assert!((f - 0.3).abs() < 4.0 * se, "{f}");
        }
    }

    #[test]
    fn same_stream_same_attacks() {
        let spec = AdversarySpec::IidPerArm { p: vec![0.5, 0.2, 0.7] };
        let draw = |seed| {
            let mut rng = stream(seed, 1);
            (1..50)
                .map(|t| next_attack(&spec, 3, t, tag(Phase::Matching), &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn validation() {
        let c = SystemConfig::reference();
        assert!(validate_spec(AdversarySpec::IidPerArm { p: vec![0.5; 3] }, &c).is_ok());
        assert!(matches!(
            validate_spec(AdversarySpec::IidPerArm { p: vec![1.0, 0.2, 0.2] }, &c),
            Err(AdversaryError::AttackProbabilityOne { arm: 1, .. })
        ));
        let always_arm1 = AttackSchedule::new((1..=50).map(|t| (t, AttackVector::single(3, 0))));
        assert!(matches!(
            validate_spec(AdversarySpec::Schedule(always_arm1), &c),
            Err(AdversaryError::AttackProbabilityOne { arm: 1, .. })
        ));
        let gappy = AttackSchedule::new((1..=50).filter(|t| t % 5 != 0).map(|t| (t, AttackVector::single(3, 0))));
        assert!(validate_spec(AdversarySpec::Schedule(gappy), &c).is_ok());
    }

    #[test]
    fn schedule_csv() {
        let text = "t,w_1,w_2,w_3\n1,1,0,0\n3,0,1,1\n";
        let s = AttackSchedule::from_csv(text.as_bytes(), 3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(3), Some(&AttackVector(vec![false, true, true])));
        let spec = AdversarySpec::Schedule(s);
        let mut rng = stream(0, 0);
        assert!(!next_attack(&spec, 3, 2, tag(Phase::Matching), &mut rng).any());
        assert!(AttackSchedule::from_csv("1,2,0,0\n".as_bytes(), 3).is_err());
    }

    #[test]
    fn marginals_sum_to_one() {
        for spec in [
            AdversarySpec::None,
            AdversarySpec::iid_single_arm_all_phases(0.3),
            AdversarySpec::IidPerArm { p: vec![0.1, 0.6] },
        ] {
            let total: f64 = attack_marginal(&spec, 2).unwrap().iter().map(|(_, q)| q).sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
    }
}
