//! The published three-player experiment at full or reduced scale.

use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;

use super::replicate::{run_replications, ReplicationOutcome};
use super::run::RunError;
use super::spec::{parse_spec_str, ExperimentSpec};

const FULL_SPEC: &str = include_str!("../../specs/figure1.json");
const REDUCED_SPEC: &str = include_str!("../../specs/figure1_reduced.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// `T0 = c2 = 2000`, `c3 = 10000`, 10 epochs, 100 replications.
    Full,
    /// `T0 = c2 = 200`, `c3 = 500`, 7 epochs, 20 replications.
    Reduced,
}

pub fn figure1_spec(scale: Scale) -> ExperimentSpec {
    let text = match scale {
        Scale::Full => FULL_SPEC,
        Scale::Reduced => REDUCED_SPEC,
    };
    parse_spec_str(text, Path::new(".")).expect("bundled spec is valid")
}

pub fn reproduce_figure1(scale: Scale) -> Result<ReplicationOutcome, RunError> {
    run_replications(&figure1_spec(scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{AdversarySpec, Phase};
    use crate::model::SystemConfig;

    #[test]
    fn bundled_specs_match_the_experiment() {
        let full = figure1_spec(Scale::Full);
        let expected = SystemConfig {
            base_seed: full.system.base_seed,
            ..SystemConfig::reference()
        };
        assert_eq!(full.system, expected);
        assert_eq!(full.replications, 100);
        assert_eq!(full.adversary, AdversarySpec::reference());

        let reduced = figure1_spec(Scale::Reduced);
        assert_eq!((reduced.system.t0, reduced.system.c2, reduced.system.c3), (200, 200, 500));
        assert_eq!((reduced.system.epochs, reduced.replications), (7, 20));
        assert_eq!(
            reduced.adversary,
            AdversarySpec::IidSingleArm { p: 0.4, active_phases: vec![Phase::Exploration, Phase::Matching] }
        );
    }
}
