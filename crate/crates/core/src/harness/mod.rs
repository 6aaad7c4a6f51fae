//! Experiment specs, the epoch loop, replication and output files.

pub mod figure1;
pub mod replicate;
pub mod run;
pub mod spec;

pub use figure1::{figure1_spec, reproduce_figure1, Scale};
pub use replicate::{run_replications, write_outputs, ReplicationOutcome, Summary};
pub use run::{run_single, RunError, RunResult};
pub use spec::{parse_spec, parse_spec_str, ExperimentSpec, SpecError};
