//! Benchmark scenarios, simulated degradations, experiment sweeps and
//! reports.

mod degrade;
mod experiment;
mod report;
mod scenarios;
mod synthetic;

pub use degrade::{crop_to_multiple, degrade, lcm, CropRecord, Degraded};
pub use experiment::{
    load_image_dir, run_experiment, run_method, run_seed, Budget, DipStop, ExperimentConfig,
    MethodKind, RunOutcome,
};
pub use report::{read_report_csv, write_trace_csv, Aggregate, Report, ReportRow, RunLog};
pub use scenarios::{
    all_builtin, builtin, find_scenario, load_scenarios, Scenario, Task, BUILTIN_NAMES,
};
pub use synthetic::synthetic_image;
