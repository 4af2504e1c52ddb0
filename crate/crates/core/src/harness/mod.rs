//! Experiment driver: the optimization loop, regret bookkeeping, result
//! files and external objectives.

pub mod emit;
pub mod experiment;
pub mod external;
pub mod regret;

pub use emit::{
    load_dir, read_csv, render_table, results_file_name, write_csv, write_plotdata,
    write_results, write_summary, Summary,
};
pub use experiment::{run_experiment, run_seed, ExperimentConfig, ObjectiveSpec};
pub use external::ExternalObjective;
pub use regret::{
    cumulative_table, default_windows, plot_points, regret_curve, Observation, PlotPoint,
    RegretTrace, ResultTable, TableRow, WindowStat,
};
