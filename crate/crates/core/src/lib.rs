//! Calibrated cost-optimal cascade routing for two-model inference.

pub mod calibration;
pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod routing;
pub mod synthetic;
pub mod uncertainty;
pub mod verify;

pub use calibration::{
    expected_calibration_error, fit_isotonic, fit_temperature, reliability_table,
    CalibrationModel, IsotonicModel, ReliabilityBin, ReliabilityTable, TemperatureModel,
};
pub use datamodel::{
    derive_correctness, derive_match_counts, entity_match_counts, entity_match_counts_by_type,
    load_records, records_to_jsonl, split_dataset, write_records, CostModel, DatasetSplit,
    EntityMap, InferenceRecord, MatchCounts, ModelKind, RunConfig, SplitName, TokenStats,
    DEFAULT_ENTITY_SCHEMA, MAX_TOKEN_COUNT,
};
pub use error::{Error, Result};
pub use evaluation::{
    assumption_ii_diagnostic, bootstrap_ci, bootstrap_ci_with_level, cost_sensitivity,
    cost_sensitivity_phi, evaluate_cascade, evaluate_single, micro_f1, pareto_sweep,
    per_entity_report, report_from_decisions, BootstrapCI, CascadeReport, CostSensitivityRow,
    EscalatedSubsetDiagnostic, ParetoCurve, ParetoPoint, PolicyDescriptor, Statistic,
};
pub use routing::{
    build_entropy_baseline, build_frugal_baseline, conformal_quantile, default_delta_grid,
    load_policy, route, save_policy, select_conformal, select_conformal_with_grid,
    select_threshold, select_under_budget, Direction, RoutingPolicy, ScoreSource,
    SelectionResult,
};
pub use synthetic::{
    brute_force_optimal_policy, falsification_experiment, rate_experiment, sample_error_pairs,
    BetaParams, EntityProfile, FalsificationPoint, LargeMode, LogisticCurve, RatePoint, RateTable,
    SyntheticBatch, SyntheticSpec, TailMode, AUX_STREAM_BASE, MAX_ORACLE_RECORDS,
};
pub use uncertainty::{
    margin_uncertainty, mean_entropy, mean_max_prob_confidence, record_signal, score_records,
    Orientation, ScoredRecords, SignalKind,
};
pub use verify::{
    calibration_improvement_check, calibration_rate_check, conformal_coverage_check,
    contamination_check, correlated_diagnostic_check, independence_diagnostic_check,
    isotonic_oracle_check, level_set_tie_check, matched_workload_check, matched_workload_run,
    run_default_verification, selection_oracle_check, MatchedWorkloadRun, PropertyResult,
};
