//! Extraction of optimal subarchitectures from parametric network families.

pub mod abnc;
pub mod arch;
mod error;
pub mod extractor;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod poly;
pub mod trainer;

pub use arch::{
    validate_search_space, Activation, ArchParamVar, ArchTemplate, Constraint, LayerDoc,
    LayerKind, LayerTemplate, ParamAssignment, SearchSpace, Segments, SegmentsDoc, TemplateDoc,
    ValidationIssue, ValidationReport, VarRole,
};
pub use error::{Error, Result};
pub use metrics::{
    CensusCounts, CensusModel, DataPoint, Dataset, ErrorRate, Loss, MetricsReport, OpCensus,
    OtherOp,
};
pub use network::{InitScheme, Network, WeightArray};
pub use abnc::{
    check_ordering, check_strong, check_weak, AbncReport, DegreeComparison, OrderingReport,
    StrongEstimate, WeakReport,
};
pub use extractor::{
    candidate_seeds, extract, find_max_point, read_weight_sidecar, sort_space, w_coefficient,
    write_weight_sidecar, CandidateRecord, CandidateStatus, ExtractOptions, ExtractionResult,
    MaxPoint, WeightsManifest, ERROR_FLOOR,
};
pub use oracle::{
    brute_force_ose_dec, equal_error_shortest_path, exhaustive_opt, reduce_nn_training, DecAnswer,
    DecWitness, OseDecInstance, ShortestPathResult, Threshold, WeightGrid, DEFAULT_EVAL_CAP,
};
pub use poly::{Monomial, PolyExpr};
pub use trainer::{
    backprop, derive_seed, estimate_smoothness, fixed_lr, sgd_shuffling_train, step_budget,
    BackpropResult, Gradients, HyperParams, SmoothnessEstimate, TrainTrace,
};
