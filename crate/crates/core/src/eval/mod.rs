//! Metrics, factor analysis, entrainment scoring and the robot prediction
//! benchmark.

pub mod benchmark;
pub mod entrainment;
pub mod factor;
pub mod metrics;

pub use benchmark::{
    human_mspe, run_benchmark, BenchmarkConfig, BenchmarkModels, BenchmarkReport, EntrainmentReport, MethodReport, METHODS,
};
pub use entrainment::{
    entrainment_score, max_cross_correlation, permutation_threshold, EntrainmentConfig, EntrainmentScore, LaggedCorrelation,
};
pub use factor::{factor_analysis, standardize, FactorConfig, FactorModel};
pub use metrics::{mspe_curve, nrmsd, HorizonCurve};
