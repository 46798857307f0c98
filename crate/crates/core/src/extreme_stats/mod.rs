//! Monte Carlo verification of the extreme-value bounds and of the
//! statistics behind mean-bias emergence.

pub mod emergence;
pub mod normal;
pub mod theorems;

pub use emergence::{
    dimension_scaling_check, embedding_mean, nonlinearity_mean_regeneration, zipf_embedding_mean, zipf_probabilities,
    RegenerationStats, ScalingConfig, ScalingPoint, ScalingReport, ZipfConfig, ZipfEmbeddingReport,
};
pub use normal::{normal_cdf, normal_quantile, normal_sf, normal_upper_quantile};
pub use theorems::{
    q_l_delta, verify_dense_amplification, verify_extreme_dominance, verify_extreme_separation, ExceedanceStats,
    MaxStats, NoiseDistribution, TailModel, Verdict, MC_SLACK,
};
