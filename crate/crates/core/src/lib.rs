//! Out-of-core tile Cholesky factorization.
//!
//! A symmetric positive definite matrix is stored as a lower triangle of
//! square tiles, each kept in one of four precisions. A static scheduler
//! distributes the left-looking factorization over simulated devices whose
//! bounded memory is managed by a pinning LRU cache, and every host/device
//! copy is recorded so data movement can be measured exactly.
//!
//! ```
//! use oocchol::{
//!     build_covariance, gen_locations, log_likelihood, plan_precisions, run_factorization,
//!     ClusterConfig, MaternParams, PrecisionMode, Variant,
//! };
//!
//! let locs = gen_locations(256, 42);
//! let a = build_covariance(&locs, &MaternParams::new(1.0, 0.1, 0.5), 64).unwrap();
//! let pmap = plan_precisions(&a, 1e-8, &PrecisionMode::Four.allowed()).unwrap();
//! let cfg = ClusterConfig::new(2, 2, 1 << 20, Variant::V3);
//! let out = run_factorization(a, &pmap, &cfg).unwrap();
//! let ll = log_likelihood(&out.factor, None).unwrap();
//! assert!(ll.loglik.is_finite());
//! ```

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod error;
pub mod kernels;
pub mod memdev;
pub mod planner;
pub mod precision;
pub mod scheduler;
pub mod stats;
pub mod tile;

pub use covariance::{build_covariance, gen_locations, matern, MaternParams, SpatialLocations};
pub use error::{Error, Result};
pub use kernels::{gemm_update, potrf_tile, syrk_update, trsm_tile, KernelKind};
pub use memdev::{BandwidthModel, Direction, TransferEvent, TransferLedger};
pub use planner::{apply_precision_map, plan_precisions, PrecisionMap, PrecisionMapExport, PrecisionMode};
pub use precision::{cast_scalar, Precision};
pub use scheduler::{run_factorization, ClusterConfig, EventKind, EventTrace, Factorization, RunStats, Variant};
pub use stats::{factorization_residual, kl_divergence, log_det_from_factor, log_likelihood, LikelihoodResult};
pub use tile::{TileBuffer, TileIndex, TiledSymmetricMatrix};
