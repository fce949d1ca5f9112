//! Multi-block data-driven sparse PLS.
//!
//! Covariate blocks `X_1..X_T` observed on shared individuals are linked to a
//! response block `Y` through soft-thresholded correlation matrices. Each
//! block contributes sparse weights, a second decomposition combines them into
//! super-weights, and a low-rank regression maps the resulting super-component
//! back onto `Y`. Whole missing block-rows, in training or test data, are
//! handled by the two-stage Koh-Lanta imputation in [`koh_lanta`].
//!
//! All estimators are generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below name the double-precision instantiations used by the CLI.

pub mod classify;
pub mod ct_spls;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod koh_lanta;
pub mod mdd_spls;
pub mod numkernel;
pub mod scalar;
pub mod simulate;

pub use ct_spls::{ct_spls_fit, from_correlation, selected_variables, CtSplsModel};
pub use dataset::{IndexSets, MultiBlockDataset};
pub use error::{Error, Result};
pub use koh_lanta::{reunification_predict, tribe_impute, KohLantaFit, TribeOptions};
pub use mdd_spls::{mdd_fit, mdd_fit_blocks, MddsplsModel};
pub use numkernel::{StandardizationParams, SvdResult};
pub use scalar::Scalar;

pub type CtSplsModelF64 = CtSplsModel<f64>;
pub type MddsplsModelF64 = MddsplsModel<f64>;
pub type KohLantaFitF64 = KohLantaFit<f64>;
pub type DatasetF64 = MultiBlockDataset<f64>;
pub type CtSplsModelF32 = CtSplsModel<f32>;
pub type MddsplsModelF32 = MddsplsModel<f32>;
