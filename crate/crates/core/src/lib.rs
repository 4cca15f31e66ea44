//! Gravity estimation for bilateral portfolio holdings.
//!
//! The pipeline runs from canonical CSV panels ([`panel`]) through
//! great-circle distances ([`geo`]) and regression designs ([`design`]) to
//! Poisson pseudo-maximum-likelihood fits with absorbed fixed effects
//! ([`estimator`]) and cluster-robust inference ([`inference`]).
//! [`restatement`] covers descriptive residency/nationality analytics and
//! [`synth`] generates panels with known parameters.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amount;
pub mod design;
pub mod estimator;
pub mod fe;
pub mod geo;
pub mod inference;
pub mod linalg;
pub mod panel;
pub mod restatement;
pub mod scalar;
pub mod synth;

pub use amount::Amount;
pub use design::{build_baseline_design, build_timevarying_design, DesignError, DesignSpec, SpecVariant, TimeVaryingOptions};
pub use estimator::{detect_separation, fit_ppml, EstimateError, FitConfig, FitResult, SeparationPolicy};
pub use fe::{absorb_fixed_effects, FeKind, FixedEffectLayout};
pub use geo::{bin_holdings, haversine_km, BinSpec, DistanceTable, GeoPoint, TagScheme};
pub use inference::{cluster_vcov, confidence_interval, ClusterDim, ClusteredVcov};
pub use panel::{Basis, CountryCode, Group, GroupAssignment, Instrument, ObsKey, Observation, Panel};
pub use restatement::{allocation_shares, passthrough_estimate, restatement_diff, top_destinations};
pub use scalar::Scalar;
pub use synth::{generate_panel, DgpConfig};

pub type Design = DesignSpec<f64>;
pub type DesignF32 = DesignSpec<f32>;
pub type PpmlFit = FitResult<f64>;
pub type PpmlFitF32 = FitResult<f32>;
pub type Vcov = ClusteredVcov<f64>;
pub type VcovF32 = ClusteredVcov<f32>;
pub type Point = GeoPoint<f64>;
