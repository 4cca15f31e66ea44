//! Cluster-robust sandwich covariance for PPML fits and normal confidence
//! intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::DesignSpec;
use crate::estimator::FitResult;
use crate::fe::{Absorber, FeError};
use crate::linalg::{Cholesky, Matrix};
use crate::panel::{CountryCode, ObsKey, Panel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum ClusterDim {
    #[default]
    Pair,
    Reporter,
    Counterparty,
}

impl ClusterDim {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterDim::Pair => "pair",
            ClusterDim::Reporter => "reporter",
            ClusterDim::Counterparty => "counterparty",
        }
    }

    fn label(self, key: &ObsKey) -> (CountryCode, Option<CountryCode>) {
        match self {
            ClusterDim::Pair => (key.reporter, Some(key.counterparty)),
            ClusterDim::Reporter => (key.reporter, None),
            ClusterDim::Counterparty => (key.counterparty, None),
        }
    }
}

impl std::str::FromStr for ClusterDim {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pair" => Ok(ClusterDim::Pair),
            "reporter" => Ok(ClusterDim::Reporter),
            "counterparty" => Ok(ClusterDim::Counterparty),
            other => Err(format!("unknown cluster dimension {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error("bread matrix is not invertible")]
    SingularBread,
    #[error("need at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("fit did not converge")]
    FitNotConverged,
    #[error("fit row {0} is not in the design or has no outcome")]
    RowMismatch(ObsKey),
    #[error("coefficient {0} is not a design column")]
    UnknownCoefficient(String),
    #[error(transparent)]
    FixedEffects(#[from] FeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredVcov<T> {
    pub matrix: Matrix<T>,
    pub names: Vec<String>,
    pub cluster_dimension: ClusterDim,
    pub n_clusters: usize,
    pub dof_correction: T,
}

impl<T: Scalar> ClusteredVcov<T> {
    pub fn standard_errors(&self) -> Vec<T> {
        self.matrix.diagonal().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }

    pub fn se(&self, name: &str) -> Option<T> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.matrix[(i, i)].max(T::zero()).sqrt())
    }
}

/// `A⁻¹ B A⁻¹ · G/(G−1)` with `A = Σ μ x̃x̃ᵀ` and `B` the sum over clusters
/// of outer products of `Σ (y − μ) x̃`, where `x̃` is demeaned within the
/// fixed effects using weights `μ`.
pub fn cluster_vcov<T: Scalar>(
    fit: &FitResult<T>,
    panel: &Panel,
    design: &DesignSpec<T>,
    cluster: ClusterDim,
) -> Result<ClusteredVcov<T>, InferenceError> {
    if !fit.converged {
        return Err(InferenceError::FitNotConverged);
    }
    let position: BTreeMap<ObsKey, usize> = design.rows().iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let fit_rows: BTreeSet<ObsKey> = fit.rows.iter().copied().collect();
    for key in &fit.rows {
        if !position.contains_key(key) {
            return Err(InferenceError::RowMismatch(*key));
        }
    }
    let keep: Vec<bool> = design.rows().iter().map(|k| fit_rows.contains(k)).collect();
    let sub = design.restrict(&keep);
    // fit rows are a design-order subsequence, so alignment is positional
    let mu = &fit.fitted;
    let n = mu.len();
    let mut y = Vec::with_capacity(n);
    for key in sub.rows() {
        y.push(T::of(panel.value(key).ok_or(InferenceError::RowMismatch(*key))?));
    }

    let names = fit.names();
    let mut cols = Vec::with_capacity(names.len());
    for name in &names {
        let col = sub.column(name).ok_or_else(|| InferenceError::UnknownCoefficient(name.clone()))?;
        cols.push(col.values.clone());
    }
    let p = cols.len();
    let tiny = T::min_positive_value();
    let weights: Vec<T> = mu.iter().map(|m| m.max(tiny)).collect();
    let absorber = Absorber::new(sub.fixed_effects(), &weights)?;
    let tol = T::of(fit.config.tol_demean).max(T::epsilon() * T::of(64.0));
    absorber.demean_all(&mut cols, tol, fit.config.max_iter_demean)?;

    let mut bread = Matrix::zeros(p, p);
    let mut members: BTreeMap<(CountryCode, Option<CountryCode>), Vec<usize>> = BTreeMap::new();
    for (i, key) in sub.rows().iter().enumerate() {
        let x: Vec<T> = (0..p).map(|a| cols[a][i]).collect();
        bread.add_outer(&x, weights[i]);
        members.entry(cluster.label(key)).or_default().push(i);
    }
    let g = members.len();
    if g < 2 {
        return Err(InferenceError::TooFewClusters(g));
    }
    let inv = Cholesky::new(&bread).ok_or(InferenceError::SingularBread)?.inverse();

    let groups: Vec<&Vec<usize>> = members.values().collect();
    let scores: Vec<Vec<T>> = groups
        .par_iter()
        .map(|rows| {
            (0..p)
                .map(|a| rows.iter().fold(T::zero(), |s, &i| s + (y[i] - mu[i]) * cols[a][i]))
                .collect()
        })
        .collect();
    let mut meat = Matrix::zeros(p, p);
    for s in &scores {
        meat.add_outer(s, T::one());
    }

    let dof = T::of(g as f64) / T::of((g - 1) as f64);
    let mut matrix = inv.matmul(&meat).matmul(&inv).scale(dof);
    for i in 0..p {
        for j in 0..i {
            let avg = (matrix[(i, j)] + matrix[(j, i)]) / T::of(2.0);
            matrix[(i, j)] = avg;
            matrix[(j, i)] = avg;
        }
    }
    Ok(ClusteredVcov { matrix, names, cluster_dimension: cluster, n_clusters: g, dof_correction: dof })
}

/// Two-sided normal critical value for `level`.
pub fn normal_critical_value(level: f64) -> f64 {
    assert!(level > 0.0 && level < 1.0, "confidence level must lie in (0, 1)");
    Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// `beta ± z(level)·se`.
pub fn confidence_interval<T: Scalar>(beta: T, se: T, level: f64) -> (T, T) {
    assert!(se >= T::zero(), "standard error must be non-negative");
    let half = T::of(normal_critical_value(level)) * se;
    (beta - half, beta + half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

/// Reported coefficients with standard errors and 95% intervals.
pub fn coefficient_table<T: Scalar>(fit: &FitResult<T>, vcov: &ClusteredVcov<T>, level: f64) -> Vec<CoefficientRow> {
    fit.coefficients
        .iter()
        .filter(|c| c.reported)
        .filter_map(|c| {
            let se = vcov.se(&c.name)?;
            let (lo, hi) = confidence_interval(c.estimate, se, level);
            Some(CoefficientRow {
                name: c.name.clone(),
                beta: c.estimate.as_f64(),
                se: se.as_f64(),
                ci_lo: lo.as_f64(),
                ci_hi: hi.as_f64(),
                n_obs: fit.n_obs,
                n_clusters: vcov.n_clusters,
            })
        })
        .collect()
}

pub fn write_coefficient_table<W: Write>(rows: &[CoefficientRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    if rows.is_empty() {
        out.write_record(["name", "beta", "se", "ci_lo", "ci_hi", "n_obs", "n_clusters"])?;
    }
    out.flush()?;
    Ok(())
}
