//! Regressor columns and fixed-effect layouts for the two gravity
//! specifications:
//!
//! * baseline: `ln d × D^g` for each reporter bucket `g`, with reporter-year
//!   and counterparty-year effects;
//! * time-varying: `ln d × 1[t = τ] × D^g` for every non-base year `τ`, with
//!   reporter-year, counterparty-year and pair effects.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::fe::{Absorber, FeError, FeKind, FixedEffectLayout};
use crate::geo::{DistanceTable, GeoError};
use crate::linalg::dot;
use crate::panel::{Bucket, CountryCode, Group, GroupAssignment, Instrument, ObsKey, Panel};
use crate::scalar::Scalar;

/// Distances below this are floored before taking logs.
pub const MIN_DISTANCE_KM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DesignError {
    #[error(transparent)]
    Distance(#[from] GeoError),
    #[error("reporter {0} has no group assignment")]
    UnassignedReporter(CountryCode),
    #[error("time-varying design needs at least two years")]
    SingleYearPanel,
    #[error("base year {0} not present in the panel")]
    BaseYearAbsent(i32),
    #[error("panel mixes debt and equity; estimate each instrument separately")]
    MixedInstruments,
    #[error("no estimable observations")]
    EmptyDesign,
    #[error("every regressor was dropped as collinear")]
    AllColumnsDropped,
    #[error(transparent)]
    FixedEffects(#[from] FeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecVariant {
    Baseline,
    TimeVarying,
}

impl SpecVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SpecVariant::Baseline => "baseline",
            SpecVariant::TimeVarying => "timevarying",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorColumn<T> {
    pub name: String,
    pub bucket: Bucket,
    /// Interaction year for time-varying columns.
    pub year: Option<i32>,
    /// Excluded-bucket interactions are estimated but not reported.
    pub reported: bool,
    pub values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec<T> {
    pub variant: SpecVariant,
    rows: Vec<ObsKey>,
    regressors: Vec<RegressorColumn<T>>,
    fixed_effects: FixedEffectLayout,
    base_year: Option<i32>,
    collinearity_report: Vec<DroppedColumn>,
}

/// Serializable summary for reproducibility audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    pub variant: SpecVariant,
    pub n_rows: usize,
    pub columns: Vec<String>,
    pub fixed_effects: Vec<(String, usize)>,
    pub base_year: Option<i32>,
    pub dropped_columns: Vec<DroppedColumn>,
}

impl<T: Scalar> DesignSpec<T> {
    /// Assembles a design from raw parts; used for custom layouts.
    pub fn from_parts(
        variant: SpecVariant,
        rows: Vec<ObsKey>,
        regressors: Vec<RegressorColumn<T>>,
        fixed_effects: FixedEffectLayout,
        base_year: Option<i32>,
    ) -> Self {
        assert!(regressors.iter().all(|r| r.values.len() == rows.len()), "column length mismatch");
        assert_eq!(fixed_effects.n_rows(), rows.len(), "layout length mismatch");
        DesignSpec { variant, rows, regressors, fixed_effects, base_year, collinearity_report: Vec::new() }
    }

    pub fn rows(&self) -> &[ObsKey] {
        &self.rows
    }

    pub fn regressors(&self) -> &[RegressorColumn<T>] {
        &self.regressors
    }

    pub fn column(&self, name: &str) -> Option<&RegressorColumn<T>> {
        self.regressors.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.regressors.iter().map(|c| c.name.clone()).collect()
    }

    pub fn fixed_effects(&self) -> &FixedEffectLayout {
        &self.fixed_effects
    }

    pub fn base_year(&self) -> Option<i32> {
        self.base_year
    }

    pub fn collinearity_report(&self) -> &[DroppedColumn] {
        &self.collinearity_report
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Design over rows flagged in `keep`; FE levels are renumbered.
    pub fn restrict(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.rows.len());
        let pick = |v: &[T]| v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect::<Vec<T>>();
        DesignSpec {
            variant: self.variant,
            rows: self.rows.iter().zip(keep).filter(|(_, &k)| k).map(|(r, _)| *r).collect(),
            regressors: self.regressors.iter().map(|c| RegressorColumn { values: pick(&c.values), ..c.clone() }).collect(),
            fixed_effects: self.fixed_effects.restrict(keep),
            base_year: self.base_year,
            collinearity_report: self.collinearity_report.clone(),
        }
    }

    pub fn diagnostics(&self) -> DesignDiagnostics {
        DesignDiagnostics {
            variant: self.variant,
            n_rows: self.rows.len(),
            columns: self.names(),
            fixed_effects: self.fixed_effects.dims().iter().map(|d| (d.name.clone(), d.n_levels())).collect(),
            base_year: self.base_year,
            dropped_columns: self.collinearity_report.clone(),
        }
    }

    /// Drops regressors whose residual after absorbing the fixed effects and
    /// projecting out earlier retained regressors has norm below
    /// `tolerance` times the column's raw norm.
    pub fn detect_collinear(&self, tolerance: f64) -> Result<Self, DesignError> {
        let n = self.rows.len();
        let ones = vec![T::one(); n];
        let absorber = Absorber::new(&self.fixed_effects, &ones)?;
        let mut retained: Vec<Vec<T>> = Vec::new();
        let mut keep = Vec::new();
        let mut report = self.collinearity_report.clone();
        for col in &self.regressors {
            let raw_norm = dot(&col.values, &col.values).sqrt();
            if raw_norm == T::zero() {
                report.push(DroppedColumn { name: col.name.clone(), reason: "all zero".into() });
                continue;
            }
            let limit = T::of(tolerance) * raw_norm;
            let mut v = col.values.clone();
            absorber.demean(&mut v, T::of(1e-13), 100_000)?;
            if dot(&v, &v).sqrt() < limit {
                report.push(DroppedColumn { name: col.name.clone(), reason: "absorbed by fixed effects".into() });
                continue;
            }
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for q in &retained {
                    let c = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * *qi);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm < limit {
                report.push(DroppedColumn { name: col.name.clone(), reason: "collinear with retained regressors".into() });
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            retained.push(v);
            keep.push(col.clone());
        }
        if keep.is_empty() {
            return Err(DesignError::AllColumnsDropped);
        }
        for d in &report[self.collinearity_report.len()..] {
            log::info!("dropped regressor {} ({})", d.name, d.reason);
        }
        Ok(DesignSpec { regressors: keep, collinearity_report: report, ..self.clone() })
    }
}

struct Row {
    key: ObsKey,
    bucket: Bucket,
    ln_distance: f64,
}

fn estimation_rows(panel: &Panel, distances: &DistanceTable, groups: &GroupAssignment) -> Result<Vec<Row>, DesignError> {
    let mut instruments = BTreeSet::new();
    let mut rows = Vec::new();
    for obs in panel.iter().filter(|o| o.key.instrument != Instrument::Total) {
        let key = obs.key;
        instruments.insert(key.instrument);
        let bucket = groups.bucket_of(key.reporter).ok_or(DesignError::UnassignedReporter(key.reporter))?;
        let km = distances.require(key.reporter, key.counterparty)?;
        rows.push(Row { key, bucket, ln_distance: km.max(MIN_DISTANCE_KM).ln() });
    }
    if instruments.len() > 1 {
        return Err(DesignError::MixedInstruments);
    }
    if rows.is_empty() {
        return Err(DesignError::EmptyDesign);
    }
    Ok(rows)
}

fn column_name(bucket: Bucket, year: Option<i32>) -> String {
    match year {
        Some(y) => format!("ln_dist_x_{y}_x_{}", bucket.label()),
        None => format!("ln_dist_x_{}", bucket.label()),
    }
}

fn interaction<T: Scalar>(rows: &[Row], bucket: Bucket, year: Option<i32>) -> RegressorColumn<T> {
    let values = rows
        .iter()
        .map(|r| {
            let on = r.bucket == bucket && year.is_none_or(|y| r.key.year == y);
            if on {
                T::of(r.ln_distance)
            } else {
                T::zero()
            }
        })
        .collect();
    RegressorColumn { name: column_name(bucket, year), bucket, year, reported: bucket != Bucket::Excluded, values }
}

/// Group-interacted log distance with reporter-year and counterparty-year
/// effects. Recorded-missing and `Total` rows are not part of the design.
pub fn build_baseline_design<T: Scalar>(
    panel: &Panel,
    distances: &DistanceTable,
    groups: &GroupAssignment,
) -> Result<DesignSpec<T>, DesignError> {
    let rows = estimation_rows(panel, distances, groups)?;
    let mut buckets: Vec<Bucket> = Group::ALL.iter().map(|&g| Bucket::Group(g)).collect();
    if rows.iter().any(|r| r.bucket == Bucket::Excluded) {
        buckets.push(Bucket::Excluded);
    }
    let regressors = buckets.iter().map(|&b| interaction(&rows, b, None)).collect();
    let keys: Vec<ObsKey> = rows.iter().map(|r| r.key).collect();
    let fixed_effects = FixedEffectLayout::from_keys(&[FeKind::ReporterYear, FeKind::CounterpartyYear], &keys);
    Ok(DesignSpec::from_parts(SpecVariant::Baseline, keys, regressors, fixed_effects, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeVaryingOptions {
    pub base_year: i32,
    /// Adds rest-of-world interactions.
    pub include_row: bool,
}

impl Default for TimeVaryingOptions {
    fn default() -> Self {
        TimeVaryingOptions { base_year: 2007, include_row: false }
    }
}

/// Year-interacted log distance for ASEAN and OECD reporters (plus ROW on
/// request, plus the excluded bucket when present) relative to the base
/// year, with reporter-year, counterparty-year and pair effects.
pub fn build_timevarying_design<T: Scalar>(
    panel: &Panel,
    distances: &DistanceTable,
    groups: &GroupAssignment,
    options: TimeVaryingOptions,
) -> Result<DesignSpec<T>, DesignError> {
    let rows = estimation_rows(panel, distances, groups)?;
    let years: BTreeSet<i32> = rows.iter().map(|r| r.key.year).collect();
    if years.len() < 2 {
        return Err(DesignError::SingleYearPanel);
    }
    if !years.contains(&options.base_year) {
        return Err(DesignError::BaseYearAbsent(options.base_year));
    }
    let mut buckets = vec![Bucket::Group(Group::Asean), Bucket::Group(Group::Oecd)];
    if options.include_row {
        buckets.push(Bucket::Group(Group::Row));
    }
    if rows.iter().any(|r| r.bucket == Bucket::Excluded) {
        buckets.push(Bucket::Excluded);
    }
    let mut regressors = Vec::new();
    for &year in years.iter().filter(|&&y| y != options.base_year) {
        for &bucket in &buckets {
            regressors.push(interaction(&rows, bucket, Some(year)));
        }
    }
    let keys: Vec<ObsKey> = rows.iter().map(|r| r.key).collect();
    let fixed_effects =
        FixedEffectLayout::from_keys(&[FeKind::ReporterYear, FeKind::CounterpartyYear, FeKind::Pair], &keys);
    Ok(DesignSpec::from_parts(SpecVariant::TimeVarying, keys, regressors, fixed_effects, Some(options.base_year)))
}
