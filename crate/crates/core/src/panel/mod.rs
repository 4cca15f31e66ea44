//! Bilateral holdings panels: data model, ingestion, zero filling and
//! country-group membership.
//!
//! A [`Panel`] is an immutable, key-ordered collection of holdings in USD
//! million. Every `(reporter, counterparty, year, instrument)` key is either
//! observed with a non-negative value (zeros included) or recorded as
//! missing; the two states are never conflated.

mod country;
mod groups;
mod ingest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use country::{CountryCode, InvalidCountryCode, SINGAPORE};
pub use groups::{assign_groups, read_membership, Bucket, ExcludedBucket, Group, GroupAssignment, MembershipEntry};
pub use ingest::{ingest_panel, ingest_panel_with_report, ColumnMap, IngestOptions, IngestReport, NegativePolicy};

/// Reference scale of the full CPIS-based sample.
pub const FULL_SCALE_REPORTERS: usize = 86;
pub const FULL_SCALE_COUNTERPARTIES: usize = 241;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PanelError {
    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: usize, key: ObsKey },
    #[error("line {line}: negative value {value}")]
    NegativeValue { line: usize, value: f64 },
    #[error("line {line}: unknown country {code:?}")]
    UnknownCountry { line: usize, code: String },
    #[error("line {line}: malformed row ({reason})")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: reporter equals counterparty")]
    SelfPair { line: usize },
    #[error("required column {0:?} not found in header")]
    MissingColumn(String),
    #[error("universe lacks {missing} panel key(s), e.g. {example}")]
    UniverseSmallerThanPanel { missing: usize, example: ObsKey },
    #[error("reporter {0} has no group assignment")]
    UnassignedReporter(CountryCode),
    #[error("line {line}: unknown group label {label:?}")]
    UnknownGroup { line: usize, label: String },
    #[error("line {line}: country {code} assigned twice")]
    DuplicateMembership { line: usize, code: CountryCode },
    #[error("read error: {0}")]
    Read(String),
}

impl From<csv::Error> for PanelError {
    fn from(e: csv::Error) -> Self {
        PanelError::Read(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Instrument {
    Debt,
    Equity,
    /// Debt plus equity as published by CPIS; never used for estimation.
    Total,
}

impl Instrument {
    pub fn as_str(self) -> &'static str {
        match self {
            Instrument::Debt => "debt",
            Instrument::Equity => "equity",
            Instrument::Total => "total",
        }
    }
}

impl FromStr for Instrument {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "debt" => Ok(Instrument::Debt),
            "equity" => Ok(Instrument::Equity),
            "total" => Ok(Instrument::Total),
            other => Err(format!("unknown instrument {other:?}")),
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which data source a panel was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    ResidencyRestated,
    NationalityRestated,
    ResidencyCpis,
}

impl Basis {
    pub fn as_str(self) -> &'static str {
        match self {
            Basis::ResidencyRestated => "residency",
            Basis::NationalityRestated => "nationality",
            Basis::ResidencyCpis => "cpis",
        }
    }
}

impl FromStr for Basis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residency" => Ok(Basis::ResidencyRestated),
            "nationality" => Ok(Basis::NationalityRestated),
            "cpis" => Ok(Basis::ResidencyCpis),
            other => Err(format!("unknown basis {other:?}")),
        }
    }
}

/// Inclusive range of sample years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub first: i32,
    pub last: i32,
}

impl SampleWindow {
    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }
}

impl Default for SampleWindow {
    fn default() -> Self {
        SampleWindow { first: 2007, last: 2017 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObsKey {
    pub reporter: CountryCode,
    pub counterparty: CountryCode,
    pub year: i32,
    pub instrument: Instrument,
}

impl ObsKey {
    pub fn new(reporter: CountryCode, counterparty: CountryCode, year: i32, instrument: Instrument) -> Self {
        ObsKey { reporter, counterparty, year, instrument }
    }

    pub fn pair(&self) -> (CountryCode, CountryCode) {
        (self.reporter, self.counterparty)
    }
}

impl fmt::Display for ObsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.reporter, self.counterparty, self.year, self.instrument)
    }
}

/// One holding in USD million.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub key: ObsKey,
    pub value: f64,
}

impl Observation {
    pub fn new(reporter: &str, counterparty: &str, year: i32, instrument: Instrument, value: f64) -> Self {
        Observation {
            key: ObsKey::new(CountryCode::lit(reporter), CountryCode::lit(counterparty), year, instrument),
            value,
        }
    }
}

/// Validated, deduplicated holdings of a single basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    basis: Basis,
    values: BTreeMap<ObsKey, f64>,
    missing: BTreeSet<ObsKey>,
}

impl Panel {
    /// Validates and collects observations. Row numbers in errors are
    /// 1-based positions in `observations` followed by `missing`.
    pub fn new(
        basis: Basis,
        observations: impl IntoIterator<Item = Observation>,
        missing: impl IntoIterator<Item = ObsKey>,
    ) -> Result<Self, PanelError> {
        let mut panel = Panel { basis, values: BTreeMap::new(), missing: BTreeSet::new() };
        let mut row = 0;
        for obs in observations {
            row += 1;
            panel.insert_value(row, obs.key, obs.value)?;
        }
        for key in missing {
            row += 1;
            panel.insert_missing(row, key)?;
        }
        Ok(panel)
    }

    pub(crate) fn empty(basis: Basis) -> Self {
        Panel { basis, values: BTreeMap::new(), missing: BTreeSet::new() }
    }

    pub(crate) fn insert_value(&mut self, line: usize, key: ObsKey, value: f64) -> Result<(), PanelError> {
        if key.reporter == key.counterparty {
            return Err(PanelError::SelfPair { line });
        }
        if !value.is_finite() {
            return Err(PanelError::MalformedRow { line, reason: format!("non-finite value {value}") });
        }
        if value < 0.0 {
            return Err(PanelError::NegativeValue { line, value });
        }
        if self.missing.contains(&key) || self.values.insert(key, value).is_some() {
            return Err(PanelError::DuplicateKey { line, key });
        }
        Ok(())
    }

    pub(crate) fn insert_missing(&mut self, line: usize, key: ObsKey) -> Result<(), PanelError> {
        if key.reporter == key.counterparty {
            return Err(PanelError::SelfPair { line });
        }
        if self.values.contains_key(&key) || !self.missing.insert(key) {
            return Err(PanelError::DuplicateKey { line, key });
        }
        Ok(())
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// Number of observed (non-missing) keys.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_len(&self) -> usize {
        self.missing.len()
    }

    /// Observed value, `None` for missing or absent keys.
    pub fn value(&self, key: &ObsKey) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn is_missing(&self, key: &ObsKey) -> bool {
        self.missing.contains(key)
    }

    /// Observations in key order.
    pub fn iter(&self) -> impl Iterator<Item = Observation> + '_ {
        self.values.iter().map(|(&key, &value)| Observation { key, value })
    }

    pub fn missing_keys(&self) -> impl Iterator<Item = &ObsKey> + '_ {
        self.missing.iter()
    }

    /// Observed and missing keys.
    pub fn keys(&self) -> impl Iterator<Item = &ObsKey> + '_ {
        self.values.keys().chain(self.missing.iter())
    }

    pub fn reporters(&self) -> BTreeSet<CountryCode> {
        self.keys().map(|k| k.reporter).collect()
    }

    pub fn counterparties(&self) -> BTreeSet<CountryCode> {
        self.keys().map(|k| k.counterparty).collect()
    }

    pub fn countries(&self) -> BTreeSet<CountryCode> {
        self.keys().flat_map(|k| [k.reporter, k.counterparty]).collect()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.keys().map(|k| k.year).collect()
    }

    /// Sub-panel of keys satisfying `keep`, missing entries included.
    pub fn filter(&self, mut keep: impl FnMut(&ObsKey) -> bool) -> Panel {
        Panel {
            basis: self.basis,
            values: self.values.iter().filter(|(k, _)| keep(k)).map(|(&k, &v)| (k, v)).collect(),
            missing: self.missing.iter().filter(|k| keep(k)).copied().collect(),
        }
    }

    pub fn with_basis(mut self, basis: Basis) -> Panel {
        self.basis = basis;
        self
    }

    /// Messages for panels that exceed the full-scale country counts.
    pub fn scale_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (r, c) = (self.reporters().len(), self.counterparties().len());
        if r > FULL_SCALE_REPORTERS {
            out.push(format!("{r} reporters exceeds the full-scale sample of {FULL_SCALE_REPORTERS}"));
        }
        if c > FULL_SCALE_COUNTERPARTIES {
            out.push(format!("{c} counterparties exceeds the full-scale sample of {FULL_SCALE_COUNTERPARTIES}"));
        }
        out
    }

    /// Reporter × counterparty × year grid for one instrument over the
    /// countries and years present, self pairs excluded.
    pub fn full_universe(&self, instrument: Instrument) -> BTreeSet<ObsKey> {
        let counterparties = self.counterparties();
        let years = self.years();
        let mut out = BTreeSet::new();
        for reporter in self.reporters() {
            for &counterparty in counterparties.iter().filter(|&&c| c != reporter) {
                for &year in &years {
                    out.insert(ObsKey::new(reporter, counterparty, year, instrument));
                }
            }
        }
        out
    }

    /// Writes the canonical `year,reporter,counterparty,instrument,value_usd_mn`
    /// layout in key order; missing values are blank cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PanelError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(ColumnMap::default().names())?;
        let mut rows: Vec<(&ObsKey, Option<f64>)> = self.values.iter().map(|(k, &v)| (k, Some(v))).collect();
        rows.extend(self.missing.iter().map(|k| (k, None)));
        rows.sort_by_key(|(k, _)| **k);
        for (key, value) in rows {
            out.write_record([
                key.year.to_string(),
                key.reporter.to_string(),
                key.counterparty.to_string(),
                key.instrument.to_string(),
                value.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(|e| PanelError::Read(e.to_string()))?;
        Ok(())
    }
}

/// How recorded-missing keys are treated by [`merge_zero_fill`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MissingPolicy {
    #[default]
    KeepMissing,
    MissingAsZero,
}

/// Adds every universe key absent from `panel` with value zero.
pub fn merge_zero_fill(panel: &Panel, universe: &BTreeSet<ObsKey>, policy: MissingPolicy) -> Result<Panel, PanelError> {
    let outside: Vec<&ObsKey> = panel.keys().filter(|k| !universe.contains(k)).collect();
    if let Some(&&example) = outside.first() {
        return Err(PanelError::UniverseSmallerThanPanel { missing: outside.len(), example });
    }
    let mut out = panel.clone();
    for key in universe {
        if out.values.contains_key(key) {
            continue;
        }
        if out.missing.contains(key) {
            if policy == MissingPolicy::MissingAsZero {
                out.missing.remove(key);
                out.values.insert(*key, 0.0);
            }
            continue;
        }
        out.values.insert(*key, 0.0);
    }
    Ok(out)
}
