//! Residency versus nationality analytics: allocation shares, top
//! destinations, restatement differences and haven pass-through arithmetic.
//!
//! All sums are exact [`Amount`]s. `Instrument::Total` selects debt plus
//! equity; stored `Total` rows are not used by these functions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::panel::{CountryCode, Group, GroupAssignment, Instrument, ObsKey, Panel};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RestatementError {
    #[error("year {0} is absent from the {1} panel")]
    YearAbsent(i32, &'static str),
    #[error(transparent)]
    Write(#[from] WriteError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("write error: {0}")]
pub struct WriteError(String);

impl From<csv::Error> for WriteError {
    fn from(e: csv::Error) -> Self {
        WriteError(e.to_string())
    }
}

impl From<std::io::Error> for WriteError {
    fn from(e: std::io::Error) -> Self {
        WriteError(e.to_string())
    }
}

fn in_slice(key: &ObsKey, year: i32, instrument: Instrument) -> bool {
    key.year == year
        && match instrument {
            Instrument::Total => key.instrument != Instrument::Total,
            i => key.instrument == i,
        }
}

/// Observed values of a slice as exact amounts; missing keys are absent.
fn slice_amounts(panel: &Panel, year: i32, instrument: Instrument) -> impl Iterator<Item = (ObsKey, Amount)> + '_ {
    panel
        .iter()
        .filter(move |o| in_slice(&o.key, year, instrument))
        .map(|o| (o.key, Amount::from_usd_mn(o.value)))
}

fn amount_cell(a: Amount) -> String {
    a.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub reporter: CountryCode,
    pub year: i32,
    pub instrument: Instrument,
    pub total: Amount,
    pub by_group: BTreeMap<Group, Amount>,
}

impl AllocationRow {
    /// Share of the reporter total going to `group`; `None` when the total
    /// is zero.
    pub fn share(&self, group: Group) -> Option<f64> {
        self.by_group.get(&group).copied().unwrap_or_default().ratio(self.total)
    }

    pub fn is_flagged(&self) -> bool {
        self.total.is_zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationTable {
    pub rows: Vec<AllocationRow>,
}

impl AllocationTable {
    pub fn get(&self, reporter: CountryCode) -> Option<&AllocationRow> {
        self.rows.iter().find(|r| r.reporter == reporter)
    }

    /// `reporter,year,share_oecd,share_asean,share_row`, blank shares for
    /// zero-total reporters.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), WriteError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["reporter", "year", "share_oecd", "share_asean", "share_row"])?;
        for row in &self.rows {
            let cell = |g| row.share(g).map(|s| format!("{s:.12}")).unwrap_or_default();
            out.write_record([
                row.reporter.to_string(),
                row.year.to_string(),
                cell(Group::Oecd),
                cell(Group::Asean),
                cell(Group::Row),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shares of each reporter's holdings by counterparty membership group.
/// Reporters with only zero or missing holdings in the slice are flagged.
pub fn allocation_shares(panel: &Panel, groups: &GroupAssignment, year: i32, instrument: Instrument) -> AllocationTable {
    let mut rows: BTreeMap<CountryCode, AllocationRow> = BTreeMap::new();
    for key in panel.keys().filter(|k| in_slice(k, year, instrument)) {
        rows.entry(key.reporter).or_insert_with(|| AllocationRow {
            reporter: key.reporter,
            year,
            instrument,
            total: Amount::ZERO,
            by_group: Group::ALL.iter().map(|&g| (g, Amount::ZERO)).collect(),
        });
    }
    for (key, amount) in slice_amounts(panel, year, instrument) {
        let row = rows.get_mut(&key.reporter).expect("row created from keys");
        *row.by_group.get_mut(&groups.membership_of(key.counterparty)).expect("all groups present") += amount;
        row.total += amount;
    }
    AllocationTable { rows: rows.into_values().collect() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Destination {
    pub counterparty: CountryCode,
    pub value: Amount,
    /// Share of the slice total.
    pub share: f64,
}

/// Counterparties ranked by holdings summed over reporters (all, or those
/// in `reporters`), descending, ties by code. Zero totals are not ranked.
pub fn top_destinations(
    panel: &Panel,
    year: i32,
    instrument: Instrument,
    k: usize,
    reporters: Option<&BTreeSet<CountryCode>>,
) -> Vec<Destination> {
    let mut sums: BTreeMap<CountryCode, Amount> = BTreeMap::new();
    let mut total = Amount::ZERO;
    for (key, amount) in slice_amounts(panel, year, instrument) {
        if reporters.is_some_and(|r| !r.contains(&key.reporter)) {
            continue;
        }
        *sums.entry(key.counterparty).or_default() += amount;
        total += amount;
    }
    let mut ranked: Vec<(CountryCode, Amount)> = sums.into_iter().filter(|(_, v)| !v.is_zero()).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(k)
        .map(|(counterparty, value)| Destination { counterparty, value, share: value.ratio(total).unwrap_or(0.0) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: CountryCode,
    pub destination: CountryCode,
    pub value: Amount,
}

/// Reporter-to-destination edges into the given destinations, positive
/// values only, in `(source, destination)` order.
pub fn destination_edges(
    panel: &Panel,
    year: i32,
    instrument: Instrument,
    destinations: &[Destination],
    reporters: Option<&BTreeSet<CountryCode>>,
) -> Vec<Edge> {
    let wanted: BTreeSet<CountryCode> = destinations.iter().map(|d| d.counterparty).collect();
    let mut sums: BTreeMap<(CountryCode, CountryCode), Amount> = BTreeMap::new();
    for (key, amount) in slice_amounts(panel, year, instrument) {
        if wanted.contains(&key.counterparty) && reporters.is_none_or(|r| r.contains(&key.reporter)) {
            *sums.entry(key.pair()).or_default() += amount;
        }
    }
    sums.into_iter()
        .filter(|(_, v)| !v.is_zero())
        .map(|((source, destination), value)| Edge { source, destination, value })
        .collect()
}

/// `source,destination,value_usd_mn`.
pub fn write_edges_csv<W: Write>(edges: &[Edge], w: W) -> Result<(), WriteError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["source", "destination", "value_usd_mn"])?;
    for e in edges {
        out.write_record([e.source.to_string(), e.destination.to_string(), amount_cell(e.value)])?;
    }
    out.flush()?;
    Ok(())
}

/// `rank,counterparty,value_usd_mn,share`.
pub fn write_destinations_csv<W: Write>(ranking: &[Destination], w: W) -> Result<(), WriteError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "counterparty", "value_usd_mn", "share"])?;
    for (i, d) in ranking.iter().enumerate() {
        out.write_record([(i + 1).to_string(), d.counterparty.to_string(), amount_cell(d.value), format!("{:.12}", d.share)])?;
    }
    out.flush()?;
    Ok(())
}

/// Which side of a pair a ranking is grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DiffAxis {
    /// Per reporter, ranking counterparties.
    #[default]
    BySource,
    /// Per counterparty, ranking reporters.
    ByDestination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEntry {
    /// The ranked country: a counterparty by source, a reporter by
    /// destination.
    pub other: CountryCode,
    pub residency: Amount,
    pub nationality: Amount,
    pub diff: Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDiff {
    pub entity: CountryCode,
    pub residency_total: Amount,
    pub nationality_total: Amount,
    /// Every key of the union, in code order.
    pub all: Vec<DiffEntry>,
    /// Non-zero diffs, descending by magnitude, ties by code.
    pub top: Vec<DiffEntry>,
}

impl EntityDiff {
    pub fn diff_of(&self, other: CountryCode) -> Amount {
        self.all.iter().find(|e| e.other == other).map_or(Amount::ZERO, |e| e.diff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRanking {
    pub year: i32,
    pub instrument: Instrument,
    pub axis: DiffAxis,
    pub k: usize,
    pub entities: BTreeMap<CountryCode, EntityDiff>,
}

impl DiffRanking {
    pub fn get(&self, entity: CountryCode) -> Option<&EntityDiff> {
        self.entities.get(&entity)
    }

    /// `reporter,counterparty,diff_usd_mn` for the top entries.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), WriteError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["reporter", "counterparty", "diff_usd_mn"])?;
        for (entity, d) in &self.entities {
            for e in &d.top {
                let (r, c) = match self.axis {
                    DiffAxis::BySource => (*entity, e.other),
                    DiffAxis::ByDestination => (e.other, *entity),
                };
                out.write_record([r.to_string(), c.to_string(), amount_cell(e.diff)])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Nationality minus residency over the union of keys of one slice, with
/// absent or missing values counted as zero.
pub fn restatement_diff(
    residency: &Panel,
    nationality: &Panel,
    year: i32,
    instrument: Instrument,
    k: usize,
    axis: DiffAxis,
) -> Result<DiffRanking, RestatementError> {
    if !residency.years().contains(&year) {
        return Err(RestatementError::YearAbsent(year, "residency"));
    }
    if !nationality.years().contains(&year) {
        return Err(RestatementError::YearAbsent(year, "nationality"));
    }
    let orient = |key: &ObsKey| match axis {
        DiffAxis::BySource => (key.reporter, key.counterparty),
        DiffAxis::ByDestination => (key.counterparty, key.reporter),
    };
    let mut cells: BTreeMap<CountryCode, BTreeMap<CountryCode, (Amount, Amount)>> = BTreeMap::new();
    for (key, a) in slice_amounts(residency, year, instrument) {
        let (e, o) = orient(&key);
        cells.entry(e).or_default().entry(o).or_default().0 += a;
    }
    for (key, a) in slice_amounts(nationality, year, instrument) {
        let (e, o) = orient(&key);
        cells.entry(e).or_default().entry(o).or_default().1 += a;
    }
    let entities = cells
        .into_iter()
        .map(|(entity, row)| {
            let all: Vec<DiffEntry> = row
                .into_iter()
                .map(|(other, (r, n))| DiffEntry { other, residency: r, nationality: n, diff: n - r })
                .collect();
            let mut top: Vec<DiffEntry> = all.iter().filter(|e| !e.diff.is_zero()).copied().collect();
            top.sort_by(|a, b| b.diff.abs().cmp(&a.diff.abs()).then(a.other.cmp(&b.other)));
            top.truncate(k);
            let diff = EntityDiff {
                entity,
                residency_total: all.iter().map(|e| e.residency).sum(),
                nationality_total: all.iter().map(|e| e.nationality).sum(),
                all,
                top,
            };
            (entity, diff)
        })
        .collect();
    Ok(DiffRanking { year, instrument, axis, k, entities })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAttribution {
    pub target: CountryCode,
    /// Falls in each hypothesised haven, as positive amounts.
    pub haven_drops: Vec<(CountryCode, Amount)>,
    pub target_rise: Amount,
    /// `min(Σ drops, rise)`.
    pub attributed: Amount,
    /// `rise − Σ drops`.
    pub residual: Amount,
    pub trail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassthroughEstimate {
    pub label: String,
    pub entity: CountryCode,
    pub targets: Vec<TargetAttribution>,
}

fn bn(a: Amount) -> String {
    let s = format!("{:.6}", a.usd_bn());
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Heuristic attribution of drops in haven positions to rises in target
/// positions, per target, for one entity of a diff ranking.
pub fn passthrough_estimate(diffs: &EntityDiff, hypothesis: &[(CountryCode, CountryCode)]) -> PassthroughEstimate {
    // havens keep their hypothesis order
    let mut by_target: BTreeMap<CountryCode, Vec<CountryCode>> = BTreeMap::new();
    for &(haven, target) in hypothesis {
        let havens = by_target.entry(target).or_default();
        if !havens.contains(&haven) {
            havens.push(haven);
        }
    }
    let targets = by_target
        .into_iter()
        .map(|(target, havens)| {
            let haven_drops: Vec<(CountryCode, Amount)> = havens
                .into_iter()
                .map(|h| (h, (-diffs.diff_of(h)).max(Amount::ZERO)))
                .collect();
            let drops: Amount = haven_drops.iter().map(|(_, a)| *a).sum();
            let target_rise = diffs.diff_of(target).max(Amount::ZERO);
            let attributed = drops.min(target_rise);
            let residual = target_rise - drops;
            let mut trail = bn(target_rise);
            for (_, d) in &haven_drops {
                trail.push('-');
                trail.push_str(&bn(*d));
            }
            trail.push('=');
            trail.push_str(&bn(residual));
            TargetAttribution { target, haven_drops, target_rise, attributed, residual, trail: format!("{trail} (USD bn)") }
        })
        .collect();
    PassthroughEstimate { label: "heuristic".into(), entity: diffs.entity, targets }
}
