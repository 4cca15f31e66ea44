use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{Basis, CountryCode, Instrument, ObsKey, Panel, PanelError, SampleWindow};

/// Header names of the required columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub year: String,
    pub reporter: String,
    pub counterparty: String,
    pub instrument: String,
    pub value: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            year: "year".into(),
            reporter: "reporter".into(),
            counterparty: "counterparty".into(),
            instrument: "instrument".into(),
            value: "value_usd_mn".into(),
        }
    }
}

impl ColumnMap {
    pub fn names(&self) -> [&str; 5] {
        [&self.year, &self.reporter, &self.counterparty, &self.instrument, &self.value]
    }
}

/// Treatment of negative value cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativePolicy {
    Error,
    /// Raw CPIS uses negative placeholders for suppressed cells.
    Missing,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub delimiter: u8,
    pub window: SampleWindow,
    pub negative_policy: NegativePolicy,
    /// When set, codes outside this list are rejected.
    pub known_countries: Option<BTreeSet<CountryCode>>,
    /// Cell contents marking confidential values, recorded as missing.
    pub suppressed_markers: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            delimiter: b',',
            window: SampleWindow::default(),
            negative_policy: NegativePolicy::Error,
            known_countries: None,
            suppressed_markers: vec!["C".into()],
        }
    }
}

impl IngestOptions {
    /// Defaults with the negative-placeholder convention of raw CPIS when
    /// `basis` is the original survey.
    pub fn for_basis(basis: Basis) -> Self {
        let negative_policy = match basis {
            Basis::ResidencyCpis => NegativePolicy::Missing,
            _ => NegativePolicy::Error,
        };
        IngestOptions { negative_policy, ..Default::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub observed: usize,
    /// Blank value cells.
    pub missing: usize,
    /// Confidential markers and negative placeholders, also recorded missing.
    pub suppressed: usize,
    pub out_of_window: usize,
}

/// Reads a delimited holdings table with default options.
pub fn ingest_panel<R: Read>(source: R, basis: Basis, schema: &ColumnMap) -> Result<Panel, PanelError> {
    ingest_panel_with_report(source, basis, schema, &IngestOptions::default()).map(|(p, _)| p)
}

pub fn ingest_panel_with_report<R: Read>(
    source: R,
    basis: Basis,
    schema: &ColumnMap,
    options: &IngestOptions,
) -> Result<(Panel, IngestReport), PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let cols = [
        position(&schema.year)?,
        position(&schema.reporter)?,
        position(&schema.counterparty)?,
        position(&schema.instrument)?,
        position(&schema.value)?,
    ];

    let mut panel = Panel::empty(basis);
    let mut report = IngestReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line() as usize;
        if !reader.read_record(&mut record)? {
            break;
        }
        let line = record.position().map_or(line, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(PanelError::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        report.rows += 1;
        let field = |i: usize| record.get(cols[i]).unwrap_or("").trim();

        let year: i32 = field(0)
            .parse()
            .map_err(|_| PanelError::MalformedRow { line, reason: format!("bad year {:?}", field(0)) })?;
        let reporter = parse_country(field(1), line, options)?;
        let counterparty = parse_country(field(2), line, options)?;
        let instrument: Instrument = field(3).parse().map_err(|reason| PanelError::MalformedRow { line, reason })?;
        if !options.window.contains(year) {
            report.out_of_window += 1;
            continue;
        }
        let key = ObsKey::new(reporter, counterparty, year, instrument);

        let raw = field(4);
        if raw.is_empty() {
            report.missing += 1;
            panel.insert_missing(line, key)?;
            continue;
        }
        if options.suppressed_markers.iter().any(|m| m == raw) {
            report.suppressed += 1;
            panel.insert_missing(line, key)?;
            continue;
        }
        let value: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| PanelError::MalformedRow { line, reason: format!("bad value {raw:?}") })?;
        if value < 0.0 && options.negative_policy == NegativePolicy::Missing {
            report.suppressed += 1;
            panel.insert_missing(line, key)?;
            continue;
        }
        panel.insert_value(line, key, value)?;
        report.observed += 1;
    }
    if report.suppressed > 0 {
        log::info!("{} suppressed cell(s) recorded as missing", report.suppressed);
    }
    if report.out_of_window > 0 {
        log::info!("{} row(s) outside {}-{} skipped", report.out_of_window, options.window.first, options.window.last);
    }
    for warning in panel.scale_warnings() {
        log::warn!("{warning}");
    }
    Ok((panel, report))
}

fn parse_country(raw: &str, line: usize, options: &IngestOptions) -> Result<CountryCode, PanelError> {
    let unknown = || PanelError::UnknownCountry { line, code: raw.to_string() };
    let code = CountryCode::new(raw).map_err(|_| unknown())?;
    match &options.known_countries {
        Some(known) if !known.contains(&code) => Err(unknown()),
        _ => Ok(code),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str) -> Result<Panel, PanelError> {
        ingest_panel(text.as_bytes(), Basis::NationalityRestated, &ColumnMap::default())
    }

    #[test]
    fn single_row() {
        let p = ingest("year,reporter,counterparty,instrument,value_usd_mn\n2017,SGP,USA,debt,120000.0\n").unwrap();
        assert_eq!(p.len(), 1);
        let key = ObsKey::new(CountryCode::lit("SGP"), CountryCode::lit("USA"), 2017, Instrument::Debt);
        assert_eq!(p.value(&key), Some(120000.0));
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = ingest(
            "year,reporter,counterparty,instrument,value_usd_mn\n2017,SGP,USA,Debt,1\n2017,SGP,USA,Debt,2\n",
        )
        .unwrap_err();
        assert!(matches!(err, PanelError::DuplicateKey { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn error_paths_carry_line_numbers() {
        let h = "year,reporter,counterparty,instrument,value_usd_mn\n";
        assert!(matches!(ingest(&format!("{h}2017,SGP,USA,Debt,-4\n")), Err(PanelError::NegativeValue { line: 2, .. })));
        assert!(matches!(ingest(&format!("{h}2017,SG1,USA,Debt,4\n")), Err(PanelError::UnknownCountry { line: 2, .. })));
        assert!(matches!(ingest(&format!("{h}2017,SGP,USA,Debt,1,000\n")), Err(PanelError::MalformedRow { line: 2, .. })));
        assert!(matches!(ingest(&format!("{h}2017,SGP,USA,Bonds,4\n")), Err(PanelError::MalformedRow { line: 2, .. })));
        assert!(matches!(ingest(&format!("{h}20x7,SGP,USA,Debt,4\n")), Err(PanelError::MalformedRow { line: 2, .. })));
        assert!(matches!(ingest("year,reporter,instrument,value_usd_mn\n"), Err(PanelError::MissingColumn(c)) if c == "counterparty"));
    }

    #[test]
    fn suppressed_and_placeholder_cells_become_missing() {
        let text = "year,reporter,counterparty,instrument,value_usd_mn\n2017,SGP,USA,Debt,C\n2017,SGP,JPN,Debt,-1\n2017,SGP,CHN,Debt,3\n";
        let options = IngestOptions::for_basis(Basis::ResidencyCpis);
        let (p, report) = ingest_panel_with_report(text.as_bytes(), Basis::ResidencyCpis, &ColumnMap::default(), &options).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.missing_len(), 2);
        assert_eq!(report.suppressed, 2);
    }

    #[test]
    fn custom_schema_delimiter_and_window() {
        let text = "t;src;dst;kind;amount\n2006;SGP;USA;debt;1\n2010;SGP;USA;equity;2.5\n";
        let schema = ColumnMap {
            year: "t".into(),
            reporter: "src".into(),
            counterparty: "dst".into(),
            instrument: "kind".into(),
            value: "amount".into(),
        };
        let options = IngestOptions { delimiter: b';', ..Default::default() };
        let (p, report) = ingest_panel_with_report(text.as_bytes(), Basis::ResidencyRestated, &schema, &options).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(report.out_of_window, 1);
        assert_eq!(p.basis(), Basis::ResidencyRestated);
    }

    #[test]
    fn known_country_list_is_enforced() {
        let options = IngestOptions {
            known_countries: Some([CountryCode::lit("SGP")].into()),
            ..Default::default()
        };
        let text = "year,reporter,counterparty,instrument,value_usd_mn\n2017,SGP,XXX,Debt,1\n";
        let err = ingest_panel_with_report(text.as_bytes(), Basis::ResidencyCpis, &ColumnMap::default(), &options).unwrap_err();
        assert_eq!(err, PanelError::UnknownCountry { line: 2, code: "XXX".into() });
    }
}
