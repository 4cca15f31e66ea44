//! Great-circle distances between countries' largest cities and the
//! fixed-width distance histogram of holdings.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::panel::{CountryCode, Group, GroupAssignment, Instrument, Panel};
use crate::scalar::Scalar;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Upper bound accepted for any tabulated distance.
pub const MAX_DISTANCE_KM: f64 = 20038.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside (-180, 180]")]
    Longitude(f64),
    #[error("no city coordinates for {0}")]
    MissingCity(CountryCode),
    #[error("no distance for pair ({0}, {1})")]
    MissingDistance(CountryCode, CountryCode),
    #[error("distance {km} km for ({a}, {b}) outside (0, {MAX_DISTANCE_KM}]")]
    InvalidDistance { a: CountryCode, b: CountryCode, km: f64 },
    #[error("conflicting distances for ({0}, {1})")]
    AsymmetricDistance(CountryCode, CountryCode),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("bin width must be positive and bin count at least 1")]
    InvalidBins,
    #[error("read error: {0}")]
    Read(String),
}

impl From<csv::Error> for GeoError {
    fn from(e: csv::Error) -> Self {
        GeoError::Read(e.to_string())
    }
}

/// Point on the sphere in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint<T> {
    lat: T,
    lon: T,
}

impl<T: Scalar> GeoPoint<T> {
    /// Validates ranges; a longitude of exactly -180 is mapped to 180.
    pub fn new(lat: T, lon: T) -> Result<Self, GeoError> {
        let ninety = T::of(90.0);
        let half_turn = T::of(180.0);
        if !(lat >= -ninety && lat <= ninety) {
            return Err(GeoError::Latitude(lat.as_f64()));
        }
        if !(lon >= -half_turn && lon <= half_turn) {
            return Err(GeoError::Longitude(lon.as_f64()));
        }
        let lon = if lon == -half_turn { half_turn } else { lon };
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> T {
        self.lat
    }

    pub fn lon(&self) -> T {
        self.lon
    }
}

/// Haversine distance on a sphere of radius [`EARTH_RADIUS_KM`].
///
/// Symmetric bit-for-bit: every term is invariant under swapping the points.
pub fn haversine_km<T: Scalar>(a: GeoPoint<T>, b: GeoPoint<T>) -> T {
    let two = T::of(2.0);
    let (phi_a, phi_b) = (a.lat.to_radians(), b.lat.to_radians());
    let half_dphi = (phi_b - phi_a) / two;
    let half_dlambda = (b.lon - a.lon).to_radians() / two;
    let s = half_dphi.sin().powi(2) + phi_a.cos() * phi_b.cos() * half_dlambda.sin().powi(2);
    two * T::of(EARTH_RADIUS_KM) * s.min(T::one()).sqrt().asin()
}

/// Symmetric table of pairwise distances in kilometres.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    km: BTreeMap<(CountryCode, CountryCode), f64>,
}

fn ordered(a: CountryCode, b: CountryCode) -> (CountryCode, CountryCode) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl DistanceTable {
    /// Inserts a distance for an unordered pair; a differing value for an
    /// existing pair is an error.
    pub fn insert(&mut self, a: CountryCode, b: CountryCode, km: f64) -> Result<(), GeoError> {
        if a == b {
            return Ok(());
        }
        if !(km > 0.0 && km <= MAX_DISTANCE_KM) {
            return Err(GeoError::InvalidDistance { a, b, km });
        }
        match self.km.insert(ordered(a, b), km) {
            Some(prev) if prev != km => Err(GeoError::AsymmetricDistance(a, b)),
            _ => Ok(()),
        }
    }

    pub fn get(&self, a: CountryCode, b: CountryCode) -> Option<f64> {
        self.km.get(&ordered(a, b)).copied()
    }

    pub fn require(&self, a: CountryCode, b: CountryCode) -> Result<f64, GeoError> {
        self.get(a, b).ok_or(GeoError::MissingDistance(a, b))
    }

    /// Number of unordered pairs.
    pub fn len(&self) -> usize {
        self.km.len()
    }

    pub fn is_empty(&self) -> bool {
        self.km.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CountryCode, CountryCode, f64)> + '_ {
        self.km.iter().map(|(&(a, b), &d)| (a, b, d))
    }

    /// Every entry multiplied by `factor`, bounds unchecked.
    pub fn scaled(&self, factor: f64) -> DistanceTable {
        DistanceTable { km: self.km.iter().map(|(&k, &d)| (k, d * factor)).collect() }
    }

    /// Writes `reporter,counterparty,dist_km` with both orientations of every pair.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), GeoError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["reporter", "counterparty", "dist_km"])?;
        let mut rows: Vec<_> = self.iter().flat_map(|(a, b, d)| [(a, b, d), (b, a, d)]).collect();
        rows.sort_by_key(|x| (x.0, x.1));
        for (a, b, d) in rows {
            out.write_record([a.to_string(), b.to_string(), d.to_string()])?;
        }
        out.flush().map_err(|e| GeoError::Read(e.to_string()))
    }
}

/// Pairwise distances between all listed cities.
pub fn build_distance_table(cities: &BTreeMap<CountryCode, GeoPoint<f64>>) -> Result<DistanceTable, GeoError> {
    let codes: Vec<_> = cities.keys().copied().collect();
    let mut table = DistanceTable::default();
    for (i, &a) in codes.iter().enumerate() {
        for &b in &codes[i + 1..] {
            table.insert(a, b, haversine_km(cities[&a], cities[&b]))?;
        }
    }
    Ok(table)
}

/// Distance table restricted to the countries of `panel`; every one of them
/// must have coordinates.
pub fn build_panel_distances(
    cities: &BTreeMap<CountryCode, GeoPoint<f64>>,
    panel: &Panel,
) -> Result<DistanceTable, GeoError> {
    let countries = panel.countries();
    if let Some(&code) = countries.iter().find(|c| !cities.contains_key(c)) {
        return Err(GeoError::MissingCity(code));
    }
    let subset = countries.iter().map(|c| (*c, cities[c])).collect();
    build_distance_table(&subset)
}

/// Reads a `country,lat,lon` coordinate file.
pub fn read_city_file<R: Read>(source: R) -> Result<BTreeMap<CountryCode, GeoPoint<f64>>, GeoError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let cols = find_columns(&headers, &["country", "lat", "lon"])?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let code = parse_code(&record, cols[0], line)?;
        let lat = parse_f64(&record, cols[1], line)?;
        let lon = parse_f64(&record, cols[2], line)?;
        let point = GeoPoint::new(lat, lon).map_err(|e| GeoError::MalformedRow { line, reason: e.to_string() })?;
        if out.insert(code, point).is_some() {
            return Err(GeoError::MalformedRow { line, reason: format!("duplicate city for {code}") });
        }
    }
    Ok(out)
}

/// Reads a precomputed `reporter,counterparty,dist_km` file verbatim.
pub fn read_distance_file<R: Read>(source: R) -> Result<DistanceTable, GeoError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let cols = find_columns(&headers, &["reporter", "counterparty", "dist_km"])?;
    let mut table = DistanceTable::default();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let a = parse_code(&record, cols[0], line)?;
        let b = parse_code(&record, cols[1], line)?;
        let km = parse_f64(&record, cols[2], line)?;
        table.insert(a, b, km)?;
    }
    Ok(table)
}

fn find_columns<const N: usize>(headers: &csv::StringRecord, names: &[&str; N]) -> Result<[usize; N], GeoError> {
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| GeoError::MalformedRow { line: 1, reason: format!("missing column {name:?}") })?;
    }
    Ok(out)
}

fn parse_code(record: &csv::StringRecord, col: usize, line: usize) -> Result<CountryCode, GeoError> {
    let raw = record.get(col).unwrap_or("").trim();
    CountryCode::new(raw).map_err(|e| GeoError::MalformedRow { line, reason: e.to_string() })
}

fn parse_f64(record: &csv::StringRecord, col: usize, line: usize) -> Result<f64, GeoError> {
    let raw = record.get(col).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| GeoError::MalformedRow { line, reason: format!("bad number {raw:?}") })
}

/// Fixed-width distance bins: `[b·width, (b+1)·width)`, with everything
/// beyond the last edge clamped into the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub width_km: f64,
    pub n_bins: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec { width_km: 2000.0, n_bins: 10 }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<(), GeoError> {
        if self.width_km > 0.0 && self.width_km.is_finite() && self.n_bins >= 1 {
            Ok(())
        } else {
            Err(GeoError::InvalidBins)
        }
    }

    pub fn index(&self, km: f64) -> usize {
        let raw = (km / self.width_km).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.n_bins - 1)
        }
    }

    /// Lower and upper edge of bin `b`; the last bin is open-ended.
    pub fn edges(&self, b: usize) -> (f64, Option<f64>) {
        let lo = b as f64 * self.width_km;
        let hi = (b + 1 < self.n_bins).then(|| (b + 1) as f64 * self.width_km);
        (lo, hi)
    }
}

/// Counterparty labels for the histogram; explicit codes take precedence
/// over group tags, then the default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagScheme {
    by_code: BTreeMap<CountryCode, String>,
    by_group: BTreeMap<Group, String>,
    default: String,
}

impl TagScheme {
    pub fn new(default: impl Into<String>) -> Self {
        TagScheme { by_code: BTreeMap::new(), by_group: BTreeMap::new(), default: default.into() }
    }

    /// US, China and everything else.
    pub fn us_china_other() -> Self {
        TagScheme::new("Other").tag_code(CountryCode::lit("USA"), "US").tag_code(CountryCode::lit("CHN"), "China")
    }

    pub fn tag_code(mut self, code: CountryCode, tag: impl Into<String>) -> Self {
        self.by_code.insert(code, tag.into());
        self
    }

    pub fn tag_group(mut self, group: Group, tag: impl Into<String>) -> Self {
        self.by_group.insert(group, tag.into());
        self
    }

    pub fn tag_of(&self, counterparty: CountryCode, groups: &GroupAssignment) -> &str {
        self.by_code
            .get(&counterparty)
            .or_else(|| self.by_group.get(&groups.membership_of(counterparty)))
            .unwrap_or(&self.default)
    }

    /// All tags, sorted.
    pub fn tags(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.by_code.values().chain(self.by_group.values()).chain([&self.default]).collect();
        set.into_iter().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceKey {
    pub group: Group,
    pub year: i32,
    pub instrument: Instrument,
}

/// Summed holdings by bin and tag for one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: BinSpec,
    /// `sums[tag][bin]`.
    pub sums: BTreeMap<String, Vec<Amount>>,
    pub total: Amount,
}

impl Histogram {
    fn new(spec: BinSpec, tags: &[String]) -> Self {
        let sums = tags.iter().map(|t| (t.clone(), vec![Amount::ZERO; spec.n_bins])).collect();
        Histogram { spec, sums, total: Amount::ZERO }
    }

    /// Sum over tags for each bin.
    pub fn untagged(&self) -> Vec<Amount> {
        (0..self.spec.n_bins).map(|b| self.sums.values().map(|v| v[b]).sum()).collect()
    }

    pub fn bins_total(&self) -> Amount {
        self.sums.values().flatten().sum()
    }

    /// Rows `bin,km_lo,km_hi,tag,usd_bn`; the last bin's upper edge is blank.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), GeoError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin", "km_lo", "km_hi", "tag", "usd_bn"])?;
        for (tag, bins) in &self.sums {
            for (b, amount) in bins.iter().enumerate() {
                let (lo, hi) = self.spec.edges(b);
                out.write_record([
                    b.to_string(),
                    lo.to_string(),
                    hi.map(|h| h.to_string()).unwrap_or_default(),
                    tag.clone(),
                    format!("{:.6}", amount.usd_bn()),
                ])?;
            }
        }
        out.flush().map_err(|e| GeoError::Read(e.to_string()))
    }
}

/// Histogram of holdings per (reporter group, year, instrument).
///
/// Zero and missing holdings are skipped and need no distance.
pub fn bin_holdings(
    panel: &Panel,
    distances: &DistanceTable,
    groups: &GroupAssignment,
    tags: &TagScheme,
    spec: BinSpec,
) -> Result<BTreeMap<SliceKey, Histogram>, GeoError> {
    spec.validate()?;
    let tag_list = tags.tags();
    let mut out: BTreeMap<SliceKey, Histogram> = BTreeMap::new();
    for obs in panel.iter().filter(|o| o.value > 0.0) {
        let key = obs.key;
        let km = distances.require(key.reporter, key.counterparty)?;
        let slice = SliceKey { group: groups.membership_of(key.reporter), year: key.year, instrument: key.instrument };
        let hist = out.entry(slice).or_insert_with(|| Histogram::new(spec, &tag_list));
        let amount = Amount::from_usd_mn(obs.value);
        let tag = tags.tag_of(key.counterparty, groups);
        hist.sums.get_mut(tag).expect("tag list covers scheme")[spec.index(km)] += amount;
        hist.total += amount;
    }
    Ok(out)
}
