//! Synthetic gravity panels with known parameters.
//!
//! Holdings are drawn Poisson with mean
//! `exp(β_g (ln d − ln d₀) + δ_it + θ_jt + π_ij + ln m)` where `g` is the
//! reporter's group, `d₀` a reference distance and `m` the base mean, then
//! zeroed independently with probability `zero_inflation`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::geo::{build_distance_table, DistanceTable, GeoError, GeoPoint};
use crate::panel::{Basis, CountryCode, ExcludedBucket, Group, GroupAssignment, Instrument, ObsKey, Observation, Panel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeScales {
    pub reporter_year: f64,
    pub counterparty_year: f64,
    pub pair: f64,
}

impl Default for FeScales {
    fn default() -> Self {
        FeScales { reporter_year: 0.5, counterparty_year: 0.5, pair: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_reporters: usize,
    pub n_counterparties: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub instrument: Instrument,
    pub basis: Basis,
    pub true_beta: BTreeMap<Group, f64>,
    pub fe_scales: FeScales,
    pub zero_inflation: f64,
    pub seed: u64,
    /// Mean holding at the reference distance with zero effects.
    pub base_mean: f64,
    pub reference_km: f64,
    /// USD million per Poisson count.
    pub unit_usd_mn: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_reporters: 50,
            n_counterparties: 100,
            first_year: 2013,
            last_year: 2017,
            instrument: Instrument::Debt,
            basis: Basis::NationalityRestated,
            true_beta: [(Group::Asean, -1.0), (Group::Oecd, -0.5), (Group::Row, -0.8)].into(),
            fe_scales: FeScales::default(),
            zero_inflation: 0.4,
            seed: 1,
            base_mean: 20.0,
            reference_km: 5000.0,
            unit_usd_mn: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DgpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), DgpError> {
        let bad = |m: &str| Err(DgpError::InvalidConfig(m.into()));
        if self.n_reporters < 2 || self.n_counterparties < 2 {
            return bad("need at least 2 reporters and 2 counterparties");
        }
        if self.n_reporters > self.n_counterparties {
            return bad("reporters are drawn from the counterparties");
        }
        if self.last_year < self.first_year {
            return bad("empty year range");
        }
        if self.instrument == Instrument::Total {
            return bad("generate debt or equity");
        }
        if !(0.0..1.0).contains(&self.zero_inflation) {
            return bad("zero_inflation must lie in [0, 1)");
        }
        let s = &self.fe_scales;
        if [s.reporter_year, s.counterparty_year, s.pair].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("fe scales must be finite and non-negative");
        }
        if !(self.base_mean > 0.0 && self.reference_km > 0.0 && self.unit_usd_mn > 0.0) {
            return bad("base_mean, reference_km and unit_usd_mn must be positive");
        }
        if self.true_beta.values().any(|b| !b.is_finite()) {
            return bad("non-finite beta");
        }
        Ok(())
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first_year..=self.last_year
    }
}

/// Parameters and realised draws behind a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: DgpConfig,
    pub beta: BTreeMap<Group, f64>,
    pub reporter_year: Vec<(CountryCode, i32, f64)>,
    pub counterparty_year: Vec<(CountryCode, i32, f64)>,
    /// Conditional means before zero inflation, in key order.
    pub means: Vec<(ObsKey, f64)>,
    pub structural_zeros: BTreeSet<ObsKey>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub panel: Panel,
    pub distances: DistanceTable,
    pub groups: GroupAssignment,
    pub cities: BTreeMap<CountryCode, GeoPoint<f64>>,
    pub truth: Truth,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated scale")
}

/// Deterministic in `config` alone.
pub fn generate_panel(config: &DgpConfig) -> Result<SyntheticData, DgpError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let countries: Vec<CountryCode> = (0..config.n_counterparties).map(CountryCode::from_index).collect();
    let reporters = &countries[..config.n_reporters];

    let mut cities = BTreeMap::new();
    for &c in &countries {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let lat = (2.0 * u - 1.0).asin().to_degrees();
        let lon = 360.0 * v - 180.0;
        cities.insert(c, GeoPoint::new(lat, lon)?);
    }
    let distances = build_distance_table(&cities)?;
    let membership: Vec<(CountryCode, Group)> = countries.iter().enumerate().map(|(i, &c)| (c, Group::ALL[i % 3])).collect();

    let years: Vec<i32> = config.years().collect();
    let ry = normal(config.fe_scales.reporter_year);
    let cy = normal(config.fe_scales.counterparty_year);
    let py = normal(config.fe_scales.pair);
    let mut delta = BTreeMap::new();
    for &r in reporters {
        for &t in &years {
            delta.insert((r, t), ry.sample(&mut rng));
        }
    }
    let mut theta = BTreeMap::new();
    for &c in &countries {
        for &t in &years {
            theta.insert((c, t), cy.sample(&mut rng));
        }
    }

    let ln_ref = config.reference_km.ln();
    let ln_base = config.base_mean.ln();
    let mut observations = Vec::new();
    let mut means = Vec::new();
    let mut structural_zeros = BTreeSet::new();
    for (i, &r) in reporters.iter().enumerate() {
        let beta = config.true_beta.get(&Group::ALL[i % 3]).copied().unwrap_or(0.0);
        for &c in countries.iter().filter(|&&c| c != r) {
            let pair_effect = py.sample(&mut rng);
            let ln_d = distances.require(r, c)?.max(1.0).ln();
            for &t in &years {
                let key = ObsKey::new(r, c, t, config.instrument);
                let eta = beta * (ln_d - ln_ref) + delta[&(r, t)] + theta[&(c, t)] + pair_effect + ln_base;
                let mean = eta.exp();
                let zeroed = rng.random::<f64>() < config.zero_inflation;
                let count = if mean > 1e-12 { Poisson::new(mean).map(|p| p.sample(&mut rng)).unwrap_or(0.0) } else { 0.0 };
                if zeroed {
                    structural_zeros.insert(key);
                }
                let value = if zeroed { 0.0 } else { count * config.unit_usd_mn };
                observations.push(Observation { key, value });
                means.push((key, mean));
            }
        }
    }
    means.sort_by_key(|a| a.0);
    let panel = Panel::new(config.basis, observations, []).expect("generated keys are unique and valid");
    let groups = GroupAssignment::new(&panel, membership, [], ExcludedBucket::Separate).expect("every country has a group");
    let flatten = |m: BTreeMap<(CountryCode, i32), f64>| m.into_iter().map(|((c, t), v)| (c, t, v)).collect();
    let truth = Truth {
        config: config.clone(),
        beta: config.true_beta.clone(),
        reporter_year: flatten(delta),
        counterparty_year: flatten(theta),
        means,
        structural_zeros,
    };
    Ok(SyntheticData { panel, distances, groups, cities, truth })
}

/// `country,lat,lon`.
pub fn write_cities<W: Write>(cities: &BTreeMap<CountryCode, GeoPoint<f64>>, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["country", "lat", "lon"])?;
    for (c, p) in cities {
        out.write_record([c.to_string(), p.lat().to_string(), p.lon().to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// `country,group,exclude`.
pub fn write_groups<W: Write>(groups: &GroupAssignment, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["country", "group", "exclude"])?;
    for (c, g) in groups.membership() {
        let flag = if groups.is_excluded(*c) { "1" } else { "0" };
        out.write_record([c.as_str(), g.as_str(), flag])?;
    }
    out.flush()?;
    Ok(())
}
