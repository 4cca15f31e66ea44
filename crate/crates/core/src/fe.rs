//! Fixed-effect layouts and their absorption by weighted alternating
//! projections, without materialising dummy columns.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::panel::{CountryCode, ObsKey};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeError {
    #[error("demeaning did not converge in {max_iter} sweeps (max group mean {residual:e})")]
    NotConverged { max_iter: usize, residual: f64 },
    #[error("weight at row {0} is not positive")]
    NonPositiveWeight(usize),
    #[error("expected {expected} rows, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Categorical key of a fixed-effect dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeKind {
    ReporterYear,
    CounterpartyYear,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LevelKey {
    CountryYear(CountryCode, i32),
    Pair(CountryCode, CountryCode),
}

impl FeKind {
    fn level_key(self, key: &ObsKey) -> LevelKey {
        match self {
            FeKind::ReporterYear => LevelKey::CountryYear(key.reporter, key.year),
            FeKind::CounterpartyYear => LevelKey::CountryYear(key.counterparty, key.year),
            FeKind::Pair => LevelKey::Pair(key.reporter, key.counterparty),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FeKind::ReporterYear => "reporter_year",
            FeKind::CounterpartyYear => "counterparty_year",
            FeKind::Pair => "pair",
        }
    }
}

/// One dimension: a level index per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeDimension {
    pub name: String,
    pub kind: Option<FeKind>,
    levels: Vec<u32>,
    n_levels: usize,
}

impl FeDimension {
    /// Arbitrary level ids; they are renumbered densely in sorted order.
    pub fn from_levels(name: impl Into<String>, raw: &[u32]) -> Self {
        let ids: BTreeMap<u32, u32> = raw.iter().map(|&l| (l, 0)).collect();
        let ids: BTreeMap<u32, u32> = ids.keys().enumerate().map(|(i, &l)| (l, i as u32)).collect();
        FeDimension { name: name.into(), kind: None, levels: raw.iter().map(|l| ids[l]).collect(), n_levels: ids.len() }
    }

    fn from_keys(kind: FeKind, rows: &[ObsKey]) -> Self {
        let mut ids: BTreeMap<LevelKey, u32> = rows.iter().map(|k| (kind.level_key(k), 0)).collect();
        for (i, id) in ids.values_mut().enumerate() {
            *id = i as u32;
        }
        let levels = rows.iter().map(|k| ids[&kind.level_key(k)]).collect();
        FeDimension { name: kind.label().to_string(), kind: Some(kind), levels, n_levels: ids.len() }
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    /// Row count per level.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_levels];
        for &l in &self.levels {
            c[l as usize] += 1;
        }
        c
    }
}

/// The fixed-effect dimensions of a design, all over the same rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedEffectLayout {
    n_rows: usize,
    dims: Vec<FeDimension>,
}

impl FixedEffectLayout {
    pub fn from_keys(kinds: &[FeKind], rows: &[ObsKey]) -> Self {
        FixedEffectLayout { n_rows: rows.len(), dims: kinds.iter().map(|&k| FeDimension::from_keys(k, rows)).collect() }
    }

    pub fn from_dims(n_rows: usize, dims: Vec<FeDimension>) -> Result<Self, FeError> {
        if let Some(d) = dims.iter().find(|d| d.levels.len() != n_rows) {
            return Err(FeError::LengthMismatch { expected: n_rows, got: d.levels.len() });
        }
        Ok(FixedEffectLayout { n_rows, dims })
    }

    /// No fixed effects over `n_rows` rows.
    pub fn none(n_rows: usize) -> Self {
        FixedEffectLayout { n_rows, dims: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dims(&self) -> &[FeDimension] {
        &self.dims
    }

    pub fn kinds(&self) -> Vec<FeKind> {
        self.dims.iter().filter_map(|d| d.kind).collect()
    }

    /// Rows that are the only member of a level in some dimension.
    pub fn singleton_rows(&self) -> Vec<bool> {
        let mut single = vec![false; self.n_rows];
        for d in &self.dims {
            let counts = d.counts();
            for (i, &l) in d.levels.iter().enumerate() {
                single[i] |= counts[l as usize] == 1;
            }
        }
        single
    }

    /// Layout over the rows flagged in `keep`, levels renumbered.
    pub fn restrict(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.n_rows);
        let dims = self
            .dims
            .iter()
            .map(|d| {
                let raw: Vec<u32> = d.levels.iter().zip(keep).filter(|(_, &k)| k).map(|(&l, _)| l).collect();
                FeDimension { kind: d.kind, ..FeDimension::from_levels(d.name.clone(), &raw) }
            })
            .collect();
        FixedEffectLayout { n_rows: keep.iter().filter(|&&k| k).count(), dims }
    }
}

/// Weighted within-level demeaning for a fixed set of weights.
pub struct Absorber<'a, T> {
    layout: &'a FixedEffectLayout,
    weights: &'a [T],
    inv_level_weight: Vec<Vec<T>>,
}

/// Outcome of demeaning one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemeanStats {
    pub sweeps: usize,
    pub max_group_mean: f64,
}

impl<'a, T: Scalar> Absorber<'a, T> {
    pub fn new(layout: &'a FixedEffectLayout, weights: &'a [T]) -> Result<Self, FeError> {
        if weights.len() != layout.n_rows {
            return Err(FeError::LengthMismatch { expected: layout.n_rows, got: weights.len() });
        }
        if let Some(i) = weights.iter().position(|&w| !(w > T::zero())) {
            return Err(FeError::NonPositiveWeight(i));
        }
        let inv_level_weight = layout
            .dims
            .iter()
            .map(|d| {
                let mut s = vec![T::zero(); d.n_levels];
                for (&l, &w) in d.levels.iter().zip(weights) {
                    s[l as usize] += w;
                }
                s.into_iter().map(|v| T::one() / v).collect()
            })
            .collect();
        Ok(Absorber { layout, weights, inv_level_weight })
    }

    /// Subtracts level means of dimension `d`, returning the largest one.
    fn project(&self, d: usize, col: &mut [T], sums: &mut Vec<T>) -> T {
        let dim = &self.layout.dims[d];
        sums.clear();
        sums.resize(dim.n_levels, T::zero());
        for ((&l, &w), &x) in dim.levels.iter().zip(self.weights).zip(col.iter()) {
            sums[l as usize] += w * x;
        }
        let mut largest = T::zero();
        for (s, &inv) in sums.iter_mut().zip(&self.inv_level_weight[d]) {
            *s *= inv;
            largest = largest.max(s.abs());
        }
        for (x, &l) in col.iter_mut().zip(&dim.levels) {
            *x -= sums[l as usize];
        }
        largest
    }

    /// Demeans `col` in place by cyclic projections until no level of any
    /// dimension has a weighted mean above `tol · max(1, max|col|)`.
    pub fn demean(&self, col: &mut [T], tol: T, max_iter: usize) -> Result<DemeanStats, FeError> {
        if col.len() != self.layout.n_rows {
            return Err(FeError::LengthMismatch { expected: self.layout.n_rows, got: col.len() });
        }
        let n_dims = self.layout.dims.len();
        if n_dims == 0 {
            return Ok(DemeanStats { sweeps: 0, max_group_mean: 0.0 });
        }
        let mut sums = Vec::new();
        if n_dims == 1 {
            self.project(0, col, &mut sums);
            return Ok(DemeanStats { sweeps: 1, max_group_mean: 0.0 });
        }
        let scale = col.iter().fold(T::one(), |m, v| m.max(v.abs()));
        let threshold = tol * scale;
        let mut largest = T::zero();
        for sweep in 1..=max_iter {
            largest = T::zero();
            for d in 0..n_dims {
                largest = largest.max(self.project(d, col, &mut sums));
            }
            // means removed in this sweep were those present at its start
            if largest <= threshold {
                return Ok(DemeanStats { sweeps: sweep, max_group_mean: largest.as_f64() });
            }
        }
        Err(FeError::NotConverged { max_iter, residual: largest.as_f64() })
    }

    /// Demeans several columns; results do not depend on the thread count.
    pub fn demean_all(&self, cols: &mut [Vec<T>], tol: T, max_iter: usize) -> Result<Vec<DemeanStats>, FeError> {
        cols.par_iter_mut().map(|c| self.demean(c, tol, max_iter)).collect()
    }

    /// Per-dimension effects `α` with `Σ_d α_d[level_d(i)] ≈ v_i` in the
    /// weighted least-squares sense (Gauss–Seidel). Each dimension after the
    /// first is normalised to weighted mean zero.
    pub fn recover(&self, v: &[T], tol: T, max_iter: usize) -> Result<Vec<Vec<T>>, FeError> {
        let mut resid = v.to_vec();
        let mut effects: Vec<Vec<T>> = self.layout.dims.iter().map(|d| vec![T::zero(); d.n_levels]).collect();
        let mut sums = Vec::new();
        let scale = v.iter().fold(T::one(), |m, x| m.max(x.abs()));
        for _ in 0..max_iter.max(1) {
            let mut largest = T::zero();
            for (d, eff) in effects.iter_mut().enumerate() {
                largest = largest.max(self.project(d, &mut resid, &mut sums));
                for (e, s) in eff.iter_mut().zip(&sums) {
                    *e += *s;
                }
            }
            if largest <= tol * scale || self.layout.dims.len() <= 1 {
                let total_w: T = self.weights.iter().copied().sum();
                for d in 1..effects.len() {
                    let dim = &self.layout.dims[d];
                    let mean = dim.levels.iter().zip(self.weights).fold(T::zero(), |s, (&l, &w)| s + w * effects[d][l as usize]) / total_w;
                    effects[d].iter_mut().for_each(|e| *e -= mean);
                    effects[0].iter_mut().for_each(|e| *e += mean);
                }
                return Ok(effects);
            }
        }
        Err(FeError::NotConverged { max_iter, residual: f64::NAN })
    }
}

/// Weighted demeaning of each column within every dimension of `layout`.
pub fn absorb_fixed_effects<T: Scalar>(
    columns: &[Vec<T>],
    weights: &[T],
    layout: &FixedEffectLayout,
    tol: T,
    max_iter: usize,
) -> Result<Vec<Vec<T>>, FeError> {
    let absorber = Absorber::new(layout, weights)?;
    let mut out = columns.to_vec();
    absorber.demean_all(&mut out, tol, max_iter)?;
    Ok(out)
}
