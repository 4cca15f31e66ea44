//! Independent dense reference implementations used as test oracles.
//!
//! Nothing here calls into the estimation code paths it checks: fixed
//! effects are explicit dummy columns, linear systems are solved by Gaussian
//! elimination with partial pivoting, and the Poisson fit is plain
//! Newton–Raphson on the log-likelihood.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use gravity_core::geo::{DistanceTable, GeoPoint};
use gravity_core::panel::{
    Basis, CountryCode, ExcludedBucket, Group, GroupAssignment, Instrument, ObsKey, Observation, Panel,
};

pub const R_KM: f64 = 6371.0;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular system");
        for row in col + 1..n {
            let f = a[row][col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn gauss_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            gauss_solve(a.to_vec(), e)
        })
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// Rank of the `n × p` matrix with the given columns by row reduction.
pub fn gauss_rank(cols: &[Vec<f64>], tol: f64) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let n = cols[0].len();
    let p = cols.len();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..p).map(|j| cols[j][i]).collect()).collect();
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    let mut rank = 0;
    for col in 0..p {
        let Some(pivot) = (rank..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())) else { break };
        if m[pivot][col].abs() <= tol * scale {
            continue;
        }
        m.swap(rank, pivot);
        for row in rank + 1..n {
            let f = m[row][col] / m[rank][col];
            for k in col..p {
                m[row][k] -= f * m[rank][k];
            }
        }
        rank += 1;
    }
    rank
}

/// Greedy left-to-right selection of columns that raise the rank.
pub fn independent_columns(cols: &[Vec<f64>]) -> Vec<usize> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut idx = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        kept.push(c.clone());
        if gauss_rank(&kept, 1e-10) == kept.len() {
            idx.push(j);
        } else {
            kept.pop();
        }
    }
    idx
}

/// Indicator columns, one per distinct label, in label order.
pub fn dummies<L: Ord + Clone>(labels: &[L]) -> Vec<Vec<f64>> {
    let distinct: Vec<L> = labels.iter().cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    distinct.iter().map(|d| labels.iter().map(|l| if l == d { 1.0 } else { 0.0 }).collect()).collect()
}

pub struct DenseFit {
    /// Coefficients on the leading regressor columns.
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    /// Retained columns of the full dummy design, regressors first.
    pub x: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn loglik(y: &[f64], eta: &[f64]) -> f64 {
    y.iter().zip(eta).map(|(&yi, &e)| yi * e - e.exp()).sum()
}

/// Poisson maximum likelihood on regressors plus explicit dummies for every
/// fixed-effect labelling, by damped Newton–Raphson from zero.
pub fn newton_poisson<L: Ord + Clone>(regressors: &[Vec<f64>], fe: &[Vec<L>], y: &[f64]) -> DenseFit {
    let n = y.len();
    let mut all: Vec<Vec<f64>> = regressors.to_vec();
    for labels in fe {
        all.extend(dummies(labels));
    }
    if fe.is_empty() {
        all.push(vec![1.0; n]);
    }
    let keep = independent_columns(&all);
    assert!(keep.iter().take(regressors.len()).copied().eq(0..regressors.len()), "regressors collinear in oracle");
    let x: Vec<Vec<f64>> = keep.iter().map(|&j| all[j].clone()).collect();
    let k = x.len();
    let mut b = vec![0.0; k];
    let eta_of = |b: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..k).map(|j| x[j][i] * b[j]).sum()).collect() };
    let mut eta = eta_of(&b);
    let mut iterations = 0;
    for it in 1..=500 {
        iterations = it;
        let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let grad: Vec<f64> = (0..k).map(|j| (0..n).map(|i| (y[i] - mu[i]) * x[j][i]).sum()).collect();
        let hess: Vec<Vec<f64>> =
            (0..k).map(|a| (0..k).map(|c| (0..n).map(|i| mu[i] * x[a][i] * x[c][i]).sum()).collect()).collect();
        let step = gauss_solve(hess, grad);
        let base = loglik(y, &eta);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = b.iter().zip(&step).map(|(bi, si)| bi + t * si).collect();
            let e = eta_of(&cand);
            if loglik(y, &e) >= base - 1e-12 * base.abs() || t < 1e-10 {
                b = cand;
                eta = e;
                break;
            }
            t /= 2.0;
        }
        if step.iter().fold(0.0f64, |m, s| m.max(s.abs())) * t < 1e-13 {
            break;
        }
    }
    DenseFit { beta: b[..regressors.len()].to_vec(), mu: eta.iter().map(|e| e.exp()).collect(), x, iterations }
}

/// `H⁻¹ (Σ_c s_c s_cᵀ) H⁻¹ · G/(G−1)` over all dense columns, leading
/// `p × p` block returned.
pub fn dense_sandwich<L: Ord + Clone>(fit: &DenseFit, y: &[f64], clusters: &[L], p: usize) -> Vec<Vec<f64>> {
    let k = fit.x.len();
    let n = y.len();
    let hess: Vec<Vec<f64>> =
        (0..k).map(|a| (0..k).map(|c| (0..n).map(|i| fit.mu[i] * fit.x[a][i] * fit.x[c][i]).sum()).collect()).collect();
    let hinv = gauss_inverse(&hess);
    let mut scores: BTreeMap<L, Vec<f64>> = BTreeMap::new();
    for i in 0..n {
        let s = scores.entry(clusters[i].clone()).or_insert_with(|| vec![0.0; k]);
        for a in 0..k {
            s[a] += (y[i] - fit.mu[i]) * fit.x[a][i];
        }
    }
    let g = scores.len() as f64;
    let mut meat = vec![vec![0.0; k]; k];
    for s in scores.values() {
        for a in 0..k {
            for c in 0..k {
                meat[a][c] += s[a] * s[c];
            }
        }
    }
    let mul = |l: &[Vec<f64>], r: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..k).map(|a| (0..k).map(|c| (0..k).map(|m| l[a][m] * r[m][c]).sum()).collect()).collect()
    };
    let v = mul(&mul(&hinv, &meat), &hinv);
    (0..p).map(|a| (0..p).map(|c| v[a][c] * g / (g - 1.0)).collect()).collect()
}

/// `x − D(DᵀWD)⁻¹DᵀWx` with `D` the retained explicit dummies.
pub fn dense_projection_residual<L: Ord + Clone>(x: &[f64], weights: &[f64], fe: &[Vec<L>]) -> Vec<f64> {
    let mut all = Vec::new();
    for labels in fe {
        all.extend(dummies(labels));
    }
    let keep = independent_columns(&all);
    let d: Vec<&Vec<f64>> = keep.iter().map(|&j| &all[j]).collect();
    let k = d.len();
    let n = x.len();
    let a: Vec<Vec<f64>> =
        (0..k).map(|r| (0..k).map(|c| (0..n).map(|i| weights[i] * d[r][i] * d[c][i]).sum()).collect()).collect();
    let rhs: Vec<f64> = (0..k).map(|r| (0..n).map(|i| weights[i] * d[r][i] * x[i]).sum()).collect();
    let b = gauss_solve(a, rhs);
    (0..n).map(|i| x[i] - (0..k).map(|r| d[r][i] * b[r]).sum::<f64>()).collect()
}

/// Rows separated by some direction `z ∈ ℝ²`: `Xz ≥ 0`, zero on positive
/// outcomes, positive on the row. Candidate rays are the perpendiculars and
/// directions of every row; the sum of all valid rays is a certificate with
/// maximal support.
pub fn certificate_search_2d(x0: &[f64], x1: &[f64], y: &[f64]) -> Vec<bool> {
    let n = y.len();
    let scale = x0.iter().chain(x1).fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-9 * scale;
    let valid = |z: (f64, f64)| {
        (0..n).all(|i| {
            let v = x0[i] * z.0 + x1[i] * z.1;
            if y[i] > 0.0 {
                v.abs() <= tol
            } else {
                v >= -tol
            }
        })
    };
    let mut total = (0.0, 0.0);
    for i in 0..n {
        let norm = x0[i].hypot(x1[i]);
        if norm == 0.0 {
            continue;
        }
        let (a, b) = (x0[i] / norm, x1[i] / norm);
        for z in [(-b, a), (b, -a), (a, b), (-a, -b)] {
            if valid(z) {
                total.0 += z.0;
                total.1 += z.1;
            }
        }
    }
    (0..n).map(|i| y[i] == 0.0 && x0[i] * total.0 + x1[i] * total.1 > tol).collect()
}

/// Spherical law of cosines.
pub fn law_of_cosines_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
    R_KM * c.acos()
}

/// Bin index by direct comparison against every edge.
pub fn brute_bin(km: f64, width: f64, n_bins: usize) -> usize {
    let mut b = 0;
    for edge in 1..n_bins {
        if km >= edge as f64 * width {
            b = edge;
        }
    }
    b
}

/// Parses a canonical comma-separated panel line by line, returning
/// `(observed count, missing count, value sum)`.
pub fn parse_canonical_lines(text: &str) -> (usize, usize, f64) {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').map(str::trim).collect();
    let v = header.iter().position(|h| *h == "value_usd_mn").unwrap();
    let (mut observed, mut missing, mut sum) = (0, 0, 0.0);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        match cells[v].trim() {
            "" => missing += 1,
            s => {
                observed += 1;
                sum += s.parse::<f64>().unwrap();
            }
        }
    }
    (observed, missing, sum)
}

pub fn code(s: &str) -> CountryCode {
    CountryCode::lit(s)
}

/// Three reporters (one per group), four partners, two years.
pub struct SmallFixture {
    pub panel: Panel,
    pub distances: DistanceTable,
    pub groups: GroupAssignment,
    pub cities: BTreeMap<CountryCode, GeoPoint<f64>>,
}

pub const FIXTURE_REPORTERS: [(&str, Group, f64, f64); 3] =
    [("SGP", Group::Asean, 1.352, 103.820), ("JPN", Group::Oecd, 35.690, 139.690), ("BRA", Group::Row, -23.550, -46.633)];
pub const FIXTURE_PARTNERS: [(&str, f64, f64); 4] =
    [("USA", 40.713, -74.006), ("GBR", 51.507, -0.128), ("CHN", 31.230, 121.474), ("ZAF", -26.204, 28.047)];

pub fn small_fixture() -> SmallFixture {
    let mut cities = BTreeMap::new();
    for (c, _, lat, lon) in FIXTURE_REPORTERS {
        cities.insert(code(c), GeoPoint::new(lat, lon).unwrap());
    }
    for (c, lat, lon) in FIXTURE_PARTNERS {
        cities.insert(code(c), GeoPoint::new(lat, lon).unwrap());
    }
    let distances = gravity_core::geo::build_distance_table(&cities).unwrap();
    // counts roughly following exp(−ln d) with idiosyncratic variation
    let values: [[f64; 8]; 3] = [
        [1820.0, 940.0, 3110.0, 0.0, 2015.0, 1102.0, 2987.0, 55.0],
        [2440.0, 1610.0, 5120.0, 130.0, 2301.0, 1777.0, 4800.0, 0.0],
        [905.0, 420.0, 66.0, 310.0, 1011.0, 398.0, 91.0, 288.0],
    ];
    let mut obs = Vec::new();
    for (r, (rc, ..)) in FIXTURE_REPORTERS.iter().enumerate() {
        for (t, year) in [2016, 2017].into_iter().enumerate() {
            for (c, (pc, ..)) in FIXTURE_PARTNERS.iter().enumerate() {
                obs.push(Observation::new(rc, pc, year, Instrument::Debt, values[r][4 * t + c]));
            }
        }
    }
    let panel = Panel::new(Basis::NationalityRestated, obs, []).unwrap();
    let membership: Vec<(CountryCode, Group)> = FIXTURE_REPORTERS.iter().map(|&(c, g, ..)| (code(c), g)).collect();
    let groups = GroupAssignment::new(&panel, membership, [], ExcludedBucket::Separate).unwrap();
    SmallFixture { panel, distances, groups, cities }
}

/// Dense inputs built straight from the panel: group-interacted log
/// distances, reporter-year and counterparty-year labels, outcomes.
pub struct DenseInputs {
    pub keys: Vec<ObsKey>,
    pub regressors: Vec<Vec<f64>>,
    pub fe: Vec<Vec<(CountryCode, i32)>>,
    pub y: Vec<f64>,
}

pub fn dense_inputs(panel: &Panel, distances: &DistanceTable, groups: &GroupAssignment) -> DenseInputs {
    let keys: Vec<ObsKey> = panel.iter().map(|o| o.key).collect();
    let regressors = [Group::Asean, Group::Oecd, Group::Row]
        .iter()
        .map(|&g| {
            keys.iter()
                .map(|k| {
                    if groups.membership_of(k.reporter) == g {
                        distances.get(k.reporter, k.counterparty).unwrap().ln()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let fe = vec![
        keys.iter().map(|k| (k.reporter, k.year)).collect(),
        keys.iter().map(|k| (k.counterparty, k.year)).collect(),
    ];
    let y = panel.iter().map(|o| o.value).collect();
    DenseInputs { keys, regressors, fe, y }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
