//! Detection of observations whose zero outcome is perfectly predicted.
//!
//! An observation is separated when some direction `z` over regressors and
//! fixed effects has `x·z ≥ 0` everywhere, `x·z = 0` wherever `y > 0`, and
//! `x·z > 0` on it. Such rows push the linear predictor to `-∞` and have no
//! finite maximum-likelihood estimate. Detection uses an iterated rectified
//! weighted regression on the zero set, which needs no linear programming:
//!
//! 1. `u = 1[y = 0]`, weights `1` on zeros and a large `K` on positives;
//! 2. regress `u` on regressors and fixed effects, `û` the fit;
//! 3. if `û ≥ 0` on every zero row, rows with `û > 0` are separated;
//! 4. otherwise `u = max(û, 0)` on zero rows (and `0` elsewhere), repeat.

use crate::design::DesignSpec;
use crate::fe::{Absorber, FeError};
use crate::linalg::wdot;
use crate::panel::{ObsKey, Panel};
use crate::scalar::Scalar;

const MAX_ROUNDS: usize = 2000;

/// Rows of `design` whose outcome in `panel` is a perfectly predicted zero.
/// Rows absent from `panel` are ignored.
pub fn detect_separation<T: Scalar>(panel: &Panel, design: &DesignSpec<T>) -> Result<Vec<ObsKey>, FeError> {
    let present: Vec<bool> = design.rows().iter().map(|k| panel.value(k).is_some()).collect();
    let design = design.restrict(&present);
    let y: Vec<T> = design.rows().iter().map(|k| T::of(panel.value(k).unwrap_or(0.0))).collect();
    let flagged = separated_rows(&design, &y, 1e-10, 10_000)?;
    Ok(design.rows().iter().zip(&flagged).filter(|(_, &f)| f).map(|(k, _)| *k).collect())
}

/// Flags rows in every fixed-effect level whose outcomes are all zero.
pub(crate) fn all_zero_levels<T: Scalar>(design: &DesignSpec<T>, y: &[T]) -> Vec<bool> {
    let mut flagged = vec![false; y.len()];
    for dim in design.fixed_effects().dims() {
        let mut positive = vec![false; dim.n_levels()];
        for (&l, &v) in dim.levels().iter().zip(y) {
            positive[l as usize] |= v > T::zero();
        }
        for (f, &l) in flagged.iter_mut().zip(dim.levels()) {
            *f |= !positive[l as usize];
        }
    }
    flagged
}

/// Separation mask for outcomes `y` aligned with the rows of `design`.
pub(crate) fn separated_rows<T: Scalar>(
    design: &DesignSpec<T>,
    y: &[T],
    tol_demean: f64,
    max_iter_demean: usize,
) -> Result<Vec<bool>, FeError> {
    let n = y.len();
    let is_zero: Vec<bool> = y.iter().map(|&v| v == T::zero()).collect();
    if !is_zero.iter().any(|&z| z) {
        return Ok(vec![false; n]);
    }
    let mut flagged = all_zero_levels(design, y);
    let candidates: Vec<bool> = flagged.iter().map(|&f| !f).collect();
    if design.regressors().is_empty() && design.fixed_effects().dims().is_empty() {
        return Ok(flagged);
    }

    // work on rows not already explained by a fixed-effect level
    let sub = design.restrict(&candidates);
    let idx: Vec<usize> = (0..n).filter(|&i| candidates[i]).collect();
    let sub_zero: Vec<bool> = idx.iter().map(|&i| is_zero[i]).collect();
    if !sub_zero.iter().any(|&z| z) {
        return Ok(flagged);
    }

    let eps = T::epsilon().sqrt();
    let heavy = eps.recip();
    let cutoff = eps * T::of(10.0);
    let omega: Vec<T> = sub_zero.iter().map(|&z| if z { T::one() } else { heavy }).collect();
    let absorber = Absorber::new(sub.fixed_effects(), &omega)?;
    let tol = T::of(tol_demean).max(T::epsilon() * T::of(64.0));

    // ω-orthonormal basis of the demeaned regressors
    let mut cols: Vec<Vec<T>> = sub.regressors().iter().map(|c| c.values.clone()).collect();
    absorber.demean_all(&mut cols, tol, max_iter_demean)?;
    let mut basis: Vec<Vec<T>> = Vec::new();
    for mut v in cols {
        let raw = wdot(&omega, &v, &v).sqrt();
        for _ in 0..2 {
            for q in &basis {
                let c = wdot(&omega, q, &v);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * *qi);
            }
        }
        let norm = wdot(&omega, &v, &v).sqrt();
        if raw > T::zero() && norm > raw * T::of(1e-9).max(T::epsilon() * T::of(1e3)) {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }

    let mut u: Vec<T> = sub_zero.iter().map(|&z| if z { T::one() } else { T::zero() }).collect();
    for _ in 0..MAX_ROUNDS {
        let mut resid = u.clone();
        absorber.demean(&mut resid, tol, max_iter_demean)?;
        for q in &basis {
            let c = wdot(&omega, q, &resid);
            resid.iter_mut().zip(q).for_each(|(r, qi)| *r -= c * *qi);
        }
        let fitted: Vec<T> = u
            .iter()
            .zip(&resid)
            .map(|(&ui, &ri)| {
                let f = ui - ri;
                if f.abs() < cutoff {
                    T::zero()
                } else {
                    f
                }
            })
            .collect();
        let all_nonneg = fitted.iter().zip(&sub_zero).all(|(&f, &z)| !z || f >= T::zero());
        if all_nonneg {
            for (j, &i) in idx.iter().enumerate() {
                flagged[i] |= sub_zero[j] && fitted[j] > T::zero();
            }
            return Ok(flagged);
        }
        let mut largest = T::zero();
        for ((ui, &f), &z) in u.iter_mut().zip(&fitted).zip(&sub_zero) {
            *ui = if z { f.max(T::zero()) } else { T::zero() };
            largest = largest.max(*ui);
        }
        if largest < cutoff {
            return Ok(flagged);
        }
    }
    log::warn!("separation check stopped after {MAX_ROUNDS} rounds without a certificate");
    Ok(flagged)
}
