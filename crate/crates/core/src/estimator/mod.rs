//! Poisson pseudo-maximum-likelihood with absorbed high-dimensional fixed
//! effects.
//!
//! Each IRLS iteration forms the working response `z = η + (y − μ)/μ` with
//! weights `μ`, demeans `z` and every regressor within all fixed-effect
//! dimensions, solves the weighted normal equations on the demeaned data and
//! recovers the new linear predictor as `η = z − (z̃ − X̃β)`. Zero outcomes
//! enter the likelihood like any other; rows whose zeros are perfectly
//! predicted are detected beforehand and either dropped or reported.

mod separation;

use serde::{Deserialize, Serialize};

use crate::design::{DesignError, DesignSpec, DroppedColumn};
use crate::fe::{Absorber, FeError};
use crate::linalg::{Cholesky, Matrix};
use crate::panel::{ObsKey, Panel};
use crate::scalar::Scalar;

pub use separation::detect_separation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SeparationPolicy {
    #[default]
    DropAndRefit,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Relative deviance change for convergence.
    pub tol_deviance: f64,
    /// Largest coefficient step for convergence.
    pub tol_coef: f64,
    /// Largest within-level weighted mean left by demeaning.
    pub tol_demean: f64,
    pub max_iter_irls: usize,
    pub max_iter_demean: usize,
    pub separation_policy: SeparationPolicy,
    pub drop_singletons: bool,
    /// Relative residual norm below which a regressor counts as collinear.
    pub collinearity_tol: f64,
    /// Recover per-dimension fixed-effect values after convergence.
    pub recover_fixed_effects: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol_deviance: 1e-9,
            tol_coef: 1e-8,
            tol_demean: 1e-10,
            max_iter_irls: 200,
            max_iter_demean: 10_000,
            separation_policy: SeparationPolicy::DropAndRefit,
            drop_singletons: true,
            collinearity_tol: 1e-9,
            recover_fixed_effects: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), String> {
        let tols = [self.tol_deviance, self.tol_coef, self.tol_demean, self.collinearity_tol];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err("tolerances must be positive".into());
        }
        if self.max_iter_irls == 0 || self.max_iter_demean == 0 {
            return Err("iteration caps must be at least 1".into());
        }
        Ok(())
    }

    /// Tolerances floored at what precision `T` can resolve.
    fn effective<T: Scalar>(&self) -> (T, T, T) {
        let eps = T::epsilon();
        (
            T::of(self.tol_deviance).max(eps * T::of(1024.0)),
            T::of(self.tol_coef).max(eps * T::of(1024.0)),
            T::of(self.tol_demean).max(eps * T::of(64.0)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    /// Only row in some fixed-effect level.
    Singleton,
    /// Zero outcome perfectly predicted.
    Separated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedObservation {
    pub key: ObsKey,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient<T> {
    pub name: String,
    pub estimate: T,
    pub reported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub deviance: f64,
    pub relative_change: f64,
    pub max_coef_step: f64,
    pub step_fraction: f64,
    pub demean_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectValues<T> {
    pub dimension: String,
    pub values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub coefficients: Vec<Coefficient<T>>,
    pub deviance: T,
    pub iterations: usize,
    pub converged: bool,
    pub n_obs: usize,
    pub dropped: Vec<DroppedObservation>,
    pub dropped_columns: Vec<DroppedColumn>,
    pub iteration_log: Vec<IterationRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fe_sums: Option<Vec<FixedEffectValues<T>>>,
    /// Estimation rows in design order.
    #[serde(skip)]
    pub rows: Vec<ObsKey>,
    /// Fitted means aligned with `rows`.
    #[serde(skip)]
    pub fitted: Vec<T>,
    #[serde(skip)]
    pub config: FitConfig,
}

impl<T: Scalar> FitResult<T> {
    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.estimate)
    }

    pub fn names(&self) -> Vec<String> {
        self.coefficients.iter().map(|c| c.name.clone()).collect()
    }

    pub fn estimates(&self) -> Vec<T> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EstimateError<T: Scalar = f64> {
    #[error("no positive outcome among estimation rows")]
    NoPositiveOutcome,
    #[error("design row {0} has no observed outcome")]
    MissingOutcome(ObsKey),
    #[error("IRLS did not converge in {} iterations", .0.iterations)]
    NotConverged(Box<FitResult<T>>),
    #[error("{} separated observation(s), e.g. {}", .0.len(), .0[0])]
    SeparationDetected(Vec<ObsKey>),
    #[error("weighted normal equations are singular")]
    SingularDesign,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    FixedEffects(#[from] FeError),
}

/// Poisson deviance `2 Σ [y ln(y/μ) − (y − μ)]`.
pub fn poisson_deviance<T: Scalar>(y: &[T], mu: &[T]) -> T {
    let two = T::of(2.0);
    y.iter()
        .zip(mu)
        .map(|(&yi, &mi)| {
            let log_term = if yi > T::zero() { yi * (yi / mi).ln() } else { T::zero() };
            two * (log_term - (yi - mi))
        })
        .sum()
}

/// Drops singleton and separated rows until none remain, recording why.
fn prune<T: Scalar>(
    mut design: DesignSpec<T>,
    mut y: Vec<T>,
    config: &FitConfig,
    dropped: &mut Vec<DroppedObservation>,
) -> Result<(DesignSpec<T>, Vec<T>), EstimateError<T>> {
    let restrict = |design: &DesignSpec<T>, y: &[T], remove: &[bool]| {
        let keep: Vec<bool> = remove.iter().map(|r| !r).collect();
        let y2 = y.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
        (design.restrict(&keep), y2)
    };
    loop {
        let mut changed = false;
        if config.drop_singletons {
            loop {
                let single = design.fixed_effects().singleton_rows();
                if !single.iter().any(|&s| s) {
                    break;
                }
                for (k, _) in design.rows().iter().zip(&single).filter(|(_, &s)| s) {
                    dropped.push(DroppedObservation { key: *k, reason: DropReason::Singleton });
                }
                (design, y) = restrict(&design, &y, &single);
                changed = true;
            }
        }
        if design.n_rows() == 0 {
            return Err(EstimateError::NoPositiveOutcome);
        }
        let separated = separation::separated_rows(&design, &y, config.tol_demean, config.max_iter_demean)?;
        if separated.iter().any(|&s| s) {
            let keys: Vec<ObsKey> = design.rows().iter().zip(&separated).filter(|(_, &s)| s).map(|(k, _)| *k).collect();
            if config.separation_policy == SeparationPolicy::Error {
                return Err(EstimateError::SeparationDetected(keys));
            }
            log::info!("dropping {} separated observation(s)", keys.len());
            dropped.extend(keys.into_iter().map(|key| DroppedObservation { key, reason: DropReason::Separated }));
            (design, y) = restrict(&design, &y, &separated);
            changed = true;
        }
        if !changed || !config.drop_singletons {
            return Ok((design, y));
        }
    }
}

/// Fits the Poisson pseudo-likelihood of `panel` outcomes on `design`.
///
/// Output is deterministic for given inputs and independent of the number
/// of worker threads.
pub fn fit_ppml<T: Scalar>(
    panel: &Panel,
    design: &DesignSpec<T>,
    config: &FitConfig,
) -> Result<FitResult<T>, EstimateError<T>> {
    config.validate().map_err(EstimateError::InvalidConfig)?;
    let mut y = Vec::with_capacity(design.n_rows());
    for key in design.rows() {
        let v = panel.value(key).ok_or(EstimateError::MissingOutcome(*key))?;
        y.push(T::of(v));
    }
    if !y.iter().any(|&v| v > T::zero()) {
        return Err(EstimateError::NoPositiveOutcome);
    }

    let mut dropped = Vec::new();
    let (design, y) = prune(design.clone(), y, config, &mut dropped)?;
    if !y.iter().any(|&v| v > T::zero()) {
        return Err(EstimateError::NoPositiveOutcome);
    }
    let design = design.detect_collinear(config.collinearity_tol)?;
    irls(&design, y, config, dropped)
}

fn irls<T: Scalar>(
    design: &DesignSpec<T>,
    y: Vec<T>,
    config: &FitConfig,
    dropped: Vec<DroppedObservation>,
) -> Result<FitResult<T>, EstimateError<T>> {
    let (tol_dev, tol_coef, tol_demean) = config.effective::<T>();
    let n = y.len();
    let p = design.regressors().len();
    let layout = design.fixed_effects();
    let tiny = T::min_positive_value();

    // η₀ = ln max(y, 0.1), shifted so its mean is ln ȳ
    let mean_y = y.iter().copied().sum::<T>() / T::of(n as f64);
    let mut eta: Vec<T> = y.iter().map(|&v| v.max(T::of(0.1)).ln()).collect();
    let shift = mean_y.ln() - eta.iter().copied().sum::<T>() / T::of(n as f64);
    eta.iter_mut().for_each(|e| *e += shift);
    let mut mu: Vec<T> = eta.iter().map(|e| e.exp()).collect();
    let mut deviance = poisson_deviance(&y, &mu);

    let mut beta: Option<Vec<T>> = None;
    let mut log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=config.max_iter_irls {
        iterations = iteration;
        let weights: Vec<T> = mu.iter().map(|m| m.max(tiny)).collect();
        let z: Vec<T> = (0..n).map(|i| eta[i] + (y[i] - mu[i]) / weights[i]).collect();

        let absorber = Absorber::new(layout, &weights)?;
        let mut cols: Vec<Vec<T>> = Vec::with_capacity(p + 1);
        cols.push(z.clone());
        cols.extend(design.regressors().iter().map(|c| c.values.clone()));
        let stats = absorber.demean_all(&mut cols, tol_demean, config.max_iter_demean)?;
        let sweeps = stats.iter().map(|s| s.sweeps).max().unwrap_or(0);
        let (z_tilde, x_tilde) = cols.split_first().expect("z column present");

        let mut normal = Matrix::zeros(p, p);
        let mut rhs = vec![T::zero(); p];
        for i in 0..n {
            let w = weights[i];
            for a in 0..p {
                let wa = w * x_tilde[a][i];
                rhs[a] += wa * z_tilde[i];
                for b in 0..=a {
                    normal[(a, b)] += wa * x_tilde[b][i];
                }
            }
        }
        normal.symmetrize_from_lower();
        let full_beta = if p == 0 {
            Vec::new()
        } else {
            Cholesky::new(&normal).ok_or(EstimateError::SingularDesign)?.solve(&rhs)
        };

        // linear predictor of the weighted fit on regressors and fixed effects
        let eta_full: Vec<T> = (0..n)
            .map(|i| {
                let fitted_tilde = (0..p).fold(T::zero(), |s, a| s + x_tilde[a][i] * full_beta[a]);
                z[i] - (z_tilde[i] - fitted_tilde)
            })
            .collect();

        // step halving on deviance increase, first step always full
        let mut fraction = T::one();
        let (mut new_eta, mut new_mu, mut new_dev);
        loop {
            new_eta = (0..n).map(|i| eta[i] + fraction * (eta_full[i] - eta[i])).collect::<Vec<T>>();
            new_mu = new_eta.iter().map(|e| e.exp()).collect::<Vec<T>>();
            new_dev = poisson_deviance(&y, &new_mu);
            let acceptable = new_dev.is_finite() && (beta.is_none() || new_dev <= deviance * (T::one() + tol_dev));
            if acceptable || fraction < T::of(1e-9) {
                break;
            }
            fraction /= T::of(2.0);
        }
        let new_beta: Vec<T> = match &beta {
            Some(old) => old.iter().zip(&full_beta).map(|(&o, &f)| o + fraction * (f - o)).collect(),
            None => full_beta.clone(),
        };
        let max_step = match &beta {
            Some(old) => old.iter().zip(&new_beta).fold(T::zero(), |m, (&o, &b)| m.max((b - o).abs())),
            None => T::infinity(),
        };
        let rel_change = (new_dev - deviance).abs() / deviance.min(new_dev).max(T::of(0.1));
        log.push(IterationRecord {
            iteration,
            deviance: new_dev.as_f64(),
            relative_change: rel_change.as_f64(),
            max_coef_step: max_step.as_f64(),
            step_fraction: fraction.as_f64(),
            demean_sweeps: sweeps,
        });
        log::debug!("irls {iteration}: deviance {new_dev} rel {:e} step {:e}", rel_change.as_f64(), max_step.as_f64());

        eta = new_eta;
        mu = new_mu;
        deviance = new_dev;
        beta = Some(new_beta);
        if rel_change < tol_dev && max_step < tol_coef {
            converged = true;
            break;
        }
    }

    let beta = beta.unwrap_or_default();
    let fe_sums = if config.recover_fixed_effects {
        let weights: Vec<T> = mu.iter().map(|m| m.max(tiny)).collect();
        let absorber = Absorber::new(layout, &weights)?;
        let fe_part: Vec<T> = (0..n)
            .map(|i| eta[i] - (0..p).fold(T::zero(), |s, a| s + design.regressors()[a].values[i] * beta[a]))
            .collect();
        let effects = absorber.recover(&fe_part, tol_demean, config.max_iter_demean)?;
        Some(
            layout
                .dims()
                .iter()
                .zip(effects)
                .map(|(d, values)| FixedEffectValues { dimension: d.name.clone(), values })
                .collect(),
        )
    } else {
        None
    };

    let result = FitResult {
        coefficients: design
            .regressors()
            .iter()
            .zip(&beta)
            .map(|(c, &estimate)| Coefficient { name: c.name.clone(), estimate, reported: c.reported })
            .collect(),
        deviance,
        iterations,
        converged,
        n_obs: n,
        dropped,
        dropped_columns: design.collinearity_report().to_vec(),
        iteration_log: log,
        fe_sums,
        rows: design.rows().to_vec(),
        fitted: mu,
        config: config.clone(),
    };
    if converged {
        Ok(result)
    } else {
        Err(EstimateError::NotConverged(Box::new(result)))
    }
}
