mod support;

use std::collections::BTreeMap;

use gravity_core::design::{build_baseline_design, DesignSpec, RegressorColumn, SpecVariant};
use gravity_core::estimator::{detect_separation, fit_ppml, DropReason, EstimateError, FitConfig, SeparationPolicy};
use gravity_core::fe::{absorb_fixed_effects, FeDimension, FixedEffectLayout};
use gravity_core::panel::{Basis, Bucket, CountryCode, Group, Instrument, ObsKey, Observation, Panel};
use gravity_core::{Design, PpmlFit};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

fn fit_fixture(panel: &Panel, fx: &SmallFixture) -> (Design, PpmlFit) {
    let design: Design = build_baseline_design(panel, &fx.distances, &fx.groups).unwrap();
    let design = design.detect_collinear(1e-9).unwrap();
    let fit = fit_ppml(panel, &design, &FitConfig::default()).unwrap();
    (design, fit)
}

#[test]
fn matches_explicit_dummy_newton() {
    let fx = small_fixture();
    let (_, fit) = fit_fixture(&fx.panel, &fx);
    let dense = dense_inputs(&fx.panel, &fx.distances, &fx.groups);
    let oracle = newton_poisson(&dense.regressors, &dense.fe, &dense.y);
    assert!(fit.converged);
    assert!(fit.dropped.is_empty());
    let diff = max_abs_diff(&fit.estimates(), &oracle.beta);
    assert!(diff < 1e-6, "max diff {diff:e}, fit {:?} oracle {:?}", fit.estimates(), oracle.beta);
    assert_eq!(fit.names(), ["ln_dist_x_ASEAN", "ln_dist_x_OECD", "ln_dist_x_ROW"]);
}

#[test]
fn f32_fit_tracks_f64() {
    let fx = small_fixture();
    let (_, fit) = fit_fixture(&fx.panel, &fx);
    let design: DesignSpec<f32> = build_baseline_design(&fx.panel, &fx.distances, &fx.groups).unwrap();
    let fit32 = fit_ppml(&fx.panel, &design, &FitConfig::default()).unwrap();
    for (a, b) in fit32.estimates().iter().zip(fit.estimates()) {
        assert!((*a as f64 - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn adding_up_within_every_level() {
    let fx = small_fixture();
    let (design, fit) = fit_fixture(&fx.panel, &fx);
    let total_y: f64 = fx.panel.iter().map(|o| o.value).sum();
    for dim in design.fixed_effects().dims() {
        let mut resid = vec![0.0; dim.n_levels()];
        for ((key, mu), &l) in fit.rows.iter().zip(&fit.fitted).zip(dim.levels()) {
            resid[l as usize] += fx.panel.value(key).unwrap() - mu;
        }
        assert!(resid.iter().all(|r| r.abs() < 1e-6 * total_y), "{} {resid:?}", dim.name);
    }
}

fn scale_cell(panel: &Panel, reporter: CountryCode, year: i32, c: f64) -> Panel {
    Panel::new(
        Basis::NationalityRestated,
        panel.iter().map(|o| {
            let hit = o.key.reporter == reporter && o.key.year == year;
            Observation { value: if hit { o.value * c } else { o.value }, ..o }
        }),
        [],
    )
    .unwrap()
}

#[test]
fn reporter_year_scaling_reweights_the_pseudo_likelihood() {
    // the cell's score contributions scale by c relative to all others, so
    // the estimates move; the dense oracle moves identically
    let fx = small_fixture();
    let (_, base) = fit_fixture(&fx.panel, &fx);
    let scaled = scale_cell(&fx.panel, code("JPN"), 2017, 37.5);
    let (_, fit) = fit_fixture(&scaled, &fx);
    let dense = dense_inputs(&scaled, &fx.distances, &fx.groups);
    let oracle = newton_poisson(&dense.regressors, &dense.fe, &dense.y);
    assert!(max_abs_diff(&fit.estimates(), &oracle.beta) < 1e-6);
    assert!(max_abs_diff(&fit.estimates(), &base.estimates()) > 1e-3);
}

#[test]
fn global_outcome_scaling_is_absorbed() {
    let fx = small_fixture();
    let (_, base) = fit_fixture(&fx.panel, &fx);
    let scaled = Panel::new(Basis::NationalityRestated, fx.panel.iter().map(|o| Observation { value: o.value * 0.001, ..o }), []).unwrap();
    let (_, fit) = fit_fixture(&scaled, &fx);
    assert!(max_abs_diff(&fit.estimates(), &base.estimates()) < 1e-8);
}

#[test]
fn distance_scaling_is_absorbed() {
    let fx = small_fixture();
    let (_, base) = fit_fixture(&fx.panel, &fx);
    let far = SmallFixture { distances: fx.distances.scaled(1.7), ..small_fixture() };
    let (_, fit) = fit_fixture(&fx.panel, &far);
    assert!(max_abs_diff(&fit.estimates(), &base.estimates()) < 1e-8);
}

#[test]
fn zeros_enter_the_likelihood() {
    let fx = small_fixture();
    let (_, base) = fit_fixture(&fx.panel, &fx);
    let positive = fx.panel.filter(|k| fx.panel.value(k).is_some_and(|v| v > 0.0));
    let (_, fit) = fit_fixture(&positive, &fx);
    assert!(max_abs_diff(&fit.estimates(), &base.estimates()) > 1e-6);
}

#[test]
fn repeated_fits_are_bit_identical() {
    let fx = small_fixture();
    let (_, a) = fit_fixture(&fx.panel, &fx);
    let (_, b) = fit_fixture(&fx.panel, &fx);
    let bits = |f: &PpmlFit| f.estimates().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn all_zero_level_is_dropped_and_rest_matches_oracle() {
    let fx = small_fixture();
    // BRA has no holdings at all in 2017
    let zeroed = Panel::new(
        Basis::NationalityRestated,
        fx.panel.iter().map(|o| {
            let zero = o.key.reporter == code("BRA") && o.key.year == 2017;
            Observation { value: if zero { 0.0 } else { o.value }, ..o }
        }),
        [],
    )
    .unwrap();
    let (_, fit) = fit_fixture(&zeroed, &fx);
    assert_eq!(fit.dropped.len(), 4);
    assert!(fit.dropped.iter().all(|d| d.reason == DropReason::Separated && d.key.reporter == code("BRA")));

    let reduced = zeroed.filter(|k| !(k.reporter == code("BRA") && k.year == 2017));
    let dense = dense_inputs(&reduced, &fx.distances, &fx.groups);
    let oracle = newton_poisson(&dense.regressors, &dense.fe, &dense.y);
    assert!(max_abs_diff(&fit.estimates(), &oracle.beta) < 1e-6);

    let design: Design = build_baseline_design(&zeroed, &fx.distances, &fx.groups).unwrap();
    let flagged = detect_separation(&zeroed, &design).unwrap();
    assert_eq!(flagged.len(), 4);
    let strict = FitConfig { separation_policy: SeparationPolicy::Error, ..Default::default() };
    assert!(matches!(fit_ppml(&zeroed, &design, &strict), Err(EstimateError::SeparationDetected(k)) if k.len() == 4));
}

fn keyed_design(cols: Vec<(&str, Vec<f64>)>, layout: Option<FixedEffectLayout>) -> (Vec<ObsKey>, Design) {
    let n = cols[0].1.len();
    let rows: Vec<ObsKey> = (0..n)
        .map(|i| ObsKey::new(CountryCode::from_index(i), CountryCode::from_index(10_000 + i), 2010, Instrument::Equity))
        .collect();
    let regressors = cols
        .into_iter()
        .map(|(name, values)| RegressorColumn { name: name.into(), bucket: Bucket::Group(Group::Row), year: None, reported: true, values })
        .collect();
    let layout = layout.unwrap_or_else(|| FixedEffectLayout::none(n));
    (rows.clone(), DesignSpec::from_parts(SpecVariant::Baseline, rows, regressors, layout, None))
}

fn panel_from(rows: &[ObsKey], y: &[f64]) -> Panel {
    Panel::new(Basis::ResidencyCpis, rows.iter().zip(y).map(|(&key, &value)| Observation { key, value }), []).unwrap()
}

#[test]
fn planted_separation_matches_certificate_search() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100;
        let mut y = vec![0.0; n];
        let mut x0 = vec![0.0; n];
        let mut x1 = vec![0.0; n];
        let mut planted = vec![false; n];
        for i in 0..n {
            x1[i] = rng.random_range(-1.0..1.0);
            let zero = rng.random_bool(0.4);
            if zero && rng.random_bool(0.3) {
                // planted: positive on x0, zero outcome
                planted[i] = true;
                x0[i] = rng.random_range(0.5..2.0);
            } else {
                x0[i] = 0.0;
                x1[i] = if zero { x1[i] } else { x1[i] + if x1[i] >= 0.0 { 0.1 } else { -0.1 } };
            }
            y[i] = if zero { 0.0 } else { rng.random_range(1..20) as f64 };
        }
        let oracle = certificate_search_2d(&x0, &x1, &y);
        assert_eq!(oracle, planted, "seed {seed}: planted set is the maximal certificate");
        let (rows, design) = keyed_design(vec![("x0", x0.clone()), ("x1", x1.clone())], None);
        let panel = panel_from(&rows, &y);
        let flagged = detect_separation(&panel, &design).unwrap();
        let expect: Vec<ObsKey> = rows.iter().zip(&oracle).filter(|(_, &s)| s).map(|(k, _)| *k).collect();
        assert_eq!(flagged, expect, "seed {seed}");
    }
}

#[test]
fn generic_zeros_are_not_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 60;
    let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { rng.random_range(1..9) as f64 }).collect();
    let g: Vec<u32> = (0..n as u32).map(|i| i % 4).collect();
    let layout = FixedEffectLayout::from_dims(n, vec![FeDimension::from_levels("g", &g)]).unwrap();
    let (rows, design) = keyed_design(vec![("x1", x1)], Some(layout));
    assert!(detect_separation(&panel_from(&rows, &y), &design).unwrap().is_empty());
}

#[test]
fn demeaning_matches_dense_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 200;
    let labels: Vec<Vec<u32>> = [13u32, 9, 21].iter().map(|&m| (0..n).map(|_| rng.random_range(0..m)).collect()).collect();
    let dims = labels.iter().enumerate().map(|(d, l)| FeDimension::from_levels(format!("d{d}"), l)).collect();
    let layout = FixedEffectLayout::from_dims(n, dims).unwrap();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let out = absorb_fixed_effects(&cols, &weights, &layout, 1e-13, 100_000).unwrap();
    for (c, o) in cols.iter().zip(&out) {
        let oracle = dense_projection_residual(c, &weights, &labels);
        assert!(max_abs_diff(o, &oracle) < 1e-8);
    }
}

#[test]
fn singletons_are_dropped_with_report() {
    let fx = small_fixture();
    let mut obs: Vec<Observation> = fx.panel.iter().collect();
    // a lone extra reporter-year cell
    obs.push(Observation::new("SGP", "USA", 2015, Instrument::Debt, 500.0));
    let panel = Panel::new(Basis::NationalityRestated, obs, []).unwrap();
    let (_, fit) = fit_fixture(&panel, &fx);
    assert_eq!(fit.dropped.len(), 1);
    assert_eq!(fit.dropped[0].reason, DropReason::Singleton);
    let (_, base) = fit_fixture(&fx.panel, &fx);
    assert!(max_abs_diff(&fit.estimates(), &base.estimates()) < 1e-9);
}

#[test]
fn fit_result_json_has_metadata() {
    let fx = small_fixture();
    let (_, fit) = fit_fixture(&fx.panel, &fx);
    let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
    assert_eq!(v["converged"], true);
    assert_eq!(v["coefficients"].as_array().unwrap().len(), 3);
    assert!(v["iteration_log"].as_array().unwrap().len() as u64 == v["iterations"].as_u64().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaled_cell_fit_matches_oracle(r in 0usize..3, year in 2016i32..=2017, c in 0.01f64..100.0) {
        let fx = small_fixture();
        let scaled = scale_cell(&fx.panel, code(FIXTURE_REPORTERS[r].0), year, c);
        let (_, fit) = fit_fixture(&scaled, &fx);
        let dense = dense_inputs(&scaled, &fx.distances, &fx.groups);
        let oracle = newton_poisson(&dense.regressors, &dense.fe, &dense.y);
        prop_assert!(max_abs_diff(&fit.estimates(), &oracle.beta) < 1e-6);
    }

    #[test]
    fn distance_scaling_any_factor(c in 0.05f64..20.0) {
        let fx = small_fixture();
        let (_, base) = fit_fixture(&fx.panel, &fx);
        let far = SmallFixture { distances: fx.distances.scaled(c), ..small_fixture() };
        let (_, fit) = fit_fixture(&fx.panel, &far);
        prop_assert!(max_abs_diff(&fit.estimates(), &base.estimates()) < 1e-8);
    }

    #[test]
    fn permuted_input_gives_identical_fit(seed in 0u64..1000) {
        let fx = small_fixture();
        let mut obs: Vec<Observation> = fx.panel.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..obs.len()).rev() {
            obs.swap(i, rng.random_range(0..=i));
        }
        let shuffled = Panel::new(Basis::NationalityRestated, obs, []).unwrap();
        let (_, a) = fit_fixture(&fx.panel, &fx);
        let (_, b) = fit_fixture(&shuffled, &fx);
        prop_assert_eq!(a.estimates(), b.estimates());
    }
}

#[test]
fn recovered_fixed_effects_reproduce_fitted_means() {
    let fx = small_fixture();
    let design: Design = build_baseline_design(&fx.panel, &fx.distances, &fx.groups).unwrap();
    let config = FitConfig { recover_fixed_effects: true, ..Default::default() };
    let fit = fit_ppml(&fx.panel, &design, &config).unwrap();
    let sums = fit.fe_sums.as_ref().unwrap();
    assert_eq!(sums.len(), 2);
    let index: BTreeMap<ObsKey, usize> = design.rows().iter().enumerate().map(|(i, k)| (*k, i)).collect();
    for (key, mu) in fit.rows.iter().zip(&fit.fitted) {
        let i = index[key];
        let xb: f64 = design.regressors().iter().zip(fit.estimates()).map(|(c, b)| c.values[i] * b).sum();
        let fe: f64 = design.fixed_effects().dims().iter().zip(sums).map(|(d, s)| s.values[d.levels()[i] as usize]).sum();
        assert!(((xb + fe).exp() - mu).abs() < 1e-6 * mu.max(1.0));
    }
}
