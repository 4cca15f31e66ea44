mod support;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use gravity_core::amount::Amount;
use gravity_core::panel::{assign_groups, Basis, CountryCode, Group, Instrument, ObsKey, Observation, Panel};
use gravity_core::restatement::{
    allocation_shares, destination_edges, passthrough_estimate, restatement_diff, top_destinations, write_destinations_csv,
    DiffAxis, RestatementError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

fn cc(i: usize) -> CountryCode {
    CountryCode::from_index(i)
}

/// Whole-cent values so that f64 sums are exact and comparable to amounts.
fn cents(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0..1_000_000u32) as f64 / 100.0
}

fn random_panel(basis: Basis, seed: u64, n: usize, reporters: usize, partners: usize) -> Panel {
    assert!(n <= reporters * partners);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeMap::new();
    while seen.len() < n {
        let r = rng.random_range(0..reporters);
        let c = reporters + rng.random_range(0..partners);
        seen.insert(ObsKey::new(cc(r), cc(c), 2017, Instrument::Debt), cents(&mut rng));
    }
    Panel::new(basis, seen.into_iter().map(|(key, value)| Observation { key, value }), []).unwrap()
}

#[test]
fn allocation_matches_group_sum_oracle() {
    let p = random_panel(Basis::NationalityRestated, 7, 20, 4, 9);
    let mut membership: Vec<(CountryCode, Group)> = (0..13).map(|i| (cc(i), Group::ALL[i % 3])).collect();
    membership.sort();
    let groups = assign_groups(&p, &membership, false).unwrap();
    let table = allocation_shares(&p, &groups, 2017, Instrument::Debt);

    let group_of: HashMap<CountryCode, Group> = membership.iter().copied().collect();
    let mut oracle: HashMap<(CountryCode, Group), f64> = HashMap::new();
    let mut totals: HashMap<CountryCode, f64> = HashMap::new();
    for o in p.iter() {
        *oracle.entry((o.key.reporter, group_of[&o.key.counterparty])).or_default() += o.value;
        *totals.entry(o.key.reporter).or_default() += o.value;
    }
    assert_eq!(table.rows.len(), totals.len());
    for row in &table.rows {
        let total = totals[&row.reporter];
        assert_eq!(row.total, Amount::from_usd_mn(total));
        let mut share_sum = 0.0;
        for g in Group::ALL {
            let expected = oracle.get(&(row.reporter, g)).copied().unwrap_or(0.0) / total;
            let got = row.share(g).unwrap();
            assert!((got - expected).abs() < 1e-12, "{} {g:?}: {got} vs {expected}", row.reporter);
            share_sum += got;
        }
        assert!((share_sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn top_destinations_match_sort_oracle() {
    let p = random_panel(Basis::NationalityRestated, 11, 90, 3, 30);
    let mut sums: BTreeMap<CountryCode, f64> = BTreeMap::new();
    for o in p.iter() {
        *sums.entry(o.key.counterparty).or_default() += o.value;
    }
    let mut pool: Vec<(CountryCode, f64)> = sums.into_iter().filter(|(_, v)| *v > 0.0).collect();
    // selection by repeated maximum
    let mut oracle = Vec::new();
    while oracle.len() < 10 && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if pool[i].1 > pool[best].1 || (pool[i].1 == pool[best].1 && pool[i].0 < pool[best].0) {
                best = i;
            }
        }
        oracle.push(pool.remove(best).0);
    }
    let got: Vec<CountryCode> = top_destinations(&p, 2017, Instrument::Debt, 10, None).iter().map(|d| d.counterparty).collect();
    assert_eq!(got, oracle);
}

#[test]
fn destination_ties_broken_by_code() {
    let p = Panel::new(
        Basis::NationalityRestated,
        [
            Observation::new("SGP", "USA", 2017, Instrument::Debt, 5.0),
            Observation::new("SGP", "GBR", 2017, Instrument::Debt, 5.0),
            Observation::new("SGP", "AUS", 2017, Instrument::Debt, 5.0),
        ],
        [],
    )
    .unwrap();
    let top = top_destinations(&p, 2017, Instrument::Debt, 2, None);
    assert_eq!(top.iter().map(|d| d.counterparty).collect::<Vec<_>>(), [code("AUS"), code("GBR")]);
    let mut buf = Vec::new();
    write_destinations_csv(&top, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
}

#[test]
fn edges_restricted_to_reporters_and_destinations() {
    let p = random_panel(Basis::NationalityRestated, 3, 40, 5, 10);
    let top = top_destinations(&p, 2017, Instrument::Debt, 3, None);
    let wanted: BTreeSet<CountryCode> = top.iter().map(|d| d.counterparty).collect();
    let subset: BTreeSet<CountryCode> = [cc(0), cc(2)].into();
    let edges = destination_edges(&p, 2017, Instrument::Debt, &top, Some(&subset));
    let oracle: Vec<(CountryCode, CountryCode)> = p
        .iter()
        .filter(|o| o.value > 0.0 && subset.contains(&o.key.reporter) && wanted.contains(&o.key.counterparty))
        .map(|o| o.key.pair())
        .collect();
    assert_eq!(edges.iter().map(|e| (e.source, e.destination)).collect::<Vec<_>>(), oracle);
}

#[test]
fn diff_matches_union_oracle() {
    let res = random_panel(Basis::ResidencyRestated, 21, 15, 2, 12);
    let nat = random_panel(Basis::NationalityRestated, 22, 15, 2, 12);
    let ranking = restatement_diff(&res, &nat, 2017, Instrument::Debt, 5, DiffAxis::BySource).unwrap();
    let union: BTreeSet<ObsKey> = res.keys().chain(nat.keys()).copied().collect();
    for key in &union {
        let expected = nat.value(key).unwrap_or(0.0) - res.value(key).unwrap_or(0.0);
        let got = ranking.get(key.reporter).unwrap().diff_of(key.counterparty);
        assert_eq!(got, Amount::from_usd_mn(nat.value(key).unwrap_or(0.0)) - Amount::from_usd_mn(res.value(key).unwrap_or(0.0)));
        assert!((got.usd_mn() - expected).abs() < 1e-6);
    }
    for e in ranking.entities.values() {
        let mut mags: Vec<Amount> = e.all.iter().filter(|d| !d.diff.is_zero()).map(|d| d.diff.abs()).collect();
        mags.sort_by(|a, b| b.cmp(a));
        mags.truncate(5);
        assert_eq!(e.top.iter().map(|d| d.diff.abs()).collect::<Vec<_>>(), mags);
    }
}

#[test]
fn per_reporter_diff_sums_to_total_difference() {
    let res = random_panel(Basis::ResidencyRestated, 5, 60, 4, 20);
    let nat = random_panel(Basis::NationalityRestated, 6, 60, 4, 20);
    let ranking = restatement_diff(&res, &nat, 2017, Instrument::Debt, 10, DiffAxis::BySource).unwrap();
    for (r, e) in &ranking.entities {
        let total = |p: &Panel| p.iter().filter(|o| o.key.reporter == *r).map(|o| Amount::from_usd_mn(o.value)).sum::<Amount>();
        let diff_sum: Amount = e.all.iter().map(|d| d.diff).sum();
        assert_eq!(diff_sum, total(&nat) - total(&res));
        assert_eq!(diff_sum, e.nationality_total - e.residency_total);
    }
}

#[test]
fn by_destination_transposes_by_source() {
    let res = random_panel(Basis::ResidencyRestated, 8, 30, 3, 12);
    let nat = random_panel(Basis::NationalityRestated, 9, 30, 3, 12);
    let src = restatement_diff(&res, &nat, 2017, Instrument::Debt, 100, DiffAxis::BySource).unwrap();
    let dst = restatement_diff(&res, &nat, 2017, Instrument::Debt, 100, DiffAxis::ByDestination).unwrap();
    for (r, e) in &src.entities {
        for d in &e.all {
            assert_eq!(dst.get(d.other).unwrap().diff_of(*r), d.diff);
        }
    }
}

#[test]
fn absent_year_is_an_error() {
    let res = random_panel(Basis::ResidencyRestated, 1, 5, 2, 3);
    let err = restatement_diff(&res, &res, 2016, Instrument::Debt, 3, DiffAxis::BySource).unwrap_err();
    assert!(matches!(err, RestatementError::YearAbsent(2016, "residency")));
}

#[test]
fn singapore_passthrough_example() {
    let (sgp, usa, cym, vgb) = (code("SGP"), code("USA"), code("CYM"), code("VGB"));
    let obs = |usa_v, cym_v, vgb_v| {
        [(usa, usa_v), (cym, cym_v), (vgb, vgb_v)]
            .into_iter()
            .map(move |(c, v)| Observation { key: ObsKey::new(sgp, c, 2017, Instrument::Debt), value: v })
    };
    // USD mn; the rise in US holdings equals the drop in the havens
    let res = Panel::new(Basis::ResidencyRestated, obs(10_000.0, 30_000.0, 20_000.0), []).unwrap();
    let nat = Panel::new(Basis::NationalityRestated, obs(60_000.0, 0.0, 0.0), []).unwrap();
    let ranking = restatement_diff(&res, &nat, 2017, Instrument::Debt, 10, DiffAxis::BySource).unwrap();
    let est = passthrough_estimate(ranking.get(sgp).unwrap(), &[(cym, usa), (vgb, usa)]);
    let t = &est.targets[0];
    assert_eq!(t.attributed.usd_bn(), 50.0);
    assert_eq!(t.residual, Amount::ZERO);
    assert_eq!(est.label, "heuristic");
    assert_eq!(t.trail, "50-30-20=0 (USD bn)");
}

#[test]
fn malaysia_residual_example() {
    let (mys, chn, hkg, cym) = (code("MYS"), code("CHN"), code("HKG"), code("CYM"));
    let obs = |chn_v, hkg_v, cym_v| {
        [(chn, chn_v), (hkg, hkg_v), (cym, cym_v)]
            .into_iter()
            .map(move |(c, v)| Observation { key: ObsKey::new(mys, c, 2017, Instrument::Debt), value: v })
    };
    let res = Panel::new(Basis::ResidencyRestated, obs(1_000.0, 4_000.0, 2_000.0), []).unwrap();
    let nat = Panel::new(Basis::NationalityRestated, obs(6_500.0, 1_500.0, 1_000.0), []).unwrap();
    let ranking = restatement_diff(&res, &nat, 2017, Instrument::Debt, 10, DiffAxis::BySource).unwrap();
    let est = passthrough_estimate(ranking.get(mys).unwrap(), &[(hkg, chn), (cym, chn), (hkg, chn)]);
    let t = &est.targets[0];
    assert_eq!(t.haven_drops.iter().map(|(h, _)| *h).collect::<Vec<_>>(), [hkg, cym]);
    assert_eq!(t.attributed.usd_bn(), 3.5);
    assert_eq!(t.residual.usd_bn(), 2.0);
    assert_eq!(t.trail, "5.5-2.5-1=2 (USD bn)");
}

fn split_panels(values: &[(usize, usize, i64, i64)]) -> (Panel, Panel) {
    let mut single = Vec::new();
    let mut split = Vec::new();
    for &(r, c, a, b) in values {
        let pair = (cc(r), cc(10 + c));
        single.push(Observation { key: ObsKey::new(pair.0, pair.1, 2017, Instrument::Debt), value: (a + b) as f64 / 100.0 });
        split.push(Observation { key: ObsKey::new(pair.0, pair.1, 2017, Instrument::Debt), value: a as f64 / 100.0 });
        split.push(Observation { key: ObsKey::new(pair.0, pair.1, 2017, Instrument::Equity), value: b as f64 / 100.0 });
    }
    (
        Panel::new(Basis::NationalityRestated, single, []).unwrap(),
        Panel::new(Basis::NationalityRestated, split, []).unwrap(),
    )
}

proptest! {
    #[test]
    fn splitting_across_instruments_preserves_totals(
        cells in proptest::collection::btree_map((0usize..4, 0usize..6), (0i64..1_000_000, 0i64..1_000_000), 1..20),
    ) {
        let flat: Vec<(usize, usize, i64, i64)> = cells.iter().map(|(&(r, c), &(a, b))| (r, c, a, b)).collect();
        let (single, split) = split_panels(&flat);
        let a = top_destinations(&single, 2017, Instrument::Debt, 100, None);
        let b = top_destinations(&split, 2017, Instrument::Total, 100, None);
        prop_assert_eq!(a, b);
        prop_assume!(!single.is_empty());
        let one_key = single.iter().next().unwrap().key;
        let res = Panel::new(Basis::ResidencyRestated, [Observation { key: one_key, value: 0.0 }], []).unwrap();
        let da = restatement_diff(&res, &single, 2017, Instrument::Debt, 5, DiffAxis::BySource).unwrap();
        let db = restatement_diff(&res, &split, 2017, Instrument::Total, 5, DiffAxis::BySource).unwrap();
        for (r, e) in &da.entities {
            prop_assert_eq!(&e.top, &db.get(*r).unwrap().top);
        }
    }

    #[test]
    fn appending_zero_keys_changes_nothing(seed in 0u64..500, extra in proptest::collection::btree_set((0usize..4, 0usize..20), 0..15)) {
        let res = random_panel(Basis::ResidencyRestated, seed, 25, 4, 20);
        let nat = random_panel(Basis::NationalityRestated, seed + 1000, 25, 4, 20);
        let mut padded: Vec<Observation> = nat.iter().collect();
        for (r, c) in extra {
            let key = ObsKey::new(cc(r), cc(4 + c), 2017, Instrument::Debt);
            if nat.value(&key).is_none() && res.value(&key).is_none() {
                padded.push(Observation { key, value: 0.0 });
            }
        }
        let padded = Panel::new(Basis::NationalityRestated, padded, []).unwrap();
        let a = restatement_diff(&res, &nat, 2017, Instrument::Debt, 5, DiffAxis::BySource).unwrap();
        let b = restatement_diff(&res, &padded, 2017, Instrument::Debt, 5, DiffAxis::BySource).unwrap();
        for (r, e) in &a.entities {
            prop_assert_eq!(&e.top, &b.get(*r).unwrap().top);
        }
        prop_assert_eq!(top_destinations(&nat, 2017, Instrument::Debt, 10, None), top_destinations(&padded, 2017, Instrument::Debt, 10, None));
    }
}
