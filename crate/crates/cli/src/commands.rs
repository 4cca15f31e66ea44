use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use gravity_core::design::{build_baseline_design, build_timevarying_design, DesignSpec, TimeVaryingOptions};
use gravity_core::estimator::{fit_ppml, DropReason, EstimateError, FitConfig, FitResult, SeparationPolicy};
use gravity_core::geo::{bin_holdings, build_distance_table, build_panel_distances, read_city_file, read_distance_file, BinSpec, DistanceTable, TagScheme};
use gravity_core::inference::{cluster_vcov, coefficient_table, write_coefficient_table, ClusterDim, CoefficientRow};
use gravity_core::panel::{
    ingest_panel_with_report, merge_zero_fill, read_membership, Basis, ColumnMap, CountryCode, ExcludedBucket, Group,
    GroupAssignment, IngestOptions, Instrument, MissingPolicy, ObsKey, Panel, SampleWindow,
};
use gravity_core::restatement::{
    allocation_shares, destination_edges, passthrough_estimate, restatement_diff, top_destinations, write_destinations_csv,
    write_edges_csv,
};
use gravity_core::synth::{generate_panel, write_cities, write_groups, DgpConfig};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{write_run, Artifacts, Inputs, RunConfig};
use crate::{
    BinsArgs, Command, DistanceArgs, EstimateArgs, ExcludedBucketArg, GeoArgs, GroupArgs, IngestArgs, Outcome,
    RestateDiffArgs, SharesArgs, SpecArg, SynthArgs, TagArg, TopkArgs,
};

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Distance(a) => distance(a),
        Command::Estimate(a) => estimate(a),
        Command::Bins(a) => bins(a),
        Command::Shares(a) => shares(a),
        Command::Topk(a) => topk(a),
        Command::RestateDiff(a) => restate_diff(a),
        Command::Synth(a) => synth(a),
    }
}

fn parse_code(raw: &str) -> Result<CountryCode> {
    CountryCode::new(raw.trim()).map_err(|e| anyhow!("{e}"))
}

fn parse_codes(raw: &[String]) -> Result<BTreeSet<CountryCode>> {
    raw.iter().map(|s| parse_code(s)).collect()
}

/// Reads a panel already in canonical form; no year window is applied.
fn read_canonical(inputs: &mut Inputs, role: &str, path: &Path, basis: Basis) -> Result<Panel> {
    let bytes = inputs.read(role, path)?;
    let options = IngestOptions { window: SampleWindow { first: i32::MIN, last: i32::MAX }, ..Default::default() };
    let (panel, _) = ingest_panel_with_report(bytes.as_slice(), basis, &ColumnMap::default(), &options)
        .with_context(|| format!("{} {}", role, path.display()))?;
    Ok(panel)
}

fn load_groups(inputs: &mut Inputs, args: &GroupArgs, panel: &Panel) -> Result<(GroupAssignment, Vec<String>)> {
    let bytes = inputs.read("groups", &args.groups)?;
    let entries = read_membership(bytes.as_slice()).with_context(|| format!("groups {}", args.groups.display()))?;
    let mut excluded: BTreeSet<CountryCode> = entries.iter().filter(|e| e.exclude).map(|e| e.country).collect();
    excluded.extend(parse_codes(&args.exclude_reporter)?);
    let reporters = panel.reporters();
    for code in excluded.iter().filter(|c| !reporters.contains(c)) {
        log::warn!("excluded country {code} is not a reporter of the panel");
    }
    let bucket = match args.excluded_bucket {
        ExcludedBucketArg::Separate => ExcludedBucket::Separate,
        ExcludedBucketArg::Row => ExcludedBucket::Row,
    };
    let groups = GroupAssignment::new(panel, entries.iter().map(|e| (e.country, e.group)), excluded.iter().copied(), bucket)
        .with_context(|| format!("groups {}", args.groups.display()))?;
    Ok((groups, excluded.iter().map(|c| c.to_string()).collect()))
}

fn load_distances(inputs: &mut Inputs, args: &GeoArgs, panel: &Panel) -> Result<DistanceTable> {
    match (&args.distances, &args.cities) {
        (Some(path), _) => {
            let bytes = inputs.read("distances", path)?;
            read_distance_file(bytes.as_slice()).with_context(|| format!("distances {}", path.display()))
        }
        (None, Some(path)) => {
            let bytes = inputs.read("cities", path)?;
            let cities = read_city_file(bytes.as_slice()).with_context(|| format!("cities {}", path.display()))?;
            build_panel_distances(&cities, panel).with_context(|| format!("cities {}", path.display()))
        }
        (None, None) => bail!("one of --distances or --cities is required"),
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn ingest(a: IngestArgs) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let bytes = inputs.read("input", &a.input)?;
    let basis: Basis = a.basis.into();
    let delimiter = u8::try_from(a.delimiter).map_err(|_| anyhow!("delimiter must be a single-byte character"))?;
    let schema = ColumnMap {
        year: a.col_year.clone(),
        reporter: a.col_reporter.clone(),
        counterparty: a.col_counterparty.clone(),
        instrument: a.col_instrument.clone(),
        value: a.col_value.clone(),
    };
    let options = IngestOptions {
        delimiter,
        window: SampleWindow { first: a.first_year, last: a.last_year },
        ..IngestOptions::for_basis(basis)
    };
    let (panel, report) = ingest_panel_with_report(bytes.as_slice(), basis, &schema, &options)
        .with_context(|| format!("input {}", a.input.display()))?;

    let policy = if a.missing_as_zero { MissingPolicy::MissingAsZero } else { MissingPolicy::KeepMissing };
    let mut universe: BTreeSet<ObsKey> = panel.keys().copied().collect();
    if !a.no_zero_fill {
        let instruments: BTreeSet<Instrument> =
            panel.keys().map(|k| k.instrument).filter(|&i| i != Instrument::Total).collect();
        for i in instruments {
            universe.extend(panel.full_universe(i));
        }
    }
    let filled = merge_zero_fill(&panel, &universe, policy)?;

    let mut artifacts = Artifacts::default();
    artifacts.add("panel.csv", csv_bytes(|b| Ok(filled.write_csv(b)?))?);
    artifacts.add_json(
        "ingest_report.json",
        &json!({
            "rows": report.rows,
            "observed": report.observed,
            "missing": report.missing,
            "suppressed": report.suppressed,
            "out_of_window": report.out_of_window,
            "zero_filled": filled.len() - panel.len(),
            "final_observed": filled.len(),
            "final_missing": filled.missing_len(),
        }),
    )?;
    let config = RunConfig {
        command: "ingest".into(),
        basis: Some(basis.as_str().into()),
        parameters: [
            ("delimiter".to_string(), json!(a.delimiter.to_string())),
            ("columns".to_string(), json!(schema.names())),
            ("first_year".to_string(), json!(a.first_year)),
            ("last_year".to_string(), json!(a.last_year)),
            ("zero_fill".to_string(), json!(!a.no_zero_fill)),
            ("missing_as_zero".to_string(), json!(a.missing_as_zero)),
        ]
        .into(),
        ..Default::default()
    };
    write_run(&a.out.out, config, inputs, artifacts)?;
    Ok(Outcome::Done)
}

fn distance(a: DistanceArgs) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let bytes = inputs.read("cities", &a.cities)?;
    let cities = read_city_file(bytes.as_slice()).with_context(|| format!("cities {}", a.cities.display()))?;
    let table = match &a.panel {
        Some(path) => {
            let panel = read_canonical(&mut inputs, "panel", path, Basis::NationalityRestated)?;
            build_panel_distances(&cities, &panel)?
        }
        None => build_distance_table(&cities)?,
    };
    let mut artifacts = Artifacts::default();
    artifacts.add("distances.csv", csv_bytes(|b| Ok(table.write_csv(b)?))?);
    let config = RunConfig { command: "distance".into(), ..Default::default() };
    write_run(&a.out.out, config, inputs, artifacts)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct VcovReport {
    names: Vec<String>,
    matrix: Vec<Vec<f64>>,
    cluster: &'static str,
    n_clusters: usize,
    dof_correction: f64,
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    spec: &'static str,
    basis: &'static str,
    instrument: &'static str,
    base_year: Option<i32>,
    level: f64,
    converged: bool,
    iterations: usize,
    deviance: f64,
    n_obs: usize,
    n_dropped_observations: usize,
    coefficients: &'a [CoefficientRow],
    vcov: Option<VcovReport>,
}

fn estimate(a: EstimateArgs) -> Result<Outcome> {
    if a.instrument == crate::InstrumentArg::Total {
        bail!("estimation needs --instrument debt or equity");
    }
    if !(a.level > 0.0 && a.level < 1.0) {
        bail!("--level must lie in (0, 1)");
    }
    let basis: Basis = a.basis.into();
    let instrument: Instrument = a.instrument.into();
    let mut inputs = Inputs::default();
    let full = read_canonical(&mut inputs, "panel", &a.panel, basis)?;
    let panel = full.filter(|k| k.instrument == instrument);
    if panel.is_empty() {
        bail!("panel {} has no {} rows", a.panel.display(), instrument);
    }
    let (groups, exclusions) = load_groups(&mut inputs, &a.groups, &panel)?;
    let distances = load_distances(&mut inputs, &a.geo, &panel)?;

    let design: DesignSpec<f64> = match a.spec {
        SpecArg::Baseline => build_baseline_design(&panel, &distances, &groups)?,
        SpecArg::Timevarying => build_timevarying_design(
            &panel,
            &distances,
            &groups,
            TimeVaryingOptions { base_year: a.base_year, include_row: a.include_row },
        )?,
    };
    let config = FitConfig {
        tol_deviance: a.tol,
        max_iter_irls: a.max_iter,
        separation_policy: if a.strict_separation { SeparationPolicy::Error } else { SeparationPolicy::DropAndRefit },
        ..FitConfig::default()
    };
    let cluster: ClusterDim = a.cluster.into();
    let (fit, outcome) = match fit_ppml(&panel, &design, &config) {
        Ok(fit) => (fit, Outcome::Done),
        Err(EstimateError::NotConverged(fit)) => (*fit, Outcome::NotConverged),
        Err(e) => return Err(e).context("estimation failed"),
    };

    let (rows, vcov) = if outcome == Outcome::Done {
        let vcov = cluster_vcov(&fit, &panel, &design, cluster).context("clustered covariance")?;
        (coefficient_table(&fit, &vcov, a.level), Some(vcov))
    } else {
        (unconverged_rows(&fit), None)
    };

    let mut artifacts = Artifacts::default();
    artifacts.add("coefficients.csv", csv_bytes(|b| Ok(write_coefficient_table(&rows, b)?))?);
    let report = EstimateReport {
        spec: design.variant.as_str(),
        basis: basis.as_str(),
        instrument: instrument.as_str(),
        base_year: design.base_year(),
        level: a.level,
        converged: fit.converged,
        iterations: fit.iterations,
        deviance: fit.deviance,
        n_obs: fit.n_obs,
        n_dropped_observations: fit.dropped.len(),
        coefficients: &rows,
        vcov: vcov.as_ref().map(|v| VcovReport {
            names: v.names.clone(),
            matrix: (0..v.names.len()).map(|i| (0..v.names.len()).map(|j| v.matrix[(i, j)]).collect()).collect(),
            cluster: v.cluster_dimension.as_str(),
            n_clusters: v.n_clusters,
            dof_correction: v.dof_correction,
        }),
    };
    artifacts.add_json("coefficients.json", &report)?;
    artifacts.add("convergence.csv", csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        for rec in &fit.iteration_log {
            w.serialize(rec)?;
        }
        w.flush()?;
        Ok(())
    })?);
    artifacts.add("collinearity.csv", csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["name", "reason"])?;
        for d in &fit.dropped_columns {
            w.write_record([&d.name, &d.reason])?;
        }
        w.flush()?;
        Ok(())
    })?);
    artifacts.add("separation.csv", csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["reporter", "counterparty", "year", "instrument", "reason"])?;
        for d in &fit.dropped {
            let reason = match d.reason {
                DropReason::Singleton => "singleton",
                DropReason::Separated => "separated",
            };
            let k = d.key;
            w.write_record([k.reporter.to_string(), k.counterparty.to_string(), k.year.to_string(), k.instrument.to_string(), reason.into()])?;
        }
        w.flush()?;
        Ok(())
    })?);
    artifacts.add_json("design.json", &design.diagnostics())?;

    let run_config = RunConfig {
        command: "estimate".into(),
        basis: Some(basis.as_str().into()),
        instrument: Some(instrument.as_str().into()),
        spec: Some(design.variant.as_str().into()),
        base_year: design.base_year(),
        exclusions,
        parameters: [
            ("cluster".to_string(), json!(cluster.as_str())),
            ("include_row".to_string(), json!(a.include_row)),
            ("excluded_bucket".to_string(), json!(format!("{:?}", a.groups.excluded_bucket).to_lowercase())),
            ("level".to_string(), json!(a.level)),
            ("fit_config".to_string(), serde_json::to_value(&config)?),
        ]
        .into(),
    };
    write_run(&a.out.out, run_config, inputs, artifacts)?;
    Ok(outcome)
}

fn unconverged_rows(fit: &FitResult<f64>) -> Vec<CoefficientRow> {
    fit.coefficients
        .iter()
        .filter(|c| c.reported)
        .map(|c| CoefficientRow {
            name: c.name.clone(),
            beta: c.estimate,
            se: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
            n_obs: fit.n_obs,
            n_clusters: 0,
        })
        .collect()
}

fn tag_scheme(tags: TagArg) -> TagScheme {
    match tags {
        TagArg::UsChinaOther => TagScheme::us_china_other(),
        TagArg::Groups => Group::ALL.iter().fold(TagScheme::new(Group::Row.as_str()), |s, &g| s.tag_group(g, g.as_str())),
        TagArg::None => TagScheme::new("all"),
    }
}

fn bins(a: BinsArgs) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let panel = read_canonical(&mut inputs, "panel", &a.panel, Basis::NationalityRestated)?;
    let (groups, exclusions) = load_groups(&mut inputs, &a.groups, &panel)?;
    let distances = load_distances(&mut inputs, &a.geo, &panel)?;
    let spec = BinSpec { width_km: a.bin_width, n_bins: a.n_bins };
    let hists = bin_holdings(&panel, &distances, &groups, &tag_scheme(a.tags), spec)?;

    let mut artifacts = Artifacts::default();
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(["group", "year", "instrument", "total_usd_bn", "binned_usd_bn"])?;
    for (slice, hist) in &hists {
        let name = format!("bins_{}_{}_{}.csv", slice.group.as_str(), slice.year, slice.instrument);
        artifacts.add(name, csv_bytes(|b| Ok(hist.write_csv(b)?))?);
        summary.write_record([
            slice.group.as_str().to_string(),
            slice.year.to_string(),
            slice.instrument.to_string(),
            format!("{:.6}", hist.total.usd_bn()),
            format!("{:.6}", hist.bins_total().usd_bn()),
        ])?;
    }
    artifacts.add("bins_summary.csv", summary.into_inner().map_err(|e| anyhow!("{e}"))?);
    let config = RunConfig {
        command: "bins".into(),
        exclusions,
        parameters: [
            ("bin_width_km".to_string(), json!(a.bin_width)),
            ("n_bins".to_string(), json!(a.n_bins)),
            ("tags".to_string(), json!(format!("{:?}", a.tags).to_lowercase())),
        ]
        .into(),
        ..Default::default()
    };
    write_run(&a.out.out, config, inputs, artifacts)?;
    Ok(Outcome::Done)
}

fn shares(a: SharesArgs) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let panel = read_canonical(&mut inputs, "panel", &a.panel, Basis::NationalityRestated)?;
    let (groups, exclusions) = load_groups(&mut inputs, &a.groups, &panel)?;
    let instrument: Instrument = a.instrument.into();
    let years: Vec<i32> = match a.year {
        Some(y) if !panel.years().contains(&y) => bail!("year {y} is absent from panel {}", a.panel.display()),
        Some(y) => vec![y],
        None => panel.years().into_iter().collect(),
    };
    let mut artifacts = Artifacts::default();
    for year in years {
        let table = allocation_shares(&panel, &groups, year, instrument);
        artifacts.add(format!("shares_{instrument}_{year}.csv"), csv_bytes(|b| Ok(table.write_csv(b)?))?);
    }
    let config = RunConfig {
        command: "shares".into(),
        instrument: Some(instrument.as_str().into()),
        exclusions,
        parameters: [("year".to_string(), json!(a.year))].into(),
        ..Default::default()
    };
    write_run(&a.out.out, config, inputs, artifacts)?;
    Ok(Outcome::Done)
}

fn topk(a: TopkArgs) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let panel = read_canonical(&mut inputs, "panel", &a.panel, Basis::NationalityRestated)?;
    if !panel.years().contains(&a.year) {
        bail!("year {} is absent from panel {}", a.year, a.panel.display());
    }
    let instrument: Instrument = a.instrument.into();
    let reporters = parse_codes(&a.reporters)?;
    let filter = (!reporters.is_empty()).then_some(&reporters);
    let top = top_destinations(&panel, a.year, instrument, a.k, filter);
    let edges = destination_edges(&panel, a.year, instrument, &top, filter);
    let mut artifacts = Artifacts::default();
    artifacts.add("destinations.csv", csv_bytes(|b| Ok(write_destinations_csv(&top, b)?))?);
    artifacts.add("edges.csv", csv_bytes(|b| Ok(write_edges_csv(&edges, b)?))?);
    let config = RunConfig {
        command: "topk".into(),
        instrument: Some(instrument.as_str().into()),
        parameters: [
            ("year".to_string(), json!(a.year)),
            ("k".to_string(), json!(a.k)),
            ("reporters".to_string(), json!(reporters.iter().map(|c| c.to_string()).collect::<Vec<_>>())),
        ]
        .into(),
        ..Default::default()
    };
    write_run(&a.out.out, config, inputs, artifacts)?;
    Ok(Outcome::Done)
}

fn parse_hypothesis(raw: &[String]) -> Result<Vec<(CountryCode, CountryCode)>> {
    raw.iter()
        .map(|s| {
            let (h, t) = s.split_once(':').ok_or_else(|| anyhow!("pass-through pair {s:?} is not HAVEN:TARGET"))?;
            Ok((parse_code(h)?, parse_code(t)?))
        })
        .collect()
}

fn restate_diff(a: RestateDiffArgs) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let residency = read_canonical(&mut inputs, "residency", &a.residency, Basis::ResidencyRestated)?;
    let nationality = read_canonical(&mut inputs, "nationality", &a.nationality, Basis::NationalityRestated)?;
    let instrument: Instrument = a.instrument.into();
    let hypothesis = parse_hypothesis(&a.passthrough)?;
    let entities = parse_codes(&a.entity)?;
    let ranking = restatement_diff(&residency, &nationality, a.year, instrument, a.k, a.axis.into())?;

    let mut artifacts = Artifacts::default();
    artifacts.add("diff.csv", csv_bytes(|b| Ok(ranking.write_csv(b)?))?);
    if !hypothesis.is_empty() {
        let mut estimates = Vec::new();
        for (code, diff) in &ranking.entities {
            if entities.is_empty() || entities.contains(code) {
                estimates.push(passthrough_estimate(diff, &hypothesis));
            }
        }
        let missing: Vec<String> = entities.iter().filter(|c| !ranking.entities.contains_key(c)).map(|c| c.to_string()).collect();
        if !missing.is_empty() {
            bail!("entities absent from both panels in {}: {}", a.year, missing.join(", "));
        }
        artifacts.add_json("passthrough.json", &estimates)?;
    }
    let axis = match a.axis {
        crate::AxisArg::BySource => "by-source",
        crate::AxisArg::ByDestination => "by-destination",
    };
    let config = RunConfig {
        command: "restate-diff".into(),
        instrument: Some(instrument.as_str().into()),
        parameters: [
            ("year".to_string(), json!(a.year)),
            ("k".to_string(), json!(a.k)),
            ("axis".to_string(), json!(axis)),
            ("passthrough".to_string(), json!(hypothesis.iter().map(|(h, t)| format!("{h}:{t}")).collect::<Vec<_>>())),
            ("entities".to_string(), json!(entities.iter().map(|c| c.to_string()).collect::<Vec<_>>())),
        ]
        .into(),
        ..Default::default()
    };
    write_run(&a.out.out, config, inputs, artifacts)?;
    Ok(Outcome::Done)
}

fn synth(a: SynthArgs) -> Result<Outcome> {
    let cfg = DgpConfig {
        n_reporters: a.n_reporters,
        n_counterparties: a.n_counterparties,
        first_year: a.first_year,
        last_year: a.last_year,
        instrument: a.instrument.into(),
        basis: a.basis.into(),
        true_beta: BTreeMap::from([(Group::Asean, a.beta_asean), (Group::Oecd, a.beta_oecd), (Group::Row, a.beta_row)]),
        zero_inflation: a.zero_inflation,
        seed: a.seed,
        base_mean: a.base_mean,
        ..DgpConfig::default()
    };
    let data = generate_panel(&cfg)?;
    let mut artifacts = Artifacts::default();
    artifacts.add("panel.csv", csv_bytes(|b| Ok(data.panel.write_csv(b)?))?);
    artifacts.add("cities.csv", csv_bytes(|b| Ok(write_cities(&data.cities, b)?))?);
    artifacts.add("groups.csv", csv_bytes(|b| Ok(write_groups(&data.groups, b)?))?);
    artifacts.add_json(
        "truth.json",
        &json!({
            "config": cfg,
            "beta": data.truth.beta,
            "n_obs": data.panel.len(),
            "structural_zeros": data.truth.structural_zeros.len(),
            "zeros": data.panel.iter().filter(|o| o.value == 0.0).count(),
        }),
    )?;
    let config = RunConfig {
        command: "synth".into(),
        basis: Some(cfg.basis.as_str().into()),
        instrument: Some(cfg.instrument.as_str().into()),
        parameters: [("dgp".to_string(), serde_json::to_value(&cfg)?)].into(),
        ..Default::default()
    };
    write_run(&a.out.out, config, Inputs::default(), artifacts)?;
    Ok(Outcome::Done)
}
