use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use conflict_intensity::data::{self, EventTuple, MappingTables};
use conflict_intensity::eval::{self, ImputationResult, Method};
use conflict_intensity::infer::{self, PosteriorSamples};
use conflict_intensity::model::{self, ModelData, ParamPack, ParamsConstrained, Site, SiteMask};
use conflict_intensity::timeseries::{self, IntensitySeries, SeriesKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{Cli, CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    match &cli.command {
        Command::Fit { sampler, .. }
        | Command::Impute { sampler, .. }
        | Command::SelectC { sampler, .. }
        | Command::Forecast { sampler, .. } => sampler.apply(&mut cfg),
        Command::Simulate { classes, events, .. } => {
            if let Some(c) = classes {
                cfg.classes = *c;
            }
            if let Some(n) = events {
                cfg.events = *n;
            }
        }
        _ => {}
    }
    match &cli.command {
        Command::SelectC { range, seeds, .. } => {
            if let Some(r) = range {
                cfg.class_range = r.clone();
            }
            if let Some(s) = seeds {
                cfg.selection_seeds = *s;
            }
        }
        Command::Forecast { folds, max_lag, .. } => {
            if let Some(f) = folds {
                cfg.folds = *f;
            }
            if let Some(m) = max_lag {
                cfg.max_lag = *m;
            }
        }
        Command::Ingest { mapping: Some(m), .. } => cfg.mapping = Some(m.clone()),
        _ => {}
    }
    cfg.validate()?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    if let Some(w) = cfg.workers {
        // Only fails if a global pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }

    match cli.command {
        Command::Ingest {
            input,
            output,
            skip_report,
            ..
        } => ingest(&cfg, &input, &output, skip_report),
        Command::Simulate {
            output, labels, truth, ..
        } => simulate(&cfg, &output, labels, truth.as_deref()),
        Command::Fit {
            input,
            output,
            diagnostics,
            ..
        } => fit(&cfg, &input, &output, diagnostics),
        Command::Score {
            input,
            posterior,
            output,
        } => score(&cfg, &input, &posterior, &output),
        Command::Impute {
            input,
            output,
            site,
            baselines,
            summary,
            ..
        } => impute(&cfg, &input, &output, site, &baselines, summary.as_deref()),
        Command::SelectC { input, output, .. } => select_c(&cfg, &input, &output),
        Command::Forecast {
            input,
            output,
            location,
            ..
        } => forecast(&cfg, &input, &output, &location),
        Command::Correlate {
            input,
            posterior,
            location,
            output,
            external,
        } => correlate(&cfg, &input, &posterior, &location, &output, &external),
    }
}

fn provenance(command: &str, cfg: &RunConfig, inputs: &[(&str, &Path)]) -> Value {
    let inputs: serde_json::Map<String, Value> = inputs
        .iter()
        .map(|(k, p)| (k.to_string(), Value::String(p.display().to_string())))
        .collect();
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "inputs": inputs,
    })
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    Ok(BufReader::new(File::open(path)?))
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Output file whose first line is a `# config:` provenance comment.
fn csv_output(path: &Path, prov: &Value) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = create_output(path)?;
    writeln!(out, "# config: {prov}")?;
    Ok(csv::Writer::from_writer(out))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_tuples(path: &Path) -> Result<Vec<EventTuple>> {
    Ok(data::read_tuples(open_input(path)?)?)
}

fn read_posterior(path: &Path) -> Result<PosteriorSamples> {
    Ok(infer::read_posterior(open_input(path)?)?)
}

fn ingest(cfg: &RunConfig, input: &Path, output: &Path, skip_report: Option<PathBuf>) -> Result<()> {
    let tables = match &cfg.mapping {
        Some(p) => MappingTables::from_json(open_input(p)?)?,
        None => MappingTables::default(),
    };
    let (tuples, report) = data::ingest(open_input(input)?, &cfg.columns, &tables)?;
    let prov = provenance("ingest", cfg, &[("input", input)]);
    let mut out = create_output(output)?;
    writeln!(out, "# config: {prov}")?;
    data::write_tuples(&mut out, &tuples)?;

    let skip_path = skip_report.unwrap_or_else(|| sibling(output, ".skipped.csv"));
    let mut w = csv_output(&skip_path, &prov)?;
    w.write_record(["row", "reason"])?;
    for s in &report.skipped {
        w.write_record([s.row.to_string(), s.reason.describe().to_string()])?;
    }
    w.flush()?;
    eprintln!(
        "read {} rows, kept {}, skipped {}",
        report.rows_read,
        tuples.len(),
        report.skipped.len()
    );
    for (reason, n) in report.counts() {
        eprintln!("  {reason}: {n}");
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, output: &Path, labels: Option<PathBuf>, truth: Option<&Path>) -> Result<()> {
    let theta = match truth {
        Some(p) => {
            ParamPack::from_json(
                &std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            )?
            .params
        }
        None => model::separated_truth(cfg.classes),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (tuples, z) = model::generate(&theta, cfg.events, &mut rng)?;
    let inputs: Vec<(&str, &Path)> = truth.map(|p| ("truth", p)).into_iter().collect();
    let prov = provenance("simulate", cfg, &inputs);
    let mut out = create_output(output)?;
    writeln!(out, "# config: {prov}")?;
    data::write_tuples(&mut out, &tuples)?;
    out.flush()?;

    let mut w = csv_output(&labels.unwrap_or_else(|| sibling(output, ".labels.csv")), &prov)?;
    w.write_record(["event", "class"])?;
    for (i, c) in z.iter().enumerate() {
        w.write_record([(i + 1).to_string(), c.to_string()])?;
    }
    w.flush()?;
    let pack = ParamPack::new(cfg.hyper_with(theta.classes())?, theta);
    std::fs::write(sibling(output, ".truth.json"), pack.to_json()?)?;
    Ok(())
}

fn fit(cfg: &RunConfig, input: &Path, output: &Path, diagnostics: Option<PathBuf>) -> Result<()> {
    let tuples = read_tuples(input)?;
    let samples = infer::sample_posterior(&ModelData::new(&tuples)?, &cfg.hyper()?, &cfg.sampler()?)?;
    let prov = provenance("fit", cfg, &[("input", input)]);
    infer::write_posterior(create_output(output)?, &samples, Some(prov.clone()))?;
    let diag_path = diagnostics.unwrap_or_else(|| sibling(output, ".diagnostics.json"));
    let doc = json!({ "provenance": prov, "diagnostics": samples.diagnostics });
    let mut d = create_output(&diag_path)?;
    serde_json::to_writer_pretty(&mut d, &doc)?;
    writeln!(d)?;
    report_diagnostics(&samples);
    Ok(())
}

fn report_diagnostics(samples: &PosteriorSamples) {
    let d = &samples.diagnostics;
    for notice in &d.notices {
        log::warn!("{notice}");
    }
    for c in d.flagged() {
        log::warn!("{}: R-hat {:?}, bulk ESS {:?}", c.name, c.rhat, c.ess_bulk);
    }
    eprintln!(
        "{} draws, {} divergences, max R-hat {}, min bulk ESS {}",
        samples.len(),
        d.total_divergences,
        d.max_rhat.map_or("n/a".into(), |v| format!("{v:.3}")),
        d.min_ess_bulk.map_or("n/a".into(), |v| format!("{v:.0}")),
    );
}

fn score(cfg: &RunConfig, input: &Path, posterior: &Path, output: &Path) -> Result<()> {
    let tuples = read_tuples(input)?;
    let samples = read_posterior(posterior)?;
    let est = infer::score_events(&samples, &tuples, SiteMask::ALL);
    let prov = provenance("score", cfg, &[("input", input), ("posterior", posterior)]);
    let mut w = csv_output(output, &prov)?;
    let classes = samples.hyper.classes;
    let mut header = vec![
        "event".to_string(),
        "location".into(),
        "month".into(),
        "z_mean".into(),
        "z_mode".into(),
    ];
    header.extend((1..=classes).map(|c| format!("mass_{c}")));
    w.write_record(&header)?;
    for (i, (t, e)) in tuples.iter().zip(&est).enumerate() {
        let mut rec = vec![
            (i + 1).to_string(),
            t.location.clone(),
            t.month.to_string(),
            e.mean.to_string(),
            e.mode.to_string(),
        ];
        rec.extend(e.mass.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_baselines(s: &str) -> Result<Vec<Method>> {
    s.split(',')
        .map(str::trim)
        .filter(|b| !b.is_empty())
        .map(|b| match b {
            "naive" => Ok(Method::Naive),
            "prior" => Ok(Method::Prior),
            "lr" => Ok(Method::Lr),
            other => Err(CliError::Config(format!(
                "unknown baseline {other:?}; expected naive, prior or lr"
            ))),
        })
        .collect()
}

fn impute(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    site: Option<Site>,
    baselines: &str,
    summary: Option<&Path>,
) -> Result<()> {
    let baselines = parse_baselines(baselines)?;
    let tuples = read_tuples(input)?;
    let (train, test) = data::split(&tuples, cfg.train_fraction, cfg.seed)?;
    let hyper = cfg.hyper()?;
    let sampler = cfg.sampler()?;
    let samples = infer::sample_posterior(&ModelData::new(&train)?, &hyper, &sampler)?;
    report_diagnostics(&samples);
    let thetas: Vec<ParamsConstrained> = samples.thetas().cloned().collect();
    let sites: Vec<Site> = site.map_or(Site::ALL.to_vec(), |s| vec![s]);

    let mut results: Vec<ImputationResult> = Vec::new();
    for &site in &sites {
        results.push(eval::impute(&thetas, &test, site)?);
        for &b in &baselines {
            results.push(match b {
                Method::Naive => {
                    let draws = eval::baseline_naive(&train, site, &hyper, &sampler)?;
                    eval::impute_naive(&draws, &test, site)?
                }
                Method::Prior => {
                    let draws = eval::baseline_prior(&hyper, thetas.len(), cfg.seed)?;
                    eval::impute_with_mask(&draws, &test, site, SiteMask::ALL, Method::Prior)?
                }
                Method::Lr => eval::baseline_lr(&train, site)?.evaluate(&test)?,
                Method::Model => unreachable!("not a baseline"),
            });
        }
    }

    let prov = provenance("impute", cfg, &[("input", input)]);
    let mut w = csv_output(output, &prov)?;
    w.write_record(["site", "method", "sppd", "metric", "value", "seed"])?;
    for r in &results {
        w.write_record([
            r.site.as_str().to_string(),
            r.method.as_str().to_string(),
            r.sppd.as_ref().map_or(String::new(), |s| s.value.to_string()),
            r.metric.clone(),
            r.error.to_string(),
            cfg.seed.to_string(),
        ])?;
    }
    w.flush()?;

    if let Some(path) = summary {
        let rows: Vec<Value> = results
            .iter()
            .map(|r| {
                json!({
                    "site": r.site,
                    "method": r.method,
                    "sppd": r.sppd,
                    "metric": r.metric,
                    "value": r.error,
                })
            })
            .collect();
        let doc = json!({
            "provenance": prov,
            "train_events": train.len(),
            "held_out_events": test.len(),
            "results": rows,
            "diagnostics": {
                "max_rhat": samples.diagnostics.max_rhat,
                "min_ess_bulk": samples.diagnostics.min_ess_bulk,
                "divergences": samples.diagnostics.total_divergences,
            },
        });
        let mut f = create_output(path)?;
        serde_json::to_writer_pretty(&mut f, &doc)?;
        writeln!(f)?;
    }
    Ok(())
}

fn select_c(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let tuples = read_tuples(input)?;
    let (train, test) = data::split(&tuples, cfg.train_fraction, cfg.seed)?;
    let seeds: Vec<u64> = (0..cfg.selection_seeds as u64).map(|i| cfg.seed + i).collect();
    let rows = eval::select_c(&train, &test, &cfg.hyper()?, &cfg.class_range, &seeds, &cfg.sampler()?)?;
    let prov = provenance("select-c", cfg, &[("input", input)]);
    let mut w = csv_output(output, &prov)?;
    w.write_record(["classes", "sppd_mean", "sppd_sd", "fits_ok", "fits"])?;
    for r in &rows {
        w.write_record([
            r.classes.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.per_seed.iter().flatten().count().to_string(),
            r.per_seed.len().to_string(),
        ])?;
    }
    w.flush()?;
    if rows.iter().all(|r| r.per_seed.iter().all(Option::is_none)) {
        return Err(conflict_intensity::Error::Sampler("every fit in the sweep failed".into()).into());
    }
    Ok(())
}

fn location_series(tuples: &[EventTuple], location: &str) -> Result<(IntensitySeries, IntensitySeries)> {
    let p: Vec<f64> = tuples.iter().map(|t| t.predicate).collect();
    let q: Vec<f64> = tuples.iter().map(|t| t.quantifier as f64).collect();
    Ok((
        timeseries::aggregate_monthly(tuples, &p, location, SeriesKind::Predicate)?,
        timeseries::aggregate_monthly(tuples, &q, location, SeriesKind::Quantifier)?,
    ))
}

fn forecast(cfg: &RunConfig, input: &Path, output: &Path, location: &str) -> Result<()> {
    let tuples = read_tuples(input)?;
    let (p, q) = location_series(&tuples, location)?;
    let z = timeseries::leakage_safe_z(&tuples, location, &cfg.hyper()?, &cfg.sampler()?)?;
    let named = [("p", &p.values), ("q", &q.values), ("z", &z.series.values)];
    let diffs: Vec<(&str, Vec<f64>)> = named
        .iter()
        .map(|(n, v)| Ok((*n, timeseries::difference(v)?)))
        .collect::<Result<_>>()?;

    let prov = provenance("forecast", cfg, &[("input", input)]);
    let mut w = csv_output(output, &prov)?;
    w.write_record(["location", "experiment", "metric", "value"])?;
    let mut row =
        |experiment: &str, metric: &str, value: f64| w.write_record([location, experiment, metric, &value.to_string()]);
    for (name, d) in &diffs {
        let adf = timeseries::adf_test(d)?;
        let exp = format!("adf {name}");
        row(&exp, "statistic", adf.statistic)?;
        row(&exp, "critical_value_5pct", adf.critical_value_5pct)?;
        row(&exp, "stationary", f64::from(u8::from(adf.stationary)))?;
        if adf.degenerate {
            log::warn!("series {name} has zero variance after differencing");
        } else if !adf.stationary {
            log::warn!("series {name} may not be stationary after differencing");
        }
    }
    for target in ["p", "q"] {
        let y = &diffs.iter().find(|(n, _)| *n == target).expect("named series").1;
        let ar = timeseries::forecast_cv(&[y], 0, cfg.folds, cfg.max_lag)?;
        row(&format!("{target} -> {target}"), "mse", ar)?;
        for (other, x) in diffs.iter().filter(|(n, _)| *n != target) {
            let exp = format!("{target},{other} -> {target}");
            row(
                &exp,
                "mse",
                timeseries::forecast_cv(&[y, x], 0, cfg.folds, cfg.max_lag)?,
            )?;
            let lag = timeseries::fit_var(&[y, x], cfg.max_lag)?.lag;
            let g = timeseries::granger_test(x, y, lag)?;
            row(&exp, "granger_p", g.p_value)?;
            row(&exp, "lag", lag as f64)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn correlate(
    cfg: &RunConfig,
    input: &Path,
    posterior: &Path,
    location: &str,
    output: &Path,
    external: &[PathBuf],
) -> Result<()> {
    let tuples = read_tuples(input)?;
    let samples = read_posterior(posterior)?;
    let zbar: Vec<f64> = infer::score_events(&samples, &tuples, SiteMask::ALL)
        .iter()
        .map(|e| e.mean)
        .collect();
    let z = timeseries::aggregate_monthly(&tuples, &zbar, location, SeriesKind::Latent)?;
    let (p, q) = location_series(&tuples, location)?;
    let mut series = vec![("z".to_string(), z), ("p".into(), p), ("q".into(), q)];
    for path in external {
        let name = path
            .file_stem()
            .map_or_else(|| "external".into(), |s| s.to_string_lossy().into_owned());
        series.push((
            name,
            timeseries::read_series(open_input(path)?, location, SeriesKind::External)?,
        ));
    }
    let from = series.iter().map(|(_, s)| s.start).max().expect("non-empty");
    let to = series.iter().map(|(_, s)| s.end()).min().expect("non-empty");
    if to < from {
        return Err(conflict_intensity::Error::InsufficientData("the series share no months".into()).into());
    }
    let aligned: Vec<(String, IntensitySeries)> = series
        .into_iter()
        .map(|(n, s)| Ok((n, s.window(from, to)?)))
        .collect::<Result<_>>()?;

    let mut inputs: Vec<(&str, &Path)> = vec![("input", input), ("posterior", posterior)];
    inputs.extend(external.iter().map(|p| ("external", p.as_path())));
    let mut prov = provenance("correlate", cfg, &inputs);
    prov["window"] = json!([from.to_string(), to.to_string()]);
    let mut w = csv_output(output, &prov)?;
    let mut header = vec!["series".to_string()];
    header.extend(aligned.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (a, sa) in &aligned {
        let mut rec = vec![a.clone()];
        for (b, sb) in &aligned {
            rec.push(match timeseries::pearson(&sa.values, &sb.values) {
                Ok(r) => r.to_string(),
                Err(e) => {
                    log::warn!("correlation {a}/{b} undefined: {e}");
                    "NaN".into()
                }
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
