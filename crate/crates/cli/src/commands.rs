use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use mefuse_core::analysis::{coverage_diagnostic, estimate_table, format_sig6, sensitivity_report, CoverageReport};
use mefuse_core::data::{load_error_prone, load_gold, ErrorProneDataset};
use mefuse_core::design::{build_gold_posterior, TrueDataPosterior};
use mefuse_core::gibbs::{impute_cia, GibbsSampler, ImputationSet, ParamTrace};
use mefuse_core::models::{
    build_preset, check_identifiability as count_params, IdentifiabilityReport, MeasurementModel, Preset, PresetModel,
    PresetOptions, PriorTable,
};
use mefuse_core::schema::{Level, Schema};
use mefuse_core::sim::{simulate_linked, table1_scenario, SimScenario, Table1Options};
use mefuse_core::DataError;
use serde::Serialize;

use crate::config::{DataFile, LoadedConfig, ModelSource, SimulationConfig};
use crate::manifest::Recorder;
use crate::{CliError, EXIT_IDENTIFIABILITY, EXIT_OK};

pub const POSTERIOR_FILE: &str = "posterior.json";
pub const POSTERIOR_SUMMARY_FILE: &str = "posterior_summary.csv";
pub const TRACE_FILE: &str = "trace.json";
pub const MODEL_FILE: &str = "model.json";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const COVERAGE_FILE: &str = "coverage.csv";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const SCHEMA_FILE: &str = "schema.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text + "\n").map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    Ok(path.to_path_buf())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| DataError::Csv { path: path.to_path_buf(), source }.into()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    Ok(path.to_path_buf())
}

fn load_error_prone_file(cfg: &LoadedConfig, f: &DataFile, schema: &Schema, rec: &mut Recorder) -> Result<(ErrorProneDataset, String), CliError> {
    let path = cfg.resolve(&f.path);
    let digest = rec.input(&f.path, &path)?;
    Ok((load_error_prone(&path, schema, &f.columns)?, digest))
}

fn load_posterior(cfg: &LoadedConfig, rec: &mut Recorder) -> Result<(TrueDataPosterior, String), CliError> {
    let p = cfg.require(&cfg.config.posterior, "posterior")?;
    let path = cfg.resolve(p);
    let digest = rec.input(p, &path)?;
    Ok((TrueDataPosterior::read_json(&path)?, digest))
}

pub fn estimate_gold(cfg: &LoadedConfig) -> Result<i32, CliError> {
    let out = cfg.out_dir()?;
    let schema = cfg.schema()?;
    let mut rec = Recorder::default();
    let g = cfg.require(&cfg.config.gold, "gold")?;
    let gold_path = cfg.resolve(&g.path);
    rec.input(&g.path, &gold_path)?;
    let gold = load_gold(&gold_path, &schema, &g.columns)?;
    let ep = match &cfg.config.error_prone {
        Some(f) if schema.true_levels > schema.reported_levels => Some(load_error_prone_file(cfg, f, &schema, &mut rec)?.0),
        _ => None,
    };
    let built = build_gold_posterior(&gold, ep.as_ref(), &schema, cfg.config.augment, cfg.augmentation_draws(), cfg.seed())?;
    create_dir(out)?;
    let post_path = out.join(POSTERIOR_FILE);
    built.posterior.write_json(&post_path)?;
    rec.output(post_path);

    let counts = gold.counts_by_cell(&schema);
    let mut header = vec!["cell".to_string(), "gold_records".to_string()];
    header.extend((0..schema.true_levels).map(|k| format!("share_{}", schema.outcome_label(Level::from_index(k)))));
    let mut rows = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        let mut row = vec![schema.cell_label(c), n.to_string()];
        match built.posterior.cell(c) {
            Some(p) => row.extend(p.mean_shares().into_iter().map(format_sig6)),
            None => row.extend((0..schema.true_levels).map(|_| String::new())),
        }
        rows.push(row);
    }
    rec.output(write_csv(&out.join(POSTERIOR_SUMMARY_FILE), &header, &rows)?);
    println!(
        "{} gold records, {} cells x {} levels{}",
        gold.len(),
        schema.n_cells(),
        schema.true_levels,
        if built.augmented { ", unreportable level recovered from error-prone totals" } else { "" }
    );
    println!("{}", header.join("\t"));
    for r in &rows {
        println!("{}", r.join("\t"));
    }
    rec.finish("estimate-gold", &cfg.config, cfg.seed(), out)?;
    Ok(EXIT_OK)
}

enum Resolved {
    Cia,
    Model(MeasurementModel),
}

struct ResolvedModel {
    model: Resolved,
    label: String,
    /// Digests of prior files, by role.
    digests: Vec<(String, String)>,
}

fn resolve_model(cfg: &LoadedConfig, schema: &Schema, rec: &mut Recorder) -> Result<ResolvedModel, CliError> {
    let mut digests = Vec::new();
    let source = cfg.require(&cfg.config.model, "model")?;
    let (resolved, name) = match source {
        ModelSource::Cia => (Resolved::Cia, "cia".to_string()),
        ModelSource::Inline(m) => (Resolved::Model(m.clone()), "inline".to_string()),
        ModelSource::Preset(p) => {
            let preset = Preset::from_str(p)?;
            let po = &cfg.config.preset_options;
            let mut opts = PresetOptions {
                sex_var: po.sex_var.clone(),
                black_var: po.black_var.clone(),
                male_level: po.male_level.clone(),
                black_yes_level: po.black_yes_level.clone(),
                ..Default::default()
            };
            if let Some(p) = &po.error_priors {
                let path = cfg.resolve(p);
                digests.push(("error_priors".to_string(), rec.input(p, &path)?));
                opts.error_priors = Some(PriorTable::read_csv(&path)?);
            }
            if let Some(p) = &po.reporting_priors {
                let path = cfg.resolve(p);
                digests.push(("reporting_priors".to_string(), rec.input(p, &path)?));
                opts.reporting_priors = Some(PriorTable::read_csv(&path)?);
            }
            let built = build_preset(preset, schema, &opts)?;
            for n in &built.notes {
                println!("note: {n}");
            }
            let r = match built.model {
                PresetModel::Cia => Resolved::Cia,
                PresetModel::Measurement(m) => Resolved::Model(m),
            };
            (r, preset.name().to_string())
        }
    };
    let label = cfg.config.label.clone().unwrap_or(name);
    Ok(ResolvedModel { model: resolved, label, digests })
}

#[derive(Serialize)]
struct ModelRecord<'a> {
    label: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a MeasurementModel>,
    identifiability: &'a IdentifiabilityReport,
}

pub fn impute(cfg: &LoadedConfig) -> Result<i32, CliError> {
    let out = cfg.out_dir()?;
    let schema = cfg.schema()?;
    let mut rec = Recorder::default();
    let f = cfg.require(&cfg.config.error_prone, "error_prone")?;
    let (data, ep_digest) = load_error_prone_file(cfg, f, &schema, &mut rec)?;
    let data = Arc::new(data);
    let (posterior, post_digest) = load_posterior(cfg, &mut rec)?;
    let ResolvedModel { model: resolved, label, mut digests } = resolve_model(cfg, &schema, &mut rec)?;
    digests.push(("error_prone".into(), ep_digest));
    digests.push(("posterior".into(), post_digest));
    let gibbs = &cfg.config.gibbs;

    let mut written = Vec::new();
    let (set, report) = match &resolved {
        Resolved::Cia => {
            let mut set = impute_cia(&schema, data, &posterior, gibbs.imputations, cfg.seed())?;
            set.provenance.label = label.clone();
            set.provenance.digests.extend(digests);
            let d = &schema;
            (set, IdentifiabilityReport::for_shape(d.n_cells(), d.true_levels, d.reported_levels))
        }
        Resolved::Model(model) => {
            let report = count_params(&schema, &model.error, &model.reporting)?;
            if !report.is_ok() && !gibbs.allow_overparameterized {
                return Err(CliError::Overparameterized(Box::new(report)));
            }
            let mut sampler = GibbsSampler::new(&schema, data, &posterior, model, gibbs.clone()).label(label.clone());
            for (k, v) in digests {
                sampler = sampler.digest(k, v);
            }
            let output = sampler.run()?;
            create_dir(out)?;
            written.push(write_json(&out.join(TRACE_FILE), &output.trace)?);
            print_trace(&output.trace);
            (output.imputations, report)
        }
    };
    create_dir(out)?;
    let model = match &resolved {
        Resolved::Model(m) => Some(m),
        Resolved::Cia => None,
    };
    written.push(write_json(
        &out.join(MODEL_FILE),
        &ModelRecord { label: &label, model, identifiability: &report },
    )?);
    written.extend(set.write_dir(out, false)?);
    rec.outputs(written);
    println!(
        "{label}: {} imputations of {} records, mean disagreement between imputed and reported {}",
        set.m(),
        set.n(),
        format_sig6(mean_disagreement(&set))
    );
    rec.finish("impute", &cfg.config, cfg.seed(), out)?;
    Ok(EXIT_OK)
}

/// Unweighted share of records whose imputed value differs from the report,
/// averaged over imputations.
pub fn mean_disagreement(set: &ImputationSet) -> f64 {
    if set.m() == 0 || set.n() == 0 {
        return f64::NAN;
    }
    let total: usize = (0..set.m()).map(|m| (0..set.n()).filter(|&i| set.e(m, i)).count()).sum();
    total as f64 / (set.m() * set.n()) as f64
}

fn print_trace(trace: &ParamTrace) {
    if trace.error_params.is_empty() {
        return;
    }
    let k = trace.error_params[0].len();
    let means: Vec<String> = (0..k)
        .map(|j| format_sig6(trace.error_params.iter().map(|p| p[j]).sum::<f64>() / trace.error_params.len() as f64))
        .collect();
    println!("error parameters, mean over saved states: {}", means.join(" "));
    if !trace.acceptance.is_empty() {
        let acc: Vec<String> = trace.acceptance.iter().map(|a| format!("{a:.2}")).collect();
        println!("metropolis acceptance: {}", acc.join(" "));
    }
}

pub fn analyze(cfg: &LoadedConfig) -> Result<i32, CliError> {
    let out = cfg.out_dir()?;
    let c = &cfg.config;
    if c.runs.is_empty() {
        return Err(CliError::Config("`runs` lists no imputation directories".into()));
    }
    if c.estimands.is_empty() && !c.coverage {
        return Err(CliError::Config("nothing to do: no `estimands` and `coverage` is off".into()));
    }
    let mut rec = Recorder::default();
    let mut sets = Vec::new();
    for r in &c.runs {
        let dir = cfg.resolve(&r.dir);
        let set = ImputationSet::read_dir(&dir)?;
        rec.input(&r.dir.join(mefuse_core::gibbs::INDEX_FILE), &dir.join(mefuse_core::gibbs::INDEX_FILE))?;
        sets.push((r.label.clone(), set));
    }
    let runs: Vec<(String, &ImputationSet)> = sets.iter().map(|(l, s)| (l.clone(), s)).collect();
    create_dir(out)?;
    if !c.estimands.is_empty() {
        let table = if runs.len() >= 2 {
            sensitivity_report(&runs, &c.estimands)?
        } else {
            estimate_table(&runs, &c.estimands)?
        };
        let path = out.join(ESTIMATES_FILE);
        table.write_csv(&path)?;
        rec.output(path);
        print!("{}", table.to_text());
    }
    if c.coverage {
        let (posterior, _) = load_posterior(cfg, &mut rec)?;
        let mut rows = Vec::new();
        for (label, set) in &runs {
            let report = coverage_diagnostic(set, &posterior)?;
            println!("coverage {label}: {} of {} cell shares covered", report.total_covered, report.total_cells);
            coverage_rows(label, set, &report, &mut rows);
        }
        let header: Vec<String> =
            ["run", "cell", "level", "gold_share", "qBar", "lo", "hi", "covered"].map(String::from).to_vec();
        rec.output(write_csv(&out.join(COVERAGE_FILE), &header, &rows)?);
    }
    rec.finish("analyze", &cfg.config, cfg.seed(), out)?;
    Ok(EXIT_OK)
}

fn coverage_rows(label: &str, set: &ImputationSet, report: &CoverageReport, rows: &mut Vec<Vec<String>>) {
    for e in &report.entries {
        rows.push(vec![
            label.to_string(),
            set.schema.cell_label(e.cell),
            set.schema.outcome_label(Level::from_index(e.level)),
            format_sig6(e.gold_share),
            format_sig6(e.estimate.q_bar),
            format_sig6(e.estimate.ci95.0),
            format_sig6(e.estimate.ci95.1),
            e.covered.to_string(),
        ]);
    }
}

pub fn simulate(cfg: &LoadedConfig) -> Result<i32, CliError> {
    let out = cfg.out_dir()?;
    let seed = cfg.config.seed;
    let scenario: SimScenario = match &cfg.config.simulation {
        None => table1_scenario(&Table1Options { seed: seed.unwrap_or(Table1Options::default().seed), ..Default::default() }),
        Some(SimulationConfig::Table1(o)) => {
            let mut o = o.clone();
            if let Some(s) = seed {
                o.seed = s;
            }
            table1_scenario(&o)
        }
        Some(SimulationConfig::Scenario(s)) => {
            let mut s = (**s).clone();
            if let Some(seed) = seed {
                s.seed = seed;
            }
            s
        }
    };
    let sim = simulate_linked(&scenario)?;
    create_dir(out)?;
    let mut rec = Recorder::default();
    rec.outputs(sim.write(out, &scenario.schema)?);
    rec.output(write_json(&out.join(SCENARIO_FILE), &scenario)?);
    rec.output(write_json(&out.join(SCHEMA_FILE), &scenario.schema)?);
    println!(
        "population {}, gold file {} records, error-prone file {} records, population agreement {}",
        sim.truth.population(),
        sim.gold.len(),
        sim.error_prone.len(),
        format_sig6(sim.truth.agreement_rate())
    );
    rec.finish("simulate", &cfg.config, scenario.seed, out)?;
    Ok(EXIT_OK)
}

pub fn check_identifiability(cfg: &LoadedConfig) -> Result<i32, CliError> {
    let schema = cfg.schema()?;
    let mut rec = Recorder::default();
    let ResolvedModel { model, label, .. } = resolve_model(cfg, &schema, &mut rec)?;
    match model {
        Resolved::Cia => {
            let r = IdentifiabilityReport::for_shape(schema.n_cells(), schema.true_levels, schema.reported_levels);
            println!("{label}: no error or reporting parameters\n{r}");
            Ok(EXIT_OK)
        }
        Resolved::Model(m) => {
            let r = count_params(&schema, &m.error, &m.reporting)?;
            println!("{label}\n{r}");
            if r.is_ok() || cfg.config.gibbs.allow_overparameterized {
                Ok(EXIT_OK)
            } else {
                Ok(EXIT_IDENTIFIABILITY)
            }
        }
    }
}
