use std::path::{Path, PathBuf};

use serde::Deserialize;

use mcm_core::dataset::{load_csv, write_csv, CohortPredicate, Dataset, DatasetSchema};
use mcm_core::error::{Error, Result};
use mcm_core::generation::{augment, synthesize, ConditionTemplate};
use mcm_core::harness::{
    emit_report, run_distribution_comparison, run_experiment, run_hr_consistency, run_repro,
    summary_table, train_mcm, CohortSpec, ExperimentConfig, Method, MetricsReport, ReportFormat,
    TABLE_COLUMNS,
};
use mcm_core::model::{load_model, save_model, LossScope, TrainConfig, DEFAULT_HIDDEN};
use mcm_core::rng;

use crate::{
    AugmentArgs, Cli, Command, CompareArgs, DataArgs, EvalCommand, ExperimentArgs, ReproArgs,
    SynthArgs, TrainArgs,
};

const DATA_DIR_VAR: &str = "MCM_DATA_DIR";
const DEFAULT_DATA_FILE: &str = "whas500.csv";

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidArgument("--threads must be >= 1".into()));
    }
    match cli.command {
        Command::Train(a) => train(a),
        Command::Synth(a) => synth(a),
        Command::Augment(a) => augment_cmd(a),
        Command::Eval(EvalCommand::Distribution(a)) => eval_compare(a, false),
        Command::Eval(EvalCommand::Hr(a)) => eval_compare(a, true),
        Command::Eval(EvalCommand::Discrimination(a)) => eval_experiment(a, cli.threads, true),
        Command::Eval(EvalCommand::Calibration(a)) => eval_experiment(a, cli.threads, false),
        Command::Repro(a) => repro(a, cli.threads),
    }
}

fn schema(path: Option<&Path>) -> Result<DatasetSchema> {
    match path {
        Some(p) => DatasetSchema::load_json(p),
        None => Ok(DatasetSchema::whas500()),
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let schema = schema(args.schema.as_deref())?;
    let path = match &args.data {
        Some(p) => p.clone(),
        None => std::env::var_os(DATA_DIR_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data"))
            .join(DEFAULT_DATA_FILE),
    };
    log::info!("loading {}", path.display());
    load_csv(&path, &schema)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Training config file: the optimizer settings plus the hidden width.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    hidden: Option<usize>,
    #[serde(flatten)]
    training: TrainConfig,
}

fn train(a: TrainArgs) -> Result<()> {
    let (mut hidden, mut config) = match &a.config {
        Some(p) => {
            let f: TrainFile = read_json(p)?;
            (f.hidden.unwrap_or(DEFAULT_HIDDEN), f.training)
        }
        None => (DEFAULT_HIDDEN, TrainConfig::default()),
    };
    if let Some(h) = a.hidden {
        hidden = h;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    if let Some(s) = a.step_size {
        config.step_size = s;
    }
    if let Some(lo) = a.mask_prob_lo {
        config.mask_prob_range.0 = lo;
    }
    if let Some(hi) = a.mask_prob_hi {
        config.mask_prob_range.1 = hi;
    }
    if a.masked_only {
        config.loss_scope = LossScope::MaskedOnly;
    }
    config.seed = rng::derive_seed(a.seed, &[2]);
    config.validate()?;
    if hidden == 0 {
        return Err(Error::InvalidArgument("--hidden must be >= 1".into()));
    }

    let data = load_data(&a.data)?;
    let (model, state, losses) = train_mcm(&data, hidden, &config, rng::derive_seed(a.seed, &[1]))?;
    save_model(&a.out, &model, &state)?;

    let loss_path = a.loss_out.unwrap_or_else(|| with_extension(&a.out, "loss.csv"));
    let file = std::fs::File::create(&loss_path).map_err(|e| Error::Io {
        path: loss_path.clone(),
        source: e,
    })?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["epoch", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: loss_path.clone(),
        source: e,
    })?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        log::info!("loss {first:.5} -> {last:.5} over {} epochs", losses.len());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let (model, state) = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let mut rng = rng::stream(a.seed, &[3]);
    let out = synthesize(&model, &state, &data, a.mask_ratio, a.count, a.binary.into(), &mut rng)?;
    write_csv(&out, &a.out)
}

fn augment_cmd(a: AugmentArgs) -> Result<()> {
    let (model, state) = load_model(&a.model)?;
    let schema = schema(a.schema.as_deref())?;
    let template = ConditionTemplate::load_json(&schema, &a.template)?;
    let mut rng = rng::stream(a.seed, &[3]);
    let out = augment(&model, &state, &schema, &template, a.count, a.binary.into(), &mut rng)?;
    write_csv(&out, &a.out)
}

fn write_both(report: &MetricsReport, prefix: &Path) -> Result<()> {
    emit_report(report, with_extension(prefix, "json"), ReportFormat::Json)?;
    emit_report(report, with_extension(prefix, "csv"), ReportFormat::Csv)
}

fn eval_compare(a: CompareArgs, hazard_ratios: bool) -> Result<()> {
    let real = load_data(&a.data)?;
    let synthetic = load_csv(&a.synthetic, real.schema())?;
    let mut config = ExperimentConfig::default();
    if !a.covariates.is_empty() {
        config.covariates = Some(a.covariates.clone());
    }
    let mut report;
    if hazard_ratios {
        let covs = config.covariates.clone().unwrap_or_else(|| real.schema().covariate_names());
        report = MetricsReport::new("hazard_ratios", &config);
        let rows = run_hr_consistency(&real, &synthetic, &covs, &config.cox)?;
        for h in &rows {
            println!(
                "{:<10} real {:.3} [{:.3}, {:.3}]  synthetic {:.3} [{:.3}, {:.3}]  overlap {}",
                h.covariate,
                h.real.hr,
                h.real.ci_lo,
                h.real.ci_hi,
                h.synthetic.hr,
                h.synthetic.ci_lo,
                h.synthetic.ci_hi,
                h.ci_overlap
            );
        }
        report.hazard_ratios = Some(rows);
    } else {
        report = MetricsReport::new("distribution", &config);
        let rows = run_distribution_comparison(&real, &synthetic)?;
        for f in &rows {
            println!(
                "{:<10} real {:.4}  synthetic {:.4}  ks {}  |dp| {}",
                f.feature,
                f.real_mean,
                f.synthetic_mean,
                f.ks_statistic.map_or("-".into(), |v| format!("{v:.4}")),
                f.proportion_difference.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
        report.distribution = Some(rows);
    }
    write_both(&report, &a.out)
}

/// Parses `name=predicate` or a bare predicate (named after itself).
fn parse_cohort(text: &str, multiplier: usize) -> Result<CohortSpec> {
    let text = text.trim();
    if let Some((name, pred)) = text.split_once('=') {
        let plain_name = !name.is_empty() && !name.contains(['<', '>', '≥', '≤']);
        if plain_name && pred.parse::<CohortPredicate>().is_ok() {
            return CohortSpec::new(name.trim(), pred, multiplier);
        }
    }
    CohortSpec::new(text, text, multiplier)
}

fn experiment_config(a: &ExperimentArgs, threads: usize) -> Result<ExperimentConfig> {
    let mut c: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    c.seed = a.seed;
    c.threads = threads;
    if let Some(m) = a.method {
        c.method = Method::from(m);
    }
    if let Some(n) = a.synth_count {
        c.synth_count = n;
    }
    if let Some(r) = a.mask_ratio {
        c.mask_ratio = r;
    }
    if !a.cohorts.is_empty() {
        let default_multiplier = c.cohorts.first().map_or(5, |c| c.multiplier);
        let m = a.multiplier.unwrap_or(default_multiplier);
        c.cohorts = a.cohorts.iter().map(|s| parse_cohort(s, m)).collect::<Result<_>>()?;
    } else if let Some(m) = a.multiplier {
        c.cohorts.iter_mut().for_each(|c| c.multiplier = m);
    }
    if !a.percentiles.is_empty() {
        c.percentiles = a.percentiles.clone();
    }
    if let Some(b) = a.bins {
        c.calibration_bins = b;
    }
    if let Some(e) = a.epochs {
        c.training.epochs = e;
    }
    if let Some(h) = a.hidden {
        c.hidden = h;
    }
    if let Some(m) = a.smote_minority {
        c.smote_minority = Some(m);
    }
    if let Some(k) = a.smote_k {
        c.smote_k = k;
    }
    if let Some(p) = &a.synthetic {
        c.external_csv = Some(p.clone());
    }
    if let Some(b) = a.binary {
        c.binary_output = b.into();
    }
    c.validate()?;
    Ok(c)
}

fn eval_experiment(a: ExperimentArgs, threads: usize, discrimination: bool) -> Result<()> {
    let config = experiment_config(&a, threads)?;
    let data = load_data(&a.data)?;
    let report = run_experiment(&data, &config, discrimination, !discrimination)?;
    if let Some(agg) = report.discrimination.as_ref().and_then(|d| d.aggregate) {
        println!("{} c_index {:.4} ({:.4}) n={}", config.method, agg.mean, agg.sd, agg.n);
    }
    if let Some(cal) = &report.calibration {
        for s in &cal.summary {
            match s.aggregate {
                Some(agg) => println!(
                    "{} {} p{} deviation {:.4} ({:.4}) n={}",
                    config.method, s.cohort, s.percentile, agg.mean, agg.sd, agg.n
                ),
                None => println!("{} {} p{} deviation unavailable", config.method, s.cohort, s.percentile),
            }
        }
    }
    write_both(&report, &a.out)
}

fn repro(a: ReproArgs, threads: usize) -> Result<()> {
    let data = load_data(&a.data)?;
    let reports = run_repro(&data, a.seed, threads, &a.out)?;
    println!("{}", TABLE_COLUMNS.join("\t"));
    for row in summary_table(&reports) {
        println!("{}", row.join("\t"));
    }
    Ok(())
}
