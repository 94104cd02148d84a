//! Cross-validated experiments: distribution comparison, hazard-ratio
//! consistency, discrimination under augmentation and stratified
//! calibration, with machine-readable reports.
//!
//! Every generator is trained on the training half of a fold only; the test
//! half is never seen by a generator nor receives synthetic rows. Each fold
//! draws its randomness from a stream derived from `(seed, repetition,
//! fold)`, so results do not depend on the number of worker threads.

mod report;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, MiceConfig, DEFAULT_NEIGHBOURS};
use crate::dataset::{
    filter_cohort, make_5x2_folds, CohortPredicate, Dataset, FeatureKind, FoldSplit,
};
use crate::error::{Error, Result};
use crate::generation::{self, BinaryOutput};
use crate::model::{train, McmModel, TrainConfig, DEFAULT_HIDDEN};
use crate::rng;
use crate::survival::{
    breslow_baseline, calibration_deviation, concordance_index, fit_coxph_with, hazard_ratios,
    CoxOptions, DEFAULT_BINS,
};
use crate::transform::TransformState;

pub use report::{
    config_hash, emit_report, report_csv_rows, write_calibration_points_csv,
    write_hr_forest_csv, write_report_csv, Aggregate, CalibrationFold, CalibrationResults,
    CalibrationSummary, Discrimination, DiscriminationFold, FeatureComparison, HrComparison,
    MetricsReport, Provenance, ReportFormat, CSV_COLUMNS, REPORT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    RealOnly,
    Mcm,
    Smote,
    Mice,
    ExternalCsv,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::RealOnly,
        Method::Mcm,
        Method::Smote,
        Method::Mice,
        Method::ExternalCsv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::RealOnly => "real_only",
            Method::Mcm => "mcm",
            Method::Smote => "smote",
            Method::Mice => "mice",
            Method::ExternalCsv => "external_csv",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: String,
    pub predicate: CohortPredicate,
    /// Generated rows per training-cohort member; 0 disables augmentation.
    pub multiplier: usize,
}

impl CohortSpec {
    pub fn new(name: &str, predicate: &str, multiplier: usize) -> Result<Self> {
        Ok(CohortSpec {
            name: name.into(),
            predicate: predicate.parse()?,
            multiplier,
        })
    }

    pub fn over_75() -> Self {
        Self::new("over_75", "age>=75", 5).expect("valid predicate")
    }

    pub fn hypertension() -> Self {
        Self::new("hypertension", "sysbp>=140", 5).expect("valid predicate")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Rows generated per training fold (SMOTE: new minority rows).
    pub synth_count: usize,
    pub mask_ratio: f64,
    pub cohorts: Vec<CohortSpec>,
    pub percentiles: Vec<f64>,
    pub seed: u64,
    pub calibration_bins: usize,
    /// Covariates of the downstream Cox model; all schema covariates when
    /// absent.
    pub covariates: Option<Vec<String>>,
    pub cox: CoxOptions,
    pub hidden: usize,
    /// Network training settings; the seed field is replaced by a per-fold
    /// derived seed.
    pub training: TrainConfig,
    pub binary_output: BinaryOutput,
    pub mice: MiceConfig,
    pub smote_k: usize,
    /// Event value treated as the minority class; required for SMOTE.
    pub smote_minority: Option<f64>,
    pub external_csv: Option<PathBuf>,
    /// Worker threads for fold-level parallelism. Not part of the report:
    /// results are identical for any value.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::RealOnly,
            synth_count: 500,
            mask_ratio: 0.5,
            cohorts: vec![CohortSpec::over_75(), CohortSpec::hypertension()],
            percentiles: vec![25.0, 75.0],
            seed: 0,
            calibration_bins: DEFAULT_BINS,
            covariates: None,
            cox: CoxOptions::default(),
            hidden: DEFAULT_HIDDEN,
            training: TrainConfig::default(),
            binary_output: BinaryOutput::Threshold,
            mice: MiceConfig::default(),
            smote_k: DEFAULT_NEIGHBOURS,
            smote_minority: None,
            external_csv: None,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn for_method(method: Method, seed: u64) -> Self {
        ExperimentConfig {
            method,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.percentiles.iter().find(|&&p| !(p > 0.0 && p < 100.0)) {
            return Err(Error::InvalidArgument(format!("percentile {p} outside (0, 100)")));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask ratio must lie in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        if self.threads == 0 {
            return Err(Error::InvalidArgument("threads must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
        }
        for (i, c) in self.cohorts.iter().enumerate() {
            if self.cohorts[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::InvalidArgument(format!("duplicate cohort `{}`", c.name)));
            }
        }
        match self.method {
            Method::Mcm => self.training.validate()?,
            Method::Mice => self.mice.validate()?,
            Method::Smote if self.smote_minority.is_none() => {
                return Err(Error::InvalidArgument(
                    "SMOTE needs the minority event value (smote_minority)".into(),
                ))
            }
            Method::ExternalCsv if self.external_csv.is_none() => {
                return Err(Error::InvalidArgument(
                    "external_csv method needs a synthetic CSV path".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    fn covariates(&self, dataset: &Dataset) -> Vec<String> {
        self.covariates
            .clone()
            .unwrap_or_else(|| dataset.schema().covariate_names())
    }
}

/// Fails when a generator's training rows overlap the test rows.
pub fn assert_no_leakage(generator_rows: &[usize], test_rows: &[usize]) -> Result<()> {
    let train: std::collections::HashSet<usize> = generator_rows.iter().copied().collect();
    if let Some(i) = test_rows.iter().find(|i| train.contains(i)) {
        return Err(Error::Leakage(format!(
            "row {i} is in both the generator training set and the test fold"
        )));
    }
    Ok(())
}

/// Largest vertical distance between the two empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn run_distribution_comparison(real: &Dataset, synthetic: &Dataset) -> Result<Vec<FeatureComparison>> {
    if real.schema() != synthetic.schema() {
        return Err(Error::Schema("real and synthetic datasets have different schemas".into()));
    }
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::InvalidArgument("cannot compare an empty dataset".into()));
    }
    Ok(real
        .schema()
        .features()
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let r = real.column(j);
            let s = synthetic.column(j);
            let (rm, sm) = (crate::dataset::mean(&r), crate::dataset::mean(&s));
            match spec.kind {
                FeatureKind::Continuous => FeatureComparison {
                    feature: spec.name.clone(),
                    kind: spec.kind,
                    real_mean: rm,
                    synthetic_mean: sm,
                    real_sd: Some(crate::dataset::sample_sd(&r)),
                    synthetic_sd: Some(crate::dataset::sample_sd(&s)),
                    ks_statistic: Some(ks_statistic(&r, &s)),
                    proportion_difference: None,
                },
                FeatureKind::Binary => FeatureComparison {
                    feature: spec.name.clone(),
                    kind: spec.kind,
                    real_mean: rm,
                    synthetic_mean: sm,
                    real_sd: None,
                    synthetic_sd: None,
                    ks_statistic: None,
                    proportion_difference: Some((rm - sm).abs()),
                },
            }
        })
        .collect())
}

pub fn run_hr_consistency(
    real: &Dataset,
    synthetic: &Dataset,
    covariates: &[String],
    options: &CoxOptions,
) -> Result<Vec<HrComparison>> {
    let fit = |side: &str, ds: &Dataset| {
        fit_coxph_with(ds, covariates, options)
            .and_then(|m| hazard_ratios(&m))
            .map_err(|e| Error::Fit {
                side: side.into(),
                source: Box::new(e),
            })
    };
    let r = fit("real", real)?;
    let s = fit("synthetic", synthetic)?;
    Ok(r.into_iter()
        .zip(s)
        .map(|(real, synthetic)| HrComparison {
            covariate: real.covariate.clone(),
            ci_overlap: real.overlaps(&synthetic),
            synthetic_in_real_ci: real.contains(synthetic.hr),
            real,
            synthetic,
        })
        .collect())
}

/// Trains the network on normalized rows of `training`, with the transform
/// fitted on the same rows.
pub fn train_mcm(
    training: &Dataset,
    hidden: usize,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<(McmModel, TransformState, Vec<f64>)> {
    let state = TransformState::fit(training)?;
    let v = state.forward(training)?;
    let model = McmModel::init(training.n_features(), hidden, init_seed)?;
    let (model, losses) = train(model, &v, config)?;
    Ok((model, state, losses))
}

/// A generator fitted to one training fold.
enum Generator<'a> {
    None,
    Mcm(McmModel, TransformState),
    Smote(f64),
    Mice(MiceConfig),
    External(&'a Dataset),
}

impl<'a> Generator<'a> {
    fn fit(
        config: &ExperimentConfig,
        training: &Dataset,
        external: Option<&'a Dataset>,
        fold_seed: u64,
    ) -> Result<Self> {
        Ok(match config.method {
            Method::RealOnly => Generator::None,
            Method::Mcm => {
                let tc = TrainConfig {
                    seed: rng::derive_seed(fold_seed, &[2]),
                    ..config.training.clone()
                };
                let (model, state, _) =
                    train_mcm(training, config.hidden, &tc, rng::derive_seed(fold_seed, &[1]))?;
                Generator::Mcm(model, state)
            }
            Method::Smote => Generator::Smote(config.smote_minority.expect("validated")),
            Method::Mice => Generator::Mice(MiceConfig {
                seed: rng::derive_seed(fold_seed, &[4]),
                ..config.mice
            }),
            Method::ExternalCsv => Generator::External(external.expect("loaded")),
        })
    }

    fn synthesize<R: Rng>(
        &self,
        config: &ExperimentConfig,
        training: &Dataset,
        rng: &mut R,
    ) -> Result<Option<Dataset>> {
        if config.synth_count == 0 {
            return Ok(None);
        }
        let n = config.synth_count;
        Ok(match self {
            Generator::None => None,
            Generator::Mcm(model, state) => Some(generation::synthesize(
                model,
                state,
                training,
                config.mask_ratio,
                n,
                config.binary_output,
                rng,
            )?),
            Generator::Smote(minority) => {
                Some(baselines::smote(training, *minority, config.smote_k, n, rng)?)
            }
            Generator::Mice(mc) => Some(baselines::mice_synthesize(training, config.mask_ratio, n, mc, rng)?),
            Generator::External(ds) => Some((*ds).clone()),
        })
    }

    fn augment_cohort<R: Rng>(
        &self,
        config: &ExperimentConfig,
        training: &Dataset,
        cohort: &CohortSpec,
        rng: &mut R,
    ) -> Result<Option<Dataset>> {
        if cohort.multiplier == 0 {
            return Ok(None);
        }
        let members = filter_cohort(training, &cohort.predicate)?;
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cohort `{}` has no training rows",
                cohort.name
            )));
        }
        let stratifying = cohort.predicate.features();
        let count = cohort.multiplier * members.n_rows();
        Ok(match self {
            Generator::None => None,
            Generator::Mcm(model, state) => Some(generation::augment_cohort(
                model,
                state,
                &members,
                &stratifying,
                cohort.multiplier,
                config.binary_output,
                rng,
            )?),
            Generator::Smote(_) => {
                // Rebalance the cohort's event classes.
                let events = members.events().iter().filter(|&&e| e).count();
                let censored = members.n_rows() - events;
                let (minority, n_new) = if events <= censored {
                    (1.0, censored - events)
                } else {
                    (0.0, events - censored)
                };
                if n_new == 0 {
                    None
                } else {
                    Some(baselines::smote(&members, minority, config.smote_k, n_new, rng)?)
                }
            }
            Generator::Mice(mc) => {
                let template = generation::cohort_template(&members, &stratifying)?;
                Some(baselines::mice_augment(training, &template, count, mc, rng)?)
            }
            Generator::External(ds) => {
                let rows = filter_cohort(ds, &cohort.predicate)?;
                (!rows.is_empty()).then_some(rows)
            }
        })
    }
}

fn with_rows(training: &Dataset, extra: Option<Dataset>) -> Result<(Dataset, usize)> {
    match extra {
        Some(extra) => Ok((training.concat(&extra)?, extra.n_rows())),
        None => Ok((training.clone(), 0)),
    }
}

struct FoldOutcome {
    discrimination: Option<DiscriminationFold>,
    calibration: Vec<CalibrationFold>,
}

fn discrimination_fold<R: Rng>(
    config: &ExperimentConfig,
    generator: &Generator<'_>,
    training: &Dataset,
    test: &Dataset,
    covariates: &[String],
    rng: &mut R,
) -> Result<(f64, usize)> {
    let synthetic = generator.synthesize(config, training, rng)?;
    let (augmented, n_syn) = with_rows(training, synthetic)?;
    let cox = fit_coxph_with(&augmented, covariates, &config.cox)?;
    let risk: Vec<f64> = cox
        .design(test)?
        .iter()
        .map(|x| cox.linear_predictor(x))
        .collect();
    let c = concordance_index(&test.durations(), &test.events(), &risk)?;
    Ok((c, n_syn))
}

fn calibration_folds<R: Rng>(
    config: &ExperimentConfig,
    generator: &Generator<'_>,
    split: &FoldSplit<'_>,
    training: &Dataset,
    test: &Dataset,
    covariates: &[String],
    cohort: &CohortSpec,
    rng: &mut R,
) -> Vec<CalibrationFold> {
    let blank = |pct: f64| CalibrationFold {
        repetition: split.repetition,
        fold: split.fold,
        cohort: cohort.name.clone(),
        percentile: pct,
        n_train_cohort: 0,
        n_synthetic: 0,
        n_test_cohort: 0,
        horizon: None,
        slope: None,
        deviation: None,
        points: Vec::new(),
        error: None,
    };
    let mut out: Vec<CalibrationFold> = config.percentiles.iter().map(|&p| blank(p)).collect();
    let fail = |out: &mut Vec<CalibrationFold>, e: &Error| {
        log::warn!(
            "cohort {} rep {} fold {}: {e}",
            cohort.name,
            split.repetition,
            split.fold
        );
        for f in out.iter_mut() {
            f.error = Some(e.to_string());
        }
    };

    let prepared = (|| -> Result<_> {
        let train_cohort = filter_cohort(training, &cohort.predicate)?;
        let test_cohort = filter_cohort(test, &cohort.predicate)?;
        let synthetic = generator.augment_cohort(config, training, cohort, rng)?;
        let (augmented, n_syn) = with_rows(training, synthetic)?;
        Ok((train_cohort.n_rows(), test_cohort, augmented, n_syn))
    })();
    let (n_train_cohort, test_cohort, augmented, n_syn) = match prepared {
        Ok(p) => p,
        Err(e) => {
            fail(&mut out, &e);
            return out;
        }
    };
    for f in &mut out {
        f.n_train_cohort = n_train_cohort;
        f.n_synthetic = n_syn;
        f.n_test_cohort = test_cohort.n_rows();
    }
    if test_cohort.is_empty() {
        fail(
            &mut out,
            &Error::InvalidArgument(format!("cohort `{}` is empty in the test fold", cohort.name)),
        );
        return out;
    }
    let fitted = fit_coxph_with(&augmented, covariates, &config.cox)
        .and_then(|m| breslow_baseline(&m, &augmented).map(|b| (m, b)));
    let (model, baseline) = match fitted {
        Ok(f) => f,
        Err(e) => {
            fail(&mut out, &e);
            return out;
        }
    };
    for f in &mut out {
        match calibration_deviation(&model, &baseline, &test_cohort, f.percentile, config.calibration_bins) {
            Ok(c) => {
                f.horizon = Some(c.horizon);
                f.slope = Some(c.slope);
                f.deviation = Some(c.deviation);
                f.points = c.points;
            }
            Err(e) => f.error = Some(e.to_string()),
        }
    }
    out
}

fn run_fold(
    dataset: &Dataset,
    config: &ExperimentConfig,
    external: Option<&Dataset>,
    split: &FoldSplit<'_>,
    discrimination: bool,
    calibration: bool,
) -> Result<FoldOutcome> {
    assert_no_leakage(split.train, split.test)?;
    let training = dataset.select(split.train);
    let test = dataset.select(split.test);
    let covariates = config.covariates(dataset);
    let fold_seed = rng::derive_seed(config.seed, &[split.repetition as u64, split.fold as u64]);

    let mut disc = DiscriminationFold {
        repetition: split.repetition,
        fold: split.fold,
        n_train: training.n_rows(),
        n_synthetic: 0,
        n_test: test.n_rows(),
        c_index: None,
        error: None,
    };

    let needs_generator = (discrimination && config.synth_count > 0)
        || (calibration && config.cohorts.iter().any(|c| c.multiplier > 0));
    let generator = if needs_generator {
        Generator::fit(config, &training, external, fold_seed)
    } else {
        Ok(Generator::None)
    };
    let generator = match generator {
        Ok(g) => g,
        Err(e) => {
            log::warn!("rep {} fold {}: generator failed: {e}", split.repetition, split.fold);
            disc.error = Some(e.to_string());
            let calibration = if calibration {
                config
                    .cohorts
                    .iter()
                    .flat_map(|c| {
                        config.percentiles.iter().map(|&p| CalibrationFold {
                            repetition: split.repetition,
                            fold: split.fold,
                            cohort: c.name.clone(),
                            percentile: p,
                            n_train_cohort: 0,
                            n_synthetic: 0,
                            n_test_cohort: 0,
                            horizon: None,
                            slope: None,
                            deviation: None,
                            points: Vec::new(),
                            error: Some(e.to_string()),
                        })
                    })
                    .collect()
            } else {
                Vec::new()
            };
            return Ok(FoldOutcome {
                discrimination: discrimination.then_some(disc),
                calibration,
            });
        }
    };

    let discrimination = if discrimination {
        let mut r = rng::stream(fold_seed, &[3]);
        match discrimination_fold(config, &generator, &training, &test, &covariates, &mut r) {
            Ok((c, n_syn)) => {
                disc.c_index = Some(c);
                disc.n_synthetic = n_syn;
            }
            Err(e) => {
                log::warn!("rep {} fold {}: {e}", split.repetition, split.fold);
                disc.error = Some(e.to_string());
            }
        }
        Some(disc)
    } else {
        None
    };

    let mut cal = Vec::new();
    if calibration {
        for (ci, cohort) in config.cohorts.iter().enumerate() {
            let mut r = rng::stream(fold_seed, &[5, ci as u64]);
            cal.extend(calibration_folds(
                config, &generator, split, &training, &test, &covariates, cohort, &mut r,
            ));
        }
    }
    Ok(FoldOutcome {
        discrimination,
        calibration: cal,
    })
}

/// Runs the requested experiments over the 5x2 plan drawn from the seed.
pub fn run_experiment(
    dataset: &Dataset,
    config: &ExperimentConfig,
    discrimination: bool,
    calibration: bool,
) -> Result<MetricsReport> {
    config.validate()?;
    let external = match (&config.external_csv, config.method) {
        (Some(path), Method::ExternalCsv) => {
            Some(crate::dataset::load_csv(path, dataset.schema())?)
        }
        _ => None,
    };
    let plan = make_5x2_folds(dataset, config.seed)?;
    let splits = plan.splits();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<FoldOutcome> = pool.install(|| {
        splits
            .par_iter()
            .map(|s| run_fold(dataset, config, external.as_ref(), s, discrimination, calibration))
            .collect::<Result<Vec<_>>>()
    })?;

    let name = match (discrimination, calibration) {
        (true, true) => "discrimination+calibration",
        (true, false) => "discrimination",
        (false, true) => "calibration",
        (false, false) => "none",
    };
    let mut report = MetricsReport::new(name, config);
    let mut disc_folds = Vec::new();
    let mut cal_folds = Vec::new();
    for o in outcomes {
        disc_folds.extend(o.discrimination);
        cal_folds.extend(o.calibration);
    }
    if discrimination {
        let values: Vec<f64> = disc_folds.iter().filter_map(|f| f.c_index).collect();
        report.discrimination = Some(Discrimination {
            aggregate: Aggregate::of(&values),
            folds: disc_folds,
        });
    }
    if calibration {
        let mut summary = Vec::new();
        for c in &config.cohorts {
            for &p in &config.percentiles {
                let values: Vec<f64> = cal_folds
                    .iter()
                    .filter(|f| f.cohort == c.name && f.percentile == p)
                    .filter_map(|f| f.deviation)
                    .collect();
                summary.push(CalibrationSummary {
                    cohort: c.name.clone(),
                    percentile: p,
                    aggregate: Aggregate::of(&values),
                });
            }
        }
        report.calibration = Some(CalibrationResults {
            folds: cal_folds,
            summary,
        });
    }
    Ok(report)
}

pub fn run_discrimination(dataset: &Dataset, config: &ExperimentConfig) -> Result<MetricsReport> {
    run_experiment(dataset, config, true, false)
}

pub fn run_calibration(dataset: &Dataset, config: &ExperimentConfig) -> Result<MetricsReport> {
    run_experiment(dataset, config, false, true)
}

/// Arm settings for the four-method comparison table.
pub fn repro_configs(seed: u64) -> Vec<ExperimentConfig> {
    let base = ExperimentConfig::for_method(Method::RealOnly, seed);
    vec![
        base.clone(),
        ExperimentConfig {
            method: Method::Smote,
            synth_count: 70,
            smote_minority: Some(1.0),
            ..base.clone()
        },
        ExperimentConfig {
            method: Method::Mice,
            synth_count: 500,
            mask_ratio: 0.5,
            ..base.clone()
        },
        ExperimentConfig {
            method: Method::Mcm,
            synth_count: 500,
            mask_ratio: 0.5,
            ..base
        },
    ]
}

pub const TABLE_COLUMNS: [&str; 6] = [
    "method",
    "c_index",
    "over_75_p25",
    "over_75_p75",
    "hypertension_p25",
    "hypertension_p75",
];

fn cell(a: Option<Aggregate>, digits: usize) -> String {
    match a {
        Some(a) => format!("{:.*} ({:.*})", digits, a.mean, digits, a.sd),
        None => "NA".into(),
    }
}

/// One row per method: C-index, then calibration deviation per cohort and
/// percentile, each as `mean (sd)`.
pub fn summary_table(reports: &[MetricsReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.provenance.config.method.as_str().to_string(),
                cell(r.discrimination.as_ref().and_then(|d| d.aggregate), 4),
            ];
            if let Some(c) = &r.calibration {
                for s in &c.summary {
                    row.push(cell(s.aggregate, 2));
                }
            }
            row
        })
        .collect()
}

/// Runs all four arms for discrimination and calibration and writes one
/// JSON and CSV report per arm plus `table.csv` into `out_dir`.
pub fn run_repro(
    dataset: &Dataset,
    seed: u64,
    threads: usize,
    out_dir: &std::path::Path,
) -> Result<Vec<MetricsReport>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut reports = Vec::new();
    for mut config in repro_configs(seed) {
        config.threads = threads;
        log::info!("repro: running {}", config.method);
        let report = run_experiment(dataset, &config, true, true)?;
        let stem = config.method.as_str();
        emit_report(&report, out_dir.join(format!("{stem}.json")), ReportFormat::Json)?;
        emit_report(&report, out_dir.join(format!("{stem}.csv")), ReportFormat::Csv)?;
        reports.push(report);
    }
    let path = out_dir.join("table.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(TABLE_COLUMNS)?;
    for row in summary_table(&reports) {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(reports)
}
