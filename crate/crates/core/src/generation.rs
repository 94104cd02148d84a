//! Whole-dataset synthesis (mask and reconstruct real rows) and conditional
//! augmentation (complete template rows whose conditioned features are fixed
//! or drawn uniformly).

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetSchema, FeatureKind, FeatureRole};
use crate::error::{Error, Result};
use crate::model::{Mask, McmModel};
use crate::transform::TransformState;

/// How generated binary features are decoded from the model's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOutput {
    /// 1 when the reconstruction is at least 0.5.
    #[default]
    Threshold,
    /// Bernoulli draw with the reconstruction as probability.
    Sample,
}

/// Anything that can complete a masked normalized row. Implemented by the
/// network; tests substitute oracles.
pub trait Completer {
    fn feature_count(&self) -> usize;
    fn complete(&self, v: &[f64], mask: &Mask) -> Result<Vec<f64>>;
}

impl Completer for McmModel {
    fn feature_count(&self) -> usize {
        self.feature_count
    }

    fn complete(&self, v: &[f64], mask: &Mask) -> Result<Vec<f64>> {
        McmModel::complete(self, v, mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directive {
    Fixed(f64),
    Range([f64; 2]),
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum DirectiveJson {
    Word(MaskedWord),
    Tagged(TaggedDirective),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MaskedWord {
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum TaggedDirective {
    Fixed(f64),
    Range([f64; 2]),
}

/// Per-feature generation directives in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTemplate {
    directives: Vec<Directive>,
}

impl ConditionTemplate {
    pub fn new(schema: &DatasetSchema, directives: Vec<Directive>) -> Result<Self> {
        if directives.len() != schema.len() {
            return Err(Error::Shape(format!(
                "template has {} directives for {} features",
                directives.len(),
                schema.len()
            )));
        }
        let mut conditioned = 0;
        let mut masked = 0;
        for (spec, d) in schema.features().iter().zip(&directives) {
            let check = |v: f64| {
                spec.check_value(v).map_err(|reason| {
                    Error::InvalidArgument(format!("template value for `{}`: {reason}", spec.name))
                })
            };
            match *d {
                Directive::Fixed(v) => {
                    check(v)?;
                    conditioned += 1;
                }
                Directive::Range([lo, hi]) => {
                    if !(lo <= hi) {
                        return Err(Error::InvalidArgument(format!(
                            "range for `{}` has lo {lo} > hi {hi}",
                            spec.name
                        )));
                    }
                    if spec.kind == FeatureKind::Binary && lo != hi {
                        return Err(Error::InvalidArgument(format!(
                            "binary feature `{}` cannot take a continuous range",
                            spec.name
                        )));
                    }
                    check(lo)?;
                    check(hi)?;
                    conditioned += 1;
                }
                Directive::Masked => masked += 1,
            }
        }
        if conditioned == 0 {
            return Err(Error::InvalidArgument(
                "template must condition on at least one feature".into(),
            ));
        }
        if masked == 0 {
            return Err(Error::InvalidArgument(
                "template must leave at least one feature masked".into(),
            ));
        }
        Ok(ConditionTemplate { directives })
    }

    /// Builds a template from named directives; unnamed features are masked.
    pub fn from_named(schema: &DatasetSchema, named: &[(&str, Directive)]) -> Result<Self> {
        let mut directives = vec![Directive::Masked; schema.len()];
        for &(name, d) in named {
            directives[schema.index_of(name)?] = d;
        }
        Self::new(schema, directives)
    }

    /// Parses `{feature: {"fixed": v} | {"range": [lo, hi]} | "masked"}`.
    pub fn from_json_str(schema: &DatasetSchema, text: &str) -> Result<Self> {
        let raw: BTreeMap<String, DirectiveJson> = serde_json::from_str(text)?;
        let mut directives = vec![Directive::Masked; schema.len()];
        for (name, d) in raw {
            directives[schema.index_of(&name)?] = match d {
                DirectiveJson::Word(MaskedWord::Masked) => Directive::Masked,
                DirectiveJson::Tagged(TaggedDirective::Fixed(v)) => Directive::Fixed(v),
                DirectiveJson::Tagged(TaggedDirective::Range(r)) => Directive::Range(r),
            };
        }
        Self::new(schema, directives)
    }

    pub fn load_json(schema: &DatasetSchema, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(schema, &text)
    }

    pub fn to_json_string(&self, schema: &DatasetSchema) -> String {
        let map: BTreeMap<String, DirectiveJson> = schema
            .features()
            .iter()
            .zip(&self.directives)
            .map(|(spec, d)| {
                let j = match *d {
                    Directive::Masked => DirectiveJson::Word(MaskedWord::Masked),
                    Directive::Fixed(v) => DirectiveJson::Tagged(TaggedDirective::Fixed(v)),
                    Directive::Range(r) => DirectiveJson::Tagged(TaggedDirective::Range(r)),
                };
                (spec.name.clone(), j)
            })
            .collect();
        serde_json::to_string_pretty(&map).expect("template serializes")
    }

    pub fn directives(&self) -> &[Directive] {
        &self.directives
    }
}

fn check_compatible(state: &TransformState, schema: &DatasetSchema, n_model: usize) -> Result<()> {
    state.check_schema(schema)?;
    if n_model != schema.len() {
        return Err(Error::Shape(format!(
            "model has {n_model} features, schema has {}",
            schema.len()
        )));
    }
    Ok(())
}

/// Decodes a completed normalized row to raw values, then re-imposes the
/// conditioned raw values exactly.
fn decode_row<R: Rng>(
    completed: &[f64],
    mask: &Mask,
    conditioned_raw: &[f64],
    state: &TransformState,
    binary: BinaryOutput,
    rng: &mut R,
) -> Vec<f64> {
    let mut raw = Vec::with_capacity(completed.len());
    for (j, (&v, t)) in completed.iter().zip(&state.features).enumerate() {
        if mask.is_observed(j) {
            raw.push(conditioned_raw[j]);
            continue;
        }
        let v = match (t.kind, binary) {
            (FeatureKind::Binary, BinaryOutput::Sample) => {
                if rng.gen::<f64>() < v {
                    1.0
                } else {
                    0.0
                }
            }
            _ => v,
        };
        raw.push(t.inverse(v));
    }
    raw
}

fn sanitize_row(row: &mut [f64], schema: &DatasetSchema) {
    for (x, spec) in row.iter_mut().zip(schema.features()) {
        if spec.role == FeatureRole::Duration && *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Number of masked features per row for a masking ratio.
pub fn mask_count(mask_ratio: f64, n_features: usize) -> Result<usize> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask ratio must lie in (0, 1), got {mask_ratio}"
        )));
    }
    let k = ((mask_ratio * n_features as f64).round() as usize).max(1);
    if k >= n_features {
        return Err(Error::InvalidArgument(format!(
            "mask ratio {mask_ratio} would mask all {n_features} features"
        )));
    }
    Ok(k)
}

/// Source rows for synthesis: a shuffled subset when `count <= n`, uniform
/// draws with replacement otherwise.
pub fn sample_source_rows<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if count <= n {
        index::sample(rng, n, count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..n)).collect()
    }
}

/// Per-row mask-and-reconstruct synthesis. Each sampled row has exactly
/// `round(mask_ratio · N)` features hidden and completed by the model; the
/// remaining features are copied from the source row.
pub fn synthesize<C: Completer, R: Rng>(
    model: &C,
    state: &TransformState,
    source: &Dataset,
    mask_ratio: f64,
    count: usize,
    binary: BinaryOutput,
    rng: &mut R,
) -> Result<Dataset> {
    let schema = source.schema();
    check_compatible(state, schema, model.feature_count())?;
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    if source.is_empty() {
        return Err(Error::InvalidArgument("empty source dataset".into()));
    }
    let n_features = schema.len();
    let k = mask_count(mask_ratio, n_features)?;
    let picks = sample_source_rows(source.n_rows(), count, rng);
    let base: u64 = rng.gen();

    let mut values = Vec::with_capacity(count * n_features);
    for (r, &src) in picks.iter().enumerate() {
        let mut row_rng = row_stream(base, r);
        let raw = source.row(src);
        let v: Vec<f64> = raw
            .iter()
            .zip(&state.features)
            .map(|(&x, t)| t.forward_clamped(x))
            .collect();
        let hidden = index::sample(&mut row_rng, n_features, k).into_vec();
        let mask = Mask::hiding(n_features, &hidden);
        let completed = model.complete(&v, &mask)?;
        let mut out = decode_row(&completed, &mask, raw, state, binary, &mut row_rng);
        sanitize_row(&mut out, schema);
        values.extend(out);
    }
    Dataset::from_flat(schema.clone(), values)
}

fn row_stream(base: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(row as u64);
    rng
}

/// Conditional generation: conditioned features are fixed or drawn
/// uniformly (endpoints inclusive), the rest completed by the model.
pub fn augment<C: Completer, R: Rng>(
    model: &C,
    state: &TransformState,
    schema: &DatasetSchema,
    template: &ConditionTemplate,
    count: usize,
    binary: BinaryOutput,
    rng: &mut R,
) -> Result<Dataset> {
    check_compatible(state, schema, model.feature_count())?;
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    let n_features = schema.len();
    let mask = Mask::new(
        template
            .directives()
            .iter()
            .map(|d| !matches!(d, Directive::Masked))
            .collect(),
    );
    let base: u64 = rng.gen();

    let mut values = Vec::with_capacity(count * n_features);
    for r in 0..count {
        let mut row_rng = row_stream(base, r);
        let raw: Vec<f64> = template
            .directives()
            .iter()
            .map(|d| match *d {
                Directive::Fixed(v) => v,
                Directive::Range([lo, hi]) => {
                    if lo == hi {
                        lo
                    } else {
                        row_rng.gen_range(lo..=hi)
                    }
                }
                Directive::Masked => 0.0,
            })
            .collect();
        let v: Vec<f64> = raw
            .iter()
            .zip(&state.features)
            .enumerate()
            .map(|(j, (&x, t))| if mask.is_observed(j) { t.forward_clamped(x) } else { 0.0 })
            .collect();
        let completed = model.complete(&v, &mask)?;
        let mut out = decode_row(&completed, &mask, &raw, state, binary, &mut row_rng);
        sanitize_row(&mut out, schema);
        values.extend(out);
    }
    Dataset::from_flat(schema.clone(), values)
}

/// Template conditioning each stratifying feature on the cohort's observed
/// range; every other feature is masked.
pub fn cohort_template(cohort: &Dataset, stratifying: &[&str]) -> Result<ConditionTemplate> {
    if cohort.is_empty() {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }
    let schema = cohort.schema();
    let mut named = Vec::with_capacity(stratifying.len());
    for &name in stratifying {
        let col = cohort.column_by_name(name)?;
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let d = if schema.feature(schema.index_of(name)?).kind == FeatureKind::Binary && lo != hi {
            // A binary stratifier spanning both values conditions on nothing.
            continue;
        } else {
            Directive::Range([lo, hi])
        };
        named.push((name, d));
    }
    ConditionTemplate::from_named(schema, &named)
}

/// Generates `multiplier · |cohort|` rows conditioned on the cohort's ranges
/// of the stratifying features.
#[allow(clippy::too_many_arguments)]
pub fn augment_cohort<C: Completer, R: Rng>(
    model: &C,
    state: &TransformState,
    cohort: &Dataset,
    stratifying: &[&str],
    multiplier: usize,
    binary: BinaryOutput,
    rng: &mut R,
) -> Result<Dataset> {
    if multiplier == 0 {
        return Err(Error::InvalidArgument("multiplier must be >= 1".into()));
    }
    let template = cohort_template(cohort, stratifying)?;
    augment(
        model,
        state,
        cohort.schema(),
        &template,
        multiplier * cohort.n_rows(),
        binary,
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSpec;

    /// Returns the (zero-filled) input unchanged.
    struct Echo;

    impl Completer for Echo {
        fn feature_count(&self) -> usize {
            5
        }

        fn complete(&self, v: &[f64], _mask: &Mask) -> Result<Vec<f64>> {
            Ok(v.to_vec())
        }
    }

    /// Looks the true row up by its observed values: a perfect reconstructor.
    struct Oracle(Vec<Vec<f64>>);

    impl Completer for Oracle {
        fn feature_count(&self) -> usize {
            5
        }

        fn complete(&self, v: &[f64], mask: &Mask) -> Result<Vec<f64>> {
            let hit = self
                .0
                .iter()
                .find(|r| (0..v.len()).all(|j| !mask.is_observed(j) || r[j] == v[j]))
                .expect("row present");
            Ok(hit.clone())
        }
    }

    fn schema() -> DatasetSchema {
        use FeatureKind::*;
        use FeatureRole::*;
        DatasetSchema::new(vec![
            FeatureSpec::new("age", Continuous, Covariate),
            FeatureSpec::new("sex", Binary, Covariate),
            FeatureSpec::new("bmi", Continuous, Covariate),
            FeatureSpec::new("time", Continuous, Duration),
            FeatureSpec::new("dead", Binary, Event),
        ])
        .unwrap()
    }

    fn data() -> Dataset {
        let rows = (0..40)
            .map(|i| {
                let f = i as f64;
                vec![
                    40.0 + f,
                    (i % 2) as f64,
                    20.0 + (f * 0.37).sin() * 4.0 + f * 0.1,
                    10.0 + 7.0 * f,
                    ((i / 3) % 2) as f64,
                ]
            })
            .collect();
        Dataset::from_rows(schema(), rows).unwrap()
    }

    #[test]
    fn template_json_parsing_and_validation() {
        let s = schema();
        let t = ConditionTemplate::from_json_str(
            &s,
            r#"{"age": {"range": [50, 55]}, "time": {"range": [240, 300]}, "sex": "masked"}"#,
        )
        .unwrap();
        assert_eq!(t.directives()[0], Directive::Range([50.0, 55.0]));
        assert_eq!(t.directives()[1], Directive::Masked);
        assert_eq!(t.directives()[4], Directive::Masked);
        let back = ConditionTemplate::from_json_str(&s, &t.to_json_string(&s)).unwrap();
        assert_eq!(back, t);

        let all_set = r#"{"age": {"fixed": 1}, "sex": {"fixed": 1}, "bmi": {"fixed": 1},
                          "time": {"fixed": 1}, "dead": {"fixed": 1}}"#;
        assert!(ConditionTemplate::from_json_str(&s, all_set).is_err());
        assert!(ConditionTemplate::from_json_str(&s, r#"{"age": "masked"}"#).is_err());
        assert!(ConditionTemplate::from_json_str(&s, r#"{"age": {"range": [5, 1]}}"#).is_err());
        assert!(ConditionTemplate::from_json_str(&s, r#"{"sex": {"fixed": 2}}"#).is_err());
        assert!(ConditionTemplate::from_json_str(&s, r#"{"time": {"fixed": -1}}"#).is_err());
        assert!(ConditionTemplate::from_json_str(&s, r#"{"height": {"fixed": 1}}"#).is_err());
    }

    #[test]
    fn mask_counts() {
        assert_eq!(mask_count(0.75, 8).unwrap(), 6);
        assert_eq!(mask_count(0.5, 8).unwrap(), 4);
        assert_eq!(mask_count(0.01, 8).unwrap(), 1);
        assert!(mask_count(0.97, 8).is_err());
        assert!(mask_count(0.0, 8).is_err());
        assert!(mask_count(1.0, 8).is_err());
    }

    #[test]
    fn synthesis_with_one_masked_feature_changes_one_coordinate() {
        let ds = data();
        let state = TransformState::fit(&ds).unwrap();
        let model = McmModel::init(5, 8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = synthesize(&model, &state, &ds, 0.05, ds.n_rows(), BinaryOutput::Threshold, &mut rng)
            .unwrap();
        assert_eq!(out.n_rows(), ds.n_rows());
        // Without replacement every source row appears once; match by the
        // unchanged coordinates.
        for row in out.rows() {
            let best = ds
                .rows()
                .map(|src| src.iter().zip(row).filter(|(a, b)| a != b).count())
                .min()
                .unwrap();
            assert!(best <= 1);
        }
    }

    #[test]
    fn oracle_synthesis_reproduces_source_distribution() {
        let ds = data();
        let state = TransformState::fit(&ds).unwrap();
        let v = state.forward(&ds).unwrap();
        let oracle = Oracle(v);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = synthesize(&oracle, &state, &ds, 0.4, ds.n_rows(), BinaryOutput::Threshold, &mut rng)
            .unwrap();
        for j in 0..5 {
            let mut a = ds.column(j);
            let mut b = out.column(j);
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "col {j}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_samples_with_replacement() {
        let ds = data();
        let state = TransformState::fit(&ds).unwrap();
        let model = McmModel::init(5, 8, 1).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            synthesize(&model, &state, &ds, 0.5, 100, BinaryOutput::Sample, &mut rng).unwrap()
        };
        assert_eq!(run(4), run(4));
        assert_eq!(run(4).n_rows(), 100);
        let out = run(4);
        for row in out.rows() {
            assert!(row[1] == 0.0 || row[1] == 1.0);
            assert!(row[3] >= 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(synthesize(&model, &state, &ds, 0.95, 10, BinaryOutput::Threshold, &mut rng).is_err());
    }

    #[test]
    fn augmentation_honours_template() {
        let ds = data();
        let s = schema();
        let state = TransformState::fit(&ds).unwrap();
        let model = McmModel::init(5, 8, 2).unwrap();
        let t = ConditionTemplate::from_named(
            &s,
            &[("age", Directive::Range([50.0, 55.0])), ("time", Directive::Range([240.0, 300.0]))],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = augment(&model, &state, &s, &t, 300, BinaryOutput::Threshold, &mut rng).unwrap();
        assert_eq!(out.n_rows(), 300);
        for row in out.rows() {
            assert!((50.0..=55.0).contains(&row[0]));
            assert!((240.0..=300.0).contains(&row[3]));
        }

        let t = ConditionTemplate::from_named(&s, &[("sex", Directive::Fixed(1.0))]).unwrap();
        let out = augment(&model, &state, &s, &t, 10, BinaryOutput::Threshold, &mut rng).unwrap();
        assert!(out.column(1).iter().all(|&x| x == 1.0));

        let t = ConditionTemplate::from_named(&s, &[("age", Directive::Range([60.0, 60.0]))]).unwrap();
        let out = augment(&model, &state, &s, &t, 20, BinaryOutput::Threshold, &mut rng).unwrap();
        assert!(out.column(0).iter().all(|&x| x == 60.0));

        assert!(augment(&model, &state, &s, &t, 0, BinaryOutput::Threshold, &mut rng).is_err());
    }

    #[test]
    fn echo_completer_passes_conditioned_values() {
        let ds = data();
        let s = schema();
        let state = TransformState::fit(&ds).unwrap();
        let t = ConditionTemplate::from_named(&s, &[("bmi", Directive::Fixed(22.5))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = augment(&Echo, &state, &s, &t, 5, BinaryOutput::Threshold, &mut rng).unwrap();
        assert!(out.column(2).iter().all(|&x| x == 22.5));
    }

    #[test]
    fn cohort_augmentation() {
        let ds = data();
        let cohort = crate::dataset::filter_cohort(&ds, &"age>=70".parse().unwrap()).unwrap();
        assert_eq!(cohort.n_rows(), 10);
        let state = TransformState::fit(&ds).unwrap();
        let model = McmModel::init(5, 8, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = augment_cohort(&model, &state, &cohort, &["age"], 5, BinaryOutput::Threshold, &mut rng)
            .unwrap();
        assert_eq!(out.n_rows(), 50);
        assert!(out.column(0).iter().all(|&a| (70.0..=79.0).contains(&a)));
        let one = augment_cohort(&model, &state, &cohort, &["age"], 1, BinaryOutput::Threshold, &mut rng)
            .unwrap();
        assert_eq!(one.n_rows(), 10);
        let empty = cohort.select(&[]);
        assert!(augment_cohort(&model, &state, &empty, &["age"], 1, BinaryOutput::Threshold, &mut rng)
            .is_err());
    }
}
