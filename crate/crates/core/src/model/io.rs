use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Matrix, McmModel};
use crate::error::{Error, Result};
use crate::transform::TransformState;

pub const MODEL_VERSION: &str = "1.0";

/// On-disk model: weights plus the transform state that produced its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub feature_names: Vec<String>,
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(rename = "W")]
    pub attention: Matrix,
    #[serde(rename = "U1")]
    pub u1: Matrix,
    pub b1: Vec<f64>,
    #[serde(rename = "U2")]
    pub u2: Matrix,
    pub b2: Vec<f64>,
    pub transform_state: TransformState,
}

impl ModelFile {
    pub fn new(model: &McmModel, state: &TransformState) -> Self {
        ModelFile {
            version: MODEL_VERSION.to_string(),
            feature_names: state.features.iter().map(|f| f.name.clone()).collect(),
            hidden: model.hidden,
            attention: model.attention.clone(),
            u1: model.u1.clone(),
            b1: model.b1.clone(),
            u2: model.u2.clone(),
            b2: model.b2.clone(),
            transform_state: state.clone(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Shape("model file has no version field".into()))?;
        if found != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                expected: MODEL_VERSION.to_string(),
                found: found.to_string(),
            });
        }
        let file: ModelFile = serde_json::from_value(value)?;
        file.validate()?;
        Ok(file)
    }

    fn validate(&self) -> Result<()> {
        let n = self.feature_names.len();
        let h = self.hidden;
        let ok = self.attention.rows() == n
            && self.attention.cols() == n
            && self.u1.rows() == h
            && self.u1.cols() == n
            && self.b1.len() == h
            && self.u2.rows() == n
            && self.u2.cols() == h
            && self.b2.len() == n
            && self.transform_state.len() == n;
        if !ok {
            return Err(Error::Shape("model file weight shapes are inconsistent".into()));
        }
        Ok(())
    }

    pub fn into_parts(self) -> (McmModel, TransformState) {
        let model = McmModel {
            feature_count: self.feature_names.len(),
            hidden: self.hidden,
            attention: self.attention,
            u1: self.u1,
            b1: self.b1,
            u2: self.u2,
            b2: self.b2,
        };
        (model, self.transform_state)
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &McmModel, state: &TransformState) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&ModelFile::new(model, state))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(McmModel, TransformState)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(ModelFile::from_json_str(&text)?.into_parts())
}
