//! Common interface over fitted encoders and the on-disk model format.

use ndarray::{Array2, ArrayView2};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linear::LinearEncoderDecoder;
use crate::neural::TaeModel;

/// Anything that encodes frames into a latent space and forecasts (or
/// reconstructs) frames in the input space.
pub trait Model {
    fn method_name(&self) -> &'static str;
    fn lag(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn encode(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
    fn predict(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl Model for LinearEncoderDecoder {
    fn method_name(&self) -> &'static str {
        match self.method {
            crate::linear::LinearMethod::Pca => "pca",
            crate::linear::LinearMethod::Tica => "tica",
            crate::linear::LinearMethod::Tcca => "tcca",
        }
    }

    fn lag(&self) -> usize {
        self.lag
    }

    fn input_dim(&self) -> usize {
        LinearEncoderDecoder::input_dim(self)
    }

    fn latent_dim(&self) -> usize {
        LinearEncoderDecoder::latent_dim(self)
    }

    fn encode(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        LinearEncoderDecoder::encode(self, data)
    }

    fn predict(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        LinearEncoderDecoder::predict(self, data)
    }
}

impl Model for TaeModel {
    fn method_name(&self) -> &'static str {
        "tae"
    }

    fn lag(&self) -> usize {
        self.lag
    }

    fn input_dim(&self) -> usize {
        TaeModel::input_dim(self)
    }

    fn latent_dim(&self) -> usize {
        TaeModel::latent_dim(self)
    }

    fn encode(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        TaeModel::encode(self, data)
    }

    fn predict(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        TaeModel::predict(self, data)
    }
}

/// A model loaded from or destined for a JSON file. The `method` field of
/// the document selects the variant: `pca`, `tica`, `tcca`, or `tae`.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Linear(LinearEncoderDecoder),
    Tae(TaeModel),
}

impl AnyModel {
    pub fn as_model(&self) -> &dyn Model {
        match self {
            AnyModel::Linear(m) => m,
            AnyModel::Tae(m) => m,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let value = match self {
            AnyModel::Linear(m) => serde_json::to_value(m)?,
            AnyModel::Tae(m) => {
                let mut v = serde_json::to_value(m)?;
                v.as_object_mut()
                    .expect("TaeModel serializes to an object")
                    .insert("method".into(), Value::String("tae".into()));
                v
            }
        };
        Ok(serde_json::to_string_pretty(&value)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let method = value
            .get("method")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Data("model file lacks a 'method' field".into()))?;
        match method {
            "pca" | "tica" | "tcca" => Ok(AnyModel::Linear(serde_json::from_value(value)?)),
            "tae" => Ok(AnyModel::Tae(serde_json::from_value(value)?)),
            other => Err(Error::Data(format!("unknown model method '{other}'"))),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
