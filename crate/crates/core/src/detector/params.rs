use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamTag {
    /// BatchNorm scale and shift.
    BnAffine,
    /// BatchNorm running mean and variance; updated by forward passes in
    /// training mode, never by the optimizer.
    BnRunning,
    ConvOrHead,
}

impl fmt::Display for ParamTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamTag::BnAffine => "bn_affine",
            ParamTag::BnRunning => "bn_running",
            ParamTag::ConvOrHead => "conv_or_head",
        })
    }
}

impl FromStr for ParamTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bn_affine" => Ok(ParamTag::BnAffine),
            "bn_running" => Ok(ParamTag::BnRunning),
            "conv_or_head" => Ok(ParamTag::ConvOrHead),
            other => Err(Error::Contract(format!("untagged or unknown tensor tag '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub tag: ParamTag,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    trainable: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, tag: ParamTag, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            tag,
            shape,
            data,
            trainable: tag != ParamTag::BnRunning,
        }
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    /// Weight decay applies to conv and head kernels only.
    pub fn decays(&self) -> bool {
        self.tag == ParamTag::ConvOrHead && self.name.ends_with(".weight")
    }
}

/// Named, tagged parameter tensors of one detector.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: Vec<ParamTensor>,
}

impl ModelParams {
    pub fn new(tensors: Vec<ParamTensor>) -> Result<Self> {
        let mut names = std::collections::HashSet::new();
        for t in &tensors {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Contract(format!("duplicate tensor '{}'", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Contract(format!("tensor '{}' shape/data mismatch", t.name)));
            }
        }
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, idx: usize) -> &ParamTensor {
        &self.tensors[idx]
    }

    pub(crate) fn data(&self, idx: usize) -> &[f64] {
        &self.tensors[idx].data
    }

    pub(crate) fn data_mut(&mut self, idx: usize) -> &mut Vec<f64> {
        &mut self.tensors[idx].data
    }

    /// Mutable view of one tensor's values; the length is fixed.
    pub fn values_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.tensors[idx].data
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Freezes every tensor that is not a BatchNorm affine coefficient.
    pub fn freeze_non_bn(&mut self) {
        for t in &mut self.tensors {
            t.trainable = t.tag == ParamTag::BnAffine;
        }
    }

    /// Makes every optimizer-visible tensor trainable again.
    pub fn unfreeze_all(&mut self) {
        for t in &mut self.tensors {
            t.trainable = t.tag != ParamTag::BnRunning;
        }
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let t = self
            .tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Contract(format!("no tensor '{name}'")))?;
        if trainable && t.tag == ParamTag::BnRunning {
            return Err(Error::Contract(format!("running statistic '{name}' cannot be trainable")));
        }
        t.trainable = trainable;
        Ok(())
    }

    /// Names of tensors that differ bitwise from `other`.
    pub fn changed_tensors(&self, other: &ModelParams) -> Vec<String> {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .filter(|(a, b)| {
                a.data.len() != b.data.len()
                    || a.data.iter().zip(&b.data).any(|(x, y)| x.to_bits() != y.to_bits())
            })
            .map(|(a, _)| a.name.clone())
            .collect()
    }
}

/// Splits the optimizer-visible tensors into the BatchNorm affine set and
/// the set frozen during BN-only adaptation. Running statistics are in
/// neither; the two sets are disjoint and cover every other tensor.
pub fn partition_params(params: &ModelParams) -> (Vec<String>, Vec<String>) {
    let mut bn = Vec::new();
    let mut frozen = Vec::new();
    for t in params.tensors() {
        match t.tag {
            ParamTag::BnAffine => bn.push(t.name.clone()),
            ParamTag::ConvOrHead => frozen.push(t.name.clone()),
            ParamTag::BnRunning => {}
        }
    }
    (bn, frozen)
}
