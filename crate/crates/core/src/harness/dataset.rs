use sha2::{Digest, Sha256};

use super::config::Range;
use crate::data::{Cohort, Subject, VariableType};
use crate::error::{Error, Result};
use crate::features::{encode_record, patchify, ClinicalValue, ClinicalVariable, VariableKind, ONEHOT_BINS};
use crate::losses::TaskTargets;
use crate::model::{ClimatConfig, ModelInputs};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    All,
}

/// Every fifth subject by id hash goes to validation.
pub fn is_validation(id: &str) -> bool {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap()) % 5 == 0
}

pub fn in_split(id: &str, split: Split) -> bool {
    match split {
        Split::Train => !is_validation(id),
        Split::Val => is_validation(id),
        Split::All => true,
    }
}

/// Min/max of each numerical variable over `subjects`; degenerate ranges are
/// widened by 0.5 on both sides.
pub fn clinical_ranges(cohort: &Cohort, subjects: &[&Subject]) -> Vec<Option<Range>> {
    cohort
        .manifest
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| match v.kind {
            VariableType::Categorical { .. } => None,
            VariableType::Numerical => {
                let vals: Vec<f64> = subjects
                    .iter()
                    .filter_map(|s| match s.clinical[i] {
                        ClinicalValue::Numerical(x) => Some(x),
                        _ => None,
                    })
                    .collect();
                let (mut min, mut max) = vals
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                if vals.is_empty() {
                    (min, max) = (0.0, 1.0);
                } else if min == max {
                    (min, max) = (min - 0.5, max + 0.5);
                }
                Some(Range { min, max })
            }
        })
        .collect()
}

pub fn feature_schema(cohort: &Cohort, ranges: &[Option<Range>]) -> Result<Vec<ClinicalVariable>> {
    if ranges.len() != cohort.manifest.variables.len() {
        return Err(Error::Config(format!(
            "{} clinical ranges for {} variables",
            ranges.len(),
            cohort.manifest.variables.len()
        )));
    }
    cohort
        .manifest
        .variables
        .iter()
        .zip(ranges)
        .map(|(v, r)| {
            let kind = match (&v.kind, r) {
                (VariableType::Categorical { levels }, None) => VariableKind::Categorical { levels: *levels },
                (VariableType::Numerical, Some(r)) => VariableKind::Numerical { min: r.min, max: r.max },
                _ => return Err(Error::Config(format!("range/type mismatch for `{}`", v.name))),
            };
            Ok(ClinicalVariable {
                name: v.name.clone(),
                kind,
            })
        })
        .collect()
}

/// Model-ready subjects.
#[derive(Clone, Debug, PartialEq)]
pub struct Examples {
    pub ids: Vec<String>,
    /// `[N, patch²]` per subject.
    pub patches: Vec<Tensor>,
    /// `[M, 4]` per subject.
    pub codes: Vec<Tensor>,
    pub labels: Vec<Vec<Option<usize>>>,
    pub classes: Vec<usize>,
}

/// Rejects cohorts whose layout does not fit `model`.
pub fn check_compatible(cohort: &Cohort, model: &ClimatConfig) -> Result<()> {
    let c = &cohort.manifest.config;
    if c.horizons != model.horizons {
        return Err(Error::Config(format!("dataset has T = {}, model T = {}", c.horizons, model.horizons)));
    }
    if model.classes.iter().any(|&k| k != c.grades) {
        return Err(Error::Config(format!("dataset has {} grades, model classes {:?}", c.grades, model.classes)));
    }
    if c.image_size != model.image_size {
        return Err(Error::Config(format!("dataset images {0}x{0}, model {1}x{1}", c.image_size, model.image_size)));
    }
    if cohort.manifest.variables.len() != model.clinical_vars {
        return Err(Error::Config(format!(
            "dataset has {} clinical variables, model {}",
            cohort.manifest.variables.len(),
            model.clinical_vars
        )));
    }
    Ok(())
}

impl Examples {
    pub fn build(subjects: &[&Subject], schema: &[ClinicalVariable], model: &ClimatConfig) -> Result<Self> {
        let mut out = Examples {
            ids: Vec::with_capacity(subjects.len()),
            patches: Vec::with_capacity(subjects.len()),
            codes: Vec::with_capacity(subjects.len()),
            labels: Vec::with_capacity(subjects.len()),
            classes: model.classes.clone(),
        };
        for s in subjects {
            out.ids.push(s.id.clone());
            out.patches.push(patchify(&s.image, model.patch_size)?);
            out.codes.push(encode_record(schema, &s.clinical)?);
            out.labels.push(s.labels.clone());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn tasks(&self) -> usize {
        self.classes.len()
    }

    pub fn inputs(&self, idx: &[usize]) -> Result<ModelInputs> {
        if idx.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let pshape = self.patches[idx[0]].shape().to_vec();
        let m = self.codes[idx[0]].shape()[0];
        let mut p = Vec::with_capacity(idx.len() * pshape[0] * pshape[1]);
        let mut c = Vec::with_capacity(idx.len() * m * ONEHOT_BINS);
        for &i in idx {
            p.extend_from_slice(self.patches[i].data());
            c.extend_from_slice(self.codes[i].data());
        }
        Ok(ModelInputs {
            patches: Tensor::new(vec![idx.len(), pshape[0], pshape[1]], p)?,
            clinical: Tensor::new(vec![idx.len(), m, ONEHOT_BINS], c)?,
        })
    }

    pub fn targets(&self, idx: &[usize]) -> Vec<TaskTargets> {
        (0..self.tasks())
            .map(|t| {
                let labels: Vec<Option<usize>> = idx.iter().map(|&i| self.labels[i][t]).collect();
                TaskTargets::from_options(self.classes[t], &labels)
            })
            .collect()
    }
}
