//! On-disk cohort layout:
//!
//! ```text
//! manifest.json      config echo, variables, subject list, sha256 per file
//! clinical.csv       subject_id, variables..., y_0..y_T, mask_0..mask_T
//! images/<id>.pgm    baseline image (P5)
//! ```
//!
//! Masked labels are written as `-1`, missing clinical values as empty fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{clinical_schema, synthesize_subject, CohortConfig, Subject, VariableSpec, VariableType};
use crate::error::{Error, Result};
use crate::features::ClinicalValue;
use crate::image::ToyImage;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const CSV_NAME: &str = "clinical.csv";
pub const IMAGE_DIR: &str = "images";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: CohortConfig,
    pub variables: Vec<VariableSpec>,
    pub subjects: Vec<String>,
    /// Relative path to lowercase hex sha256.
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub manifest: Manifest,
    pub subjects: Vec<Subject>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn header(variables: &[VariableSpec], horizons: usize) -> Vec<String> {
    let mut h = vec!["subject_id".to_string()];
    h.extend(variables.iter().map(|v| v.name.clone()));
    h.extend((0..=horizons).map(|t| format!("y_{t}")));
    h.extend((0..=horizons).map(|t| format!("mask_{t}")));
    h
}

/// Writes a full cohort under `out` and returns its manifest.
pub fn generate_cohort(cfg: &CohortConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let images = out.join(IMAGE_DIR);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let variables = clinical_schema();
    let mut files = BTreeMap::new();
    let mut ids = Vec::with_capacity(cfg.subjects);

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(header(&variables, cfg.horizons))?;
    for i in 0..cfg.subjects {
        let s = synthesize_subject(cfg, i)?.subject;
        let rel = format!("{IMAGE_DIR}/{}.pgm", s.id);
        let pgm = s.image.to_pgm();
        write(&out.join(&rel), &pgm)?;
        files.insert(rel, sha256_hex(&pgm));

        let mut row = vec![s.id.clone()];
        for v in &s.clinical {
            row.push(match v {
                ClinicalValue::Numerical(x) => format!("{x}"),
                ClinicalValue::Categorical(c) => c.to_string(),
                ClinicalValue::Missing => String::new(),
            });
        }
        row.extend(s.labels.iter().map(|l| l.map_or("-1".to_string(), |y| y.to_string())));
        row.extend(s.labels.iter().map(|l| if l.is_some() { "1" } else { "0" }.to_string()));
        csv.write_record(&row)?;
        ids.push(s.id);
    }
    let table = csv.into_inner().map_err(|e| Error::Dataset(format!("csv buffer: {e}")))?;
    write(&out.join(CSV_NAME), &table)?;
    files.insert(CSV_NAME.to_string(), sha256_hex(&table));

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        variables,
        subjects: ids,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write(&out.join(MANIFEST_NAME), text.as_bytes())?;
    Ok(manifest)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_value(spec: &VariableSpec, field: &str) -> Result<ClinicalValue> {
    if field.is_empty() {
        return Ok(ClinicalValue::Missing);
    }
    let bad = || Error::Dataset(format!("`{}`: cannot parse `{field}`", spec.name));
    match spec.kind {
        VariableType::Numerical => {
            let v: f64 = field.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            Ok(ClinicalValue::Numerical(v))
        }
        VariableType::Categorical { levels } => {
            let c: usize = field.parse().map_err(|_| bad())?;
            if c >= levels {
                return Err(bad());
            }
            Ok(ClinicalValue::Categorical(c))
        }
    }
}

/// Loads and validates a cohort, verifying every checksum.
pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let manifest: Manifest = serde_json::from_slice(&read(&dir.join(MANIFEST_NAME))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Dataset(format!("unsupported format version {}", manifest.format_version)));
    }
    let cfg = &manifest.config;
    cfg.validate()?;
    let mut contents = BTreeMap::new();
    for (rel, digest) in &manifest.files {
        let bytes = read(&dir.join(rel))?;
        if &sha256_hex(&bytes) != digest {
            return Err(Error::Dataset(format!("checksum mismatch for {rel}")));
        }
        contents.insert(rel.clone(), bytes);
    }

    let table = contents
        .get(CSV_NAME)
        .ok_or_else(|| Error::Dataset(format!("manifest does not list {CSV_NAME}")))?;
    let mut reader = csv::Reader::from_reader(table.as_slice());
    let expected = header(&manifest.variables, cfg.horizons);
    if reader.headers()?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Dataset("unexpected CSV header".into()));
    }
    let m = manifest.variables.len();
    let t1 = cfg.horizons + 1;
    let mut rows = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let id = record[0].to_string();
        let clinical = manifest
            .variables
            .iter()
            .enumerate()
            .map(|(i, spec)| parse_value(spec, &record[1 + i]))
            .collect::<Result<Vec<_>>>()?;
        let mut labels = Vec::with_capacity(t1);
        for t in 0..t1 {
            let y: i64 = record[1 + m + t].parse().map_err(|_| Error::Dataset(format!("{id}: bad y_{t}")))?;
            let mask = &record[1 + m + t1 + t];
            labels.push(match (mask, y) {
                ("0", -1) => None,
                ("1", y) if y >= 0 && (y as usize) < cfg.grades => Some(y as usize),
                _ => return Err(Error::Dataset(format!("{id}: inconsistent y_{t}/mask_{t}"))),
            });
        }
        if labels[0].is_none() {
            return Err(Error::Dataset(format!("{id}: baseline label is masked")));
        }
        let observed: Vec<usize> = labels.iter().flatten().copied().collect();
        if observed.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Dataset(format!("{id}: trajectory decreases")));
        }
        if rows.insert(id.clone(), (clinical, labels)).is_some() {
            return Err(Error::Dataset(format!("{id}: duplicate row")));
        }
    }

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for id in &manifest.subjects {
        let (clinical, labels) = rows
            .remove(id)
            .ok_or_else(|| Error::Dataset(format!("{id}: missing from {CSV_NAME}")))?;
        let rel = format!("{IMAGE_DIR}/{id}.pgm");
        let bytes = contents
            .get(&rel)
            .ok_or_else(|| Error::Dataset(format!("manifest does not list {rel}")))?;
        let image = ToyImage::from_pgm(bytes)?;
        if image.width() != cfg.image_size || image.height() != cfg.image_size {
            return Err(Error::Dataset(format!("{rel}: expected {0}x{0}", cfg.image_size)));
        }
        subjects.push(Subject {
            id: id.clone(),
            image,
            clinical,
            labels,
        });
    }
    if let Some(extra) = rows.keys().next() {
        return Err(Error::Dataset(format!("{extra}: not listed in manifest")));
    }
    Ok(Cohort { manifest, subjects })
}
