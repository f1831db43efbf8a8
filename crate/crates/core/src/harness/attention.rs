use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::dataset::{check_compatible, feature_schema, Examples};
use super::evaluate::restore;
use crate::data::load_cohort;
use crate::error::{Error, Result};
use crate::image::ToyImage;
use crate::nn::extract_attention;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionExport {
    /// Block C's CLS row over `[CLS, variables...]`; sums to 1.
    pub clinical: Vec<(String, f64)>,
    /// Block P's readout row for the horizon over image patches,
    /// renormalized to sum to 1, `[grid, grid]`.
    pub image: Tensor,
    /// `image` upsampled to pixel resolution, scaled so the maximum is 255.
    pub heatmap: ToyImage,
    pub files: Vec<PathBuf>,
}

/// Writes `attn_clinical_<id>.csv`, `attn_image_<id>_t<h>.csv`, and
/// `attn_image_<id>_t<h>.pgm` under `out`.
pub fn export_attention(checkpoint: &Path, dataset: &Path, subject: &str, horizon: usize, out: &Path) -> Result<AttentionExport> {
    let r = restore(&Checkpoint::load(checkpoint)?)?;
    let cfg = &r.config.model;
    if horizon >= cfg.tasks() {
        return Err(Error::InvalidArgument(format!("horizon {horizon} outside 0..={}", cfg.horizons)));
    }
    let cohort = load_cohort(dataset)?;
    check_compatible(&cohort, cfg)?;
    let s = cohort
        .subjects
        .iter()
        .find(|s| s.id == subject)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown subject `{subject}`")))?;
    let ranges = r
        .config
        .clinical_ranges
        .as_ref()
        .ok_or_else(|| Error::Config("run configuration lacks clinical ranges".into()))?;
    let schema = feature_schema(&cohort, ranges)?;
    let ex = Examples::build(&[s], &schema, cfg)?;
    let o = r.model.forward(&r.params, &ex.inputs(&[0])?)?;

    let c_map = &extract_attention(o.attention_context.as_ref())?[0];
    let names = std::iter::once("[CLS]".to_string()).chain(schema.iter().map(|v| v.name.clone()));
    let clinical: Vec<(String, f64)> = names.zip(c_map.row(0).iter().copied()).collect();

    let p_map = &extract_attention(o.attention_practitioner.as_ref())?[0];
    let n = cfg.patches();
    let k = cfg.cls_tokens;
    let tokens = k + n + 1;
    let row = &p_map.data()[cfg.readout_row(horizon) * tokens..(cfg.readout_row(horizon) + 1) * tokens];
    // skip the K CLS slots and the radiologist's own CLS row
    let patches = &row[k + 1..];
    let z: f64 = patches.iter().sum();
    let grid = cfg.image_size / cfg.patch_size;
    let image = Tensor::new(vec![grid, grid], patches.iter().map(|w| w / z).collect())?;

    let wmax = image.data().iter().copied().fold(0.0, f64::max);
    let size = cfg.image_size;
    let mut heatmap = ToyImage::filled(size, size, 0);
    for y in 0..size {
        for x in 0..size {
            let w = image.data()[(y / cfg.patch_size) * grid + x / cfg.patch_size];
            heatmap.set(x, y, (255.0 * w / wmax).round() as u8);
        }
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    let mut text = String::from("token,weight\n");
    for (name, w) in &clinical {
        text.push_str(&format!("{name},{w}\n"));
    }
    let p = out.join(format!("attn_clinical_{subject}.csv"));
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    files.push(p);
    let mut text = String::new();
    for gy in 0..grid {
        let cells: Vec<String> = (0..grid).map(|gx| image.data()[gy * grid + gx].to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let p = out.join(format!("attn_image_{subject}_t{horizon}.csv"));
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    files.push(p);
    let p = out.join(format!("attn_image_{subject}_t{horizon}.pgm"));
    std::fs::write(&p, heatmap.to_pgm()).map_err(|e| Error::io(&p, e))?;
    files.push(p);
    Ok(AttentionExport {
        clinical,
        image,
        heatmap,
        files,
    })
}
