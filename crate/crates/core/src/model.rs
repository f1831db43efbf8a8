//! The three-agent forecaster.
//!
//! * Radiologist (`R`) encodes image tokens and predicts the current grade
//!   from the average-pooled output states.
//! * Context (`C`) encodes clinical tokens into one context token.
//! * General Practitioner (`P`) reads every `R` state fused channel-wise with
//!   the context token, prepends `K` CLS tokens, and predicts grades at
//!   horizons `0..=T`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::features::{clinical_extract, image_extract, init_ffn_extract, ONEHOT_BINS};
use crate::nn::{
    init_layer_norm, init_linear, layer_norm, linear, AttentionCache, Encoder, EncoderConfig,
    EncoderNodes, ParamStore,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One prediction head shared by every horizon.
    Common,
    /// One head per horizon.
    Separate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClimatConfig {
    /// Number of future horizons `T`; the model predicts `T + 1` targets.
    pub horizons: usize,
    /// CLS tokens in block P (`1` or `T + 1`).
    pub cls_tokens: usize,
    pub depth_radiologist: usize,
    pub depth_context: usize,
    pub depth_practitioner: usize,
    pub width_image: usize,
    pub width_clinical: usize,
    pub heads: usize,
    /// Class count per horizon, `T + 1` entries.
    pub classes: Vec<usize>,
    pub head_mode: HeadMode,
    /// Consistency coefficient λ.
    pub consistency: f64,
    pub image_size: usize,
    pub patch_size: usize,
    pub clinical_vars: usize,
}

impl Default for ClimatConfig {
    fn default() -> Self {
        Self {
            horizons: 4,
            cls_tokens: 5,
            depth_radiologist: 2,
            depth_context: 2,
            depth_practitioner: 4,
            width_image: 64,
            width_clinical: 32,
            heads: 4,
            classes: vec![3; 5],
            head_mode: HeadMode::Common,
            consistency: 0.5,
            image_size: 64,
            patch_size: 16,
            clinical_vars: 6,
        }
    }
}

impl ClimatConfig {
    pub fn tasks(&self) -> usize {
        self.horizons + 1
    }

    /// Image tokens `N`.
    pub fn patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_pixels(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn width_practitioner(&self) -> usize {
        self.width_image + self.width_clinical
    }

    /// Prediction heads in block P.
    pub fn practitioner_heads(&self) -> usize {
        if self.cls_tokens == 1 || self.head_mode == HeadMode::Separate {
            self.tasks()
        } else {
            1
        }
    }

    /// Output row of block P that feeds horizon `t`.
    pub fn readout_row(&self, t: usize) -> usize {
        t.min(self.cls_tokens - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let t1 = self.tasks();
        if self.cls_tokens != 1 && self.cls_tokens != t1 {
            return Err(Error::Config(format!(
                "cls_tokens must be 1 or T+1 = {t1}, got {}",
                self.cls_tokens
            )));
        }
        if self.classes.len() != t1 || self.classes.iter().any(|&c| c < 2) {
            return Err(Error::Config(format!(
                "classes must list T+1 = {t1} counts of at least 2, got {:?}",
                self.classes
            )));
        }
        if self.practitioner_heads() == 1 && self.classes.iter().any(|&c| c != self.classes[0]) {
            return Err(Error::Config("a common head needs the same class count at every horizon".into()));
        }
        if self.clinical_vars == 0 {
            return Err(Error::Config("at least one clinical variable is required".into()));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "patch size {} does not divide image size {}",
                self.patch_size, self.image_size
            )));
        }
        if !(self.consistency >= 0.0) {
            return Err(Error::Config("consistency coefficient must be non-negative".into()));
        }
        for enc in [self.radiologist(), self.context(), self.practitioner()] {
            enc.validate()?;
        }
        Ok(())
    }

    pub fn radiologist(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.depth_radiologist,
            heads: self.heads,
            width: self.width_image,
            cls_tokens: 1,
            max_inputs: self.patches(),
        }
    }

    pub fn context(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.depth_context,
            heads: self.heads,
            width: self.width_clinical,
            cls_tokens: 1,
            max_inputs: self.clinical_vars,
        }
    }

    pub fn practitioner(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.depth_practitioner,
            heads: self.heads,
            width: self.width_practitioner(),
            cls_tokens: self.cls_tokens,
            max_inputs: self.patches() + 1,
        }
    }
}

/// One batch of model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInputs {
    /// `[B, N, patch²]` pixel patches in `[0, 1]`.
    pub patches: Tensor,
    /// `[B, M, 4]` one-hot clinical codes.
    pub clinical: Tensor,
}

impl ModelInputs {
    pub fn batch(&self) -> usize {
        self.patches.shape()[0]
    }
}

/// Graph handles for one forward pass.
#[derive(Clone, Debug)]
pub struct ForecastNodes {
    /// `f_0^R`, `[B, 1, N_c^0]`.
    pub diagnosis: NodeId,
    /// `f_t` for `t = 0..=T`, each `[B, 1, N_c^t]`.
    pub trajectory: Vec<NodeId>,
    pub radiologist: EncoderNodes,
    pub context: EncoderNodes,
    pub practitioner: EncoderNodes,
    /// `h̄_C^0`, `[B, 1, C_M]`.
    pub context_token: NodeId,
    /// Block P input before CLS tokens: `[B, N+1, C_X + C_M]`.
    pub fused: NodeId,
}

/// Materialized outputs of [`Climat::forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastOutput {
    pub diagnosis: Tensor,
    pub trajectory: Vec<Tensor>,
    /// `h̄_R`, `[B, N+1, C_X]`.
    pub radiologist_states: Tensor,
    pub context_token: Tensor,
    pub attention_radiologist: Option<AttentionCache>,
    pub attention_context: Option<AttentionCache>,
    pub attention_practitioner: Option<AttentionCache>,
}

impl ForecastOutput {
    /// `ŷ_t` per batch element, ties broken toward the lowest class.
    pub fn predicted_grades(&self, t: usize) -> Vec<usize> {
        let logits = &self.trajectory[t];
        let nc = *logits.shape().last().unwrap();
        logits.data().chunks_exact(nc).map(argmax).collect()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Climat {
    config: ClimatConfig,
    radiologist: Encoder,
    context: Encoder,
    practitioner: Encoder,
}

impl Climat {
    pub fn new(config: ClimatConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            radiologist: Encoder::new("R", config.radiologist())?,
            context: Encoder::new("C", config.context())?,
            practitioner: Encoder::new("P", config.practitioner())?,
            config,
        })
    }

    pub fn config(&self) -> &ClimatConfig {
        &self.config
    }

    /// Fresh parameters, rounded to `f32` precision.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_ffn_extract(&mut store, &mut rng, "X.patch", cfg.patch_pixels(), cfg.width_image)?;
        for i in 0..cfg.clinical_vars {
            init_ffn_extract(&mut store, &mut rng, &format!("M.var{i}"), ONEHOT_BINS, cfg.width_clinical)?;
        }
        self.radiologist.init(&mut store, &mut rng)?;
        self.context.init(&mut store, &mut rng)?;
        self.practitioner.init(&mut store, &mut rng)?;

        let cx = cfg.width_image;
        init_linear(&mut store, &mut rng, "R.head.fc1", cx, cx, true)?;
        init_layer_norm(&mut store, "R.head.ln", cx)?;
        init_linear(&mut store, &mut rng, "R.head.fc2", cx, cfg.classes[0], true)?;

        let cp = cfg.width_practitioner();
        for j in 0..cfg.practitioner_heads() {
            let hp = format!("P.head{j}");
            init_layer_norm(&mut store, &format!("{hp}.ln"), cp)?;
            init_linear(&mut store, &mut rng, &format!("{hp}.fc1"), cp, cp, true)?;
            init_linear(&mut store, &mut rng, &format!("{hp}.fc2"), cp, cfg.classes[j], true)?;
        }
        store.round_to_f32();
        Ok(store)
    }

    /// Block R over `img_tokens: [B, N, C_X]`; returns `(h̄_R, f_0^R)`.
    pub fn radiologist_forward(&self, g: &mut Graph, img_tokens: NodeId) -> Result<(EncoderNodes, NodeId)> {
        let nodes = self.radiologist.forward(g, img_tokens)?;
        let pooled = g.mean(nodes.output, 1)?;
        let cx = self.config.width_image;
        let h = linear(g, "R.head.fc1", pooled, cx, cx, true)?;
        let h = g.gelu(h);
        let h = layer_norm(g, "R.head.ln", h)?;
        let logits = linear(g, "R.head.fc2", h, cx, self.config.classes[0], true)?;
        Ok((nodes, logits))
    }

    /// Block C over `clinical_tokens: [B, M, C_M]`; returns the encoder and
    /// its first output row `[B, 1, C_M]`.
    pub fn context_forward(&self, g: &mut Graph, clinical_tokens: NodeId) -> Result<(EncoderNodes, NodeId)> {
        if g.shape(clinical_tokens).get(1).copied().unwrap_or(0) == 0 {
            return Err(Error::Config("context block needs at least one clinical token".into()));
        }
        let nodes = self.context.forward(g, clinical_tokens)?;
        let token = g.slice(nodes.output, 1, 0, 1)?;
        Ok((nodes, token))
    }

    /// Block P. Returns the encoder, the fused input rows, and `f_0..f_T`.
    pub fn practitioner_forward(
        &self,
        g: &mut Graph,
        radiologist_states: NodeId,
        context_token: NodeId,
    ) -> Result<(EncoderNodes, NodeId, Vec<NodeId>)> {
        let cfg = &self.config;
        let rs = g.shape(radiologist_states).to_vec();
        let ct = g.shape(context_token).to_vec();
        if rs.len() != 3 || ct != [rs[0], 1, cfg.width_clinical] || rs[2] != cfg.width_image {
            return Err(Error::shape("practitioner", format!("h_R {rs:?}, h_C {ct:?}")));
        }
        let copies = g.broadcast_to(context_token, &[rs[0], rs[1], cfg.width_clinical])?;
        let fused = g.concat(&[radiologist_states, copies], 2)?;
        let nodes = self.practitioner.forward(g, fused)?;
        let cp = cfg.width_practitioner();
        let mut logits = Vec::with_capacity(cfg.tasks());
        for t in 0..cfg.tasks() {
            let row = g.slice(nodes.output, 1, cfg.readout_row(t), 1)?;
            let j = if cfg.practitioner_heads() == 1 { 0 } else { t };
            let hp = format!("P.head{j}");
            let h = layer_norm(g, &format!("{hp}.ln"), row)?;
            let h = linear(g, &format!("{hp}.fc1"), h, cp, cp, true)?;
            let h = g.gelu(h);
            logits.push(linear(g, &format!("{hp}.fc2"), h, cp, cfg.classes[t], true)?);
        }
        Ok((nodes, fused, logits))
    }

    /// Adds the full forward pass for `inputs` to `g`.
    pub fn build(&self, g: &mut Graph, inputs: &ModelInputs) -> Result<ForecastNodes> {
        let cfg = &self.config;
        let ps = inputs.patches.shape();
        let cs = inputs.clinical.shape();
        if ps.len() != 3 || ps[1] != cfg.patches() || ps[2] != cfg.patch_pixels() {
            return Err(Error::shape("climat", format!("patches {ps:?}")));
        }
        if cs != [ps[0], cfg.clinical_vars, ONEHOT_BINS] {
            return Err(Error::shape("climat", format!("clinical {cs:?}")));
        }
        let patches = g.constant(inputs.patches.clone());
        let codes = g.constant(inputs.clinical.clone());
        let img_tokens = image_extract(g, "X.patch", patches, cfg.width_image)?;
        let clin_tokens = clinical_extract(g, "M", codes, cfg.width_clinical)?;
        let (radiologist, diagnosis) = self.radiologist_forward(g, img_tokens)?;
        let (context, context_token) = self.context_forward(g, clin_tokens)?;
        let (practitioner, fused, trajectory) =
            self.practitioner_forward(g, radiologist.output, context_token)?;
        Ok(ForecastNodes {
            diagnosis,
            trajectory,
            radiologist,
            context,
            practitioner,
            context_token,
            fused,
        })
    }

    /// Inference-only forward pass.
    pub fn forward(&self, params: &ParamStore, inputs: &ModelInputs) -> Result<ForecastOutput> {
        let mut g = Graph::new();
        let nodes = self.build(&mut g, inputs)?;
        g.forward(params)?;
        self.collect(&g, &nodes)
    }

    pub fn collect(&self, g: &Graph, nodes: &ForecastNodes) -> Result<ForecastOutput> {
        let heads = self.config.heads;
        let cache = |e: &EncoderNodes| -> Result<Option<AttentionCache>> {
            e.last.as_ref().map(|_| e.attention_cache(g, heads)).transpose()
        };
        Ok(ForecastOutput {
            diagnosis: g.value(nodes.diagnosis)?.clone(),
            trajectory: nodes
                .trajectory
                .iter()
                .map(|&id| g.value(id).cloned())
                .collect::<Result<_>>()?,
            radiologist_states: g.value(nodes.radiologist.output)?.clone(),
            context_token: g.value(nodes.context_token)?.clone(),
            attention_radiologist: cache(&nodes.radiologist)?,
            attention_context: cache(&nodes.context)?,
            attention_practitioner: cache(&nodes.practitioner)?,
        })
    }
}
