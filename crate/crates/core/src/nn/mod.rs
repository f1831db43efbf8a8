//! Transformer building blocks: parameter storage, multi-head self-attention,
//! pre-norm encoder stacks, and attention-map extraction.

mod attention;
mod encoder;
mod params;

pub use attention::{extract_attention, AttentionCache};
pub use encoder::{
    encoder_forward, init_layer_norm, init_linear, layer_norm, linear, msa, Encoder, EncoderConfig,
    EncoderNodes, MsaNodes,
};
pub use params::{glorot, normal, ParamStore};
