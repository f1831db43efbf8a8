//! Runs a two-layer encoder with one CLS token over random tokens and prints
//! the head-averaged last-layer attention map.

use climat::nn::{encoder_forward, extract_attention, Encoder, EncoderConfig, ParamStore};
use climat::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> climat::Result<()> {
    let config = EncoderConfig {
        layers: 2,
        heads: 4,
        width: 16,
        cls_tokens: 1,
        max_inputs: 5,
    };
    let encoder = Encoder::new("enc", config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParamStore::new();
    encoder.init(&mut params, &mut rng)?;
    println!("{} tensors, {} scalars", params.len(), params.num_scalars());

    let tokens = Tensor::new(vec![5, 16], (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let (out, cache) = encoder_forward(&encoder, &params, &tokens)?;
    println!("output shape {:?} (CLS row first)", out.shape());

    let map = &extract_attention(cache.as_ref())?[0];
    println!("attention (rows: queries, columns: keys; index 0 is CLS):");
    for i in 0..map.shape()[0] {
        let row: Vec<String> = map.row(i).iter().map(|w| format!("{w:.3}")).collect();
        let sum: f64 = map.row(i).iter().sum();
        println!("  {i}: [{}]  sum {sum:.6}", row.join(" "));
    }
    Ok(())
}
