//! Builds a small two-layer network on the autodiff graph, backpropagates a
//! cross-entropy loss, and compares every gradient with central differences.

use std::collections::BTreeMap;

use climat::autodiff::{grad_check, GradCheckOptions, Graph};
use climat::losses::graph::cross_entropy;
use climat::nn::glorot;
use climat::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> climat::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![4, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7, 1.2, 0.0, 0.4, -0.2, 0.8, 1.5])?);
    let w1 = g.param("w1", &[3, 8])?;
    let gamma = g.param("ln.gamma", &[8])?;
    let beta = g.param("ln.beta", &[8])?;
    let w2 = g.param("w2", &[8, 3])?;

    let h = g.matmul(x, w1)?;
    let h = g.layer_norm(h, gamma, beta, 1e-5)?;
    let h = g.gelu(h);
    let logits = g.matmul(h, w2)?;
    let onehot = g.constant(Tensor::new(
        vec![4, 3],
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0],
    )?);
    let per_row = cross_entropy(&mut g, logits, onehot)?;
    let loss = g.mean_all(per_row);

    let point: BTreeMap<String, Tensor> = [
        ("w1".to_string(), glorot(&mut rng, 3, 8)),
        ("ln.gamma".to_string(), Tensor::full(&[8], 1.0)),
        ("ln.beta".to_string(), Tensor::zeros(&[8])),
        ("w2".to_string(), glorot(&mut rng, 8, 3)),
    ]
    .into();
    g.forward(&point)?;
    println!("loss = {:.6}", g.value(loss)?.item().unwrap());
    let grads = g.backward(loss)?;
    for (name, grad) in &grads {
        let norm = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  |d loss / d {name}| = {norm:.6}");
    }

    let report = grad_check(&mut g, loss, &point, &GradCheckOptions::default())?;
    println!(
        "gradient check over {} coordinates: max relative error {:.2e}",
        report.probed, report.max_relative_error
    );
    Ok(())
}
