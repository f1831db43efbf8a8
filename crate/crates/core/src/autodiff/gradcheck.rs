use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Probe at most this many coordinates per trainable leaf, chosen at
    /// random. `None` probes every coordinate.
    pub max_coords_per_leaf: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords_per_leaf: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |autodiff - fd| / max(1, |fd|)` over every probed coordinate.
    pub max_relative_error: f64,
    /// Leaf and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub probed: usize,
}

/// Compares reverse-mode gradients of the scalar `root` with central finite
/// differences around `point`.
///
/// `point` must bind every leaf of the graph. Each perturbation reruns the
/// full forward pass, so large graphs should cap `max_coords_per_leaf`.
pub fn grad_check(
    graph: &mut Graph,
    root: NodeId,
    point: &impl Bindings,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    graph.forward(point)?;
    let analytic = graph.backward(root)?;

    let names: Vec<String> = graph.params().map(|(n, _)| n.to_string()).collect();
    let mut perturbed: BTreeMap<String, Tensor> = BTreeMap::new();
    for name in &names {
        let t = point.lookup(name).ok_or_else(|| Error::Unbound(name.clone()))?;
        perturbed.insert(name.clone(), t.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        probed: 0,
    };
    let h = options.step;
    for name in &names {
        let numel = perturbed[name].numel();
        let coords: Vec<usize> = match options.max_coords_per_leaf {
            Some(cap) if cap < numel => sample(&mut rng, numel, cap).into_vec(),
            _ => (0..numel).collect(),
        };
        for idx in coords {
            let original = perturbed[name].data()[idx];
            let mut eval_at = |x: f64| -> Result<f64> {
                perturbed.get_mut(name).unwrap().data_mut()[idx] = x;
                graph.forward(&(&perturbed, point))?;
                let v = graph.value(root)?.data()[0];
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        node: root.index(),
                        op: "finite-difference",
                    });
                }
                Ok(v)
            };
            let plus = eval_at(original + h)?;
            let minus = eval_at(original - h)?;
            perturbed.get_mut(name).unwrap().data_mut()[idx] = original;
            let fd = (plus - minus) / (2.0 * h);
            let ad = analytic[name].data()[idx];
            let err = (ad - fd).abs() / fd.abs().max(1.0);
            report.probed += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    // leave the graph holding values at the unperturbed point
    graph.forward(point)?;
    Ok(report)
}
