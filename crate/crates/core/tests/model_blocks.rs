use climat::autodiff::Graph;
use climat::features::{encode_record, patchify, quantize_onehot, unpatchify, ClinicalValue, ClinicalVariable, VariableKind};
use climat::image::ToyImage;
use climat::model::{argmax, Climat, ClimatConfig, HeadMode, ModelInputs};
use climat::nn::{encoder_forward, extract_attention, glorot, msa, Encoder, EncoderConfig, ParamStore};
use climat::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn matvec_rows(x: &[f64], n: usize, c_in: usize, w: &[f64], c_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c_out];
    for i in 0..n {
        for o in 0..c_out {
            out[i * c_out + o] = (0..c_in).map(|k| x[i * c_in + k] * w[k * c_out + o]).sum();
        }
    }
    out
}

/// Textbook multi-head attention with explicit loops.
fn msa_oracle(x: &[f64], n: usize, c: usize, heads: usize, p: &ParamStore) -> Vec<f64> {
    let q = matvec_rows(x, n, c, p.get("a.WQ.W").unwrap().data(), c);
    let k = matvec_rows(x, n, c, p.get("a.WK.W").unwrap().data(), c);
    let v = matvec_rows(x, n, c, p.get("a.WV.W").unwrap().data(), c);
    let dk = c / heads;
    let mut joined = vec![0.0; n * c];
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..dk).map(|d| q[i * c + h * dk + d] * k[j * c + h * dk + d]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..dk {
                joined[i * c + h * dk + d] = (0..n).map(|j| e[j] / z * v[j * c + h * dk + d]).sum();
            }
        }
    }
    let mut out = matvec_rows(&joined, n, c, p.get("a.WO.W").unwrap().data(), c);
    let b = p.get("a.WO.b").unwrap().data();
    for i in 0..n {
        for o in 0..c {
            out[i * c + o] += b[o];
        }
    }
    out
}

#[test]
fn msa_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(n, c, heads) in &[(5, 8, 2), (3, 12, 3), (7, 4, 1)] {
        let mut p = ParamStore::new();
        for w in ["WQ", "WK", "WV", "WO"] {
            p.insert(format!("a.{w}.W"), glorot(&mut rng, c, c)).unwrap();
        }
        p.insert("a.WO.b", random_tensor(&mut rng, &[c])).unwrap();
        let x = random_tensor(&mut rng, &[1, n, c]);
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let nodes = msa(&mut g, "a", xi, heads).unwrap();
        g.forward(&p).unwrap();
        let got = g.value(nodes.output).unwrap().data();
        let want = msa_oracle(x.data(), n, c, heads, &p);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

fn small_encoder(k: usize, max_inputs: usize) -> Encoder {
    Encoder::new(
        "E",
        EncoderConfig {
            layers: 2,
            heads: 2,
            width: 8,
            cls_tokens: k,
            max_inputs,
        },
    )
    .unwrap()
}

#[test]
fn encoder_output_length_is_cls_plus_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [1, 3] {
        let enc = small_encoder(k, 6);
        let mut p = ParamStore::new();
        enc.init(&mut p, &mut rng).unwrap();
        for n in 1..=6 {
            let (out, cache) = encoder_forward(&enc, &p, &random_tensor(&mut rng, &[n, 8])).unwrap();
            assert_eq!(out.shape(), &[k + n, 8]);
            assert_eq!(cache.unwrap().tokens(), k + n);
        }
        assert!(encoder_forward(&enc, &p, &random_tensor(&mut rng, &[7, 8])).is_err());
    }
}

#[test]
fn zeroed_output_projections_give_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = small_encoder(2, 5);
    let mut p = ParamStore::new();
    enc.init(&mut p, &mut rng).unwrap();
    for (name, t) in p.iter_mut() {
        if name.contains(".WO.") || name.contains(".mlp2.") {
            t.data_mut().fill(0.0);
        }
    }
    let x = random_tensor(&mut rng, &[3, 5, 8]);
    let mut g = Graph::new();
    let xi = g.constant(x);
    let nodes = enc.forward(&mut g, xi).unwrap();
    g.forward(&p).unwrap();
    assert_eq!(g.value(nodes.output).unwrap(), g.value(nodes.embedded).unwrap());
}

#[test]
fn extracted_attention_matches_graph_and_is_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let enc = small_encoder(2, 6);
    let mut p = ParamStore::new();
    enc.init(&mut p, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[2, 6, 8]);
    let mut g = Graph::new();
    let xi = g.constant(x);
    let nodes = enc.forward(&mut g, xi).unwrap();
    g.forward(&p).unwrap();
    let maps = extract_attention(Some(&nodes.attention_cache(&g, 2).unwrap())).unwrap();
    let heads: Vec<&Tensor> = nodes.last.as_ref().unwrap().head_attention.iter().map(|&h| g.value(h).unwrap()).collect();
    let n = 8;
    for (b, m) in maps.iter().enumerate() {
        for i in 0..n {
            let row = &m.data()[i * n..(i + 1) * n];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..n {
                let avg = heads.iter().map(|h| h.data()[b * n * n + i * n + j]).sum::<f64>() / 2.0;
                assert!((row[j] - avg).abs() < 1e-12);
            }
        }
    }
    assert!(extract_attention(None).is_err());
}

fn sample_inputs(cfg: &ClimatConfig, batch: usize, seed: u64) -> ModelInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patches = Tensor::new(
        vec![batch, cfg.patches(), cfg.patch_pixels()],
        (0..batch * cfg.patches() * cfg.patch_pixels()).map(|_| rng.gen::<f64>()).collect(),
    )
    .unwrap();
    let mut clinical = vec![0.0; batch * cfg.clinical_vars * 4];
    for slot in clinical.chunks_exact_mut(4) {
        slot[rng.gen_range(0..4)] = 1.0;
    }
    ModelInputs {
        patches,
        clinical: Tensor::new(vec![batch, cfg.clinical_vars, 4], clinical).unwrap(),
    }
}

#[test]
fn default_model_shape_contracts() {
    let cfg = ClimatConfig::default();
    let model = Climat::new(cfg.clone()).unwrap();
    let params = model.init_params(0).unwrap();
    let inputs = sample_inputs(&cfg, 2, 0);
    let mut g = Graph::new();
    let nodes = model.build(&mut g, &inputs).unwrap();
    g.forward(&params).unwrap();
    let n = cfg.patches();
    assert_eq!(n, 16);
    assert_eq!(g.shape(nodes.radiologist.output), &[2, n + 1, 64]);
    assert_eq!(g.shape(nodes.practitioner.embedded), &[2, cfg.cls_tokens + n + 1, 96]);
    assert_eq!(g.shape(nodes.diagnosis), &[2, 1, 3]);
    assert_eq!(nodes.trajectory.len(), 5);
    assert!(params.contains("P.head0.fc2.W") && !params.contains("P.head1.fc2.W"));

    // every fused row is [h_R row ‖ h_C]
    let hr = g.value(nodes.radiologist.output).unwrap();
    let hc = g.value(nodes.context_token).unwrap();
    let fused = g.value(nodes.fused).unwrap();
    for b in 0..2 {
        for r in 0..n + 1 {
            let row = &fused.data()[(b * (n + 1) + r) * 96..(b * (n + 1) + r + 1) * 96];
            assert_eq!(&row[..64], &hr.data()[(b * (n + 1) + r) * 64..(b * (n + 1) + r + 1) * 64]);
            assert_eq!(&row[64..], &hc.data()[b * 32..(b + 1) * 32]);
        }
    }
}

#[test]
fn head_counts_follow_cls_tokens() {
    let base = ClimatConfig {
        width_image: 16,
        width_clinical: 8,
        heads: 2,
        depth_radiologist: 1,
        depth_context: 1,
        depth_practitioner: 1,
        ..ClimatConfig::default()
    };
    let long = ClimatConfig {
        horizons: 8,
        cls_tokens: 9,
        classes: vec![3; 9],
        head_mode: HeadMode::Separate,
        ..base.clone()
    };
    assert_eq!(long.practitioner_heads(), 9);
    let single = ClimatConfig {
        cls_tokens: 1,
        ..base.clone()
    };
    assert_eq!(single.practitioner_heads(), 5);
    assert_eq!(base.practitioner_heads(), 1);
    assert!(ClimatConfig { cls_tokens: 3, ..base.clone() }.validate().is_err());

    for cfg in [long, single] {
        let model = Climat::new(cfg.clone()).unwrap();
        let params = model.init_params(1).unwrap();
        let out = model.forward(&params, &sample_inputs(&cfg, 1, 1)).unwrap();
        assert_eq!(out.trajectory.len(), cfg.tasks());
        let heads = params.paths().filter(|p| p.starts_with("P.head") && p.ends_with("fc2.W")).count();
        assert_eq!(heads, cfg.tasks());
    }
}

#[test]
fn init_and_forward_are_deterministic() {
    let cfg = ClimatConfig {
        depth_practitioner: 1,
        ..ClimatConfig::default()
    };
    let model = Climat::new(cfg.clone()).unwrap();
    let a = model.init_params(9).unwrap();
    let b = model.init_params(9).unwrap();
    assert_eq!(a.as_map(), b.as_map());
    assert_ne!(a.as_map(), model.init_params(10).unwrap().as_map());
    let inputs = sample_inputs(&cfg, 3, 5);
    let o1 = model.forward(&a, &inputs).unwrap();
    let o2 = model.forward(&b, &inputs).unwrap();
    assert_eq!(o1, o2);
    let attn = extract_attention(o1.attention_context.as_ref()).unwrap();
    assert_eq!(attn.len(), 3);
    assert_eq!(attn[0].shape(), &[cfg.clinical_vars + 1, cfg.clinical_vars + 1]);
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    assert_eq!(argmax(&[1.0, 1.0]), 0);
}

#[test]
fn mismatched_inputs_rejected() {
    let cfg = ClimatConfig::default();
    let model = Climat::new(cfg.clone()).unwrap();
    let params = model.init_params(0).unwrap();
    let mut inputs = sample_inputs(&cfg, 1, 0);
    inputs.clinical = Tensor::zeros(&[1, 5, 4]);
    assert!(model.forward(&params, &inputs).is_err());
    assert!(Climat::new(ClimatConfig { patch_size: 10, ..cfg }).is_err());
}

#[test]
fn record_encoding_with_missing() {
    let schema = vec![
        ClinicalVariable { name: "age".into(), kind: VariableKind::Numerical { min: 40.0, max: 80.0 } },
        ClinicalVariable { name: "sex".into(), kind: VariableKind::Categorical { levels: 2 } },
    ];
    let t = encode_record(&schema, &[ClinicalValue::Numerical(65.0), ClinicalValue::Missing]).unwrap();
    assert_eq!(t.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn hand_patch_locality() {
    let mut img = ToyImage::filled(8, 8, 0);
    img.set(5, 1, 255);
    let p = patchify(&img, 4).unwrap();
    // pixel (5, 1) lives in patch 1 at in-patch offset (1, 1)
    assert_eq!(p.data()[16 + 4 + 1], 1.0);
    assert_eq!(p.data().iter().filter(|&&v| v != 0.0).count(), 1);
}

proptest! {
    #[test]
    fn patchify_is_a_partition(seed in 0u64..1000, grid in 1usize..5, patch in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = grid * patch;
        let img = ToyImage::new(side, side, (0..side * side).map(|_| rng.gen()).collect()).unwrap();
        let p = patchify(&img, patch).unwrap();
        prop_assert_eq!(p.shape(), &[grid * grid, patch * patch]);
        prop_assert_eq!(unpatchify(&p, side, side, patch).unwrap(), img);
    }

    #[test]
    fn quantization_is_exactly_one_hot(v in -50.0f64..150.0, lo in -10.0f64..10.0, span in 0.1f64..100.0) {
        let code = quantize_onehot(v, lo, lo + span).unwrap();
        prop_assert_eq!(code.iter().filter(|&&x| x == 1.0).count(), 1);
        prop_assert_eq!(code.iter().sum::<f64>(), 1.0);
        let bin = code.iter().position(|&x| x == 1.0).unwrap();
        // the bin's midpoint maps back to the same bin
        let mid = lo + span * (bin as f64 + 0.5) / 4.0;
        prop_assert_eq!(quantize_onehot(mid, lo, lo + span).unwrap(), code);
    }
}
