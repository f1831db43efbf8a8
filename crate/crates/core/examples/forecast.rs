//! Runs the untrained default model on two synthetic subjects and prints the
//! predicted grade distribution at every horizon.

use climat::data::{clinical_schema, synthesize_subject, CohortConfig, VariableType};
use climat::features::{encode_record, patchify, ClinicalVariable, VariableKind};
use climat::losses::softmax;
use climat::model::{Climat, ClimatConfig, ModelInputs};
use climat::Tensor;

fn main() -> climat::Result<()> {
    let cohort = CohortConfig::default();
    let cfg = ClimatConfig::default();
    let model = Climat::new(cfg.clone())?;
    let params = model.init_params(0)?;
    println!("default model: {} tensors, {} scalars", params.len(), params.num_scalars());

    // fixed quantization ranges in place of training-split statistics
    let ranges = [(30.0, 90.0), (15.0, 40.0), (0.0, 100.0)];
    let schema: Vec<ClinicalVariable> = clinical_schema()
        .into_iter()
        .enumerate()
        .map(|(i, v)| ClinicalVariable {
            name: v.name,
            kind: match v.kind {
                VariableType::Numerical => VariableKind::Numerical {
                    min: ranges[i].0,
                    max: ranges[i].1,
                },
                VariableType::Categorical { levels } => VariableKind::Categorical { levels },
            },
        })
        .collect();

    let subjects: Vec<_> = (0..2).map(|i| synthesize_subject(&cohort, i)).collect::<climat::Result<_>>()?;
    let mut patches = Vec::new();
    let mut codes = Vec::new();
    for s in &subjects {
        patches.extend_from_slice(patchify(&s.subject.image, cfg.patch_size)?.data());
        codes.extend_from_slice(encode_record(&schema, &s.subject.clinical)?.data());
    }
    let inputs = ModelInputs {
        patches: Tensor::new(vec![2, cfg.patches(), cfg.patch_pixels()], patches)?,
        clinical: Tensor::new(vec![2, cfg.clinical_vars, 4], codes)?,
    };
    let out = model.forward(&params, &inputs)?;
    for (b, s) in subjects.iter().enumerate() {
        println!("{} true trajectory {:?}", s.subject.id, s.trajectory);
        for (t, logits) in out.trajectory.iter().enumerate() {
            let p = softmax(&logits.data()[b * 3..b * 3 + 3]);
            println!("  t{t}: p = [{:.3}, {:.3}, {:.3}]", p[0], p[1], p[2]);
        }
    }
    Ok(())
}
