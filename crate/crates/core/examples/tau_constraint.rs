//! Maps learnable noise parameters σ to per-horizon inverse temperatures τ.
//! The noisiest task gets the smallest τ and the least noisy one gets τ = 1.

use climat::losses::{constrain_tau, DEFAULT_TAU_EPS};

fn main() -> climat::Result<()> {
    for sigma in [
        vec![1.0; 5],
        vec![0.2, 0.5, 1.0, 1.5, 2.0],
        vec![-0.3, 0.3, 0.0],
        vec![3.0],
    ] {
        let tau = constrain_tau(&sigma, DEFAULT_TAU_EPS)?;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
        println!("σ = [{}]  ->  τ = [{}]", fmt(&sigma), fmt(&tau));
    }
    Ok(())
}
