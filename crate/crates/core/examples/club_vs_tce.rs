//! Tabulates CE, temperature-scaled CE, and CLUB for a fixed logit vector
//! across inverse temperatures τ. CLUB stays above TCE and meets CE at τ = 1.

use climat::losses::{club, cross_entropy, softmax, tce};

fn main() -> climat::Result<()> {
    let logits = [2.5, 0.3, -1.0];
    for label in [0, 2] {
        println!("logits {logits:?}, label {label}, CE = {:.4}", cross_entropy(&logits, label)?);
        println!("   τ      TCE     CLUB   p(label | τf)");
        for tau in [0.1, 0.25, 0.5, 0.75, 1.0] {
            let scaled: Vec<f64> = logits.iter().map(|v| tau * v).collect();
            println!(
                "  {tau:.2}  {:.4}  {:.4}  {:.4}",
                tce(&logits, label, tau)?,
                club(&logits, label, tau)?,
                softmax(&scaled)[label]
            );
        }
    }
    // CLUB is affine in τ: the slope is CE - ln N_c
    let slope = club(&logits, 2, 1.0)? - club(&logits, 2, 0.0001)?;
    println!("slope for label 2 ~ {:.4} (CE - ln 3 = {:.4})", slope / 0.9999, cross_entropy(&logits, 2)? - 3f64.ln());
    Ok(())
}
