//! CORAL distance between two batches and a few plain gradient steps that
//! pull one batch's covariance onto the other's.
//!
//! cargo run --example coral_alignment

use crossalign::alignment::coral;
use crossalign::numerics::{covariance, seeded_rng};
use crossalign::Matrix;
use rand_distr::{Distribution, Normal};

fn main() -> crossalign::Result<()> {
    let mut rng = seeded_rng(7);
    let normal = Normal::new(0.0, 1.0).unwrap();

    // Source: isotropic. Target: stretched along the first axis and
    // correlated in the other two.
    let mut source = Matrix::from_fn(64, 3, |_, _| normal.sample(&mut rng));
    let target = Matrix::from_fn(48, 3, |_, _| normal.sample(&mut rng));
    let mix = Matrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.8], [0.0, 0.8, 1.0]])?;
    let target = target.matmul(&mix)?;

    println!("target covariance:\n{}", fmt(&covariance(&target)?));
    for step in 0..=300 {
        let (loss, grad_source, _) = coral(&source, &target)?;
        if step % 50 == 0 {
            println!("step {step:3}  coral {loss:.6}");
        }
        source.add_scaled_assign(-15.0, &grad_source)?;
    }
    println!("source covariance after alignment:\n{}", fmt(&covariance(&source)?));
    Ok(())
}

fn fmt(m: &Matrix) -> String {
    m.row_iter()
        .map(|r| r.iter().map(|v| format!("{v:8.3}")).collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}
