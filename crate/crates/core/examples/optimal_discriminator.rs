// A discriminator trained on N(0,1) (real) against N(1,1) (fake) approaches
// the density ratio p/(p+q).
//
// `cargo run --release --example optimal_discriminator [steps]`

use tdgan::eval::{grid, verify_optimal_discriminator, Normal1d, OptimalDiscConfig};

pub fn run_example(steps: usize) -> tdgan::Result<f64> {
    let p = Normal1d { mean: 0.0, sd: 1.0 };
    let q = Normal1d { mean: 1.0, sd: 1.0 };
    let g = grid(-4.0, 5.0, 201);
    let untrained = verify_optimal_discriminator(&p, &q, &OptimalDiscConfig { steps: 0, ..Default::default() }, &g)?;
    let cfg = OptimalDiscConfig { steps, ..Default::default() };
    let trained = verify_optimal_discriminator(&p, &q, &cfg, &g)?;
    println!("mean |D - p/(p+q)| on 201 points: {untrained:.3} untrained, {trained:.4} after {steps} steps");
    Ok(trained)
}

fn main() -> tdgan::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    run_example(steps).map(|_| ())
}
