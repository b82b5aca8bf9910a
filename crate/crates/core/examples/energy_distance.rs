// The evaluation statistic: hand examples, a mean shift, and the null level.
//
// `cargo run --release --example energy_distance`

use tdgan::data::{CondGaussianMixture, LabelId};
use tdgan::eval::{energy_distance, energy_distance_raw, null_quantile, Density1d, Normal1d, N_EVAL};
use tdgan::numeric::Mat;
use tdgan::rng::stream;

pub fn run_example(reps: usize) -> tdgan::Result<()> {
    let a = Mat::row(&[0.0, 2.0]);
    let b = Mat::row(&[1.0, 3.0]);
    println!("{{0,2}} vs {{1,3}}: raw {}, clamped {}", energy_distance_raw(&a, &b)?, energy_distance(&a, &b)?);

    let mut rng = stream(1, &[]);
    for shift in [0.0, 0.05, 0.1, 0.25] {
        let x = Mat::row(&Normal1d { mean: 0.0, sd: 0.5 }.sample(N_EVAL, &mut rng));
        let y = Mat::row(&Normal1d { mean: shift, sd: 0.5 }.sample(N_EVAL, &mut rng));
        println!("N(0, 0.25) vs N({shift}, 0.25): {:.2e}", energy_distance(&x, &y)?);
    }

    let truth = CondGaussianMixture::one_dim(&[(0.0, 0.25)])?;
    let q95 = null_quantile(&truth, LabelId(0), N_EVAL, reps, 0.95, 0)?;
    println!("95th percentile of the same-distribution statistic ({reps} draws): {q95:.2e}");
    Ok(())
}

fn main() -> tdgan::Result<()> {
    run_example(200)
}
