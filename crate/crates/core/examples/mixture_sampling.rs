// Sampling a label-conditioned Gaussian mixture and checking the moments.
//
// `cargo run --release --example mixture_sampling`

use tdgan::data::{CondGaussianMixture, Component, LabelId};
use tdgan::rng::stream;

pub fn run_example() -> tdgan::Result<()> {
    let truth = CondGaussianMixture::new(
        1,
        vec![
            vec![Component::new(1.0, vec![-2.0], vec![0.25])],
            vec![
                Component::new(0.3, vec![1.0], vec![0.1]),
                Component::new(0.7, vec![3.0], vec![0.5]),
            ],
        ],
    )?;
    let mut rng = stream(3, &[]);
    for y in 0..truth.vocab_size() {
        let y = LabelId(y);
        let comps = truth.components(y)?;
        let mean: f64 = comps.iter().map(|c| c.weight * c.mean[0]).sum();
        let second: f64 = comps.iter().map(|c| c.weight * (c.var[0] + c.mean[0] * c.mean[0])).sum();
        let x = truth.sample_batch(&vec![y; 20_000], &mut rng)?;
        let m = x.data().iter().sum::<f64>() / x.cols() as f64;
        let v = x.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.cols() as f64;
        println!(
            "label {y}: mean {m:+.3} (exact {mean:+.3}), var {v:.3} (exact {:.3}), p(x=mean) {:.3}",
            second - mean * mean,
            truth.pdf(&[mean], y)?
        );
    }
    Ok(())
}

fn main() -> tdgan::Result<()> {
    run_example()
}
