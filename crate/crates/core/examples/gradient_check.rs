// Finite-difference check of hand-written backpropagation on a small MLP.
//
// `cargo run --release --example gradient_check`

use tdgan::numeric::{grad_check, HiddenActivation, Mat, MlpParams, OutputActivation};
use tdgan::rng::stream;

pub fn run_example() -> tdgan::Result<f64> {
    let mut rng = stream(7, &[]);
    let net = MlpParams::init(&[3, 8, 8, 2], HiddenActivation::Tanh, OutputActivation::Linear, &mut rng)?;
    let x = Mat::from_fn(3, 5, |r, c| (r as f64 - 1.0) * 0.4 + c as f64 * 0.1);
    let target = Mat::from_fn(2, 5, |r, c| (r + c) as f64 * 0.2);

    // Squared error and its gradient with respect to the network output.
    let loss = |p: &MlpParams| {
        let y = p.predict(&x).unwrap();
        y.sub(&target).unwrap().data().iter().map(|v| v * v).sum::<f64>() / 2.0
    };
    let (y, cache) = net.forward(&x)?;
    let (grads, _input_grad) = net.backward(&cache, &y.sub(&target)?)?;

    let err = grad_check(&net, &grads, 1e-5, loss)?;
    println!("{} parameters, worst relative error {err:.2e}", net.num_params());
    Ok(err)
}

fn main() -> tdgan::Result<()> {
    run_example().map(|_| ())
}
