//! Compares backpropagated gradients with central finite differences, with
//! and without the L1 penalty, then saves and reloads a network.

use naipw::firststage::{gradient_check, Head, Mlp};
use naipw::seed;
use ndarray::Array2;
use rand::Rng;

fn main() -> naipw::Result<()> {
    let mut rng = seed::rng(3);
    let x: Array2<f64> = Array2::from_shape_fn((64, 5), |_| rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..64).map(|i| (x[(i, 0)] * x[(i, 1)]).sin()).collect();
    let labels: Vec<f64> = (0..64).map(|i| f64::from(u8::from(x[(i, 2)] > 0.0))).collect();

    for (head, target) in [(Head::Linear, &y), (Head::Logistic, &labels)] {
        let mut net = Mlp::init(5, &[6, 4], head, &mut rng);
        // Zero initial biases can sit exactly on a ReLU kink.
        for v in net.params.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        for l1 in [0.0, 0.01] {
            let r = gradient_check(&net, x.view(), target, l1, 1e-6);
            println!(
                "{head:?} head, L1 {l1}: max relative error {:.2e} over {} parameters ({} skipped at the kink)",
                r.max_rel_error, r.checked, r.skipped
            );
        }
    }

    let net = Mlp::init(5, &[3], Head::Logistic, &mut rng);
    let json = net.to_json()?;
    let back = Mlp::from_json(&json)?;
    println!("JSON round trip exact: {}", back == net);
    Ok(())
}
