//! Checks back-propagation through time against central finite differences
//! for every parameter of a small two-layer highway BiLSTM.
//!
//! cargo run --example gradient_check

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sentiforecast::net::{mse_with_grad, Architecture, Mode, Network};

fn loss(net: &Network, inputs: &[Array2<f64>], target: &Array1<f64>) -> f64 {
    let tape = net.forward(inputs, Mode::Eval).expect("forward");
    mse_with_grad(&tape.predictions, target).0
}

fn main() -> sentiforecast::Result<()> {
    let arch = Architecture {
        input: 3,
        hidden: 4,
        layers: 2,
        highway: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Network::init(&arch, &mut rng)?;
    let inputs: Vec<Array2<f64>> = (0..5)
        .map(|_| Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let target = Array1::from_vec(vec![0.3, -0.7]);

    let tape = net.forward(&inputs, Mode::Eval)?;
    let (_, d_pred) = mse_with_grad(&tape.predictions, &target);
    let analytic = net.backward(&tape, &d_pred);

    let flat = net.to_flat();
    let grad = analytic.to_flat();
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst = vec![];
    let mut offset = 0;
    analytic.visit(|name, _, values| {
        let mut max_err: f64 = 0.0;
        for i in offset..offset + values.len() {
            let mut p = flat.clone();
            p[i] += h;
            probe.set_flat(&p);
            let up = loss(&probe, &inputs, &target);
            p[i] -= 2.0 * h;
            probe.set_flat(&p);
            let down = loss(&probe, &inputs, &target);
            let numeric = (up - down) / (2.0 * h);
            let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
            max_err = max_err.max(err);
        }
        offset += values.len();
        worst.push((name.to_string(), values.len(), max_err));
    });
    for (name, n, err) in &worst {
        println!("{name:<28} {n:>4} params  max relative error {err:.2e}");
    }
    let overall = worst.iter().map(|w| w.2).fold(0.0, f64::max);
    println!("overall {overall:.2e} over {} parameters", flat.len());
    Ok(())
}
