use mombo::nn::{MlpParams, RngStream};
use rand::Rng;

fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-8 || diff <= 1e-5 * analytic.abs().max(numeric.abs())
}

fn objective(net: &MlpParams, x: &[f64], upstream: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(upstream).map(|(y, u)| y * u).sum()
}

#[test]
fn backward_matches_central_differences_on_random_nets() {
    let h = 1e-5;
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for trial in 0..100u64 {
        let mut rng = RngStream::new(2024, trial).rng();
        let depth = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=8)).collect();
        let mut net = MlpParams::glorot(&sizes, &mut rng);
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let upstream: Vec<f64> = (0..sizes[depth]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads = net.backward(&x, &upstream).unwrap();

        for l in 0..depth {
            let (rows, cols) = net.layers()[l].weights.dim();
            for i in 0..rows {
                for j in 0..cols {
                    let mut plus = net.clone();
                    plus.layers_mut()[l].weights[[i, j]] += h;
                    let mut minus = net.clone();
                    minus.layers_mut()[l].weights[[i, j]] -= h;
                    let numeric = (objective(&plus, &x, &upstream) - objective(&minus, &x, &upstream)) / (2.0 * h);
                    let analytic = grads.params.layers()[l].weights[[i, j]];
                    checked += 1;
                    if !close(analytic, numeric) {
                        failures.push(format!("trial {trial} W{l}[{i},{j}]: {analytic} vs {numeric}"));
                    }
                }
                let mut plus = net.clone();
                plus.layers_mut()[l].bias[i] += h;
                let mut minus = net.clone();
                minus.layers_mut()[l].bias[i] -= h;
                let numeric = (objective(&plus, &x, &upstream) - objective(&minus, &x, &upstream)) / (2.0 * h);
                let analytic = grads.params.layers()[l].bias[i];
                checked += 1;
                if !close(analytic, numeric) {
                    failures.push(format!("trial {trial} b{l}[{i}]: {analytic} vs {numeric}"));
                }
            }
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let numeric = (objective(&net, &xp, &upstream) - objective(&net, &xm, &upstream)) / (2.0 * h);
            checked += 1;
            if !close(grads.input[[0, k]], numeric) {
                failures.push(format!("trial {trial} dx[{k}]: {} vs {numeric}", grads.input[[0, k]]));
            }
        }
    }
    assert!(checked > 1000);
    assert!(failures.is_empty(), "{} of {checked} entries failed: {:?}", failures.len(), &failures[..failures.len().min(5)]);
}
