//! Central finite-difference checks of analytic gradients.
//!
//! The probe loss is the linear functional `L = sum_i r_i * out_i` for a fixed
//! direction `r`, so `dL/dout = r` and every parameter/input derivative can be
//! checked against `(L(p + h) - L(p - h)) / 2h` using only `forward`.

use crate::error::Result;
use crate::network::Network;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Number of scalar derivatives compared.
    pub checked: usize,
    /// Worst relative error among entries whose absolute error exceeds the floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(parameter index or None for the input, element)` of the worst entry.
    pub worst: Option<(Option<usize>, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOL
    }
}

fn probe(net: &Network, input: &Tensor, direction: &[f64]) -> Result<f64> {
    let out = net.forward(input)?;
    Ok(out.data().iter().zip(direction).map(|(a, b)| a * b).sum())
}

fn compare(analytic: f64, numeric: f64) -> (f64, f64) {
    let abs = (analytic - numeric).abs();
    if abs <= ABS_FLOOR {
        return (abs, 0.0);
    }
    (abs, abs / analytic.abs().max(numeric.abs()))
}

/// Compares analytic parameter and input gradients of `net` at `input`
/// against central differences with step `h`.
pub fn check(net: &Network, input: &Tensor, direction: &[f64], h: f64) -> Result<GradCheckReport> {
    let mut work = net.clone();
    work.zero_grad();
    let out = work.forward_train(input)?;
    let seed = Tensor::new(out.shape().to_vec(), direction.to_vec())?;
    let input_grad = work.backward(&seed)?;
    let analytic: Vec<Vec<f64>> = work
        .params()
        .iter()
        .map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
    };
    let record = |report: &mut GradCheckReport, where_: (Option<usize>, usize), a: f64, n: f64| {
        let (abs, rel) = compare(a, n);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(where_);
        }
    };

    let mut perturbed = net.clone();
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = perturbed.params()[pi].data()[j];
            perturbed.params_mut()[pi].data_mut()[j] = orig + h;
            let up = probe(&perturbed, input, direction)?;
            perturbed.params_mut()[pi].data_mut()[j] = orig - h;
            let down = probe(&perturbed, input, direction)?;
            perturbed.params_mut()[pi].data_mut()[j] = orig;
            record(&mut report, (Some(pi), j), a, (up - down) / (2.0 * h));
        }
    }

    let mut x = input.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + h;
        let up = probe(net, &x, direction)?;
        x.data_mut()[j] = orig - h;
        let down = probe(net, &x, direction)?;
        x.data_mut()[j] = orig;
        record(&mut report, (None, j), input_grad.data()[j], (up - down) / (2.0 * h));
    }
    Ok(report)
}

/// One finite-difference check per layer kind on small random instances
/// derived from `seed`. Used by the test suites.
pub fn layer_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let randomize = |mut net: Network, rng: &mut ChaCha8Rng| -> Network {
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        net
    };
    // Inputs bounded away from zero so no ReLU sits on its kink.
    let away_from_zero = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let m: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) { m } else { -m }
            })
            .collect()
    };

    let mut cases: Vec<(&'static str, Network, Tensor)> = Vec::new();
    let s = seed;
    cases.push(("dense", randomize(Network::builder(s).dense(5, 4).build()?, &mut rng), Tensor::from_vec(uniform(5, &mut rng))));
    cases.push((
        "conv2d",
        randomize(Network::builder(s).conv2d(2, 3, 3, 2, 1).build()?, &mut rng),
        Tensor::new(vec![6, 6, 2], uniform(72, &mut rng))?,
    ));
    cases.push((
        "conv_transpose2d",
        randomize(Network::builder(s).conv_transpose2d(2, 3, 4, 2, 1).build()?, &mut rng),
        Tensor::new(vec![3, 3, 2], uniform(18, &mut rng))?,
    ));
    cases.push(("relu", Network::builder(s).relu().build()?, Tensor::from_vec(away_from_zero(7, &mut rng))));
    cases.push(("sigmoid", Network::builder(s).sigmoid().build()?, Tensor::from_vec(uniform(7, &mut rng).iter().map(|v| 3.0 * v).collect())));
    cases.push((
        "flatten",
        randomize(Network::builder(s).conv2d(1, 2, 2, 1, 0).flatten().dense(18, 3).build()?, &mut rng),
        Tensor::new(vec![4, 4, 1], uniform(16, &mut rng))?,
    ));
    cases.push((
        "reshape",
        randomize(Network::builder(s).dense(4, 12).reshape(vec![2, 2, 3]).conv2d(3, 2, 2, 1, 0).build()?, &mut rng),
        Tensor::from_vec(uniform(4, &mut rng)),
    ));

    // Composite MLP: resample the input until every hidden pre-activation is
    // clear of the ReLU kink by more than any finite-difference perturbation.
    let mlp = randomize(Network::builder(s).dense(4, 6).relu().dense(6, 2).sigmoid().build()?, &mut rng);
    let first = Network::from_layers(mlp.layers()[..1].to_vec(), s);
    let mut x = Tensor::from_vec(uniform(4, &mut rng));
    while first.forward(&x)?.data().iter().any(|v| v.abs() < 1e-2) {
        x = Tensor::from_vec(uniform(4, &mut rng));
    }
    cases.push(("mlp", mlp, x));

    let mut out = Vec::with_capacity(cases.len());
    for (name, net, input) in cases {
        let n_out: usize = net.output_shape(input.shape())?.iter().product();
        let direction = uniform(n_out, &mut rng);
        out.push((name, check(&net, &input, &direction, DEFAULT_STEP)?));
    }
    Ok(out)
}
