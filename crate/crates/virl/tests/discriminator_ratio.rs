//! End-to-end checks that a fitted discriminator's logit behaves like the
//! log density ratio it estimates.

use ndarray::{array, Array1, Array2};
use virl::discriminator::{Discriminator, MlpConfig};
use virl::gaussian::Gaussian;
use virl::mixture::Mixture;
use virl::{Density, RngStream};

fn cfg(layer_size: usize) -> MlpConfig {
    MlpConfig {
        layers: 2,
        layer_size,
        batch_norm: false,
        learning_rate: 1e-3,
        dropout: 0.0,
        l2: 0.0,
    }
}

fn fit_ratio(n: usize, seed: u64) -> f64 {
    // p = N(0,1) vs q = N(1,1): log p - log q = 1/2 - x.
    let mut rng = RngStream::new(seed);
    let pos = Array2::from_shape_simple_fn((n, 1), || rng.normal::<f64>());
    let neg = Array2::from_shape_simple_fn((n, 1), || 1.0 + rng.normal::<f64>());
    let w = Array1::from_elem(n, 1.0 / n as f64);
    let d = Discriminator::new(1, cfg(32), &mut rng)
        .unwrap()
        .fit(&pos.view(), &neg.view(), &w.view(), 30, 256, &mut rng)
        .unwrap();
    let grid = 41;
    let mut abs_err = 0.0;
    for i in 0..grid {
        let x = -1.5 + 3.0 * i as f64 / (grid - 1) as f64;
        let got = d.forward_logit(&array![x].view()).unwrap();
        abs_err += (got - (0.5 - x)).abs();
    }
    abs_err / grid as f64
}

#[test]
fn ratio_error_shrinks_with_more_samples() {
    let small = fit_ratio(1_000, 41);
    let large = fit_ratio(10_000, 42);
    assert!(small < 0.5, "small-sample MAE {small}");
    assert!(large < 0.12, "large-sample MAE {large}");
    assert!(large < small, "{large} !< {small}");
}

#[test]
fn uncovered_mode_gets_a_positive_logit() {
    // Experts come from two well separated modes, the sampler covers only
    // one of them; the logit must be positive around the missing mode and
    // negative where the sampler oversamples.
    let mut rng = RngStream::new(43);
    let left: Gaussian = Gaussian::isotropic(array![-3.0, 0.0], 0.3).unwrap();
    let right: Gaussian = Gaussian::isotropic(array![3.0, 0.0], 0.3).unwrap();
    let experts = Mixture::new(&[0.5, 0.5], vec![left, right.clone()]).unwrap();
    let n = 4_000;
    let pos = experts.sample(&mut rng, n);
    let neg = right.sample(&mut rng, n);
    let w = Array1::from_elem(n, 1.0 / n as f64);
    let d = Discriminator::new(2, cfg(48), &mut rng)
        .unwrap()
        .fit(&pos.view(), &neg.view(), &w.view(), 20, 256, &mut rng)
        .unwrap();

    let at_left = d.forward_logit(&array![-3.0, 0.0].view()).unwrap();
    let at_right = d.forward_logit(&array![3.0, 0.0].view()).unwrap();
    assert!(at_left > 1.0, "missing mode logit {at_left}");
    // The sampler puts twice the expert mass there: ratio 1/2.
    let want_right = 0.5f64.ln();
    assert!(
        (at_right - want_right).abs() < 0.35,
        "covered mode logit {at_right}, want about {want_right}"
    );
}
