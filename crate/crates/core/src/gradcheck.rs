//! Central finite differences, the independent oracle for every analytic
//! gradient in the crate.

use rand::seq::index::sample;

use crate::nn::Parameterized;
use crate::rng::Rng;

pub const STEP: f64 = 3e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`. The absolute floor keeps coordinates
/// whose true gradient is zero from amplifying round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, 1e-6)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| relative_error(*a, *n)).fold(0.0, f64::max)
}

/// Compares `analytic` (a gradient container shaped like `model`) against
/// central differences of `loss` on up to `per_tensor` random coordinates
/// of every tensor. Returns the worst relative error, with the absolute
/// floor scaled by the loss magnitude.
pub fn check_module<M, F>(model: &M, analytic: &M, per_tensor: usize, rng: &mut Rng, mut loss: F) -> f64
where
    M: Parameterized + Clone,
    F: FnMut(&M) -> f64,
{
    let grads: Vec<Vec<f64>> = analytic.params().iter().map(|(_, v)| v.data.to_vec()).collect();
    let sizes: Vec<usize> = grads.iter().map(Vec::len).collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (t, &size) in sizes.iter().enumerate() {
        let coords: Vec<usize> =
            if size <= per_tensor { (0..size).collect() } else { sample(rng, size, per_tensor).into_vec() };
        for i in coords {
            let orig = probe.params_mut()[t][i];
            probe.params_mut()[t][i] = orig + STEP;
            let up = loss(&probe);
            probe.params_mut()[t][i] = orig - STEP;
            let down = loss(&probe);
            probe.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            // round-off in the loss grows with its magnitude
            let floor = 1e-6 * up.abs().max(down.abs()).max(1.0);
            worst = worst.max(relative_error_with_floor(grads[t][i], numeric, floor));
        }
    }
    worst
}
