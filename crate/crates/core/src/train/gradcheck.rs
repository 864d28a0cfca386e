//! Central finite differences for checking analytic gradients. Only forward
//! evaluations of the loss are used here.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::TrainablePolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub coords: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`. The floor keeps coordinates whose true
/// gradient is essentially zero from dominating through round-off.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Draws `n` distinct parameter coordinates.
pub fn sample_coords(n_params: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample(&mut rng, n_params, n.min(n_params)).into_vec();
    v.sort_unstable();
    v
}

/// Compares `analytic[c]` against `(L(θ + h e_c) − L(θ − h e_c)) / 2h` for
/// each coordinate `c`.
pub fn check_gradient<M, F>(model: &M, analytic: &[f64], coords: &[usize], h: f64, loss: F) -> Result<GradCheck>
where
    M: TrainablePolicy + Clone,
    F: Fn(&M) -> Result<f64>,
{
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(coords.len());
    for &c in coords {
        let orig = probe.parameters_mut()?[c];
        probe.parameters_mut()?[c] = orig + h;
        let plus = loss(&probe)?;
        probe.parameters_mut()?[c] = orig - h;
        let minus = loss(&probe)?;
        probe.parameters_mut()?[c] = orig;
        numeric.push((plus - minus) / (2.0 * h));
    }
    let picked: Vec<f64> = coords.iter().map(|&c| analytic[c]).collect();
    let max_rel_error = picked
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n, REL_ERROR_FLOOR))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        coords: coords.to_vec(),
        analytic: picked,
        numeric,
        max_rel_error,
    })
}
