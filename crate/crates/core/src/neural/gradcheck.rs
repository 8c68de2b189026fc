use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Anything that exposes an ordered list of parameter tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn n_scalars(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `analytic` against central differences of `loss` and returns the
/// largest relative error.
///
/// Every scalar parameter is checked when there are at most `max_coords` of
/// them; otherwise a subset of `max_coords` coordinates drawn from `seed`.
/// Parameters are restored exactly afterwards.
pub fn gradient_check<M: Parameterized>(
    model: &mut M,
    loss: impl Fn(&M) -> f64,
    analytic: &[Tensor],
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> f64 {
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    assert_eq!(sizes.len(), analytic.len(), "one gradient per parameter tensor");
    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, total, max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let locate = |mut flat: usize| {
        for (t, &n) in sizes.iter().enumerate() {
            if flat < n {
                return (t, flat);
            }
            flat -= n;
        }
        unreachable!("coordinate in range")
    };

    let mut worst: f64 = 0.0;
    for flat in coords {
        let (t, i) = locate(flat);
        let original = model.params()[t].data()[i];
        model.params_mut()[t].data_mut()[i] = original + epsilon;
        let plus = loss(model);
        model.params_mut()[t].data_mut()[i] = original - epsilon;
        let minus = loss(model);
        model.params_mut()[t].data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[t].data()[i], numeric));
    }
    worst
}
