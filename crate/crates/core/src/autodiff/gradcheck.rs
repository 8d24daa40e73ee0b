use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamSet};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn` returns the loss and its analytic gradient at the given
/// parameters. At most `coords_per_param` coordinates of every parameter are
/// checked, drawn with `seed`. The relative error of a coordinate is
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn finite_difference_check<F>(
    params: &ParamSet,
    loss_fn: F,
    eps: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = loss_fn(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        worst_values: (0.0, 0.0),
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let picks: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, coords_per_param).into_vec();
            v.sort_unstable();
            v
        };
        for k in picks {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let (plus, _) = loss_fn(&work)?;
            work.get_mut(id).data_mut()[k] = orig - eps;
            let (minus, _) = loss_fn(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), k));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::vector(vec![0.5, -1.5, 2.0, 0.25]));
        let coef = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let f = |p: &ParamSet| {
            let mut g = Graph::new(p);
            let w = g.param(id);
            let c = g.input(coef.clone());
            let ww = g.mul(w, w)?;
            let cw = g.mul(ww, c)?;
            let loss = g.sum(cw);
            let mut grads = p.zero_grads();
            g.backward(loss, &mut grads)?;
            Ok((g.scalar(loss), grads))
        };
        let r = finite_difference_check(&ps, f, 1e-4, 10, 0).unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }
}
