use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Real, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Coordinates sampled per parameter tensor (all of them when the tensor is smaller).
    pub max_coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { epsilon: 1e-3, max_coords_per_tensor: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// (parameter, index, analytic, central difference) at the maximum.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares backward-pass gradients against central differences.
///
/// `loss_fn` records a scalar loss on the graph it is handed. Relative error
/// per coordinate is `|a - n| / (|a| + |n| + 1e-12)`.
pub fn finite_difference_check<T, F>(
    params: &mut ParamStore<T>,
    cfg: &GradCheckConfig,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&mut Graph<'_, T>) -> Result<Var>,
{
    if !(cfg.epsilon > 1e-6 && cfg.epsilon < 1e-2) {
        return Err(Error::Config(format!("epsilon {} outside (1e-6, 1e-2)", cfg.epsilon)));
    }
    let (base, grads) = {
        let mut g = Graph::new(params);
        let out = loss_fn(&mut g)?;
        let v = g.scalar(out);
        g.backward(out)?;
        (v, g.param_grads())
    };
    let mut eval = |p: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new(p);
        let out = loss_fn(&mut g)?;
        Ok(g.scalar(out))
    };
    let again = eval(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic(base, again));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let coords: Vec<usize> = if n <= cfg.max_coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.max_coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = params.get(id).data()[i];
            let plus = T::narrow(orig.wide() + cfg.epsilon);
            let minus = T::narrow(orig.wide() - cfg.epsilon);
            params.get_mut(id).data_mut()[i] = plus;
            let f_plus = eval(params);
            params.get_mut(id).data_mut()[i] = minus;
            let f_minus = eval(params);
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (f_plus? - f_minus?) / (plus.wide() - minus.wide());
            let analytic = grads.get(id)[i].wide();
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((params.name(id).to_string(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
