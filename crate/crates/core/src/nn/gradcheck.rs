use rand::seq::SliceRandom;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::util;

/// Compare reverse-mode gradients against central finite differences.
///
/// Checks every coordinate of `params`, or a seeded sample of `max_coords`
/// of them, and returns the largest
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("finite-difference eps {eps} outside [1e-6, 1e-3]")));
    }
    let mut tape = Tape::new();
    let l = loss(store, &mut tape)?;
    if !tape.value(l).item().is_finite() {
        return Err(Error::NonFinite("loss during gradient check".into()));
    }
    let grads = tape.backward(l)?;

    let mut coords: Vec<(ParamId, usize)> = params
        .iter()
        .flat_map(|&id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect();
    if let Some(n) = max_coords {
        if coords.len() > n {
            coords.shuffle(&mut util::rng(seed));
            coords.truncate(n);
        }
    }

    let mut worst = 0.0f64;
    for (id, i) in coords {
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
        let orig = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = orig + eps;
        let plus = eval(&mut loss, store);
        store.get_mut(id).data_mut()[i] = orig - eps;
        let minus = eval(&mut loss, store);
        store.get_mut(id).data_mut()[i] = orig;
        let numeric = (plus? - minus?) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn eval<F>(loss: &mut F, store: &ParamStore<f64>) -> Result<f64>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(store, &mut tape)?;
    let v = tape.value(l).item();
    if !v.is_finite() {
        return Err(Error::NonFinite("loss during gradient check".into()));
    }
    Ok(v)
}
