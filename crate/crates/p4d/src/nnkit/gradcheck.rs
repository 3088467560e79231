//! Finite-difference gradient checking.

use std::collections::HashMap;

use rand::Rng;

use crate::nnkit::{Arr, ParamStore};
use crate::{P4dError, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub checked: usize,
}

/// Compare computed gradients against central finite differences on the
/// given `(param, flat coordinate)` subsample.
///
/// `eval` must be a deterministic function of the store. Relative error per
/// coordinate is `|g - fd| / (|g| + |fd| + 1e-12)`.
pub fn grad_check<F>(
    mut eval: F,
    store: &mut ParamStore,
    computed: &HashMap<String, Arr>,
    coords: &[(String, usize)],
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        checked: 0,
    };
    for (name, flat) in coords {
        let g = computed
            .get(name)
            .ok_or_else(|| P4dError::InvalidArgument(format!("no computed gradient for `{name}`")))?
            .as_slice()
            .ok_or_else(|| P4dError::InvalidArgument("non-contiguous gradient".into()))?[*flat];
        let original = {
            let p = store
                .get_mut(name)
                .ok_or_else(|| P4dError::InvalidArgument(format!("unknown param `{name}`")))?;
            let v = p.value.as_slice_mut().unwrap();
            let orig = v[*flat];
            v[*flat] = orig + epsilon;
            orig
        };
        let plus = eval(store)?;
        store.get_mut(name).unwrap().value.as_slice_mut().unwrap()[*flat] = original - epsilon;
        let minus = eval(store)?;
        store.get_mut(name).unwrap().value.as_slice_mut().unwrap()[*flat] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(P4dError::NonFinite(format!(
                "grad_check: loss non-finite perturbing `{name}`[{flat}]"
            )));
        }
        let fd = (plus - minus) / (2.0 * epsilon);
        let rel = (g - fd).abs() / (g.abs() + fd.abs() + 1e-12);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = name.clone();
            report.worst_coord = *flat;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Uniformly sample up to `per_param` flat coordinates from each parameter
/// matching `filter`.
pub fn sample_coords<R: Rng>(
    store: &ParamStore,
    filter: impl Fn(&str) -> bool,
    per_param: usize,
    rng: &mut R,
) -> Vec<(String, usize)> {
    let mut coords = Vec::new();
    for p in store.iter() {
        if !filter(&p.name) {
            continue;
        }
        let n = p.value.len();
        for _ in 0..per_param.min(n) {
            coords.push((p.name.clone(), rng.gen_range(0..n)));
        }
    }
    coords
}
