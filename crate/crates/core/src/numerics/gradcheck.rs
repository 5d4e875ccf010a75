//! Central finite-difference checks of graph gradients.

use crate::error::Result;

use super::{Graph, ParameterStore, Var};

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient of `loss_fn` against central differences
/// for every parameter whose name starts with one of `prefixes`.
///
/// At most `max_per_param` entries of each tensor are probed, spread evenly
/// across the tensor.
pub fn check_gradients<F>(
    store: &mut ParameterStore<f64>,
    prefixes: &[&str],
    h: f64,
    max_per_param: usize,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let grads = g.backward(loss, 1.0)?;
    g.write_param_grads(&grads, store)?;

    let eval = |s: &ParameterStore<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let l = loss_fn(&mut g, s)?;
        Ok(g.scalar(l))
    };

    let names: Vec<String> = store
        .names()
        .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
        .map(str::to_string)
        .collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for name in names {
        let len = store.get(&name)?.len();
        let analytic: Vec<f64> = store.get(&name)?.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len]);
        let stride = (len / max_per_param.max(1)).max(1);
        for idx in (0..len).step_by(stride).take(max_per_param) {
            let orig = store.get(&name)?.data()[idx];
            store.get_mut(&name)?.data_mut()[idx] = orig + h;
            let plus = eval(store)?;
            store.get_mut(&name)?.data_mut()[idx] = orig - h;
            let minus = eval(store)?;
            store.get_mut(&name)?.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[idx], numeric);
            report.checked += 1;
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), idx, analytic[idx], numeric));
            }
        }
    }
    store.zero_grads();
    Ok(report)
}
