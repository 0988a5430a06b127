use super::params::{Gradients, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

/// Relative error used by [`grad_check`]; differences where both sides
/// are below `floor` are measured against `floor` instead.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` for every
/// scalar of every non-frozen parameter.
pub fn grad_check<F>(store: &mut ParamStore, analytic: &Gradients, h: f64, floor: f64, loss: F) -> GradCheckReport
where
    F: Fn(&ParamStore) -> f64,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.entry(id).frozen {
            continue;
        }
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let up = loss(store);
            store.value_mut(id).data_mut()[i] = orig - h;
            let down = loss(store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.entry(id).name.clone(), i));
                report.worst_values = (a, numeric);
            }
        }
    }
    report
}
