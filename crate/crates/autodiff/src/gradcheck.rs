//! Central finite-difference checking of named-parameter gradients.

use crate::params::ParamStore;
use crate::tape::Gradients;

/// Relative error with an absolute floor, so entries whose true gradient is
/// ~0 are compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares `grads` with `(f(θ+h) − f(θ−h)) / 2h` for every scalar of every
/// parameter in `store`. Parameters missing from `grads` are expected to
/// have zero gradient.
pub fn check_gradients<F>(store: &ParamStore, grads: &Gradients, step: f64, floor: f64, mut f: F) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = store.clone();
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let len = store.get(&name).expect("listed").len();
        for i in 0..len {
            let orig = probe.get(&name).expect("listed").data()[i];
            probe.get_mut(&name).expect("listed").data_mut()[i] = orig + step;
            let plus = f(&probe);
            probe.get_mut(&name).expect("listed").data_mut()[i] = orig - step;
            let minus = f(&probe);
            probe.get_mut(&name).expect("listed").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(&name).map_or(0.0, |g| g.data()[i]);
            let e = relative_error(analytic, numeric, floor);
            report.checked += 1;
            if e > report.max_rel_err || e.is_nan() {
                report.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
                report.worst = Some((name.clone(), i, analytic, numeric));
            }
        }
    }
    report
}
