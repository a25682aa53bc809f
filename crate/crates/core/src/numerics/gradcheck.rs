use super::graph::{Graph, Var};
use super::params::{Bound, ParamSet};
use super::NumericsError;

/// Default central-difference step for 64-bit checks.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
    /// NaN whenever either side produced a NaN.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tolerance
    }
}

/// Compares the reverse-mode gradient of a scalar function of `point` with
/// central finite differences over every coordinate.
///
/// The function must be differentiable at `point`; kinks (e.g. `|x|` at 0)
/// are the caller's responsibility to avoid.
pub fn grad_check<F, E>(f: F, point: &ParamSet<f64>, eps: f64) -> Result<GradCheckReport, E>
where
    F: for<'g> Fn(&'g Graph<f64>, &Bound<'g, f64>) -> Result<Var<'g, f64>, E>,
    E: From<NumericsError>,
{
    let graph = Graph::new();
    let bound = point.bind(&graph);
    let loss = f(&graph, &bound)?;
    let mut grads = graph.backward(loss)?;
    let analytic = bound.gradients(&mut grads);

    let eval = |p: &ParamSet<f64>| -> Result<f64, E> {
        let g = Graph::new();
        let b = p.bind(&g);
        let out = f(&g, &b)?;
        let v = out.value().data()[0];
        Ok(v)
    };

    let mut probe = point.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let names: Vec<String> = point.names().cloned().collect();
    for name in names {
        let n = point.get(&name).map_or(0, |t| t.len());
        for i in 0..n {
            let orig = probe.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let plus = eval(&probe);
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let minus = eval(&probe);
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            // A perturbation that leaves the finite domain is a failed check, not an abort.
            let numeric = match (plus, minus) {
                (Ok(p), Ok(m)) => (p - m) / (2.0 * eps),
                _ => f64::NAN,
            };
            let a = analytic[name.as_str()].data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.coordinates += 1;
            if report.max_rel_error.is_nan() {
                continue;
            }
            if err.is_nan() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
