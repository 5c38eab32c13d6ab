//! Central-difference gradient checks for modules.

use super::Module;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<String>,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients currently stored in `module` with central
/// differences of `loss`, probing up to `per_param` evenly spaced entries of
/// every parameter.
pub fn check_params<M, F>(module: &mut M, loss: F, h: f64, per_param: usize, floor: f64) -> GradCheckReport
where
    M: Module<f64>,
    F: Fn(&M) -> f64,
{
    let plan: Vec<(usize, Vec<usize>)> = module
        .params()
        .iter()
        .enumerate()
        .map(|(i, (_, p))| {
            let n = p.len();
            let step = (n / per_param.max(1)).max(1);
            (i, (0..n).step_by(step).take(per_param).collect())
        })
        .collect();
    let mut report = GradCheckReport::default();
    for (pi, entries) in plan {
        for e in entries {
            let (name, analytic, original) = {
                let params = module.params();
                let (name, p) = &params[pi];
                let flat = p.value.as_slice().expect("params are contiguous");
                let g = p.grad.as_slice().expect("grads are contiguous");
                (name.clone(), g[e], flat[e])
            };
            let set = |m: &mut M, v: f64| {
                let mut params = m.params_mut();
                params[pi].1.value.as_slice_mut().expect("contiguous")[e] = v;
            };
            set(module, original + h);
            let up = loss(module);
            set(module, original - h);
            let down = loss(module);
            set(module, original);
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic, numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(format!("{name}[{e}]: analytic {analytic:e}, numeric {numeric:e}"));
            }
        }
    }
    report
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(x: &[f64], h: f64, f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
