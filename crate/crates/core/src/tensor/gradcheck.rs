use super::{Graph, Result, Tensor, Var};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn eval_scalar<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p)).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data()[0])
}

/// Compares reverse-mode gradients of `f` with central differences
/// `(f(θ+h) − f(θ−h)) / 2h` on every coordinate of every parameter.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| g.grad(*v).expect("leaf grads assigned").to_vec())
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut probe = params.to_vec();
    for (p, grads) in analytic.iter().enumerate() {
        for (i, a) in grads.iter().enumerate() {
            let orig = probe[p].data()[i];
            probe[p].data_mut()[i] = orig + h;
            let plus = eval_scalar(&f, &probe)?;
            probe[p].data_mut()[i] = orig - h;
            let minus = eval_scalar(&f, &probe)?;
            probe[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((p, i));
                report.analytic = *a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
