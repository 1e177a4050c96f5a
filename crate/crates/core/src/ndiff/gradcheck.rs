use serde::Serialize;

use super::Tensor;

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    /// `(parameter name, max relative error over its coordinates)`.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub eps: f64,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("parameter\tmax_rel_error\n");
        for (name, err) in &self.per_param {
            out.push_str(&format!("{name}\t{err:.3e}\n"));
        }
        out.push_str(&format!("ALL\t{:.3e}\n", self.max_rel_error));
        out
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks `analytic` against central differences of `value` at `params`,
/// perturbing one coordinate at a time.
pub fn grad_check<E>(
    names: &[String],
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    mut value: impl FnMut(&[Tensor]) -> Result<f64, E>,
) -> Result<GradReport, E> {
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(names.len(), params.len());
    assert_eq!(analytic.len(), params.len());
    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut global: f64 = 0.0;
    for (p, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..work[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let plus = value(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let minus = value(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[p].data()[i], numeric));
        }
        global = global.max(worst);
        per_param.push((name.clone(), worst));
    }
    Ok(GradReport {
        per_param,
        max_rel_error: global,
        eps,
    })
}
