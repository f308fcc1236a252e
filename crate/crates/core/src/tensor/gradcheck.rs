use super::ParamStore;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub coords_checked: usize,
}

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is ~0 are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(f(θ+ε) − f(θ−ε)) / 2ε` on up to
/// `coords_per_param` coordinates of every parameter (all of them when the
/// parameter is smaller). Coordinates are sampled with a fixed stride walk
/// seeded by `seed`, so the subset is reproducible.
pub fn grad_check<F>(
    params: &mut ParamStore<f64>,
    analytic: &[Vec<f64>],
    eps: f64,
    coords_per_param: usize,
    seed: u64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    assert!(eps > 0.0, "grad_check needs a positive step");
    let mut per_param = Vec::with_capacity(params.len());
    let mut checked = 0;
    for id in 0..params.len() {
        let n = params.get(id).numel();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            let start = (seed as usize).wrapping_mul(2_654_435_761).wrapping_add(id * 97) % n;
            let stride = (n / coords_per_param).max(1);
            (0..coords_per_param).map(|i| (start + i * stride) % n).collect()
        };
        let mut worst = 0.0f64;
        for c in coords {
            let orig = params.get(id).value[c];
            params.get_mut(id).data_mut()[c] = orig + eps;
            let up = loss(params);
            params.get_mut(id).data_mut()[c] = orig - eps;
            let down = loss(params);
            params.get_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[id][c], numeric));
            checked += 1;
        }
        per_param.push((params.get(id).name.clone(), worst));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    GradCheckReport { max_rel_error, per_param, coords_checked: checked }
}
