//! Central finite-difference verification of analytic gradients.

/// Denominator floor for relative error, so pairs of near-zero derivatives
/// are compared absolutely. It sits above the roundoff level of a central
/// difference on `O(1)` losses in double precision.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Index (into the checked vector) of the worst coordinate.
    pub worst: Option<usize>,
    pub tol: f64,
    /// Coordinates whose probes crossed a non-differentiable point.
    pub skipped: usize,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn merge(name: impl Into<String>, parts: &[GradCheckReport], tol: f64) -> Self {
        let worst = parts.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
        let max = worst.map_or(0.0, |w| w.max_rel_err);
        let checked = parts.iter().map(|p| p.checked).sum();
        let skipped = parts.iter().map(|p| p.skipped).sum();
        GradCheckReport {
            name: name.into(),
            checked,
            max_rel_err: max,
            worst: worst.and_then(|w| w.worst),
            tol,
            skipped,
            passed: max <= tol && checked > skipped && skip_ok(checked, skipped),
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Step for coordinate value `x`: `1e-5` scaled by magnitude.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// At most a quarter of the probed coordinates may be skipped.
fn skip_ok(checked: usize, skipped: usize) -> bool {
    4 * skipped <= checked
}

/// Compare `analytic[i]` with the central difference of `f` at `x` for every
/// `i` in `indices` (all coordinates when `None`).
pub fn check_gradient(
    name: impl Into<String>,
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    tol: f64,
) -> GradCheckReport {
    check_gradient_guarded(name, |v| (f(v), 0), x, analytic, indices, tol)
}

/// Like [`check_gradient`], but `f` also returns a fingerprint of its
/// piecewise branch (ReLU signs, argmax choices). A coordinate whose `±h`
/// probes land on a different branch than `x` straddles a kink, where the
/// central difference does not estimate the derivative; it is skipped and counted.
pub fn check_gradient_guarded(
    name: impl Into<String>,
    mut f: impl FnMut(&[f64]) -> (f64, u64),
    x: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    tol: f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length must match input length");
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe = x.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst = None;
    let mut skipped = 0;
    let (_, branch) = f(x);
    for &i in idx {
        let h = fd_step(x[i]);
        probe[i] = x[i] + h;
        let (up, b_up) = f(&probe);
        probe[i] = x[i] - h;
        let (down, b_down) = f(&probe);
        probe[i] = x[i];
        if b_up != branch || b_down != branch {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(analytic[i], numeric);
        if e > max_rel_err || worst.is_none() {
            max_rel_err = e.max(max_rel_err);
            worst = Some(i);
        }
    }
    GradCheckReport {
        name: name.into(),
        checked: idx.len(),
        max_rel_err,
        worst,
        tol,
        skipped,
        passed: max_rel_err <= tol && idx.len() > skipped && skip_ok(idx.len(), skipped),
    }
}
