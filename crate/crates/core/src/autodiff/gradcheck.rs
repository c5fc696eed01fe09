//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index;
use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor in the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    /// Position of the tensor in the parameter list.
    pub param: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// Flat index inside the tensor where the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Picks `count` distinct `(tensor, flat index)` coordinates uniformly over
/// all scalars in `params`.
pub fn sample_coords<R: Rng + ?Sized>(params: &[Tensor], count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let total: usize = params.iter().map(Tensor::numel).sum();
    let mut picks = index::sample(rng, total, count.min(total)).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|mut flat| {
            let mut p = 0;
            while flat >= params[p].numel() {
                flat -= params[p].numel();
                p += 1;
            }
            (p, flat)
        })
        .collect()
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()
}

/// Compares the tape gradient of the scalar `f` with central differences
/// `(f(p + eps) − f(p − eps)) / 2eps`.
///
/// `coords` restricts the check to the given `(tensor, flat index)` pairs;
/// `None` checks every scalar.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    eps: f64,
    tolerance: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidInput(format!("eps {eps} outside [1e-7, 1e-3]")));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| g.grad_or_zeros(*v)).collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = params
                .iter()
                .enumerate()
                .flat_map(|(p, t)| (0..t.numel()).map(move |i| (p, i)))
                .collect();
            &all
        }
    };

    let mut checks: Vec<Option<ParamCheck>> = vec![None; params.len()];
    let mut work = params.to_vec();
    for &(p, i) in coords {
        if p >= params.len() || i >= params[p].numel() {
            return Err(Error::InvalidInput(format!("coordinate ({p}, {i}) out of range")));
        }
        let orig = work[p].data()[i];
        work[p].data_mut()[i] = orig + eps;
        let plus = evaluate(&f, &work)?;
        work[p].data_mut()[i] = orig - eps;
        let minus = evaluate(&f, &work)?;
        work[p].data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite function value when perturbing parameter {p} index {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[p][i];
        let err = relative_error(a, numeric);
        let entry = checks[p].get_or_insert(ParamCheck {
            param: p,
            coords_checked: 0,
            max_rel_error: -1.0,
            worst_index: i,
            analytic: a,
            numeric,
        });
        entry.coords_checked += 1;
        if err > entry.max_rel_error {
            entry.max_rel_error = err;
            entry.worst_index = i;
            entry.analytic = a;
            entry.numeric = numeric;
        }
    }

    let params: Vec<ParamCheck> = checks.into_iter().flatten().collect();
    let passed = params.iter().all(|c| c.max_rel_error < tolerance);
    Ok(GradCheckReport {
        params,
        tolerance,
        passed,
    })
}
