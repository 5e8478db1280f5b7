//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Perturbation; must lie in `[1e-6, 1e-4]`.
    pub h: f64,
    /// Check at most this many coordinates per input (sampled), or all.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { h: 1e-5, max_coords: None, seed: 0, floor: 1e-6 }
    }
}

/// Result of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Compares the analytic gradient of a scalar function of `inputs` with
/// central differences and returns the worst relative error
/// `|a − n| / max(|a|, |n|, floor)`.
///
/// `build` receives a fresh graph and one parameter var per input and must
/// return a scalar loss var.
pub fn grad_check<F>(cfg: GradCheck, inputs: &[Tensor<f64>], build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&cfg.h) {
        return Err(TensorError::param("grad_check", format!("h = {} outside [1e-6, 1e-4]", cfg.h)));
    }
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(TensorError::Numeric(format!("loss is {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    if !g.value(loss).item().is_finite() {
        return Err(TensorError::Numeric("non-finite loss".into()));
    }
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rng = rand_pcg::Pcg64::seed_from_u64(cfg.seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < input.len() => sample(&mut rng, input.len(), k).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for j in coords {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + cfg.h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - cfg.h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: worst, coords_checked: checked })
}
