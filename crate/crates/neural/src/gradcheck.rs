//! Central finite-difference checks of graph gradients in 64-bit precision.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor for the relative error, so that near-zero
    /// gradients are compared absolutely.
    pub floor: f64,
    pub train: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            train: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks d(loss)/d(param) for every scalar of every parameter in `store`.
///
/// Non-differentiable choices recorded through [`Graph::freeze`] on the
/// base pass are replayed for the perturbed passes.
pub fn check_params<F>(store: &ParamStore<f64>, forward: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, f64>) -> Result<Var>,
{
    let (grads, log) = {
        let mut g = Graph::with_mode(store, cfg.train, cfg.seed);
        let loss = forward(&mut g)?;
        let grads = g.backward(loss)?;
        let mut buf = store.zero_grads();
        grads.accumulate_into(&mut buf, 1.0);
        (buf, g.frozen_log().to_vec())
    };
    let mut work = store.clone();
    let eval = |work: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::with_mode(work, cfg.train, cfg.seed);
        g.set_replay(log.clone());
        let loss = forward(&mut g)?;
        Ok(g.scalar(loss))
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for id in store.ids() {
        for j in 0..store.get(id).numel() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + cfg.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - cfg.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(grads[id.0][j], numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!(
                    "{}[{j}]: analytic {} numeric {numeric}",
                    store.name(id),
                    grads[id.0][j]
                );
            }
        }
    }
    Ok(report)
}

/// Checks gradients with respect to free inputs of a graph function.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], forward: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let empty = ParamStore::<f64>::new();
    let run = |inputs: &[Tensor<f64>], replay: Option<Vec<Vec<f64>>>| -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut g = Graph::with_mode(&empty, cfg.train, cfg.seed);
        if let Some(log) = replay {
            g.set_replay(log);
        }
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = forward(&mut g, &vars)?;
        let value = g.scalar(loss);
        let grads = g.backward(loss)?;
        let per_input = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.wrt(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        Ok((value, per_input, g.frozen_log().to_vec()))
    };
    let (_, analytic, log) = run(inputs, None)?;
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for i in 0..work.len() {
        for j in 0..work[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + cfg.step;
            let (plus, _, _) = run(&work, Some(log.clone()))?;
            work[i].data_mut()[j] = orig - cfg.step;
            let (minus, _, _) = run(&work, Some(log.clone()))?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(analytic[i][j], numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("input{i}[{j}]: analytic {} numeric {numeric}", analytic[i][j]);
            }
        }
    }
    Ok(report)
}
