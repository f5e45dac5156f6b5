//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Difference steps tried per coordinate; the smallest error counts.
    /// Small steps lose tiny gradients to rounding, large ones cross ReLU
    /// kinks, while a wrong gradient disagrees at every step.
    pub steps: Vec<f64>,
    pub tol: f64,
    /// Check at most this many coordinates per input (sampled with `seed`).
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            steps: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5],
            tol: 1e-6,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub pass: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

fn evaluate<F>(f: &F, point: &[Tensor]) -> Result<(Graph, Vec<NodeId>, NodeId)>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = point.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    if !g.value(out).is_scalar() {
        return Err(Error::NonScalarLoss(g.value(out).shape().to_vec()));
    }
    Ok((g, ids, out))
}

fn value_at<F>(f: &F, point: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let (g, _, out) = evaluate(f, point)?;
    Ok(g.value(out).item())
}

/// Compares the graph gradient of the scalar function `f` at `point` with
/// fourth-order central differences,
/// `(8[f(x+h) − f(x−h)] − [f(x+2h) − f(x−2h)]) / 12h`, coordinate by
/// coordinate.
pub fn finite_diff_check<F>(f: F, point: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if opts.steps.is_empty() || opts.steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidArgument("finite-difference steps must be positive".into()));
    }
    let (g, ids, out) = evaluate(&f, point)?;
    let base = g.value(out).item();
    if value_at(&f, point)?.to_bits() != base.to_bits() {
        return Err(Error::Nondeterministic);
    }
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get_or_zeros(id)).collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
        pass: true,
    };
    let mut probe = point.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(limit) if limit < n => {
                let mut c = sample(&mut rng, n, limit).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let original = probe[input].data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                probe[input].data_mut()[i] = original + offset;
                value_at(&f, &probe)
            };
            let mut err = f64::INFINITY;
            for &h in &opts.steps {
                let near = at(h)? - at(-h)?;
                let far = at(2.0 * h)? - at(-2.0 * h)?;
                let numeric = (8.0 * near - far) / (12.0 * h);
                err = err.min(relative_error(grad.data()[i], numeric));
            }
            probe[input].data_mut()[i] = original;
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err.max(report.max_rel_err);
                report.worst = Some((input, i));
            }
        }
    }
    report.pass = report.max_rel_err < opts.tol;
    Ok(report)
}
