//! Central finite-difference gradient oracle.
//!
//! Deliberately independent of the backward pass: it only reruns forward
//! builds with perturbed leaf values and compares difference quotients
//! against the analytic gradients.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::rng::{stream, Stream};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;

/// Outcome of one gradient check: worst observed error.
#[derive(Debug, Clone, Copy, Default)]
pub struct CheckReport {
    pub max_rel: f64,
    pub max_abs: f64,
    pub coords: usize,
}

/// Check the analytic gradient of a forward build against central finite
/// differences on every coordinate of every input.
///
/// `build` receives leaves for `inputs` (all with gradients enabled) and
/// returns any output node; if the output is not scalar it is contracted
/// to one with fixed random weights so all output coordinates are probed.
pub fn check<F>(inputs: &[Tensor], build: F, tag: u64) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let weights: Vec<f64> = {
        let mut rng = stream(tag, Stream::GradCheck, 0xC0);
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &vars)?;
        (0..g.value(out).len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    };

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = points.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).values().iter().zip(&weights).map(|(v, w)| v * w).sum())
    };

    // analytic gradients
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars)?;
    let wconst = g.constant(Tensor::new(g.value(out).shape().to_vec(), weights.clone())?);
    let weighted = g.mul(out, wconst)?;
    let loss = g.sum(weighted)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
        .collect();

    let mut report = CheckReport::default();
    for (ti, t) in inputs.iter().enumerate() {
        for ci in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[ti].values_mut()[ci] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[ti].values_mut()[ci] -= FD_STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            let a = analytic[ti][ci];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-12);
            report.coords += 1;
            if abs > report.max_abs {
                report.max_abs = abs;
            }
            if rel > report.max_rel {
                report.max_rel = rel;
            }
            let near_zero = a.abs().max(numeric.abs()) < 1e-6;
            let ok = if near_zero { abs < ABS_TOL } else { rel < REL_TOL || abs < ABS_TOL };
            if !ok {
                return Err(crate::error::CecdrError::Invalid(format!(
                    "gradient mismatch at input {ti} coord {ci}: analytic {a:.9e}, finite-diff {numeric:.9e}"
                )));
            }
        }
    }
    Ok(report)
}

/// Random tensor with entries uniform in [lo, hi].
pub fn random_tensor(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let vals = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    Tensor::new(shape, vals).unwrap()
}

/// Random tensor whose entries are pairwise separated by at least `gap`
/// within each column — keeps max-pool argmaxes stable under FD probing.
pub fn random_tensor_spread(
    rows: usize,
    cols: usize,
    gap: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Tensor {
    loop {
        let t = random_tensor(vec![rows, cols], -1.0, 1.0, rng);
        let mut ok = true;
        'outer: for j in 0..cols {
            for i in 0..rows {
                for k in (i + 1)..rows {
                    if (t.values()[i * cols + j] - t.values()[k * cols + j]).abs() < gap {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if ok {
            return t;
        }
    }
}
