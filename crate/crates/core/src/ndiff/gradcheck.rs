//! Central finite-difference gradient checking.
//!
//! The error of a block is `max_i |analytic_i - numeric_i|` divided by the
//! largest magnitude in either gradient (floored at [`SCALE_FLOOR`]). Scaling by
//! the block maximum keeps entries whose true gradient is exactly zero (dead
//! ReLUs, non-argmax pool inputs) from dominating through rounding noise.

use std::fmt;

use super::{NdiffError, Network, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const SCALE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    pub finite: bool,
}

impl BlockReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.finite && self.max_rel_error < tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed(self.tolerance))
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks.iter().filter(|b| !b.passed(self.tolerance))
    }

    pub fn worst(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            let status = if b.passed(self.tolerance) { "ok" } else { "FAIL" };
            let finite = if b.finite { "" } else { " (non-finite)" };
            writeln!(f, "{:<24} {:>12.3e}  {status}{finite}", b.name, b.max_rel_error)?;
        }
        write!(
            f,
            "tolerance {:e}: {}",
            self.tolerance,
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

fn block_error(name: &str, analytic: &[f64], numeric: &[f64]) -> BlockReport {
    let finite = analytic.iter().chain(numeric).all(|v| v.is_finite());
    if !finite {
        return BlockReport {
            name: name.to_string(),
            max_rel_error: f64::INFINITY,
            finite,
        };
    }
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(SCALE_FLOOR, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    BlockReport {
        name: name.to_string(),
        max_rel_error: diff / scale,
        finite,
    }
}

/// Compares `analytic` against central differences of `loss` at `point`.
///
/// `point` and `analytic` are parallel lists of blocks; `loss` evaluates the
/// scalar objective at a perturbed copy of `point`.
pub fn compare_gradients<F>(
    names: &[String],
    point: &[Vec<f64>],
    analytic: &[Vec<f64>],
    loss: F,
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    let mut probe = point.to_vec();
    let blocks = names
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let numeric: Vec<f64> = (0..point[b].len())
                .map(|i| {
                    let orig = probe[b][i];
                    probe[b][i] = orig + step;
                    let up = loss(&probe);
                    probe[b][i] = orig - step;
                    let down = loss(&probe);
                    probe[b][i] = orig;
                    (up - down) / (2.0 * step)
                })
                .collect();
            block_error(name, &analytic[b], &numeric)
        })
        .collect();
    GradCheckReport { tolerance, blocks }
}

/// Checks `net`'s backward pass for the objective `loss_fn(net(input))`.
///
/// `loss_fn` returns the loss and its gradient with respect to the network
/// output. Every parameter block plus the input is checked.
pub fn finite_diff_check<F>(
    net: &Network,
    input: &Tensor,
    loss_fn: F,
    tolerance: f64,
) -> Result<GradCheckReport, NdiffError>
where
    F: Fn(&Tensor) -> (f64, Vec<f64>),
{
    let trace = net.trace(input)?;
    let (_, out_grad) = loss_fn(trace.output());
    let grads = net.gradients(&trace, &out_grad)?;

    let mut names = net.parameter_names();
    names.push("input".to_string());
    let mut point: Vec<Vec<f64>> = net.parameters().map(|p| p.data().to_vec()).collect();
    point.push(input.data().to_vec());
    let mut analytic = grads.blocks;
    analytic.push(grads.input);

    let n_params = names.len() - 1;
    let shape = input.shape().to_vec();
    let objective = |blocks: &[Vec<f64>]| {
        let mut probe = net.clone();
        probe.set_parameters(&blocks[..n_params]);
        let x = Tensor::new(shape.clone(), blocks[n_params].clone()).expect("same shape");
        match probe.infer(&x) {
            Ok(y) => loss_fn(&y).0,
            Err(_) => f64::NAN,
        }
    };
    Ok(compare_gradients(
        &names,
        &point,
        &analytic,
        objective,
        DEFAULT_STEP,
        tolerance,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let point = vec![vec![1.0, -2.0, 0.5]];
        let analytic = vec![point[0].iter().map(|x| 2.0 * x).collect()];
        let report = compare_gradients(
            &["q".into()],
            &point,
            &analytic,
            |b| b[0].iter().map(|x| x * x).sum(),
            DEFAULT_STEP,
            1e-6,
        );
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn scaled_gradient_fails() {
        let point = vec![vec![1.0, -2.0, 0.5]];
        let analytic = vec![point[0].iter().map(|x| 4.0 * x).collect()];
        let report = compare_gradients(
            &["q".into()],
            &point,
            &analytic,
            |b| b[0].iter().map(|x| x * x).sum(),
            DEFAULT_STEP,
            1e-4,
        );
        assert!(!report.passed());
        assert!((report.worst() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn nan_is_reported_as_failure() {
        let report = compare_gradients(
            &["bad".into()],
            &[vec![1.0]],
            &[vec![f64::NAN]],
            |b| b[0][0],
            DEFAULT_STEP,
            1e-4,
        );
        assert!(!report.passed());
        assert!(!report.blocks[0].finite);
        assert_eq!(report.failures().next().unwrap().name, "bad");
    }
}
