//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{ModelParams, Weights};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
}

/// Compares the analytic gradient of `loss_fn` to central differences with
/// step `h = 1e-5` on `samples` randomly chosen scalars (every scalar when
/// there are fewer). The error is `|g_a - g_f| / max(1e-8, |g_a| + |g_f|)`.
pub fn grad_check<F>(
    params: &ModelParams,
    loss_fn: F,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams, Option<&mut Weights>) -> Result<f64>,
{
    let mut analytic = params.weights.zeros_like();
    loss_fn(params, Some(&mut analytic))?;

    let total = params.weights.num_scalars();
    let indices: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, total, samples).into_vec()
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst_index: 0,
    };
    for &idx in &indices {
        let original = params.weights.scalar(idx).expect("index in range");
        *probe.weights.scalar_mut(idx).unwrap() = original + FD_STEP;
        let up = loss_fn(&probe, None)?;
        *probe.weights.scalar_mut(idx).unwrap() = original - FD_STEP;
        let down = loss_fn(&probe, None)?;
        *probe.weights.scalar_mut(idx).unwrap() = original;

        let fd = (up - down) / (2.0 * FD_STEP);
        let ga = analytic.scalar(idx).unwrap();
        let err = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = idx;
        }
        report.checked += 1;
    }
    Ok(report)
}
