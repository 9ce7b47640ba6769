use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softmax_in_place, softplus};
use crate::model::{ModelParams, UserCache, UserCtx, Weights};

use super::{AugReduction, LossReport};

/// A main-task training example: a user context and its observed item.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub ctx: UserCtx<'a>,
    pub item: usize,
}

/// A resolved augmentation triple.
#[derive(Debug, Clone, Copy)]
pub struct TripleRef<'a> {
    pub ctx: UserCtx<'a>,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LossOptions<'a> {
    pub temperature: f64,
    /// `ln q(i)` per item, subtracted from in-batch logits when present.
    pub log_q: Option<&'a [f64]>,
    pub aug_weight: f64,
    pub aug_reduction: AugReduction,
}

impl Default for LossOptions<'_> {
    fn default() -> Self {
        LossOptions {
            temperature: 1.0,
            log_q: None,
            aug_weight: 1.0,
            aug_reduction: AugReduction::Sum,
        }
    }
}

/// Per-triple pairwise loss `-ln σ(margin)`, via the stable softplus.
#[inline]
pub fn bpr_term(margin: f64) -> f64 {
    softplus(-margin)
}

/// In-batch sampled softmax: every other positive in the batch serves as a
/// negative. Returns the mean over examples and, when `grad` is given,
/// accumulates `scale · ∂loss` into it.
pub fn sampled_softmax_loss(
    params: &ModelParams,
    batch: &[Example<'_>],
    opts: &LossOptions<'_>,
    grad: Option<&mut Weights>,
    scale: f64,
) -> Result<f64> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::Data(format!(
            "sampled softmax needs at least 2 examples, got {b}"
        )));
    }
    let users: Vec<(Vec<f64>, UserCache)> = batch
        .iter()
        .map(|e| params.user_forward(e.ctx))
        .collect::<Result<_>>()?;
    let items: Vec<Vec<f64>> = batch
        .iter()
        .map(|e| params.item_repr(e.item))
        .collect::<Result<_>>()?;

    let inv_t = 1.0 / opts.temperature;
    let mut loss = 0.0;
    let mut dlogits = vec![vec![0.0; b]; b];
    for k in 0..b {
        let mut z: Vec<f64> = (0..b)
            .map(|j| {
                let s = params.score_unchecked(&users[k].0, &items[j]) * inv_t;
                match opts.log_q {
                    Some(lq) => s - lq[batch[j].item],
                    None => s,
                }
            })
            .collect();
        let target = z[k];
        let lse = softmax_in_place(&mut z);
        loss += lse - target;
        for j in 0..b {
            let delta = if j == k { 1.0 } else { 0.0 };
            dlogits[k][j] = (z[j] - delta) / b as f64;
        }
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("sampled softmax loss is {loss}")));
    }

    if let Some(grad) = grad {
        let dim = params.dim;
        let mut du = vec![vec![0.0; dim]; b];
        let mut di = vec![vec![0.0; dim]; b];
        for k in 0..b {
            for j in 0..b {
                let ds = scale * dlogits[k][j] * inv_t;
                if ds == 0.0 {
                    continue;
                }
                let (uk, dj) = (&users[k].0, &items[j]);
                params.score_backward(uk, dj, ds, grad, &mut du[k], &mut di[j]);
            }
        }
        for k in 0..b {
            params.user_backward(&users[k].1, &du[k], grad);
            params.item_backward(batch[k].item, &di[k], grad);
        }
    }
    Ok(loss)
}

/// `Σ -ln σ(ŷ(u,pos) - ŷ(u,neg))` over the triples.
pub fn bpr_aug_loss(
    params: &ModelParams,
    triples: &[TripleRef<'_>],
    grad: Option<&mut Weights>,
    scale: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    let mut grad = grad;
    for t in triples {
        let (u, cache) = params.user_forward(t.ctx)?;
        let pos = params.item_repr(t.pos)?;
        let neg = params.item_repr(t.neg)?;
        let margin = params.score_unchecked(&u, &pos) - params.score_unchecked(&u, &neg);
        loss += bpr_term(margin);
        if let Some(g) = grad.as_deref_mut() {
            // d softplus(-m) / dm = -σ(-m)
            let dm = -sigmoid(-margin) * scale;
            let dim = params.dim;
            let mut du = vec![0.0; dim];
            let mut dpos = vec![0.0; dim];
            let mut dneg = vec![0.0; dim];
            params.score_backward(&u, &pos, dm, g, &mut du, &mut dpos);
            params.score_backward(&u, &neg, -dm, g, &mut du, &mut dneg);
            params.user_backward(&cache, &du, g);
            params.item_backward(t.pos, &dpos, g);
            params.item_backward(t.neg, &dneg, g);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("augmentation loss is {loss}")));
    }
    Ok(loss)
}

/// `main + λ·aug`, with gradients of both terms summed into `grad`.
///
/// An empty `batch` contributes zero main loss; the aug term is the plain
/// sum or the per-triple mean depending on `opts.aug_reduction`.
pub fn total_loss(
    params: &ModelParams,
    batch: &[Example<'_>],
    triples: &[TripleRef<'_>],
    opts: &LossOptions<'_>,
    mut grad: Option<&mut Weights>,
) -> Result<LossReport> {
    let main = if batch.is_empty() {
        0.0
    } else {
        sampled_softmax_loss(params, batch, opts, grad.as_deref_mut(), 1.0)?
    };
    let divisor = match opts.aug_reduction {
        AugReduction::Sum => 1.0,
        AugReduction::Mean => triples.len().max(1) as f64,
    };
    let aug = bpr_aug_loss(
        params,
        triples,
        grad.as_deref_mut(),
        opts.aug_weight / divisor,
    )? / divisor;
    let total = main + opts.aug_weight * aug;
    if !total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite total loss (main {main}, aug {aug})"
        )));
    }
    let grad_norm = grad.map_or(0.0, |g| g.global_norm());
    Ok(LossReport {
        main_loss: main,
        aug_loss: aug,
        total,
        grad_norm,
    })
}
