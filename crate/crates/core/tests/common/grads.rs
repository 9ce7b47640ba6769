//! Finite-difference checks shared by the gradient and acceptance tests.

use coldaug::model::{Backbone, UserCtx};
use coldaug::training::{
    bpr_aug_loss, grad_check, sampled_softmax_loss, total_loss, AugReduction, Example,
    GradCheckReport, LossOptions, TripleRef,
};

const HISTORIES: [&[usize]; 6] = [
    &[0, 3, 5, 7, 1],
    &[2, 4],
    &[9, 8, 7, 6, 5, 4, 3],
    &[1],
    &[5, 5, 2],
    &[11, 0, 10],
];

pub fn batch() -> Vec<Example<'static>> {
    (0..6)
        .map(|u| Example {
            ctx: UserCtx {
                user: u,
                history: HISTORIES[u],
            },
            item: (u * 5 + 1) % 14,
        })
        .collect()
}

pub fn triples() -> Vec<TripleRef<'static>> {
    [
        (0, 14, 15),
        (1, 16, 17),
        (2, 15, 18),
        (4, 19, 14),
        (5, 17, 16),
    ]
    .into_iter()
    .map(|(u, pos, neg)| TripleRef {
        ctx: UserCtx {
            user: u,
            history: HISTORIES[u],
        },
        pos,
        neg,
    })
    .collect()
}

/// Main, aug and total loss reports for one backbone, in that order.
pub fn check_backbone(backbone: Backbone, dim: usize) -> [(&'static str, GradCheckReport); 3] {
    let catalog = super::catalog(20, 6, 3);
    let params = super::random_params(backbone, dim, 5, 6, &catalog, 11, 0.6);
    let opts = LossOptions {
        temperature: 0.7,
        aug_weight: 0.8,
        aug_reduction: AugReduction::Mean,
        ..LossOptions::default()
    };
    let b = batch();
    let t = triples();
    let main = grad_check(
        &params,
        |p, g| sampled_softmax_loss(p, &b, &opts, g, 1.0),
        300,
        1,
    )
    .unwrap();
    let aug = grad_check(&params, |p, g| bpr_aug_loss(p, &t, g, 1.0), 300, 2).unwrap();
    let total = grad_check(
        &params,
        |p, g| total_loss(p, &b, &t, &opts, g).map(|r| r.total),
        300,
        3,
    )
    .unwrap();
    [("main", main), ("aug", aug), ("total", total)]
}
