#![allow(dead_code)]

pub mod grads;
pub mod mock;

use std::collections::BTreeSet;

use coldaug::datasets::{Catalog, ItemMeta};
use coldaug::model::{init_params, Backbone, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 12] = [
    "red", "trail", "lip", "balm", "tent", "shoe", "gel", "mat", "bag", "sun", "rope", "cap",
];

/// `n_items` items, the last `n_cold` cold, every item with a short title.
pub fn catalog(n_items: usize, n_cold: usize, seed: u64) -> Catalog {
    let ids: Vec<String> = (0..n_items).map(|i| format!("i{i:04}")).collect();
    let warm: BTreeSet<String> = ids[..n_items - n_cold].iter().cloned().collect();
    let cold: BTreeSet<String> = ids[n_items - n_cold..].iter().cloned().collect();
    let mut c = Catalog::new(warm, cold);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    c.attach_meta(ids.iter().map(|id| {
        ItemMeta {
            item_id: id.clone(),
            title: (0..3)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" "),
            categories: vec![WORDS[rng.random_range(0..WORDS.len())].to_string()],
        }
    }));
    c
}

/// Initialized parameters with every weight redrawn uniformly in ±`scale`
/// so no gradient is trivially tiny.
pub fn random_params(
    backbone: Backbone,
    dim: usize,
    max_len: usize,
    n_users: usize,
    catalog: &Catalog,
    seed: u64,
    scale: f64,
) -> ModelParams {
    let cfg = ModelConfig {
        backbone,
        dim,
        max_len,
        max_vocab: 100,
    };
    let mut p = init_params(&cfg, n_users, catalog, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in p.weights.tensors_mut() {
        t.data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-scale..scale));
    }
    p
}
