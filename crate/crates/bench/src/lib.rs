//! Shared fixtures for the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsetemp::data::{generate, Dataset};
use sparsetemp::{NetConfig, SoftmaxMode, SuperNet};

/// A refreshed supernet and a matching blob dataset.
pub fn fixture(num_nodes: usize, dim: usize, seed: u64) -> (SuperNet, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetConfig {
        num_nodes,
        feature_dim: dim,
        ..NetConfig::default()
    };
    let mut net = SuperNet::new(cfg, &mut rng).expect("valid fixture config");
    net.refresh(0.01, SoftmaxMode::Sn(sparsetemp::ScalePolicy::StConst(1.0)))
        .expect("finite fixture logits");
    let data = generate(seed, 512, dim, 4, 1.0).expect("valid fixture dataset");
    (net, data)
}
