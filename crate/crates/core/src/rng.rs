use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for one item of a seeded job. Each item gets its own ChaCha stream so
/// the draws do not depend on the order in which items are processed.
pub(crate) fn item_rng(seed: u64, item: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(item);
    rng
}

pub(crate) fn global_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
