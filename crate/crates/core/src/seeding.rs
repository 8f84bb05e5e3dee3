//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded by mixing a
//! base seed with a path of integer labels (stream kind, trial, agent, draw).
//! Streams are therefore independent of thread count and of how many other
//! streams exist, which is what makes reruns byte-identical.

use rand_chacha::ChaCha8Rng;

/// Stream labels. Strategies draw data through the same label so paired
/// trials see identical sample orders across strategies.
pub mod stream {
    /// Per-agent mini-batch index draws during training.
    pub const AGENT_DATA: u64 = 1;
    /// Independent draws for noise-statistics estimation.
    pub const NOISE_DRAW: u64 = 2;
    /// Gaussian noise in the short-term model.
    pub const SHORT_TERM: u64 = 3;
    /// Monte Carlo trials.
    pub const TRIAL: u64 = 4;
    /// Landscape probe directions.
    pub const LANDSCAPE: u64 = 5;
    /// Fixture/ensemble generation.
    pub const FIXTURE: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a label path into a fresh stream seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut acc = splitmix64(base ^ 0xA076_1D64_78BD_642F);
    for &p in path {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// ChaCha8 stream at a derived seed.
pub fn make_rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// One data stream per agent, shared by all strategies of a trial.
pub fn agent_data_streams(base: u64, trial: u64, agents: usize) -> Vec<ChaCha8Rng> {
    (0..agents as u64)
        .map(|a| make_rng(base, &[stream::AGENT_DATA, trial, a]))
        .collect()
}
