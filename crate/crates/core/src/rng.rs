//! Seed-derived random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by the run
//! seed. The control stream drives the step-type coin, pair selection and
//! exchange tests; each ladder slot gets its own stream per iteration, so the
//! parallel step gives identical results whatever the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONTROL_STREAM: u64 = 0;
const INIT_STREAM: u64 = u64::MAX;
// words reserved per (slot, iteration); far more than one sweep consumes
const WORDS_PER_ITERATION_SHIFT: u32 = 32;

#[derive(Debug, Clone)]
pub struct StreamFactory {
    key: <ChaCha8Rng as SeedableRng>::Seed,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self {
            key: ChaCha8Rng::seed_from_u64(seed).get_seed(),
        }
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(id);
        rng
    }

    pub fn control(&self) -> ChaCha8Rng {
        self.stream(CONTROL_STREAM)
    }

    pub fn init(&self) -> ChaCha8Rng {
        self.stream(INIT_STREAM)
    }

    /// Stream for ladder slot `slot` (0-based) at iteration `iteration`.
    pub fn replica(&self, slot: usize, iteration: u64) -> ChaCha8Rng {
        let mut rng = self.stream(slot as u64 + 1);
        rng.set_word_pos(u128::from(iteration) << WORDS_PER_ITERATION_SHIFT);
        rng
    }
}

/// Derives the `index`-th child seed of `master`, kept below 2^63 so it
/// survives a round trip through TOML integers.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) >> 1
}
