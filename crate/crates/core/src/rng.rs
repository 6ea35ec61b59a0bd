//! Counter-based random streams.
//!
//! Every random draw in the simulator is addressed by `(seed, stream, block)`:
//! the stream selects an independent ChaCha keystream and the block selects a
//! fixed offset inside it. Results therefore do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 32-bit words reserved for each block inside a stream (2⁴⁰ words).
const BLOCK_WORDS: u128 = 1 << 40;

/// A generator positioned at `block` of `stream` for `seed`.
pub fn stream_rng(seed: u64, stream: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(block as u128 * BLOCK_WORDS);
    rng
}
