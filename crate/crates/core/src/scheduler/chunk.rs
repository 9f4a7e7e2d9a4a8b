//! Fixed-size chunking of a single long prefill.

use serde::{Deserialize, Serialize};

/// One slice of a long request. `history_tokens` counts the request's prior
/// context plus every earlier chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: u32,
    pub new_tokens: u32,
    pub history_tokens: u32,
}

/// Splits `new_tokens` into `ceil(L / c_l)` in-order chunks.
pub fn long_chunk_dispatch(new_tokens: u32, history_tokens: u32, c_l: u32) -> Vec<Chunk> {
    let c_l = c_l.max(1);
    let n = new_tokens.div_ceil(c_l);
    (0..n)
        .map(|k| {
            let done = k * c_l;
            Chunk {
                index: k,
                new_tokens: c_l.min(new_tokens - done),
                history_tokens: history_tokens + done,
            }
        })
        .collect()
}
