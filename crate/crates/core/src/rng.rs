//! Counter-based deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed on a base
//! seed plus a list of tags (episode index, purpose, ...). Two streams with
//! different tags are independent, and a stream can be rebuilt at any time
//! from its key alone, so episodes can be replayed or run out of order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand::Rng;

/// Stream purposes. Kept as constants so that keys stay stable across releases.
pub mod purpose {
    pub const RESET: u64 = 1;
    pub const SLOT: u64 = 2;
    pub const BEHAVIOR: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const EPISODE: u64 = 6;
    pub const TRIAL: u64 = 7;
    pub const LEARN: u64 = 8;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a tag path.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// Builds the ChaCha stream for `seed` under the given tag path.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let key = derive(seed, tags);
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.to_le_bytes());
    bytes[16..24].copy_from_slice(&splitmix(key).to_le_bytes());
    bytes[24..].copy_from_slice(&(tags.len() as u64).to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Source of uniform choices. Sampling code written against this trait can be
/// driven either by a random stream or by an exhaustive enumerator.
pub trait Chooser {
    /// Returns an index in `0..n`, `n >= 1`.
    fn choose(&mut self, n: usize) -> usize;
}

impl<R: rand::RngCore> Chooser for R {
    fn choose(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.random_range(0..n)
    }
}

/// Enumerates every outcome of a procedure that draws only through a
/// [`Chooser`], together with its probability.
///
/// The procedure is re-run once per leaf of its choice tree.
pub fn enumerate_outcomes<T, F>(mut run: F) -> Vec<(T, f64)>
where
    F: FnMut(&mut dyn Chooser) -> Option<T>,
{
    struct Scripted {
        path: Vec<usize>,
        arity: Vec<usize>,
        depth: usize,
    }
    impl Chooser for Scripted {
        fn choose(&mut self, n: usize) -> usize {
            let d = self.depth;
            self.depth += 1;
            if d < self.path.len() {
                self.arity[d] = n;
                self.path[d]
            } else {
                self.path.push(0);
                self.arity.push(n);
                0
            }
        }
    }

    let mut out = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    loop {
        let mut s = Scripted { arity: vec![0; path.len()], path, depth: 0 };
        let value = run(&mut s);
        s.path.truncate(s.depth);
        s.arity.truncate(s.depth);
        if let Some(v) = value {
            let p = s.arity.iter().fold(1.0, |acc, &n| acc / n as f64);
            out.push((v, p));
        }
        // odometer increment from the deepest decision
        let mut path_next = s.path;
        let arity = s.arity;
        loop {
            let Some(d) = path_next.len().checked_sub(1) else {
                return out;
            };
            if path_next[d] + 1 < arity[d] {
                path_next[d] += 1;
                break;
            }
            path_next.pop();
        }
        path = path_next;
    }
}
