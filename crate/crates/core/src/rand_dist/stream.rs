use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from a root seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed), |acc, &p| {
        mix64(acc ^ mix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

/// A ChaCha8 stream addressed by `(seed, chain, site)`.
///
/// The key depends on `(seed, chain)` and the ChaCha stream id is `site`, so every
/// update site inside a chain draws from its own non-overlapping sequence. The
/// position in the stream can be saved and restored exactly.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    chain: u64,
    site: u64,
}

impl RngStream {
    pub fn new(seed: u64, chain: u64, site: u64) -> Self {
        let mut key = [0u8; 32];
        let base = derive_seed(seed, &[chain]);
        for (i, chunk) in key.chunks_mut(8).enumerate() {
            chunk.copy_from_slice(&mix64(base ^ (i as u64 + 1)).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(site);
        RngStream {
            rng,
            seed,
            chain,
            site,
        }
    }

    /// Reopens a stream at a saved position.
    pub fn restore(seed: u64, chain: u64, site: u64, word_pos: u128) -> Self {
        let mut s = RngStream::new(seed, chain, site);
        s.rng.set_word_pos(word_pos);
        s
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn chain(&self) -> u64 {
        self.chain
    }

    pub fn site(&self) -> u64 {
        self.site
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
