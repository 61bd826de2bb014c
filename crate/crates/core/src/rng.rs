use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based seed splitter: every consumer of randomness derives its
/// stream from the single pipeline seed plus a stable label, so one knob
/// reproduces the whole run.
#[derive(Clone, Copy, Debug)]
pub struct SeedSplitter {
    master: u64,
}

impl SeedSplitter {
    pub fn new(master: u64) -> Self {
        SeedSplitter { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Derive a child seed for a labeled stream and counter.
    pub fn derive(&self, label: &str, counter: u64) -> u64 {
        let mut h = fnv1a64(label.as_bytes());
        h ^= counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        splitmix64(self.master ^ h)
    }

    pub fn rng(&self, label: &str, counter: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(label, counter))
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable 64-bit FNV-1a, used for seed labels and content hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Incremental FNV-1a hasher for canonical content hashing.
#[derive(Clone, Debug)]
pub struct ContentHasher {
    state: u64,
}

impl ContentHasher {
    pub fn new() -> Self {
        ContentHasher {
            state: 0xCBF2_9CE4_8422_2325,
        }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }

    pub fn update_u64(&mut self, v: u64) {
        self.update(&v.to_le_bytes());
    }

    pub fn update_f64(&mut self, v: f64) {
        self.update(&v.to_le_bytes());
    }

    pub fn update_str(&mut self, s: &str) {
        self.update_u64(s.len() as u64);
        self.update(s.as_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for ContentHasher {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable_and_label_sensitive() {
        let s = SeedSplitter::new(42);
        assert_eq!(s.derive("record", 3), s.derive("record", 3));
        assert_ne!(s.derive("record", 3), s.derive("record", 4));
        assert_ne!(s.derive("record", 3), s.derive("shuffle", 3));
    }

    #[test]
    fn different_masters_diverge() {
        assert_ne!(
            SeedSplitter::new(1).derive("x", 0),
            SeedSplitter::new(2).derive("x", 0)
        );
    }
}
