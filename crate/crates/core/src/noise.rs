//! Seeded, reproducible randomness.
//!
//! A [`NoiseSource`] wraps a ChaCha20 stream keyed by `(seed, stream_id)`.
//! ChaCha output is specified bit-for-bit, so the same pair yields the same
//! draws on every platform. Substreams get their id from a stable hash of a
//! label, which lets independent parts of an experiment draw without
//! disturbing each other's sequences.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// FNV-1a followed by the splitmix64 finalizer, so that short, similar keys
/// still differ in their high bits. Stable across platforms and Rust
/// versions, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut z = fnv1a(bytes);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps a 64-bit value to a uniform double in the open interval (0, 1).
pub fn u64_to_open01(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

#[derive(Clone, Debug)]
enum Inner {
    ChaCha(Box<ChaCha20Rng>),
    Scripted { values: Vec<f64>, pos: usize },
}

/// The single home of all randomness used by mechanisms and orchestrators.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    seed: u64,
    stream_id: u64,
    noiseless: bool,
    draws: u64,
    inner: Inner,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        NoiseSource {
            seed,
            stream_id,
            noiseless: false,
            draws: 0,
            inner: Inner::ChaCha(Box::new(rng)),
        }
    }

    /// A source that replays `values` (cycling) as its uniform draws.
    ///
    /// Used to pin mechanism behavior to known uniforms. Values must lie in (0, 1).
    pub fn scripted(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "scripted noise needs at least one value");
        assert!(
            values.iter().all(|v| *v > 0.0 && *v < 1.0),
            "scripted uniforms must lie in (0, 1)"
        );
        NoiseSource {
            seed: 0,
            stream_id: 0,
            noiseless: false,
            draws: 0,
            inner: Inner::Scripted { values, pos: 0 },
        }
    }

    /// Zero-noise mode: Laplace draws return 0 and the exponential mechanism
    /// returns the argmax. Privacy claims of a run in this mode are void.
    pub fn noiseless(seed: u64) -> Self {
        let mut source = Self::new(seed);
        source.noiseless = true;
        source
    }

    pub fn set_noiseless(&mut self, on: bool) {
        self.noiseless = on;
    }

    pub fn is_noiseless(&self) -> bool {
        self.noiseless
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of uniforms consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Derives an independent stream from the same root seed.
    ///
    /// The child inherits the noiseless flag.
    pub fn substream(&self, label: &str) -> NoiseSource {
        let mut key = self.stream_id.to_le_bytes().to_vec();
        key.extend_from_slice(label.as_bytes());
        let mut child = Self::with_stream(self.seed, stable_hash(&key));
        child.noiseless = self.noiseless;
        child
    }

    /// One uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        match &mut self.inner {
            Inner::ChaCha(rng) => u64_to_open01(rng.next_u64()),
            Inner::Scripted { values, pos } => {
                let v = values[*pos % values.len()];
                *pos += 1;
                v
            }
        }
    }
}
