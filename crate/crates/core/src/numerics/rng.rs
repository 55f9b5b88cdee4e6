use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use super::RealArray;

/// Reproducible random stream backed by the ChaCha20 block function.
///
/// The full state is `(seed, stream, counter)`, where `counter` is the
/// position in 32-bit words within the keystream. Two streams with the same
/// state produce the same draws on every platform.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream for worker `id` under a shared root seed.
    pub fn derive(root_seed: u64, id: u64) -> Self {
        Self::with_stream(root_seed, id)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Restores a stream at an exact draw position.
    pub fn from_state(seed: u64, stream: u64, counter: u128) -> Self {
        let mut rng = Self::with_stream(seed, stream);
        rng.inner.set_word_pos(counter);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is below 2^-32 for any n we use.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// A pair of independent standard normal draws (Box-Muller).
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.normal();
        }
    }
}

/// I.i.d. standard normal array of the given shape.
pub fn gaussian(rng: &mut RngStream, shape: &[usize]) -> RealArray {
    let n: usize = shape.iter().product();
    let mut buf = vec![0.0f64; n];
    rng.fill_normal(&mut buf);
    RealArray::from_parts(shape.to_vec(), buf.into_iter().map(|v| v as f32).collect())
}
