//! Deterministic sample generation: Halton low-discrepancy sequences for
//! grids and a SplitMix64 generator for reproducible pseudo-random states.
//! No external randomness, so repeated runs are byte-identical.

/// Radical-inverse of `index` in the given base.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut result = 0.0;
    let mut fraction = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * fraction;
        index /= base;
        fraction /= base as f64;
    }
    result
}

fn nth_prime(n: usize) -> u64 {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    PRIMES[n % PRIMES.len()]
}

/// Axis-aligned box with a deterministic low-discrepancy point sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: usize,
    /// Extra copies of the point set with one coordinate pinned to a value;
    /// used to cover measure-zero guard surfaces such as `x1 = 0`.
    pub pins: Vec<(usize, f64)>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points: usize) -> Self {
        assert_eq!(lo.len(), hi.len());
        GridSpec {
            lo,
            hi,
            points,
            pins: Vec::new(),
        }
    }

    pub fn with_pin(mut self, axis: usize, value: f64) -> Self {
        self.pins.push((axis, value));
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Halton point `index` (1-based internally; `offset` shifts the whole
    /// sequence deterministically, e.g. from a seed).
    fn point(&self, index: usize, offset: u64) -> Vec<f64> {
        (0..self.dim())
            .map(|axis| {
                let u = radical_inverse(offset + index as u64 + 1, nth_prime(axis));
                self.lo[axis] + (self.hi[axis] - self.lo[axis]) * u
            })
            .collect()
    }

    /// All sample points: the box sequence followed by one pinned copy per
    /// pin entry.
    pub fn samples(&self, offset: u64) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.points * (1 + self.pins.len()));
        for i in 0..self.points {
            out.push(self.point(i, offset));
        }
        for &(axis, value) in &self.pins {
            for i in 0..self.points {
                let mut p = self.point(i, offset);
                p[axis] = value;
                out.push(p);
            }
        }
        out
    }
}

/// SplitMix64: tiny, fast, and stable across platforms.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_points_stay_in_box_and_are_deterministic() {
        let grid = GridSpec::new(vec![0.0, -10.0], vec![5.0, 10.0], 100);
        let a = grid.samples(0);
        let b = grid.samples(0);
        assert_eq!(a, b);
        for p in &a {
            assert!(p[0] >= 0.0 && p[0] <= 5.0);
            assert!(p[1] >= -10.0 && p[1] <= 10.0);
        }
        let shifted = grid.samples(7);
        assert_ne!(a, shifted);
    }

    #[test]
    fn pinned_copies_fix_the_axis() {
        let grid = GridSpec::new(vec![0.0, -1.0], vec![1.0, 1.0], 10).with_pin(0, 0.0);
        let pts = grid.samples(0);
        assert_eq!(pts.len(), 20);
        assert!(pts[10..].iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn splitmix_is_reproducible() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..10 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
