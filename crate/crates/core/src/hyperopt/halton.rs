use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

pub(crate) const MAX_DIMS: usize = PRIMES.len();

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

/// Halton sequence in the unit cube with a random shift per dimension
/// (Cranley-Patterson rotation) drawn from `seed`.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
}

impl Halton {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims <= MAX_DIMS, "at most {MAX_DIMS} dimensions");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            shift: (0..dims).map(|_| rng.random::<f64>()).collect(),
        }
    }

    /// The `index`-th point; index 0 is the shift itself.
    pub fn point(&self, index: u64) -> Vec<f64> {
        self.shift
            .iter()
            .zip(PRIMES)
            .map(|(s, p)| (radical_inverse(index, p) + s).fract())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        let v: Vec<f64> = (1..=4).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn points_stay_in_unit_cube_and_fill_it() {
        let h = Halton::new(3, 7);
        let pts: Vec<Vec<f64>> = (1..=512).map(|i| h.point(i)).collect();
        assert!(pts.iter().flatten().all(|&u| (0.0..1.0).contains(&u)));
        // every octant is visited
        let mut seen = [false; 8];
        for p in &pts {
            let o = p.iter().enumerate().map(|(d, &u)| usize::from(u >= 0.5) << d).sum::<usize>();
            seen[o] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(Halton::new(3, 7).point(5), h.point(5));
        assert_ne!(Halton::new(3, 8).point(5), h.point(5));
    }
}
