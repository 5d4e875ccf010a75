use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Matrix, Scalar};

/// Uniform(±sqrt(6 / (fan_in + fan_out))) weights.
pub fn xavier_matrix<S: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| S::of(rng.gen_range(-bound..bound)))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized by construction")
}

/// Generator dedicated to one parameter block, so a block's initial values
/// depend only on the run seed and the block name.
pub fn block_rng(seed: u64, block: &str) -> ChaCha8Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in block.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_respects_bound_and_is_seeded() {
        let mut a = block_rng(7, "enc.layer0");
        let mut b = block_rng(7, "enc.layer0");
        let m: Matrix<f64> = xavier_matrix(10, 6, &mut a);
        let n: Matrix<f64> = xavier_matrix(10, 6, &mut b);
        assert_eq!(m, n);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= bound));
        let mut c = block_rng(7, "enc.layer1");
        let o: Matrix<f64> = xavier_matrix(10, 6, &mut c);
        assert_ne!(m, o);
    }
}
