use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Deterministic generator used everywhere randomness is needed.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

pub fn normal(shape: &[usize], mean: f64, std: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = if std == 0.0 {
        vec![mean; n]
    } else {
        let dist = Normal::new(mean, std).expect("finite positive std");
        (0..n).map(|_| dist.sample(rng)).collect()
    };
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Glorot uniform initialization with bound `√(6 / (fan_in + fan_out))`.
///
/// For rank ≥ 2 shapes `fan_out = shape[0]` and `fan_in` is the product of
/// the remaining extents; a vector `[k]` is treated as `k × 1`.
pub fn xavier_uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    let (fan_out, fan_in) = match shape {
        [] => (1, 1),
        [k] => (*k, 1),
        [first, rest @ ..] => (*first, rest.iter().product()),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(shape, -bound, bound, rng)
}

pub fn xavier_init(shape: &[usize], seed: u64) -> Tensor {
    xavier_uniform(shape, &mut seeded_rng(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_respects_bound_and_seed() {
        let a = xavier_init(&[30, 20], 7);
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a, xavier_init(&[30, 20], 7));
        assert_ne!(a, xavier_init(&[30, 20], 8));
        // uniform on [-b, b] has variance b²/3 = 2 / (fan_in + fan_out)
        let var = a.data().iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.006, "variance {var}");
    }

    #[test]
    fn zero_std_normal_is_constant() {
        let t = normal(&[3], 1.5, 0.0, &mut seeded_rng(0));
        assert_eq!(t.data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn sampling_moments() {
        let mut rng = seeded_rng(11);
        let t = normal(&[20000], 2.0, 0.5, &mut rng);
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!((mean - 2.0).abs() < 0.02);
        let u = uniform(&[20000], -1.0, 3.0, &mut rng);
        assert!(u.data().iter().all(|v| (-1.0..3.0).contains(v)));
        let um = u.data().iter().sum::<f64>() / u.len() as f64;
        assert!((um - 1.0).abs() < 0.05);
    }
}
