//! Random-variate kernels and the seeding discipline.
//!
//! Every chain owns a ChaCha20 stream selected by `(seed, stream_id)`.
//! Households additionally own substreams keyed by a hash of their id, so
//! latent draws do not depend on the order in which worker threads visit
//! households.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type StreamRng = ChaCha20Rng;

/// Generator for chain `stream_id` under `seed`. Streams of one seed never
/// overlap.
pub fn rng_stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Independent generator for a named entity (e.g. a household) of a chain.
pub fn substream(seed: u64, stream_id: u64, key: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream_id.to_le_bytes());
    h.update(key.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(digest);
    rng.set_stream(stream_id);
    rng
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Uniform on (0, 1]; safe to take the logarithm.
    1.0 - rng.random::<f64>()
}

// Width below which uniform proposals beat exponential ones on [a, b], a > 0.
fn uniform_width_threshold(a: f64) -> f64 {
    let r = (a * a + 4.0).sqrt();
    (2.0 / (a + r)) * ((a * a - a * r) / 4.0 + 0.5).exp()
}

const NORMAL_REJECTION_LIMIT: f64 = 0.47;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Standard normal restricted to `[a, b]` with `a ≥ 0`.
fn positive_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a < uniform_width_threshold(a) {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if open_unit(rng) <= ((a * a - z * z) / 2.0).exp() {
                return z;
            }
        }
    }
    if a < NORMAL_REJECTION_LIMIT {
        loop {
            let z = std_normal(rng);
            if z >= a && z <= b {
                return z;
            }
        }
    }
    let alpha = (a + (a * a + 4.0).sqrt()) / 2.0;
    loop {
        let z = a - open_unit(rng).ln() / alpha;
        if z <= b && open_unit(rng) <= (-(z - alpha).powi(2) / 2.0).exp() {
            return z;
        }
    }
}

/// Standard normal restricted to `[a, b]`.
fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= 0.0 {
        positive_tail(a, b, rng)
    } else if b <= 0.0 {
        -positive_tail(-b, -a, rng)
    } else if b - a >= SQRT_2PI {
        loop {
            let z = std_normal(rng);
            if z >= a && z <= b {
                return z;
            }
        }
    } else {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if open_unit(rng) <= (-z * z / 2.0).exp() {
                return z;
            }
        }
    }
}

/// Draw from `N(mean, sd²)` restricted to `[lo, hi]`; either bound may be
/// infinite.
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("truncation interval [{lo}, {hi}] is empty")));
    }
    if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
        return Err(Error::invalid(format!(
            "invalid normal parameters mean {mean}, sd {sd}"
        )));
    }
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let z = standard_truncated(a, b, rng);
    Ok((mean + sd * z).clamp(lo, hi))
}

/// `mean + L z` with `L` the lower Cholesky factor of `cov`.
pub fn mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("normal covariance".into()))?;
    Ok(mvn_with_factor(mean, &chol.l(), rng))
}

/// Like [`mvn`] with a precomputed lower Cholesky factor.
pub fn mvn_with_factor<R: Rng + ?Sized>(mean: &DVector<f64>, l: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
    mean + l * z
}

/// Wishart draw with expectation `df · scale` (Bartlett decomposition).
pub fn wishart<R: Rng + ?Sized>(df: usize, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df < p {
        return Err(Error::invalid(format!(
            "Wishart degrees of freedom {df} below dimension {p}"
        )));
    }
    let l = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Wishart scale".into()))?
        .l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new((df - i) as f64).expect("positive degrees of freedom");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erfc;

    fn upper_tail(x: f64) -> f64 {
        0.5 * erfc(x / std::f64::consts::SQRT_2)
    }

    fn truncated_cdf(x: f64, a: f64, b: f64) -> f64 {
        if a >= 0.0 {
            (upper_tail(a) - upper_tail(x)) / (upper_tail(a) - upper_tail(b))
        } else if b <= 0.0 {
            (upper_tail(-x) - upper_tail(-a)) / (upper_tail(-b) - upper_tail(-a))
        } else {
            let phi = |v: f64| 1.0 - upper_tail(v);
            (phi(x) - phi(a)) / (phi(b) - phi(a))
        }
    }

    fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| rng_stream(7, 0).random()).collect();
        let b: Vec<u64> = (0..4).map(|_| rng_stream(7, 0).random()).collect();
        assert_eq!(a, b);
        let mut r0 = rng_stream(7, 0);
        let mut r1 = rng_stream(7, 1);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| std_normal(&mut r0)).collect();
        let y: Vec<f64> = (0..n).map(|_| std_normal(&mut r1)).collect();
        let rho = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        assert!(rho.abs() < 3.0 / (n as f64).sqrt());
        let mut s1 = substream(7, 0, "hh1");
        let mut s2 = substream(7, 0, "hh2");
        assert_ne!(s1.random::<u64>(), s2.random::<u64>());
    }

    #[test]
    fn std_normal_moments() {
        let mut rng = rng_stream(1, 0);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = rng_stream(2, 0);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| truncated_normal(0.0, 1.0, 0.0, f64::INFINITY, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let target = (2.0 / std::f64::consts::PI).sqrt();
        let sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - target).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn untruncated_moments() {
        let mut rng = rng_stream(3, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| truncated_normal(5.0, 2.0, f64::NEG_INFINITY, f64::INFINITY, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 3.0 * 2.0 / (n as f64).sqrt());
        assert!((var - 4.0).abs() < 4.0 * 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn far_tail_mean() {
        // Mean of N(0,1) on [8, 9] by Simpson integration.
        let density = |x: f64| (-x * x / 2.0).exp();
        let steps = 2000;
        let h = 1.0 / steps as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=steps {
            let x = 8.0 + i as f64 * h;
            let c = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            num += c * x * density(x);
            den += c * density(x);
        }
        let target = num / den;
        // Closed form (φ(8) − φ(9)) / (Φ(9) − Φ(8)).
        let closed =
            (density(8.0) - density(9.0)) / ((2.0 * std::f64::consts::PI).sqrt() * (upper_tail(8.0) - upper_tail(9.0)));
        assert!((target - closed).abs() < 1e-9);
        assert!((target - 8.12119).abs() < 1e-5);
        let mut rng = rng_stream(4, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| truncated_normal(0.0, 1.0, 8.0, 9.0, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|&x| (8.0..=9.0).contains(&x)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        // The conditional sd is about 1/8.
        assert!((mean - target).abs() < 3.0 * 0.125 / (n as f64).sqrt());
    }

    #[test]
    fn truncated_normal_ks_over_random_configurations() {
        let mut cfg = rng_stream(99, 0);
        let mut rng = rng_stream(100, 0);
        let n = 100_000;
        let critical = 1.9495 / (n as f64).sqrt();
        for i in 0..50 {
            let mean = cfg.random_range(-5.0..5.0);
            let sd = cfg.random_range(0.2..3.0);
            let (a, b) = match i % 5 {
                0 => {
                    let a = cfg.random_range(-2.0..0.0);
                    (a, a + cfg.random_range(0.1..4.0))
                }
                1 => {
                    let a = cfg.random_range(0.0..8.0);
                    (a, f64::INFINITY)
                }
                2 => {
                    let a = cfg.random_range(-8.0..-0.5);
                    (a, a + cfg.random_range(0.05..1.0))
                }
                3 => {
                    let a = cfg.random_range(1.0..8.0);
                    (a, a + cfg.random_range(0.01..3.0))
                }
                _ => (f64::NEG_INFINITY, cfg.random_range(-8.0..2.0)),
            };
            let (lo, hi) = (mean + sd * a, mean + sd * b);
            let draws: Vec<f64> = (0..n)
                .map(|_| (truncated_normal(mean, sd, lo, hi, &mut rng).unwrap() - mean) / sd)
                .collect();
            let d = ks_statistic(draws, |x| truncated_cdf(x, a, b));
            assert!(d < critical, "config {i} [{a}, {b}]: KS {d} >= {critical}");
        }
    }

    #[test]
    fn extreme_bounds_never_produce_nan() {
        let mut rng = rng_stream(5, 0);
        for &(lo, hi) in &[
            (38.0, f64::INFINITY),
            (40.0, 40.5),
            (f64::NEG_INFINITY, -40.0),
            (-40.0, -39.999),
            (39.0, 39.0 + 1e-9),
            (-1e-12, 1e-12),
        ] {
            for _ in 0..1000 {
                let x = truncated_normal(0.0, 1.0, lo, hi, &mut rng).unwrap();
                assert!(x.is_finite() && x >= lo && x <= hi, "{x} outside [{lo}, {hi}]");
            }
        }
        assert!(truncated_normal(0.0, 1.0, 1.0, 1.0, &mut rng).is_err());
        assert!(truncated_normal(0.0, 1.0, 2.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mvn_moments_and_affine_map() {
        let mut rng = rng_stream(6, 0);
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.3, 0.6, 1.0, 0.2, -0.3, 0.2, 0.5]);
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.5, -1.0, 2.0]);
        let n = 100_000;
        let mut sum = DVector::zeros(3);
        let mut sq = DMatrix::zeros(3, 3);
        let mut sq_a = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = mvn(&mean, &cov, &mut rng).unwrap();
            let d = &x - &mean;
            sum += &x;
            sq += &d * d.transpose();
            let y = &a * &d;
            sq_a += &y * y.transpose();
        }
        let emp_mean = sum / n as f64;
        let emp_cov = sq / n as f64;
        let target_a = &a * &cov * a.transpose();
        let emp_a = sq_a / n as f64;
        for i in 0..3 {
            assert!((emp_mean[i] - mean[i]).abs() < 4.0 * (cov[(i, i)] / n as f64).sqrt());
            for j in 0..3 {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((emp_cov[(i, j)] - cov[(i, j)]).abs() < 4.0 * se);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let se = ((target_a[(i, i)] * target_a[(j, j)] + target_a[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((emp_a[(i, j)] - target_a[(i, j)]).abs() < 4.0 * se);
            }
        }
        let tiny = DMatrix::from_diagonal_element(3, 3, 1e-300);
        let x = mvn(&mean, &tiny, &mut rng).unwrap();
        assert!((x - &mean).amax() < 1e-140);
        assert!(mvn(&mean, &DMatrix::from_diagonal_element(3, 3, -1.0), &mut rng).is_err());
    }

    #[test]
    fn wishart_moments() {
        let mut rng = rng_stream(8, 0);
        let n = 100_000;
        let one = DMatrix::from_element(1, 1, 1.0);
        let mean1: f64 = (0..n).map(|_| wishart(7, &one, &mut rng).unwrap()[(0, 0)]).sum::<f64>() / n as f64;
        assert!((mean1 - 7.0).abs() < 4.0 * (14.0 / n as f64).sqrt());

        let scale = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 2.0, -0.4, 0.1, -0.4, 0.7]);
        let df = 6;
        let mut sum = DMatrix::zeros(3, 3);
        for _ in 0..n {
            let w = wishart(df, &scale, &mut rng).unwrap();
            assert!(w.clone().cholesky().is_some());
            sum += w;
        }
        let emp = sum / n as f64;
        for i in 0..3 {
            for j in 0..3 {
                let var = df as f64 * (scale[(i, j)].powi(2) + scale[(i, i)] * scale[(j, j)]);
                let target = df as f64 * scale[(i, j)];
                assert!((emp[(i, j)] - target).abs() < 4.0 * (var / n as f64).sqrt());
            }
        }
        assert!(wishart(2, &scale, &mut rng).is_err());
    }
}
