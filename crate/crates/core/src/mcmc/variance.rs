//! Standard deviations with uniform priors on a bounded interval.
//!
//! With `m` zero-mean Gaussian terms of sum of squares `S`, the SD has
//! conditional density proportional to `sd^(-m) exp(-S / (2 sd^2))` on
//! `(0, upper)`. In terms of the variance this is an inverse gamma with
//! shape `(m - 1) / 2` and scale `S / 2`, truncated at `upper^2`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

/// Rejection attempts before switching to slice sampling.
pub const MAX_REJECTIONS: usize = 100;

fn log_density(sd: f64, m: usize, ss: f64) -> f64 {
    -(m as f64) * sd.ln() - ss / (2.0 * sd * sd)
}

/// Draws an SD from its truncated conditional. `current` seeds the slice
/// fallback and must lie in `(0, upper)`.
pub fn sample_sd<R: Rng + ?Sized>(rng: &mut R, m: usize, ss: f64, upper: f64, current: f64) -> f64 {
    if m == 0 {
        return sample_open_uniform(rng, upper);
    }
    let shape = (m as f64 - 1.0) / 2.0;
    if shape > 0.0 && ss > 0.0 {
        let gamma = Gamma::new(shape, 2.0 / ss).expect("valid gamma parameters");
        for _ in 0..MAX_REJECTIONS {
            let sd = gamma.sample(rng).recip().sqrt();
            if sd > 0.0 && sd < upper {
                return sd;
            }
        }
    }
    slice_sd(rng, m, ss, upper, current)
}

fn sample_open_uniform<R: Rng + ?Sized>(rng: &mut R, upper: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u * upper;
        }
    }
}

/// Univariate slice sampler with shrinkage on `(0, upper)`.
pub fn slice_sd<R: Rng + ?Sized>(rng: &mut R, m: usize, ss: f64, upper: f64, current: f64) -> f64 {
    let x0 = if current > 0.0 && current < upper {
        current
    } else {
        upper / 2.0
    };
    let e: f64 = Exp1.sample(rng);
    let level = log_density(x0, m, ss) - e;
    let (mut lo, mut hi) = (0.0, upper);
    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if x > 0.0 && log_density(x, m, ss) > level {
            return x;
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-300 {
            return x0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Numerical quadrature of the truncated density's mean.
    fn quadrature_mean(m: usize, ss: f64, upper: f64) -> f64 {
        let n = 200_000;
        let h = upper / n as f64;
        let (mut z, mut first) = (0.0, 0.0);
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            let d = log_density(x, m, ss).exp();
            z += d;
            first += x * d;
        }
        first / z
    }

    #[test]
    fn prior_only_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| sample_sd(&mut rng, 0, 0.0, 0.7, 0.35))
            .collect();
        assert!(draws.iter().all(|&d| d > 0.0 && d < 0.7));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.35).abs() < 0.01);
    }

    #[test]
    fn conjugate_path_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(m, ss, upper) in &[(20usize, 4.0, 0.7), (200, 40.0, 1.0), (5, 3.0, 0.7)] {
            let n = 40_000;
            let draws: Vec<f64> = (0..n)
                .map(|_| sample_sd(&mut rng, m, ss, upper, upper / 2.0))
                .collect();
            assert!(draws.iter().all(|&d| d < upper));
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
            let expect = quadrature_mean(m, ss, upper);
            assert!(
                (mean - expect).abs() < 4.0 * (var / n as f64).sqrt(),
                "{m} {mean} {expect}"
            );
        }
    }

    #[test]
    fn slice_fallback_matches_quadrature() {
        // truncation far below the conjugate mode forces the fallback
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, ss, upper) = (50usize, 50.0, 0.6);
        let mut x = 0.3;
        let mut sum = 0.0;
        let n = 40_000;
        for _ in 0..n {
            x = sample_sd(&mut rng, m, ss, upper, x);
            assert!(x > 0.0 && x < upper);
            sum += x;
        }
        let expect = quadrature_mean(m, ss, upper);
        assert!(
            (sum / n as f64 - expect).abs() < 2e-3,
            "{} {expect}",
            sum / n as f64
        );
    }

    #[test]
    fn single_term_uses_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = 0.5;
        let mut sum = 0.0;
        let n = 40_000;
        for _ in 0..n {
            x = sample_sd(&mut rng, 1, 0.2, 1.0, x);
            sum += x;
        }
        let expect = quadrature_mean(1, 0.2, 1.0);
        assert!((sum / n as f64 - expect).abs() < 5e-3);
    }
}
