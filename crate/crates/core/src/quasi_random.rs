//! Halton low-discrepancy sequences and their transforms to Gaussian and
//! Student-t frequency draws.
//!
//! Index 0 (the origin) is never emitted: every coordinate of every point
//! lies strictly inside `(0, 1)`, so inverse-CDF transforms stay finite.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::special::{inverse_chi_square_cdf, inverse_normal_cdf};

/// The first 50 primes; one Halton base per dimension.
pub const PRIMES: [u32; 50] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229,
];

pub const MAX_DIMENSION: usize = PRIMES.len();

/// Base-`base` radical inverse of `index`: the digits of `index` mirrored
/// around the radix point.
pub fn radical_inverse(index: u64, base: u32) -> f64 {
    debug_assert!(base >= 2);
    let b = u64::from(base);
    let inv_base = 1.0 / f64::from(base);
    let mut n = index;
    let mut factor = inv_base;
    let mut value = 0.0;
    while n > 0 {
        value += (n % b) as f64 * factor;
        n /= b;
        factor *= inv_base;
    }
    value
}

/// A Halton stream starting at index 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HaltonSequence {
    bases: Vec<u32>,
    next_index: u64,
}

impl HaltonSequence {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(Error::Config(format!(
                "Halton dimension {dimension} outside 1..={MAX_DIMENSION}"
            )));
        }
        Ok(Self {
            bases: PRIMES[..dimension].to_vec(),
            next_index: 1,
        })
    }

    pub fn dimension(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[u32] {
        &self.bases
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// The point at a given (1-based) index, independent of the cursor.
    pub fn point(&self, index: u64) -> Vec<f64> {
        self.bases.iter().map(|&b| radical_inverse(index, b)).collect()
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let p = self.point(self.next_index);
        self.next_index += 1;
        p
    }

    pub fn take_points(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.next_point()).collect()
    }
}

impl Iterator for HaltonSequence {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        Some(self.next_point())
    }
}

/// `count` consecutive Halton points starting at index 1.
pub fn halton_points(dimension: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    Ok(HaltonSequence::new(dimension)?.take_points(count))
}

fn checked_normal_quantile(u: f64) -> Result<f64> {
    if u > 0.0 && u < 1.0 {
        Ok(inverse_normal_cdf(u))
    } else {
        Err(Error::NumericDomain(format!(
            "quasi-random coordinate {u} is not strictly inside (0, 1)"
        )))
    }
}

/// Maps unit-cube points to `mean + scale · Φ⁻¹(u)` componentwise.
pub fn to_gaussian(points: &[Vec<f64>], mean: &[f64], scale: f64) -> Result<Vec<Vec<f64>>> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    points
        .iter()
        .map(|p| {
            crate::error::check_dim("gaussian transform mean", p.len(), mean.len())?;
            p.iter()
                .zip(mean)
                .map(|(&u, &m)| Ok(m + scale * checked_normal_quantile(u)?))
                .collect()
        })
        .collect()
}

/// Maps `(d + 1)`-dimensional unit-cube points to `d`-dimensional
/// multivariate Student-t draws with `dof` degrees of freedom.
///
/// The first `d` coordinates become a standard normal vector `z`; the last
/// becomes a chi-square draw `c` through its quantile function. The output
/// is `scale · z / sqrt(c / dof)`. A Matérn-ν kernel with lengthscale `ℓ`
/// has exactly this spectral law with `dof = 2ν` and `scale = 1/ℓ`.
pub fn to_student_t(points: &[Vec<f64>], dof: f64, scale: f64) -> Result<Vec<Vec<f64>>> {
    if !(dof > 0.0) {
        return Err(Error::Config(format!("degrees of freedom must be positive, got {dof}")));
    }
    if !(scale > 0.0) {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    points
        .iter()
        .map(|p| {
            let (chi_u, gauss) = p.split_last().ok_or_else(|| {
                Error::Config("student-t transform needs at least one extra coordinate".into())
            })?;
            checked_normal_quantile(*chi_u)?;
            let chi = inverse_chi_square_cdf(*chi_u, dof);
            if !(chi > 0.0) || !chi.is_finite() {
                return Err(Error::NumericDomain(format!(
                    "chi-square quantile {chi} at {chi_u} is not usable"
                )));
            }
            let factor = scale / libm::sqrt(chi / dof);
            gauss
                .iter()
                .map(|&u| Ok(factor * checked_normal_quantile(u)?))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Digit reversal by explicit base-b expansion.
    fn digit_reversal_oracle(index: u64, base: u64) -> f64 {
        let mut digits = Vec::new();
        let mut n = index;
        while n > 0 {
            digits.push(n % base);
            n /= base;
        }
        let mut num = 0u64;
        let mut den = 1u64;
        for d in &digits {
            num = num * base + d;
            den *= base;
        }
        num as f64 / den as f64
    }

    #[test]
    fn radical_inverse_examples() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        // 5 = 12 in base 3, mirrored 0.21 = 2/3 + 1/9
        let oracle = digit_reversal_oracle(5, 3);
        assert!((oracle - 7.0 / 9.0).abs() < 1e-15);
        assert!((radical_inverse(5, 3) - oracle).abs() < 1e-15);
        for base in [2u32, 3, 5, 7, 229] {
            for i in 1..500u64 {
                let r = radical_inverse(i, base);
                assert!((r - digit_reversal_oracle(i, u64::from(base))).abs() < 1e-14);
                assert!(r > 0.0 && r < 1.0);
            }
        }
    }

    #[test]
    fn halton_point_examples() {
        let pts = halton_points(1, 3).unwrap();
        assert_eq!(pts, vec![vec![0.5], vec![0.25], vec![0.75]]);
        let pts = halton_points(2, 1).unwrap();
        assert_eq!(pts[0][0], 0.5);
        assert!((pts[0][1] - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn halton_rejects_oversized_dimension() {
        assert!(matches!(halton_points(51, 1), Err(Error::Config(_))));
        assert!(matches!(HaltonSequence::new(0), Err(Error::Config(_))));
        assert!(HaltonSequence::new(50).is_ok());
    }

    #[test]
    fn bases_are_increasing_primes() {
        let h = HaltonSequence::new(50).unwrap();
        for w in h.bases().windows(2) {
            assert!(w[0] < w[1]);
        }
        for &p in h.bases() {
            assert!((2..p).all(|d| p % d != 0), "{p} is not prime");
        }
    }

    #[test]
    fn base_two_prefix_is_dyadic_grid() {
        for m in 1..10u32 {
            let n = (1usize << m) - 1;
            let mut pts: Vec<f64> = halton_points(1, n).unwrap().into_iter().map(|p| p[0]).collect();
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (k, v) in pts.iter().enumerate() {
                assert_eq!(*v, (k + 1) as f64 / (1u64 << m) as f64);
            }
        }
    }

    #[test]
    fn cursor_and_random_access_agree() {
        let mut h = HaltonSequence::new(4).unwrap();
        let first = h.take_points(10);
        assert_eq!(h.next_index(), 11);
        assert_eq!(first[6], h.point(7));
        let again = HaltonSequence::new(4).unwrap().take_points(10);
        assert_eq!(first, again);
    }

    #[test]
    fn gaussian_transform_examples() {
        let out = to_gaussian(&[vec![0.5, 0.5]], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(out, vec![vec![0.0, 0.0]]);
        let out = to_gaussian(&[vec![0.5]], &[2.0], 3.0).unwrap();
        assert_eq!(out, vec![vec![2.0]]);
        assert!(matches!(
            to_gaussian(&[vec![0.0]], &[0.0], 1.0),
            Err(Error::NumericDomain(_))
        ));
        assert!(matches!(
            to_gaussian(&[vec![1.0]], &[0.0], 1.0),
            Err(Error::NumericDomain(_))
        ));
        assert!(to_gaussian(&[vec![0.5]], &[0.0], 0.0).is_err());
    }

    #[test]
    fn gaussian_transform_variance() {
        let s = 2.5;
        let pts = halton_points(1, 4096).unwrap();
        let out = to_gaussian(&pts, &[0.0], s).unwrap();
        let n = out.len() as f64;
        let mean = out.iter().map(|p| p[0]).sum::<f64>() / n;
        let var = out.iter().map(|p| (p[0] - mean) * (p[0] - mean)).sum::<f64>() / n;
        assert!((var / (s * s) - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn gaussian_transform_ks_statistic() {
        let pts = halton_points(1, 4096).unwrap();
        let mut z: Vec<f64> = to_gaussian(&pts, &[0.0], 1.0).unwrap().into_iter().map(|p| p[0]).collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = z.len() as f64;
        let ks = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = crate::special::normal_cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS = {ks}");
    }

    #[test]
    fn student_t_symmetry_and_limit() {
        for dof in [0.5, 5.0, 100.0] {
            let out = to_student_t(&[vec![0.5, 0.5, 0.3]], dof, 1.7).unwrap();
            assert_eq!(out, vec![vec![0.0, 0.0]]);
        }
        let pts = halton_points(3, 64).unwrap();
        let t = to_student_t(&pts, 1e8, 1.0).unwrap();
        let gauss_pts: Vec<Vec<f64>> = pts.iter().map(|p| p[..2].to_vec()).collect();
        let g = to_gaussian(&gauss_pts, &[0.0, 0.0], 1.0).unwrap();
        for (a, b) in t.iter().zip(&g) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn student_t_tails_and_variance() {
        let dof = 5.0;
        let pts = halton_points(2, 8192).unwrap();
        let t: Vec<f64> = to_student_t(&pts, dof, 1.0).unwrap().into_iter().map(|p| p[0]).collect();
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let m2 = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        // two-sided tail masses at the tabulated t(5) quantiles 0.95 and 0.975
        for (q, mass) in [(2.015_048, 0.10), (2.570_582, 0.05)] {
            let frac = t.iter().filter(|v| v.abs() > q).count() as f64 / n;
            assert!((frac - mass).abs() < 0.01, "tail beyond {q}: {frac}");
        }
        // variance ν / (ν − 2)
        assert!((m2 / (dof / (dof - 2.0)) - 1.0).abs() < 0.05, "variance {m2}");
    }

    #[test]
    fn student_t_errors() {
        assert!(matches!(to_student_t(&[vec![0.5, 0.5]], 0.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(
            to_student_t(&[vec![0.5, 1.0]], 5.0, 1.0),
            Err(Error::NumericDomain(_))
        ));
    }
}
