//! Base landscapes, all evaluated in transformed coordinates `z` with
//! `base(0) = 0`.

use std::f64::consts::PI;

/// Gallagher peak in `z` space.
#[derive(Clone, Debug, PartialEq)]
pub struct Peak {
    pub weight: f64,
    pub center: Vec<f64>,
    /// Diagonal of the quadratic form around the peak.
    pub conditioning: Vec<f64>,
}

pub const SCHWEFEL_SHIFT: f64 = 420.968_746_227_503_6;
pub const SCHWEFEL_LEVEL: f64 = 418.982_887_272_433_9;

/// `(i − 1)/(d − 1)` for zero-based `i`.
#[inline]
fn ratio(i: usize, d: usize) -> f64 {
    i as f64 / (d - 1) as f64
}

#[inline]
fn ill(i: usize, d: usize, decades: f64) -> f64 {
    10f64.powf(decades * ratio(i, d))
}

pub fn sphere(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

pub fn ellipsoid(z: &[f64]) -> f64 {
    let d = z.len();
    z.iter()
        .enumerate()
        .map(|(i, v)| ill(i, d, 6.0) * v * v)
        .sum()
}

pub fn rastrigin(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    let cos: f64 = z.iter().map(|v| (2.0 * PI * v).cos()).sum();
    10.0 * (d - cos) + sphere(z)
}

pub fn buche_rastrigin(z: &[f64]) -> f64 {
    let d = z.len();
    let w: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut s = ill(i, d, 0.5);
            // one-based odd index
            if i % 2 == 0 && v > 0.0 {
                s *= 10.0;
            }
            s * v
        })
        .collect();
    rastrigin(&w)
}

/// Acts on raw `x`; the optimum sits on the boundary at `x_opt ∈ {±5}^d`.
pub fn linear_slope(x: &[f64], x_opt: &[f64]) -> f64 {
    let d = x.len();
    x.iter()
        .zip(x_opt)
        .enumerate()
        .map(|(i, (&xi, &oi))| {
            let sign = oi.signum();
            let s = sign * ill(i, d, 1.0);
            let clipped = if sign * xi < 5.0 { xi } else { oi };
            5.0 * s.abs() - s * clipped
        })
        .sum()
}

pub fn attractive_sector(z: &[f64], x_opt: &[f64]) -> f64 {
    z.iter()
        .zip(x_opt)
        .map(|(&v, &o)| {
            let w = if v * o > 0.0 { 100.0 } else { 1.0 };
            (w * v) * (w * v)
        })
        .sum()
}

pub fn step_ellipsoid(z: &[f64]) -> f64 {
    let d = z.len();
    let steps: f64 = z
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let r = (v + 0.5).floor();
            ill(i, d, 6.0) * r * r
        })
        .sum();
    steps + 1e-4 * sphere(z)
}

fn rosenbrock_terms(z: &[f64]) -> impl Iterator<Item = f64> + '_ {
    z.windows(2).map(|w| {
        let (a, b) = (w[0] + 1.0, w[1] + 1.0);
        100.0 * (a * a - b).powi(2) + (a - 1.0).powi(2)
    })
}

pub fn rosenbrock(z: &[f64]) -> f64 {
    rosenbrock_terms(z).sum()
}

pub fn discus(z: &[f64]) -> f64 {
    1e6 * z[0] * z[0] + sphere(&z[1..])
}

pub fn bent_cigar(z: &[f64]) -> f64 {
    z[0] * z[0] + 1e6 * sphere(&z[1..])
}

pub fn sharp_ridge(z: &[f64]) -> f64 {
    z[0] * z[0] + 100.0 * sphere(&z[1..]).sqrt()
}

pub fn different_powers(z: &[f64]) -> f64 {
    let d = z.len();
    z.iter()
        .enumerate()
        .map(|(i, v)| v.abs().powf(2.0 + 4.0 * ratio(i, d)))
        .sum::<f64>()
        .sqrt()
}

const WEIERSTRASS_TERMS: i32 = 12;

fn weierstrass_sum(v: f64) -> f64 {
    (0..WEIERSTRASS_TERMS)
        .map(|k| 0.5f64.powi(k) * (2.0 * PI * 3f64.powi(k) * (v + 0.5)).cos())
        .sum()
}

pub fn weierstrass(z: &[f64]) -> f64 {
    let w0: f64 = (0..WEIERSTRASS_TERMS)
        .map(|k| 0.5f64.powi(k) * (PI * 3f64.powi(k)).cos())
        .sum();
    let total: f64 = z.iter().map(|v| weierstrass_sum(0.01 * v)).sum();
    total - z.len() as f64 * w0
}

pub fn schaffers_f7(z: &[f64]) -> f64 {
    let d = z.len();
    let s: f64 = z
        .windows(2)
        .map(|w| {
            let u = (w[0] * w[0] + w[1] * w[1]).sqrt();
            u.sqrt() * (1.0 + (50.0 * u.powf(0.2)).sin().powi(2))
        })
        .sum();
    (s / (d - 1) as f64).powi(2)
}

pub fn schaffers_f7_ill(z: &[f64]) -> f64 {
    let d = z.len();
    let scaled: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(i, v)| ill(i, d, 3.0) * v)
        .collect();
    schaffers_f7(&scaled)
}

pub fn griewank_rosenbrock(z: &[f64]) -> f64 {
    let d = z.len();
    let s: f64 = rosenbrock_terms(z).map(|r| r / 4000.0 - r.cos()).sum();
    10.0 / (d - 1) as f64 * s + 10.0
}

pub fn schwefel(z: &[f64]) -> f64 {
    let s: f64 = z
        .iter()
        .map(|v| {
            let v = 100.0 * v + SCHWEFEL_SHIFT;
            v * v.abs().sqrt().sin()
        })
        .sum();
    SCHWEFEL_LEVEL * z.len() as f64 - s
}

pub fn gallagher(z: &[f64], peaks: &[Peak]) -> f64 {
    let d = z.len() as f64;
    let best = peaks
        .iter()
        .map(|p| {
            let q: f64 = z
                .iter()
                .zip(&p.center)
                .zip(&p.conditioning)
                .map(|((zi, ci), di)| di * (zi - ci) * (zi - ci))
                .sum();
            p.weight * (-q / (2.0 * d)).exp()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (10.0 - best).powi(2)
}

pub fn katsuura(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    let exponent = 10.0 / d.powf(1.2);
    let prod: f64 = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s: f64 = (1..=32)
                .map(|j| {
                    let p = 2f64.powi(j);
                    (p * v - (p * v).round()).abs() / p
                })
                .sum();
            (1.0 + (i + 1) as f64 * s).powf(exponent)
        })
        .product();
    10.0 / (d * d) * (prod - 1.0)
}

pub fn lunacek(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    let mu0 = 2.5;
    let s = 1.0 - 1.0 / (2.0 * (d + 20.0).sqrt() - 8.2);
    let mu1 = -((mu0 * mu0 - 1.0) / s).sqrt();
    let mut near = 0.0;
    let mut far = 0.0;
    let mut cos = 0.0;
    for &v in z {
        let u = v + mu0;
        near += (u - mu0).powi(2);
        far += (u - mu1).powi(2);
        cos += (2.0 * PI * (u - mu0)).cos();
    }
    near.min(d + s * far) + 10.0 * (d - cos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schwefel_constants_cancel_at_optimum() {
        let k = SCHWEFEL_SHIFT * SCHWEFEL_SHIFT.sqrt().sin();
        assert!((k - SCHWEFEL_LEVEL).abs() < 1e-12);
        for d in [2, 3, 5, 20] {
            assert!(schwefel(&vec![0.0; d]).abs() < 1e-6 * d as f64);
        }
    }

    #[test]
    fn closed_forms() {
        assert_eq!(sphere(&[1.0, 1.0, 1.0]), 3.0);
        assert_eq!(discus(&[1.0, 1.0]), 1_000_001.0);
        assert_eq!(bent_cigar(&[1.0, 1.0]), 1_000_001.0);
        assert_eq!(ellipsoid(&[1.0, 1.0]), 1_000_001.0);
        assert_eq!(sharp_ridge(&[2.0, 0.0, 0.0]), 4.0);
        assert!((different_powers(&[1.0, 1.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_is_a_root_for_every_base() {
        for d in [2, 3, 7] {
            let z = vec![0.0; d];
            let fs: [fn(&[f64]) -> f64; 17] = [
                sphere,
                ellipsoid,
                rastrigin,
                buche_rastrigin,
                step_ellipsoid,
                rosenbrock,
                discus,
                bent_cigar,
                sharp_ridge,
                different_powers,
                weierstrass,
                schaffers_f7,
                schaffers_f7_ill,
                griewank_rosenbrock,
                schwefel,
                katsuura,
                lunacek,
            ];
            for f in fs {
                assert!(f(&z).abs() < 1e-9, "{}", f(&z));
            }
        }
    }
}
