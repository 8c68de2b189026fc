//! Narrowband geometric MIMO channel primitives.
//!
//! Steering vectors of uniform linear arrays, channel assembly from a list of
//! propagation paths, first-order autoregressive channel evolution and the
//! beamformed received gain `w^H H f`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dims, domain, Result};

pub type ComplexVector = Vec<Complex64>;

/// Dense complex matrix, row-major. Dimensions are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dims(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(dims(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// `self * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[Complex64]) -> Result<ComplexVector> {
        if v.len() != self.cols {
            return Err(dims(format!(
                "matrix has {} columns, vector has {} entries",
                self.cols,
                v.len()
            )));
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: Self) -> ComplexMatrix {
        self.try_add(rhs).expect("conformable matrices")
    }
}

impl Mul<f64> for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: f64) -> ComplexMatrix {
        self.scale(Complex64::new(rhs, 0.0))
    }
}

/// Uniform linear array geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_elements: usize,
    /// Element spacing over wavelength (d/λ).
    pub spacing_ratio: f64,
}

impl ArrayConfig {
    pub fn new(n_elements: usize, spacing_ratio: f64) -> Result<Self> {
        let cfg = Self {
            n_elements,
            spacing_ratio,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Half-wavelength ULA.
    pub fn half_wavelength(n_elements: usize) -> Self {
        Self {
            n_elements,
            spacing_ratio: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elements == 0 {
            return Err(domain("array needs at least one element"));
        }
        if !(self.spacing_ratio > 0.0 && self.spacing_ratio.is_finite()) {
            return Err(domain(format!(
                "spacing ratio must be positive, got {}",
                self.spacing_ratio
            )));
        }
        Ok(())
    }
}

/// One propagation path between a transmitter and a receiver.
///
/// Angles are expressed in the local frame of the corresponding array:
/// azimuth is measured from broadside in the horizontal plane, elevation
/// from the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPath {
    pub gain: Complex64,
    pub aod_az: f64,
    pub aod_el: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    /// Propagation delay in seconds. Not used by the narrowband model.
    pub delay: f64,
}

impl RayPath {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain.re.is_finite() && self.gain.im.is_finite()) {
            return Err(domain("ray gain must be finite"));
        }
        check_angles(self.aod_az, self.aod_el)?;
        check_angles(self.aoa_az, self.aoa_el)
    }

    /// Copy with the gain multiplied by a real factor.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            gain: self.gain * c,
            ..*self
        }
    }
}

fn check_angles(az: f64, el: f64) -> Result<()> {
    if !az.is_finite() || !el.is_finite() {
        return Err(domain(format!("non-finite angle (az={az}, el={el})")));
    }
    if !(-PI..=PI).contains(&az) {
        return Err(domain(format!("azimuth {az} outside [-pi, pi]")));
    }
    if !(-FRAC_PI_2..=FRAC_PI_2).contains(&el) {
        return Err(domain(format!("elevation {el} outside [-pi/2, pi/2]")));
    }
    Ok(())
}

/// Effective spatial frequency of a direction seen by a ULA: `sin(az) cos(el)`.
pub fn spatial_frequency(az: f64, el: f64) -> f64 {
    az.sin() * el.cos()
}

/// ULA response `[1, e^{-i2π dΩ}, ..., e^{-i2π dΩ(N-1)}]` with `Ω = sin(az) cos(el)`.
///
/// The vector is not normalized; entry 0 is exactly `1 + 0i`.
pub fn steering_vector(az: f64, el: f64, cfg: &ArrayConfig) -> Result<ComplexVector> {
    cfg.validate()?;
    check_angles(az, el)?;
    let step = -2.0 * PI * cfg.spacing_ratio * spatial_frequency(az, el);
    Ok((0..cfg.n_elements)
        .map(|n| {
            if n == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, step * n as f64)
            }
        })
        .collect())
}

/// Narrowband channel `H = Σ_l g_l a_r(aoa_l) a_t(aod_l)^H`, shape `N_rx x N_tx`.
pub fn build_channel(rays: &[RayPath], tx: &ArrayConfig, rx: &ArrayConfig) -> Result<ComplexMatrix> {
    if rays.is_empty() {
        return Err(domain("cannot build a channel from an empty ray list"));
    }
    tx.validate()?;
    rx.validate()?;
    let mut h = ComplexMatrix::zeros(rx.n_elements, tx.n_elements);
    for ray in rays {
        ray.validate()?;
        let a_r = steering_vector(ray.aoa_az, ray.aoa_el, rx)?;
        let a_t = steering_vector(ray.aod_az, ray.aod_el, tx)?;
        for (r, ar) in a_r.iter().enumerate() {
            let row = &mut h.data[r * tx.n_elements..(r + 1) * tx.n_elements];
            let scaled = ray.gain * ar;
            for (entry, at) in row.iter_mut().zip(&a_t) {
                *entry += scaled * at.conj();
            }
        }
    }
    Ok(h)
}

/// One step of `H' = ρH + sqrt(1-ρ²) W` with `W` i.i.d. CN(0, 1) drawn from `noise_seed`.
pub fn ar1_step(h: &ComplexMatrix, rho: f64, noise_seed: u64) -> Result<ComplexMatrix> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(domain(format!("AR(1) coefficient {rho} outside [0, 1]")));
    }
    let innovation = (1.0 - rho * rho).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    // Real and imaginary parts each carry half of the unit variance.
    let std = std::f64::consts::FRAC_1_SQRT_2;
    let data = h
        .data
        .iter()
        .map(|&v| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let w = Complex64::new(re * std, im * std);
            if innovation == 0.0 {
                v * rho
            } else {
                v * rho + w * innovation
            }
        })
        .collect();
    Ok(ComplexMatrix {
        rows: h.rows,
        cols: h.cols,
        data,
    })
}

/// Beamformed scalar `y = w^H H f`.
pub fn received_gain(h: &ComplexMatrix, f: &[Complex64], w: &[Complex64]) -> Result<Complex64> {
    if w.len() != h.rows {
        return Err(dims(format!(
            "combiner has {} entries, channel has {} rows",
            w.len(),
            h.rows
        )));
    }
    let hf = h.mul_vec(f)?;
    Ok(w.iter().zip(&hf).map(|(wi, v)| wi.conj() * v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ray(gain: Complex64, aod: f64, aoa: f64) -> RayPath {
        RayPath {
            gain,
            aod_az: aod,
            aod_el: 0.0,
            aoa_az: aoa,
            aoa_el: 0.0,
            delay: 0.0,
        }
    }

    #[test]
    fn steering_broadside_is_all_ones() {
        let v = steering_vector(0.0, 0.0, &ArrayConfig::half_wavelength(4)).unwrap();
        assert!(v.iter().all(|z| *z == c(1.0, 0.0)));
    }

    #[test]
    fn steering_endfire_alternates() {
        let v = steering_vector(FRAC_PI_2, 0.0, &ArrayConfig::half_wavelength(2)).unwrap();
        assert_eq!(v[0], c(1.0, 0.0));
        assert!((v[1] - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_thirty_degrees_matches_scalar_evaluation() {
        let v = steering_vector(PI / 6.0, 0.0, &ArrayConfig::half_wavelength(3)).unwrap();
        for (n, z) in v.iter().enumerate() {
            // exp(-i*pi*0.5*n) written out as cos/sin
            let phase = -PI * 0.5 * n as f64;
            assert!((z.re - phase.cos()).abs() < 1e-12);
            assert!((z.im - phase.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_rejects_bad_angles() {
        let cfg = ArrayConfig::half_wavelength(4);
        assert!(steering_vector(f64::NAN, 0.0, &cfg).is_err());
        assert!(steering_vector(0.0, f64::INFINITY, &cfg).is_err());
        assert!(steering_vector(4.0, 0.0, &cfg).is_err());
        assert!(steering_vector(0.0, 2.0, &cfg).is_err());
    }

    #[test]
    fn array_config_validation() {
        assert!(ArrayConfig::new(0, 0.5).is_err());
        assert!(ArrayConfig::new(4, 0.0).is_err());
        assert!(ArrayConfig::new(4, 0.5).is_ok());
    }

    #[test]
    fn single_broadside_ray_gives_all_ones() {
        let cfg = ArrayConfig::half_wavelength(2);
        let h = build_channel(&[ray(c(1.0, 0.0), 0.0, 0.0)], &cfg, &cfg).unwrap();
        assert_eq!((h.rows(), h.cols()), (2, 2));
        assert!(h.as_slice().iter().all(|z| (*z - c(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn single_ray_channel_is_rank_one() {
        // Rank via the Gram matrix H^H H: for rank one every 2x2 minor vanishes.
        let tx = ArrayConfig::half_wavelength(4);
        let rx = ArrayConfig::half_wavelength(3);
        let h = build_channel(&[ray(c(0.7, -0.2), 0.4, -0.9)], &tx, &rx).unwrap();
        let scale = h.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(scale > 1e-3);
        for r in 0..3 {
            for s in r + 1..3 {
                for a in 0..4 {
                    for b in a + 1..4 {
                        let minor = h.get(r, a) * h.get(s, b) - h.get(r, b) * h.get(s, a);
                        assert!(minor.norm() < 1e-12 * scale * scale);
                    }
                }
            }
        }
        let sv = singular_values(&h);
        assert!(sv[1..].iter().all(|s| *s < 1e-6 * sv[0]), "{sv:?}");
    }

    #[test]
    fn two_rays_equal_brute_force_sum() {
        let tx = ArrayConfig::half_wavelength(4);
        let rx = ArrayConfig::half_wavelength(2);
        let g1 = c(0.5, 0.1);
        let g2 = c(-0.2, 0.3);
        // on-grid: sin(az) = 2m/N
        let a1 = (0.5f64).asin();
        let a2 = (-0.5f64).asin();
        let h = build_channel(&[ray(g1, a1, a2), ray(g2, a2, 0.0)], &tx, &rx).unwrap();
        let term = |g: Complex64, aod: f64, aoa: f64, r: usize, t: usize| {
            let pr = -PI * aoa.sin() * r as f64;
            let pt = -PI * aod.sin() * t as f64;
            g * Complex64::new(pr.cos(), pr.sin()) * Complex64::new(pt.cos(), -pt.sin())
        };
        for r in 0..2 {
            for t in 0..4 {
                let expect = term(g1, a1, a2, r, t) + term(g2, a2, 0.0, r, t);
                assert!((h.get(r, t) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_ray_list_is_an_error() {
        let cfg = ArrayConfig::half_wavelength(2);
        assert!(build_channel(&[], &cfg, &cfg).is_err());
    }

    #[test]
    fn ar1_extremes() {
        let cfg = ArrayConfig::half_wavelength(3);
        let h = build_channel(&[ray(c(1.0, 0.5), 0.3, 0.2)], &cfg, &cfg).unwrap();
        assert_eq!(ar1_step(&h, 1.0, 7).unwrap(), h);
        let w0 = ar1_step(&h, 0.0, 7).unwrap();
        let w1 = ar1_step(&ComplexMatrix::zeros(3, 3), 0.0, 7).unwrap();
        assert_eq!(w0, w1);
        assert!(ar1_step(&h, 1.1, 7).is_err());
        assert!(ar1_step(&h, -0.1, 7).is_err());
    }

    #[test]
    fn ar1_innovation_variance() {
        let rho = 0.9;
        let h = ComplexMatrix::from_fn(10, 10, |r, c_| c(r as f64, c_ as f64 * 0.5));
        let mut acc = 0.0;
        let mut n = 0usize;
        for seed in 0..100u64 {
            let next = ar1_step(&h, rho, seed).unwrap();
            for (a, b) in next.as_slice().iter().zip(h.as_slice()) {
                acc += (a - b * rho).norm_sqr();
                n += 1;
            }
        }
        let var = acc / n as f64;
        let expected = 1.0 - rho * rho;
        assert!((var - expected).abs() / expected < 0.05, "var={var}");
    }

    #[test]
    fn received_gain_examples() {
        let id = ComplexMatrix::identity(2);
        let e0 = [c(1.0, 0.0), c(0.0, 0.0)];
        assert_eq!(received_gain(&id, &e0, &e0).unwrap(), c(1.0, 0.0));

        let ones = ComplexMatrix::from_fn(2, 2, |_, _| c(1.0, 0.0));
        let u = [c(1.0 / 2f64.sqrt(), 0.0); 2];
        assert!((received_gain(&ones, &u, &u).unwrap() - c(2.0, 0.0)).norm() < 1e-12);

        let zero = [c(0.0, 0.0); 2];
        assert_eq!(received_gain(&ones, &zero, &u).unwrap(), c(0.0, 0.0));
        assert!(received_gain(&ones, &[c(1.0, 0.0)], &u).is_err());
        assert!(received_gain(&ones, &u, &[c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn matched_beams_reach_full_array_gain() {
        let tx = ArrayConfig::half_wavelength(8);
        let rx = ArrayConfig::half_wavelength(4);
        let aod = (0.25f64).asin();
        let aoa = (-0.5f64).asin();
        let h = build_channel(&[ray(c(1.0, 0.0), aod, aoa)], &tx, &rx).unwrap();
        let norm = |v: ComplexVector| {
            let s = (v.len() as f64).sqrt();
            v.into_iter().map(|z| z / s).collect::<Vec<_>>()
        };
        let f = norm(steering_vector(aod, 0.0, &tx).unwrap());
        let w = norm(steering_vector(aoa, 0.0, &rx).unwrap());
        let y = received_gain(&h, &f, &w).unwrap();
        assert!((y.norm() - (32f64).sqrt()).abs() < 1e-9);
    }

    /// Singular values from the eigenvalues of the Hermitian Gram matrix via
    /// cyclic Jacobi on its real 2n x 2n embedding.
    fn singular_values(h: &ComplexMatrix) -> Vec<f64> {
        let n = h.cols();
        let mut g = vec![vec![0.0; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = c(0.0, 0.0);
                for r in 0..h.rows() {
                    s += h.get(r, i).conj() * h.get(r, j);
                }
                g[i][j] = s.re;
                g[i + n][j + n] = s.re;
                g[i][j + n] = -s.im;
                g[i + n][j] = s.im;
            }
        }
        let m = 2 * n;
        for _ in 0..100 {
            for p in 0..m {
                for q in p + 1..m {
                    if g[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * g[p][q]).atan2(g[q][q] - g[p][p]);
                    let (s, co) = theta.sin_cos();
                    for k in 0..m {
                        let (gkp, gkq) = (g[k][p], g[k][q]);
                        g[k][p] = co * gkp - s * gkq;
                        g[k][q] = s * gkp + co * gkq;
                    }
                    for k in 0..m {
                        let (gpk, gqk) = (g[p][k], g[q][k]);
                        g[p][k] = co * gpk - s * gqk;
                        g[q][k] = s * gpk + co * gqk;
                    }
                }
            }
        }
        // Each eigenvalue appears twice in the real embedding.
        let mut ev: Vec<f64> = (0..m).map(|i| g[i][i].max(0.0).sqrt()).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev.into_iter().step_by(2).collect()
    }

    proptest! {
        #[test]
        fn steering_entries_have_unit_modulus(
            az in -PI..PI, el in -FRAC_PI_2..FRAC_PI_2, n in 1usize..32, d in 0.1f64..1.0
        ) {
            let v = steering_vector(az, el, &ArrayConfig::new(n, d).unwrap()).unwrap();
            prop_assert_eq!(v[0], c(1.0, 0.0));
            for z in &v {
                prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn channel_is_additive_in_rays(
            params in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.5f64..1.5, -1.5f64..1.5), 2..6),
            split in 1usize..5
        ) {
            let rays: Vec<RayPath> = params.iter().map(|&(re, im, a, b)| ray(c(re, im), a, b)).collect();
            let split = split.min(rays.len() - 1);
            let tx = ArrayConfig::half_wavelength(5);
            let rx = ArrayConfig::half_wavelength(3);
            let whole = build_channel(&rays, &tx, &rx).unwrap();
            let a = build_channel(&rays[..split], &tx, &rx).unwrap();
            let b = build_channel(&rays[split..], &tx, &rx).unwrap();
            prop_assert!(whole.max_abs_diff(&(&a + &b)) < 1e-12);
        }

        #[test]
        fn received_gain_is_linear_in_precoder(
            re in -2.0f64..2.0, im in -2.0f64..2.0, aod in -1.5f64..1.5, aoa in -1.5f64..1.5
        ) {
            let tx = ArrayConfig::half_wavelength(4);
            let rx = ArrayConfig::half_wavelength(2);
            let h = build_channel(&[ray(c(0.3, 0.8), aod, aoa)], &tx, &rx).unwrap();
            let f = steering_vector(0.2, 0.0, &tx).unwrap();
            let w = steering_vector(-0.4, 0.0, &rx).unwrap();
            let k = c(re, im);
            let cf: Vec<_> = f.iter().map(|z| z * k).collect();
            let lhs = received_gain(&h, &cf, &w).unwrap();
            let rhs = received_gain(&h, &f, &w).unwrap() * k;
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }
    }
}
