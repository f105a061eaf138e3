//! Large-scale gains and small-scale channel generation.
//!
//! MS-BS links are Rayleigh, BS-BS links are Rician with a rank-one LOS part
//! and Kronecker-correlated scattering, MS-MS links are scalar Rayleigh.

use crate::error::{invalid, Result};
use crate::rng::{complex_normal, std_normal, LinkClass, Streams};
use crate::topology::{HexLayout, Placement, Point};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleParams {
    pub pathloss_exponent: f64,
    pub shadowing_db: f64,
    /// Rician factor of BS-BS links, linear. `f64::INFINITY` gives pure LOS.
    pub rician_k: f64,
    /// Adjacent-antenna correlation coefficient of the BS arrays.
    pub correlation: f64,
}

impl Default for LargeScaleParams {
    fn default() -> Self {
        Self {
            pathloss_exponent: 3.8,
            shadowing_db: 8.0,
            rician_k: 10.0,
            correlation: 0.8,
        }
    }
}

impl LargeScaleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_exponent > 2.0 && self.pathloss_exponent.is_finite()) {
            return Err(invalid("pathloss_exponent", "must exceed 2"));
        }
        if !(self.shadowing_db >= 0.0 && self.shadowing_db.is_finite()) {
            return Err(invalid("shadowing_db", "must be non-negative"));
        }
        if !(self.rician_k >= 0.0) {
            return Err(invalid("rician_k", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(invalid("correlation", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// `d^-eta * 10^(shadow_db/10)`.
pub fn pathloss_gain(distance: f64, exponent: f64, shadow_db: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(invalid("distance", format!("{distance} must be positive")));
    }
    Ok(distance.powf(-exponent) * 10f64.powf(shadow_db / 10.0))
}

// ---------------------------------------------------------------------------
// antenna correlation

#[derive(Debug, Clone)]
pub struct Correlation {
    pub r: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    sqrt_c: CMatrix,
}

/// Exponential model `R[p][q] = kappa^|p-q|`.
pub fn loyka_correlation(m: usize, kappa: f64) -> Result<Correlation> {
    if m == 0 {
        return Err(invalid("antennas", "must be at least 1"));
    }
    if !(0.0..=1.0).contains(&kappa) {
        return Err(invalid("correlation", format!("{kappa} not in [0, 1]")));
    }
    let r = DMatrix::from_fn(m, m, |p, q| kappa.powi((p as i32 - q as i32).abs()));
    let sqrt = psd_sqrt(&r);
    let sqrt_c = sqrt.map(|v| Complex64::new(v, 0.0));
    Ok(Correlation { r, sqrt, sqrt_c })
}

/// Symmetric square root via eigendecomposition; eigenvalues under 1e-12 are
/// treated as zero.
pub fn psd_sqrt(r: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = r.clone().symmetric_eigen();
    let d = eig
        .eigenvalues
        .map(|l| if l < 1e-12 { 0.0 } else { l.sqrt() });
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&d) * v.transpose()
}

// ---------------------------------------------------------------------------
// LOS geometry

/// Half-wavelength ULA response for a wave arriving at `angle` radians from the
/// array axis. Broadside (pi/2) gives all ones.
pub fn ula_steering(m: usize, angle: f64) -> CVector {
    let c = angle.cos();
    CVector::from_fn(m, |i, _| Complex64::from_polar(1.0, PI * i as f64 * c))
}

/// Receive and transmit steering vectors of the LOS path from `tx` to `rx`.
/// All arrays lie along the x axis.
pub fn los_steering(rx: Point, tx: Point, m: usize) -> (CVector, CVector) {
    let th_r = (tx.y - rx.y).atan2(tx.x - rx.x);
    let th_t = (rx.y - tx.y).atan2(rx.x - tx.x);
    (ula_steering(m, th_r), ula_steering(m, th_t))
}

// ---------------------------------------------------------------------------
// large-scale state of one drop

#[derive(Debug, Clone)]
pub struct LargeScale {
    pub cells: usize,
    pub per_cell: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
}

impl LargeScale {
    /// Gain from MS `k` of cell `j` to BS `l`.
    #[inline]
    pub fn beta(&self, l: usize, j: usize, k: usize) -> f64 {
        self.beta[(l * self.cells + j) * self.per_cell + k]
    }

    /// Gain from BS `d` to BS `l`. Zero on the diagonal.
    #[inline]
    pub fn alpha(&self, l: usize, d: usize) -> f64 {
        self.alpha[l * self.cells + d]
    }

    pub fn from_parts(cells: usize, per_cell: usize, beta: Vec<f64>, alpha: Vec<f64>) -> Self {
        assert_eq!(beta.len(), cells * cells * per_cell);
        assert_eq!(alpha.len(), cells * cells);
        Self {
            cells,
            per_cell,
            beta,
            alpha,
        }
    }
}

pub fn sample_large_scale(
    layout: &HexLayout,
    placement: &Placement,
    params: &LargeScaleParams,
    streams: &Streams,
) -> Result<LargeScale> {
    params.validate()?;
    let n = layout.len();
    let k = placement.per_cell();
    let mut beta = Vec::with_capacity(n * n * k);
    for l in 0..n {
        let bs = layout.center(l);
        for j in 0..n {
            // one stream per (BS, cell) pair, MSs drawn in order
            let mut rng = streams.rng(LinkClass::MsBsShadowing, &[l as u64, j as u64]);
            for kk in 0..k {
                let sh = params.shadowing_db * std_normal(&mut rng);
                let d = bs.distance(&placement.ms(j, kk));
                beta.push(pathloss_gain(d, params.pathloss_exponent, sh)?);
            }
        }
    }
    let mut alpha = vec![0.0; n * n];
    for l in 0..n {
        for d in 0..n {
            if l != d {
                let mut rng = streams.rng(LinkClass::BsBsShadowing, &[l as u64, d as u64]);
                let sh = params.shadowing_db * std_normal(&mut rng);
                alpha[l * n + d] =
                    pathloss_gain(layout.bs_distance(l, d), params.pathloss_exponent, sh)?;
            }
        }
    }
    Ok(LargeScale {
        cells: n,
        per_cell: k,
        beta,
        alpha,
    })
}

/// Gain between MS `a` and MS `b`. Separations below `min_distance` are
/// clamped to it.
pub fn ms_ms_gain(
    placement: &Placement,
    params: &LargeScaleParams,
    streams: &Streams,
    a: (usize, usize),
    b: (usize, usize),
    min_distance: f64,
) -> Result<f64> {
    let d = placement
        .ms(a.0, a.1)
        .distance(&placement.ms(b.0, b.1))
        .max(min_distance);
    let mut rng = streams.rng(
        LinkClass::MsMsShadowing,
        &[a.0 as u64, a.1 as u64, b.0 as u64, b.1 as u64],
    );
    let sh = params.shadowing_db * std_normal(&mut rng);
    pathloss_gain(d, params.pathloss_exponent, sh)
}

// ---------------------------------------------------------------------------
// small-scale

/// `sqrt(beta) * h`, `h ~ CN(0, I_M)`.
pub fn sample_ms_bs<R: Rng + ?Sized>(beta: f64, m: usize, rng: &mut R) -> CVector {
    CVector::from_fn(m, |_, _| complex_normal(rng, beta))
}

pub fn sample_ms_ms<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> Complex64 {
    complex_normal(rng, mu)
}

/// One BS-BS channel realisation kept in factored form, so that it can be
/// applied to a thin block without forming the `M x M` product.
#[derive(Debug, Clone)]
pub struct BsBsChannel {
    pub alpha: f64,
    los_weight: f64,
    nlos_weight: f64,
    a_r: CVector,
    a_t: CVector,
    h: CMatrix,
}

impl BsBsChannel {
    pub fn sample<R: Rng + ?Sized>(
        alpha: f64,
        rician_k: f64,
        a_r: CVector,
        a_t: CVector,
        rng: &mut R,
    ) -> Self {
        let m = a_r.len();
        let (los_weight, nlos_weight) = if rician_k.is_infinite() {
            (1.0, 0.0)
        } else {
            (
                (rician_k / (1.0 + rician_k)).sqrt(),
                (1.0 / (1.0 + rician_k)).sqrt(),
            )
        };
        let h = if nlos_weight > 0.0 {
            CMatrix::from_fn(m, m, |_, _| complex_normal(rng, 1.0))
        } else {
            CMatrix::zeros(m, m)
        };
        Self {
            alpha,
            los_weight,
            nlos_weight,
            a_r,
            a_t,
            h,
        }
    }

    pub fn antennas(&self) -> usize {
        self.a_r.len()
    }

    /// `G * v` for an `M x n` block.
    pub fn apply(&self, corr: &Correlation, v: &CMatrix) -> CMatrix {
        let s = Complex64::new(self.alpha.sqrt(), 0.0);
        let mut out = &self.a_r * (self.a_t.adjoint() * v) * Complex64::new(self.los_weight, 0.0);
        if self.nlos_weight > 0.0 {
            let t = &corr.sqrt_c * (&self.h * (&corr.sqrt_c * v));
            out += t * Complex64::new(self.nlos_weight, 0.0);
        }
        out * s
    }

    pub fn to_matrix(&self, corr: &Correlation) -> CMatrix {
        let mut g = &self.a_r * self.a_t.adjoint() * Complex64::new(self.los_weight, 0.0);
        if self.nlos_weight > 0.0 {
            g += &corr.sqrt_c * &self.h * &corr.sqrt_c * Complex64::new(self.nlos_weight, 0.0);
        }
        g * Complex64::new(self.alpha.sqrt(), 0.0)
    }
}
