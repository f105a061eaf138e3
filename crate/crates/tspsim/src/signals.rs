//! Powers, pilots, precoders and the received blocks of every stage.
//!
//! Each `compose_*` function keeps the constituent terms next to the summed
//! block so estimators and tests can look at them separately.

use crate::channel::{BsBsChannel, CMatrix, CVector, Correlation, LargeScale};
use crate::error::{invalid, Error, Result};
use crate::rng::complex_normal;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerPolicy {
    Uniform,
    Pathloss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseVariances {
    pub pilot: f64,
    pub ul: f64,
    pub cl: f64,
    pub pd: f64,
    pub bs: f64,
}

impl NoiseVariances {
    pub fn uniform(v: f64) -> Self {
        Self {
            pilot: v,
            ul: v,
            cl: v,
            pd: v,
            bs: v,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            pilot: self.pilot * s,
            ul: self.ul * s,
            cl: self.cl * s,
            pd: self.pd * s,
            bs: self.bs * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    /// Maximum MS pilot power, W.
    pub ul_pilot: f64,
    pub ul_data: f64,
    /// Total BS DL power, W.
    pub dl_total: f64,
    pub bs_pilot: f64,
    pub noise: NoiseVariances,
    pub policy: PowerPolicy,
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ul_pilot", self.ul_pilot),
            ("ul_data", self.ul_data),
            ("dl_total", self.dl_total),
            ("bs_pilot", self.bs_pilot),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{v} W must be positive")));
            }
        }
        Ok(())
    }

    pub fn allocate(&self, ls: &LargeScale) -> Powers {
        let (n, k) = (ls.cells, ls.per_cell);
        let mut pilot = Vec::with_capacity(n * k);
        let mut ul_data = Vec::with_capacity(n * k);
        let mut dl = Vec::with_capacity(n * k);
        for c in 0..n {
            match self.policy {
                PowerPolicy::Uniform => {
                    for _ in 0..k {
                        pilot.push(self.ul_pilot);
                        ul_data.push(self.ul_data);
                        dl.push(self.dl_total / k as f64);
                    }
                }
                PowerPolicy::Pathloss => {
                    let inv: Vec<f64> = (0..k).map(|m| 1.0 / ls.beta(c, c, m)).collect();
                    let max = inv.iter().cloned().fold(0.0, f64::max);
                    let sum: f64 = inv.iter().sum();
                    for v in &inv {
                        pilot.push(v / max * self.ul_pilot);
                        ul_data.push(v / max * self.ul_data);
                        dl.push(v / sum * self.dl_total);
                    }
                }
            }
        }
        Powers {
            k,
            pilot,
            ul_data,
            dl,
            bs_pilot: self.bs_pilot,
            dl_total: self.dl_total,
            noise: self.noise,
        }
    }
}

/// Per-MS powers of one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Powers {
    k: usize,
    pilot: Vec<f64>,
    ul_data: Vec<f64>,
    dl: Vec<f64>,
    pub bs_pilot: f64,
    pub dl_total: f64,
    pub noise: NoiseVariances,
}

impl Powers {
    #[inline]
    pub fn pilot(&self, cell: usize, k: usize) -> f64 {
        self.pilot[cell * self.k + k]
    }

    #[inline]
    pub fn ul_data(&self, cell: usize, k: usize) -> f64 {
        self.ul_data[cell * self.k + k]
    }

    #[inline]
    pub fn dl(&self, cell: usize, k: usize) -> f64 {
        self.dl[cell * self.k + k]
    }

    /// Multiply the DL power of every cell by `s`.
    pub fn scale_dl(&mut self, s: f64) {
        self.dl.iter_mut().for_each(|p| *p *= s);
        self.dl_total *= s;
    }
}

// ---------------------------------------------------------------------------
// pilots

#[derive(Debug, Clone)]
pub struct PilotBook {
    /// `K x N` matrix, row `k` is the pilot of MS `k`.
    pub rows: CMatrix,
}

impl PilotBook {
    pub fn len(&self) -> usize {
        self.rows.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.ncols() == 0
    }

    pub fn count(&self) -> usize {
        self.rows.nrows()
    }

    /// `psi_k^H` as a column.
    pub fn conj_column(&self, k: usize) -> CVector {
        self.rows.row(k).adjoint()
    }
}

/// Rows of the unnormalised `N`-point DFT matrix.
pub fn make_pilot_book(k: usize, n: usize) -> Result<PilotBook> {
    if k > n {
        return Err(invalid(
            "ms_per_cell",
            format!("{k} pilots cannot be orthogonal in length {n}"),
        ));
    }
    let rows = CMatrix::from_fn(k, n, |r, c| {
        Complex64::from_polar(1.0, -2.0 * PI * ((r * c) % n) as f64 / n as f64)
    });
    Ok(PilotBook { rows })
}

/// Unnormalised `M`-point DFT matrix, `P P^H = M I`.
pub fn orthogonal_bs_pilots(m: usize) -> CMatrix {
    CMatrix::from_fn(m, m, |r, c| {
        Complex64::from_polar(1.0, -2.0 * PI * ((r * c) % m) as f64 / m as f64)
    })
}

pub fn gaussian_bs_pilots<R: Rng + ?Sized>(m: usize, tau: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(m, tau, |_, _| complex_normal(rng, 1.0))
}

// ---------------------------------------------------------------------------
// precoders and detectors

pub fn mf_precoder(estimate: &CVector) -> Result<CVector> {
    let n = estimate.norm();
    if !(n > 0.0) {
        return Err(Error::Degenerate(
            "matched filter of a zero estimate".into(),
        ));
    }
    Ok(estimate.conjugate() / Complex64::new(n, 0.0))
}

fn hermitian_inverse(gram: &CMatrix) -> (CMatrix, bool) {
    if let Some(ch) = gram.clone().cholesky() {
        return (ch.inverse(), false);
    }
    let k = gram.nrows();
    let load = 1e-10 * (gram.trace().re / k as f64).max(f64::MIN_POSITIVE);
    let loaded = gram + CMatrix::identity(k, k) * Complex64::new(load, 0.0);
    let inv = loaded
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| loaded.try_inverse())
        .unwrap_or_else(|| CMatrix::zeros(k, k));
    (inv, true)
}

/// Zero-forcing precoder for one cell. Returns unit-norm columns and whether
/// diagonal loading was needed.
pub fn zf_precoder(estimates: &CMatrix) -> Result<(CMatrix, bool)> {
    let (m, k) = estimates.shape();
    if k > m {
        return Err(invalid(
            "ms_per_cell",
            format!("ZF needs K <= M, got K={k}, M={m}"),
        ));
    }
    let conj = estimates.conjugate();
    let gram = estimates.transpose() * &conj;
    let (inv, flagged) = hermitian_inverse(&gram);
    let mut w = conj * inv;
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= Complex64::new(n, 0.0);
        }
    }
    Ok((w, flagged))
}

/// ZF receive filters, one row per MS.
pub fn zf_detector(estimates: &CMatrix) -> Result<(CMatrix, bool)> {
    let (m, k) = estimates.shape();
    if k > m {
        return Err(invalid(
            "ms_per_cell",
            format!("ZF needs K <= M, got K={k}, M={m}"),
        ));
    }
    let gram = estimates.adjoint() * estimates;
    let (inv, flagged) = hermitian_inverse(&gram);
    Ok((inv * estimates.adjoint(), flagged))
}

/// MF receive filters `g_hat^H`, one row per MS.
pub fn mf_detector(estimates: &CMatrix) -> CMatrix {
    estimates.adjoint()
}

// ---------------------------------------------------------------------------
// pilot stage

/// `sum_k sqrt(rho_k) w_k x_k` for one cell: `M x N`.
pub fn precoded_block(precoders: &CMatrix, dl_powers: &[f64], symbols: &CMatrix) -> CMatrix {
    let scaled = CMatrix::from_fn(symbols.nrows(), symbols.ncols(), |r, c| {
        symbols[(r, c)] * dl_powers[r].sqrt()
    });
    precoders * scaled
}

pub fn data_symbols<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(k, n, |_, _| complex_normal(rng, 1.0))
}

pub fn noise_block<R: Rng + ?Sized>(m: usize, n: usize, variance: f64, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(m, n, |_, _| complex_normal(rng, variance))
}

/// A co-group cell whose MSs send pilots together with the target.
pub struct GroupCell<'a> {
    pub cell: usize,
    /// Channels from each MS of `cell` to the receiving BS.
    pub channels: &'a [CVector],
}

/// A cell sending DL data during the target's pilot window.
pub struct DlInterferer<'a> {
    pub cell: usize,
    pub channel: &'a BsBsChannel,
    /// `sum_k sqrt(rho_k) w_k x_k`, `M x N`.
    pub transmitted: &'a CMatrix,
}

#[derive(Debug, Clone)]
pub struct ReceivedPilotBlock {
    pub y: CMatrix,
    pub target: CMatrix,
    pub intra_group: Vec<(usize, CMatrix)>,
    pub inter_group: Vec<(usize, CMatrix)>,
    pub noise: CMatrix,
}

impl ReceivedPilotBlock {
    pub fn inter_group_total(&self) -> CMatrix {
        let mut t = CMatrix::zeros(self.y.nrows(), self.y.ncols());
        for (_, b) in &self.inter_group {
            t += b;
        }
        t
    }
}

fn pilot_term(channels: &[CVector], cell: usize, powers: &Powers, book: &PilotBook) -> CMatrix {
    let m = channels.first().map_or(0, |c| c.len());
    let mut g = CMatrix::zeros(m, channels.len());
    for (k, h) in channels.iter().enumerate() {
        g.set_column(k, &(h * Complex64::new(powers.pilot(cell, k).sqrt(), 0.0)));
    }
    g * book.rows.rows(0, channels.len())
}

/// Received pilot block at the target BS: own pilots, co-group pilots,
/// inter-group DL data through BS-BS channels, and noise.
pub fn compose_received_pilot(
    target: &GroupCell<'_>,
    co_group: &[GroupCell<'_>],
    interferers: &[DlInterferer<'_>],
    powers: &Powers,
    book: &PilotBook,
    corr: &Correlation,
    noise: CMatrix,
) -> ReceivedPilotBlock {
    let own = pilot_term(target.channels, target.cell, powers, book);
    let mut y = own.clone() + &noise;
    let intra_group: Vec<(usize, CMatrix)> = co_group
        .iter()
        .map(|g| (g.cell, pilot_term(g.channels, g.cell, powers, book)))
        .collect();
    let inter_group: Vec<(usize, CMatrix)> = interferers
        .iter()
        .map(|d| (d.cell, d.channel.apply(corr, d.transmitted)))
        .collect();
    for (_, b) in intra_group.iter().chain(inter_group.iter()) {
        y += b;
    }
    ReceivedPilotBlock {
        y,
        target: own,
        intra_group,
        inter_group,
        noise,
    }
}

// ---------------------------------------------------------------------------
// UL data stage

/// Channels from every MS of the network to one BS, grouped by cell.
pub struct UlChannels<'a> {
    pub bs: usize,
    /// `channels[j][k]`
    pub channels: &'a [Vec<CVector>],
    /// Cells sharing the target's pilots, target included.
    pub group: &'a [usize],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UlPowers {
    pub signal: f64,
    pub intra_cell: f64,
    pub intra_group: f64,
    pub inter_group: f64,
    pub noise: f64,
}

impl UlPowers {
    pub fn interference(&self) -> f64 {
        self.intra_cell + self.intra_group + self.inter_group + self.noise
    }

    pub fn add(&mut self, o: &UlPowers) {
        self.signal += o.signal;
        self.intra_cell += o.intra_cell;
        self.intra_group += o.intra_group;
        self.inter_group += o.inter_group;
        self.noise += o.noise;
    }
}

/// Expected per-symbol powers of each term after the detector, conditioned on
/// the channels and averaged over unit-power data and noise.
pub fn ul_component_powers(
    detector: &CVector,
    ch: &UlChannels<'_>,
    k_target: usize,
    powers: &Powers,
) -> UlPowers {
    let mut out = UlPowers {
        noise: detector.norm_squared() * powers.noise.ul,
        ..Default::default()
    };
    for (j, cell) in ch.channels.iter().enumerate() {
        let in_group = ch.group.contains(&j);
        for (k, g) in cell.iter().enumerate() {
            let p = powers.ul_data(j, k) * detector.dot(g).norm_sqr();
            if j == ch.bs && k == k_target {
                out.signal += p;
            } else if j == ch.bs {
                out.intra_cell += p;
            } else if in_group {
                out.intra_group += p;
            } else {
                out.inter_group += p;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct DetectedUl {
    pub output: CVector,
    pub signal: CVector,
    pub intra_cell: CVector,
    pub intra_group: CVector,
    pub inter_group: CVector,
    pub noise: CVector,
}

/// Detected UL symbol stream of MS `k_target` over `n` symbols.
pub fn compose_received_ul_data<R: Rng + ?Sized>(
    detector: &CVector,
    ch: &UlChannels<'_>,
    k_target: usize,
    powers: &Powers,
    n: usize,
    rng: &mut R,
) -> DetectedUl {
    let zero = || CVector::zeros(n);
    let (mut signal, mut intra_cell, mut intra_group, mut inter_group) =
        (zero(), zero(), zero(), zero());
    for (j, cell) in ch.channels.iter().enumerate() {
        let in_group = ch.group.contains(&j);
        for (k, g) in cell.iter().enumerate() {
            let gain = detector.dot(g) * powers.ul_data(j, k).sqrt();
            let x = CVector::from_fn(n, |_, _| complex_normal(rng, 1.0));
            let term = x * gain;
            if j == ch.bs && k == k_target {
                signal += term;
            } else if j == ch.bs {
                intra_cell += term;
            } else if in_group {
                intra_group += term;
            } else {
                inter_group += term;
            }
        }
    }
    let m = detector.len();
    let nz = CMatrix::from_fn(m, n, |_, _| complex_normal(rng, powers.noise.ul));
    let noise = (detector.transpose() * nz).transpose();
    let output = &signal + &intra_cell + &intra_group + &inter_group + &noise;
    DetectedUl {
        output,
        signal,
        intra_cell,
        intra_group,
        inter_group,
        noise,
    }
}

// ---------------------------------------------------------------------------
// DL stages

/// One MS's view of the DL: channels from every BS and every BS's precoders.
pub struct DlChannels<'a> {
    pub cell: usize,
    pub ms: usize,
    /// `channels[j]`: from BS `j` to the MS, as a receive row is `g^T`.
    pub channels: &'a [CVector],
    /// `precoders[j]`, `M x K` unit columns.
    pub precoders: &'a [CMatrix],
    pub group: &'a [usize],
}

/// MSs of the group in pilot mode during the CL stage.
pub struct PilotLeakage<'a> {
    pub cells: &'a [usize],
    /// `gains[i][k]`: scalar MS-MS channel from MS `k` of `cells[i]`.
    pub gains: &'a [Vec<Complex64>],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DlPowers {
    pub signal: f64,
    pub intra_cell: f64,
    pub intra_group: f64,
    pub inter_group: f64,
    pub pilot_leak: f64,
    pub noise: f64,
}

impl DlPowers {
    pub fn interference(&self) -> f64 {
        self.intra_cell + self.intra_group + self.inter_group + self.pilot_leak + self.noise
    }

    pub fn add(&mut self, o: &DlPowers) {
        self.signal += o.signal;
        self.intra_cell += o.intra_cell;
        self.intra_group += o.intra_group;
        self.inter_group += o.inter_group;
        self.pilot_leak += o.pilot_leak;
        self.noise += o.noise;
    }
}

/// Expected per-symbol powers at a DL receiver. With `leak` present this is
/// the CL stage (pilot-mode cells are silent on the DL), otherwise PD.
pub fn dl_component_powers(
    ch: &DlChannels<'_>,
    leak: Option<&PilotLeakage<'_>>,
    powers: &Powers,
    noise: f64,
) -> DlPowers {
    let mut out = DlPowers {
        noise,
        ..Default::default()
    };
    let silent = leak.map_or(&[][..], |l| l.cells);
    for (j, g) in ch.channels.iter().enumerate() {
        if silent.contains(&j) {
            continue;
        }
        let in_group = ch.group.contains(&j);
        let resp = g.transpose() * &ch.precoders[j];
        for k in 0..resp.ncols() {
            let p = powers.dl(j, k) * resp[k].norm_sqr();
            if j == ch.cell && k == ch.ms {
                out.signal += p;
            } else if j == ch.cell {
                out.intra_cell += p;
            } else if in_group {
                out.intra_group += p;
            } else {
                out.inter_group += p;
            }
        }
    }
    if let Some(l) = leak {
        for (i, &c) in l.cells.iter().enumerate() {
            for (k, g) in l.gains[i].iter().enumerate() {
                out.pilot_leak += powers.pilot(c, k) * g.norm_sqr();
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ReceivedDl {
    pub output: CVector,
    pub signal: CVector,
    pub intra_cell: CVector,
    pub intra_group: CVector,
    pub inter_group: CVector,
    pub pilot_leak: CVector,
    pub noise: CVector,
}

/// Received DL samples of one MS over `n` symbols. Pilot-mode MSs send rows
/// of `book`, which is only consulted when `leak` is present.
pub fn compose_received_cl<R: Rng + ?Sized>(
    ch: &DlChannels<'_>,
    leak: Option<&PilotLeakage<'_>>,
    book: &PilotBook,
    powers: &Powers,
    noise: f64,
    n: usize,
    rng: &mut R,
) -> ReceivedDl {
    let zero = || CVector::zeros(n);
    let (mut signal, mut intra_cell, mut intra_group, mut inter_group, mut pilot_leak) =
        (zero(), zero(), zero(), zero(), zero());
    let silent = leak.map_or(&[][..], |l| l.cells);
    for (j, g) in ch.channels.iter().enumerate() {
        if silent.contains(&j) {
            continue;
        }
        let in_group = ch.group.contains(&j);
        let resp = g.transpose() * &ch.precoders[j];
        for k in 0..resp.ncols() {
            let gain = resp[k] * powers.dl(j, k).sqrt();
            let term = CVector::from_fn(n, |_, _| complex_normal(rng, 1.0)) * gain;
            if j == ch.cell && k == ch.ms {
                signal += term;
            } else if j == ch.cell {
                intra_cell += term;
            } else if in_group {
                intra_group += term;
            } else {
                inter_group += term;
            }
        }
    }
    if let Some(l) = leak {
        for (i, &c) in l.cells.iter().enumerate() {
            for (k, g) in l.gains[i].iter().enumerate() {
                let gain = g * powers.pilot(c, k).sqrt();
                pilot_leak += CVector::from_fn(n, |s, _| book.rows[(k, s % book.len())] * gain);
            }
        }
    }
    let noise = CVector::from_fn(n, |_, _| complex_normal(rng, noise));
    let output = &signal + &intra_cell + &intra_group + &inter_group + &pilot_leak + &noise;
    ReceivedDl {
        output,
        signal,
        intra_cell,
        intra_group,
        inter_group,
        pilot_leak,
        noise,
    }
}

// ---------------------------------------------------------------------------
// BS pilot stage

#[derive(Debug, Clone)]
pub struct BsPilotBlock {
    pub y: CMatrix,
    pub desired: CMatrix,
    pub co_slot: Vec<(usize, CMatrix)>,
    pub noise: CMatrix,
}

/// Pilot block received at BS `l` while slot `B_d` transmits. `desired` is
/// `G_ld`, `co_slot` the other members of the slot.
pub fn compose_bs_pilot(
    desired: &BsBsChannel,
    co_slot: &[(usize, &BsBsChannel)],
    pilots: &CMatrix,
    rho: f64,
    corr: &Correlation,
    noise: CMatrix,
) -> BsPilotBlock {
    let s = Complex64::new(rho.sqrt(), 0.0);
    let d = desired.apply(corr, pilots) * s;
    let mut y = d.clone() + &noise;
    let co: Vec<(usize, CMatrix)> = co_slot
        .iter()
        .map(|(b, g)| (*b, g.apply(corr, pilots) * s))
        .collect();
    for (_, t) in &co {
        y += t;
    }
    BsPilotBlock {
        y,
        desired: d,
        co_slot: co,
        noise,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(46.0) - 39.810_717_055_349_7).abs() < 1e-9);
        assert!((watts_to_dbm(0.2) - 23.010_299_956_639_8).abs() < 1e-9);
    }

    #[test]
    fn zf_single_ms_is_mf() {
        let g = CMatrix::from_fn(6, 1, |r, _| Complex64::new(r as f64 + 1.0, 0.5));
        let (w, flagged) = zf_precoder(&g).unwrap();
        let mf = mf_precoder(&g.column(0).into_owned()).unwrap();
        assert!(!flagged);
        assert!((w.column(0) - mf).norm() < 1e-12);
    }

    #[test]
    fn zf_rank_deficient_is_flagged() {
        let g = CMatrix::from_fn(4, 2, |r, _| Complex64::new(r as f64, 0.0));
        let (_, flagged) = zf_precoder(&g).unwrap();
        assert!(flagged);
    }
}
