//! Closed-form MSCEE, SINR, antenna-count, coherence-time and spectral
//! efficiency expressions.

use crate::channel::LargeScale;
use crate::error::{invalid, Error, Result};
use crate::signals::Powers;
use crate::topology::{BsSchedule, GroupAssignment};

/// Everything the closed forms need about one drop.
#[derive(Clone, Copy)]
pub struct Network<'a> {
    pub groups: &'a GroupAssignment,
    pub ls: &'a LargeScale,
    pub powers: &'a Powers,
    /// `F_c * tau_P`
    pub pilot_len: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MsceeBreakdown {
    pub pilot: f64,
    /// Inter-group DL data. For IC-TSP only the cells outside the cluster.
    pub data: f64,
    pub noise: f64,
    pub data_residual: f64,
    pub noise_residual: f64,
}

impl MsceeBreakdown {
    pub fn total(&self) -> f64 {
        self.pilot + self.data + self.noise + self.data_residual + self.noise_residual
    }

    /// Error after LMMSE-style shrinkage: `beta eps / (beta + eps)`.
    pub fn shrunk(&self, beta: f64) -> f64 {
        let e = self.total();
        beta * e / (beta + e)
    }

    /// Scale every term driven by inter-group DL power.
    pub fn with_dl_scale(&self, s: f64) -> Self {
        Self {
            data: self.data * s,
            data_residual: self.data_residual * s,
            noise_residual: self.noise_residual * s,
            ..*self
        }
    }

    /// Ideal sectorisation: co-group pilots and BS-BS residuals shrink by `delta`.
    pub fn sectorized(&self, delta: usize) -> Self {
        let d = delta as f64;
        Self {
            pilot: self.pilot / d,
            data_residual: self.data_residual / d,
            ..*self
        }
    }
}

impl Network<'_> {
    fn pilot_peers(&self, l: usize) -> impl Iterator<Item = usize> + '_ {
        let g = self.groups.group(l);
        self.groups
            .members_of(g)
            .iter()
            .copied()
            .filter(move |&j| j != l)
    }

    fn common(&self, l: usize, k: usize) -> (f64, f64, f64) {
        let rho = self.powers.pilot(l, k);
        let n = self.pilot_len as f64;
        let pilot = self
            .pilot_peers(l)
            .map(|j| self.powers.pilot(j, k) / rho * self.ls.beta(l, j, k))
            .sum();
        let noise = self.powers.noise.pilot / (n * rho);
        (pilot, noise, self.powers.dl_total / (n * rho))
    }
}

pub fn mscee_tsp(net: &Network<'_>, l: usize, k: usize) -> MsceeBreakdown {
    let (pilot, noise, dl) = net.common(l, k);
    let sum_alpha: f64 = (0..net.ls.cells)
        .filter(|&d| !net.groups.same_group(l, d))
        .map(|d| net.ls.alpha(l, d))
        .sum();
    MsceeBreakdown {
        pilot,
        data: dl * sum_alpha,
        noise,
        ..Default::default()
    }
}

/// MSCEE after cancelling the DL data of `cluster` (the target's nearest
/// neighbours, target excluded) with LS BS-BS estimates.
pub fn mscee_ic_tsp(
    net: &Network<'_>,
    schedule: &BsSchedule,
    cluster: &[usize],
    l: usize,
    k: usize,
) -> MsceeBreakdown {
    let (pilot, noise, dl) = net.common(l, k);
    let mut others = 0.0;
    let mut residual = 0.0;
    for d in 0..net.ls.cells {
        if net.groups.same_group(l, d) {
            continue;
        }
        if cluster.contains(&d) {
            residual += schedule
                .co_slot(d)
                .iter()
                .filter(|&&b| b != d)
                .map(|&b| net.ls.alpha(l, b))
                .sum::<f64>();
        } else {
            others += net.ls.alpha(l, d);
        }
    }
    let rho = net.powers.pilot(l, k);
    let noise_residual =
        cluster.len() as f64 * (net.powers.dl_total / net.powers.bs_pilot) * net.powers.noise.bs
            / (net.pilot_len as f64 * rho);
    MsceeBreakdown {
        pilot,
        data: dl * others,
        noise,
        data_residual: dl * residual,
        noise_residual,
    }
}

// ---------------------------------------------------------------------------
// SINR

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrBreakdown {
    pub signal: f64,
    pub correlated: f64,
    pub uncorrelated: f64,
    pub varsigma: f64,
    pub sinr: f64,
}

/// `((M+1) b^2 + e b) / (M c + (b + e) s)`.
pub fn sinr_closed_form(m: f64, beta: f64, eps: f64, corr: f64, varsigma: f64) -> SinrBreakdown {
    let signal = (m + 1.0) * beta * beta + eps * beta;
    let correlated = m * corr;
    let uncorrelated = (beta + eps) * varsigma;
    SinrBreakdown {
        signal,
        correlated,
        uncorrelated,
        varsigma,
        sinr: signal / (correlated + uncorrelated),
    }
}

/// UL quantities of one MS that do not depend on `M` or on the MSCEE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlTerms {
    pub beta: f64,
    /// Sum over co-group cells of power-weighted `beta_lj^2`.
    pub corr: f64,
    pub varsigma: f64,
}

impl UlTerms {
    pub fn sinr(&self, m: f64, eps: f64) -> SinrBreakdown {
        sinr_closed_form(m, self.beta, eps, self.corr, self.varsigma)
    }

    /// Large-M limit `beta^2 / corr`.
    pub fn ceiling(&self) -> f64 {
        self.beta * self.beta / self.corr
    }
}

pub fn ul_terms(net: &Network<'_>, l: usize, k: usize) -> UlTerms {
    let p = net.powers;
    let beta = net.ls.beta(l, l, k);
    let (rd, rp) = (p.ul_data(l, k), p.pilot(l, k));
    let corr = net
        .pilot_peers(l)
        .map(|j| {
            let b = net.ls.beta(l, j, k);
            p.ul_data(j, k) / rd * (p.pilot(j, k) / rp) * b * b
        })
        .sum();
    let mut all = 0.0;
    for j in 0..net.ls.cells {
        for kk in 0..net.ls.per_cell {
            all += p.ul_data(j, kk) / rd * net.ls.beta(l, j, kk);
        }
    }
    UlTerms {
        beta,
        corr,
        varsigma: all - beta + p.noise.ul / rd,
    }
}

pub fn sinr_ul(net: &Network<'_>, eps: f64, l: usize, k: usize, m: usize) -> SinrBreakdown {
    ul_terms(net, l, k).sinr(m as f64, eps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlPeer {
    pub cell: usize,
    /// Power ratios times `beta_jl^2`.
    pub coef: f64,
    /// `beta_jj` of the peer's own MS with the same pilot.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlTerms {
    pub beta: f64,
    pub peers: Vec<DlPeer>,
    pub varsigma_cl: f64,
    pub varsigma_pd: f64,
}

/// Cells in pilot mode during the CL stage and their MS-MS gains `mu[i][k]`
/// towards the target MS.
pub struct PilotMode<'a> {
    pub cells: &'a [usize],
    pub mu: &'a [Vec<f64>],
}

pub fn dl_terms(
    net: &Network<'_>,
    l: usize,
    k: usize,
    pilot_mode: Option<&PilotMode<'_>>,
) -> DlTerms {
    let p = net.powers;
    let beta = net.ls.beta(l, l, k);
    let rho_dl = p.dl(l, k);
    let peers = net
        .pilot_peers(l)
        .map(|j| {
            let b = net.ls.beta(j, l, k);
            DlPeer {
                cell: j,
                coef: p.dl(j, k) / rho_dl * (p.pilot(l, k) / p.pilot(j, k)) * b * b,
                beta: net.ls.beta(j, j, k),
            }
        })
        .collect();
    let ratio = p.dl_total / rho_dl;
    let all: f64 = (0..net.ls.cells).map(|j| net.ls.beta(j, l, k)).sum();
    let varsigma_pd = ratio * all - beta + p.noise.pd / rho_dl;
    let varsigma_cl = match pilot_mode {
        None => ratio * all - beta + p.noise.cl / rho_dl,
        Some(pm) => {
            let open: f64 = (0..net.ls.cells)
                .filter(|j| !pm.cells.contains(j))
                .map(|j| net.ls.beta(j, l, k))
                .sum();
            let mut leak = 0.0;
            for (i, &c) in pm.cells.iter().enumerate() {
                for (kk, mu) in pm.mu[i].iter().enumerate() {
                    leak += p.pilot(c, kk) / rho_dl * mu;
                }
            }
            ratio * open - beta + leak + p.noise.cl / rho_dl
        }
    };
    DlTerms {
        beta,
        peers,
        varsigma_cl,
        varsigma_pd,
    }
}

impl DlTerms {
    /// `corr_scale` divides the correlated term (sectorisation).
    fn sinr_with(
        &self,
        m: f64,
        eps: f64,
        peer_eps: &[f64],
        varsigma: f64,
        corr_scale: f64,
    ) -> SinrBreakdown {
        let corr: f64 = self
            .peers
            .iter()
            .zip(peer_eps)
            .map(|(pr, e)| (self.beta + eps) / (pr.beta + e) * pr.coef)
            .sum();
        sinr_closed_form(m, self.beta, eps, corr / corr_scale, varsigma)
    }

    pub fn sinr_cl(&self, m: f64, eps: f64, peer_eps: &[f64]) -> SinrBreakdown {
        self.sinr_with(m, eps, peer_eps, self.varsigma_cl, 1.0)
    }

    pub fn sinr_pd(&self, m: f64, eps: f64, peer_eps: &[f64]) -> SinrBreakdown {
        self.sinr_with(m, eps, peer_eps, self.varsigma_pd, 1.0)
    }

    pub fn sinr_cl_sectorized(
        &self,
        m: f64,
        eps: f64,
        peer_eps: &[f64],
        delta: usize,
    ) -> SinrBreakdown {
        self.sinr_with(m, eps, peer_eps, self.varsigma_cl, delta as f64)
    }
}

// ---------------------------------------------------------------------------
// antennas, coherence time, spectral efficiency, sectors

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaRequirement {
    pub m_t: f64,
    pub lower_bound: f64,
    pub ceiling: f64,
}

/// Antennas needed for the UL SINR of one MS to reach `target` (linear).
pub fn antennas_required(target: f64, terms: &UlTerms, eps: f64) -> Result<AntennaRequirement> {
    let b = terms.beta;
    let ceiling = terms.ceiling();
    let den = b * b - target * terms.corr;
    if !(den > 0.0) {
        return Err(Error::Infeasible(format!(
            "target SINR {target} is not below the large-M ceiling {ceiling}"
        )));
    }
    let m_t = (target * (b + eps) * terms.varsigma - b * (eps + b)) / den;
    let lower_bound = (b + eps) / b * (target * terms.varsigma / b - 1.0);
    Ok(AntennaRequirement {
        m_t,
        lower_bound,
        ceiling,
    })
}

/// Smallest BS-BS coherence time (symbols) for which IC-TSP beats TSP.
/// `overhead` is the BS pilot stage length. Infinite when IC gives no gain.
pub fn min_bs_coherence(overhead: f64, f_c: usize, sinr: f64, sinr_ic: f64) -> f64 {
    if !(sinr_ic > sinr) {
        return f64::INFINITY;
    }
    let ratio = (1.0 + sinr).log2() / (1.0 + sinr_ic).log2();
    overhead / (f_c as f64 * (1.0 - ratio))
}

pub fn spectral_efficiency(sinr: f64, w_p: f64, w_t: f64) -> f64 {
    w_p * w_t * (1.0 + sinr.max(0.0)).log2()
}

pub fn check_sectors(delta: usize, m: usize) -> Result<()> {
    if delta == 0 || !m.is_multiple_of(delta) {
        return Err(invalid(
            "sectors",
            format!("{delta} sectors do not divide {m} antennas"),
        ));
    }
    Ok(())
}

/// UL SINR with `delta` ideal sectors: the correlated term shrinks by `delta`
/// relative to the signal, and the estimate uses the sectorised MSCEE.
pub fn sinr_ul_sectorized(
    terms: &UlTerms,
    m: f64,
    eps_sectorized: f64,
    delta: usize,
) -> SinrBreakdown {
    sinr_closed_form(
        m,
        terms.beta,
        eps_sectorized,
        terms.corr / delta as f64,
        terms.varsigma,
    )
}
