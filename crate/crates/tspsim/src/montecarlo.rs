//! Drops, the signal-level chain, aggregation and the figure presets.
//!
//! A drop is one realisation of MS positions and shadowing. Every drop yields
//! an analytic record per averaged MS; the records hold the pieces of the
//! closed forms that do not depend on `M`, the sector count, the BS-BS
//! coherence time or the DL scaling, so sweeps over those reuse one set of
//! drops. Selected drops can additionally run the signal-level chain.
//!
//! Aggregates are sums accumulated in drop order, then over MSs in index
//! order, so serial and parallel runs agree bit for bit.

use crate::analytics::{
    antennas_required, dl_terms, mscee_ic_tsp, mscee_tsp, sinr_ul_sectorized, spectral_efficiency,
    ul_terms, DlTerms, MsceeBreakdown, Network, PilotMode, UlTerms,
};
use crate::channel::{
    los_steering, loyka_correlation, ms_ms_gain, sample_large_scale, sample_ms_bs, sample_ms_ms,
    BsBsChannel, CMatrix, CVector, Correlation, LargeScale, LargeScaleParams,
};
use crate::config::{Averaging, Estimator, Precoder, ScenarioConfig, SinrAveraging, SparsityMode};
use crate::error::{invalid, Error, Result};
use crate::estimation::{
    cs_bs_estimate, cs_pilot_length, dft_basis, ic_tsp_estimate, lmmse_surrogate, ls_bs_estimate,
    ls_estimate, sparsify, Cancellation, Term,
};
use crate::frame::{precoder_epoch, resource_ratio_ic, resource_ratio_tsp, Epoch};
use crate::rng::{complex_normal, LinkClass, Streams};
use crate::signals::{
    compose_bs_pilot, compose_received_pilot, data_symbols, dl_component_powers,
    gaussian_bs_pilots, make_pilot_book, mf_precoder, noise_block, orthogonal_bs_pilots,
    precoded_block, ul_component_powers, zf_detector, zf_precoder, BsPilotBlock, DlChannels,
    DlInterferer, DlPowers, GroupCell, PilotLeakage, PowerConfig, Powers, UlChannels, UlPowers,
};
use crate::topology::{
    assign_groups, bs_reuse_schedule, drop_users, ic_cluster, BsSchedule, GroupAssignment,
    HexLayout, Placement,
};
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Two-sided 95 % normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

// ---------------------------------------------------------------------------
// scenario

/// Everything that is fixed across drops.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub layout: HexLayout,
    pub groups: GroupAssignment,
    pub schedule: BsSchedule,
    pub params: LargeScaleParams,
    pub power: PowerConfig,
    pub pilot_len: usize,
    /// Cells whose MSs are averaged.
    pub targets: Vec<usize>,
    /// Nearest `L_D` neighbours of every cell.
    pub clusters: Vec<Vec<usize>>,
}

impl Scenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        if let Err(errs) = config.validate() {
            return Err(Error::Config {
                line: 0,
                message: errs.join("; "),
            });
        }
        let layout = HexLayout::from_cell_count(config.layout.cells, config.layout.cell_radius_m)?;
        let groups = assign_groups(&layout, config.groups.count)?;
        let schedule = bs_reuse_schedule(&layout, config.ic.cluster_size)?;
        let clusters = (0..layout.len())
            .map(|l| ic_cluster(&layout, l, config.ic.cluster_size))
            .collect::<Result<Vec<_>>>()?;
        let targets = match config.system.averaging {
            Averaging::Center => vec![0],
            Averaging::All => (0..layout.len()).collect(),
        };
        Ok(Self {
            config: config.clone(),
            pilot_len: config.frame.coherence_subcarriers * config.frame.pilot_symbols,
            params: config.large_scale_params(),
            power: config.power_config(),
            layout,
            groups,
            schedule,
            targets,
            clusters,
        })
    }

    /// Group in pilot mode while group `p` is in its CL stage.
    pub fn pilot_mode_group(&self, p: usize) -> Option<usize> {
        let g = self.groups.gamma;
        let off = self.config.groups.pilot_mode_offset % g;
        if off == 0 {
            None
        } else {
            Some((p + off) % g)
        }
    }

    /// Large-scale state of drop `drop`.
    pub fn realize(&self, seed: u64, drop: u64) -> Result<DropState> {
        let streams = Streams::new(seed, drop);
        let placement = drop_users(
            &self.layout,
            self.config.layout.ms_per_cell,
            self.config.layout.protection_radius_m,
            &streams,
        )?;
        let ls = sample_large_scale(&self.layout, &placement, &self.params, &streams)?;
        let powers = self.power.allocate(&ls);
        Ok(DropState {
            index: drop,
            streams,
            placement,
            ls,
            powers,
        })
    }

    fn network<'a>(&'a self, st: &'a DropState) -> Network<'a> {
        Network {
            groups: &self.groups,
            ls: &st.ls,
            powers: &st.powers,
            pilot_len: self.pilot_len,
        }
    }

    /// MS-MS gains from every MS of the pilot-mode group towards MS `k` of `l`.
    fn pilot_mode_mu(
        &self,
        st: &DropState,
        l: usize,
        k: usize,
    ) -> Result<Option<(Vec<usize>, Vec<Vec<f64>>)>> {
        let Some(q) = self.pilot_mode_group(self.groups.group(l)) else {
            return Ok(None);
        };
        let cells = self.groups.members_of(q).to_vec();
        let kk = self.config.layout.ms_per_cell;
        let mut mu = Vec::with_capacity(cells.len());
        for &c in &cells {
            let row = (0..kk)
                .map(|j| {
                    ms_ms_gain(
                        &st.placement,
                        &self.params,
                        &st.streams,
                        (l, k),
                        (c, j),
                        self.config.channel.ms_ms_min_distance_m,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            mu.push(row);
        }
        Ok(Some((cells, mu)))
    }

    /// DL interference power from the cancelled cells, as seen in the MSCEE.
    fn cancelled_power(&self, net: &Network<'_>, l: usize, k: usize) -> f64 {
        let sum: f64 = self.clusters[l]
            .iter()
            .filter(|&&d| !self.groups.same_group(l, d))
            .map(|&d| net.ls.alpha(l, d))
            .sum();
        net.powers.dl_total / (self.pilot_len as f64 * net.powers.pilot(l, k)) * sum
    }

    /// Analytic record of every averaged MS in one drop.
    pub fn run_drop(&self, seed: u64, drop: u64) -> Result<DropRecord> {
        let st = self.realize(seed, drop)?;
        self.records_for(&st)
            .map_err(|e| Error::Degenerate(format!("drop {drop}: {e}")))
    }

    fn records_for(&self, st: &DropState) -> Result<DropRecord> {
        let net = self.network(st);
        let k_count = self.config.layout.ms_per_cell;
        let mut ms = Vec::with_capacity(self.targets.len() * k_count);
        for &l in &self.targets {
            for k in 0..k_count {
                let tsp = mscee_tsp(&net, l, k);
                let ic = mscee_ic_tsp(&net, &self.schedule, &self.clusters[l], l, k);
                let pm = self.pilot_mode_mu(st, l, k)?;
                let pilot_mode = pm.as_ref().map(|(cells, mu)| PilotMode { cells, mu });
                let dl = dl_terms(&net, l, k, pilot_mode.as_ref());
                let mut peer_tsp = Vec::with_capacity(dl.peers.len());
                let mut peer_ic = Vec::with_capacity(dl.peers.len());
                let mut peer_cancelled = Vec::with_capacity(dl.peers.len());
                for p in &dl.peers {
                    peer_tsp.push(mscee_tsp(&net, p.cell, k));
                    peer_ic.push(mscee_ic_tsp(
                        &net,
                        &self.schedule,
                        &self.clusters[p.cell],
                        p.cell,
                        k,
                    ));
                    peer_cancelled.push(self.cancelled_power(&net, p.cell, k));
                }
                ms.push(MsRecord {
                    cell: l,
                    ms: k,
                    beta: st.ls.beta(l, l, k),
                    tsp,
                    ic,
                    cancelled: self.cancelled_power(&net, l, k),
                    ul: ul_terms(&net, l, k),
                    dl,
                    peer_tsp,
                    peer_ic,
                    peer_cancelled,
                });
            }
        }
        Ok(DropRecord { drop: st.index, ms })
    }
}

/// Large-scale state of one drop.
#[derive(Debug, Clone)]
pub struct DropState {
    pub index: u64,
    pub streams: Streams,
    pub placement: Placement,
    pub ls: LargeScale,
    pub powers: Powers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsRecord {
    pub cell: usize,
    pub ms: usize,
    pub beta: f64,
    pub tsp: MsceeBreakdown,
    /// IC-TSP with LS BS-BS estimates.
    pub ic: MsceeBreakdown,
    /// Inter-group DL power of the cancelled cells before cancellation.
    pub cancelled: f64,
    pub ul: UlTerms,
    pub dl: DlTerms,
    /// Same-pilot MSs of the co-group cells, in `dl.peers` order.
    pub peer_tsp: Vec<MsceeBreakdown>,
    pub peer_ic: Vec<MsceeBreakdown>,
    pub peer_cancelled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropRecord {
    pub drop: u64,
    pub ms: Vec<MsRecord>,
}

// ---------------------------------------------------------------------------
// evaluating records

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Tsp,
    /// IC-TSP with LS BS-BS estimation.
    IcLs,
    /// IC-TSP with CS BS-BS estimation.
    IcCs,
}

impl Scheme {
    pub fn is_ic(&self) -> bool {
        !matches!(self, Scheme::Tsp)
    }
}

/// Operating point at which analytic records are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub scheme: Scheme,
    pub antennas: usize,
    pub sectors: usize,
    /// Multiplier on the DL power of interfering cells during estimation.
    pub dl_scale: f64,
    pub cs_nmse: f64,
    /// `varpi_P`
    pub w_p: f64,
    /// `varpi_T`, 1 for TSP.
    pub w_t: f64,
}

impl EvalPoint {
    pub fn from_config(cfg: &ScenarioConfig, scheme: Scheme) -> Self {
        let f = &cfg.frame;
        let w_t = if scheme.is_ic() {
            let mut c = cfg.clone();
            if scheme == Scheme::IcLs {
                c.ic.bsbs_method = crate::config::BsBsConfig::Ls;
            } else if !c.ic.bsbs_method.is_cs() {
                c.ic.bsbs_method = crate::config::BsBsConfig::Cs;
            }
            let overhead = c.bs_pilot_overhead(cfg.system.antennas);
            resource_ratio_ic(
                overhead,
                f.coherence_subcarriers,
                f.bs_coherence_symbols as f64,
            )
            .unwrap_or(0.0)
        } else {
            1.0
        };
        Self {
            scheme,
            antennas: cfg.system.antennas,
            sectors: cfg.system.sectors,
            dl_scale: 1.0,
            cs_nmse: cfg.cs_nmse(),
            w_p: resource_ratio_tsp(f.pilot_symbols, f.coherence_symbols),
            w_t,
        }
    }

    fn breakdown(
        &self,
        tsp: &MsceeBreakdown,
        ic: &MsceeBreakdown,
        cancelled: f64,
    ) -> MsceeBreakdown {
        let base = match self.scheme {
            Scheme::Tsp => *tsp,
            Scheme::IcLs => *ic,
            Scheme::IcCs => MsceeBreakdown {
                data_residual: ic.data_residual + self.cs_nmse * cancelled,
                ..*ic
            },
        };
        base.with_dl_scale(self.dl_scale).sectorized(self.sectors)
    }

    pub fn mscee(&self, r: &MsRecord) -> MsceeBreakdown {
        self.breakdown(&r.tsp, &r.ic, r.cancelled)
    }

    fn peer_eps(&self, r: &MsRecord) -> Vec<f64> {
        (0..r.peer_tsp.len())
            .map(|i| {
                self.breakdown(&r.peer_tsp[i], &r.peer_ic[i], r.peer_cancelled[i])
                    .total()
            })
            .collect()
    }

    pub fn sinr_ul(&self, r: &MsRecord) -> f64 {
        let eps = self.mscee(r).total();
        sinr_ul_sectorized(&r.ul, self.antennas as f64, eps, self.sectors).sinr
    }

    pub fn sinr_cl(&self, r: &MsRecord) -> f64 {
        let eps = self.mscee(r).total();
        r.dl.sinr_cl_sectorized(self.antennas as f64, eps, &self.peer_eps(r), self.sectors)
            .sinr
    }

    pub fn sinr_pd(&self, r: &MsRecord) -> f64 {
        let eps = self.mscee(r).total();
        let peers = self.peer_eps(r);
        if self.sectors == 1 {
            r.dl.sinr_pd(self.antennas as f64, eps, &peers).sinr
        } else {
            // same correlated-term scaling as the CL stage
            let mut t = r.dl.clone();
            t.varsigma_cl = t.varsigma_pd;
            t.sinr_cl_sectorized(self.antennas as f64, eps, &peers, self.sectors)
                .sinr
        }
    }

    pub fn spectral_efficiency(&self, r: &MsRecord) -> f64 {
        spectral_efficiency(self.sinr_ul(r), self.w_p, self.w_t)
    }
}

// ---------------------------------------------------------------------------
// statistics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// 95 % half-width from the drop-level jackknife.
    pub half_width: f64,
    pub n: usize,
}

/// Evaluates `f` on the column totals of `per_drop` and attaches a jackknife
/// half-width over drops. Totals are accumulated in slice order.
pub fn jackknife(per_drop: &[Vec<f64>], n: usize, f: impl Fn(&[f64]) -> f64) -> Estimate {
    let width = per_drop.first().map_or(0, |v| v.len());
    let mut total = vec![0.0; width];
    for row in per_drop {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    let mean = f(&total);
    let d = per_drop.len();
    if d < 2 {
        return Estimate {
            mean,
            half_width: 0.0,
            n,
        };
    }
    let mut loo = vec![0.0; width];
    let mut vals = Vec::with_capacity(d);
    for row in per_drop {
        for i in 0..width {
            loo[i] = total[i] - row[i];
        }
        vals.push(f(&loo));
    }
    let m = vals.iter().sum::<f64>() / d as f64;
    let var = (d as f64 - 1.0) / d as f64 * vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    Estimate {
        mean,
        half_width: Z95 * var.sqrt(),
        n,
    }
}

/// `P_TC`-normalised MSCEE in dB from per-drop `(sum eps, sum beta)`.
fn normalized_db(t: &[f64]) -> f64 {
    db(t[0] / t[1])
}

/// Empirical CDF: sorted samples with their cumulative probabilities.
pub fn empirical_cdf(mut samples: Vec<f64>) -> Vec<(f64, f64)> {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect()
}

/// `eps_data / eps` of every record.
pub fn dominance_samples(records: &[DropRecord]) -> Vec<f64> {
    records
        .iter()
        .flat_map(|d| d.ms.iter())
        .map(|r| {
            let t = r.tsp.total();
            if t > 0.0 {
                r.tsp.data / t
            } else {
                0.0
            }
        })
        .collect()
}

pub fn dominance_cdf(records: &[DropRecord]) -> Vec<(f64, f64)> {
    empirical_cdf(dominance_samples(records))
}

// ---------------------------------------------------------------------------
// signal-level chain

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub realizations: usize,
    pub target: usize,
    pub dl_scale: f64,
    /// Run IC-TSP with LS BS-BS estimates.
    pub ic: bool,
    /// Run IC-TSP with CS BS-BS estimates.
    pub cs: bool,
}

/// Empirical quantities of one MS, summed over realisations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimMsRecord {
    pub ms: usize,
    pub beta: f64,
    pub realizations: usize,
    pub err_tsp: f64,
    pub err_tsp_lmmse: f64,
    /// Pilot, data and noise shares of `err_tsp`.
    pub tsp_terms: [f64; 3],
    pub err_ic: f64,
    pub err_ic_lmmse: f64,
    pub err_cs: f64,
    pub ul: UlPowers,
    pub cl: DlPowers,
    pub pd: DlPowers,
}

impl SimMsRecord {
    pub fn mscee_tsp(&self) -> f64 {
        self.err_tsp / self.realizations as f64
    }

    pub fn sinr_ul(&self) -> f64 {
        self.ul.signal / self.ul.interference()
    }

    pub fn sinr_cl(&self) -> f64 {
        self.cl.signal / self.cl.interference()
    }

    pub fn sinr_pd(&self) -> f64 {
        self.pd.signal / self.pd.interference()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDropRecord {
    pub drop: u64,
    pub cell: usize,
    pub ms: Vec<SimMsRecord>,
    /// Largest per-column sparsity seen by the CS estimator.
    pub cs_sparsity: usize,
    pub cs_pilot_len: usize,
    /// A ZF inverse or an OMP step needed regularisation.
    pub flagged: bool,
}

struct Fading<'a> {
    streams: &'a Streams,
    ls: &'a LargeScale,
    m: usize,
    r: u64,
    cache: HashMap<(u64, usize, usize, usize), CVector>,
}

impl Fading<'_> {
    fn get(&mut self, epoch: Epoch, bs: usize, cell: usize, ms: usize) -> CVector {
        let tag = match epoch {
            Epoch::Current => 0,
            Epoch::Previous => 1,
        };
        let (streams, ls, m, r) = (self.streams, self.ls, self.m, self.r);
        self.cache
            .entry((tag, bs, cell, ms))
            .or_insert_with(|| {
                let mut rng = streams.rng(
                    LinkClass::MsBsFading,
                    &[r, tag, bs as u64, cell as u64, ms as u64],
                );
                sample_ms_bs(ls.beta(bs, cell, ms), m, &mut rng)
            })
            .clone()
    }
}

fn precoders(estimates: &CMatrix, kind: Precoder) -> Result<(CMatrix, bool)> {
    match kind {
        Precoder::Zf => zf_precoder(estimates),
        Precoder::Mf => {
            let mut w = CMatrix::zeros(estimates.nrows(), estimates.ncols());
            for k in 0..estimates.ncols() {
                w.set_column(k, &mf_precoder(&estimates.column(k).into_owned())?);
            }
            Ok((w, false))
        }
    }
}

/// Receive filters as vectors `v` so that `v . g` is the filter output.
fn detectors(estimates: &CMatrix, kind: Precoder) -> Result<(Vec<CVector>, bool)> {
    match kind {
        Precoder::Mf => Ok((
            estimates.column_iter().map(|c| c.conjugate()).collect(),
            false,
        )),
        Precoder::Zf => {
            let (d, flagged) = zf_detector(estimates)?;
            Ok((d.row_iter().map(|r| r.transpose()).collect(), flagged))
        }
    }
}

fn columns(v: &[CVector]) -> CMatrix {
    let m = v.first().map_or(0, |c| c.len());
    let mut out = CMatrix::zeros(m, v.len());
    for (i, c) in v.iter().enumerate() {
        out.set_column(i, c);
    }
    out
}

/// Per-BS pilot variant of the BS pilot stage: every BS of the slot sends its
/// own block.
fn compose_bs_own_pilots(
    desired: (&BsBsChannel, &CMatrix),
    co_slot: &[(usize, &BsBsChannel, &CMatrix)],
    rho: f64,
    corr: &Correlation,
    noise: CMatrix,
) -> BsPilotBlock {
    let s = Complex64::new(rho.sqrt(), 0.0);
    let d = desired.0.apply(corr, desired.1) * s;
    let mut y = d.clone() + &noise;
    let co: Vec<(usize, CMatrix)> = co_slot
        .iter()
        .map(|(b, g, p)| (*b, g.apply(corr, p) * s))
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

impl Scenario {
    /// Whether the signal-level chain is allowed at the configured `M`.
    pub fn signal_allowed(&self) -> bool {
        self.config.sim.force_signal
            || self.config.system.antennas <= self.config.sim.max_signal_antennas
    }

    /// Signal-level run of one drop for the MSs of `opts.target`.
    ///
    /// Small-scale channels, BS-BS matrices, data and noise are redrawn in
    /// every realisation. The target cell's estimates come from the full
    /// received pilot block. Precoders of other cells use their own channels
    /// plus an error drawn at their closed-form MSCEE, except co-group cells,
    /// whose estimates carry the exact pilot contamination.
    pub fn simulate_drop(&self, seed: u64, drop: u64, opts: &SimOptions) -> Result<SimDropRecord> {
        if !self.signal_allowed() {
            return Err(invalid(
                "antennas",
                format!(
                    "signal-level runs are limited to {} antennas (sim.force_signal overrides)",
                    self.config.sim.max_signal_antennas
                ),
            ));
        }
        let st = self.realize(seed, drop)?;
        let cfg = &self.config;
        let m = cfg.system.antennas;
        let k_count = cfg.layout.ms_per_cell;
        let n_cells = self.layout.len();
        let l = opts.target;
        let p = self.groups.group(l);
        let group: Vec<usize> = self.groups.members_of(p).to_vec();
        let corr = loyka_correlation(m, self.params.correlation)?;
        let book = make_pilot_book(k_count, self.pilot_len)?;
        let n = self.pilot_len;

        let mut powers = st.powers.clone();
        // DL scaling affects what the interferers radiate during the pilot
        // window only; the DL stages below use `st.powers`.
        powers.scale_dl(opts.dl_scale);
        let net = self.network(&st);
        let mut net_scaled = net;
        net_scaled.powers = &powers;

        // closed-form errors used for the other cells' precoders
        let eps_tsp: Vec<Vec<MsceeBreakdown>> = (0..n_cells)
            .map(|c| (0..k_count).map(|k| mscee_tsp(&net_scaled, c, k)).collect())
            .collect();
        let eps_ic_total: Vec<f64> = (0..k_count)
            .map(|k| mscee_ic_tsp(&net_scaled, &self.schedule, &self.clusters[l], l, k).total())
            .collect();

        let cancel: Vec<usize> = self.clusters[l]
            .iter()
            .copied()
            .filter(|&d| !self.groups.same_group(l, d))
            .collect();
        let interferers: Vec<usize> = (0..n_cells)
            .filter(|&d| !self.groups.same_group(l, d))
            .collect();
        let pilot_mode = self
            .pilot_mode_group(p)
            .map(|q| self.groups.members_of(q).to_vec());
        let rho_bs = powers.bs_pilot;
        let basis = if opts.cs { Some(dft_basis(m)) } else { None };
        let lp = if opts.ic {
            Some(orthogonal_bs_pilots(m))
        } else {
            None
        };
        let mu: Vec<Option<(Vec<usize>, Vec<Vec<f64>>)>> = (0..k_count)
            .map(|k| self.pilot_mode_mu(&st, l, k))
            .collect::<Result<_>>()?;

        let mut out: Vec<SimMsRecord> = (0..k_count)
            .map(|k| SimMsRecord {
                ms: k,
                beta: st.ls.beta(l, l, k),
                ..Default::default()
            })
            .collect();
        let mut flagged = false;
        let mut cs_sparsity = 0;
        let mut cs_pilot_len = 0;

        for r in 0..opts.realizations as u64 {
            let mut fad = Fading {
                streams: &st.streams,
                ls: &st.ls,
                m,
                r,
                cache: HashMap::new(),
            };

            // DL blocks radiated by the interferers during the pilot window
            let mut transmitted: Vec<(usize, CMatrix)> = Vec::with_capacity(interferers.len());
            let mut stage_precoders: HashMap<usize, CMatrix> = HashMap::new();
            for &d in &interferers {
                let epoch = precoder_epoch(p, self.groups.group(d));
                let tag = if epoch == Epoch::Current { 0 } else { 1 };
                let mut rng = st
                    .streams
                    .rng(LinkClass::EstimateError, &[r, tag, d as u64]);
                let est: Vec<CVector> = (0..k_count)
                    .map(|k| {
                        let g = fad.get(epoch, d, d, k);
                        let e = eps_tsp[d][k].total();
                        g + CVector::from_fn(m, |_, _| complex_normal(&mut rng, e))
                    })
                    .collect();
                let (w, f) = precoders(&columns(&est), cfg.system.precoder)?;
                flagged |= f;
                let mut srng = st.streams.rng(LinkClass::Symbols, &[r, d as u64]);
                let x = data_symbols(k_count, n, &mut srng);
                let dl: Vec<f64> = (0..k_count).map(|k| powers.dl(d, k)).collect();
                transmitted.push((d, precoded_block(&w, &dl, &x)));
                stage_precoders.insert(d, w);
            }
            let bsbs: HashMap<usize, BsBsChannel> = (0..n_cells)
                .filter(|&d| d != l)
                .map(|d| {
                    let (ar, at) = los_steering(self.layout.center(l), self.layout.center(d), m);
                    let mut rng = st
                        .streams
                        .rng(LinkClass::BsBsFading, &[r, l as u64, d as u64]);
                    (
                        d,
                        BsBsChannel::sample(
                            st.ls.alpha(l, d),
                            self.params.rician_k,
                            ar,
                            at,
                            &mut rng,
                        ),
                    )
                })
                .collect();

            // received pilot block at BS l
            let own: Vec<CVector> = (0..k_count)
                .map(|k| fad.get(Epoch::Current, l, l, k))
                .collect();
            let co_channels: Vec<(usize, Vec<CVector>)> = group
                .iter()
                .filter(|&&j| j != l)
                .map(|&j| {
                    (
                        j,
                        (0..k_count)
                            .map(|k| fad.get(Epoch::Current, l, j, k))
                            .collect(),
                    )
                })
                .collect();
            let co_cells: Vec<GroupCell<'_>> = co_channels
                .iter()
                .map(|(j, c)| GroupCell {
                    cell: *j,
                    channels: c,
                })
                .collect();
            let dl_int: Vec<DlInterferer<'_>> = transmitted
                .iter()
                .map(|(d, v)| DlInterferer {
                    cell: *d,
                    channel: &bsbs[d],
                    transmitted: v,
                })
                .collect();
            let mut nrng = st.streams.rng(LinkClass::Noise, &[r, l as u64, 0]);
            let noise = noise_block(m, n, powers.noise.pilot, &mut nrng);
            let block = compose_received_pilot(
                &GroupCell {
                    cell: l,
                    channels: &own,
                },
                &co_cells,
                &dl_int,
                &powers,
                &book,
                &corr,
                noise,
            );
            let mut target_est = Vec::with_capacity(k_count);
            for k in 0..k_count {
                let rho = powers.pilot(l, k);
                let est = ls_estimate(&block, &own[k], &book, k, rho);
                let e = eps_tsp[l][k].total();
                let sh = lmmse_surrogate(&est, &own[k], st.ls.beta(l, l, k), e);
                let o = &mut out[k];
                o.err_tsp += est.mscee();
                o.err_tsp_lmmse += sh.mscee();
                o.tsp_terms[0] += est.term_power(Term::Pilot);
                o.tsp_terms[1] += est.term_power(Term::Data);
                o.tsp_terms[2] += est.term_power(Term::Noise);
                target_est.push(est.estimate);
            }

            // UL data stage
            let ul_ch: Vec<Vec<CVector>> = (0..n_cells)
                .map(|j| {
                    (0..k_count)
                        .map(|k| fad.get(Epoch::Current, l, j, k))
                        .collect()
                })
                .collect();
            let g_hat = columns(&target_est);
            let (dets, f) = detectors(&g_hat, cfg.system.precoder)?;
            flagged |= f;
            let ulc = UlChannels {
                bs: l,
                channels: &ul_ch,
                group: &group,
            };
            for k in 0..k_count {
                let u = ul_component_powers(&dets[k], &ulc, k, &st.powers);
                out[k].ul.add(&u);
            }

            // DL stages: current-frame precoders of every cell
            let mut dl_prec: Vec<CMatrix> = Vec::with_capacity(n_cells);
            for j in 0..n_cells {
                let w = if j == l {
                    let (w, f) = precoders(&g_hat, cfg.system.precoder)?;
                    flagged |= f;
                    w
                } else if group.contains(&j) {
                    let mut rng = st.streams.rng(LinkClass::EstimateError, &[r, 2, j as u64]);
                    let est: Vec<CVector> = (0..k_count)
                        .map(|k| {
                            let rho = st.powers.pilot(j, k);
                            let mut g = CVector::zeros(m);
                            for &i in &group {
                                let a = (st.powers.pilot(i, k) / rho).sqrt();
                                g += fad.get(Epoch::Current, j, i, k) * Complex64::new(a, 0.0);
                            }
                            let e = &eps_tsp[j][k];
                            g + CVector::from_fn(m, |_, _| {
                                complex_normal(&mut rng, e.data + e.noise)
                            })
                        })
                        .collect();
                    let (w, f) = precoders(&columns(&est), cfg.system.precoder)?;
                    flagged |= f;
                    w
                } else {
                    let mut rng = st.streams.rng(LinkClass::EstimateError, &[r, 3, j as u64]);
                    let est: Vec<CVector> = (0..k_count)
                        .map(|k| {
                            let g = fad.get(Epoch::Current, j, j, k);
                            let e = eps_tsp[j][k].total();
                            g + CVector::from_fn(m, |_, _| complex_normal(&mut rng, e))
                        })
                        .collect();
                    let (w, f) = precoders(&columns(&est), cfg.system.precoder)?;
                    flagged |= f;
                    w
                };
                dl_prec.push(w);
            }
            for k in 0..k_count {
                let chans: Vec<CVector> = (0..n_cells)
                    .map(|j| fad.get(Epoch::Current, j, l, k))
                    .collect();
                let dch = DlChannels {
                    cell: l,
                    ms: k,
                    channels: &chans,
                    precoders: &dl_prec,
                    group: &group,
                };
                let pd = dl_component_powers(&dch, None, &st.powers, st.powers.noise.pd);
                out[k].pd.add(&pd);
                let cl = match (&pilot_mode, &mu[k]) {
                    (Some(cells), Some((_, mu_k))) => {
                        let mut rng = st
                            .streams
                            .rng(LinkClass::MsMsFading, &[r, l as u64, k as u64]);
                        let gains: Vec<Vec<Complex64>> = mu_k
                            .iter()
                            .map(|row| row.iter().map(|&v| sample_ms_ms(v, &mut rng)).collect())
                            .collect();
                        let leak = PilotLeakage {
                            cells,
                            gains: &gains,
                        };
                        dl_component_powers(&dch, Some(&leak), &st.powers, st.powers.noise.cl)
                    }
                    _ => dl_component_powers(&dch, None, &st.powers, st.powers.noise.cl),
                };
                out[k].cl.add(&cl);
            }

            // IC-TSP with LS BS-BS estimates
            let truths: HashMap<usize, CMatrix> = if opts.ic || opts.cs {
                cancel
                    .iter()
                    .map(|&d| (d, bsbs[&d].to_matrix(&corr)))
                    .collect()
            } else {
                HashMap::new()
            };
            let co_slot = |d: usize| -> Vec<(usize, &BsBsChannel)> {
                self.schedule
                    .co_slot(d)
                    .iter()
                    .filter(|&&b| b != d && b != l)
                    .map(|&b| (b, &bsbs[&b]))
                    .collect()
            };
            let tx_of =
                |d: usize| -> &CMatrix { &transmitted.iter().find(|(c, _)| *c == d).unwrap().1 };
            if let Some(pil) = &lp {
                let mut ici = CMatrix::zeros(m, n);
                let mut noise_part = CMatrix::zeros(m, n);
                for &d in &cancel {
                    let mut nr = st
                        .streams
                        .rng(LinkClass::Noise, &[r, l as u64, 1, d as u64]);
                    let nz = noise_block(m, m, powers.noise.bs, &mut nr);
                    let blk = compose_bs_pilot(&bsbs[&d], &co_slot(d), pil, rho_bs, &corr, nz);
                    let est = ls_bs_estimate(&blk, pil, rho_bs, &truths[&d]);
                    let v = tx_of(d);
                    ici += &est.estimate * v;
                    if let Some(ne) = &est.noise_error {
                        noise_part += ne * v;
                    }
                }
                let c = Cancellation {
                    ici: &ici,
                    cancelled: &cancel,
                    noise_part: Some(&noise_part),
                };
                for k in 0..k_count {
                    let rho = powers.pilot(l, k);
                    let est = ic_tsp_estimate(&block, &c, &own[k], &book, k, rho);
                    let sh = lmmse_surrogate(&est, &own[k], st.ls.beta(l, l, k), eps_ic_total[k]);
                    out[k].err_ic += est.mscee();
                    out[k].err_ic_lmmse += sh.mscee();
                }
            }

            // IC-TSP with CS BS-BS estimates
            if let Some(a) = &basis {
                let s = match cfg.ic.cs_sparsity_mode {
                    SparsityMode::Frozen => cfg.frozen_sparsity(m),
                    SparsityMode::Measured => cancel
                        .iter()
                        .map(|d| sparsify(&truths[d], a, cfg.ic.cs_accuracy).per_column)
                        .max()
                        .unwrap_or(1)
                        .max(1),
                };
                let tau = cs_pilot_length(s, m);
                cs_sparsity = cs_sparsity.max(s);
                cs_pilot_len = cs_pilot_len.max(tau);
                let mut ici = CMatrix::zeros(m, n);
                let shared = if cfg.ic.bsbs_method.data_as_pilot() {
                    None
                } else {
                    let mut prng = st.streams.rng(LinkClass::BsPilot, &[r]);
                    Some(gaussian_bs_pilots(m, tau, &mut prng))
                };
                // precoded DL data as pilots, scaled to unit entry power
                let own_pilot = |b: usize| -> CMatrix {
                    let w = stage_precoders
                        .get(&b)
                        .cloned()
                        .unwrap_or_else(|| dl_prec[b].clone());
                    let mut srng = st.streams.rng(LinkClass::BsPilot, &[r, 1, b as u64]);
                    let x = data_symbols(k_count, tau, &mut srng);
                    let dl: Vec<f64> = (0..k_count).map(|k| st.powers.dl(b, k)).collect();
                    precoded_block(&w, &dl, &x)
                        * Complex64::new((m as f64 / st.powers.dl_total).sqrt(), 0.0)
                };
                for &d in &cancel {
                    let mut nr = st
                        .streams
                        .rng(LinkClass::Noise, &[r, l as u64, 2, d as u64]);
                    let nz = noise_block(m, tau, powers.noise.bs, &mut nr);
                    let (blk, pil) = match &shared {
                        Some(pil) => (
                            compose_bs_pilot(&bsbs[&d], &co_slot(d), pil, rho_bs, &corr, nz),
                            pil.clone(),
                        ),
                        None => {
                            let pd = own_pilot(d);
                            let co: Vec<(usize, CMatrix)> = co_slot(d)
                                .iter()
                                .map(|(b, _)| (*b, own_pilot(*b)))
                                .collect();
                            let co_ref: Vec<(usize, &BsBsChannel, &CMatrix)> =
                                co.iter().map(|(b, pb)| (*b, &bsbs[b], pb)).collect();
                            (
                                compose_bs_own_pilots((&bsbs[&d], &pd), &co_ref, rho_bs, &corr, nz),
                                pd,
                            )
                        }
                    };
                    let est = cs_bs_estimate(&blk.y, &pil, rho_bs, a, s, &truths[&d]);
                    flagged |= est.flagged;
                    ici += &est.estimate * tx_of(d);
                }
                let c = Cancellation {
                    ici: &ici,
                    cancelled: &cancel,
                    noise_part: None,
                };
                for k in 0..k_count {
                    let rho = powers.pilot(l, k);
                    let est = ic_tsp_estimate(&block, &c, &own[k], &book, k, rho);
                    out[k].err_cs += est.mscee();
                }
            }
            for o in out.iter_mut() {
                o.realizations += 1;
            }
        }
        Ok(SimDropRecord {
            drop,
            cell: l,
            ms: out,
            cs_sparsity,
            cs_pilot_len,
            flagged,
        })
    }
}

// ---------------------------------------------------------------------------
// CS calibration

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsCalibration {
    pub antennas: usize,
    pub draws: usize,
    /// Mean of `S / M^2` over draws.
    pub total_ratio: f64,
    /// Mean per-column sparsity divided by `M`.
    pub per_column_ratio: f64,
    /// Mean of `|G_hat - G|^2 / |G|^2` with noise-free OMP at the pilot
    /// length given by the largest per-column sparsity.
    pub nmse: f64,
}

/// Measures sparsity and OMP error of BS-BS channels between the center BS
/// and its first-ring neighbours of a 37-cell layout.
pub fn calibrate_cs(
    m: usize,
    params: &LargeScaleParams,
    accuracy: f64,
    draws: usize,
    seed: u64,
) -> Result<CsCalibration> {
    let layout = HexLayout::from_cell_count(37, 500.0)?;
    let corr = loyka_correlation(m, params.correlation)?;
    let basis = dft_basis(m);
    let streams = Streams::new(seed, u64::MAX);
    let (mut tr, mut pc, mut nm) = (0.0, 0.0, 0.0);
    for i in 0..draws {
        let d = 1 + i % 6;
        let (ar, at) = los_steering(layout.center(0), layout.center(d), m);
        let mut rng = streams.rng(LinkClass::BsBsFading, &[i as u64]);
        let g = BsBsChannel::sample(1.0, params.rician_k, ar, at, &mut rng).to_matrix(&corr);
        let sp = sparsify(&g, &basis, accuracy);
        tr += sp.s as f64 / (m * m) as f64;
        pc += sp.per_column as f64 / m as f64;
        let tau = cs_pilot_length(sp.per_column, m);
        let mut prng = streams.rng(LinkClass::BsPilot, &[i as u64]);
        let pil = gaussian_bs_pilots(m, tau, &mut prng);
        let y = &g * &pil;
        let est = cs_bs_estimate(&y, &pil, 1.0, &basis, sp.per_column, &g);
        nm += est.error.norm_squared() / g.norm_squared();
    }
    let n = draws as f64;
    Ok(CsCalibration {
        antennas: m,
        draws,
        total_ratio: tr / n,
        per_column_ratio: pc / n,
        nmse: nm / n,
    })
}

// ---------------------------------------------------------------------------
// experiments

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Normalised MSCEE, dB.
    Mscee,
    MsceeLmmse,
    /// `E{eps_data} / E{eps}`, percent.
    Dominance,
    /// `P(eps_data / eps >= 0.85)`.
    DominanceP85,
    /// CDF of `eps_data / eps`, emitted as curves.
    DominanceCdf,
    SinrUl,
    SinrCl,
    SinrPd,
    SpectralEfficiency,
    /// `M_T` for the average MS of the population.
    AntennasRequired,
    /// Smallest `T_BS_C` (in units of `T_c`) at which IC-TSP beats TSP.
    CoherenceMin,
    SimMscee,
    SimMsceeLmmse,
    SimSinrUl,
    SimSinrCl,
    SimSinrPd,
    SimSpectralEfficiency,
}

impl Metric {
    pub const ALL: [Metric; 17] = [
        Metric::Mscee,
        Metric::MsceeLmmse,
        Metric::Dominance,
        Metric::DominanceP85,
        Metric::DominanceCdf,
        Metric::SinrUl,
        Metric::SinrCl,
        Metric::SinrPd,
        Metric::SpectralEfficiency,
        Metric::AntennasRequired,
        Metric::CoherenceMin,
        Metric::SimMscee,
        Metric::SimMsceeLmmse,
        Metric::SimSinrUl,
        Metric::SimSinrCl,
        Metric::SimSinrPd,
        Metric::SimSpectralEfficiency,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mscee => "mscee_db",
            Metric::MsceeLmmse => "mscee_lmmse_db",
            Metric::Dominance => "dominance_pct",
            Metric::DominanceP85 => "dominance_p85",
            Metric::DominanceCdf => "dominance_cdf",
            Metric::SinrUl => "sinr_ul_db",
            Metric::SinrCl => "sinr_cl_db",
            Metric::SinrPd => "sinr_pd_db",
            Metric::SpectralEfficiency => "se_bps_hz",
            Metric::AntennasRequired => "antennas_required",
            Metric::CoherenceMin => "bs_coherence_min_tc",
            Metric::SimMscee => "sim_mscee_db",
            Metric::SimMsceeLmmse => "sim_mscee_lmmse_db",
            Metric::SimSinrUl => "sim_sinr_ul_db",
            Metric::SimSinrCl => "sim_sinr_cl_db",
            Metric::SimSinrPd => "sim_sinr_pd_db",
            Metric::SimSpectralEfficiency => "sim_se_bps_hz",
        }
    }

    pub fn from_name(s: &str) -> Option<Metric> {
        Metric::ALL.iter().copied().find(|m| m.name() == s)
    }

    pub fn is_simulated(&self) -> bool {
        matches!(
            self,
            Metric::SimMscee
                | Metric::SimMsceeLmmse
                | Metric::SimSinrUl
                | Metric::SimSinrCl
                | Metric::SimSinrPd
                | Metric::SimSpectralEfficiency
        )
    }

    fn is_sinr(&self) -> bool {
        matches!(
            self,
            Metric::SinrUl
                | Metric::SinrCl
                | Metric::SinrPd
                | Metric::SimSinrUl
                | Metric::SimSinrCl
                | Metric::SimSinrPd
        )
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One curve of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub scheme: Scheme,
    /// Config keys applied on top of the experiment scenario.
    pub overrides: Vec<(String, String)>,
    /// Target UL SINR for the antenna-count metric, dB.
    pub sinr_target_db: Option<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, scheme: Scheme) -> Self {
        Self {
            label: label.into(),
            scheme,
            overrides: Vec::new(),
            sinr_target_db: None,
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.overrides.push((key.to_string(), value.to_string()));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// A single point.
    None,
    /// Values of one config key.
    Key { key: String, values: Vec<f64> },
    /// Normalised MSCEE targets in dB, reached by scaling the DL power of the
    /// interfering cells during estimation.
    MsceeTarget { values_db: Vec<f64> },
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Sweep::None => vec![0.0],
            Sweep::Key { values, .. } => values.clone(),
            Sweep::MsceeTarget { values_db } => values_db.clone(),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Sweep::None => "none",
            Sweep::Key { key, .. } => key,
            Sweep::MsceeTarget { .. } => "mscee_target_db",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: ScenarioConfig,
    pub series: Vec<Series>,
    pub sweep: Sweep,
    pub metrics: Vec<Metric>,
    pub drops: usize,
    pub seed: u64,
    pub workers: usize,
    /// Run the signal-level chain for simulated metrics.
    pub signal: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.drops == 0 {
            return Err(invalid("drops", "at least one drop is required"));
        }
        if self.sweep.values().is_empty() {
            return Err(invalid("sweep", "grid is empty"));
        }
        if self.series.is_empty() {
            return Err(invalid("series", "at least one series is required"));
        }
        Ok(())
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Integer-valued keys need integer literals, others accept either.
fn override_value(cfg: &ScenarioConfig, key: &str, v: f64) -> Result<ScenarioConfig> {
    cfg.with_override(key, &format_value(v))
        .or_else(|_| cfg.with_override(key, &format!("{v:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Formula,
    Simulation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub series: String,
    pub sweep_value: f64,
    pub metric: Metric,
    /// Set for the companion SINR rows averaged with the other convention.
    pub alternate: bool,
    pub source: Source,
    pub estimate: Estimate,
}

impl ReportRow {
    /// Column label: metric, convention suffix and series.
    pub fn label(&self) -> String {
        let suffix = if self.alternate { "_alt" } else { "" };
        format!("{}{}@{}", self.metric.name(), suffix, self.series)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdfCurve {
    pub series: String,
    pub sweep_value: f64,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub experiment: String,
    pub sweep_label: String,
    pub rows: Vec<ReportRow>,
    pub cdfs: Vec<CdfCurve>,
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.cdfs.is_empty()
    }

    pub fn find(&self, metric: Metric, series: &str, sweep_value: f64) -> Option<&Estimate> {
        self.rows
            .iter()
            .find(|r| {
                !r.alternate
                    && r.metric == metric
                    && r.series == series
                    && r.sweep_value == sweep_value
            })
            .map(|r| &r.estimate)
    }

    pub fn series_values(&self, metric: Metric, series: &str) -> Vec<(f64, Estimate)> {
        self.rows
            .iter()
            .filter(|r| !r.alternate && r.metric == metric && r.series == series)
            .map(|r| (r.sweep_value, r.estimate))
            .collect()
    }
}

/// The records do not depend on the keys reset here, so drops are shared
/// across their values.
fn drop_config(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut c = cfg.clone();
    let d = ScenarioConfig::default();
    c.system.antennas = d.system.antennas;
    c.system.sectors = d.system.sectors;
    c.system.precoder = d.system.precoder;
    c.system.sinr_averaging = d.system.sinr_averaging;
    c.system.estimator = d.system.estimator;
    c.frame.bs_coherence_symbols = d.frame.bs_coherence_symbols;
    c.ic.bsbs_method = d.ic.bsbs_method;
    c.ic.cs_accuracy = d.ic.cs_accuracy;
    c.ic.cs_sparsity_mode = d.ic.cs_sparsity_mode;
    c.ic.cs_sparsity = d.ic.cs_sparsity;
    c.ic.cs_nmse = d.ic.cs_nmse;
    c.sim = d.sim;
    c
}

/// Runs experiments, sharing drops between grid points with the same
/// large-scale configuration.
pub struct Runner {
    pool: rayon::ThreadPool,
    drops: HashMap<(String, u64, usize), Arc<Vec<DropRecord>>>,
    sims: HashMap<String, Arc<Vec<SimDropRecord>>>,
}

impl Runner {
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?;
        Ok(Self {
            pool,
            drops: HashMap::new(),
            sims: HashMap::new(),
        })
    }

    pub fn records(
        &mut self,
        cfg: &ScenarioConfig,
        seed: u64,
        drops: usize,
    ) -> Result<Arc<Vec<DropRecord>>> {
        let base = drop_config(cfg);
        let key = (base.to_flat_string(), seed, drops);
        if let Some(r) = self.drops.get(&key) {
            return Ok(r.clone());
        }
        let sc = Scenario::new(&base)?;
        let recs: Vec<DropRecord> = self.pool.install(|| {
            (0..drops as u64)
                .into_par_iter()
                .map(|d| sc.run_drop(seed, d))
                .collect::<Result<Vec<_>>>()
        })?;
        let recs = Arc::new(recs);
        self.drops.insert(key, recs.clone());
        Ok(recs)
    }

    pub fn simulations(
        &mut self,
        cfg: &ScenarioConfig,
        seed: u64,
        opts: &SimOptions,
    ) -> Result<Arc<Vec<SimDropRecord>>> {
        let key = format!("{}|{seed}|{opts:?}", cfg.to_flat_string());
        if let Some(r) = self.sims.get(&key) {
            return Ok(r.clone());
        }
        let sc = Scenario::new(cfg)?;
        let n = cfg.sim.signal_drops as u64;
        let recs: Vec<SimDropRecord> = self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|d| sc.simulate_drop(seed, d, opts))
                .collect::<Result<Vec<_>>>()
        })?;
        let recs = Arc::new(recs);
        self.sims.insert(key, recs.clone());
        Ok(recs)
    }

    pub fn run(&mut self, spec: &ExperimentSpec) -> Result<MetricsReport> {
        spec.validate()?;
        let mut report = MetricsReport {
            experiment: spec.name.clone(),
            sweep_label: spec.sweep.label().to_string(),
            ..Default::default()
        };
        for series in &spec.series {
            let mut base = spec.scenario.clone();
            for (k, v) in &series.overrides {
                base = base.with_override(k, v)?;
            }
            for x in spec.sweep.values() {
                let cfg = match &spec.sweep {
                    Sweep::Key { key, .. } => override_value(&base, key, x)?,
                    _ => base.clone(),
                };
                self.point(spec, series, &cfg, x, &mut report)?;
            }
        }
        Ok(report)
    }

    fn point(
        &mut self,
        spec: &ExperimentSpec,
        series: &Series,
        cfg: &ScenarioConfig,
        x: f64,
        report: &mut MetricsReport,
    ) -> Result<()> {
        let recs = self.records(cfg, spec.seed, spec.drops)?;
        let mut pt = EvalPoint::from_config(cfg, series.scheme);
        if series.scheme.is_ic() && pt.w_t == 0.0 {
            report.notes.push(format!(
                "{} at {x}: BS pilot stage does not fit in T_BS_C; resource ratio clamped to 0",
                series.label
            ));
        }
        if let Sweep::MsceeTarget { .. } = spec.sweep {
            let s = solve_dl_scale(&recs, &pt, 10f64.powf(x / 10.0));
            if s == 0.0 {
                report.notes.push(format!(
                    "{}: MSCEE target {x} dB lies below the interference-free floor; DL scaling clamped to 0",
                    series.label
                ));
            }
            pt.dl_scale = s;
        }
        let n = recs.iter().map(|d| d.ms.len()).sum::<usize>();
        let row = |metric: Metric, source: Source, alternate: bool, estimate: Estimate| ReportRow {
            series: series.label.clone(),
            sweep_value: x,
            metric,
            alternate,
            source,
            estimate,
        };
        let zf = cfg.system.precoder == Precoder::Zf;
        let lmmse_primary = cfg.system.estimator == Estimator::Lmmse;
        for &metric in &spec.metrics {
            if metric.is_simulated() {
                continue;
            }
            // there is no ZF closed form
            if zf
                && (metric.is_sinr()
                    || matches!(
                        metric,
                        Metric::SpectralEfficiency
                            | Metric::AntennasRequired
                            | Metric::CoherenceMin
                    ))
            {
                continue;
            }
            match metric {
                Metric::DominanceCdf => {
                    report.cdfs.push(CdfCurve {
                        series: series.label.clone(),
                        sweep_value: x,
                        points: dominance_cdf(&recs),
                    });
                }
                Metric::SinrUl | Metric::SinrCl | Metric::SinrPd => {
                    let f = |r: &MsRecord| match metric {
                        Metric::SinrUl => pt.sinr_ul(r),
                        Metric::SinrCl => pt.sinr_cl(r),
                        _ => pt.sinr_pd(r),
                    };
                    let linear = cfg.system.sinr_averaging == SinrAveraging::Linear;
                    let lin = per_ms_mean(&recs, n, |r| f(r), true);
                    let dbm = per_ms_mean(&recs, n, |r| db(f(r)), false);
                    let (a, b) = if linear { (lin, dbm) } else { (dbm, lin) };
                    report.rows.push(row(metric, Source::Formula, false, a));
                    report.rows.push(row(metric, Source::Formula, true, b));
                }
                Metric::CoherenceMin => {
                    if !series.scheme.is_ic() {
                        continue;
                    }
                    let tsp = EvalPoint {
                        scheme: Scheme::Tsp,
                        w_t: 1.0,
                        ..pt
                    };
                    let overhead = cfg.bs_pilot_overhead(cfg.system.antennas);
                    let fc = cfg.frame.coherence_subcarriers;
                    let tc = cfg.frame.coherence_symbols as f64;
                    let per_drop: Vec<Vec<f64>> = recs
                        .iter()
                        .map(|d| {
                            let mut s = vec![0.0, 0.0];
                            for r in &d.ms {
                                s[0] += (1.0 + tsp.sinr_ul(r)).log2();
                                s[1] += (1.0 + pt.sinr_ul(r)).log2();
                            }
                            s
                        })
                        .collect();
                    let e = jackknife(&per_drop, n, |t| {
                        if t[1] > t[0] {
                            overhead / (fc as f64 * (1.0 - t[0] / t[1])) / tc
                        } else {
                            f64::INFINITY
                        }
                    });
                    report.rows.push(row(metric, Source::Formula, false, e));
                }
                _ => {
                    let e = analytic_metric(
                        metric,
                        &recs,
                        &pt,
                        n,
                        series.sinr_target_db,
                        lmmse_primary,
                    )?;
                    report.rows.push(row(metric, Source::Formula, false, e));
                }
            }
        }
        let wants_sim = spec.metrics.iter().any(|m| m.is_simulated());
        if wants_sim && spec.signal && cfg.sim.signal_drops > 0 {
            let sc = Scenario::new(cfg)?;
            if !sc.signal_allowed() {
                report.notes.push(format!(
                    "{} at {x}: M = {} exceeds sim.max_signal_antennas, simulated metrics skipped",
                    series.label, cfg.system.antennas
                ));
                return Ok(());
            }
            let opts = SimOptions {
                realizations: cfg.sim.realizations,
                target: 0,
                dl_scale: pt.dl_scale,
                ic: series.scheme == Scheme::IcLs,
                cs: series.scheme == Scheme::IcCs,
            };
            let sims = self.simulations(cfg, spec.seed, &opts)?;
            let ns = sims.iter().map(|d| d.ms.len()).sum::<usize>();
            for &metric in &spec.metrics {
                if !metric.is_simulated() {
                    continue;
                }
                if series.scheme.is_ic()
                    && !matches!(metric, Metric::SimMscee | Metric::SimMsceeLmmse)
                {
                    continue;
                }
                // the CS chain has no LMMSE counterpart
                if series.scheme == Scheme::IcCs && metric == Metric::SimMsceeLmmse {
                    continue;
                }
                let rows = sim_metric(
                    metric,
                    &sims,
                    ns,
                    series.scheme,
                    &pt,
                    cfg.system.sinr_averaging,
                );
                for (alt, e) in rows {
                    report.rows.push(row(metric, Source::Simulation, alt, e));
                }
            }
        }
        Ok(())
    }
}

/// Mean over MSs, optionally converted to dB after averaging.
fn per_ms_mean(
    recs: &[DropRecord],
    n: usize,
    f: impl Fn(&MsRecord) -> f64,
    to_db: bool,
) -> Estimate {
    let per_drop: Vec<Vec<f64>> = recs
        .iter()
        .map(|d| {
            let mut s = vec![0.0, d.ms.len() as f64];
            for r in &d.ms {
                s[0] += f(r);
            }
            s
        })
        .collect();
    jackknife(&per_drop, n, |t| {
        let m = t[0] / t[1];
        if to_db {
            db(m)
        } else {
            m
        }
    })
}

/// DL scaling that brings the population's normalised MSCEE to `target`.
pub fn solve_dl_scale(recs: &[DropRecord], pt: &EvalPoint, target: f64) -> f64 {
    let base = EvalPoint {
        dl_scale: 1.0,
        ..*pt
    };
    let (mut fixed, mut scaled, mut beta) = (0.0, 0.0, 0.0);
    for d in recs {
        for r in &d.ms {
            let b = base.mscee(r);
            let s = b.data + b.data_residual + b.noise_residual;
            fixed += b.total() - s;
            scaled += s;
            beta += r.beta;
        }
    }
    if scaled <= 0.0 {
        return 0.0;
    }
    ((target * beta - fixed) / scaled).max(0.0)
}

fn analytic_metric(
    metric: Metric,
    recs: &[DropRecord],
    pt: &EvalPoint,
    n: usize,
    sinr_target_db: Option<f64>,
    lmmse_primary: bool,
) -> Result<Estimate> {
    let sums = |f: &dyn Fn(&MsRecord) -> Vec<f64>| -> Vec<Vec<f64>> {
        recs.iter()
            .map(|d| {
                let mut acc: Vec<f64> = Vec::new();
                for r in &d.ms {
                    let v = f(r);
                    if acc.is_empty() {
                        acc = vec![0.0; v.len()];
                    }
                    for (a, b) in acc.iter_mut().zip(v) {
                        *a += b;
                    }
                }
                acc
            })
            .collect()
    };
    Ok(match metric {
        Metric::Mscee | Metric::MsceeLmmse => {
            let shrink = metric == Metric::MsceeLmmse || (lmmse_primary && metric == Metric::Mscee);
            let pd = sums(&|r| {
                let b = pt.mscee(r);
                let e = if shrink { b.shrunk(r.beta) } else { b.total() };
                vec![e, r.beta]
            });
            jackknife(&pd, n, normalized_db)
        }
        Metric::Dominance => {
            let pd = sums(&|r| {
                let b = pt.mscee(r);
                vec![b.data, b.total()]
            });
            jackknife(&pd, n, |t| 100.0 * t[0] / t[1])
        }
        Metric::DominanceP85 => {
            let pd = sums(&|r| {
                let b = pt.mscee(r);
                let t = b.total();
                let ratio = if t > 0.0 { b.data / t } else { 0.0 };
                vec![if ratio >= 0.85 { 1.0 } else { 0.0 }, 1.0]
            });
            jackknife(&pd, n, |t| t[0] / t[1])
        }
        Metric::SpectralEfficiency => per_ms_mean(recs, n, |r| pt.spectral_efficiency(r), false),
        Metric::AntennasRequired => {
            let target = 10f64.powf(sinr_target_db.unwrap_or(10.0) / 10.0);
            let pd = sums(&|r| vec![r.beta, pt.mscee(r).total(), r.ul.corr, r.ul.varsigma, 1.0]);
            jackknife(&pd, n, |t| {
                let terms = UlTerms {
                    beta: t[0] / t[4],
                    corr: t[2] / t[4],
                    varsigma: t[3] / t[4],
                };
                antennas_required(target, &terms, t[1] / t[4]).map_or(f64::INFINITY, |a| a.m_t)
            })
        }
        other => {
            return Err(invalid(
                "metric",
                format!("{other} is not an analytic scalar"),
            ))
        }
    })
}

fn sim_metric(
    metric: Metric,
    sims: &[SimDropRecord],
    n: usize,
    scheme: Scheme,
    pt: &EvalPoint,
    averaging: SinrAveraging,
) -> Vec<(bool, Estimate)> {
    let pd_of = |f: &dyn Fn(&SimMsRecord) -> [f64; 2]| -> Vec<Vec<f64>> {
        sims.iter()
            .map(|d| {
                let mut s = vec![0.0, 0.0];
                for r in &d.ms {
                    let v = f(r);
                    s[0] += v[0];
                    s[1] += v[1];
                }
                s
            })
            .collect()
    };
    match metric {
        Metric::SimMscee | Metric::SimMsceeLmmse => {
            let lm = metric == Metric::SimMsceeLmmse;
            let pd = pd_of(&|r| {
                let e = match (scheme, lm) {
                    (Scheme::Tsp, false) => r.err_tsp,
                    (Scheme::Tsp, true) => r.err_tsp_lmmse,
                    (Scheme::IcLs, false) => r.err_ic,
                    (Scheme::IcLs, true) => r.err_ic_lmmse,
                    (Scheme::IcCs, _) => r.err_cs,
                };
                [e / r.realizations as f64, r.beta]
            });
            vec![(false, jackknife(&pd, n, normalized_db))]
        }
        Metric::SimSinrUl | Metric::SimSinrCl | Metric::SimSinrPd => {
            let f = |r: &SimMsRecord| match metric {
                Metric::SimSinrUl => r.sinr_ul(),
                Metric::SimSinrCl => r.sinr_cl(),
                _ => r.sinr_pd(),
            };
            let lin = jackknife(&pd_of(&|r| [f(r), 1.0]), n, |t| db(t[0] / t[1]));
            let dbm = jackknife(&pd_of(&|r| [db(f(r)), 1.0]), n, |t| t[0] / t[1]);
            if averaging == SinrAveraging::Linear {
                vec![(false, lin), (true, dbm)]
            } else {
                vec![(false, dbm), (true, lin)]
            }
        }
        Metric::SimSpectralEfficiency => {
            let pd = pd_of(&|r| [spectral_efficiency(r.sinr_ul(), pt.w_p, pt.w_t), 1.0]);
            vec![(false, jackknife(&pd, n, |t| t[0] / t[1]))]
        }
        _ => Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// presets

pub const PRESETS: [&str; 9] = [
    "table2", "fig2", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10",
];

fn mscee_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let mut scenario = ScenarioConfig::default();
    let base = |name: &str, scenario: ScenarioConfig, series, sweep, metrics| ExperimentSpec {
        name: name.to_string(),
        scenario,
        series,
        sweep,
        metrics,
        drops: 1000,
        seed: 1,
        workers: 1,
        signal: true,
    };
    let spec = match name {
        "table2" => {
            scenario.sim.signal_drops = 4;
            scenario.sim.realizations = 10;
            base(
                name,
                scenario,
                vec![Series::new("LS+MF", Scheme::Tsp)],
                Sweep::Key {
                    key: "groups.count".into(),
                    values: vec![1.0, 3.0, 4.0, 7.0, 9.0, 12.0],
                },
                vec![
                    Metric::Mscee,
                    Metric::MsceeLmmse,
                    Metric::Dominance,
                    Metric::SimMscee,
                    Metric::SimMsceeLmmse,
                ],
            )
        }
        "fig2" => base(
            name,
            scenario,
            vec![Series::new("TSP", Scheme::Tsp)],
            Sweep::Key {
                key: "channel.shadowing_db".into(),
                values: vec![4.0, 6.0, 8.0],
            },
            vec![
                Metric::DominanceCdf,
                Metric::DominanceP85,
                Metric::Dominance,
            ],
        ),
        "fig4" => {
            scenario.sim.signal_drops = 4;
            scenario.sim.realizations = 10;
            base(
                name,
                scenario,
                vec![
                    Series::new("M=128", Scheme::Tsp).with("system.antennas", 128),
                    Series::new("M=1024", Scheme::Tsp).with("system.antennas", 1024),
                ],
                Sweep::MsceeTarget {
                    values_db: mscee_grid(-20.0, 10.0, 2.5),
                },
                vec![
                    Metric::SinrUl,
                    Metric::SinrCl,
                    Metric::SinrPd,
                    Metric::SimSinrUl,
                    Metric::SimSinrCl,
                    Metric::SimSinrPd,
                ],
            )
        }
        "fig5" => {
            scenario.sim.signal_drops = 4;
            scenario.sim.realizations = 10;
            let mut series = Vec::new();
            for m in [128, 1024] {
                series.push(
                    Series::new(format!("MF uniform M={m}"), Scheme::Tsp)
                        .with("system.antennas", m),
                );
                series.push(
                    Series::new(format!("MF pathloss M={m}"), Scheme::Tsp)
                        .with("system.antennas", m)
                        .with("power.policy", "pathloss"),
                );
            }
            series.push(
                Series::new("ZF uniform M=128", Scheme::Tsp)
                    .with("system.antennas", 128)
                    .with("system.precoder", "zf"),
            );
            base(
                name,
                scenario,
                series,
                Sweep::MsceeTarget {
                    values_db: mscee_grid(-20.0, 10.0, 5.0),
                },
                vec![Metric::SinrUl, Metric::SimSinrUl],
            )
        }
        "fig6" => {
            let series = [5.0, 10.0, 15.0]
                .iter()
                .map(|&t| Series {
                    sinr_target_db: Some(t),
                    ..Series::new(format!("target={t}dB"), Scheme::Tsp)
                })
                .collect();
            base(
                name,
                scenario,
                series,
                Sweep::MsceeTarget {
                    values_db: mscee_grid(-20.0, 10.0, 2.5),
                },
                vec![Metric::AntennasRequired],
            )
        }
        "fig7" => {
            scenario.layout.cells = 61;
            scenario.system.antennas = 128;
            scenario.sim.signal_drops = 3;
            scenario.sim.realizations = 4;
            let mut series = Vec::new();
            for g in [3, 7] {
                for (label, scheme) in [
                    ("TSP", Scheme::Tsp),
                    ("IC-TSP LS", Scheme::IcLs),
                    ("IC-TSP CS", Scheme::IcCs),
                ] {
                    series.push(
                        Series::new(format!("{label} G={g}"), scheme)
                            .with("groups.count", g)
                            .with("sim.signal_drops", 0),
                    );
                }
                for (label, scheme) in [
                    ("TSP", Scheme::Tsp),
                    ("IC-TSP LS", Scheme::IcLs),
                    ("IC-TSP CS", Scheme::IcCs),
                ] {
                    series.push(
                        Series::new(format!("{label} G={g} M=64"), scheme)
                            .with("groups.count", g)
                            .with("system.antennas", 64),
                    );
                }
            }
            base(
                name,
                scenario,
                series,
                Sweep::Key {
                    key: "ic.cluster_size".into(),
                    values: vec![6.0, 18.0, 36.0],
                },
                vec![
                    Metric::Mscee,
                    Metric::MsceeLmmse,
                    Metric::SimMscee,
                    Metric::SimMsceeLmmse,
                ],
            )
        }
        "fig8" => {
            let mut series = Vec::new();
            for m in [128, 256, 1024] {
                series.push(
                    Series::new(format!("TSP M={m}"), Scheme::Tsp).with("system.antennas", m),
                );
                series.push(
                    Series::new(format!("IC-TSP M={m}"), Scheme::IcLs).with("system.antennas", m),
                );
            }
            let tc = scenario.frame.coherence_symbols as f64;
            base(
                name,
                scenario,
                series,
                Sweep::Key {
                    key: "frame.bs_coherence_symbols".into(),
                    values: [5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 300.0, 400.0, 500.0]
                        .iter()
                        .map(|x| x * tc)
                        .collect(),
                },
                vec![Metric::SpectralEfficiency, Metric::CoherenceMin],
            )
        }
        "fig9" => {
            scenario.sim.signal_drops = 2;
            scenario.sim.realizations = 4;
            let mut series = vec![
                Series::new("TSP MF", Scheme::Tsp),
                Series::new("IC-TSP L_D=18 MF", Scheme::IcLs),
                Series::new("IC-TSP L_D=36 MF", Scheme::IcLs).with("ic.cluster_size", 36),
            ];
            series.push(Series::new("TSP ZF", Scheme::Tsp).with("system.precoder", "zf"));
            base(
                name,
                scenario,
                series,
                Sweep::Key {
                    key: "system.antennas".into(),
                    values: vec![64.0, 128.0, 256.0, 512.0, 1024.0, 2048.0, 4096.0, 8192.0],
                },
                vec![Metric::SpectralEfficiency, Metric::SimSpectralEfficiency],
            )
        }
        "fig10" => {
            let series = vec![
                Series::new("TSP d=1", Scheme::Tsp),
                Series::new("TSP d=3", Scheme::Tsp).with("system.sectors", 3),
                Series::new("IC-TSP LS d=1", Scheme::IcLs),
                Series::new("IC-TSP LS d=3", Scheme::IcLs).with("system.sectors", 3),
                Series::new("IC-TSP CS d=1", Scheme::IcCs).with("ic.bsbs_method", "cs"),
                Series::new("IC-TSP CS data-pilot d=1", Scheme::IcCs)
                    .with("ic.bsbs_method", "cs_data_as_pilot"),
                Series::new("IC-TSP CS d=3", Scheme::IcCs)
                    .with("ic.bsbs_method", "cs")
                    .with("system.sectors", 3),
            ];
            base(
                name,
                scenario,
                series,
                Sweep::Key {
                    key: "system.antennas".into(),
                    values: vec![
                        96.0, 192.0, 384.0, 768.0, 1536.0, 3072.0, 6144.0, 12288.0, 24576.0,
                        30000.0,
                    ],
                },
                vec![Metric::SpectralEfficiency],
            )
        }
        other => return Err(invalid("preset", format!("unknown preset `{other}`"))),
    };
    Ok(spec)
}
