//! MS-BS and BS-BS channel estimators and the inter-group interference
//! cancellation step of IC-TSP.

use crate::channel::{CMatrix, CVector};
use crate::error::{Error, Result};
use crate::signals::{BsPilotBlock, PilotBook, ReceivedPilotBlock};
use num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Pilot,
    Data,
    Noise,
    DataOthers,
    DataResidual,
    NoiseResidual,
    /// Bias introduced by shrinking the estimate.
    Shrinkage,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub estimate: CVector,
    pub error: CVector,
    pub terms: Vec<(Term, CVector)>,
}

impl EstimationResult {
    pub fn mscee(&self) -> f64 {
        self.error.norm_squared() / self.error.len() as f64
    }

    pub fn term(&self, t: Term) -> Option<&CVector> {
        self.terms.iter().find(|(k, _)| *k == t).map(|(_, v)| v)
    }

    pub fn term_power(&self, t: Term) -> f64 {
        self.term(t)
            .map_or(0.0, |v| v.norm_squared() / v.len() as f64)
    }

    pub fn terms_sum(&self) -> CVector {
        let mut s = CVector::zeros(self.error.len());
        for (_, v) in &self.terms {
            s += v;
        }
        s
    }
}

fn project(block: &CMatrix, psi_h: &CVector, scale: f64) -> CVector {
    block * psi_h * Complex64::new(scale, 0.0)
}

fn sum_blocks<'a>(m: usize, n: usize, it: impl Iterator<Item = &'a CMatrix>) -> CMatrix {
    let mut s = CMatrix::zeros(m, n);
    for b in it {
        s += b;
    }
    s
}

/// `g_hat = y psi_k^H / (N sqrt(rho))` with the error split by origin.
pub fn ls_estimate(
    block: &ReceivedPilotBlock,
    truth: &CVector,
    book: &PilotBook,
    k: usize,
    rho: f64,
) -> EstimationResult {
    let psi_h = book.conj_column(k);
    let scale = 1.0 / (book.len() as f64 * rho.sqrt());
    let (m, n) = block.y.shape();
    let estimate = project(&block.y, &psi_h, scale);
    let own_leak = project(&block.target, &psi_h, scale) - truth;
    let intra = sum_blocks(m, n, block.intra_group.iter().map(|(_, b)| b));
    let pilot = project(&intra, &psi_h, scale) + own_leak;
    let data = project(&block.inter_group_total(), &psi_h, scale);
    let noise = project(&block.noise, &psi_h, scale);
    let error = &estimate - truth;
    EstimationResult {
        estimate,
        error,
        terms: vec![
            (Term::Pilot, pilot),
            (Term::Data, data),
            (Term::Noise, noise),
        ],
    }
}

/// Per-user Wiener shrinkage `beta / (beta + eps)` applied to an LS estimate.
pub fn lmmse_surrogate(
    ls: &EstimationResult,
    truth: &CVector,
    beta: f64,
    eps: f64,
) -> EstimationResult {
    let c = if beta + eps > 0.0 {
        beta / (beta + eps)
    } else {
        0.0
    };
    let cc = Complex64::new(c, 0.0);
    let estimate = &ls.estimate * cc;
    let mut terms: Vec<(Term, CVector)> = ls.terms.iter().map(|(t, v)| (*t, v * cc)).collect();
    terms.push((Term::Shrinkage, truth * Complex64::new(c - 1.0, 0.0)));
    EstimationResult {
        error: &estimate - truth,
        estimate,
        terms,
    }
}

// ---------------------------------------------------------------------------
// BS-BS estimation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsBsMethod {
    Ls,
    CsOmp,
}

#[derive(Debug, Clone)]
pub struct BsBsEstimate {
    pub estimate: CMatrix,
    pub error: CMatrix,
    /// Part of `error` caused by receiver noise, when it can be separated.
    pub noise_error: Option<CMatrix>,
    pub method: BsBsMethod,
    pub tau: usize,
    pub sparsity: Option<usize>,
    /// Set when OMP had to discard an ill-conditioned atom.
    pub flagged: bool,
}

/// `G_hat = Y P^H / (M sqrt(rho))` for orthogonal pilots with `P P^H = M I`.
pub fn ls_bs_estimate(
    block: &BsPilotBlock,
    pilots: &CMatrix,
    rho: f64,
    truth: &CMatrix,
) -> BsBsEstimate {
    let m = pilots.nrows();
    let s = Complex64::new(1.0 / (m as f64 * rho.sqrt()), 0.0);
    let ph = pilots.adjoint();
    let estimate = &block.y * &ph * s;
    let noise_error = &block.noise * &ph * s;
    BsBsEstimate {
        error: &estimate - truth,
        estimate,
        noise_error: Some(noise_error),
        method: BsBsMethod::Ls,
        tau: pilots.ncols(),
        sparsity: None,
        flagged: false,
    }
}

/// Unitary DFT matrix.
pub fn dft_basis(m: usize) -> CMatrix {
    let s = 1.0 / (m as f64).sqrt();
    CMatrix::from_fn(m, m, |r, c| {
        Complex64::from_polar(s, -2.0 * PI * ((r * c) % m) as f64 / m as f64)
    })
}

#[derive(Debug, Clone)]
pub struct Sparsity {
    /// `A^H G^H A`
    pub transformed: CMatrix,
    /// `(row, col)` of the retained entries, largest first.
    pub support: Vec<(usize, usize)>,
    /// Number of retained entries.
    pub s: usize,
    /// Largest number of retained entries in one column.
    pub per_column: usize,
}

/// Smallest set of largest-magnitude entries of the angular-domain channel
/// holding at least `accuracy` of its energy.
pub fn sparsify(g: &CMatrix, basis: &CMatrix, accuracy: f64) -> Sparsity {
    let transformed = basis.adjoint() * g.adjoint() * basis;
    let (rows, cols) = transformed.shape();
    let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            entries.push((transformed[(r, c)].norm_sqr(), r, c));
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let total: f64 = entries.iter().map(|e| e.0).sum();
    let mut support = Vec::new();
    let mut acc = 0.0;
    if total > 0.0 {
        // relative slack so that F = 1 is reachable despite rounding
        let goal = accuracy * total * (1.0 - 1e-12);
        for &(e, r, c) in &entries {
            if acc >= goal || e == 0.0 {
                break;
            }
            acc += e;
            support.push((r, c));
        }
    }
    let mut counts = vec![0usize; cols];
    for &(_, c) in &support {
        counts[c] += 1;
    }
    Sparsity {
        s: support.len(),
        per_column: counts.into_iter().max().unwrap_or(0),
        transformed,
        support,
    }
}

/// Pilot length `ceil(S log2(2M/S))`, at least 1.
pub fn cs_pilot_length(s: usize, m: usize) -> usize {
    if s == 0 {
        return 1;
    }
    let s_f = s as f64;
    let t = (s_f * (2.0 * m as f64 / s_f).log2()).ceil();
    (t.max(1.0) as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct OmpResult {
    pub coefficients: CVector,
    pub support: Vec<usize>,
    pub flagged: bool,
}

/// Orthogonal matching pursuit for `y = Phi x` with at most `max_atoms` atoms.
pub fn omp(phi: &CMatrix, y: &CVector, max_atoms: usize) -> OmpResult {
    let gram = phi.adjoint() * phi;
    omp_gram(&gram, &(phi.adjoint() * y), y.norm_squared(), max_atoms)
}

/// OMP on the normal equations: `gram = Phi^H Phi`, `b = Phi^H y`,
/// `y2 = |y|^2`. The Gram matrix is shared when many right-hand sides use
/// the same dictionary.
fn omp_gram(gram: &CMatrix, b: &CVector, y2: f64, max_atoms: usize) -> OmpResult {
    let n = gram.ncols();
    let mut x = CVector::zeros(n);
    let mut support: Vec<usize> = Vec::new();
    let mut flagged = false;
    if y2 == 0.0 || max_atoms == 0 {
        return OmpResult {
            coefficients: x,
            support,
            flagged,
        };
    }
    let norms: Vec<f64> = (0..n).map(|i| gram[(i, i)].re.max(0.0).sqrt()).collect();
    let mut banned = vec![false; n];
    let mut corr = b.clone();
    let mut coef = CVector::zeros(0);
    // |y - Phi_S c|^2 = |y|^2 - Re(b_S^H c) for the LS solution
    let mut res2 = y2;
    while support.len() < max_atoms && res2 > 1e-12 * y2 {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if banned[i] || norms[i] == 0.0 || support.contains(&i) {
                continue;
            }
            let v = corr[i].norm() / norms[i];
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, i));
            }
        }
        let Some((_, pick)) = best else { break };
        support.push(pick);
        let s = support.len();
        let sub = CMatrix::from_fn(s, s, |r, c| gram[(support[r], support[c])]);
        let rhs = CVector::from_fn(s, |r, _| b[support[r]]);
        let solved = sub
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .filter(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        match solved {
            Some(c) => coef = c,
            None => {
                support.pop();
                banned[pick] = true;
                flagged = true;
                continue;
            }
        }
        corr = b.clone();
        for (k, &sk) in support.iter().enumerate() {
            corr.axpy(-coef[k], &gram.column(sk), Complex64::new(1.0, 0.0));
        }
        res2 = y2 - rhs.dotc(&coef).re;
    }
    for (i, &s) in support.iter().enumerate() {
        x[s] = coef[i];
    }
    OmpResult {
        coefficients: x,
        support,
        flagged,
    }
}

/// CS estimate of `G_ld` from `Y = sqrt(rho) G P + J`, solving the angular
/// system `Y^H A = (sqrt(rho) P^H A) G_bar + J_bar` column by column.
pub fn cs_bs_estimate(
    y: &CMatrix,
    pilots: &CMatrix,
    rho: f64,
    basis: &CMatrix,
    max_atoms: usize,
    truth: &CMatrix,
) -> BsBsEstimate {
    let m = pilots.nrows();
    let y_bar = y.adjoint() * basis;
    let p_bar = pilots.adjoint() * basis * Complex64::new(rho.sqrt(), 0.0);
    let gram = p_bar.adjoint() * &p_bar;
    let rhs = p_bar.adjoint() * &y_bar;
    let mut g_bar = CMatrix::zeros(m, m);
    let mut flagged = false;
    for c in 0..m {
        let b = rhs.column(c).into_owned();
        let y2 = y_bar.column(c).norm_squared();
        let r = omp_gram(&gram, &b, y2, max_atoms.min(pilots.ncols()));
        flagged |= r.flagged;
        g_bar.set_column(c, &r.coefficients);
    }
    let estimate = (basis * g_bar * basis.adjoint()).adjoint();
    BsBsEstimate {
        error: &estimate - truth,
        estimate,
        noise_error: None,
        method: BsBsMethod::CsOmp,
        tau: pilots.ncols(),
        sparsity: Some(max_atoms),
        flagged,
    }
}

// ---------------------------------------------------------------------------
// interference cancellation

/// `sum_d G_hat_ld V_d` over the cancelled cells, where `V_d` is the precoded
/// DL block of cell `d`.
pub fn estimate_ici(
    cancelled: &[usize],
    estimates: &[(usize, &CMatrix)],
    transmitted: &[(usize, &CMatrix)],
    m: usize,
    n: usize,
) -> Result<CMatrix> {
    let mut ici = CMatrix::zeros(m, n);
    for &d in cancelled {
        let g = estimates
            .iter()
            .find(|(c, _)| *c == d)
            .ok_or_else(|| Error::Degenerate(format!("no BS-BS estimate for cluster cell {d}")))?
            .1;
        let v = transmitted
            .iter()
            .find(|(c, _)| *c == d)
            .ok_or_else(|| Error::Degenerate(format!("no DL block shared by cluster cell {d}")))?
            .1;
        ici += g * v;
    }
    Ok(ici)
}

/// Inputs describing what was cancelled from the pilot block.
pub struct Cancellation<'a> {
    pub ici: &'a CMatrix,
    pub cancelled: &'a [usize],
    /// `sum_d E_noise,ld V_d`, if the noise share of the BS-BS errors is known.
    pub noise_part: Option<&'a CMatrix>,
}

/// LS estimate on `y - ICI` with the five-way error split.
pub fn ic_tsp_estimate(
    block: &ReceivedPilotBlock,
    cancel: &Cancellation<'_>,
    truth: &CVector,
    book: &PilotBook,
    k: usize,
    rho: f64,
) -> EstimationResult {
    let psi_h = book.conj_column(k);
    let scale = 1.0 / (book.len() as f64 * rho.sqrt());
    let (m, n) = block.y.shape();
    let estimate = project(&(&block.y - cancel.ici), &psi_h, scale);
    let own_leak = project(&block.target, &psi_h, scale) - truth;
    let intra = sum_blocks(m, n, block.intra_group.iter().map(|(_, b)| b));
    let pilot = project(&intra, &psi_h, scale) + own_leak;
    let others = sum_blocks(
        m,
        n,
        block
            .inter_group
            .iter()
            .filter(|(d, _)| !cancel.cancelled.contains(d))
            .map(|(_, b)| b),
    );
    let inside = sum_blocks(
        m,
        n,
        block
            .inter_group
            .iter()
            .filter(|(d, _)| cancel.cancelled.contains(d))
            .map(|(_, b)| b),
    );
    let residual = project(&(inside - cancel.ici), &psi_h, scale);
    let noise_residual = match cancel.noise_part {
        Some(np) => project(np, &psi_h, -scale),
        None => CVector::zeros(m),
    };
    let data_residual = &residual - &noise_residual;
    let noise = project(&block.noise, &psi_h, scale);
    let data_others = project(&others, &psi_h, scale);
    EstimationResult {
        error: &estimate - truth,
        estimate,
        terms: vec![
            (Term::Pilot, pilot),
            (Term::DataOthers, data_others),
            (Term::DataResidual, data_residual),
            (Term::NoiseResidual, noise_residual),
            (Term::Noise, noise),
        ],
    }
}
