//! TSP frame and IC-TSP super-frame timing.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Epoch {
    Current,
    Previous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSchedule {
    /// Symbols per coherence block.
    pub t_c: usize,
    pub f_c: usize,
    pub tau_p: usize,
    pub t_d: usize,
    pub t_u: usize,
    pub groups: usize,
    /// MSs per cell.
    pub k: usize,
    /// BS-BS coherence time, symbols.
    pub t_bs_c: usize,
    /// BS pilot length per antenna, symbols.
    pub tau_bs: usize,
    pub l_d: usize,
}

impl FrameSchedule {
    pub fn pilot_len(&self) -> usize {
        self.f_c * self.tau_p
    }

    /// Pilot start symbol of each group; groups transmit in index order.
    pub fn group_offsets(&self) -> Vec<usize> {
        (0..self.groups).map(|p| p * self.tau_p).collect()
    }

    /// Length of the BS pilot stage.
    pub fn t_bs_p(&self) -> usize {
        self.tau_bs * (self.l_d + 1)
    }

    /// TSP frames that fit in one super-frame after the BS pilot stage.
    pub fn n_tsp(&self) -> usize {
        if self.t_c == 0 {
            return 0;
        }
        self.t_bs_c.saturating_sub(self.t_bs_p()) / self.t_c
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut v = Vec::new();
        if self.k != self.f_c * self.tau_p {
            v.push(format!(
                "K = {} differs from F_c*tau_P = {}",
                self.k,
                self.f_c * self.tau_p
            ));
        }
        if self.groups == 0 {
            v.push("at least one group is required".into());
        } else if self.tau_p > 0 && self.groups - 1 > self.t_d / self.tau_p {
            v.push(format!(
                "{} groups need {} shifted pilot windows, DL data has room for {}",
                self.groups,
                self.groups - 1,
                self.t_d / self.tau_p
            ));
        }
        if self.tau_p + self.t_d + self.t_u > self.t_c {
            v.push(format!(
                "tau_P + T_d + T_u = {} exceeds T_c = {}",
                self.tau_p + self.t_d + self.t_u,
                self.t_c
            ));
        }
        let offsets = self.group_offsets();
        if self.t_c > 0 {
            let mut seen: Vec<usize> = offsets.iter().map(|o| o % self.t_c).collect();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != offsets.len() {
                v.push("group pilot offsets collide modulo T_c".into());
            }
        }
        if self.n_tsp() * self.t_c + self.t_bs_p() > self.t_bs_c {
            v.push(format!(
                "BS pilot stage of {} symbols does not fit in T_BS_C = {}",
                self.t_bs_p(),
                self.t_bs_c
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    pub fn resource_ratio_tsp(&self) -> f64 {
        resource_ratio_tsp(self.tau_p, self.t_c)
    }

    pub fn resource_ratio_ic(&self) -> Result<f64> {
        resource_ratio_ic(
            self.tau_bs as f64 * (self.l_d + 1) as f64,
            self.f_c,
            self.t_bs_c as f64,
        )
    }
}

/// `1 - tau_P / T_c`.
pub fn resource_ratio_tsp(tau_p: usize, t_c: usize) -> f64 {
    1.0 - tau_p as f64 / t_c as f64
}

/// `1 - overhead / (F_c * T_BS_C)` where `overhead` is the BS pilot stage in
/// symbols. An infinite coherence time gives 1.
pub fn resource_ratio_ic(overhead: f64, f_c: usize, t_bs_c: f64) -> Result<f64> {
    if t_bs_c.is_infinite() {
        return Ok(1.0);
    }
    let r = 1.0 - overhead / (f_c as f64 * t_bs_c);
    if r < 0.0 {
        return Err(Error::Infeasible(format!(
            "BS pilot overhead {overhead} exceeds F_c*T_BS_C = {}",
            f_c as f64 * t_bs_c
        )));
    }
    Ok(r)
}

/// BS pilot overhead of one super-frame, in symbols.
pub fn bs_pilot_overhead(tau_bs: usize, l_d: usize, sectors: usize, data_as_pilot: bool) -> f64 {
    let tau = tau_bs as f64;
    let l_d = l_d as f64 / sectors.max(1) as f64;
    if data_as_pilot {
        tau * l_d
    } else {
        tau * (l_d + 1.0)
    }
}

/// Which frame's estimates group `interferer` uses while group `target` sends
/// pilots. Groups are 0-based in pilot order.
pub fn precoder_epoch(target: usize, interferer: usize) -> Epoch {
    if interferer <= target {
        Epoch::Current
    } else {
        Epoch::Previous
    }
}
