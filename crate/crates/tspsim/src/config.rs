//! Scenario configuration.
//!
//! Files are flat `section.key = value` lines (TOML dotted keys). Every key is
//! optional and unknown keys are rejected. Powers are given in dBm and
//! converted to watts once, in [`ScenarioConfig::power_config`].

use crate::channel::LargeScaleParams;
use crate::error::{Error, Result};
use crate::estimation::cs_pilot_length;
use crate::frame::{bs_pilot_overhead, FrameSchedule};
use crate::signals::{dbm_to_watts, NoiseVariances, PowerConfig, PowerPolicy};
use crate::topology::{group_shift, layers_for_cluster, rings_for_cells};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ls,
    Lmmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsBsConfig {
    Ls,
    Cs,
    CsDataAsPilot,
}

impl BsBsConfig {
    pub fn is_cs(&self) -> bool {
        !matches!(self, BsBsConfig::Ls)
    }

    pub fn data_as_pilot(&self) -> bool {
        matches!(self, BsBsConfig::CsDataAsPilot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precoder {
    Mf,
    Zf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// MSs of the center cell only.
    Center,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinrAveraging {
    Linear,
    Db,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaling {
    /// PSD times the subcarrier spacing.
    PerSubcarrier,
    /// PSD times the whole bandwidth.
    FullBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// Measured from the true angular-domain channels of each drop.
    Measured,
    /// `ic.cs_sparsity` used network-wide.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSection {
    pub cells: usize,
    pub cell_radius_m: f64,
    pub protection_radius_m: f64,
    pub ms_per_cell: usize,
}

impl Default for LayoutSection {
    fn default() -> Self {
        Self {
            cells: 37,
            cell_radius_m: 500.0,
            protection_radius_m: 20.0,
            ms_per_cell: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupsSection {
    pub count: usize,
    /// Offset from the target's group to the group in pilot mode during the
    /// CL stage. 0 disables MS-MS leakage.
    pub pilot_mode_offset: usize,
}

impl Default for GroupsSection {
    fn default() -> Self {
        Self {
            count: 7,
            pilot_mode_offset: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub pathloss_exponent: f64,
    pub shadowing_db: f64,
    pub rician_k: f64,
    pub correlation: f64,
    /// MS-MS separations below this are clamped.
    pub ms_ms_min_distance_m: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            carrier_hz: 2e9,
            bandwidth_hz: 10e6,
            subcarrier_spacing_hz: 15e3,
            pathloss_exponent: 3.8,
            shadowing_db: 8.0,
            rician_k: 10.0,
            correlation: 0.8,
            ms_ms_min_distance_m: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSection {
    pub bs_dbm: f64,
    pub ms_dbm: f64,
    pub bs_pilot_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_scaling: NoiseScaling,
    pub policy: PowerPolicy,
}

impl Default for PowerSection {
    fn default() -> Self {
        Self {
            bs_dbm: 46.0,
            ms_dbm: 23.0,
            bs_pilot_dbm: 46.0,
            noise_psd_dbm_hz: -174.0,
            noise_scaling: NoiseScaling::PerSubcarrier,
            policy: PowerPolicy::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSection {
    pub coherence_symbols: usize,
    pub pilot_symbols: usize,
    pub dl_symbols: usize,
    pub ul_symbols: usize,
    pub coherence_subcarriers: usize,
    pub bs_coherence_symbols: usize,
}

impl Default for FrameSection {
    fn default() -> Self {
        Self {
            coherence_symbols: 185,
            pilot_symbols: 4,
            dl_symbols: 96,
            ul_symbols: 85,
            coherence_subcarriers: 5,
            bs_coherence_symbols: 500 * 185,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcSection {
    /// `L_D`, neighbours cancelled around the target.
    pub cluster_size: usize,
    pub bsbs_method: BsBsConfig,
    /// Energy fraction kept when sparsifying BS-BS channels.
    pub cs_accuracy: f64,
    pub cs_sparsity_mode: SparsityMode,
    /// Per-column sparsity for the frozen mode. 0 selects the built-in
    /// calibration for the configured antenna count.
    pub cs_sparsity: usize,
    /// Normalised CS error `E|G_hat - G|^2 / E|G|^2` used by the closed forms.
    /// Negative selects the built-in calibration.
    pub cs_nmse: f64,
}

impl Default for IcSection {
    fn default() -> Self {
        Self {
            cluster_size: 18,
            bsbs_method: BsBsConfig::Ls,
            cs_accuracy: 0.99,
            cs_sparsity_mode: SparsityMode::Measured,
            cs_sparsity: 0,
            cs_nmse: -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub antennas: usize,
    pub estimator: Estimator,
    pub precoder: Precoder,
    pub sectors: usize,
    pub averaging: Averaging,
    pub sinr_averaging: SinrAveraging,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            antennas: 128,
            estimator: Estimator::Ls,
            precoder: Precoder::Mf,
            sectors: 1,
            averaging: Averaging::Center,
            sinr_averaging: SinrAveraging::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Drops that also run the signal-level chain.
    pub signal_drops: usize,
    /// Small-scale realisations per signal-level drop.
    pub realizations: usize,
    /// Signal-level runs are skipped above this antenna count unless forced.
    pub max_signal_antennas: usize,
    pub force_signal: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            signal_drops: 0,
            realizations: 20,
            max_signal_antennas: 256,
            force_signal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub layout: LayoutSection,
    pub groups: GroupsSection,
    pub channel: ChannelSection,
    pub power: PowerSection,
    pub frame: FrameSection,
    pub ic: IcSection,
    pub system: SystemSection,
    pub sim: SimSection,
}

/// Largest per-column sparsity of BS-BS channels at `F = 0.99`, `k_T = 10`,
/// `kappa = 0.8`, as a fraction of `M`. Measured with `calibrate_cs` over 24
/// draws: 0.697 at `M = 64`, 0.689 at `M = 128`.
pub const CALIBRATED_SPARSITY_RATIO: f64 = 0.70;

/// Normalised OMP error at the calibrated operating point, noise free
/// (0.0071 at both `M = 64` and `M = 128`).
pub const CALIBRATED_CS_NMSE: f64 = 0.0071;

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ScenarioConfig {
    /// Parse a flat key=value document. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Every key as `section.key = value`, in declaration order.
    pub fn to_flat(&self) -> Vec<(String, String)> {
        let value = toml::Value::try_from(self).expect("config is always serialisable");
        let mut out = Vec::new();
        if let toml::Value::Table(sections) = value {
            for (s, body) in sections {
                if let toml::Value::Table(keys) = body {
                    for (k, v) in keys {
                        out.push((format!("{s}.{k}"), v.to_string()));
                    }
                }
            }
        }
        out
    }

    pub fn to_flat_string(&self) -> String {
        self.to_flat()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_flat_string())
    }

    /// Copy with one key replaced. Bare words are accepted for string values.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        if !self.to_flat().iter().any(|(k, _)| k == key) {
            return Err(Error::Config {
                line: 0,
                message: format!("unknown key `{key}`"),
            });
        }
        let literal = if toml::from_str::<toml::Table>(&format!("x = {value}")).is_ok() {
            value.to_string()
        } else {
            format!("\"{value}\"")
        };
        let prefix = format!("{key} = ");
        let filtered: String = self
            .to_flat_string()
            .lines()
            .filter(|l| !l.starts_with(&prefix))
            .map(|l| format!("{l}\n"))
            .collect();
        Self::parse(&format!("{filtered}{key} = {literal}\n"))
    }

    pub fn large_scale_params(&self) -> LargeScaleParams {
        LargeScaleParams {
            pathloss_exponent: self.channel.pathloss_exponent,
            shadowing_db: self.channel.shadowing_db,
            rician_k: self.channel.rician_k,
            correlation: self.channel.correlation,
        }
    }

    /// Noise variance of one stage, W.
    pub fn noise_variance(&self) -> f64 {
        let bw = match self.power.noise_scaling {
            NoiseScaling::PerSubcarrier => self.channel.subcarrier_spacing_hz,
            NoiseScaling::FullBand => self.channel.bandwidth_hz,
        };
        dbm_to_watts(self.power.noise_psd_dbm_hz) * bw
    }

    pub fn power_config(&self) -> PowerConfig {
        let ms = dbm_to_watts(self.power.ms_dbm);
        PowerConfig {
            ul_pilot: ms,
            ul_data: ms,
            dl_total: dbm_to_watts(self.power.bs_dbm),
            bs_pilot: dbm_to_watts(self.power.bs_pilot_dbm),
            noise: NoiseVariances::uniform(self.noise_variance()),
            policy: self.power.policy,
        }
    }

    /// Per-column sparsity used for CS pilot dimensioning at `m` antennas.
    pub fn frozen_sparsity(&self, m: usize) -> usize {
        if self.ic.cs_sparsity > 0 {
            self.ic.cs_sparsity.min(m)
        } else {
            ((CALIBRATED_SPARSITY_RATIO * m as f64).ceil() as usize).clamp(1, m)
        }
    }

    pub fn cs_nmse(&self) -> f64 {
        if self.ic.cs_nmse >= 0.0 {
            self.ic.cs_nmse
        } else {
            CALIBRATED_CS_NMSE
        }
    }

    /// BS pilot length per transmitting BS.
    pub fn bs_pilot_len(&self, m: usize) -> usize {
        if self.ic.bsbs_method.is_cs() {
            cs_pilot_length(self.frozen_sparsity(m), m)
        } else {
            m
        }
    }

    /// BS pilot overhead per super-frame, in symbols.
    pub fn bs_pilot_overhead(&self, m: usize) -> f64 {
        bs_pilot_overhead(
            self.bs_pilot_len(m),
            self.ic.cluster_size,
            self.system.sectors,
            self.ic.bsbs_method.data_as_pilot(),
        )
    }

    pub fn frame_schedule(&self) -> FrameSchedule {
        let f = &self.frame;
        FrameSchedule {
            t_c: f.coherence_symbols,
            f_c: f.coherence_subcarriers,
            tau_p: f.pilot_symbols,
            t_d: f.dl_symbols,
            t_u: f.ul_symbols,
            groups: self.groups.count,
            k: self.layout.ms_per_cell,
            t_bs_c: f.bs_coherence_symbols,
            tau_bs: self.bs_pilot_len(self.system.antennas),
            l_d: self.ic.cluster_size,
        }
    }

    /// Every violated constraint, in key order.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut v = Vec::new();
        let l = &self.layout;
        if rings_for_cells(l.cells).is_none() {
            v.push(format!(
                "layout.cells = {} is not a hexagonal cell count",
                l.cells
            ));
        }
        if !(l.cell_radius_m > 0.0 && l.cell_radius_m.is_finite()) {
            v.push("layout.cell_radius_m must be positive".into());
        }
        let apothem = 3f64.sqrt() / 2.0 * l.cell_radius_m;
        if !(l.protection_radius_m >= 0.0 && l.protection_radius_m < apothem) {
            v.push(format!(
                "layout.protection_radius_m must be in [0, {apothem:.1})"
            ));
        }
        if l.ms_per_cell == 0 {
            v.push("layout.ms_per_cell must be at least 1".into());
        }
        if group_shift(self.groups.count).is_none() {
            v.push(format!(
                "groups.count = {} is not of the form b^2 + bc + c^2",
                self.groups.count
            ));
        } else if self.groups.count > l.cells {
            v.push("groups.count exceeds layout.cells".into());
        }
        let c = &self.channel;
        for (name, x) in [
            ("channel.carrier_hz", c.carrier_hz),
            ("channel.bandwidth_hz", c.bandwidth_hz),
            ("channel.subcarrier_spacing_hz", c.subcarrier_spacing_hz),
            ("channel.ms_ms_min_distance_m", c.ms_ms_min_distance_m),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive"));
            }
        }
        if let Err(e) = self.large_scale_params().validate() {
            v.push(format!("channel: {e}"));
        }
        let p = &self.power;
        for (name, x) in [
            ("power.bs_dbm", p.bs_dbm),
            ("power.ms_dbm", p.ms_dbm),
            ("power.bs_pilot_dbm", p.bs_pilot_dbm),
            ("power.noise_psd_dbm_hz", p.noise_psd_dbm_hz),
        ] {
            if !x.is_finite() {
                v.push(format!("{name} must be finite"));
            }
        }
        let ic = &self.ic;
        if layers_for_cluster(ic.cluster_size).is_none() {
            v.push(format!(
                "ic.cluster_size = {} is not 3 N (N + 1) for a layer count N >= 1",
                ic.cluster_size
            ));
        } else if ic.cluster_size >= l.cells {
            v.push("ic.cluster_size needs more cells than the layout has".into());
        }
        if !(ic.cs_accuracy > 0.0 && ic.cs_accuracy <= 1.0) {
            v.push("ic.cs_accuracy must be in (0, 1]".into());
        }
        if !ic.cs_nmse.is_finite() {
            v.push("ic.cs_nmse must be finite".into());
        }
        let s = &self.system;
        if s.antennas == 0 {
            v.push("system.antennas must be at least 1".into());
        }
        if s.sectors == 0 || (s.antennas > 0 && !s.antennas.is_multiple_of(s.sectors)) {
            v.push(format!(
                "system.sectors = {} must divide system.antennas = {}",
                s.sectors, s.antennas
            ));
        }
        if s.precoder == Precoder::Zf && l.ms_per_cell > s.antennas {
            v.push("ZF needs layout.ms_per_cell <= system.antennas".into());
        }
        if self.sim.realizations == 0 {
            v.push("sim.realizations must be at least 1".into());
        }
        if let Err(errs) = self.frame_schedule().validate() {
            v.extend(errs.into_iter().map(|e| format!("frame: {e}")));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}
