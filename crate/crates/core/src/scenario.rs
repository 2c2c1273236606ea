//! Scenario definition: user groups, multipath components, mobility and
//! simulation controls, plus the TOML config file loader.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One multipath component of a group, angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSpec {
    pub center_angle_deg: f64,
    pub angular_spread_deg: f64,
    pub delay: usize,
    /// Relative share of the group's power; shares are normalized per group.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub power_weight: f64,
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub num_users: usize,
    pub symbol_energy: f64,
    /// RF chains per MPC, `d_m`. Defaults to one per MPC.
    #[serde(default)]
    pub rf_chains_per_mpc: Vec<usize>,
    pub mpcs: Vec<MpcSpec>,
}

impl GroupSpec {
    /// RF chains allocated to the group.
    pub fn rf_chains(&self) -> usize {
        self.rf_chains_per_mpc.iter().sum()
    }

    /// Per-MPC power, summing to one over the group.
    pub fn mpc_masses(&self) -> Vec<f64> {
        let total: f64 = self.mpcs.iter().map(|m| m.power_weight).sum();
        self.mpcs.iter().map(|m| m.power_weight / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_antennas: usize,
    pub num_groups: usize,
    /// Channel memory `L`; derived as `1 + max delay` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_memory: Option<usize>,
    pub noise_power: f64,
    pub mobility_alpha: f64,
    pub mobility_sigma_v_deg: f64,
    pub aoa_error_std_deg: f64,
    pub recursion_beta: f64,
    pub quantizer_depth: usize,
    pub d_rank: usize,
    pub slow_time_steps: usize,
    pub monte_carlo_trials: usize,
    pub rng_seed: u64,
    /// 1-based index of the group whose receiver is evaluated.
    #[serde(default = "default_intended")]
    pub intended_group: usize,
    /// Patch count charged for the whitening beamformer's own-MPC
    /// subtraction. `None` charges the actual nonzero patch count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitening_nominal_patches: Option<usize>,
    #[serde(default)]
    pub burn_in: usize,
    /// Channel draws per step for Monte Carlo SINR (multi-user groups).
    #[serde(default = "default_draws")]
    pub channel_draws_per_step: usize,
    /// Training length for channel estimation; `None` disables nMSE output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_length: Option<usize>,
    pub groups: Vec<GroupSpec>,
}

fn default_intended() -> usize {
    1
}

fn default_draws() -> usize {
    1
}

impl ScenarioConfig {
    pub fn channel_memory(&self) -> usize {
        self.channel_memory.unwrap_or_else(|| {
            1 + self
                .groups
                .iter()
                .flat_map(|g| g.mpcs.iter().map(|m| m.delay))
                .max()
                .unwrap_or(0)
        })
    }

    /// 0-based index of the intended group.
    pub fn intended(&self) -> usize {
        self.intended_group - 1
    }

    pub fn total_users(&self) -> usize {
        self.groups.iter().map(|g| g.num_users).sum()
    }

    /// Input SNR of a group in dB, `E_s / N_0`.
    pub fn snr_db(&self, group: usize) -> f64 {
        10.0 * (self.groups[group].symbol_energy / self.noise_power).log10()
    }

    /// Sets `N_0` so that the intended group sees the given input SNR.
    pub fn set_snr_db(&mut self, snr_db: f64) {
        let es = self.groups[self.intended()].symbol_energy;
        self.noise_power = es / 10f64.powf(snr_db / 10.0);
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(name, "must be finite"))
            }
        };
        if self.num_antennas < 2 {
            return Err(Error::validation("num_antennas", "must be at least 2"));
        }
        if self.groups.is_empty() {
            return Err(Error::validation("groups", "at least one group required"));
        }
        if self.num_groups != self.groups.len() {
            return Err(Error::validation(
                "num_groups",
                format!("is {} but {} groups are listed", self.num_groups, self.groups.len()),
            ));
        }
        finite("noise_power", self.noise_power)?;
        if self.noise_power <= 0.0 {
            return Err(Error::validation("noise_power", "must be > 0"));
        }
        finite("mobility_alpha", self.mobility_alpha)?;
        if !(self.mobility_alpha > 0.0 && self.mobility_alpha < 1.0) {
            return Err(Error::validation("mobility_alpha", "must lie in (0, 1)"));
        }
        finite("mobility_sigma_v_deg", self.mobility_sigma_v_deg)?;
        if self.mobility_sigma_v_deg < 0.0 {
            return Err(Error::validation("mobility_sigma_v_deg", "must be >= 0"));
        }
        finite("aoa_error_std_deg", self.aoa_error_std_deg)?;
        if self.aoa_error_std_deg < 0.0 {
            return Err(Error::validation("aoa_error_std_deg", "must be >= 0"));
        }
        finite("recursion_beta", self.recursion_beta)?;
        if !(self.recursion_beta >= 0.0 && self.recursion_beta < 1.0) {
            return Err(Error::validation("recursion_beta", "must lie in [0, 1)"));
        }
        if self.quantizer_depth < 1 {
            return Err(Error::validation("quantizer_depth", "must be >= 1"));
        }
        if self.d_rank < 1 || self.d_rank > self.num_antennas {
            return Err(Error::validation("d_rank", "must lie in [1, num_antennas]"));
        }
        if self.slow_time_steps < 1 {
            return Err(Error::validation("slow_time_steps", "must be >= 1"));
        }
        if self.monte_carlo_trials < 1 {
            return Err(Error::validation("monte_carlo_trials", "must be >= 1"));
        }
        if self.rng_seed > i64::MAX as u64 {
            return Err(Error::validation("rng_seed", "must fit a TOML integer (<= 2^63 - 1)"));
        }
        if self.intended_group < 1 || self.intended_group > self.groups.len() {
            return Err(Error::validation("intended_group", "no such group"));
        }
        if self.channel_draws_per_step < 1 {
            return Err(Error::validation("channel_draws_per_step", "must be >= 1"));
        }
        if self.burn_in >= self.slow_time_steps {
            return Err(Error::validation("burn_in", "must be below slow_time_steps"));
        }
        if let Some(t) = self.training_length {
            if t < 1 {
                return Err(Error::validation("training_length", "must be >= 1"));
            }
        }
        if let Some(l) = self.channel_memory {
            if l < 1 {
                return Err(Error::validation("channel_memory", "must be >= 1"));
            }
        }
        let l = self.channel_memory();
        for (gi, g) in self.groups.iter().enumerate() {
            let at = |f: &str| format!("groups[{gi}].{f}");
            if g.num_users < 1 {
                return Err(Error::validation(at("num_users"), "must be >= 1"));
            }
            finite(&at("symbol_energy"), g.symbol_energy)?;
            if g.symbol_energy <= 0.0 {
                return Err(Error::validation(at("symbol_energy"), "must be > 0"));
            }
            if g.mpcs.is_empty() {
                return Err(Error::validation(at("mpcs"), "at least one MPC required"));
            }
            if g.rf_chains_per_mpc.len() != g.mpcs.len() {
                return Err(Error::validation(
                    at("rf_chains_per_mpc"),
                    "needs one entry per MPC",
                ));
            }
            if g.rf_chains_per_mpc.iter().any(|&d| d < 1) {
                return Err(Error::validation(at("rf_chains_per_mpc"), "entries must be >= 1"));
            }
            if g.rf_chains() > self.num_antennas {
                return Err(Error::validation(
                    at("rf_chains_per_mpc"),
                    "total RF chains exceed num_antennas",
                ));
            }
            for (mi, m) in g.mpcs.iter().enumerate() {
                let mat = |f: &str| format!("groups[{gi}].mpcs[{mi}].{f}");
                finite(&mat("center_angle_deg"), m.center_angle_deg)?;
                finite(&mat("angular_spread_deg"), m.angular_spread_deg)?;
                finite(&mat("power_weight"), m.power_weight)?;
                if m.angular_spread_deg <= 0.0 {
                    return Err(Error::validation(mat("angular_spread_deg"), "must be > 0"));
                }
                if m.center_angle_deg.abs() + m.angular_spread_deg / 2.0 >= 90.0 {
                    return Err(Error::validation(
                        mat("center_angle_deg"),
                        "sector exceeds the (-90, 90) degree support",
                    ));
                }
                if m.delay >= l {
                    return Err(Error::validation(mat("delay"), "must be below channel_memory"));
                }
                if m.power_weight <= 0.0 {
                    return Err(Error::validation(mat("power_weight"), "must be > 0"));
                }
                if g.mpcs[..mi].iter().any(|o| o.delay == m.delay) {
                    return Err(Error::validation(mat("delay"), "duplicate delay within group"));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        // all fields are representable in TOML
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Parses and validates a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    parse_scenario_with_overrides::<&str>(text, &[])
}

/// Parses a scenario, applies `key=value` overrides, then validates.
pub fn parse_scenario_with_overrides<S: AsRef<str>>(
    text: &str,
    overrides: &[S],
) -> Result<ScenarioConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o.as_ref())?;
    }
    from_table(table)
}

fn from_table(table: toml::Table) -> Result<ScenarioConfig> {
    let mut cfg: ScenarioConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    for g in &mut cfg.groups {
        if g.rf_chains_per_mpc.is_empty() {
            g.rf_chains_per_mpc = vec![1; g.mpcs.len()];
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    load_scenario_with_overrides::<&str>(path, &[])
}

pub fn load_scenario_with_overrides<S: AsRef<str>>(
    path: impl AsRef<Path>,
    overrides: &[S],
) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_with_overrides(&text, overrides)
}

/// Applies `overrides` to an already valid config.
pub fn with_overrides<S: AsRef<str>>(cfg: &ScenarioConfig, overrides: &[S]) -> Result<ScenarioConfig> {
    let mut table: toml::Table = toml::Table::try_from(cfg).map_err(|e| Error::Parse(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o.as_ref())?;
    }
    from_table(table)
}

/// Short names accepted for top-level keys.
pub fn canonical_key(key: &str) -> &str {
    match key {
        "alpha" => "mobility_alpha",
        "beta" => "recursion_beta",
        "sigma_est" | "sigma-est" => "aoa_error_std_deg",
        "sigma_v" | "sigma-v" => "mobility_sigma_v_deg",
        "nq" => "quantizer_depth",
        "rank" | "r" => "d_rank",
        "n" | "antennas" => "num_antennas",
        "trials" => "monte_carlo_trials",
        "steps" | "horizon" => "slow_time_steps",
        "seed" => "rng_seed",
        "n0" => "noise_power",
        "t" | "training" => "training_length",
        other => other,
    }
}

/// Applies one `dotted.key=value` assignment. Numeric path segments index
/// arrays; the value is read as a TOML literal, falling back to a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Parse(format!("override `{assignment}` has an empty key")));
    }
    let value = parse_literal(raw);
    let mut parts = key.split('.');
    let first = canonical_key(parts.next().unwrap_or_default());
    let rest: Vec<&str> = parts.collect();
    if rest.is_empty() {
        table.insert(first.to_string(), value);
        return Ok(());
    }
    let mut cur = table
        .get_mut(first)
        .ok_or_else(|| Error::Parse(format!("override path `{key}`: no key `{first}`")))?;
    for (i, seg) in rest.iter().enumerate() {
        let last = i + 1 == rest.len();
        cur = match cur {
            toml::Value::Array(arr) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::Parse(format!("override path `{key}`: `{seg}` is not an index")))?;
                let len = arr.len();
                let slot = arr
                    .get_mut(idx)
                    .ok_or_else(|| Error::Parse(format!("override path `{key}`: index {idx} >= {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                t.get_mut(*seg)
                    .ok_or_else(|| Error::Parse(format!("override path `{key}`: no key `{seg}`")))?
            }
            _ => return Err(Error::Parse(format!("override path `{key}` descends into a scalar"))),
        };
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn mpc(center: f64, spread: f64, delay: usize) -> MpcSpec {
    MpcSpec {
        center_angle_deg: center,
        angular_spread_deg: spread,
        delay,
        power_weight: 1.0,
    }
}

/// The four-group evaluation scenario with `N = 100`, 30 dB input SNR for
/// group 1 and `sigma_v = 3` degrees. Mobility and filtering parameters are
/// placeholders for the caller to override.
pub fn default_table1_scenario() -> ScenarioConfig {
    let group = |mpcs: Vec<MpcSpec>, k: usize, es: f64| GroupSpec {
        num_users: k,
        symbol_energy: es,
        rf_chains_per_mpc: vec![1; mpcs.len()],
        mpcs,
    };
    ScenarioConfig {
        num_antennas: 100,
        num_groups: 4,
        channel_memory: None,
        noise_power: 1e-3,
        mobility_alpha: 0.999,
        mobility_sigma_v_deg: 3.0,
        aoa_error_std_deg: 0.5,
        recursion_beta: 0.9,
        quantizer_depth: 2,
        d_rank: 2,
        slow_time_steps: 200,
        monte_carlo_trials: 50,
        rng_seed: 1,
        intended_group: 1,
        whitening_nominal_patches: Some(3),
        burn_in: 0,
        channel_draws_per_step: 1,
        training_length: None,
        groups: vec![
            group(vec![mpc(0.0, 3.0, 0), mpc(9.75, 2.5, 5), mpc(22.0, 3.5, 11)], 1, 1.0),
            group(vec![mpc(27.5, 3.0, 3), mpc(15.25, 2.0, 9)], 2, 10.0),
            group(vec![mpc(-6.25, 3.5, 8), mpc(-13.5, 3.0, 17)], 3, 100.0),
            group(vec![mpc(-20.25, 3.0, 20), mpc(-27.0, 3.5, 29)], 4, 1000.0),
        ],
    }
}

/// The evaluation scenario shrunk to a 32-element array for quick runs.
pub fn small_preset() -> ScenarioConfig {
    ScenarioConfig {
        num_antennas: 32,
        monte_carlo_trials: 8,
        slow_time_steps: 100,
        ..default_table1_scenario()
    }
}
