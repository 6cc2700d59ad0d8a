//! Analytic power models: per-core dynamic power over discrete V/f levels,
//! per-bank memory access energy, and exponential temperature-dependent
//! leakage fits for cores and memory banks.

use crate::error::{Error, Result};

/// Physical sanity range for temperatures fed to the leakage model, kelvin.
pub const T_PHYSICAL_MIN: f64 = 200.0;
pub const T_PHYSICAL_MAX: f64 = 500.0;

/// Exponential leakage fit: static power = p0 * exp(beta * (T - t_ref)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageFit {
    /// Watts at the reference temperature.
    pub p0: f64,
    /// 1/K.
    pub beta: f64,
    /// Kelvin.
    pub t_ref: f64,
}

impl LeakageFit {
    pub fn new(p0: f64, beta: f64, t_ref: f64) -> Result<Self> {
        if p0 < 0.0 || beta < 0.0 {
            return Err(Error::invalid("leakage fit requires p0 >= 0 and beta >= 0"));
        }
        Ok(LeakageFit { p0, beta, t_ref })
    }

    pub fn zero() -> Self {
        LeakageFit {
            p0: 0.0,
            beta: 0.0,
            t_ref: 300.0,
        }
    }

    /// Evaluates the fit without the physical-range check; used inside the
    /// thermal solver where the runaway guard handles extremes.
    pub fn eval(&self, t: f64) -> f64 {
        self.p0 * (self.beta * (t - self.t_ref)).exp()
    }
}

/// Static power at temperature `t` (kelvin) for a fitted block.
pub fn leakage_power(t: f64, fit: &LeakageFit) -> Result<f64> {
    if !(T_PHYSICAL_MIN..=T_PHYSICAL_MAX).contains(&t) {
        return Err(Error::invalid(format!(
            "temperature {t:.1} K outside physical range {T_PHYSICAL_MIN}..{T_PHYSICAL_MAX} K"
        )));
    }
    Ok(fit.eval(t))
}

/// Solves for p0 such that leakage/(leakage + dyn_ref) equals
/// `target_fraction` at temperature `at_t`:
/// p0 = dyn_ref * fr/(1-fr) * exp(-beta*(at_t - t_ref)).
pub fn calibrate_memory_leakage(
    target_fraction: f64,
    at_t: f64,
    dyn_ref: f64,
    beta: f64,
    t_ref: f64,
) -> Result<LeakageFit> {
    if !(0.0..1.0).contains(&target_fraction) {
        return Err(Error::invalid("target fraction must be in [0, 1)"));
    }
    if dyn_ref <= 0.0 {
        return Err(Error::invalid("reference dynamic power must be positive"));
    }
    let p0 = dyn_ref * target_fraction / (1.0 - target_fraction) * (-beta * (at_t - t_ref)).exp();
    LeakageFit::new(p0, beta, t_ref)
}

/// One discrete DVFS operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VfLevel {
    pub voltage_v: f64,
    pub frequency_ghz: f64,
}

impl VfLevel {
    pub fn frequency_hz(&self) -> f64 {
        self.frequency_ghz * 1e9
    }
}

/// Validates that a V/f table is non-empty and strictly increasing in both
/// voltage and frequency.
pub fn validate_vf_table(table: &[VfLevel]) -> Result<()> {
    if table.is_empty() {
        return Err(Error::invalid("V/f table must not be empty"));
    }
    for w in table.windows(2) {
        if w[1].voltage_v <= w[0].voltage_v || w[1].frequency_ghz <= w[0].frequency_ghz {
            return Err(Error::invalid(
                "V/f table must be strictly increasing in voltage and frequency",
            ));
        }
    }
    Ok(())
}

/// Default V/f ladder: 1.0 GHz at 0.8 V up to 4.0 GHz at 1.2 V.
pub fn default_vf_table() -> Vec<VfLevel> {
    [
        (0.80, 1.0),
        (0.90, 1.8),
        (1.00, 2.4),
        (1.05, 2.8),
        (1.10, 3.2),
        (1.15, 3.6),
        (1.20, 4.0),
    ]
    .iter()
    .map(|&(voltage_v, frequency_ghz)| VfLevel {
        voltage_v,
        frequency_ghz,
    })
    .collect()
}

/// Per-core power parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct CorePowerParams {
    /// W/(GHz V^2) at activity 1.
    pub c_dyn: f64,
    pub vf_table: Vec<VfLevel>,
    /// Leakage fit at the top table voltage; p0 scales linearly with V.
    pub leak: LeakageFit,
    /// Optional split of core dynamic power across sub-blocks of a
    /// fine-grained core floorplan. Fractions must sum to 1.
    pub component_fractions: Option<Vec<(String, f64)>>,
}

impl CorePowerParams {
    pub fn validate(&self) -> Result<()> {
        validate_vf_table(&self.vf_table)?;
        if self.c_dyn < 0.0 {
            return Err(Error::invalid("c_dyn must be non-negative"));
        }
        if let Some(fractions) = &self.component_fractions {
            let sum: f64 = fractions.iter().map(|(_, f)| f).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "component fractions sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Leakage fit at a given level: p0 scales with V relative to the top
    /// table entry.
    pub fn leak_at_level(&self, level: usize) -> LeakageFit {
        let v_ref = self.vf_table.last().map(|l| l.voltage_v).unwrap_or(1.0);
        let v = self.vf_table[level].voltage_v;
        LeakageFit {
            p0: self.leak.p0 * v / v_ref,
            ..self.leak
        }
    }
}

impl Default for CorePowerParams {
    fn default() -> Self {
        // c_dyn sized so a fully active core at 3.6 GHz / 1.2 V draws ~10 W.
        CorePowerParams {
            c_dyn: 1.93,
            vf_table: default_vf_table(),
            leak: LeakageFit {
                p0: 1.0,
                beta: 0.025,
                t_ref: 318.15,
            },
            component_fractions: None,
        }
    }
}

/// Per-core dynamic power: c_dyn * activity * f_GHz * V^2, optionally split
/// across sub-blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreDynamicPower {
    pub total: f64,
    pub components: Option<Vec<(String, f64)>>,
}

pub fn core_dynamic_power(
    activity: f64,
    level: usize,
    params: &CorePowerParams,
) -> Result<CoreDynamicPower> {
    if !(0.0..=1.0).contains(&activity) {
        return Err(Error::invalid(format!(
            "activity {activity} outside [0, 1]"
        )));
    }
    let vf = params
        .vf_table
        .get(level)
        .ok_or_else(|| Error::invalid(format!("V/f level {level} out of range")))?;
    let total = params.c_dyn * activity * vf.frequency_ghz * vf.voltage_v * vf.voltage_v;
    let components = params.component_fractions.as_ref().map(|fractions| {
        fractions
            .iter()
            .map(|(name, f)| (name.clone(), total * f))
            .collect()
    });
    Ok(CoreDynamicPower { total, components })
}

/// Memory power parameterization shared by all banks.
#[derive(Debug, Clone, PartialEq)]
pub struct MemPowerParams {
    /// J/access.
    pub e_read: f64,
    /// J/access.
    pub e_write: f64,
    /// Leakage fit per bank.
    pub leak: LeakageFit,
    /// Constant power of the memory cube's routing layer, watts.
    pub logic_layer_power: f64,
    /// Channel ids owned by each core.
    pub channel_map: Vec<Vec<usize>>,
}

impl MemPowerParams {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.e_read < 0.0 || self.e_write < 0.0 {
            return Err(Error::invalid("access energies must be non-negative"));
        }
        let mut owned = vec![false; channels];
        for list in &self.channel_map {
            for &c in list {
                if c >= channels {
                    return Err(Error::invalid(format!(
                        "channel {c} out of range (have {channels})"
                    )));
                }
                owned[c] = true;
            }
        }
        if owned.iter().any(|o| !o) {
            return Err(Error::invalid("every channel needs at least one owning core"));
        }
        Ok(())
    }
}

/// Dynamic power of one bank over an epoch: (rd*e_read + wr*e_write)/dt.
pub fn mem_bank_power(rd: u64, wr: u64, dt: f64, params: &MemPowerParams) -> Result<f64> {
    if dt <= 0.0 {
        return Err(Error::invalid("epoch length must be positive"));
    }
    Ok((rd as f64 * params.e_read + wr as f64 * params.e_write) / dt)
}

/// Dynamic and static watts attributed to one block for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockPower {
    pub dynamic: f64,
    pub static_: f64,
}

impl BlockPower {
    pub fn total(&self) -> f64 {
        self.dynamic + self.static_
    }
}

/// Per-block power for one epoch, in canonical block order.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerBreakdown {
    pub epoch_index: usize,
    pub entries: Vec<(String, BlockPower)>,
}

impl PowerBreakdown {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p.total()).sum()
    }
}
