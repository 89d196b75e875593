//! Cost model of the crossbar fabric.
//!
//! Geometry follows a 64x64 crossbar with 2-bit cells, 4x4 crossbars per tile,
//! 4500 tiles and a 512-bit global bus. ADCs are flash converters, so an
//! `n`-bit conversion fires `2^n - 1` comparators. A popcount over the
//! row-enable vector picks between a reduced-resolution read (one active row)
//! and a full-resolution MAC (two or more rows).
//!
//! Energy and latency constants are in arbitrary units; results are meant to
//! be compared as ratios between runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HwError {
    #[error("activation with zero rows")]
    NoRows,
    #[error("{rows} activated rows exceed crossbar height {max}")]
    TooManyRows { rows: usize, max: usize },
    #[error("invalid hardware config: {0}")]
    Invalid(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareConfig {
    pub xbar_rows: usize,
    pub xbar_cols: usize,
    pub bits_per_cell: usize,
    /// Full (MAC) conversion resolution.
    pub adc_bits: u32,
    /// Conversion resolution in read mode.
    pub read_adc_bits: u32,
    /// Crossbars per tile side.
    pub tile_dim: usize,
    pub num_tiles: usize,
    pub bus_width_bits: usize,
    pub embedding_dim: usize,
    pub bits_per_feature: usize,
    /// Treat read-mode conversions as free instead of a reduced-resolution
    /// conversion. Sensitivity switch only.
    pub read_adc_free: bool,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            xbar_rows: 64,
            xbar_cols: 64,
            bits_per_cell: 2,
            adc_bits: 6,
            read_adc_bits: 3,
            tile_dim: 4,
            num_tiles: 4500,
            bus_width_bits: 512,
            embedding_dim: 16,
            bits_per_feature: 8,
            read_adc_free: false,
        }
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<(), HwError> {
        let bad = |m: &str| Err(HwError::Invalid(m.to_string()));
        if self.xbar_rows == 0 || self.xbar_cols == 0 || self.bits_per_cell == 0 {
            return bad("crossbar geometry must be nonzero");
        }
        if self.adc_bits == 0 || self.adc_bits > 16 {
            return bad("adc_bits must be in 1..=16");
        }
        if self.read_adc_bits > self.adc_bits {
            return bad("read_adc_bits must not exceed adc_bits");
        }
        if self.tile_dim == 0 || self.num_tiles == 0 {
            return bad("tile geometry must be nonzero");
        }
        if self.bus_width_bits == 0 || self.embedding_dim == 0 || self.bits_per_feature == 0 {
            return bad("bus width and embedding shape must be nonzero");
        }
        Ok(())
    }

    /// Column slices needed to hold one embedding row:
    /// `ceil(dim * bits_per_feature / (cols * bits_per_cell))`.
    pub fn slice_factor(&self) -> usize {
        let bits = self.embedding_dim * self.bits_per_feature;
        bits.div_ceil(self.xbar_cols * self.bits_per_cell).max(1)
    }

    pub fn crossbars_per_tile(&self) -> usize {
        self.tile_dim * self.tile_dim
    }

    pub fn total_crossbars(&self) -> usize {
        self.num_tiles * self.crossbars_per_tile()
    }

    /// Width of one partial-sum vector on the bus.
    pub fn partial_sum_bits(&self) -> usize {
        self.embedding_dim * self.adc_bits as usize
    }

    pub fn bus_words_per_partial_sum(&self) -> u64 {
        self.partial_sum_bits().div_ceil(self.bus_width_bits) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub e_comparator: f64,
    pub e_xbar_row: f64,
    pub e_popcount: f64,
    pub e_bus_bit: f64,
    pub t_activation: u64,
    pub t_bus_word: u64,
    pub t_popcount: u64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            e_comparator: 1.0,
            e_xbar_row: 0.5,
            e_popcount: 0.2,
            e_bus_bit: 0.05,
            t_activation: 1,
            t_bus_word: 1,
            t_popcount: 0,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), HwError> {
        let energies = [
            self.e_comparator,
            self.e_xbar_row,
            self.e_popcount,
            self.e_bus_bit,
        ];
        if energies.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(HwError::Invalid("energies must be finite and >= 0".into()));
        }
        if self.t_activation < 1 {
            return Err(HwError::Invalid("t_activation must be >= 1".into()));
        }
        Ok(())
    }
}

/// Hardware geometry plus energy/latency constants, loaded from one document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostConfig {
    pub hw: HardwareConfig,
    pub em: EnergyModel,
}

impl CostConfig {
    pub fn validate(&self) -> Result<(), HwError> {
        self.hw.validate()?;
        self.em.validate()
    }

    /// Parses either a flat JSON object or `key = value` lines (`#` starts a
    /// comment). Missing keys take defaults, unknown keys are rejected.
    pub fn parse_str(text: &str) -> Result<Self, HwError> {
        let map = if text.trim_start().starts_with('{') {
            match serde_json::from_str::<Value>(text)? {
                Value::Object(m) => m,
                _ => return Err(HwError::Invalid("expected a JSON object".into())),
            }
        } else {
            parse_key_values(text)?
        };
        Self::from_map(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HwError> {
        Self::parse_str(&fs::read_to_string(path)?)
    }

    pub fn from_map(map: Map<String, Value>) -> Result<Self, HwError> {
        let hw_keys = field_names(&HardwareConfig::default());
        let em_keys = field_names(&EnergyModel::default());
        let mut hw = Map::new();
        let mut em = Map::new();
        for (k, v) in map {
            if hw_keys.contains(&k) {
                hw.insert(k, v);
            } else if em_keys.contains(&k) {
                em.insert(k, v);
            } else {
                return Err(HwError::UnknownKey(k));
            }
        }
        let cfg = CostConfig {
            hw: serde_json::from_value(Value::Object(hw))?,
            em: serde_json::from_value(Value::Object(em))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat JSON object with every key.
    pub fn to_map(&self) -> Map<String, Value> {
        let mut out = Map::new();
        for v in [
            serde_json::to_value(&self.hw).expect("plain struct"),
            serde_json::to_value(&self.em).expect("plain struct"),
        ] {
            if let Value::Object(m) = v {
                out.extend(m);
            }
        }
        out
    }
}

fn field_names<T: Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

fn parse_key_values(text: &str) -> Result<Map<String, Value>, HwError> {
    let mut map = Map::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| HwError::Syntax {
            line: idx + 1,
            msg: "expected `key = value`".into(),
        })?;
        let v = v.trim();
        let value = if let Ok(b) = v.parse::<bool>() {
            Value::Bool(b)
        } else if let Ok(i) = v.parse::<u64>() {
            Value::from(i)
        } else if let Ok(f) = v.parse::<f64>() {
            Value::from(f)
        } else {
            return Err(HwError::Syntax {
                line: idx + 1,
                msg: format!("cannot parse value `{v}`"),
            });
        };
        map.insert(k.trim().to_string(), value);
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Read,
    Mac,
}

/// Popcount threshold: exactly one active row is a read, more is a MAC.
pub fn decide_mode(activated_rows: usize) -> Result<Mode, HwError> {
    match activated_rows {
        0 => Err(HwError::NoRows),
        1 => Ok(Mode::Read),
        _ => Ok(Mode::Mac),
    }
}

/// Flash comparators fired by one `bits`-resolution conversion.
pub fn comparators(bits: u32) -> u64 {
    (1u64 << bits) - 1
}

/// Energy of one bitline conversion in the given mode.
pub fn adc_energy(mode: Mode, hw: &HardwareConfig, em: &EnergyModel) -> f64 {
    match mode {
        Mode::Mac => comparators(hw.adc_bits) as f64 * em.e_comparator,
        Mode::Read if hw.read_adc_free => 0.0,
        Mode::Read => comparators(hw.read_adc_bits) as f64 * em.e_comparator,
    }
}

/// How an activation picks its conversion mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConversionPolicy {
    /// Popcount-driven switch; pays the popcount cost.
    Switched,
    /// Conventional ADC, always full resolution, no popcount circuit.
    AlwaysMac,
    /// Plain memory read path, no popcount circuit.
    AlwaysRead,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationCost {
    pub mode: Mode,
    pub xbar_energy: f64,
    pub adc_energy: f64,
    pub popcount_energy: f64,
    pub cycles: u64,
}

impl ActivationCost {
    pub fn energy(&self) -> f64 {
        self.xbar_energy + self.adc_energy + self.popcount_energy
    }
}

/// Cost of one activation under the popcount-driven switch.
pub fn activation_cost(
    activated_rows: usize,
    hw: &HardwareConfig,
    em: &EnergyModel,
) -> Result<ActivationCost, HwError> {
    activation_cost_with(activated_rows, ConversionPolicy::Switched, hw, em)
}

/// `rows * e_xbar_row + slices * cols * adc_energy(mode) [+ e_popcount]`,
/// taking `slices * t_activation [+ t_popcount]` cycles.
pub fn activation_cost_with(
    activated_rows: usize,
    policy: ConversionPolicy,
    hw: &HardwareConfig,
    em: &EnergyModel,
) -> Result<ActivationCost, HwError> {
    if activated_rows > hw.xbar_rows {
        return Err(HwError::TooManyRows {
            rows: activated_rows,
            max: hw.xbar_rows,
        });
    }
    let detected = decide_mode(activated_rows)?;
    let (mode, popcount) = match policy {
        ConversionPolicy::Switched => (detected, true),
        ConversionPolicy::AlwaysMac => (Mode::Mac, false),
        ConversionPolicy::AlwaysRead => (Mode::Read, false),
    };
    let slices = hw.slice_factor();
    let conversions = (slices * hw.xbar_cols) as f64;
    Ok(ActivationCost {
        mode,
        xbar_energy: activated_rows as f64 * em.e_xbar_row,
        adc_energy: conversions * adc_energy(mode, hw, em),
        popcount_energy: if popcount { em.e_popcount } else { 0.0 },
        cycles: slices as u64 * em.t_activation + if popcount { em.t_popcount } else { 0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BusCost {
    pub energy: f64,
    pub cycles: u64,
}

/// Moving `num_partial_sums` partial-sum vectors over the global bus.
pub fn aggregate_cost(num_partial_sums: usize, hw: &HardwareConfig, em: &EnergyModel) -> BusCost {
    let n = num_partial_sums as u64;
    BusCost {
        energy: (n as usize * hw.partial_sum_bits()) as f64 * em.e_bus_bit,
        cycles: n * hw.bus_words_per_partial_sum() * em.t_bus_word,
    }
}
