//! Flex-grid arithmetic and the modulation catalog.
//!
//! Frequencies are held as integer counts of 100 kHz so that grid maths and
//! the WSS wire encoding are exact. The slot grid is 12.5 GHz wide and
//! anchored at 193.1 THz: slot `n` covers `[193.1 THz + n * 12.5 GHz,
//! 193.1 THz + (n + 1) * 12.5 GHz)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::Rate;

/// 100 kHz units per THz.
pub const UNITS_PER_THZ: u64 = 10_000_000;
/// 100 kHz units per GHz.
pub const UNITS_PER_GHZ: u64 = 10_000;
/// Slot width in 100 kHz units (12.5 GHz).
pub const SLOT_WIDTH_UNITS: u64 = 125_000;
pub const SLOT_WIDTH_GHZ: f64 = 12.5;
/// Grid anchor in 100 kHz units (193.1 THz).
pub const GRID_ANCHOR_UNITS: u64 = 1_931_000_000;
/// Default raised-cosine roll-off used for occupied bandwidth.
pub const DEFAULT_ROLLOFF: f64 = 0.1;

const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("frequency must be positive and finite, got {0}")]
    BadFrequency(String),
    #[error("width must be positive, got {0} GHz")]
    BadWidth(f64),
    #[error("invalid modulation profile: {0}")]
    BadProfile(String),
    #[error("duplicate catalog entry {format} {baud} GBd")]
    DuplicateProfile { format: ModulationFormat, baud: f64 },
    #[error("unknown modulation format '{0}'")]
    UnknownFormat(String),
}

/// An optical frequency at 100 kHz resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Frequency(u64);

impl Frequency {
    pub fn from_units(units: u64) -> Result<Self, SpectrumError> {
        if units == 0 {
            return Err(SpectrumError::BadFrequency("0".into()));
        }
        Ok(Frequency(units))
    }

    /// Rounds to the nearest 100 kHz.
    pub fn from_thz(thz: f64) -> Result<Self, SpectrumError> {
        if !thz.is_finite() || thz <= 0.0 {
            return Err(SpectrumError::BadFrequency(thz.to_string()));
        }
        Self::from_units((thz * UNITS_PER_THZ as f64).round() as u64)
    }

    /// Vacuum wavelength in nm to frequency.
    pub fn from_wavelength_nm(nm: f64) -> Result<Self, SpectrumError> {
        if !nm.is_finite() || nm <= 0.0 {
            return Err(SpectrumError::BadFrequency(format!("{nm} nm")));
        }
        Self::from_thz(SPEED_OF_LIGHT_M_S / nm / 1.0e3)
    }

    pub const fn units(self) -> u64 {
        self.0
    }

    pub fn thz(self) -> f64 {
        self.0 as f64 / UNITS_PER_THZ as f64
    }

    pub fn wavelength_nm(self) -> f64 {
        SPEED_OF_LIGHT_M_S / self.thz() / 1.0e3
    }

    /// Shifts by a signed number of 100 kHz units.
    pub fn offset_units(self, delta: i64) -> Result<Self, SpectrumError> {
        let v = self.0 as i64 + delta;
        if v <= 0 {
            return Err(SpectrumError::BadFrequency(v.to_string()));
        }
        Self::from_units(v as u64)
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / UNITS_PER_THZ;
        let frac = self.0 % UNITS_PER_THZ;
        if frac == 0 {
            return write!(f, "{whole}.0");
        }
        let digits = format!("{frac:07}");
        write!(f, "{whole}.{}", digits.trim_end_matches('0'))
    }
}

/// Index of a 12.5 GHz flex-grid slot relative to the 193.1 THz anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotIndex(pub i64);

impl SlotIndex {
    /// Lower edge of the slot.
    pub fn start(self) -> Frequency {
        let units = GRID_ANCHOR_UNITS as i64 + self.0 * SLOT_WIDTH_UNITS as i64;
        Frequency(units as u64)
    }
}

impl fmt::Display for SlotIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Converts a width in GHz to 100 kHz units, rounding away float noise.
pub fn width_units(width_ghz: f64) -> Result<u64, SpectrumError> {
    if !width_ghz.is_finite() || width_ghz <= 0.0 {
        return Err(SpectrumError::BadWidth(width_ghz));
    }
    let units = (width_ghz * UNITS_PER_GHZ as f64).round() as u64;
    if units == 0 {
        return Err(SpectrumError::BadWidth(width_ghz));
    }
    Ok(units)
}

/// Number of contiguous slots needed to hold `width_ghz`.
pub fn slots_needed(width_ghz: f64) -> Result<u32, SpectrumError> {
    let units = width_units(width_ghz)?;
    Ok(units.div_ceil(SLOT_WIDTH_UNITS) as u32)
}

/// Every slot whose interval overlaps `[center - width/2, center + width/2]`.
/// Touching a slot edge without overlapping it does not count.
pub fn slot_range(center: Frequency, width_ghz: f64) -> Result<Vec<SlotIndex>, SpectrumError> {
    let w = width_units(width_ghz)? as i64;
    // Doubled units keep the half-width integral.
    let lo2 = 2 * center.units() as i64 - w - 2 * GRID_ANCHOR_UNITS as i64;
    let hi2 = 2 * center.units() as i64 + w - 2 * GRID_ANCHOR_UNITS as i64;
    let s2 = 2 * SLOT_WIDTH_UNITS as i64;
    let first = lo2.div_euclid(s2);
    let last = -((-hi2).div_euclid(s2)) - 1;
    Ok((first..=last).map(SlotIndex).collect())
}

/// Frequency at the middle of a contiguous slot run.
pub fn run_center(first: SlotIndex, count: u32) -> Frequency {
    let start = first.start().units();
    Frequency(start + count as u64 * SLOT_WIDTH_UNITS / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModulationFormat {
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "PM-QPSK")]
    PmQpsk,
    #[serde(rename = "PM-16QAM", alias = "PM-16-QAM")]
    Pm16Qam,
}

impl ModulationFormat {
    /// (bits per symbol per polarisation, polarisations)
    pub fn symbol_shape(self) -> (u32, u32) {
        match self {
            ModulationFormat::Bpsk => (1, 1),
            ModulationFormat::PmQpsk => (2, 2),
            ModulationFormat::Pm16Qam => (4, 2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationFormat::Bpsk => "BPSK",
            ModulationFormat::PmQpsk => "PM-QPSK",
            ModulationFormat::Pm16Qam => "PM-16QAM",
        }
    }
}

impl fmt::Display for ModulationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModulationFormat {
    type Err = SpectrumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BPSK" => Ok(ModulationFormat::Bpsk),
            "PM-QPSK" | "QPSK" => Ok(ModulationFormat::PmQpsk),
            "PM-16QAM" | "PM-16-QAM" | "16QAM" => Ok(ModulationFormat::Pm16Qam),
            _ => Err(SpectrumError::UnknownFormat(s.to_string())),
        }
    }
}

/// Default required OSNR (dB) for the testbed modulator types.
pub fn default_required_osnr(format: ModulationFormat, baud_gbd: f64) -> Option<f64> {
    let baud = baud_gbd.round() as u32;
    if (baud_gbd - baud as f64).abs() > 1e-9 {
        return None;
    }
    match (format, baud) {
        (ModulationFormat::Bpsk, 10) => Some(8.0),
        (ModulationFormat::Bpsk, 40) => Some(14.0),
        (ModulationFormat::PmQpsk, 10) => Some(12.0),
        (ModulationFormat::Pm16Qam, 10) => Some(19.5),
        (ModulationFormat::Pm16Qam, 20) => Some(21.0),
        (ModulationFormat::Pm16Qam, 28) => Some(22.5),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationProfile {
    pub format: ModulationFormat,
    pub baud_gbd: f64,
    pub bits_per_symbol_per_pol: u32,
    pub polarizations: u32,
    pub required_osnr_db: f64,
    pub rolloff: f64,
}

impl ModulationProfile {
    /// Builds a profile with the format's symbol shape and the default roll-off.
    pub fn new(format: ModulationFormat, baud_gbd: f64, required_osnr_db: f64) -> Self {
        let (bits, pols) = format.symbol_shape();
        ModulationProfile {
            format,
            baud_gbd,
            bits_per_symbol_per_pol: bits,
            polarizations: pols,
            required_osnr_db,
            rolloff: DEFAULT_ROLLOFF,
        }
    }

    /// Like [`ModulationProfile::new`] with the default required-OSNR table.
    pub fn testbed(format: ModulationFormat, baud_gbd: f64) -> Self {
        let osnr = default_required_osnr(format, baud_gbd)
            .unwrap_or_else(|| panic!("no default required OSNR for {format} {baud_gbd} GBd"));
        Self::new(format, baud_gbd, osnr)
    }

    pub fn with_rolloff(mut self, rolloff: f64) -> Self {
        self.rolloff = rolloff;
        self
    }

    pub fn validate(&self) -> Result<(), SpectrumError> {
        let bad = |m: &str| Err(SpectrumError::BadProfile(format!("{} {} GBd: {m}", self.format, self.baud_gbd)));
        if !self.baud_gbd.is_finite() || self.baud_gbd <= 0.0 {
            return bad("baud must be positive");
        }
        if self.bits_per_symbol_per_pol == 0 {
            return bad("bits per symbol must be positive");
        }
        if !(1..=2).contains(&self.polarizations) {
            return bad("polarizations must be 1 or 2");
        }
        if !self.required_osnr_db.is_finite() {
            return bad("required OSNR must be finite");
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return bad("roll-off must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn capacity_gbps(&self) -> f64 {
        self.baud_gbd * self.bits_per_symbol_per_pol as f64 * self.polarizations as f64
    }

    pub fn capacity(&self) -> Rate {
        Rate::from_gbps(self.capacity_gbps()).unwrap_or(Rate::ZERO)
    }

    pub fn signal_bandwidth_ghz(&self) -> f64 {
        self.baud_gbd * (1.0 + self.rolloff)
    }

    pub fn slots_needed(&self) -> u32 {
        slots_needed(self.signal_bandwidth_ghz()).expect("validated profile has positive width")
    }

    /// WSS filter width: the signal bandwidth rounded up to whole slots.
    pub fn filter_width_ghz(&self) -> f64 {
        self.slots_needed() as f64 * SLOT_WIDTH_GHZ
    }

    pub fn label(&self) -> String {
        format!("{} {} GBd", self.format, self.baud_gbd)
    }
}

pub fn capacity_gbps(profile: &ModulationProfile) -> f64 {
    profile.capacity_gbps()
}

pub fn signal_bandwidth_ghz(profile: &ModulationProfile) -> f64 {
    profile.signal_bandwidth_ghz()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub profile: ModulationProfile,
    pub count: u32,
}

/// The modulator pool template: which profiles exist and how many of each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationCatalog {
    entries: Vec<CatalogEntry>,
}

impl ModulationCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self, SpectrumError> {
        for (i, e) in entries.iter().enumerate() {
            e.profile.validate()?;
            let dup = entries[..i]
                .iter()
                .any(|o| o.profile.format == e.profile.format && o.profile.baud_gbd == e.profile.baud_gbd);
            if dup {
                return Err(SpectrumError::DuplicateProfile { format: e.profile.format, baud: e.profile.baud_gbd });
            }
        }
        Ok(ModulationCatalog { entries })
    }

    /// One instance each of PM-16QAM 10/20/28 GBd, BPSK 10/40 GBd and PM-QPSK 10 GBd.
    pub fn testbed() -> Self {
        use ModulationFormat::*;
        let entries = [(Pm16Qam, 10.0), (Pm16Qam, 20.0), (Pm16Qam, 28.0), (Bpsk, 10.0), (Bpsk, 40.0), (PmQpsk, 10.0)]
            .into_iter()
            .map(|(f, b)| CatalogEntry { profile: ModulationProfile::testbed(f, b), count: 1 })
            .collect();
        ModulationCatalog { entries }
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn instance_count(&self) -> u32 {
        self.entries.iter().map(|e| e.count).sum()
    }

    /// Profiles expanded one per instance, in catalog order.
    pub fn instances(&self) -> impl Iterator<Item = &ModulationProfile> {
        self.entries.iter().flat_map(|e| std::iter::repeat_n(&e.profile, e.count as usize))
    }
}
