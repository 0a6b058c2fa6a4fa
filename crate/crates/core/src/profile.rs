//! Hardware/driver profiles. A profile fixes everything the bus endpoints
//! agree on up front: slave address, panel geometry, descriptor table layout,
//! firmware version bytes and the driver's buffer capacities. Two builtin
//! profiles ship, mirrored by the JSON files under `assets/profiles/`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::FunctionDescriptor;
use crate::hexfmt;

pub const SYNAPTICS_LIKE: &str = "synaptics_like";
pub const ATMEL_LIKE: &str = "atmel_like";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SynapticsLike,
    AtmelLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelGeometry {
    pub width: u16,
    pub height: u16,
}

/// Capacities of the driver's fixed buffers. The values are what make the
/// vulnerabilities concrete: a 4-byte interrupt enable map next to the source
/// count, and an 80-byte entity buffer fed by unchecked size fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverLimits {
    pub irq_map_capacity: usize,
    pub status_read_max: u32,
    pub entity_buffer_capacity: usize,
    pub entity_read_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub v: u32,
    pub name: String,
    pub family: Family,
    #[serde(with = "hexfmt::u8_hex")]
    pub slave_addr: u8,
    #[serde(with = "hexfmt::u8_hex")]
    pub display_addr: u8,
    pub panel: PanelGeometry,
    /// First descriptor slot of the standard table; the scan descends from
    /// here in 6-byte steps.
    #[serde(with = "hexfmt::u16_hex")]
    pub descriptor_table_base: u16,
    /// First slot of the extended table the driver also probes. Sits above
    /// 0x500, where a benign controller has nothing mapped.
    #[serde(with = "hexfmt::u16_hex")]
    pub extended_table_base: u16,
    pub functions: Vec<FunctionDescriptor>,
    pub firmware_version: [u8; 4],
    pub driver: DriverLimits,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown builtin profile {0:?}")]
    UnknownBuiltin(String),
}

impl Profile {
    pub fn synaptics_like() -> Self {
        Profile {
            v: 1,
            name: SYNAPTICS_LIKE.to_string(),
            family: Family::SynapticsLike,
            slave_addr: crate::bus::DEFAULT_CONTROLLER_ADDR,
            display_addr: crate::bus::DEFAULT_DISPLAY_ADDR,
            panel: PanelGeometry { width: 1440, height: 2560 },
            descriptor_table_base: 0x00e9,
            extended_table_base: 0x0ae9,
            functions: vec![
                // Partial function index: general control, touch reporting,
                // firmware update.
                FunctionDescriptor {
                    function_id: 0x01,
                    query_addr: 0x3f,
                    command_addr: 0x36,
                    control_addr: 0x14,
                    data_addr: 0x06,
                    irq_source_count: 1,
                },
                FunctionDescriptor {
                    function_id: 0x12,
                    query_addr: 0x5c,
                    command_addr: 0x00,
                    control_addr: 0x1b,
                    data_addr: 0x08,
                    irq_source_count: 1,
                },
                FunctionDescriptor {
                    function_id: 0x51,
                    query_addr: 0x04,
                    command_addr: 0x00,
                    control_addr: 0x00,
                    data_addr: 0x00,
                    irq_source_count: 1,
                },
            ],
            firmware_version: [0x01, 0x02, 0x03, 0x04],
            driver: DriverLimits {
                irq_map_capacity: 4,
                status_read_max: 4,
                entity_buffer_capacity: 80,
                entity_read_max: 2048,
            },
        }
    }

    pub fn atmel_like() -> Self {
        Profile {
            v: 1,
            name: ATMEL_LIKE.to_string(),
            family: Family::AtmelLike,
            slave_addr: 0x4a,
            display_addr: crate::bus::DEFAULT_DISPLAY_ADDR,
            panel: PanelGeometry { width: 800, height: 1280 },
            descriptor_table_base: 0x00e9,
            extended_table_base: 0x0ae9,
            functions: Vec::new(),
            firmware_version: [0x10, 0xaa, 0x00, 0x20],
            driver: DriverLimits {
                irq_map_capacity: 4,
                status_read_max: 4,
                entity_buffer_capacity: 80,
                entity_read_max: 2048,
            },
        }
    }

    pub fn builtin(name: &str) -> Result<Self, ProfileError> {
        match name {
            SYNAPTICS_LIKE => Ok(Self::synaptics_like()),
            ATMEL_LIKE => Ok(Self::atmel_like()),
            other => Err(ProfileError::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile encode")
    }

    pub fn function(&self, id: u8) -> Option<&FunctionDescriptor> {
        self.functions.iter().find(|f| f.function_id == id)
    }

    /// Slot address of descriptor `index` in a table descending from `base`.
    /// `None` once the table would run off the bottom of the address space.
    pub fn slot_addr(base: u16, index: usize) -> Option<u16> {
        base.checked_sub((index as u16).checked_mul(6)?)
    }
}
