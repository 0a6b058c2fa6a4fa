//! Instrumented memory for the driver model. Named regions with declared
//! capacities sit adjacently inside a group; every write is logged, and the
//! part of a write that runs past its target region's capacity spills into
//! the adjacent storage and is flagged as an overflow. Canary bytes guard the
//! end of every group so corruption beyond the declared regions is recorded
//! as a violation rather than touching unrelated state.

use serde::Serialize;

use crate::profile::Profile;
use crate::stack_frame;

pub const CANARY_LEN: usize = 16;
pub const CANARY_BYTE: u8 = 0xaa;

pub const GROUP_HEAP: &str = "heap";
pub const GROUP_STACK: &str = "stack";
pub const GROUP_ENTITY: &str = "entity";

pub const REGION_IRQ_MAP: &str = "irq_enable_map";
pub const REGION_IRQ_COUNT: &str = "irq_source_count";
pub const REGION_STATUS_BUF: &str = "status_buf";
pub const REGION_PAD: &str = "pad";
pub const REGION_SAVED_FP: &str = "saved_fp";
pub const REGION_SAVED_LR: &str = "saved_lr";
pub const REGION_CALLER: &str = "caller_area";
pub const REGION_ENTITY_BUF: &str = "entity_buffer";

/// One logged write. `offset` stays in the target region's coordinates, so an
/// overflowing record has `offset >= capacity`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WriteRecord {
    pub group: String,
    pub region: String,
    pub offset: usize,
    pub len: usize,
    pub overflow: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CanaryViolation {
    pub group: String,
    /// Offset of the first smashed byte within the canary zone.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
struct Region {
    name: &'static str,
    capacity: usize,
    start: usize,
}

#[derive(Debug, Clone)]
struct Group {
    name: &'static str,
    regions: Vec<Region>,
    arena: Vec<u8>,
    data_len: usize,
}

impl Group {
    fn new(name: &'static str, layout: &[(&'static str, usize)]) -> Self {
        let mut regions = Vec::with_capacity(layout.len());
        let mut start = 0;
        for (rname, cap) in layout {
            regions.push(Region { name: rname, capacity: *cap, start });
            start += cap;
        }
        let data_len = start;
        let mut arena = vec![0u8; data_len + CANARY_LEN];
        for b in arena[data_len..].iter_mut() {
            *b = CANARY_BYTE;
        }
        Group { name, regions, arena, data_len }
    }

    fn region(&self, name: &str) -> &Region {
        self.regions
            .iter()
            .find(|r| r.name == name)
            .unwrap_or_else(|| panic!("unknown region {name} in group {}", self.name))
    }
}

#[derive(Debug, Clone, Default)]
pub struct SandboxMemory {
    groups: Vec<Group>,
    write_log: Vec<WriteRecord>,
    canary_violations: Vec<CanaryViolation>,
}

impl SandboxMemory {
    /// Regions for one driver instance. The heap places the interrupt source
    /// count directly after the 4-byte enable map; the stack frame follows the
    /// published exploit layout; the entity buffer serves the Atmel-like path.
    pub fn for_profile(profile: &Profile) -> Self {
        let limits = &profile.driver;
        SandboxMemory {
            groups: vec![
                Group::new(
                    GROUP_HEAP,
                    &[(REGION_IRQ_MAP, limits.irq_map_capacity), (REGION_IRQ_COUNT, 4)],
                ),
                Group::new(
                    GROUP_STACK,
                    &[
                        (REGION_STATUS_BUF, stack_frame::STATUS_BUF_CAP),
                        (REGION_PAD, stack_frame::PAD_LEN),
                        (REGION_SAVED_FP, stack_frame::SAVED_FP_LEN),
                        (REGION_SAVED_LR, stack_frame::SAVED_LR_LEN),
                        (REGION_CALLER, stack_frame::CALLER_AREA_LEN),
                    ],
                ),
                Group::new(GROUP_ENTITY, &[(REGION_ENTITY_BUF, limits.entity_buffer_capacity)]),
            ],
            write_log: Vec::new(),
            canary_violations: Vec::new(),
        }
    }

    fn group(&self, name: &str) -> &Group {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .unwrap_or_else(|| panic!("unknown sandbox group {name}"))
    }

    fn group_mut(&mut self, name: &str) -> &mut Group {
        self.groups
            .iter_mut()
            .find(|g| g.name == name)
            .unwrap_or_else(|| panic!("unknown sandbox group {name}"))
    }

    /// Write `bytes` at `offset` into `region`, logging the in-bounds part and
    /// the overflowing part separately. Bytes land in the group arena in
    /// adjacency order; whatever runs past the arena is dropped.
    pub fn write(&mut self, group: &str, region: &str, offset: usize, bytes: &[u8]) {
        if bytes.is_empty() {
            return;
        }
        let (records, violation) = {
            let g = self.group_mut(group);
            let r = g.region(region);
            let cap = r.capacity;
            let abs = r.start + offset;
            let gname = g.name.to_string();
            let rname = r.name.to_string();

            let mut records = Vec::with_capacity(2);
            if offset < cap {
                let in_len = bytes.len().min(cap - offset);
                records.push(WriteRecord {
                    group: gname.clone(),
                    region: rname.clone(),
                    offset,
                    len: in_len,
                    overflow: false,
                });
                if bytes.len() > in_len {
                    records.push(WriteRecord {
                        group: gname.clone(),
                        region: rname.clone(),
                        offset: cap,
                        len: bytes.len() - in_len,
                        overflow: true,
                    });
                }
            } else {
                records.push(WriteRecord {
                    group: gname.clone(),
                    region: rname,
                    offset,
                    len: bytes.len(),
                    overflow: true,
                });
            }

            let end = (abs + bytes.len()).min(g.arena.len());
            if abs < g.arena.len() {
                g.arena[abs..end].copy_from_slice(&bytes[..end - abs]);
            }

            // Canary zone sits at [data_len, data_len + CANARY_LEN).
            let zone = g.data_len;
            let violation = if abs + bytes.len() > zone {
                let first = abs.max(zone) - zone;
                let hit = (abs + bytes.len() - zone).min(CANARY_LEN) - first;
                Some(CanaryViolation { group: gname, offset: first, len: hit })
            } else {
                None
            };
            (records, violation)
        };
        self.write_log.extend(records);
        if let Some(v) = violation {
            self.canary_violations.push(v);
        }
    }

    /// Arena-linear read starting at a region offset; zeros past the arena.
    /// Spilled writes are visible here, which is what lets corruption of one
    /// region be observed through its neighbor.
    pub fn read_byte(&self, group: &str, region: &str, offset: usize) -> u8 {
        let g = self.group(group);
        let r = g.region(region);
        g.arena.get(r.start + offset).copied().unwrap_or(0)
    }

    pub fn read_u32(&self, group: &str, region: &str) -> u32 {
        u32::from_le_bytes([
            self.read_byte(group, region, 0),
            self.read_byte(group, region, 1),
            self.read_byte(group, region, 2),
            self.read_byte(group, region, 3),
        ])
    }

    /// The declared-regions part of a group (canary excluded).
    pub fn group_image(&self, group: &str) -> &[u8] {
        let g = self.group(group);
        &g.arena[..g.data_len]
    }

    pub fn region_capacity(&self, group: &str, region: &str) -> usize {
        self.group(group).region(region).capacity
    }

    pub fn write_log(&self) -> &[WriteRecord] {
        &self.write_log
    }

    pub fn overflow_records(&self) -> Vec<WriteRecord> {
        self.write_log.iter().filter(|r| r.overflow).cloned().collect()
    }

    pub fn canary_violations(&self) -> &[CanaryViolation] {
        &self.canary_violations
    }

    /// Overflow records plus canary violations; the headline number in
    /// reports.
    pub fn violation_count(&self) -> usize {
        self.write_log.iter().filter(|r| r.overflow).count() + self.canary_violations.len()
    }
}
