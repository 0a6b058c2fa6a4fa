//! Model of the vendor touch device driver. Faithfully unsafe: the boot probe
//! populates a 4-byte interrupt enable map through an unchecked loop, the
//! interrupt path derives its status read length from the (corruptible)
//! source count without clamping, and the Atmel-like profile trusts entity
//! sizes it read off the bus. All memory effects land in [`SandboxMemory`]
//! where they are observable instead of corrupting the simulator.

pub mod kernel;
pub mod rop;
pub mod sandbox;

use serde::Serialize;
use thiserror::Error;

use crate::bus::{BusAccess, BusError};
use crate::controller::{FunctionDescriptor, TouchState, REG_FINGER_BITMAP, REG_TOUCH_REPORT};
use crate::profile::Profile;
use crate::stack_frame;

use kernel::{apply_kernel_patch, KernelState, PatchSiteTable};
use rop::{GadgetCatalog, RopExecution, KERNEL_WRITE_SYMBOL};
use sandbox::{SandboxMemory, GROUP_ENTITY, GROUP_HEAP, GROUP_STACK, REGION_ENTITY_BUF, REGION_IRQ_COUNT, REGION_IRQ_MAP, REGION_STATUS_BUF};

/// Atmel-like protocol registers.
pub const ATMEL_ENTITY_COUNT_REG: u16 = 0x0000;
pub const ATMEL_ENTITY_TABLE_BASE: u16 = 0x0010;
pub const ATMEL_ENTITY_DATA_BASE: u16 = 0x0100;

/// Descriptor slots probed per table before the driver gives up.
const MAX_SLOTS_PER_TABLE: usize = 300;

/// Decoded touch event as delivered to the phone UI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TouchEventOut {
    pub finger_id: u8,
    pub x: u16,
    pub y: u16,
    pub pressure: u8,
    pub state: TouchState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveredFunction {
    pub slot_addr: u16,
    pub descriptor: FunctionDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirmwareCheck {
    UpToDate,
    UpdateTriggered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootReport {
    pub functions: Vec<DiscoveredFunction>,
    /// Total interrupt sources the descriptors claimed; also what now sits in
    /// the heap-resident count after the map population loop ran.
    pub claimed_irq_sources: u32,
    pub firmware: Option<FirmwareCheck>,
    /// The extended-table scan died on an unacknowledged read (firewalled or
    /// dead bus) and the driver carried on with what it had.
    pub extended_scan_aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InterruptOutcome {
    /// No interrupt sources configured; nothing read.
    Idle,
    Touch(Vec<TouchEventOut>),
    /// The status read overran the frame and the chain interpreter ran.
    Exploit(RopExecution),
    /// Status read happened but carried nothing actionable.
    Spurious,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AtmelOutcome {
    BootOk { entities: Vec<(u8, u16)> },
    /// Unsafe entity read overran the global buffer; the modeled result is a
    /// crash, not exploitation.
    DriverCrash { overflow_offset: usize, overflow_len: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DriverError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("malformed touch report: {0}")]
    MalformedReport(String),
}

#[derive(Debug, Clone)]
pub struct Driver {
    profile: Profile,
    discovered: Vec<DiscoveredFunction>,
    irq_enabled: bool,
    last_status_read_len: Option<u32>,
}

impl Driver {
    pub fn new(profile: Profile) -> Self {
        Driver { profile, discovered: Vec::new(), irq_enabled: false, last_status_read_len: None }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn discovered(&self) -> &[DiscoveredFunction] {
        &self.discovered
    }

    pub fn irq_enabled(&self) -> bool {
        self.irq_enabled
    }

    /// Read-length law witness: what the last interrupt service computed.
    pub fn last_status_read_len(&self) -> Option<u32> {
        self.last_status_read_len
    }

    pub fn function(&self, id: u8) -> Option<&DiscoveredFunction> {
        self.discovered.iter().find(|f| f.descriptor.function_id == id)
    }

    fn function_bit(&self, id: u8) -> Option<usize> {
        self.discovered.iter().position(|f| f.descriptor.function_id == id)
    }

    /// Forget everything learned at boot; used on reboot.
    pub fn reset(&mut self) {
        self.discovered.clear();
        self.irq_enabled = false;
        self.last_status_read_len = None;
    }

    fn scan_table(
        &mut self,
        bus: &mut dyn BusAccess,
        base: u16,
        aborted: &mut bool,
    ) {
        let sa = self.profile.slave_addr;
        for k in 0..MAX_SLOTS_PER_TABLE {
            let Some(slot) = Profile::slot_addr(base, k) else { break };
            match bus.read_reg(sa, slot, FunctionDescriptor::SIZE as u32) {
                Ok(bytes) => {
                    let arr: [u8; 6] = bytes.try_into().expect("6-byte read");
                    let fd = FunctionDescriptor::from_bytes(&arr);
                    if fd.is_terminator() {
                        break;
                    }
                    self.discovered.push(DiscoveredFunction { slot_addr: slot, descriptor: fd });
                }
                Err(_) => {
                    // Dead or filtered bus: end the scan, keep booting.
                    *aborted = true;
                    break;
                }
            }
        }
    }

    /// Probe the controller: walk both descriptor tables, populate the
    /// interrupt enable map (the unchecked loop), store the source count,
    /// run the firmware check, enable interrupts.
    pub fn boot_probe(&mut self, bus: &mut dyn BusAccess, sb: &mut SandboxMemory) -> BootReport {
        self.reset();
        let sa = self.profile.slave_addr;
        let mut aborted = false;
        let std_base = self.profile.descriptor_table_base;
        let ext_base = self.profile.extended_table_base;
        self.scan_table(bus, std_base, &mut aborted);
        self.scan_table(bus, ext_base, &mut aborted);

        // One enable bit per claimed interrupt source. The byte index is
        // never checked against the map capacity; whatever lies past it gets
        // overwritten, starting with the source count itself.
        let mut bit: usize = 0;
        for f in &self.discovered {
            for _ in 0..f.descriptor.irq_source_count {
                let off = bit / 8;
                let cur = sb.read_byte(GROUP_HEAP, REGION_IRQ_MAP, off);
                sb.write(GROUP_HEAP, REGION_IRQ_MAP, off, &[cur | 1 << (bit % 8)]);
                bit += 1;
            }
        }
        let claimed = bit as u32;
        sb.write(GROUP_HEAP, REGION_IRQ_COUNT, 0, &claimed.to_le_bytes());

        let firmware = self.firmware_check_via_bus(bus);

        if let Some(f01) = self.function(0x01) {
            let ctl = u16::from(f01.descriptor.control_addr);
            // Enable handlers and write configuration; also the boot-complete
            // marker on the wire.
            let _ = bus.write_reg(sa, ctl, &[0x01]);
        }
        self.irq_enabled = true;

        BootReport {
            functions: self.discovered.clone(),
            claimed_irq_sources: claimed,
            firmware,
            extended_scan_aborted: aborted,
        }
    }

    fn firmware_check_via_bus(&mut self, bus: &mut dyn BusAccess) -> Option<FirmwareCheck> {
        let f51 = self.function(0x51)?.descriptor;
        let sa = self.profile.slave_addr;
        let installed = bus.read_reg(sa, u16::from(f51.query_addr), 4).ok()?;
        let installed: [u8; 4] = installed.try_into().ok()?;
        let outcome = firmware_check(installed, self.profile.firmware_version);
        if outcome == FirmwareCheck::UpdateTriggered {
            // Update stub: push the embedded image version at the data
            // address; real flashing is out of scope.
            let _ = bus.write_reg(sa, u16::from(f51.data_addr), &self.profile.firmware_version);
        }
        Some(outcome)
    }

    /// Service one interrupt. The status read length is derived from the
    /// heap-resident source count with no clamp; that is the vulnerability,
    /// and the firewall, not the driver, is the mitigation.
    pub fn on_interrupt(
        &mut self,
        bus: &mut dyn BusAccess,
        sb: &mut SandboxMemory,
        catalog: &GadgetCatalog,
        patch_table: &PatchSiteTable,
        kernel: &mut KernelState,
    ) -> Result<InterruptOutcome, DriverError> {
        let count = sb.read_u32(GROUP_HEAP, REGION_IRQ_COUNT);
        if count == 0 {
            return Ok(InterruptOutcome::Idle);
        }
        let status_len = count.div_ceil(8);
        self.last_status_read_len = Some(status_len);
        let sa = self.profile.slave_addr;
        let status_addr = self
            .function(0x01)
            .map(|f| u16::from(f.descriptor.data_addr))
            .unwrap_or(crate::controller::REG_IRQ_STATUS);
        let status = match bus.read_reg(sa, status_addr, status_len) {
            Ok(b) => b,
            Err(BusError::NoAck(_)) => return Ok(InterruptOutcome::Spurious),
            Err(e) => return Err(e.into()),
        };
        sb.write(GROUP_STACK, REGION_STATUS_BUF, 0, &status);

        if status.len() >= stack_frame::SAVED_LR_OFFSET + stack_frame::SAVED_LR_LEN {
            // The read ran through the saved return address; interpret what
            // now sits in the frame.
            let image = sb.group_image(GROUP_STACK)[..stack_frame::FRAME_LEN].to_vec();
            let run = rop::interpret_overflow(&image, catalog);
            if let Some(write_fn) = catalog.symbol(KERNEL_WRITE_SYMBOL) {
                for call in &run.call_log {
                    if call.target == write_fn {
                        apply_kernel_patch(kernel, patch_table, call.arg0, call.arg1);
                    }
                }
            }
            return Ok(InterruptOutcome::Exploit(run));
        }

        let Some(touch_bit) = self.function_bit(0x12) else {
            return Ok(InterruptOutcome::Spurious);
        };
        if touch_bit >= 8 || status[0] & (1 << touch_bit) == 0 {
            return Ok(InterruptOutcome::Spurious);
        }
        let bitmap_bytes = match bus.read_reg(sa, REG_FINGER_BITMAP, 2) {
            Ok(b) => b,
            Err(BusError::NoAck(_)) => return Ok(InterruptOutcome::Spurious),
            Err(e) => return Err(e.into()),
        };
        let bitmap = u16::from_le_bytes([bitmap_bytes[0], bitmap_bytes[1]]);
        let fingers = bitmap.count_ones();
        if fingers == 0 {
            return Ok(InterruptOutcome::Spurious);
        }
        let report = match bus.read_reg(sa, REG_TOUCH_REPORT, fingers * 8) {
            Ok(b) => b,
            Err(BusError::NoAck(_)) => return Ok(InterruptOutcome::Spurious),
            Err(e) => return Err(e.into()),
        };
        let events = decode_touch(&report, bitmap)?;
        Ok(InterruptOutcome::Touch(events))
    }

    /// Atmel-like boot: read the entity table, then each entity's data with
    /// the size the controller reported, unchecked against the 80-byte
    /// global buffer (the transfer itself is capped at the profile's read
    /// max). Any overflow ends in the modeled crash.
    pub fn atmel_probe(
        &mut self,
        bus: &mut dyn BusAccess,
        sb: &mut SandboxMemory,
    ) -> Result<AtmelOutcome, DriverError> {
        let sa = self.profile.slave_addr;
        let cap = self.profile.driver.entity_buffer_capacity;
        let count = bus.read_reg(sa, ATMEL_ENTITY_COUNT_REG, 1)?[0];
        let mut entities = Vec::new();
        for k in 0..u16::from(count) {
            let hdr = bus.read_reg(sa, ATMEL_ENTITY_TABLE_BASE + 3 * k, 3)?;
            let id = hdr[0];
            let size = u16::from_le_bytes([hdr[1], hdr[2]]);
            if size > 0 {
                let read_len = u32::from(size).min(self.profile.driver.entity_read_max);
                let data = bus.read_reg(sa, ATMEL_ENTITY_DATA_BASE + k, read_len)?;
                sb.write(GROUP_ENTITY, REGION_ENTITY_BUF, 0, &data);
                if data.len() > cap {
                    return Ok(AtmelOutcome::DriverCrash {
                        overflow_offset: cap,
                        overflow_len: data.len() - cap,
                    });
                }
            }
            entities.push((id, size));
        }
        Ok(AtmelOutcome::BootOk { entities })
    }
}

/// Compare installed firmware against the image embedded in the kernel.
pub fn firmware_check(installed: [u8; 4], embedded: [u8; 4]) -> FirmwareCheck {
    if installed == embedded {
        FirmwareCheck::UpToDate
    } else {
        FirmwareCheck::UpdateTriggered
    }
}

/// Decode a touch report against its finger bitmap; the exact inverse of the
/// controller's encoder on the supported domain.
pub fn decode_touch(report: &[u8], bitmap: u16) -> Result<Vec<TouchEventOut>, DriverError> {
    let fingers = bitmap.count_ones() as usize;
    if report.len() != fingers * 8 {
        return Err(DriverError::MalformedReport(format!(
            "bitmap names {fingers} finger(s) but report is {} bytes",
            report.len()
        )));
    }
    let mut events = Vec::with_capacity(fingers);
    let mut seen: u16 = 0;
    let mut last_id: i16 = -1;
    for rec in report.chunks_exact(8) {
        let finger_id = rec[0] >> 4;
        let state = TouchState::from_nibble(rec[0] & 0x0f).ok_or_else(|| {
            DriverError::MalformedReport(format!("bad state nibble 0x{:x}", rec[0] & 0x0f))
        })?;
        if i16::from(finger_id) <= last_id {
            return Err(DriverError::MalformedReport("finger ids not ascending".into()));
        }
        last_id = i16::from(finger_id);
        seen |= 1 << finger_id;
        events.push(TouchEventOut {
            finger_id,
            x: u16::from_le_bytes([rec[1], rec[2]]),
            y: u16::from_le_bytes([rec[3], rec[4]]),
            pressure: rec[5],
            state,
        });
    }
    if seen != bitmap {
        return Err(DriverError::MalformedReport(format!(
            "report fingers 0x{seen:03x} disagree with bitmap 0x{bitmap:03x}"
        )));
    }
    Ok(events)
}

/// The read responses an Atmel-like controller would give for the probe of
/// `entities`; feeds [`crate::controller::ReplayController`]. Data bytes are a
/// deterministic pattern.
pub fn atmel_response_script(profile: &Profile, entities: &[(u8, u16)]) -> Vec<(u16, u32, Vec<u8>)> {
    let mut script = Vec::new();
    script.push((ATMEL_ENTITY_COUNT_REG, 1, vec![entities.len() as u8]));
    for (k, (id, size)) in entities.iter().enumerate() {
        let k = k as u16;
        let sz = size.to_le_bytes();
        script.push((ATMEL_ENTITY_TABLE_BASE + 3 * k, 3, vec![*id, sz[0], sz[1]]));
        if *size > 0 {
            let read_len = u32::from(*size).min(profile.driver.entity_read_max);
            let data = (0..read_len).map(|i| (i as u8).wrapping_add(*id)).collect();
            script.push((ATMEL_ENTITY_DATA_BASE + k, read_len, data));
        }
    }
    script
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{Bus, Wire};
    use crate::controller::{Controller, ReplayController, TouchFrame};

    fn world() -> (Bus, Controller, Driver, SandboxMemory) {
        let profile = Profile::synaptics_like();
        (
            Bus::new(0, &profile.name),
            Controller::new(&profile),
            Driver::new(profile.clone()),
            SandboxMemory::for_profile(&profile),
        )
    }

    #[test]
    fn benign_boot_discovers_three_functions_cleanly() {
        let (mut bus, mut ctl, mut drv, mut sb) = world();
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut ctl };
        let report = drv.boot_probe(&mut wire, &mut sb);
        let ids: Vec<u8> = report.functions.iter().map(|f| f.descriptor.function_id).collect();
        assert_eq!(ids, vec![0x01, 0x12, 0x51]);
        assert_eq!(report.claimed_irq_sources, 3);
        assert_eq!(report.firmware, Some(FirmwareCheck::UpToDate));
        assert!(!report.extended_scan_aborted);
        // Three enable bits, count is 3, nothing spilled.
        assert_eq!(sb.read_byte(sandbox::GROUP_HEAP, sandbox::REGION_IRQ_MAP, 0), 0b0000_0111);
        assert_eq!(sb.read_u32(sandbox::GROUP_HEAP, sandbox::REGION_IRQ_COUNT), 3);
        assert_eq!(sb.violation_count(), 0);
    }

    #[test]
    fn empty_table_boots_to_idle() {
        let profile = Profile::synaptics_like();
        let mut empty = profile.clone();
        empty.functions.clear();
        let mut bus = Bus::new(0, "t");
        let mut ctl = Controller::new(&empty);
        let mut drv = Driver::new(profile.clone());
        let mut sb = SandboxMemory::for_profile(&profile);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut ctl };
        let report = drv.boot_probe(&mut wire, &mut sb);
        assert!(report.functions.is_empty());
        assert_eq!(report.firmware, None);
        let outcome = drv
            .on_interrupt(&mut wire, &mut sb, &GadgetCatalog::builtin(), &PatchSiteTable::builtin(), &mut KernelState::default())
            .unwrap();
        assert_eq!(outcome, InterruptOutcome::Idle);
    }

    #[test]
    fn firmware_mismatch_triggers_update_stub_write() {
        let (mut bus, mut ctl, mut drv, mut sb) = world();
        ctl.set_firmware_version([9, 9, 9, 9]);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut ctl };
        let report = drv.boot_probe(&mut wire, &mut sb);
        assert_eq!(report.firmware, Some(FirmwareCheck::UpdateTriggered));
        let update_write = bus.records().iter().any(|r| {
            r.kind == crate::bus::EventKind::RegWrite && r.reg_addr == 0x0000 && r.data.len() == 4
        });
        assert!(update_write, "expected the stub update write to the 0x51 data region");
    }

    #[test]
    fn firmware_check_is_pure_comparison() {
        assert_eq!(firmware_check([1, 2, 3, 4], [1, 2, 3, 4]), FirmwareCheck::UpToDate);
        assert_eq!(firmware_check([1, 2, 3, 4], [1, 2, 3, 5]), FirmwareCheck::UpdateTriggered);
    }

    #[test]
    fn benign_interrupt_reads_one_status_byte_and_delivers_touch() {
        let (mut bus, mut ctl, mut drv, mut sb) = world();
        {
            let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut ctl };
            drv.boot_probe(&mut wire, &mut sb);
        }
        ctl.queue_touch(&TouchFrame::tap_down(0, 100, 200, 40)).unwrap();
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut ctl };
        wire.sync_irq();
        assert!(bus.irq_asserted());
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut ctl };
        let outcome = drv
            .on_interrupt(&mut wire, &mut sb, &GadgetCatalog::builtin(), &PatchSiteTable::builtin(), &mut KernelState::default())
            .unwrap();
        assert_eq!(drv.last_status_read_len(), Some(1));
        match outcome {
            InterruptOutcome::Touch(events) => {
                assert_eq!(events.len(), 1);
                assert_eq!((events[0].x, events[0].y, events[0].pressure), (100, 200, 40));
            }
            other => panic!("expected touch, got {other:?}"),
        }
        assert_eq!(sb.violation_count(), 0);
    }

    #[test]
    fn thirty_two_sources_read_four_bytes_without_overflow() {
        let (_, _, mut drv, mut sb) = world();
        // Pretend boot discovered enough sources for the benign maximum.
        sb.write(GROUP_HEAP, REGION_IRQ_COUNT, 0, &32u32.to_le_bytes());
        drv.discovered = vec![DiscoveredFunction {
            slot_addr: 0x00e9,
            descriptor: Profile::synaptics_like().functions[0],
        }];
        let profile = Profile::synaptics_like();
        let mut bus = Bus::new(0, "t");
        let mut ctl = Controller::new(&profile);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut ctl };
        let outcome = drv
            .on_interrupt(&mut wire, &mut sb, &GadgetCatalog::builtin(), &PatchSiteTable::builtin(), &mut KernelState::default())
            .unwrap();
        assert_eq!(drv.last_status_read_len(), Some(4));
        assert_eq!(outcome, InterruptOutcome::Spurious);
        assert!(sb.overflow_records().is_empty());
    }

    #[test]
    fn decode_matches_bitmap_or_rejects() {
        let frame = TouchFrame::tap_down(0, 5, 6, 7);
        let report = crate::controller::encode_touch_report(&frame);
        let events = decode_touch(&report, 0x0001).unwrap();
        assert_eq!(events.len(), 1);
        assert!(decode_touch(&report, 0x0003).is_err());
        assert!(decode_touch(&[], 0x0000).unwrap().is_empty());
    }

    #[test]
    fn atmel_benign_entities_boot_clean() {
        let profile = Profile::atmel_like();
        let entities = vec![(1u8, 64u16), (2, 80)];
        let script = atmel_response_script(&profile, &entities);
        let mut rc = ReplayController::from_script(profile.slave_addr, script);
        let mut bus = Bus::new(0, &profile.name);
        let mut drv = Driver::new(profile.clone());
        let mut sb = SandboxMemory::for_profile(&profile);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut rc };
        let outcome = drv.atmel_probe(&mut wire, &mut sb).unwrap();
        assert_eq!(outcome, AtmelOutcome::BootOk { entities });
        assert_eq!(sb.violation_count(), 0);
    }

    #[test]
    fn atmel_oversized_entity_overflows_at_eighty_and_crashes() {
        let profile = Profile::atmel_like();
        let script = atmel_response_script(&profile, &[(1, 2048)]);
        let mut rc = ReplayController::from_script(profile.slave_addr, script);
        let mut bus = Bus::new(0, &profile.name);
        let mut drv = Driver::new(profile.clone());
        let mut sb = SandboxMemory::for_profile(&profile);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut rc };
        let outcome = drv.atmel_probe(&mut wire, &mut sb).unwrap();
        assert_eq!(outcome, AtmelOutcome::DriverCrash { overflow_offset: 80, overflow_len: 1968 });
        let overflows = sb.overflow_records();
        assert_eq!(overflows.len(), 1);
        assert_eq!((overflows[0].offset, overflows[0].len), (80, 1968));
    }

    #[test]
    fn atmel_boundary_entity_overflows_by_one_byte() {
        let profile = Profile::atmel_like();
        let script = atmel_response_script(&profile, &[(1, 81)]);
        let mut rc = ReplayController::from_script(profile.slave_addr, script);
        let mut bus = Bus::new(0, &profile.name);
        let mut drv = Driver::new(profile.clone());
        let mut sb = SandboxMemory::for_profile(&profile);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut rc };
        let outcome = drv.atmel_probe(&mut wire, &mut sb).unwrap();
        assert_eq!(outcome, AtmelOutcome::DriverCrash { overflow_offset: 80, overflow_len: 1 });
        let overflows = sb.overflow_records();
        assert_eq!(overflows.len(), 1);
        assert_eq!((overflows[0].offset, overflows[0].len), (80, 1));
    }
}
