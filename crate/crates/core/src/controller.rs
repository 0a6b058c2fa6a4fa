//! Emulated benign touch controller: function-descriptor table, register
//! file, touch-report generation with interrupt signaling, a firmware-update
//! stub, and a replay endpoint that answers from a recorded trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::Slave;
use crate::hexfmt;
use crate::profile::Profile;

/// Interrupt status register; reading it releases the line.
pub const REG_IRQ_STATUS: u16 = 0x0006;
/// Touch report register; a read returns the encoded frame.
pub const REG_TOUCH_REPORT: u16 = 0x0008;
/// Finger bitmap, one bit per finger id, two bytes.
pub const REG_FINGER_BITMAP: u16 = 0x000c;

/// Most fingers a frame can carry.
pub const MAX_FINGERS: usize = 10;
/// Bytes per finger record in a touch report.
pub const RECORD_LEN: usize = 8;

/// The 6-byte capability record the driver probes for at boot.
///
/// Serialized layout: `[function_id, query, command, control, data, count]`
/// with the interrupt source count in the low 3 bits of the sixth byte.
/// A `function_id` of zero terminates a table scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDescriptor {
    #[serde(with = "hexfmt::u8_hex")]
    pub function_id: u8,
    #[serde(with = "hexfmt::u8_hex")]
    pub query_addr: u8,
    #[serde(with = "hexfmt::u8_hex")]
    pub command_addr: u8,
    #[serde(with = "hexfmt::u8_hex")]
    pub control_addr: u8,
    #[serde(with = "hexfmt::u8_hex")]
    pub data_addr: u8,
    pub irq_source_count: u8,
}

impl FunctionDescriptor {
    pub const SIZE: usize = 6;

    pub fn to_bytes(&self) -> [u8; Self::SIZE] {
        [
            self.function_id,
            self.query_addr,
            self.command_addr,
            self.control_addr,
            self.data_addr,
            self.irq_source_count & 0x07,
        ]
    }

    pub fn from_bytes(b: &[u8; Self::SIZE]) -> Self {
        FunctionDescriptor {
            function_id: b[0],
            query_addr: b[1],
            command_addr: b[2],
            control_addr: b[3],
            data_addr: b[4],
            irq_source_count: b[5] & 0x07,
        }
    }

    pub fn is_terminator(&self) -> bool {
        self.function_id == 0x00
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TouchState {
    Down,
    Move,
    Up,
}

impl TouchState {
    pub fn nibble(&self) -> u8 {
        match self {
            TouchState::Down => 0x1,
            TouchState::Move => 0x2,
            TouchState::Up => 0x3,
        }
    }

    pub fn from_nibble(n: u8) -> Option<Self> {
        match n {
            0x1 => Some(TouchState::Down),
            0x2 => Some(TouchState::Move),
            0x3 => Some(TouchState::Up),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouchPoint {
    pub finger_id: u8,
    pub x: u16,
    pub y: u16,
    pub pressure: u8,
    pub state: TouchState,
}

/// A raw multi-finger report before encoding.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TouchFrame {
    pub points: Vec<TouchPoint>,
}

impl TouchFrame {
    pub fn tap_down(finger_id: u8, x: u16, y: u16, pressure: u8) -> Self {
        TouchFrame {
            points: vec![TouchPoint { finger_id, x, y, pressure, state: TouchState::Down }],
        }
    }

    pub fn tap_up(finger_id: u8, x: u16, y: u16) -> Self {
        TouchFrame {
            points: vec![TouchPoint { finger_id, x, y, pressure: 0, state: TouchState::Up }],
        }
    }

    pub fn finger_bitmap(&self) -> u16 {
        self.points.iter().fold(0, |acc, p| acc | 1 << p.finger_id)
    }
}

/// Per-finger record: `[(finger_id << 4) | state, x_lo, x_hi, y_lo, y_hi,
/// pressure, 0, 0]`, records concatenated in ascending finger id.
pub fn encode_touch_report(frame: &TouchFrame) -> Vec<u8> {
    let mut points = frame.points.clone();
    points.sort_by_key(|p| p.finger_id);
    let mut out = Vec::with_capacity(points.len() * RECORD_LEN);
    for p in &points {
        out.push((p.finger_id << 4) | p.state.nibble());
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.push(p.pressure);
        out.push(0x00);
        out.push(0x00);
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("frame carries {0} points, at most {max} supported", max = MAX_FINGERS)]
    FrameOverflow(usize),
    #[error("finger id {0} out of range or duplicated")]
    BadFinger(u8),
    #[error("point ({0},{1}) outside panel geometry")]
    OutOfPanel(u16, u16),
    #[error("controller is powered off")]
    PoweredOff,
}

/// The benign controller. A pure state machine driven by bus callbacks.
#[derive(Debug, Clone)]
pub struct Controller {
    slave_addr: u8,
    panel_width: u16,
    panel_height: u16,
    table_base: u16,
    functions: Vec<FunctionDescriptor>,
    firmware_version: [u8; 4],
    /// Sparse register file for config writes; descriptor bytes live here too
    /// but are read-only to the master.
    regs: BTreeMap<u16, u8>,
    descriptor_region: (u16, u16),
    powered: bool,
    /// Pending interrupt bits, one per function in table order.
    pending: u8,
    report: Vec<u8>,
    bitmap: u16,
}

impl Controller {
    pub fn new(profile: &Profile) -> Self {
        let mut regs = BTreeMap::new();
        let base = profile.descriptor_table_base;
        let mut low = base;
        for (k, fd) in profile.functions.iter().enumerate() {
            let slot = Profile::slot_addr(base, k).expect("table under-runs address space");
            low = slot;
            for (i, b) in fd.to_bytes().iter().enumerate() {
                regs.insert(slot + i as u16, *b);
            }
        }
        // Reserve the terminator slot inside the read-only window as well.
        low = low.saturating_sub(6);
        Controller {
            slave_addr: profile.slave_addr,
            panel_width: profile.panel.width,
            panel_height: profile.panel.height,
            table_base: base,
            functions: profile.functions.clone(),
            firmware_version: profile.firmware_version,
            regs,
            descriptor_region: (low, base + 5),
            powered: true,
            pending: 0,
            report: Vec::new(),
            bitmap: 0,
        }
    }

    /// The function table in scan order, terminator excluded.
    pub fn descriptor_table(&self) -> &[FunctionDescriptor] {
        &self.functions
    }

    pub fn function_index(&self, id: u8) -> Option<usize> {
        self.functions.iter().position(|f| f.function_id == id)
    }

    /// Queue a touch frame: encode it, publish bitmap and report, raise the
    /// interrupt. Queuing over an unread frame replaces it (latest wins).
    pub fn queue_touch(&mut self, frame: &TouchFrame) -> Result<(), ControllerError> {
        if !self.powered {
            return Err(ControllerError::PoweredOff);
        }
        if frame.points.len() > MAX_FINGERS {
            return Err(ControllerError::FrameOverflow(frame.points.len()));
        }
        let mut seen = 0u16;
        for p in &frame.points {
            if p.finger_id as usize >= MAX_FINGERS || seen & (1 << p.finger_id) != 0 {
                return Err(ControllerError::BadFinger(p.finger_id));
            }
            seen |= 1 << p.finger_id;
            if p.x >= self.panel_width || p.y >= self.panel_height {
                return Err(ControllerError::OutOfPanel(p.x, p.y));
            }
        }
        self.report = encode_touch_report(frame);
        self.bitmap = frame.finger_bitmap();
        if let Some(idx) = self.function_index(0x12) {
            self.pending |= 1 << idx;
        }
        Ok(())
    }

    pub fn firmware_version(&self) -> [u8; 4] {
        self.firmware_version
    }

    pub fn set_firmware_version(&mut self, v: [u8; 4]) {
        self.firmware_version = v;
    }

    fn in_descriptor_region(&self, reg: u16) -> bool {
        reg >= self.descriptor_region.0 && reg <= self.descriptor_region.1
    }

    fn flat_read(&self, reg: u16, len: u32) -> Vec<u8> {
        (0..len)
            .map(|i| self.regs.get(&(reg.wrapping_add(i as u16))).copied().unwrap_or(0))
            .collect()
    }

    /// Serve a register read. Registers behave as addressed ports: the status,
    /// bitmap and report registers return their structures for any requested
    /// length, everything else reads the flat register file (zeros when
    /// unmapped).
    pub fn handle_read(&mut self, reg: u16, len: u32) -> Vec<u8> {
        let f51_query = self
            .functions
            .iter()
            .find(|f| f.function_id == 0x51)
            .map(|f| u16::from(f.query_addr));
        let mut out = vec![0u8; len as usize];
        match reg {
            REG_IRQ_STATUS => {
                out[0] = self.pending;
                self.pending = 0;
            }
            REG_TOUCH_REPORT => {
                for (i, b) in self.report.iter().take(len as usize).enumerate() {
                    out[i] = *b;
                }
            }
            REG_FINGER_BITMAP => {
                let bytes = self.bitmap.to_le_bytes();
                for (i, b) in bytes.iter().take(len as usize).enumerate() {
                    out[i] = *b;
                }
            }
            r if Some(r) == f51_query => {
                for (i, b) in self.firmware_version.iter().take(len as usize).enumerate() {
                    out[i] = *b;
                }
            }
            r => out = self.flat_read(r, len),
        }
        out
    }

    pub fn handle_write(&mut self, reg: u16, data: &[u8]) {
        if self.in_descriptor_region(reg) {
            // Descriptor table is read-only to the master.
            return;
        }
        for (i, b) in data.iter().enumerate() {
            self.regs.insert(reg.wrapping_add(i as u16), *b);
        }
    }

    pub fn table_base(&self) -> u16 {
        self.table_base
    }
}

impl Slave for Controller {
    fn slave_addr(&self) -> u8 {
        self.slave_addr
    }

    fn powered(&self) -> bool {
        self.powered
    }

    fn set_power(&mut self, on: bool) {
        self.powered = on;
        if !on {
            self.pending = 0;
            self.report.clear();
            self.bitmap = 0;
        }
    }

    fn write(&mut self, reg: u16, data: &[u8]) {
        self.handle_write(reg, data)
    }

    fn read(&mut self, reg: u16, len: u32) -> Option<Vec<u8>> {
        if !self.powered {
            return None;
        }
        Some(self.handle_read(reg, len))
    }

    fn irq_pending(&self) -> bool {
        self.pending != 0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("no recorded response for read of 0x{reg:04x} ({len} bytes)")]
    ReplayMiss { reg: u16, len: u32 },
}

/// Controller stand-in that replays previously recorded responses in order.
/// Used for the Atmel profile, where no register-level emulation exists.
#[derive(Debug, Clone)]
pub struct ReplayController {
    slave_addr: u8,
    script: Vec<(u16, u32, Vec<u8>)>,
    cursor: usize,
    misses: Vec<ReplayError>,
    powered: bool,
}

impl ReplayController {
    /// Build from the read records of a recorded trace.
    pub fn from_trace(slave_addr: u8, trace: &crate::bus::Trace) -> Self {
        let script = trace
            .records
            .iter()
            .filter(|r| r.kind == crate::bus::EventKind::RegRead && !r.data.is_empty())
            .map(|r| (r.reg_addr, r.read_len, r.data.clone()))
            .collect();
        ReplayController { slave_addr, script, cursor: 0, misses: Vec::new(), powered: true }
    }

    pub fn from_script(slave_addr: u8, script: Vec<(u16, u32, Vec<u8>)>) -> Self {
        ReplayController { slave_addr, script, cursor: 0, misses: Vec::new(), powered: true }
    }

    /// In-order lookup: the next recorded response if it matches the request.
    pub fn lookup(&mut self, reg: u16, len: u32) -> Result<Vec<u8>, ReplayError> {
        match self.script.get(self.cursor) {
            Some((r, l, data)) if *r == reg && *l == len => {
                self.cursor += 1;
                Ok(data.clone())
            }
            _ => {
                let miss = ReplayError::ReplayMiss { reg, len };
                self.misses.push(miss.clone());
                Err(miss)
            }
        }
    }

    pub fn misses(&self) -> &[ReplayError] {
        &self.misses
    }
}

impl Slave for ReplayController {
    fn slave_addr(&self) -> u8 {
        self.slave_addr
    }

    fn powered(&self) -> bool {
        self.powered
    }

    fn set_power(&mut self, on: bool) {
        self.powered = on;
    }

    fn write(&mut self, _reg: u16, _data: &[u8]) {
        // Recorded controllers accept writes silently.
    }

    fn read(&mut self, reg: u16, len: u32) -> Option<Vec<u8>> {
        if !self.powered {
            return None;
        }
        self.lookup(reg, len).ok()
    }

    fn irq_pending(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{Trace, TraceHeader};

    fn controller() -> Controller {
        Controller::new(&Profile::synaptics_like())
    }

    #[test]
    fn descriptor_bytes_round_trip() {
        let fd = FunctionDescriptor {
            function_id: 0x12,
            query_addr: 0x5c,
            command_addr: 0x00,
            control_addr: 0x1b,
            data_addr: 0x08,
            irq_source_count: 1,
        };
        let bytes = fd.to_bytes();
        assert_eq!(bytes.len(), 6);
        assert_eq!(FunctionDescriptor::from_bytes(&bytes), fd);
    }

    #[test]
    fn descriptor_table_slots_serve_table_one_rows() {
        let mut c = controller();
        // Slot 0 holds function 0x01.
        let b = c.handle_read(0x00e9, 6);
        let fd = FunctionDescriptor::from_bytes(&b.try_into().unwrap());
        assert_eq!(fd.function_id, 0x01);
        assert_eq!(fd.control_addr, 0x14);
        // Slot 1 holds function 0x12.
        let b = c.handle_read(0x00e3, 6);
        let fd = FunctionDescriptor::from_bytes(&b.try_into().unwrap());
        assert_eq!((fd.query_addr, fd.command_addr, fd.control_addr, fd.data_addr), (0x5c, 0x00, 0x1b, 0x08));
        // Slot 3 is the zero terminator.
        let b = c.handle_read(0x00d7, 6);
        assert!(FunctionDescriptor::from_bytes(&b.try_into().unwrap()).is_terminator());
    }

    #[test]
    fn descriptor_region_is_read_only() {
        let mut c = controller();
        c.handle_write(0x00e9, &[0xff; 6]);
        assert_eq!(c.handle_read(0x00e9, 1), vec![0x01]);
    }

    #[test]
    fn queued_touch_sets_bitmap_status_and_irq() {
        let mut c = controller();
        assert!(!c.irq_pending());
        c.queue_touch(&TouchFrame::tap_down(0, 100, 200, 40)).unwrap();
        assert!(c.irq_pending());
        assert_eq!(c.handle_read(REG_FINGER_BITMAP, 1), vec![0b0000_0001]);
        // Function 0x12 is table index 1, so its status bit is bit 1.
        assert_eq!(c.handle_read(REG_IRQ_STATUS, 1), vec![0b0000_0010]);
        // Reading the status register released the line.
        assert!(!c.irq_pending());
    }

    #[test]
    fn status_reads_zero_when_nothing_pending() {
        let mut c = controller();
        assert_eq!(c.handle_read(REG_IRQ_STATUS, 1), vec![0x00]);
    }

    #[test]
    fn report_encoding_matches_reference_vector() {
        let mut c = controller();
        c.queue_touch(&TouchFrame::tap_down(0, 100, 200, 40)).unwrap();
        assert_eq!(
            c.handle_read(REG_TOUCH_REPORT, 8),
            vec![0x01, 0x64, 0x00, 0xc8, 0x00, 0x28, 0x00, 0x00]
        );
    }

    #[test]
    fn encode_zero_point_and_empty_frames() {
        let zero = TouchFrame::tap_down(0, 0, 0, 0);
        assert_eq!(encode_touch_report(&zero), vec![0x01, 0, 0, 0, 0, 0, 0, 0]);
        assert!(encode_touch_report(&TouchFrame::default()).is_empty());
    }

    #[test]
    fn two_finger_report_keeps_ascending_order() {
        let frame = TouchFrame {
            points: vec![
                TouchPoint { finger_id: 1, x: 10, y: 20, pressure: 5, state: TouchState::Move },
                TouchPoint { finger_id: 0, x: 1, y: 2, pressure: 3, state: TouchState::Down },
            ],
        };
        let bytes = encode_touch_report(&frame);
        assert_eq!(bytes.len(), 16);
        assert_eq!(bytes[0], 0x01); // finger 0 first
        assert_eq!(bytes[8], 0x12); // finger 1, Move
    }

    #[test]
    fn eleven_points_overflow() {
        let mut c = controller();
        let frame = TouchFrame {
            points: (0..11)
                .map(|i| TouchPoint { finger_id: i, x: 1, y: 1, pressure: 1, state: TouchState::Down })
                .collect(),
        };
        assert_eq!(c.queue_touch(&frame), Err(ControllerError::FrameOverflow(11)));
    }

    #[test]
    fn coalescing_keeps_latest_frame() {
        let mut c = controller();
        c.queue_touch(&TouchFrame::tap_down(0, 1, 1, 1)).unwrap();
        c.queue_touch(&TouchFrame::tap_down(1, 7, 7, 7)).unwrap();
        assert_eq!(c.handle_read(REG_FINGER_BITMAP, 1), vec![0b0000_0010]);
        let report = c.handle_read(REG_TOUCH_REPORT, 8);
        assert_eq!(report[0], 0x11);
    }

    #[test]
    fn replay_serves_in_order_and_misses_on_divergence() {
        let mut t = Trace::new(TraceHeader { version: 1, seed: 0, profile: "p".into() });
        t.records.push(crate::bus::BusTransaction {
            tick: 0,
            source: crate::bus::Source::Driver,
            kind: crate::bus::EventKind::RegRead,
            slave_addr: 0x4a,
            reg_addr: 0x0000,
            data: vec![0x02],
            read_len: 1,
        });
        let mut rc = ReplayController::from_trace(0x4a, &t);
        assert_eq!(rc.lookup(0x0000, 1).unwrap(), vec![0x02]);
        let err = rc.lookup(0x0000, 1).unwrap_err();
        assert_eq!(err, ReplayError::ReplayMiss { reg: 0x0000, len: 1 });
        assert_eq!(rc.misses().len(), 1);
    }

    #[test]
    fn replay_reordered_misses_on_first_divergence() {
        let script = vec![(0x0010, 1, vec![1]), (0x0020, 1, vec![2])];
        let mut rc = ReplayController::from_script(0x4a, script);
        assert!(rc.lookup(0x0020, 1).is_err());
    }
}
