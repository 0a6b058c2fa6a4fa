//! Virtual I2C bus: deterministic microsecond clock, a 400 kbps timing model,
//! one interrupt line, per-slave power rails and a pluggable interposer chain
//! between master and slave. Every event is appended to a [`Trace`].

mod trace;

pub use trace::{Trace, TraceError, TraceHeader, TRACE_FORMAT_VERSION};

use thiserror::Error;

/// Default 7-bit address of the touch controller. The protocol never depends
/// on the value; profiles may override it.
pub const DEFAULT_CONTROLLER_ADDR: u8 = 0x20;
/// Power-only address standing in for the display panel rail. Blanking the
/// screen is a power event against this address, so it is trace-visible.
pub const DEFAULT_DISPLAY_ADDR: u8 = 0x21;

/// Bits per byte on the wire: 8 data bits plus the acknowledge bit.
const BITS_PER_BYTE: u64 = 9;
/// Fast-mode bit rate.
const BUS_RATE_BPS: u64 = 400_000;
/// Register address bytes sent before the payload of a write.
const ADDR_OVERHEAD_BYTES: u64 = 2;

/// Time in microseconds a transfer of `byte_count` payload bytes occupies the
/// bus: `ceil(byte_count * 9 bits / 0.4 bits per us)`.
pub fn transfer_time(byte_count: u64) -> u64 {
    (byte_count * BITS_PER_BYTE * 1_000_000).div_ceil(BUS_RATE_BPS)
}

/// Bus time attributed to one trace record. Writes carry the two register
/// address bytes; reads are costed on the returned payload alone. Interrupt
/// and power events are free.
pub fn transaction_cost(txn: &BusTransaction) -> u64 {
    match txn.kind {
        EventKind::RegWrite => transfer_time(txn.data.len() as u64 + ADDR_OVERHEAD_BYTES),
        EventKind::RegRead => transfer_time(u64::from(txn.read_len)),
        _ => 0,
    }
}

/// Who put a record on the bus (or, for blocked records, who removed it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Driver,
    Controller,
    /// The chip-in-the-middle. Serialized as `mitm` in trace files.
    Interposer,
    Firewall,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Driver => "driver",
            Source::Controller => "controller",
            Source::Interposer => "mitm",
            Source::Firewall => "firewall",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "driver" => Some(Source::Driver),
            "controller" => Some(Source::Controller),
            "mitm" => Some(Source::Interposer),
            "firewall" => Some(Source::Firewall),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    RegWrite,
    RegRead,
    IrqAssert,
    IrqClear,
    PowerOff,
    PowerOn,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::RegWrite => "W",
            EventKind::RegRead => "R",
            EventKind::IrqAssert => "IRQ1",
            EventKind::IrqClear => "IRQ0",
            EventKind::PowerOff => "PWR0",
            EventKind::PowerOn => "PWR1",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "W" => Some(EventKind::RegWrite),
            "R" => Some(EventKind::RegRead),
            "IRQ1" => Some(EventKind::IrqAssert),
            "IRQ0" => Some(EventKind::IrqClear),
            "PWR0" => Some(EventKind::PowerOff),
            "PWR1" => Some(EventKind::PowerOn),
            _ => None,
        }
    }
}

/// One timestamped event on the bus; the universal trace unit.
///
/// For `RegRead` records `data` holds the response actually delivered toward
/// the master (empty when the read was not acknowledged or was blocked).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusTransaction {
    pub tick: u64,
    pub source: Source,
    pub kind: EventKind,
    pub slave_addr: u8,
    pub reg_addr: u16,
    pub data: Vec<u8>,
    pub read_len: u32,
}

impl BusTransaction {
    pub fn is_transfer(&self) -> bool {
        matches!(self.kind, EventKind::RegWrite | EventKind::RegRead)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    /// Nobody acknowledged the address phase: the slave is powered off and no
    /// interposer emulates it, or a firewall removed the transaction.
    #[error("no acknowledge from 0x{0:02x}")]
    NoAck(u8),
    /// The responder produced fewer bytes than requested. Protocol fault; the
    /// short response is never padded.
    #[error("short read: wanted {wanted} bytes, got {got}")]
    ShortRead { wanted: u32, got: u32 },
    #[error("write with empty payload")]
    EmptyPayload,
    #[error("read of zero length")]
    ZeroLengthRead,
    #[error("slave address 0x{0:02x} does not fit in 7 bits")]
    BadSlaveAddr(u8),
}

/// Slave-side endpoint (the touch controller or a replay stand-in).
pub trait Slave {
    fn slave_addr(&self) -> u8;
    fn powered(&self) -> bool;
    fn set_power(&mut self, on: bool);
    /// Register write. Only called while powered.
    fn write(&mut self, reg: u16, data: &[u8]);
    /// Register read; `None` means the slave did not acknowledge.
    fn read(&mut self, reg: u16, len: u32) -> Option<Vec<u8>>;
    /// Whether the endpoint wants the interrupt line pulled low.
    fn irq_pending(&self) -> bool;
}

/// What an interposer does with a master-to-slave write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteAction {
    /// Pass on, possibly rewritten.
    Forward { reg: u16, data: Vec<u8> },
    /// Acknowledge and consume; nothing reaches the slave.
    Ack,
    /// Refuse the address phase.
    Nack,
    /// Remove from downstream delivery (firewall). Traced as `firewall`.
    Block,
}

/// What an interposer does with a master read request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadAction {
    Forward { reg: u16, len: u32 },
    /// Answer the read itself; the slave never sees it.
    Complete(Vec<u8>),
    Nack,
    Block,
}

/// What an interposer does with a read response on its way back to the master.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseAction {
    Pass(Vec<u8>),
    Rewrite(Vec<u8>),
    Block,
}

/// A device spliced into the bus between master and slave. Writes and read
/// requests traverse interposers in master-to-slave order; responses and the
/// interrupt line traverse them in reverse.
pub trait Interposer {
    fn source(&self) -> Source;

    fn on_write(&mut self, _now: u64, _sa: u8, reg: u16, data: &[u8]) -> WriteAction {
        WriteAction::Forward { reg, data: data.to_vec() }
    }

    fn on_read(&mut self, _now: u64, _sa: u8, reg: u16, len: u32) -> ReadAction {
        ReadAction::Forward { reg, len }
    }

    fn on_read_response(&mut self, _now: u64, _sa: u8, _reg: u16, data: Vec<u8>) -> ResponseAction {
        ResponseAction::Pass(data)
    }

    /// Whether the interposer itself wants the interrupt line pulled low.
    fn irq_pending(&self) -> bool {
        false
    }

    /// Interrupt line change travelling toward the master. Return `false` to
    /// keep it from the master (firewall).
    fn pass_irq(&mut self, _now: u64, _asserted: bool) -> bool {
        true
    }

    /// Called whenever simulated time advances to `now`.
    fn on_tick(&mut self, _now: u64) {}
}

/// A transparent interposer; useful as a baseline in transparency tests.
#[derive(Debug, Default)]
pub struct PassThrough;

impl Interposer for PassThrough {
    fn source(&self) -> Source {
        Source::Interposer
    }
}

/// Clock, trace and interrupt-line bookkeeping. The chain walk itself lives in
/// [`Wire`], which borrows the endpoints for the duration of one transaction.
#[derive(Debug)]
pub struct Bus {
    now: u64,
    busy: u64,
    header: TraceHeader,
    records: Vec<BusTransaction>,
    /// Line level on the master side of the chain (true = pulled low).
    irq_master: bool,
    /// Line level on the slave side, before firewall filtering.
    irq_downstream: bool,
    irq_owner: Source,
}

impl Bus {
    pub fn new(seed: u64, profile_name: &str) -> Self {
        Bus {
            now: 0,
            busy: 0,
            header: TraceHeader {
                version: TRACE_FORMAT_VERSION,
                seed,
                profile: profile_name.to_string(),
            },
            records: Vec::new(),
            irq_master: false,
            irq_downstream: false,
            irq_owner: Source::Controller,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Total microseconds the bus spent transferring bytes.
    pub fn busy_time(&self) -> u64 {
        self.busy
    }

    pub fn irq_asserted(&self) -> bool {
        self.irq_master
    }

    /// Jump the clock forward to an absolute tick. Never moves backwards.
    pub fn advance_to(&mut self, tick: u64) {
        if tick > self.now {
            self.now = tick;
        }
    }

    pub fn records(&self) -> &[BusTransaction] {
        &self.records
    }

    pub fn trace(&self) -> Trace {
        Trace { header: self.header.clone(), records: self.records.clone() }
    }

    pub fn record_power(&mut self, sa: u8, on: bool, source: Source) {
        let kind = if on { EventKind::PowerOn } else { EventKind::PowerOff };
        self.push(BusTransaction {
            tick: self.now,
            source,
            kind,
            slave_addr: sa,
            reg_addr: 0,
            data: Vec::new(),
            read_len: 0,
        });
    }

    fn record_irq(&mut self, sa: u8, asserted: bool, source: Source) {
        let kind = if asserted { EventKind::IrqAssert } else { EventKind::IrqClear };
        self.push(BusTransaction {
            tick: self.now,
            source,
            kind,
            slave_addr: sa,
            reg_addr: 0,
            data: Vec::new(),
            read_len: 0,
        });
    }

    fn push(&mut self, txn: BusTransaction) {
        debug_assert!(self.records.last().map_or(true, |r| r.tick <= txn.tick));
        self.records.push(txn);
    }

    fn charge(&mut self, cost: u64) {
        self.now += cost;
        self.busy += cost;
    }
}

/// One-transaction view of the whole topology: the bus ledger plus mutable
/// borrows of every endpoint between master and slave. Constructed by the
/// harness for each driver call; unit tests build it directly.
pub struct Wire<'a> {
    pub bus: &'a mut Bus,
    /// Interposers in master-to-slave order.
    pub interposers: Vec<&'a mut dyn Interposer>,
    pub slave: &'a mut dyn Slave,
}

/// Master-side bus operations, as seen by the device driver.
pub trait BusAccess {
    fn write_reg(&mut self, sa: u8, reg: u16, data: &[u8]) -> Result<(), BusError>;
    fn read_reg(&mut self, sa: u8, reg: u16, len: u32) -> Result<Vec<u8>, BusError>;
    fn now(&self) -> u64;
}

impl<'a> Wire<'a> {
    /// Recompute the interrupt line from endpoint state and trace any change.
    /// Reasserting an already-asserted line is a no-op and is traced once.
    pub fn sync_irq(&mut self) {
        let slave_wants = self.slave.powered() && self.slave.irq_pending();
        let mitm_wants = self.interposers.iter().any(|i| i.irq_pending());
        let desired = slave_wants || mitm_wants;
        if desired == self.bus.irq_downstream {
            return;
        }
        let owner = if desired {
            if slave_wants {
                Source::Controller
            } else {
                Source::Interposer
            }
        } else {
            self.bus.irq_owner
        };
        self.bus.irq_downstream = desired;
        self.bus.irq_owner = owner;
        // The change travels slave-to-master; any interposer may stop it.
        let now = self.bus.now;
        let mut passed = true;
        for ip in self.interposers.iter_mut().rev() {
            if !ip.pass_irq(now, desired) {
                passed = false;
                self.bus.record_irq(self.slave.slave_addr(), desired, Source::Firewall);
                break;
            }
        }
        if passed {
            self.bus.record_irq(self.slave.slave_addr(), desired, owner);
            self.bus.irq_master = desired;
        }
    }

    pub fn tick_endpoints(&mut self) {
        let now = self.bus.now;
        for ip in self.interposers.iter_mut() {
            ip.on_tick(now);
        }
        self.sync_irq();
    }

    /// Cut or restore a slave's power rail. The display rail has no endpoint
    /// behind it and is trace-only.
    pub fn set_power(&mut self, sa: u8, on: bool, source: Source) {
        if sa == self.slave.slave_addr() {
            self.slave.set_power(on);
        }
        self.bus.record_power(sa, on, source);
        self.sync_irq();
    }

    fn finish_write(&mut self, source: Source, sa: u8, reg: u16, data: Vec<u8>) {
        let txn = BusTransaction {
            tick: self.bus.now,
            source,
            kind: EventKind::RegWrite,
            slave_addr: sa,
            reg_addr: reg,
            data,
            read_len: 0,
        };
        let cost = transaction_cost(&txn);
        self.bus.push(txn);
        self.bus.charge(cost);
        self.sync_irq();
    }

    fn finish_read(&mut self, source: Source, sa: u8, reg: u16, len: u32, data: Vec<u8>) {
        let txn = BusTransaction {
            tick: self.bus.now,
            source,
            kind: EventKind::RegRead,
            slave_addr: sa,
            reg_addr: reg,
            data,
            read_len: len,
        };
        let cost = transaction_cost(&txn);
        self.bus.push(txn);
        self.bus.charge(cost);
        self.sync_irq();
    }
}

impl<'a> BusAccess for Wire<'a> {
    fn write_reg(&mut self, sa: u8, reg: u16, data: &[u8]) -> Result<(), BusError> {
        if sa > 0x7f {
            return Err(BusError::BadSlaveAddr(sa));
        }
        if data.is_empty() {
            return Err(BusError::EmptyPayload);
        }
        let now = self.bus.now;
        let mut reg = reg;
        let mut payload = data.to_vec();
        for i in 0..self.interposers.len() {
            match self.interposers[i].on_write(now, sa, reg, &payload) {
                WriteAction::Forward { reg: r, data: d } => {
                    reg = r;
                    payload = d;
                }
                WriteAction::Ack => {
                    self.finish_write(Source::Driver, sa, reg, payload);
                    return Ok(());
                }
                WriteAction::Nack => {
                    self.finish_write(Source::Driver, sa, reg, payload);
                    return Err(BusError::NoAck(sa));
                }
                WriteAction::Block => {
                    self.finish_write(Source::Firewall, sa, reg, payload);
                    return Err(BusError::NoAck(sa));
                }
            }
        }
        if sa != self.slave.slave_addr() || !self.slave.powered() {
            self.finish_write(Source::Driver, sa, reg, payload);
            return Err(BusError::NoAck(sa));
        }
        self.slave.write(reg, &payload);
        self.finish_write(Source::Driver, sa, reg, payload);
        Ok(())
    }

    fn read_reg(&mut self, sa: u8, reg: u16, len: u32) -> Result<Vec<u8>, BusError> {
        if sa > 0x7f {
            return Err(BusError::BadSlaveAddr(sa));
        }
        if len == 0 {
            return Err(BusError::ZeroLengthRead);
        }
        let now = self.bus.now;
        let mut dreg = reg;
        let mut dlen = len;
        // Request leg, master to slave. `completed_at` marks where the
        // response enters the chain on its way back.
        let mut response: Option<Vec<u8>> = None;
        let mut completed_at = self.interposers.len();
        for i in 0..self.interposers.len() {
            match self.interposers[i].on_read(now, sa, dreg, dlen) {
                ReadAction::Forward { reg: r, len: l } => {
                    dreg = r;
                    dlen = l;
                }
                ReadAction::Complete(bytes) => {
                    response = Some(bytes);
                    completed_at = i;
                    break;
                }
                ReadAction::Nack => {
                    self.finish_read(Source::Driver, sa, reg, len, Vec::new());
                    return Err(BusError::NoAck(sa));
                }
                ReadAction::Block => {
                    self.finish_read(Source::Firewall, sa, reg, len, Vec::new());
                    return Err(BusError::NoAck(sa));
                }
            }
        }
        if response.is_none() {
            if sa != self.slave.slave_addr() || !self.slave.powered() {
                self.finish_read(Source::Driver, sa, reg, len, Vec::new());
                return Err(BusError::NoAck(sa));
            }
            match self.slave.read(dreg, dlen) {
                Some(bytes) => response = Some(bytes),
                None => {
                    self.finish_read(Source::Driver, sa, reg, len, Vec::new());
                    return Err(BusError::NoAck(sa));
                }
            }
        }
        // Response leg, slave to master.
        let mut bytes = response.unwrap();
        for i in (0..completed_at.min(self.interposers.len())).rev() {
            match self.interposers[i].on_read_response(now, sa, reg, bytes) {
                ResponseAction::Pass(b) | ResponseAction::Rewrite(b) => bytes = b,
                ResponseAction::Block => {
                    self.finish_read(Source::Firewall, sa, reg, len, Vec::new());
                    return Err(BusError::NoAck(sa));
                }
            }
        }
        if bytes.len() != len as usize {
            // Never padded or clipped: surface the fault without tracing a
            // malformed record.
            return Err(BusError::ShortRead { wanted: len, got: bytes.len() as u32 });
        }
        self.finish_read(Source::Driver, sa, reg, len, bytes.clone());
        Ok(bytes)
    }

    fn now(&self) -> u64 {
        self.bus.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed-pattern slave for bus-level tests.
    struct EchoSlave {
        addr: u8,
        powered: bool,
        irq: bool,
        last_write: Option<(u16, Vec<u8>)>,
    }

    impl EchoSlave {
        fn new(addr: u8) -> Self {
            EchoSlave { addr, powered: true, irq: false, last_write: None }
        }
    }

    impl Slave for EchoSlave {
        fn slave_addr(&self) -> u8 {
            self.addr
        }
        fn powered(&self) -> bool {
            self.powered
        }
        fn set_power(&mut self, on: bool) {
            self.powered = on;
        }
        fn write(&mut self, reg: u16, data: &[u8]) {
            self.last_write = Some((reg, data.to_vec()));
        }
        fn read(&mut self, reg: u16, len: u32) -> Option<Vec<u8>> {
            Some((0..len).map(|i| (reg as u8).wrapping_add(i as u8)).collect())
        }
        fn irq_pending(&self) -> bool {
            self.irq
        }
    }

    struct ShortSlave(u8);

    impl Slave for ShortSlave {
        fn slave_addr(&self) -> u8 {
            self.0
        }
        fn powered(&self) -> bool {
            true
        }
        fn set_power(&mut self, _on: bool) {}
        fn write(&mut self, _reg: u16, _data: &[u8]) {}
        fn read(&mut self, _reg: u16, len: u32) -> Option<Vec<u8>> {
            Some(vec![0; len as usize - 1])
        }
        fn irq_pending(&self) -> bool {
            false
        }
    }

    #[test]
    fn transfer_time_matches_fast_mode_arithmetic() {
        assert_eq!(transfer_time(0), 0);
        assert_eq!(transfer_time(1), 23);
        assert_eq!(transfer_time(2), 45);
        assert_eq!(transfer_time(210), 4725);
    }

    #[test]
    fn write_advances_clock_with_address_overhead() {
        let mut bus = Bus::new(0, "test");
        let mut slave = EchoSlave::new(0x20);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut slave };
        wire.write_reg(0x20, 0x0014, &[0x01]).unwrap();
        // 1 data byte + 2 address bytes.
        assert_eq!(bus.now(), transfer_time(3));
        assert_eq!(bus.busy_time(), transfer_time(3));
        assert_eq!(bus.records().len(), 1);
        assert_eq!(bus.records()[0].kind, EventKind::RegWrite);
        assert_eq!(slave.last_write, Some((0x0014, vec![0x01])));
    }

    #[test]
    fn read_advances_clock_by_payload_only() {
        let mut bus = Bus::new(0, "test");
        let mut slave = EchoSlave::new(0x20);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut slave };
        let bytes = wire.read_reg(0x20, 0x0008, 210).unwrap();
        assert_eq!(bytes.len(), 210);
        assert_eq!(bus.now(), 4725);
        let rec = &bus.records()[0];
        assert_eq!(rec.read_len, 210);
        assert_eq!(rec.data.len(), 210);
    }

    #[test]
    fn empty_payload_and_zero_read_are_rejected_before_the_wire() {
        let mut bus = Bus::new(0, "test");
        let mut slave = EchoSlave::new(0x20);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut slave };
        assert_eq!(wire.write_reg(0x20, 0x0014, &[]), Err(BusError::EmptyPayload));
        assert_eq!(wire.read_reg(0x20, 0x0006, 0), Err(BusError::ZeroLengthRead));
        assert!(bus.records().is_empty());
        assert_eq!(bus.now(), 0);
    }

    #[test]
    fn powered_off_slave_without_interposer_nacks() {
        let mut bus = Bus::new(0, "test");
        let mut slave = EchoSlave::new(0x20);
        slave.powered = false;
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut slave };
        assert_eq!(wire.write_reg(0x20, 0x0014, &[0x01]), Err(BusError::NoAck(0x20)));
        assert_eq!(wire.read_reg(0x20, 0x0006, 1), Err(BusError::NoAck(0x20)));
    }

    #[test]
    fn short_response_is_a_fault_not_padded() {
        let mut bus = Bus::new(0, "test");
        let mut slave = ShortSlave(0x20);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut slave };
        assert_eq!(
            wire.read_reg(0x20, 0x0006, 4),
            Err(BusError::ShortRead { wanted: 4, got: 3 })
        );
    }

    #[test]
    fn irq_transitions_trace_once_and_reassert_is_noop() {
        let mut bus = Bus::new(0, "test");
        let mut slave = EchoSlave::new(0x20);
        slave.irq = true;
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut slave };
        wire.sync_irq();
        wire.sync_irq();
        assert!(bus.irq_asserted());
        slave.irq = false;
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut slave };
        wire.sync_irq();
        assert!(!bus.irq_asserted());
        let kinds: Vec<_> = bus.records().iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![EventKind::IrqAssert, EventKind::IrqClear]);
    }

    #[test]
    fn interposer_can_assert_irq_with_slave_powered_off() {
        struct Asserting;
        impl Interposer for Asserting {
            fn source(&self) -> Source {
                Source::Interposer
            }
            fn irq_pending(&self) -> bool {
                true
            }
        }
        let mut bus = Bus::new(0, "test");
        let mut slave = EchoSlave::new(0x20);
        slave.powered = false;
        let mut mitm = Asserting;
        let mut wire = Wire { bus: &mut bus, interposers: vec![&mut mitm], slave: &mut slave };
        wire.sync_irq();
        assert!(bus.irq_asserted());
        assert_eq!(bus.records()[0].source, Source::Interposer);
    }

    #[test]
    fn pass_through_interposer_is_transparent() {
        let run = |with_interposer: bool| -> Vec<BusTransaction> {
            let mut bus = Bus::new(9, "test");
            let mut slave = EchoSlave::new(0x20);
            let mut pt = PassThrough;
            let mut interposers: Vec<&mut dyn Interposer> = Vec::new();
            if with_interposer {
                interposers.push(&mut pt);
            }
            let mut wire = Wire { bus: &mut bus, interposers, slave: &mut slave };
            wire.write_reg(0x20, 0x0014, &[0x01]).unwrap();
            wire.read_reg(0x20, 0x0006, 1).unwrap();
            wire.read_reg(0x20, 0x0008, 8).unwrap();
            bus.records().to_vec()
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn power_events_are_traced() {
        let mut bus = Bus::new(0, "test");
        let mut slave = EchoSlave::new(0x20);
        let mut wire = Wire { bus: &mut bus, interposers: vec![], slave: &mut slave };
        wire.set_power(0x20, false, Source::Interposer);
        wire.set_power(0x20, true, Source::Driver);
        assert!(slave.powered());
        let kinds: Vec<_> = bus.records().iter().map(|r| (r.kind, r.source)).collect();
        assert_eq!(
            kinds,
            vec![
                (EventKind::PowerOff, Source::Interposer),
                (EventKind::PowerOn, Source::Driver)
            ]
        );
    }
}
