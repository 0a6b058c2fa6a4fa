//! JSON-lines trace codec.
//!
//! Line 1 is the header object `{"v":1,"seed":<u64>,"profile":"<name>"}`;
//! every following line is one record
//! `{"t":<u64>,"src":"driver|controller|mitm|firewall","ev":"W|R|IRQ1|IRQ0|PWR0|PWR1","sa":"0xNN","reg":"0xNNNN","len":<u32>,"data":"<lowercase hex>"}`
//! with inapplicable fields absent and no trailing whitespace. Export is
//! byte-deterministic; `import(export(t)) == t`.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::Deserialize;
use thiserror::Error;

use super::{BusTransaction, EventKind, Source};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u32,
    pub seed: u64,
    pub profile: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<BusTransaction>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("trace i/o: {0}")]
    Io(#[from] io::Error),
}

impl TraceError {
    fn at(line: usize, reason: impl Into<String>) -> Self {
        TraceError::Malformed { line, reason: reason.into() }
    }
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Trace { header, records: Vec::new() }
    }

    pub fn export_string(&self) -> String {
        let mut out = String::new();
        // serde_json string encoding for the profile name keeps escaping correct.
        let profile = serde_json::to_string(&self.header.profile).expect("string encode");
        let _ = writeln!(
            out,
            "{{\"v\":{},\"seed\":{},\"profile\":{}}}",
            self.header.version, self.header.seed, profile
        );
        for rec in &self.records {
            let _ = write!(out, "{{\"t\":{},\"src\":\"{}\",\"ev\":\"{}\"", rec.tick, rec.source.as_str(), rec.kind.as_str());
            let _ = write!(out, ",\"sa\":\"0x{:02x}\"", rec.slave_addr);
            if rec.is_transfer() {
                let _ = write!(out, ",\"reg\":\"0x{:04x}\"", rec.reg_addr);
            }
            if rec.kind == EventKind::RegRead {
                let _ = write!(out, ",\"len\":{}", rec.read_len);
            }
            if rec.is_transfer() && !rec.data.is_empty() {
                let _ = write!(out, ",\"data\":\"{}\"", hex::encode(&rec.data));
            }
            out.push_str("}\n");
        }
        out
    }

    pub fn export(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(self.export_string().as_bytes())
    }

    pub fn export_to_path(&self, path: &std::path::Path) -> io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.export(&mut f)
    }

    pub fn import(r: impl BufRead) -> Result<Trace, TraceError> {
        let mut lines = r.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| TraceError::at(1, "empty input, missing header"))?;
        let first = first?;
        let header: WireHeader = serde_json::from_str(&first)
            .map_err(|e| TraceError::at(1, format!("bad header: {e}")))?;
        if header.v != TRACE_FORMAT_VERSION {
            return Err(TraceError::at(1, format!("unsupported format version {}", header.v)));
        }
        let mut trace = Trace::new(TraceHeader {
            version: header.v,
            seed: header.seed,
            profile: header.profile,
        });
        let mut last_tick = 0u64;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let wire: WireRecord = serde_json::from_str(&line)
                .map_err(|e| TraceError::at(lineno, format!("bad record: {e}")))?;
            let rec = wire.into_transaction(lineno)?;
            if rec.tick < last_tick {
                return Err(TraceError::at(
                    lineno,
                    format!("tick {} regresses below {}", rec.tick, last_tick),
                ));
            }
            last_tick = rec.tick;
            trace.records.push(rec);
        }
        Ok(trace)
    }

    pub fn import_from_path(path: &std::path::Path) -> Result<Trace, TraceError> {
        let f = std::fs::File::open(path)?;
        Trace::import(io::BufReader::new(f))
    }

    /// Sum of per-record bus time; equals [`super::Bus::busy_time`] for any
    /// trace the simulator produced.
    pub fn total_transfer_time(&self) -> u64 {
        self.records.iter().map(super::transaction_cost).sum()
    }
}

#[derive(Deserialize)]
struct WireHeader {
    v: u32,
    seed: u64,
    profile: String,
}

#[derive(Deserialize)]
struct WireRecord {
    t: u64,
    src: String,
    ev: String,
    sa: String,
    reg: Option<String>,
    len: Option<u32>,
    data: Option<String>,
}

fn parse_hex_u16(s: &str, lineno: usize, what: &str) -> Result<u16, TraceError> {
    let stripped = s
        .strip_prefix("0x")
        .ok_or_else(|| TraceError::at(lineno, format!("{what} missing 0x prefix: {s:?}")))?;
    u16::from_str_radix(stripped, 16)
        .map_err(|e| TraceError::at(lineno, format!("bad {what} {s:?}: {e}")))
}

impl WireRecord {
    fn into_transaction(self, lineno: usize) -> Result<BusTransaction, TraceError> {
        let source = Source::from_str(&self.src)
            .ok_or_else(|| TraceError::at(lineno, format!("unknown src {:?}", self.src)))?;
        let kind = EventKind::from_str(&self.ev)
            .ok_or_else(|| TraceError::at(lineno, format!("unknown ev {:?}", self.ev)))?;
        let sa = parse_hex_u16(&self.sa, lineno, "sa")?;
        if sa > 0x7f {
            return Err(TraceError::at(lineno, format!("slave addr 0x{sa:02x} exceeds 7 bits")));
        }
        let reg_addr = match self.reg {
            Some(r) => parse_hex_u16(&r, lineno, "reg")?,
            None => 0,
        };
        let data = match self.data {
            Some(d) => hex::decode(&d)
                .map_err(|e| TraceError::at(lineno, format!("bad data hex: {e}")))?,
            None => Vec::new(),
        };
        let read_len = self.len.unwrap_or(0);
        if kind == EventKind::RegRead && !data.is_empty() && data.len() != read_len as usize {
            return Err(TraceError::at(
                lineno,
                format!("read response carries {} bytes, len says {}", data.len(), read_len),
            ));
        }
        Ok(BusTransaction { tick: self.t, source, kind, slave_addr: sa as u8, reg_addr, data, read_len })
    }
}
