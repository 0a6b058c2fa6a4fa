//! The tiny register machine that executes the three ARM64 gadgets of the
//! chain, plus the gadget catalog file format. The machine touches only the
//! declared registers and the captured stack image; anything outside the
//! catalog halts the chain, modeling a crash instead of exploitation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexfmt;
use crate::stack_frame::{ROP_ENTRY_SP, SAVED_LR_OFFSET};

pub const KERNEL_WRITE_SYMBOL: &str = "mem_text_write_kernel_word";

/// Semantic classes of the catalog gadgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GadgetKind {
    /// `ldp x19, x20, [sp, #0x10]; ldp x29, x30, [sp], #0x20; ret`
    LoadPairRet,
    /// `mov x2, x19; mov x0, x2; ldp x19, x20, [sp, #0x10]; ldp x29, x30, [sp], #0x30; ret`
    MovePairLoadRet,
    /// `mov x0, x19; mov x1, x20; blr x2; ...`
    CallTwoArgs,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("gadget catalog incomplete: missing {0}")]
    CatalogIncomplete(String),
    #[error("catalog i/o: {0}")]
    Io(String),
    #[error("catalog parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogEntry {
    #[serde(with = "hexfmt::u64_hex")]
    addr: u64,
    kind: GadgetKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    v: u32,
    gadgets: Vec<CatalogEntry>,
    symbols: BTreeMap<String, String>,
}

/// Published gadget addresses and kernel symbols, shipped as a data file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GadgetCatalog {
    gadgets: BTreeMap<u64, GadgetKind>,
    symbols: BTreeMap<String, u64>,
}

impl GadgetCatalog {
    pub fn new() -> Self {
        GadgetCatalog { gadgets: BTreeMap::new(), symbols: BTreeMap::new() }
    }

    /// The catalog used by the shipped assets: three gadgets and the kernel
    /// write primitive at fixed simulated addresses.
    pub fn builtin() -> Self {
        let mut c = GadgetCatalog::new();
        c.add_gadget(0xffff_ffc0_0008_1a50, GadgetKind::LoadPairRet);
        c.add_gadget(0xffff_ffc0_0008_2b3c, GadgetKind::MovePairLoadRet);
        c.add_gadget(0xffff_ffc0_0008_3c88, GadgetKind::CallTwoArgs);
        c.add_symbol(KERNEL_WRITE_SYMBOL, 0xffff_ffc0_0009_d0f0);
        c
    }

    pub fn add_gadget(&mut self, addr: u64, kind: GadgetKind) {
        self.gadgets.insert(addr, kind);
    }

    pub fn add_symbol(&mut self, name: &str, addr: u64) {
        self.symbols.insert(name.to_string(), addr);
    }

    pub fn gadget_at(&self, addr: u64) -> Option<GadgetKind> {
        self.gadgets.get(&addr).copied()
    }

    pub fn address_of(&self, kind: GadgetKind) -> Option<u64> {
        self.gadgets.iter().find(|(_, k)| **k == kind).map(|(a, _)| *a)
    }

    pub fn symbol(&self, name: &str) -> Option<u64> {
        self.symbols.get(name).copied()
    }

    /// All three gadget kinds plus the kernel write symbol must be present.
    pub fn require_complete(&self) -> Result<(), CatalogError> {
        for kind in [GadgetKind::LoadPairRet, GadgetKind::MovePairLoadRet, GadgetKind::CallTwoArgs] {
            if self.address_of(kind).is_none() {
                return Err(CatalogError::CatalogIncomplete(format!("{kind:?}")));
            }
        }
        if self.symbol(KERNEL_WRITE_SYMBOL).is_none() {
            return Err(CatalogError::CatalogIncomplete(KERNEL_WRITE_SYMBOL.to_string()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|e| CatalogError::Io(e.to_string()))?;
        let file: CatalogFile =
            serde_json::from_str(&text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        let mut c = GadgetCatalog::new();
        for entry in file.gadgets {
            c.add_gadget(entry.addr, entry.kind);
        }
        for (name, addr) in file.symbols {
            let addr = addr
                .strip_prefix("0x")
                .and_then(|h| u64::from_str_radix(h, 16).ok())
                .ok_or_else(|| CatalogError::Parse(format!("bad symbol address {addr:?}")))?;
            c.add_symbol(&name, addr);
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        let file = CatalogFile {
            v: 1,
            gadgets: self
                .gadgets
                .iter()
                .map(|(addr, kind)| CatalogEntry { addr: *addr, kind: *kind })
                .collect(),
            symbols: self
                .symbols
                .iter()
                .map(|(n, a)| (n.clone(), format!("0x{a:016x}")))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("catalog encode")
    }
}

impl Default for GadgetCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Register state of the gadget interpreter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimMachine {
    pub x0: u64,
    pub x1: u64,
    pub x2: u64,
    pub x19: u64,
    pub x20: u64,
    pub x29: u64,
    pub x30: u64,
    /// Offset into the captured stack image.
    pub sp: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelCall {
    pub target: u64,
    pub arg0: u64,
    pub arg1: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RopExecution {
    pub steps: Vec<(u64, GadgetKind)>,
    pub call_log: Vec<KernelCall>,
    /// Address the chain died at, `None` when it ended in the call.
    pub halt: Option<u64>,
    pub machine: SimMachine,
}

impl RopExecution {
    fn noop() -> Self {
        RopExecution { steps: Vec::new(), call_log: Vec::new(), halt: None, machine: SimMachine::default() }
    }
}

const MAX_STEPS: usize = 16;

fn load_u64(stack: &[u8], off: usize) -> u64 {
    if off + 8 <= stack.len() {
        u64::from_le_bytes(stack[off..off + 8].try_into().unwrap())
    } else {
        0
    }
}

/// Interpret the overwritten frame: the saved return slot becomes the first
/// gadget address, and execution follows the catalog gadget semantics until
/// the chain calls out or leaves the catalog. A zero return slot means the
/// frame was never corrupted and nothing runs.
pub fn interpret_overflow(stack: &[u8], catalog: &GadgetCatalog) -> RopExecution {
    let lr = load_u64(stack, SAVED_LR_OFFSET);
    if lr == 0 {
        return RopExecution::noop();
    }
    let mut m = SimMachine { sp: ROP_ENTRY_SP, ..SimMachine::default() };
    let mut steps = Vec::new();
    let mut call_log = Vec::new();
    let mut halt = None;
    let mut pc = lr;
    for _ in 0..MAX_STEPS {
        let Some(kind) = catalog.gadget_at(pc) else {
            halt = Some(pc);
            break;
        };
        steps.push((pc, kind));
        match kind {
            GadgetKind::LoadPairRet => {
                m.x19 = load_u64(stack, m.sp + 0x10);
                m.x20 = load_u64(stack, m.sp + 0x18);
                m.x29 = load_u64(stack, m.sp);
                m.x30 = load_u64(stack, m.sp + 8);
                m.sp += 0x20;
                pc = m.x30;
            }
            GadgetKind::MovePairLoadRet => {
                m.x2 = m.x19;
                m.x0 = m.x2;
                m.x19 = load_u64(stack, m.sp + 0x10);
                m.x20 = load_u64(stack, m.sp + 0x18);
                m.x29 = load_u64(stack, m.sp);
                m.x30 = load_u64(stack, m.sp + 8);
                m.sp += 0x30;
                pc = m.x30;
            }
            GadgetKind::CallTwoArgs => {
                m.x0 = m.x19;
                m.x1 = m.x20;
                call_log.push(KernelCall { target: m.x2, arg0: m.x0, arg1: m.x1 });
                // The chain's purpose is the call; it ends here.
                break;
            }
        }
        if pc == 0 {
            halt = Some(0);
            break;
        }
    }
    if steps.len() == MAX_STEPS && call_log.is_empty() && halt.is_none() {
        halt = Some(pc);
    }
    RopExecution { steps, call_log, halt, machine: m }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack_frame::*;

    fn chain_stack(catalog: &GadgetCatalog, target: u64, arg0: u64, arg1: u64) -> Vec<u8> {
        let mut stack = vec![0u8; PAYLOAD_LEN];
        let put = |s: &mut Vec<u8>, off: usize, v: u64| s[off..off + 8].copy_from_slice(&v.to_le_bytes());
        put(&mut stack, SLOT_GADGET1, catalog.address_of(GadgetKind::LoadPairRet).unwrap());
        put(&mut stack, SLOT_GADGET2, catalog.address_of(GadgetKind::MovePairLoadRet).unwrap());
        put(&mut stack, SLOT_TARGET_FN, target);
        put(&mut stack, SLOT_GADGET3, catalog.address_of(GadgetKind::CallTwoArgs).unwrap());
        put(&mut stack, SLOT_ARG_ADDR, arg0);
        put(&mut stack, SLOT_ARG_WORD, arg1);
        stack
    }

    #[test]
    fn well_formed_chain_calls_target_with_both_args() {
        let catalog = GadgetCatalog::builtin();
        let target = catalog.symbol(KERNEL_WRITE_SYMBOL).unwrap();
        let stack = chain_stack(&catalog, target, 0x1234, 0x5678);
        let run = interpret_overflow(&stack, &catalog);
        assert_eq!(run.halt, None);
        assert_eq!(run.call_log, vec![KernelCall { target, arg0: 0x1234, arg1: 0x5678 }]);
        assert_eq!(run.steps.len(), 3);
    }

    #[test]
    fn random_bytes_halt_at_first_unknown_address() {
        let catalog = GadgetCatalog::builtin();
        let mut stack = vec![0x5au8; PAYLOAD_LEN];
        stack[SAVED_LR_OFFSET..SAVED_LR_OFFSET + 8].copy_from_slice(&0xdead_beefu64.to_le_bytes());
        let run = interpret_overflow(&stack, &catalog);
        assert_eq!(run.halt, Some(0xdead_beef));
        assert!(run.call_log.is_empty());
    }

    #[test]
    fn intact_return_slot_is_a_noop() {
        let catalog = GadgetCatalog::builtin();
        let stack = vec![0u8; PAYLOAD_LEN];
        let run = interpret_overflow(&stack, &catalog);
        assert!(run.steps.is_empty());
        assert!(run.call_log.is_empty());
        assert_eq!(run.halt, None);
    }

    #[test]
    fn execution_is_deterministic() {
        let catalog = GadgetCatalog::builtin();
        let stack = chain_stack(&catalog, 0x42, 1, 2);
        assert_eq!(interpret_overflow(&stack, &catalog), interpret_overflow(&stack, &catalog));
    }

    #[test]
    fn incomplete_catalog_is_detected() {
        let mut c = GadgetCatalog::new();
        c.add_gadget(1, GadgetKind::LoadPairRet);
        c.add_gadget(2, GadgetKind::MovePairLoadRet);
        c.add_symbol(KERNEL_WRITE_SYMBOL, 3);
        assert!(matches!(c.require_complete(), Err(CatalogError::CatalogIncomplete(_))));
        assert!(GadgetCatalog::builtin().require_complete().is_ok());
    }

    #[test]
    fn catalog_round_trips_through_json() {
        let c = GadgetCatalog::builtin();
        let dir = std::env::temp_dir().join(format!("catalog_rt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("catalog.json");
        std::fs::write(&path, c.to_json()).unwrap();
        let back = GadgetCatalog::load(&path).unwrap();
        assert_eq!(back, c);
        let _ = std::fs::remove_dir_all(&dir);
    }
}
