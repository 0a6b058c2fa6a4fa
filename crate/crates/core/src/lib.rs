//! Deterministic simulator of a smartphone touch-controller stack.
//!
//! The crate models the full path between a touch controller and the phone
//! that trusts it: a virtual I2C bus with an interposer slot, a register-level
//! touch controller, the vendor driver with its unsafe buffer handling run
//! against instrumented sandbox memory, a chip-in-the-middle attacker capable
//! of touch logging, touch injection and boot-time exploitation, and a
//! proxy-firewall countermeasure that filters bus traffic on the motherboard
//! side. Everything runs on a single simulated microsecond clock, so a run is
//! reproducible byte-for-byte from its seed and scenario.

pub mod attacker;
pub mod bus;
pub mod controller;
pub mod driver;
pub mod firewall;
pub mod harness;
pub mod hexfmt;
pub mod profile;
pub mod stack_frame;
