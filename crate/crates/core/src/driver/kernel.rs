//! Simulated kernel state: the flags the exploit payloads flip and the table
//! of recognized patch sites. The table ships as a data file so the payload
//! builder and the kernel model agree on (address, word) pairs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexfmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadId {
    /// Drop the capability checks in setuid()/setgid().
    DisableSetuidChecks,
    /// Keep SELinux reporting while enforcement stops.
    SilenceSelinux,
    /// Disable validation of user buffers on system calls.
    DisableUserBufferChecks,
    /// Plant a vulnerability behind the clear_refs pseudo-file.
    HiddenBackdoor,
}

impl PayloadId {
    pub const ALL: [PayloadId; 4] = [
        PayloadId::DisableSetuidChecks,
        PayloadId::SilenceSelinux,
        PayloadId::DisableUserBufferChecks,
        PayloadId::HiddenBackdoor,
    ];
}

/// Literal name of the pseudo-file the planted app writes to.
pub const CLEAR_REFS_PATH: &str = "/prof/self/clear_refs";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KernelState {
    pub setuid_checks_enabled: bool,
    pub selinux_enforcing: bool,
    pub selinux_reporting: bool,
    pub user_buffer_checks_enabled: bool,
    pub hidden_backdoor_present: bool,
    pub clear_refs_vulnerable: bool,
    pub patched_words: BTreeMap<u64, u64>,
}

impl Default for KernelState {
    fn default() -> Self {
        KernelState {
            setuid_checks_enabled: true,
            selinux_enforcing: true,
            selinux_reporting: true,
            user_buffer_checks_enabled: true,
            hidden_backdoor_present: false,
            clear_refs_vulnerable: false,
            patched_words: BTreeMap::new(),
        }
    }
}

impl KernelState {
    pub fn is_pristine(&self) -> bool {
        *self == KernelState::default()
    }

    pub fn flag(&self, payload: PayloadId) -> bool {
        match payload {
            PayloadId::DisableSetuidChecks => !self.setuid_checks_enabled,
            PayloadId::SilenceSelinux => !self.selinux_enforcing,
            PayloadId::DisableUserBufferChecks => !self.user_buffer_checks_enabled,
            PayloadId::HiddenBackdoor => self.hidden_backdoor_present,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSite {
    pub payload: PayloadId,
    #[serde(with = "hexfmt::u64_hex")]
    pub addr: u64,
    #[serde(with = "hexfmt::u64_hex")]
    pub word: u64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSiteTable {
    pub v: u32,
    pub sites: Vec<PatchSite>,
}

#[derive(Debug, Error)]
pub enum PatchTableError {
    #[error("patch table i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("patch table parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("no patch site for payload {0:?}")]
    MissingPayload(PayloadId),
}

impl PatchSiteTable {
    pub fn builtin() -> Self {
        PatchSiteTable {
            v: 1,
            sites: vec![
                PatchSite {
                    payload: PayloadId::DisableSetuidChecks,
                    addr: 0xffff_ffc0_00c4_1a60,
                    word: 0x0000_0000_d503_201f,
                    description: "nop over the capability check in setuid/setgid".into(),
                },
                PatchSite {
                    payload: PayloadId::SilenceSelinux,
                    addr: 0xffff_ffc0_00d8_2e40,
                    word: 0x0000_0000_d503_201f,
                    description: "nop the enforcement branch, reporting path untouched".into(),
                },
                PatchSite {
                    payload: PayloadId::DisableUserBufferChecks,
                    addr: 0xffff_ffc0_00a1_3c20,
                    word: 0x0000_0000_d503_201f,
                    description: "nop the user buffer validation on syscalls".into(),
                },
                PatchSite {
                    payload: PayloadId::HiddenBackdoor,
                    addr: 0xffff_ffc0_00be_7710,
                    word: 0x0000_0000_1400_0040,
                    description: "redirect the clear_refs handler to an exploitable path".into(),
                },
            ],
        }
    }

    pub fn load(path: &Path) -> Result<Self, PatchTableError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("patch table encode")
    }

    pub fn site_for(&self, payload: PayloadId) -> Result<&PatchSite, PatchTableError> {
        self.sites
            .iter()
            .find(|s| s.payload == payload)
            .ok_or(PatchTableError::MissingPayload(payload))
    }

    pub fn classify(&self, addr: u64, word: u64) -> Option<PayloadId> {
        self.sites.iter().find(|s| s.addr == addr && s.word == word).map(|s| s.payload)
    }
}

impl Default for PatchSiteTable {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchEffect {
    Applied(PayloadId),
    /// Word recorded, no flag changed.
    UnknownSite,
}

/// Write a word over protected kernel memory. Every write is recorded;
/// recognized (address, word) pairs flip the corresponding flag.
pub fn apply_kernel_patch(
    kernel: &mut KernelState,
    table: &PatchSiteTable,
    addr: u64,
    word: u64,
) -> PatchEffect {
    kernel.patched_words.insert(addr, word);
    match table.classify(addr, word) {
        Some(PayloadId::DisableSetuidChecks) => {
            kernel.setuid_checks_enabled = false;
            PatchEffect::Applied(PayloadId::DisableSetuidChecks)
        }
        Some(PayloadId::SilenceSelinux) => {
            kernel.selinux_enforcing = false;
            // Reporting deliberately stays on.
            PatchEffect::Applied(PayloadId::SilenceSelinux)
        }
        Some(PayloadId::DisableUserBufferChecks) => {
            kernel.user_buffer_checks_enabled = false;
            PatchEffect::Applied(PayloadId::DisableUserBufferChecks)
        }
        Some(PayloadId::HiddenBackdoor) => {
            kernel.hidden_backdoor_present = true;
            kernel.clear_refs_vulnerable = true;
            PatchEffect::Applied(PayloadId::HiddenBackdoor)
        }
        None => PatchEffect::UnknownSite,
    }
}
