//! The proxy-firewall countermeasure: an interposer installed motherboard
//! side that evaluates every transaction against an ordered rule list and
//! passes, blocks, or sanitizes it. First matching rule wins; rules are pure
//! functions of the transaction plus a bounded sliding window of touch
//! history, so verdicts are deterministic and replayable offline.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{BusTransaction, EventKind, Interposer, ReadAction, ResponseAction, Source, WriteAction};
use crate::controller::REG_TOUCH_REPORT;
use crate::hexfmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Pass,
    Block,
    Sanitize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub rule_id: Option<String>,
    pub reason: String,
    /// Replacement response bytes for `Sanitize`.
    pub replacement: Option<Vec<u8>>,
}

impl Verdict {
    fn pass_default() -> Self {
        Verdict { kind: VerdictKind::Pass, rule_id: None, reason: "default".into(), replacement: None }
    }
}

/// Content condition on a read response or write payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSchema {
    /// Any nonzero byte present.
    Nonzero,
    AllZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateSpec {
    pub window_us: u64,
    pub max_per_window: u32,
}

/// Conjunction of predicates; an absent field matches anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Matcher {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "hexfmt::u16_hex_opt")]
    pub reg_min: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "hexfmt::u16_hex_opt")]
    pub reg_max: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_len_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_len_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSchema>,
    /// Matches touch-report reads once the windowed finger-down count
    /// exceeds the limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub touch_rate: Option<RateSpec>,
}

impl Matcher {
    /// Whether this matcher needs response bytes to decide.
    fn needs_data(&self) -> bool {
        self.data.is_some() || self.touch_rate.is_some()
    }

    fn kind_matches(&self, kind: EventKind) -> bool {
        match &self.kinds {
            None => true,
            Some(tags) => tags.iter().any(|t| EventKind::from_str(t) == Some(kind)),
        }
    }

    fn matches(&self, txn: &BusTransaction, history: &History) -> bool {
        if !self.kind_matches(txn.kind) {
            return false;
        }
        if let Some(min) = self.reg_min {
            if !txn.is_transfer() || txn.reg_addr < min {
                return false;
            }
        }
        if let Some(max) = self.reg_max {
            if !txn.is_transfer() || txn.reg_addr > max {
                return false;
            }
        }
        if let Some(min) = self.read_len_min {
            if txn.kind != EventKind::RegRead || txn.read_len < min {
                return false;
            }
        }
        if let Some(max) = self.read_len_max {
            if txn.kind != EventKind::RegRead || txn.read_len > max {
                return false;
            }
        }
        if let Some(schema) = self.data {
            let hit = match schema {
                DataSchema::Nonzero => txn.data.iter().any(|b| *b != 0),
                DataSchema::AllZero => txn.data.iter().all(|b| *b == 0),
            };
            if !hit {
                return false;
            }
        }
        if let Some(rate) = self.touch_rate {
            if !is_touch_down_report(txn) {
                return false;
            }
            // Count downs inside the window, this transaction included.
            let downs = 1 + history.downs_since(txn.tick.saturating_sub(rate.window_us));
            if downs <= rate.max_per_window {
                return false;
            }
        }
        true
    }
}

fn is_touch_down_report(txn: &BusTransaction) -> bool {
    txn.kind == EventKind::RegRead
        && txn.reg_addr == REG_TOUCH_REPORT
        && txn
            .data
            .chunks_exact(8)
            .any(|rec| rec[0] & 0x0f == crate::controller::TouchState::Down.nibble())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub verdict: VerdictKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement_hex: Option<String>,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub v: u32,
    pub default: VerdictKind,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy parse: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Policy {
    pub fn pass_all() -> Self {
        Policy { v: 1, default: VerdictKind::Pass, rules: Vec::new() }
    }

    pub fn block_all() -> Self {
        Policy { v: 1, default: VerdictKind::Block, rules: Vec::new() }
    }

    /// The shipped default: block descriptor probes above the benign region
    /// that come back nonzero, cap status reads at the four-register benign
    /// maximum, and rate-limit sustained touch delivery.
    pub fn builtin_default() -> Self {
        Policy {
            v: 1,
            default: VerdictKind::Pass,
            rules: vec![
                Rule {
                    id: "descriptor-region-clean".into(),
                    matcher: Matcher {
                        kinds: Some(vec!["R".into()]),
                        reg_min: Some(0x0501),
                        data: Some(DataSchema::Nonzero),
                        ..Matcher::default()
                    },
                    verdict: VerdictKind::Block,
                    replacement_hex: None,
                    reason: "descriptor probe above 0x500 answered with data".into(),
                },
                Rule {
                    id: "status-read-cap".into(),
                    matcher: Matcher {
                        kinds: Some(vec!["R".into()]),
                        reg_min: Some(crate::controller::REG_IRQ_STATUS),
                        reg_max: Some(crate::controller::REG_IRQ_STATUS),
                        read_len_min: Some(5),
                        ..Matcher::default()
                    },
                    verdict: VerdictKind::Block,
                    replacement_hex: None,
                    reason: "status read beyond the four benign interrupt registers".into(),
                },
                Rule {
                    id: "touch-rate-guard".into(),
                    matcher: Matcher {
                        touch_rate: Some(RateSpec { window_us: 1_000_000, max_per_window: 20 }),
                        ..Matcher::default()
                    },
                    verdict: VerdictKind::Block,
                    replacement_hex: None,
                    reason: "sustained touch rate above 20 taps per second".into(),
                },
            ],
        }
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy encode")
    }
}

/// Bounded history of finger-down report ticks.
#[derive(Debug, Clone, Default)]
pub struct History {
    downs: VecDeque<u64>,
    window_us: u64,
}

impl History {
    pub fn with_window(window_us: u64) -> Self {
        History { downs: VecDeque::new(), window_us }
    }

    fn downs_since(&self, since: u64) -> u32 {
        self.downs.iter().filter(|t| **t >= since).count() as u32
    }

    /// Record a delivered transaction; only touch-down reports matter.
    pub fn note(&mut self, txn: &BusTransaction) {
        if is_touch_down_report(txn) {
            self.downs.push_back(txn.tick);
            let floor = txn.tick.saturating_sub(self.window_us.max(1_000_000));
            while self.downs.front().is_some_and(|t| *t < floor) {
                self.downs.pop_front();
            }
        }
    }
}

/// First matching rule wins; an empty rule list applies the default. Pure in
/// (transaction, window, policy).
pub fn evaluate(txn: &BusTransaction, policy: &Policy, history: &History) -> Verdict {
    for rule in &policy.rules {
        if rule.matcher.matches(txn, history) {
            let replacement = rule
                .replacement_hex
                .as_ref()
                .and_then(|h| hex::decode(h).ok());
            return Verdict {
                kind: rule.verdict,
                rule_id: Some(rule.id.clone()),
                reason: rule.reason.clone(),
                replacement,
            };
        }
    }
    Verdict { kind: policy.default, rule_id: None, reason: "default".into(), replacement: None }
}

/// Evaluate a whole recorded trace; history evolves exactly as it would have
/// live. Returns one verdict per record.
pub fn evaluate_trace(records: &[BusTransaction], policy: &Policy) -> Vec<Verdict> {
    let mut history = History::with_window(max_window(policy));
    let mut out = Vec::with_capacity(records.len());
    for txn in records {
        let v = evaluate(txn, policy, &history);
        if v.kind == VerdictKind::Pass {
            history.note(txn);
        }
        out.push(v);
    }
    out
}

fn max_window(policy: &Policy) -> u64 {
    policy
        .rules
        .iter()
        .filter_map(|r| r.matcher.touch_rate.map(|t| t.window_us))
        .max()
        .unwrap_or(1_000_000)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerdictRecord {
    pub tick: u64,
    pub kind: VerdictKind,
    pub rule_id: Option<String>,
    pub reason: String,
    pub reg_addr: u16,
    pub read_len: u32,
}

/// The firewall endpoint: sits first in the chain (motherboard side) so that
/// everything the replaceable parts emit passes through it.
#[derive(Debug, Clone)]
pub struct Firewall {
    policy: Policy,
    history: History,
    log: Vec<VerdictRecord>,
    blocked: usize,
    sanitized: usize,
}

impl Firewall {
    pub fn new(policy: Policy) -> Self {
        let window = max_window(&policy);
        Firewall { policy, history: History::with_window(window), log: Vec::new(), blocked: 0, sanitized: 0 }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked
    }

    pub fn sanitized_count(&self) -> usize {
        self.sanitized
    }

    pub fn verdict_log(&self) -> &[VerdictRecord] {
        &self.log
    }

    fn judge(&mut self, txn: &BusTransaction) -> Verdict {
        let v = evaluate(txn, &self.policy, &self.history);
        match v.kind {
            VerdictKind::Pass => self.history.note(txn),
            VerdictKind::Block | VerdictKind::Sanitize => {
                if v.kind == VerdictKind::Block {
                    self.blocked += 1;
                } else {
                    self.sanitized += 1;
                }
                self.log.push(VerdictRecord {
                    tick: txn.tick,
                    kind: v.kind,
                    rule_id: v.rule_id.clone(),
                    reason: v.reason.clone(),
                    reg_addr: txn.reg_addr,
                    read_len: txn.read_len,
                });
            }
        }
        v
    }

}

fn wire_txn(now: u64, sa: u8, kind: EventKind, reg: u16, data: Vec<u8>, read_len: u32) -> BusTransaction {
    BusTransaction { tick: now, source: Source::Driver, kind, slave_addr: sa, reg_addr: reg, data, read_len }
}

impl Interposer for Firewall {
    fn source(&self) -> Source {
        Source::Firewall
    }

    fn on_write(&mut self, now: u64, sa: u8, reg: u16, data: &[u8]) -> WriteAction {
        let txn = wire_txn(now, sa, EventKind::RegWrite, reg, data.to_vec(), 0);
        let v = self.judge(&txn);
        match v.kind {
            VerdictKind::Pass => WriteAction::Forward { reg, data: data.to_vec() },
            VerdictKind::Block => WriteAction::Block,
            VerdictKind::Sanitize => {
                WriteAction::Forward { reg, data: v.replacement.unwrap_or_else(|| data.to_vec()) }
            }
        }
    }

    fn on_read(&mut self, now: u64, sa: u8, reg: u16, len: u32) -> ReadAction {
        // Request leg: only rules that need no response bytes can fire here.
        let txn = wire_txn(now, sa, EventKind::RegRead, reg, Vec::new(), len);
        let hit = self
            .policy
            .rules
            .iter()
            .position(|r| !r.matcher.needs_data() && r.matcher.matches(&txn, &self.history));
        if let Some(i) = hit {
            if self.policy.rules[i].verdict == VerdictKind::Block {
                let rule_id = self.policy.rules[i].id.clone();
                let reason = self.policy.rules[i].reason.clone();
                self.blocked += 1;
                self.log.push(VerdictRecord {
                    tick: now,
                    kind: VerdictKind::Block,
                    rule_id: Some(rule_id),
                    reason,
                    reg_addr: reg,
                    read_len: len,
                });
                return ReadAction::Block;
            }
        }
        ReadAction::Forward { reg, len }
    }

    fn on_read_response(&mut self, now: u64, sa: u8, reg: u16, data: Vec<u8>) -> ResponseAction {
        let len = data.len() as u32;
        let txn = wire_txn(now, sa, EventKind::RegRead, reg, data.clone(), len);
        let v = self.judge(&txn);
        match v.kind {
            VerdictKind::Pass => ResponseAction::Pass(data),
            VerdictKind::Block => ResponseAction::Block,
            VerdictKind::Sanitize => {
                let mut replacement = v.replacement.unwrap_or_default();
                replacement.resize(data.len(), 0);
                ResponseAction::Rewrite(replacement)
            }
        }
    }

    fn pass_irq(&mut self, now: u64, asserted: bool) -> bool {
        let kind = if asserted { EventKind::IrqAssert } else { EventKind::IrqClear };
        let txn = BusTransaction {
            tick: now,
            source: Source::Controller,
            kind,
            slave_addr: 0,
            reg_addr: 0,
            data: Vec::new(),
            read_len: 0,
        };
        self.judge(&txn).kind == VerdictKind::Pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_txn(tick: u64, reg: u16, len: u32, data: Vec<u8>) -> BusTransaction {
        BusTransaction {
            tick,
            source: Source::Driver,
            kind: EventKind::RegRead,
            slave_addr: 0x20,
            reg_addr: reg,
            data,
            read_len: len,
        }
    }

    #[test]
    fn crafted_descriptor_read_is_blocked_benign_probe_passes() {
        let policy = Policy::builtin_default();
        let history = History::default();
        let crafted = read_txn(0, 0x05a6, 6, vec![0xa0, 0x10, 0, 0x20, 0x30, 0x07]);
        let v = evaluate(&crafted, &policy, &history);
        assert_eq!(v.kind, VerdictKind::Block);
        assert_eq!(v.rule_id.as_deref(), Some("descriptor-region-clean"));
        // The benign extended probe answers all zeros and passes.
        let benign = read_txn(0, 0x0ae9, 6, vec![0; 6]);
        assert_eq!(evaluate(&benign, &policy, &history).kind, VerdictKind::Pass);
    }

    #[test]
    fn oversized_status_read_is_blocked_benign_one_passes() {
        let policy = Policy::builtin_default();
        let history = History::default();
        let oversized = read_txn(0, 0x0006, 210, Vec::new());
        let v = evaluate(&oversized, &policy, &history);
        assert_eq!(v.kind, VerdictKind::Block);
        assert_eq!(v.rule_id.as_deref(), Some("status-read-cap"));
        let benign = read_txn(0, 0x0006, 1, vec![0x02]);
        assert_eq!(evaluate(&benign, &policy, &history).kind, VerdictKind::Pass);
    }

    fn down_report(tick: u64) -> BusTransaction {
        let frame = crate::controller::TouchFrame::tap_down(0, 10, 10, 1);
        let data = crate::controller::encode_touch_report(&frame);
        read_txn(tick, REG_TOUCH_REPORT, data.len() as u32, data)
    }

    #[test]
    fn rate_guard_blocks_sixty_per_second_passes_five() {
        let policy = Policy::builtin_default();
        // 60 downs spread over one second: blocked once past the limit.
        let txns: Vec<BusTransaction> = (0..60).map(|k| down_report(k * 16_667)).collect();
        let verdicts = evaluate_trace(&txns, &policy);
        assert_eq!(verdicts.iter().filter(|v| v.kind == VerdictKind::Block).count(), 40);
        assert_eq!(verdicts[19].kind, VerdictKind::Pass);
        assert_eq!(verdicts[20].kind, VerdictKind::Block);
        // 5 in a second passes.
        let slow: Vec<BusTransaction> = (0..5).map(|k| down_report(k * 200_000)).collect();
        assert!(evaluate_trace(&slow, &policy).iter().all(|v| v.kind == VerdictKind::Pass));
    }

    #[test]
    fn short_burst_then_silence_passes_windowed_average() {
        let policy = Policy::builtin_default();
        let txns: Vec<BusTransaction> = (0..3).map(|k| down_report(k * 25_000)).collect();
        assert!(evaluate_trace(&txns, &policy).iter().all(|v| v.kind == VerdictKind::Pass));
    }

    #[test]
    fn first_matching_rule_wins() {
        let mut policy = Policy::builtin_default();
        policy.rules.insert(
            0,
            Rule {
                id: "shadow".into(),
                matcher: Matcher { kinds: Some(vec!["R".into()]), reg_min: Some(0x0501), ..Matcher::default() },
                verdict: VerdictKind::Pass,
                replacement_hex: None,
                reason: "pass everything high".into(),
            },
        );
        let crafted = read_txn(0, 0x05a6, 6, vec![0xa0, 0x10, 0, 0x20, 0x30, 0x07]);
        let v = evaluate(&crafted, &policy, &History::default());
        assert_eq!(v.kind, VerdictKind::Pass);
        assert_eq!(v.rule_id.as_deref(), Some("shadow"));
    }

    #[test]
    fn empty_policy_applies_default() {
        let crafted = read_txn(0, 0x05a6, 6, vec![0xff; 6]);
        assert_eq!(evaluate(&crafted, &Policy::pass_all(), &History::default()).kind, VerdictKind::Pass);
        assert_eq!(evaluate(&crafted, &Policy::block_all(), &History::default()).kind, VerdictKind::Block);
    }

    #[test]
    fn sanitize_rewrites_the_response_to_fit() {
        let mut fw = Firewall::new(Policy {
            v: 1,
            default: VerdictKind::Pass,
            rules: vec![Rule {
                id: "scrub".into(),
                matcher: Matcher { kinds: Some(vec!["R".into()]), reg_min: Some(0x0501), data: Some(DataSchema::Nonzero), ..Matcher::default() },
                verdict: VerdictKind::Sanitize,
                replacement_hex: Some("00".into()),
                reason: "zero out".into(),
            }],
        });
        let action = fw.on_read_response(0, 0x20, 0x05a6, vec![0xaa; 6]);
        assert_eq!(action, ResponseAction::Rewrite(vec![0; 6]));
        assert_eq!(fw.sanitized_count(), 1);
    }

    #[test]
    fn policy_round_trips_through_json() {
        let p = Policy::builtin_default();
        let text = p.to_json();
        let back: Policy = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}
