//! Abstract phone-UI state machine. Screens are hitbox maps over the panel;
//! delivered finger-down events drive a deterministic transition table. No
//! rendering, no timing: the UI is exactly as much phone as the attacks need.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::attacker::keyboard::{step_keyboard_mode, Key, KeyboardLayout, KeyboardMode, Rect};
use crate::controller::TouchState;
use crate::driver::TouchEventOut;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Screen {
    LockPattern,
    Home,
    PlayStore,
    Browser,
    Camera,
    Email,
    Settings,
}

/// Fixed hitboxes, laid out for the default 1440x2560 panel.
pub mod geometry {
    use super::Rect;

    pub const URL_BAR: Rect = Rect { x0: 100, y0: 200, x1: 1340, y1: 320 };
    pub const HOME_PLAYSTORE: Rect = Rect { x0: 100, y0: 400, x1: 400, y1: 700 };
    pub const HOME_BROWSER: Rect = Rect { x0: 500, y0: 400, x1: 800, y1: 700 };
    pub const HOME_CAMERA: Rect = Rect { x0: 900, y0: 400, x1: 1200, y1: 700 };
    pub const HOME_EMAIL: Rect = Rect { x0: 100, y0: 800, x1: 400, y1: 1100 };
    pub const HOME_SETTINGS: Rect = Rect { x0: 500, y0: 800, x1: 800, y1: 1100 };
    pub const STORE_INSTALL: Rect = Rect { x0: 400, y0: 1200, x1: 1040, y1: 1400 };
    pub const STORE_CONFIRM: Rect = Rect { x0: 400, y0: 1500, x1: 1040, y1: 1700 };
    pub const CAMERA_SHUTTER: Rect = Rect { x0: 570, y0: 2100, x1: 870, y1: 2400 };
    pub const EMAIL_SEND: Rect = Rect { x0: 1040, y0: 200, x1: 1340, y1: 400 };
    /// Navigation-bar home button, present on every unlocked screen.
    pub const NAV_HOME: Rect = Rect { x0: 570, y0: 2520, x1: 870, y1: 2560 };

    /// Center of unlock-pattern dot `i` (0..9, row-major 3x3 grid).
    pub fn dot_center(i: u8) -> (u16, u16) {
        let col = u16::from(i % 3);
        let row = u16::from(i / 3);
        (360 + 360 * col, 1000 + 360 * row)
    }

    pub fn dot_rect(i: u8) -> Rect {
        let (cx, cy) = dot_center(i);
        Rect { x0: cx - 100, y0: cy - 100, x1: cx + 100, y1: cy + 100 }
    }

    /// The dot under a point, if any.
    pub fn dot_at(x: u16, y: u16) -> Option<u8> {
        (0..9).find(|i| dot_rect(*i).contains(x, y))
    }
}

/// Resolve a named tap target to a screen point. Key targets search the
/// layout across modes in mode order.
pub fn resolve_target(name: &str, layout: &KeyboardLayout) -> Option<(u16, u16)> {
    use geometry::*;
    let rect = match name {
        "url_bar" => Some(URL_BAR),
        "home:playstore" => Some(HOME_PLAYSTORE),
        "home:browser" => Some(HOME_BROWSER),
        "home:camera" => Some(HOME_CAMERA),
        "home:email" => Some(HOME_EMAIL),
        "home:settings" => Some(HOME_SETTINGS),
        "playstore:install" => Some(STORE_INSTALL),
        "playstore:confirm" => Some(STORE_CONFIRM),
        "camera:shutter" => Some(CAMERA_SHUTTER),
        "email:send" => Some(EMAIL_SEND),
        "nav:home" => Some(NAV_HOME),
        _ => None,
    };
    if let Some(r) = rect {
        return Some(r.center());
    }
    if let Some(dot) = name.strip_prefix("dot:") {
        let i: u8 = dot.parse().ok()?;
        return (i < 9).then(|| geometry::dot_center(i));
    }
    if let Some(token) = name.strip_prefix("key:") {
        let key = Key::from_token(token)?;
        let mode = layout.mode_of(&key)?;
        return layout.key_center(mode, &key);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UiEffect {
    pub tick: u64,
    pub kind: UiEffectKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UiEffectKind {
    Unlocked,
    PatternDot { dot: u8 },
    AppInstalled { name: String },
    Navigated { url: String },
    PictureTaken,
    EmailSent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemEvent {
    BootCompleted,
    Reboot,
    DisplayPower(bool),
}

#[derive(Debug, Clone)]
pub struct PhoneUi {
    pub screen: Screen,
    pub screen_on: bool,
    pub url_buffer: String,
    pub url_focused: bool,
    pub kb_mode: KeyboardMode,
    pub installed_apps: BTreeSet<String>,
    pub unlock_pattern: Vec<u8>,
    entered: Vec<u8>,
    pub permission_prompts: VecDeque<String>,
    pending_install: Option<String>,
    /// What the store screen currently offers for installation.
    pub store_app: String,
    pub effects: Vec<UiEffect>,
    layout: KeyboardLayout,
}

impl PhoneUi {
    pub fn new(layout: KeyboardLayout, unlock_pattern: Vec<u8>, store_app: String) -> Self {
        PhoneUi {
            screen: Screen::LockPattern,
            screen_on: true,
            url_buffer: String::new(),
            url_focused: false,
            kb_mode: KeyboardMode::Letters,
            installed_apps: BTreeSet::new(),
            unlock_pattern,
            entered: Vec::new(),
            permission_prompts: VecDeque::new(),
            pending_install: None,
            store_app,
            effects: Vec::new(),
            layout,
        }
    }

    pub fn system(&mut self, _tick: u64, ev: SystemEvent) {
        match ev {
            SystemEvent::BootCompleted => {}
            SystemEvent::Reboot => {
                self.screen = Screen::LockPattern;
                self.screen_on = true;
                self.url_buffer.clear();
                self.url_focused = false;
                self.kb_mode = KeyboardMode::Letters;
                self.entered.clear();
                self.permission_prompts.clear();
                self.pending_install = None;
            }
            SystemEvent::DisplayPower(on) => self.screen_on = on,
        }
    }

    fn effect(&mut self, tick: u64, kind: UiEffectKind) {
        self.effects.push(UiEffect { tick, kind });
    }

    /// Apply one delivered touch event. Only finger-down acts; undefined taps
    /// are no-ops. Events arrive here whether or not the display is lit; the
    /// digitizer does not care.
    pub fn ui_step(&mut self, tick: u64, event: &TouchEventOut) {
        if event.state != TouchState::Down {
            return;
        }
        let (x, y) = (event.x, event.y);
        if self.screen != Screen::LockPattern && geometry::NAV_HOME.contains(x, y) {
            self.screen = Screen::Home;
            self.url_focused = false;
            return;
        }
        match self.screen {
            Screen::LockPattern => {
                if let Some(dot) = geometry::dot_at(x, y) {
                    self.entered.push(dot);
                    self.effect(tick, UiEffectKind::PatternDot { dot });
                    if self.entered.len() == self.unlock_pattern.len() {
                        if self.entered == self.unlock_pattern {
                            self.effect(tick, UiEffectKind::Unlocked);
                            self.screen = Screen::Home;
                        }
                        self.entered.clear();
                    }
                }
            }
            Screen::Home => {
                if geometry::HOME_PLAYSTORE.contains(x, y) {
                    self.screen = Screen::PlayStore;
                } else if geometry::HOME_BROWSER.contains(x, y) {
                    self.screen = Screen::Browser;
                } else if geometry::HOME_CAMERA.contains(x, y) {
                    self.screen = Screen::Camera;
                } else if geometry::HOME_EMAIL.contains(x, y) {
                    self.screen = Screen::Email;
                } else if geometry::HOME_SETTINGS.contains(x, y) {
                    self.screen = Screen::Settings;
                }
            }
            Screen::PlayStore => {
                if geometry::STORE_INSTALL.contains(x, y) {
                    self.pending_install = Some(self.store_app.clone());
                    self.permission_prompts
                        .push_back(format!("install {} with all permissions", self.store_app));
                } else if geometry::STORE_CONFIRM.contains(x, y) {
                    // Any security prompt is confirmable by touch.
                    if let Some(app) = self.pending_install.take() {
                        self.permission_prompts.pop_front();
                        self.installed_apps.insert(app.clone());
                        self.effect(tick, UiEffectKind::AppInstalled { name: app });
                    }
                }
            }
            Screen::Browser => {
                if geometry::URL_BAR.contains(x, y) {
                    self.url_focused = true;
                } else if self.url_focused {
                    if let Some(key) = self.layout.decode_key(self.kb_mode, x, y) {
                        match key {
                            Key::Char(c) => self.url_buffer.push(c),
                            Key::Backspace => {
                                self.url_buffer.pop();
                            }
                            Key::Enter => {
                                let url = self.url_buffer.clone();
                                self.effect(tick, UiEffectKind::Navigated { url });
                            }
                            Key::Shift => {}
                            Key::ModeSwitch(_) => {}
                        }
                        self.kb_mode = step_keyboard_mode(self.kb_mode, &key);
                    }
                }
            }
            Screen::Camera => {
                if geometry::CAMERA_SHUTTER.contains(x, y) {
                    self.effect(tick, UiEffectKind::PictureTaken);
                }
            }
            Screen::Email => {
                if geometry::EMAIL_SEND.contains(x, y) {
                    self.effect(tick, UiEffectKind::EmailSent);
                }
            }
            Screen::Settings => {}
        }
    }

    pub fn effects(&self) -> &[UiEffect] {
        &self.effects
    }

    pub fn has_effect(&self, pred: impl Fn(&UiEffectKind) -> bool) -> bool {
        self.effects.iter().any(|e| pred(&e.kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ui() -> PhoneUi {
        PhoneUi::new(
            KeyboardLayout::qwerty(1440, 2560),
            vec![0, 3, 6, 7, 8, 5, 2, 1, 4],
            "cleanup_helper".into(),
        )
    }

    fn down(x: u16, y: u16) -> TouchEventOut {
        TouchEventOut { finger_id: 0, x, y, pressure: 40, state: TouchState::Down }
    }

    #[test]
    fn correct_pattern_unlocks_to_home() {
        let mut ui = ui();
        let pattern = ui.unlock_pattern.clone();
        for dot in pattern {
            let (x, y) = geometry::dot_center(dot);
            ui.ui_step(0, &down(x, y));
        }
        assert_eq!(ui.screen, Screen::Home);
        assert!(ui.has_effect(|k| matches!(k, UiEffectKind::Unlocked)));
    }

    #[test]
    fn wrong_pattern_stays_locked_and_resets() {
        let mut ui = ui();
        for dot in [0u8, 1, 2, 3, 4, 5, 6, 7, 8] {
            let (x, y) = geometry::dot_center(dot);
            ui.ui_step(0, &down(x, y));
        }
        assert_eq!(ui.screen, Screen::LockPattern);
    }

    #[test]
    fn store_install_then_confirm_installs_the_app() {
        let mut ui = ui();
        ui.screen = Screen::PlayStore;
        let (x, y) = geometry::STORE_INSTALL.center();
        ui.ui_step(0, &down(x, y));
        assert_eq!(ui.permission_prompts.len(), 1);
        let (x, y) = geometry::STORE_CONFIRM.center();
        ui.ui_step(1, &down(x, y));
        assert!(ui.installed_apps.contains("cleanup_helper"));
        assert!(ui.permission_prompts.is_empty());
    }

    #[test]
    fn browser_types_into_url_buffer_and_navigates() {
        let mut ui = ui();
        ui.screen = Screen::Browser;
        let (x, y) = geometry::URL_BAR.center();
        ui.ui_step(0, &down(x, y));
        let layout = KeyboardLayout::qwerty(1440, 2560);
        for ch in "ab".chars() {
            let (kx, ky) = layout.key_center(KeyboardMode::Letters, &Key::Char(ch)).unwrap();
            ui.ui_step(1, &down(kx, ky));
        }
        let (bx, by) = layout.key_center(KeyboardMode::Letters, &Key::Backspace).unwrap();
        ui.ui_step(2, &down(bx, by));
        assert_eq!(ui.url_buffer, "a");
        let (ex, ey) = layout.key_center(KeyboardMode::Letters, &Key::Enter).unwrap();
        ui.ui_step(3, &down(ex, ey));
        assert!(ui.has_effect(|k| matches!(k, UiEffectKind::Navigated { url } if url == "a")));
    }

    #[test]
    fn undefined_taps_are_noops_and_ups_ignored() {
        let mut ui = ui();
        ui.screen = Screen::Home;
        ui.ui_step(0, &down(1439, 2519));
        assert_eq!(ui.screen, Screen::Home);
        let up = TouchEventOut { finger_id: 0, x: 250, y: 550, pressure: 0, state: TouchState::Up };
        ui.ui_step(0, &up);
        assert_eq!(ui.screen, Screen::Home);
    }

    #[test]
    fn nav_home_returns_from_any_unlocked_screen() {
        let mut ui = ui();
        ui.screen = Screen::Camera;
        let (x, y) = geometry::NAV_HOME.center();
        ui.ui_step(0, &down(x, y));
        assert_eq!(ui.screen, Screen::Home);
    }

    #[test]
    fn reboot_locks_and_keeps_installed_apps() {
        let mut ui = ui();
        ui.screen = Screen::Browser;
        ui.installed_apps.insert("x".into());
        ui.system(5, SystemEvent::Reboot);
        assert_eq!(ui.screen, Screen::LockPattern);
        assert!(ui.installed_apps.contains("x"));
    }

    #[test]
    fn named_targets_resolve() {
        let layout = KeyboardLayout::qwerty(1440, 2560);
        assert_eq!(resolve_target("url_bar", &layout), Some(geometry::URL_BAR.center()));
        assert_eq!(resolve_target("dot:4", &layout), Some(geometry::dot_center(4)));
        assert!(resolve_target("key:g", &layout).is_some());
        assert!(resolve_target("key:mode:numbers", &layout).is_some());
        assert_eq!(resolve_target("nonsense", &layout), None);
    }
}
