//! Playback clock and event scheduling.
//!
//! The transport owns no audio and no timers. Callers pass wall-clock readings in seconds and
//! ask what media time it is, or which note events fall into an upcoming window; an audio
//! backend polls [`events_in`] a little ahead of the playhead.

use thiserror::Error;

use crate::roll::{LayerKind, RollDocument};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("loop start {a} must be before loop end {b}")]
    InvalidLoop { a: f64, b: f64 },
    #[error("wall clock {wall_sec} is earlier than the playback anchor {anchor_sec}")]
    ClockSkew { wall_sec: f64, anchor_sec: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransportMode {
    Stopped,
    Paused {
        media_sec: f64,
    },
    /// Media time `anchor_media_sec` was current at wall time `anchor_wall_sec`.
    Playing {
        anchor_wall_sec: f64,
        anchor_media_sec: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportState {
    mode: TransportMode,
    loop_region: Option<(f64, f64)>,
    duration_sec: f64,
}

impl TransportState {
    pub fn new(duration_sec: f64) -> Self {
        Self {
            mode: TransportMode::Stopped,
            loop_region: None,
            duration_sec: if duration_sec.is_finite() {
                duration_sec.max(0.0)
            } else {
                0.0
            },
        }
    }

    pub fn mode(&self) -> TransportMode {
        self.mode
    }

    /// Active A-B loop as the half-open interval `[a, b)`.
    pub fn loop_region(&self) -> Option<(f64, f64)> {
        self.loop_region
    }

    pub fn duration_sec(&self) -> f64 {
        self.duration_sec
    }

    pub fn is_playing(&self) -> bool {
        matches!(self.mode, TransportMode::Playing { .. })
    }

    fn clamp(&self, t: f64) -> f64 {
        t.max(0.0).min(self.duration_sec)
    }

    fn in_loop(&self, t: f64) -> bool {
        self.loop_region.is_none_or(|(a, b)| a <= t && t < b)
    }

    fn with_mode(&self, mode: TransportMode) -> Self {
        Self { mode, ..*self }
    }

    fn playing_from(&self, wall_sec: f64, media_sec: f64) -> Self {
        self.with_mode(TransportMode::Playing {
            anchor_wall_sec: wall_sec,
            anchor_media_sec: media_sec,
        })
    }

    /// Starts playback. From stop it begins at 0, or at the loop start when a loop is set;
    /// from pause it resumes where it paused, snapping to the loop start if that position is
    /// outside the loop. Already playing: unchanged.
    pub fn play(&self, wall_sec: f64) -> Self {
        match self.mode {
            TransportMode::Playing { .. } => *self,
            TransportMode::Stopped => {
                let start = self.loop_region.map_or(0.0, |(a, _)| a);
                self.playing_from(wall_sec, start)
            }
            TransportMode::Paused { media_sec } => {
                let start = match self.loop_region {
                    Some((a, _)) if !self.in_loop(media_sec) => a,
                    _ => media_sec,
                };
                self.playing_from(wall_sec, start)
            }
        }
    }

    /// Freezes the current media time.
    pub fn pause(&self, wall_sec: f64) -> Result<Self, TransportError> {
        match self.mode {
            TransportMode::Playing { .. } => Ok(self.with_mode(TransportMode::Paused {
                media_sec: self.current_time(wall_sec)?,
            })),
            _ => Ok(*self),
        }
    }

    /// Stops and rewinds to 0. The loop, if any, is kept.
    pub fn stop(&self) -> Self {
        self.with_mode(TransportMode::Stopped)
    }

    /// Moves the playhead to `target_sec`, clamped to the media. Playing re-anchors at
    /// `wall_sec`; paused or stopped ends up paused at the target.
    pub fn seek(&self, wall_sec: f64, target_sec: f64) -> Self {
        let target = self.clamp(target_sec);
        match self.mode {
            TransportMode::Playing { .. } => self.playing_from(wall_sec, target),
            _ => self.with_mode(TransportMode::Paused { media_sec: target }),
        }
    }

    /// Sets the A-B loop `[a, b)` after clamping both ends to the media. While playing, a
    /// playhead outside the new loop jumps to `a`; paused positions are left alone.
    pub fn set_loop(&self, wall_sec: f64, a_sec: f64, b_sec: f64) -> Result<Self, TransportError> {
        let (a, b) = (self.clamp(a_sec), self.clamp(b_sec));
        if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
            return Err(TransportError::InvalidLoop { a, b });
        }
        let now = match self.mode {
            TransportMode::Playing { .. } => Some(self.current_time(wall_sec)?),
            _ => None,
        };
        let mut next = Self {
            loop_region: Some((a, b)),
            ..*self
        };
        if let Some(now) = now {
            let start = if next.in_loop(now) { now } else { a };
            next = next.playing_from(wall_sec, start);
        }
        Ok(next)
    }

    /// Removes the loop without moving the playhead.
    pub fn clear_loop(&self, wall_sec: f64) -> Result<Self, TransportError> {
        let now = match self.mode {
            TransportMode::Playing { .. } => Some(self.current_time(wall_sec)?),
            _ => None,
        };
        let next = Self {
            loop_region: None,
            ..*self
        };
        Ok(match now {
            Some(now) => next.playing_from(wall_sec, now),
            None => next,
        })
    }

    /// Media position at wall time `wall_sec`.
    ///
    /// While playing with a loop `[a, b)`, a playhead that reaches `b` wraps to
    /// `a + ((p - a) mod (b - a))` where `p` is the unwrapped position. A playhead anchored at
    /// or past `b` (after seeking beyond the loop) plays on to the end. Without a loop the
    /// position stops at the media duration; see [`TransportState::settle`].
    pub fn current_time(&self, wall_sec: f64) -> Result<f64, TransportError> {
        match self.mode {
            TransportMode::Stopped => Ok(0.0),
            TransportMode::Paused { media_sec } => Ok(media_sec),
            TransportMode::Playing {
                anchor_wall_sec,
                anchor_media_sec,
            } => {
                if wall_sec < anchor_wall_sec {
                    return Err(TransportError::ClockSkew {
                        wall_sec,
                        anchor_sec: anchor_wall_sec,
                    });
                }
                let position = anchor_media_sec + (wall_sec - anchor_wall_sec);
                match self.loop_region {
                    Some((a, b)) if anchor_media_sec < b && position >= b => {
                        let wrapped = a + (position - a) % (b - a);
                        Ok(if wrapped < b { wrapped } else { a })
                    }
                    _ => Ok(position.min(self.duration_sec)),
                }
            }
        }
    }

    /// Applies end-of-media: playback without an engaged loop that has reached the end stops.
    pub fn settle(&self, wall_sec: f64) -> Result<Self, TransportError> {
        if let TransportMode::Playing {
            anchor_media_sec, ..
        } = self.mode
        {
            let looping = self.loop_region.is_some_and(|(_, b)| anchor_media_sec < b);
            if !looping && self.current_time(wall_sec)? >= self.duration_sec {
                return Ok(self.stop());
            }
        }
        Ok(*self)
    }
}

/// Per-layer mixer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackMix {
    layer_id: String,
    mute: bool,
    pan: f64,
    gain: f64,
}

impl TrackMix {
    pub const MAX_GAIN: f64 = 2.0;

    /// Unmuted, centered, unity gain.
    pub fn new(layer_id: impl Into<String>) -> Self {
        Self {
            layer_id: layer_id.into(),
            mute: false,
            pan: 0.0,
            gain: 1.0,
        }
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn mute(&self) -> bool {
        self.mute
    }

    pub fn pan(&self) -> f64 {
        self.pan
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn with_mute(self, mute: bool) -> Self {
        Self { mute, ..self }
    }

    /// Clamped to `[-1, 1]`.
    pub fn with_pan(self, pan: f64) -> Self {
        let pan = if pan.is_nan() {
            0.0
        } else {
            pan.clamp(-1.0, 1.0)
        };
        Self { pan, ..self }
    }

    /// Clamped to `[0, 2]`.
    pub fn with_gain(self, gain: f64) -> Self {
        let gain = if gain.is_nan() {
            1.0
        } else {
            gain.clamp(0.0, Self::MAX_GAIN)
        };
        Self { gain, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduledKind {
    NoteOn {
        layer_id: String,
        pitch: u8,
        velocity: u8,
    },
    NoteOff {
        layer_id: String,
        pitch: u8,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledEvent {
    pub at_sec: f64,
    pub kind: ScheduledKind,
    pub pan: f64,
    pub gain: f64,
}

impl ScheduledEvent {
    pub fn layer_id(&self) -> &str {
        match &self.kind {
            ScheduledKind::NoteOn { layer_id, .. } | ScheduledKind::NoteOff { layer_id, .. } => {
                layer_id
            }
        }
    }

    pub fn is_note_on(&self) -> bool {
        matches!(self.kind, ScheduledKind::NoteOn { .. })
    }
}

/// Note on/off events with media times in `[t0, t1)` from every visible, unmuted MIDI layer.
///
/// Sorted by time, then layer order; at equal times within a layer note-offs come first.
/// Layers without an entry in `mixes` play unmuted at unity gain, centered.
pub fn events_in(doc: &RollDocument, mixes: &[TrackMix], t0: f64, t1: f64) -> Vec<ScheduledEvent> {
    let mut keyed: Vec<(usize, ScheduledEvent)> = Vec::new();
    if t0.partial_cmp(&t1) != Some(std::cmp::Ordering::Less) {
        return Vec::new();
    }
    let in_window = |t: f64| t0 <= t && t < t1;

    for (layer_index, layer) in doc.layers().iter().enumerate() {
        if layer.kind != LayerKind::Midi || !layer.visible {
            continue;
        }
        let mix = mixes
            .iter()
            .find(|m| m.layer_id == layer.id)
            .cloned()
            .unwrap_or_else(|| TrackMix::new(layer.id.clone()));
        if mix.mute {
            continue;
        }
        for note in doc.notes(&layer.id) {
            if in_window(note.onset_sec) {
                keyed.push((
                    layer_index,
                    ScheduledEvent {
                        at_sec: note.onset_sec,
                        kind: ScheduledKind::NoteOn {
                            layer_id: layer.id.clone(),
                            pitch: note.pitch,
                            velocity: note.velocity,
                        },
                        pan: mix.pan,
                        gain: mix.gain,
                    },
                ));
            }
            if in_window(note.offset_sec) {
                keyed.push((
                    layer_index,
                    ScheduledEvent {
                        at_sec: note.offset_sec,
                        kind: ScheduledKind::NoteOff {
                            layer_id: layer.id.clone(),
                            pitch: note.pitch,
                        },
                        pan: mix.pan,
                        gain: mix.gain,
                    },
                ));
            }
        }
    }

    keyed.sort_by(|(la, a), (lb, b)| {
        a.at_sec
            .total_cmp(&b.at_sec)
            .then(la.cmp(lb))
            .then_with(|| event_rank(a).cmp(&event_rank(b)))
    });
    keyed.into_iter().map(|(_, e)| e).collect()
}

fn event_rank(e: &ScheduledEvent) -> (u8, u8) {
    match e.kind {
        ScheduledKind::NoteOff { pitch, .. } => (0, pitch),
        ScheduledKind::NoteOn { pitch, .. } => (1, pitch),
    }
}
