//! The layered piano-roll document and the manifest that describes its sources.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smf::{NoteEvent, PedalSpan};
use crate::wave::{PeakPyramid, Waveform};

/// Pitch range of an 88-key piano, used when a document has no notes.
pub const PIANO_RANGE: (u8, u8) = (21, 108);
/// Smallest time span a viewport may cover, in seconds.
pub const MIN_VIEW_SECONDS: f64 = 0.001;

const PITCH_PADDING: u8 = 2;

/// Default layer colors, cycled by layer index.
pub const PALETTE: [Rgba; 8] = [
    Rgba::new(0x1F, 0x77, 0xB4, 0xCC),
    Rgba::new(0xFF, 0x7F, 0x0E, 0xCC),
    Rgba::new(0x2C, 0xA0, 0x2C, 0xCC),
    Rgba::new(0xD6, 0x27, 0x28, 0xCC),
    Rgba::new(0x94, 0x67, 0xBD, 0xCC),
    Rgba::new(0x8C, 0x56, 0x4B, 0xCC),
    Rgba::new(0xE3, 0x77, 0xC2, 0xCC),
    Rgba::new(0x17, 0xBE, 0xCF, 0xCC),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RollError {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("manifest entry {index} is missing \"{field}\"")]
    MissingField { index: usize, field: &'static str },
    #[error("manifest entry {index} has unknown type {value:?}")]
    UnknownType { index: usize, value: String },
    #[error("manifest lists more than one audio file")]
    MultipleAudio,
    #[error("expected {expected} parsed sources, got {found}")]
    SourceCount { expected: usize, found: usize },
    #[error("source {index} does not match its manifest type")]
    KindMismatch { index: usize },
    #[error("duplicate layer id {0:?}")]
    DuplicateLayer(String),
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("invalid color {0:?}")]
    InvalidColor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Midi,
    Audio,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Midi => "midi",
            LayerKind::Audio => "audio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgba {
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub a: u8,
}

impl Rgba {
    pub const fn new(r: u8, g: u8, b: u8, a: u8) -> Self {
        Self { r, g, b, a }
    }

    /// `#RRGGBB`, uppercase.
    pub fn hex_rgb(&self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.r, self.g, self.b)
    }

    pub fn opacity(&self) -> f64 {
        f64::from(self.a) / 255.0
    }
}

/// `#RRGGBBAA`, uppercase.
impl fmt::Display for Rgba {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02X}", self.hex_rgb(), self.a)
    }
}

/// Accepts `#RRGGBB` (opaque) or `#RRGGBBAA`.
impl FromStr for Rgba {
    type Err = RollError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || RollError::InvalidColor(s.to_string());
        let hex = s.strip_prefix('#').ok_or_else(err)?;
        if !(hex.len() == 6 || hex.len() == 8) || !hex.is_ascii() {
            return Err(err());
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| err());
        let a = if hex.len() == 8 { byte(6)? } else { 0xFF };
        Ok(Rgba::new(byte(0)?, byte(2)?, byte(4)?, a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackLayer {
    pub id: String,
    pub name: String,
    pub kind: LayerKind,
    pub color: Rgba,
    pub visible: bool,
    pub sustain_visible: bool,
    pub source_path: String,
}

/// Visible window: seconds on the x axis, MIDI pitch (inclusive) on the y axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport {
    pub time_start: f64,
    pub time_end: f64,
    pub pitch_min: u8,
    pub pitch_max: u8,
}

impl Viewport {
    pub fn duration(&self) -> f64 {
        self.time_end - self.time_start
    }

    /// Number of pitch rows shown.
    pub fn rows(&self) -> u32 {
        u32::from(self.pitch_max - self.pitch_min) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub name: String,
    #[serde(rename = "type")]
    pub kind: LayerKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    path: Option<String>,
    name: Option<String>,
    #[serde(rename = "type")]
    kind: Option<String>,
}

/// Parses a JSON array of `{"path", "name", "type"}` objects. `name` defaults to the file stem
/// of `path`; other keys are ignored.
pub fn load_manifest(json: &str) -> Result<Manifest, RollError> {
    let raw: Vec<RawEntry> =
        serde_json::from_str(json).map_err(|e| RollError::Manifest(e.to_string()))?;
    let mut entries = Vec::with_capacity(raw.len());
    for (index, entry) in raw.into_iter().enumerate() {
        let path = entry.path.ok_or(RollError::MissingField {
            index,
            field: "path",
        })?;
        let kind = match entry
            .kind
            .ok_or(RollError::MissingField {
                index,
                field: "type",
            })?
            .as_str()
        {
            "midi" => LayerKind::Midi,
            "audio" => LayerKind::Audio,
            other => {
                return Err(RollError::UnknownType {
                    index,
                    value: other.to_string(),
                })
            }
        };
        let name = entry.name.unwrap_or_else(|| default_name(&path));
        entries.push(ManifestEntry { path, name, kind });
    }
    if entries
        .iter()
        .filter(|e| e.kind == LayerKind::Audio)
        .count()
        > 1
    {
        return Err(RollError::MultipleAudio);
    }
    Ok(Manifest { entries })
}

fn default_name(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(path)
        .to_string()
}

/// Decoded content for one manifest entry.
#[derive(Debug, Clone)]
pub enum ParsedSource {
    Midi {
        notes: Vec<NoteEvent>,
        pedal: Vec<PedalSpan>,
    },
    Audio(Waveform),
}

impl ParsedSource {
    fn kind(&self) -> LayerKind {
        match self {
            ParsedSource::Midi { .. } => LayerKind::Midi,
            ParsedSource::Audio(_) => LayerKind::Audio,
        }
    }
}

/// Length and rate of the document's reference audio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioInfo {
    pub sample_rate: u32,
    pub duration_sec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollDocument {
    manifest: Manifest,
    layers: Vec<TrackLayer>,
    notes: BTreeMap<String, Vec<NoteEvent>>,
    pedal: BTreeMap<String, Vec<PedalSpan>>,
    audio: Option<AudioInfo>,
    waveform: Option<Arc<PeakPyramid>>,
    viewport: Viewport,
    duration_sec: f64,
}

/// Stable identifier of the layer built from manifest entry `index`.
pub fn layer_id(index: usize) -> String {
    format!("track-{index}")
}

/// Builds the layered document: one layer per manifest entry in manifest order, default
/// palette colors, everything visible, viewport spanning the whole document.
pub fn build_document(
    manifest: &Manifest,
    sources: Vec<ParsedSource>,
) -> Result<RollDocument, RollError> {
    if sources.len() != manifest.entries.len() {
        return Err(RollError::SourceCount {
            expected: manifest.entries.len(),
            found: sources.len(),
        });
    }
    let mut layers = Vec::with_capacity(sources.len());
    let mut notes = BTreeMap::new();
    let mut pedal = BTreeMap::new();
    let mut audio = None;
    let mut waveform = None;

    for (index, (entry, source)) in manifest.entries.iter().zip(sources).enumerate() {
        if source.kind() != entry.kind {
            return Err(RollError::KindMismatch { index });
        }
        let id = layer_id(index);
        layers.push(TrackLayer {
            id: id.clone(),
            name: entry.name.clone(),
            kind: entry.kind,
            color: PALETTE[index % PALETTE.len()],
            visible: true,
            sustain_visible: true,
            source_path: entry.path.clone(),
        });
        match source {
            ParsedSource::Midi {
                notes: layer_notes,
                pedal: layer_pedal,
            } => {
                notes.insert(id.clone(), layer_notes);
                pedal.insert(id, layer_pedal);
            }
            ParsedSource::Audio(wave) => {
                if audio.is_some() {
                    return Err(RollError::MultipleAudio);
                }
                audio = Some(AudioInfo {
                    sample_rate: wave.sample_rate,
                    duration_sec: wave.duration_sec,
                });
                waveform = Some(Arc::new(wave.peaks));
            }
        }
    }

    RollDocument::from_parts(
        manifest.clone(),
        layers,
        notes,
        pedal,
        audio,
        waveform,
        None,
    )
}

impl RollDocument {
    /// Assembles a document from its parts, validating layer references. With no explicit
    /// viewport the default (whole duration, note pitch range padded by two rows) is used.
    pub fn from_parts(
        manifest: Manifest,
        layers: Vec<TrackLayer>,
        notes: BTreeMap<String, Vec<NoteEvent>>,
        pedal: BTreeMap<String, Vec<PedalSpan>>,
        audio: Option<AudioInfo>,
        waveform: Option<Arc<PeakPyramid>>,
        viewport: Option<Viewport>,
    ) -> Result<Self, RollError> {
        for (i, layer) in layers.iter().enumerate() {
            if layers[..i].iter().any(|l| l.id == layer.id) {
                return Err(RollError::DuplicateLayer(layer.id.clone()));
            }
        }
        let midi_layer = |id: &String| {
            layers
                .iter()
                .any(|l| &l.id == id && l.kind == LayerKind::Midi)
        };
        if let Some(id) = notes.keys().chain(pedal.keys()).find(|id| !midi_layer(id)) {
            return Err(RollError::UnknownLayer(id.clone()));
        }
        if layers.iter().filter(|l| l.kind == LayerKind::Audio).count() > 1 {
            return Err(RollError::MultipleAudio);
        }

        let note_end = notes.values().flatten().map(|n| n.offset_sec);
        let pedal_end = pedal.values().flatten().map(|p| p.end_sec);
        let audio_end = audio.iter().map(|a| a.duration_sec);
        let duration_sec = note_end
            .chain(pedal_end)
            .chain(audio_end)
            .fold(0.0, f64::max);

        let mut doc = Self {
            manifest,
            layers,
            notes,
            pedal,
            audio,
            waveform,
            viewport: Viewport {
                time_start: 0.0,
                time_end: MIN_VIEW_SECONDS,
                pitch_min: PIANO_RANGE.0,
                pitch_max: PIANO_RANGE.1,
            },
            duration_sec,
        };
        doc.viewport = viewport.unwrap_or_else(|| doc.default_viewport());
        Ok(doc)
    }

    fn default_viewport(&self) -> Viewport {
        let pitches = self.notes.values().flatten().map(|n| n.pitch);
        let (pitch_min, pitch_max) = match (pitches.clone().min(), pitches.max()) {
            (Some(lo), Some(hi)) => (
                lo.saturating_sub(PITCH_PADDING),
                hi.saturating_add(PITCH_PADDING).min(127),
            ),
            _ => PIANO_RANGE,
        };
        let (pitch_min, pitch_max) = if pitch_min == pitch_max {
            widen_pitch(pitch_min)
        } else {
            (pitch_min, pitch_max)
        };
        Viewport {
            time_start: 0.0,
            time_end: self.duration_sec.max(MIN_VIEW_SECONDS),
            pitch_min,
            pitch_max,
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn layers(&self) -> &[TrackLayer] {
        &self.layers
    }

    pub fn layer(&self, id: &str) -> Option<&TrackLayer> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Notes of a MIDI layer; empty for audio or unknown layers.
    pub fn notes(&self, layer_id: &str) -> &[NoteEvent] {
        self.notes.get(layer_id).map_or(&[], Vec::as_slice)
    }

    pub fn pedal(&self, layer_id: &str) -> &[PedalSpan] {
        self.pedal.get(layer_id).map_or(&[], Vec::as_slice)
    }

    pub fn audio(&self) -> Option<&AudioInfo> {
        self.audio.as_ref()
    }

    pub fn waveform(&self) -> Option<&PeakPyramid> {
        self.waveform.as_deref()
    }

    /// The same document without its peak pyramid.
    pub fn without_waveform(&self) -> Self {
        Self {
            waveform: None,
            ..self.clone()
        }
    }

    pub fn viewport(&self) -> &Viewport {
        &self.viewport
    }

    pub fn duration_sec(&self) -> f64 {
        self.duration_sec
    }

    fn with_layer<F: FnOnce(&mut TrackLayer)>(
        &self,
        layer_id: &str,
        update: F,
    ) -> Result<Self, RollError> {
        let mut next = self.clone();
        let layer = next
            .layers
            .iter_mut()
            .find(|l| l.id == layer_id)
            .ok_or_else(|| RollError::UnknownLayer(layer_id.to_string()))?;
        update(layer);
        Ok(next)
    }

    pub fn set_layer_visibility(&self, layer_id: &str, visible: bool) -> Result<Self, RollError> {
        self.with_layer(layer_id, |l| l.visible = visible)
    }

    pub fn set_sustain_visibility(&self, layer_id: &str, visible: bool) -> Result<Self, RollError> {
        self.with_layer(layer_id, |l| l.sustain_visible = visible)
    }

    pub fn set_layer_color(&self, layer_id: &str, color: Rgba) -> Result<Self, RollError> {
        self.with_layer(layer_id, |l| l.color = color)
    }

    /// Zoom/pan. The request is clamped into range, never rejected: the start is at least 0,
    /// the end at most the document duration (or start + 1 ms if that is later), and
    /// degenerate windows grow to 1 ms and one pitch row.
    pub fn set_viewport(&self, requested: Viewport) -> Self {
        let time_start = finite_or(requested.time_start, 0.0).max(0.0);
        let limit = self.duration_sec.max(time_start + MIN_VIEW_SECONDS);
        let mut time_end = finite_or(requested.time_end, limit).min(limit);
        if time_end - time_start < MIN_VIEW_SECONDS {
            time_end = time_start + MIN_VIEW_SECONDS;
        }

        let lo = requested.pitch_min.min(127);
        let hi = requested.pitch_max.min(127);
        let (pitch_min, pitch_max) = match lo.cmp(&hi) {
            std::cmp::Ordering::Less => (lo, hi),
            std::cmp::Ordering::Equal => widen_pitch(lo),
            std::cmp::Ordering::Greater => (hi, lo),
        };

        Self {
            viewport: Viewport {
                time_start,
                time_end,
                pitch_min,
                pitch_max,
            },
            ..self.clone()
        }
    }
}

fn finite_or(value: f64, fallback: f64) -> f64 {
    if value.is_finite() {
        value
    } else {
        fallback
    }
}

fn widen_pitch(pitch: u8) -> (u8, u8) {
    if pitch >= 127 {
        (126, 127)
    } else {
        (pitch, pitch + 1)
    }
}
