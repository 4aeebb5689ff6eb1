//! Canonical document JSON and static SVG rendering.
//!
//! # Document JSON, schema version 1
//!
//! A single compact JSON object followed by a newline. Keys appear in the order listed, every
//! float is written with exactly six decimals, and collections are arrays in document order,
//! so identical inputs always give identical bytes.
//!
//! ```text
//! schemaVersion   1
//! manifest        [{path, name, type}]                 manifest echo, in order
//! durationSec     float
//! viewport        {timeStart, timeEnd, pitchMin, pitchMax}
//! audio           null | {layerId, sampleRate, durationSec}
//! layers          [{id, name, kind, color "#RRGGBBAA", visible, sustainVisible, sourcePath}]
//! notes           [{layerId, notes: [{pitch, onsetSec, offsetSec, velocity, track, channel}]}]
//! pedal           [{layerId, spans: [{startSec, endSec, track, channel}]}]
//! reports         [{refLayer, estLayer, tolerance, pairs [[ref, est]], missedRef, extraEst, metrics}]
//! ```
//!
//! `tolerance` is `{onsetTolSec, requireExactPitch, offsetEnabled, offsetRatio, offsetMinTolSec}`
//! and `metrics` is `{precision, recall, f1, matchedCount, refCount, estCount}`. Reports are
//! ordered by the document position of their reference layer, then estimate layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::matching::{
    compute_metrics, DiffReport, HighlightClass, HighlightMap, MatchTolerance, Metrics,
};
use crate::roll::{
    AudioInfo, LayerKind, Manifest, ManifestEntry, Rgba, RollDocument, RollError, TrackLayer,
    Viewport,
};
use crate::smf::{NoteEvent, PedalSpan};
use crate::wave::{peaks_for_window, Waveform};

pub const SCHEMA_VERSION: u32 = 1;
/// Smallest accepted render width or height, in pixels.
pub const MIN_RENDER_PX: u32 = 16;

const NOTE_HEIGHT_FRACTION: f64 = 0.9;
const MAX_SECOND_GRIDLINES: f64 = 200.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExportError {
    #[error("report references unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("report for {ref_layer:?} vs {est_layer:?} does not fit the layers' notes")]
    ReportMismatch {
        ref_layer: String,
        est_layer: String,
    },
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid document JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Document(#[from] RollError),
    #[error("render size {width}x{height} is below the {MIN_RENDER_PX} px minimum")]
    RenderSize { width: u32, height: u32 },
}

/// A diff between two layers of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub ref_layer: String,
    pub est_layer: String,
    pub report: DiffReport,
}

impl LayerReport {
    pub fn metrics(&self) -> Metrics {
        compute_metrics(&self.report)
    }
}

/// A float that serializes with exactly six decimals.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Fixed6(f64);

/// Six-decimal text form used throughout the JSON outputs.
pub fn fixed6(value: f64) -> String {
    let text = format!("{:.6}", if value.is_finite() { value } else { 0.0 });
    if text == "-0.000000" {
        "0.000000".to_string()
    } else {
        text
    }
}

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawValue::from_string(fixed6(self.0))
            .map_err(S::Error::custom)?
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Fixed6 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        if v.is_finite() {
            Ok(Fixed6(v))
        } else {
            Err(D::Error::custom("non-finite number"))
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct DocumentJson {
    schema_version: u32,
    manifest: Vec<ManifestJson>,
    duration_sec: Fixed6,
    viewport: ViewportJson,
    audio: Option<AudioJson>,
    layers: Vec<LayerJson>,
    notes: Vec<LayerNotesJson>,
    pedal: Vec<LayerPedalJson>,
    reports: Vec<ReportJson>,
}

#[derive(Serialize, Deserialize)]
struct ManifestJson {
    path: String,
    name: String,
    #[serde(rename = "type")]
    kind: LayerKind,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ViewportJson {
    time_start: Fixed6,
    time_end: Fixed6,
    pitch_min: u8,
    pitch_max: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AudioJson {
    layer_id: String,
    sample_rate: u32,
    duration_sec: Fixed6,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct LayerJson {
    id: String,
    name: String,
    kind: LayerKind,
    color: String,
    visible: bool,
    sustain_visible: bool,
    source_path: String,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct LayerNotesJson {
    layer_id: String,
    notes: Vec<NoteJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct NoteJson {
    pitch: u8,
    onset_sec: Fixed6,
    offset_sec: Fixed6,
    velocity: u8,
    track: usize,
    channel: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct LayerPedalJson {
    layer_id: String,
    spans: Vec<PedalJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PedalJson {
    start_sec: Fixed6,
    end_sec: Fixed6,
    track: usize,
    channel: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ToleranceJson {
    onset_tol_sec: Fixed6,
    require_exact_pitch: bool,
    offset_enabled: bool,
    offset_ratio: Fixed6,
    offset_min_tol_sec: Fixed6,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct MetricsJson {
    precision: Fixed6,
    recall: Fixed6,
    f1: Fixed6,
    matched_count: usize,
    ref_count: usize,
    est_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ReportJson {
    ref_layer: String,
    est_layer: String,
    tolerance: ToleranceJson,
    pairs: Vec<(usize, usize)>,
    missed_ref: Vec<usize>,
    extra_est: Vec<usize>,
    metrics: MetricsJson,
}

fn check_report(doc: &RollDocument, r: &LayerReport) -> Result<(usize, usize), ExportError> {
    let position = |id: &str| {
        doc.layers()
            .iter()
            .position(|l| l.id == id)
            .ok_or_else(|| ExportError::UnknownLayer(id.to_string()))
    };
    let positions = (position(&r.ref_layer)?, position(&r.est_layer)?);
    let (ref_len, est_len) = (doc.notes(&r.ref_layer).len(), doc.notes(&r.est_layer).len());
    let fits = r.report.ref_count() == ref_len
        && r.report.est_count() == est_len
        && r.report
            .pairs
            .iter()
            .all(|&(a, b)| a < ref_len && b < est_len)
        && r.report.missed_ref.iter().all(|&a| a < ref_len)
        && r.report.extra_est.iter().all(|&b| b < est_len);
    if !fits {
        return Err(ExportError::ReportMismatch {
            ref_layer: r.ref_layer.clone(),
            est_layer: r.est_layer.clone(),
        });
    }
    Ok(positions)
}

/// Serializes the document and its diff reports to canonical JSON.
pub fn export_document_json(
    doc: &RollDocument,
    reports: &[LayerReport],
) -> Result<String, ExportError> {
    let mut ordered = Vec::with_capacity(reports.len());
    for r in reports {
        ordered.push((check_report(doc, r)?, r));
    }
    ordered.sort_by_key(|(key, _)| *key);

    let midi_layers = || doc.layers().iter().filter(|l| l.kind == LayerKind::Midi);
    let audio_layer = doc.layers().iter().find(|l| l.kind == LayerKind::Audio);
    let v = doc.viewport();

    let json = DocumentJson {
        schema_version: SCHEMA_VERSION,
        manifest: doc
            .manifest()
            .entries
            .iter()
            .map(|e| ManifestJson {
                path: e.path.clone(),
                name: e.name.clone(),
                kind: e.kind,
            })
            .collect(),
        duration_sec: Fixed6(doc.duration_sec()),
        viewport: ViewportJson {
            time_start: Fixed6(v.time_start),
            time_end: Fixed6(v.time_end),
            pitch_min: v.pitch_min,
            pitch_max: v.pitch_max,
        },
        audio: audio_layer.zip(doc.audio()).map(|(layer, info)| AudioJson {
            layer_id: layer.id.clone(),
            sample_rate: info.sample_rate,
            duration_sec: Fixed6(info.duration_sec),
        }),
        layers: doc
            .layers()
            .iter()
            .map(|l| LayerJson {
                id: l.id.clone(),
                name: l.name.clone(),
                kind: l.kind,
                color: l.color.to_string(),
                visible: l.visible,
                sustain_visible: l.sustain_visible,
                source_path: l.source_path.clone(),
            })
            .collect(),
        notes: midi_layers()
            .map(|l| LayerNotesJson {
                layer_id: l.id.clone(),
                notes: doc
                    .notes(&l.id)
                    .iter()
                    .map(|n| NoteJson {
                        pitch: n.pitch,
                        onset_sec: Fixed6(n.onset_sec),
                        offset_sec: Fixed6(n.offset_sec),
                        velocity: n.velocity,
                        track: n.track_index,
                        channel: n.channel,
                    })
                    .collect(),
            })
            .collect(),
        pedal: midi_layers()
            .map(|l| LayerPedalJson {
                layer_id: l.id.clone(),
                spans: doc
                    .pedal(&l.id)
                    .iter()
                    .map(|p| PedalJson {
                        start_sec: Fixed6(p.start_sec),
                        end_sec: Fixed6(p.end_sec),
                        track: p.track_index,
                        channel: p.channel,
                    })
                    .collect(),
            })
            .collect(),
        reports: ordered.into_iter().map(|(_, r)| report_json(r)).collect(),
    };

    let mut text = serde_json::to_string(&json).map_err(|e| ExportError::Json(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn report_json(r: &LayerReport) -> ReportJson {
    let t = &r.report.tolerance;
    let m = r.metrics();
    ReportJson {
        ref_layer: r.ref_layer.clone(),
        est_layer: r.est_layer.clone(),
        tolerance: ToleranceJson {
            onset_tol_sec: Fixed6(t.onset_tol_sec),
            require_exact_pitch: t.require_exact_pitch,
            offset_enabled: t.offset_enabled,
            offset_ratio: Fixed6(t.offset_ratio),
            offset_min_tol_sec: Fixed6(t.offset_min_tol_sec),
        },
        pairs: r.report.pairs.clone(),
        missed_ref: r.report.missed_ref.clone(),
        extra_est: r.report.extra_est.clone(),
        metrics: MetricsJson {
            precision: Fixed6(m.precision),
            recall: Fixed6(m.recall),
            f1: Fixed6(m.f1),
            matched_count: m.matched_count,
            ref_count: m.ref_count,
            est_count: m.est_count,
        },
    }
}

/// Reads document JSON back. The peak pyramid is not part of the document JSON, so the
/// result has none even when the original had one.
pub fn import_document_json(text: &str) -> Result<(RollDocument, Vec<LayerReport>), ExportError> {
    let json: DocumentJson =
        serde_json::from_str(text).map_err(|e| ExportError::Json(e.to_string()))?;
    if json.schema_version != SCHEMA_VERSION {
        return Err(ExportError::SchemaVersion(json.schema_version));
    }
    let manifest = Manifest {
        entries: json
            .manifest
            .into_iter()
            .map(|e| ManifestEntry {
                path: e.path,
                name: e.name,
                kind: e.kind,
            })
            .collect(),
    };
    let layers = json
        .layers
        .into_iter()
        .map(|l| {
            Ok(TrackLayer {
                color: l.color.parse::<Rgba>()?,
                id: l.id,
                name: l.name,
                kind: l.kind,
                visible: l.visible,
                sustain_visible: l.sustain_visible,
                source_path: l.source_path,
            })
        })
        .collect::<Result<Vec<_>, RollError>>()?;
    let notes: BTreeMap<String, Vec<NoteEvent>> = json
        .notes
        .into_iter()
        .map(|l| {
            let notes = l
                .notes
                .into_iter()
                .map(|n| NoteEvent {
                    pitch: n.pitch,
                    onset_sec: n.onset_sec.0,
                    offset_sec: n.offset_sec.0,
                    velocity: n.velocity,
                    track_index: n.track,
                    channel: n.channel,
                })
                .collect();
            (l.layer_id, notes)
        })
        .collect();
    let pedal: BTreeMap<String, Vec<PedalSpan>> = json
        .pedal
        .into_iter()
        .map(|l| {
            let spans = l
                .spans
                .into_iter()
                .map(|p| PedalSpan {
                    start_sec: p.start_sec.0,
                    end_sec: p.end_sec.0,
                    track_index: p.track,
                    channel: p.channel,
                })
                .collect();
            (l.layer_id, spans)
        })
        .collect();
    let audio = json.audio.map(|a| AudioInfo {
        sample_rate: a.sample_rate,
        duration_sec: a.duration_sec.0,
    });
    let viewport = Viewport {
        time_start: json.viewport.time_start.0,
        time_end: json.viewport.time_end.0,
        pitch_min: json.viewport.pitch_min,
        pitch_max: json.viewport.pitch_max,
    };
    let doc =
        RollDocument::from_parts(manifest, layers, notes, pedal, audio, None, Some(viewport))?;

    let reports = json
        .reports
        .into_iter()
        .map(|r| LayerReport {
            ref_layer: r.ref_layer,
            est_layer: r.est_layer,
            report: DiffReport {
                pairs: r.pairs,
                missed_ref: r.missed_ref,
                extra_est: r.extra_est,
                tolerance: MatchTolerance {
                    onset_tol_sec: r.tolerance.onset_tol_sec.0,
                    require_exact_pitch: r.tolerance.require_exact_pitch,
                    offset_enabled: r.tolerance.offset_enabled,
                    offset_ratio: r.tolerance.offset_ratio.0,
                    offset_min_tol_sec: r.tolerance.offset_min_tol_sec.0,
                },
            },
        })
        .collect::<Vec<_>>();
    for r in &reports {
        check_report(&doc, r)?;
    }
    Ok((doc, reports))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PeaksJson {
    sample_rate: u32,
    channel_count: usize,
    duration_sec: Fixed6,
    sample_count: usize,
    levels: Vec<PeakLevelJson>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PeakLevelJson {
    bucket_size: usize,
    min: Vec<Fixed6>,
    max: Vec<Fixed6>,
}

/// Peak pyramid as JSON: `{sampleRate, channelCount, durationSec, sampleCount,
/// levels: [{bucketSize, min: [..], max: [..]}]}`, finest level first, six decimals.
pub fn export_peaks_json(wave: &Waveform) -> String {
    let json = PeaksJson {
        sample_rate: wave.sample_rate,
        channel_count: wave.channel_count,
        duration_sec: Fixed6(wave.duration_sec),
        sample_count: wave.peaks.sample_count,
        levels: wave
            .peaks
            .levels
            .iter()
            .map(|level| PeakLevelJson {
                bucket_size: level.bucket_size,
                min: level
                    .buckets
                    .iter()
                    .map(|b| Fixed6(f64::from(b.0)))
                    .collect(),
                max: level
                    .buckets
                    .iter()
                    .map(|b| Fixed6(f64::from(b.1)))
                    .collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&json).expect("peaks serialize to JSON");
    text.push('\n');
    text
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub width_px: u32,
    pub height_px: u32,
    pub show_waveform: bool,
    pub show_pedal: bool,
    pub show_playhead: bool,
    pub playhead_sec: Option<f64>,
    pub highlight: Option<HighlightMap>,
}

impl RenderOptions {
    pub fn new(width_px: u32, height_px: u32) -> Self {
        Self {
            width_px,
            height_px,
            show_waveform: true,
            show_pedal: true,
            show_playhead: false,
            playhead_sec: None,
            highlight: None,
        }
    }
}

/// Compact decimal for SVG attributes: at most three decimals, no trailing zeros.
fn num(value: f64) -> String {
    let text = format!("{value:.3}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if text == "-0" {
        "0".to_string()
    } else {
        text.to_string()
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn highlight_style(class: HighlightClass) -> &'static str {
    match class {
        HighlightClass::Matched => {
            r##" stroke="#000000" stroke-width="2" data-highlight="matched""##
        }
        HighlightClass::Missed => {
            r##" stroke="#000000" stroke-width="1.5" stroke-dasharray="4 2" data-highlight="missed""##
        }
        HighlightClass::Extra => {
            r##" stroke="#000000" stroke-width="1.5" stroke-dasharray="1 2" data-highlight="extra""##
        }
        HighlightClass::Neutral => "",
    }
}

/// Renders the visible layers inside the document viewport as an SVG 1.1 image.
///
/// Time maps linearly onto the width and each pitch of the viewport gets one row of the
/// height, highest pitch at the top. Notes are clipped to the viewport and at least 1 px wide.
/// Layers paint in document order, so later layers sit on top.
pub fn render_svg(doc: &RollDocument, opts: &RenderOptions) -> Result<String, ExportError> {
    let (w, h) = (opts.width_px, opts.height_px);
    if w < MIN_RENDER_PX || h < MIN_RENDER_PX {
        return Err(ExportError::RenderSize {
            width: w,
            height: h,
        });
    }
    let (wf, hf) = (f64::from(w), f64::from(h));
    let v = doc.viewport();
    let px_per_sec = wf / v.duration();
    let row = hf / f64::from(v.rows());
    let x_of = |t: f64| (t - v.time_start) * px_per_sec;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        svg,
        r#"<defs><clipPath id="roll-clip"><rect x="0" y="0" width="{w}" height="{h}"/></clipPath></defs>"#
    );
    let _ = writeln!(
        svg,
        r##"<rect class="background" x="0" y="0" width="{w}" height="{h}" fill="#FFFFFF"/>"##
    );

    // Grid: a line under every C row, and one per second when that stays readable.
    svg.push_str(
        r##"<g class="grid" clip-path="url(#roll-clip)" stroke="#DDDDDD" stroke-width="1">"##,
    );
    svg.push('\n');
    for pitch in (v.pitch_min..=v.pitch_max).filter(|p| p % 12 == 0) {
        let y = num(f64::from(v.pitch_max - pitch + 1) * row);
        let _ = writeln!(svg, r#"<line x1="0" y1="{y}" x2="{w}" y2="{y}"/>"#);
    }
    if v.duration() <= MAX_SECOND_GRIDLINES {
        let mut second = v.time_start.ceil();
        while second <= v.time_end {
            let x = num(x_of(second));
            let _ = writeln!(svg, r#"<line x1="{x}" y1="0" x2="{x}" y2="{h}"/>"#);
            second += 1.0;
        }
    }
    svg.push_str("</g>\n");

    if opts.show_waveform {
        if let (Some(pyramid), Some(audio)) = (doc.waveform(), doc.audio()) {
            let columns = peaks_for_window(
                pyramid,
                audio.sample_rate,
                v.time_start,
                v.time_end,
                w as usize,
            );
            let mid = hf / 2.0;
            let amp = hf / 2.0 * 0.9;
            let line = |pick: fn(&(f32, f32)) -> f32| {
                columns
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let y = (mid - f64::from(pick(c)) * amp).clamp(0.0, hf);
                        format!("{},{}", num(i as f64 + 0.5), num(y))
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            svg.push_str(
                r##"<g class="waveform" clip-path="url(#roll-clip)" fill="none" stroke="#808080" stroke-opacity="0.5" stroke-width="1">"##,
            );
            svg.push('\n');
            let _ = writeln!(
                svg,
                r#"<polyline class="wave-max" points="{}"/>"#,
                line(|c| c.1)
            );
            let _ = writeln!(
                svg,
                r#"<polyline class="wave-min" points="{}"/>"#,
                line(|c| c.0)
            );
            svg.push_str("</g>\n");
        }
    }

    for layer in doc
        .layers()
        .iter()
        .filter(|l| l.visible && l.kind == LayerKind::Midi)
    {
        let fill = layer.color.hex_rgb();
        let opacity = num(layer.color.opacity());
        let _ = writeln!(
            svg,
            r#"<g class="layer" data-layer="{}" data-name="{}" clip-path="url(#roll-clip)">"#,
            escape(&layer.id),
            escape(&layer.name)
        );

        if opts.show_pedal && layer.sustain_visible {
            for span in doc.pedal(&layer.id) {
                if span.end_sec <= v.time_start || span.start_sec >= v.time_end {
                    continue;
                }
                let x0 = x_of(span.start_sec).max(0.0);
                let x1 = x_of(span.end_sec).min(wf);
                let _ = writeln!(
                    svg,
                    r#"<rect class="pedal" x="{}" y="0" width="{}" height="{h}" fill="{fill}" fill-opacity="0.12"/>"#,
                    num(x0),
                    num((x1 - x0).max(1.0))
                );
            }
        }

        for (index, note) in doc.notes(&layer.id).iter().enumerate() {
            if note.offset_sec <= v.time_start
                || note.onset_sec >= v.time_end
                || note.pitch < v.pitch_min
                || note.pitch > v.pitch_max
            {
                continue;
            }
            let mut x0 = x_of(note.onset_sec).max(0.0);
            let x1 = x_of(note.offset_sec).min(wf);
            let width = (x1 - x0).max(1.0);
            if x0 + width > wf {
                x0 = wf - width;
            }
            let y = f64::from(v.pitch_max - note.pitch) * row;
            let style = opts
                .highlight
                .as_ref()
                .map_or("", |m| highlight_style(m.get(&layer.id, index)));
            let _ = writeln!(
                svg,
                r#"<rect class="note" x="{}" y="{}" width="{}" height="{}" fill="{fill}" fill-opacity="{opacity}"{style}/>"#,
                num(x0),
                num(y),
                num(width),
                num(row * NOTE_HEIGHT_FRACTION)
            );
        }
        svg.push_str("</g>\n");
    }

    if opts.show_playhead {
        if let Some(t) = opts
            .playhead_sec
            .filter(|t| (v.time_start..=v.time_end).contains(t))
        {
            let x = num(x_of(t));
            let _ = writeln!(
                svg,
                r##"<line class="playhead" x1="{x}" y1="0" x2="{x}" y2="{h}" stroke="#E00000" stroke-width="2"/>"##
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{classify_diff, highlight_assignment, HighlightMode};
    use crate::roll::{build_document, load_manifest, ParsedSource};
    use crate::wave::PcmAudio;

    fn note(pitch: u8, onset: f64, offset: f64) -> NoteEvent {
        NoteEvent {
            pitch,
            onset_sec: onset,
            offset_sec: offset,
            velocity: 90,
            track_index: 0,
            channel: 0,
        }
    }

    fn midi(notes: Vec<NoteEvent>) -> ParsedSource {
        ParsedSource::Midi {
            notes,
            pedal: vec![],
        }
    }

    fn sample_pair_doc() -> (RollDocument, LayerReport) {
        let reference = vec![
            note(60, 0.00, 0.50),
            note(60, 1.00, 1.50),
            note(64, 2.00, 2.40),
        ];
        let estimate = vec![
            note(60, 0.03, 0.55),
            note(60, 1.20, 1.60),
            note(64, 2.01, 2.38),
            note(67, 3.00, 3.20),
        ];
        let report = classify_diff(&reference, &estimate, &MatchTolerance::default());
        let manifest =
            load_manifest(r#"[{"path":"ref.mid","type":"midi"},{"path":"est.mid","type":"midi"}]"#)
                .unwrap();
        let doc = build_document(&manifest, vec![midi(reference), midi(estimate)]).unwrap();
        (
            doc,
            LayerReport {
                ref_layer: "track-0".into(),
                est_layer: "track-1".into(),
                report,
            },
        )
    }

    fn roll_doc(notes: Vec<NoteEvent>) -> RollDocument {
        let manifest = load_manifest(r#"[{"path":"a.mid","type":"midi"}]"#).unwrap();
        build_document(&manifest, vec![midi(notes)]).unwrap()
    }

    fn note_rects(svg: &str) -> Vec<&str> {
        svg.lines()
            .filter(|l| l.contains(r#"class="note""#))
            .collect()
    }

    fn attr(line: &str, name: &str) -> f64 {
        let key = format!(" {name}=\"");
        let start = line.find(&key).unwrap() + key.len();
        let end = start + line[start..].find('"').unwrap();
        line[start..end].parse().unwrap()
    }

    #[test]
    fn fixed6_format() {
        assert_eq!(fixed6(0.5), "0.500000");
        assert_eq!(fixed6(2.0 / 3.0), "0.666667");
        assert_eq!(fixed6(-0.0), "0.000000");
        assert_eq!(fixed6(-1e-9), "0.000000");
        assert_eq!(fixed6(f64::NAN), "0.000000");
    }

    #[test]
    fn empty_document_json() {
        let doc = build_document(&Manifest::default(), vec![]).unwrap();
        let json = export_document_json(&doc, &[]).unwrap();
        assert_eq!(
            json,
            concat!(
                r#"{"schemaVersion":1,"manifest":[],"durationSec":0.000000,"#,
                r#""viewport":{"timeStart":0.000000,"timeEnd":0.001000,"pitchMin":21,"pitchMax":108},"#,
                r#""audio":null,"layers":[],"notes":[],"pedal":[],"reports":[]}"#,
                "\n"
            )
        );
    }

    #[test]
    fn sample_pair_json() {
        let (doc, report) = sample_pair_doc();
        let json = export_document_json(&doc, &[report]).unwrap();
        assert!(json.contains(r#""pairs":[[0,0],[2,2]]"#));
        assert!(json.contains(r#""missedRef":[1]"#));
        assert!(json.contains(r#""extraEst":[1,3]"#));
        assert!(json.contains(
            r#""metrics":{"precision":0.500000,"recall":0.666667,"f1":0.571429,"matchedCount":2,"refCount":3,"estCount":4}"#
        ));
        assert!(json.contains(r#""onsetSec":0.030000"#));
        serde_json::from_str::<serde_json::Value>(&json).unwrap();
    }

    #[test]
    fn export_import_fixpoint() {
        let (doc, report) = sample_pair_doc();
        let doc = doc
            .set_layer_color("track-1", Rgba::new(1, 2, 3, 4))
            .unwrap()
            .set_layer_visibility("track-0", false)
            .unwrap();
        let first = export_document_json(&doc, std::slice::from_ref(&report)).unwrap();
        let (imported, reports) = import_document_json(&first).unwrap();
        assert_eq!(imported, doc);
        assert_eq!(reports, vec![report]);
        assert_eq!(export_document_json(&imported, &reports).unwrap(), first);
    }

    #[test]
    fn report_order_is_imposed() {
        let (doc, report) = sample_pair_doc();
        let self_ref = LayerReport {
            ref_layer: "track-0".into(),
            est_layer: "track-0".into(),
            report: classify_diff(
                doc.notes("track-0"),
                doc.notes("track-0"),
                &MatchTolerance::default(),
            ),
        };
        let a = export_document_json(&doc, &[report.clone(), self_ref.clone()]).unwrap();
        let b = export_document_json(&doc, &[self_ref, report]).unwrap();
        assert_eq!(a, b);
        assert!(a.find(r#""estLayer":"track-0""#) < a.find(r#""estLayer":"track-1""#));
    }

    #[test]
    fn export_rejects_bad_reports() {
        let (doc, mut report) = sample_pair_doc();
        report.est_layer = "ghost".into();
        assert_eq!(
            export_document_json(&doc, &[report.clone()]),
            Err(ExportError::UnknownLayer("ghost".into()))
        );
        report.est_layer = "track-0".into();
        assert!(matches!(
            export_document_json(&doc, &[report]),
            Err(ExportError::ReportMismatch { .. })
        ));
    }

    #[test]
    fn import_errors() {
        assert!(matches!(
            import_document_json("nope"),
            Err(ExportError::Json(_))
        ));
        let doc = build_document(&Manifest::default(), vec![]).unwrap();
        let json = export_document_json(&doc, &[])
            .unwrap()
            .replace(r#""schemaVersion":1"#, r#""schemaVersion":2"#);
        assert_eq!(
            import_document_json(&json),
            Err(ExportError::SchemaVersion(2))
        );
    }

    #[test]
    fn note_rectangle_geometry() {
        let doc = roll_doc(vec![note(60, 0.5, 1.0)]).set_viewport(Viewport {
            time_start: 0.0,
            time_end: 10.0,
            pitch_min: 21,
            pitch_max: 108,
        });
        // Document only lasts 1 s; the viewport end clamps to it. Use a longer document.
        assert_eq!(doc.viewport().time_end, 1.0);

        let doc = roll_doc(vec![note(60, 0.5, 1.0), note(108, 9.0, 10.0)]).set_viewport(Viewport {
            time_start: 0.0,
            time_end: 10.0,
            pitch_min: 21,
            pitch_max: 108,
        });
        let svg = render_svg(&doc, &RenderOptions::new(1000, 880)).unwrap();
        let rects = note_rects(&svg);
        assert_eq!(rects.len(), 2);
        let rect = rects[0];
        assert_eq!(attr(rect, "x"), 50.0);
        assert_eq!(attr(rect, "width"), 50.0);
        // 88 rows of 10 px; pitch 60 is 48 rows below 108.
        assert_eq!(attr(rect, "y"), 480.0);
        assert_eq!(attr(rect, "height"), 9.0);
    }

    #[test]
    fn color_attributes() {
        let doc = roll_doc(vec![note(60, 0.0, 1.0)])
            .set_layer_color("track-0", Rgba::new(255, 0, 0, 255))
            .unwrap();
        let svg = render_svg(&doc, &RenderOptions::new(100, 100)).unwrap();
        let rect = note_rects(&svg)[0];
        assert!(rect.contains(r##"fill="#FF0000""##));
        assert_eq!(attr(rect, "fill-opacity"), 1.0);
    }

    #[test]
    fn hidden_layer_draws_nothing() {
        let doc = roll_doc(vec![note(60, 0.0, 1.0), note(62, 0.5, 2.0)]);
        let hidden = doc.set_layer_visibility("track-0", false).unwrap();
        let svg = render_svg(&hidden, &RenderOptions::new(200, 100)).unwrap();
        assert!(note_rects(&svg).is_empty());
        assert!(!svg.contains("data-layer=\"track-0\""));
        let shown = render_svg(
            &hidden.set_layer_visibility("track-0", true).unwrap(),
            &RenderOptions::new(200, 100),
        )
        .unwrap();
        assert_eq!(note_rects(&shown).len(), 2);
    }

    #[test]
    fn clipping_and_minimum_width() {
        let notes = vec![
            note(60, 0.0, 10.0),  // spans the window
            note(61, 4.0, 4.001), // very short
            note(62, 9.0, 9.5),   // after the window
            note(90, 3.0, 4.0),   // above the pitch range
            note(62, 4.999, 5.5), // starts just before the end
        ];
        let doc = roll_doc(notes).set_viewport(Viewport {
            time_start: 2.0,
            time_end: 5.0,
            pitch_min: 50,
            pitch_max: 70,
        });
        let svg = render_svg(&doc, &RenderOptions::new(300, 210)).unwrap();
        let rects = note_rects(&svg);
        assert_eq!(rects.len(), 3);
        for rect in &rects {
            let (x, width) = (attr(rect, "x"), attr(rect, "width"));
            assert!(x >= 0.0 && x + width <= 300.0 + 1e-9, "{rect}");
            assert!(width >= 1.0);
        }
        assert_eq!((attr(rects[0], "x"), attr(rects[0], "width")), (0.0, 300.0));
        assert_eq!(attr(rects[1], "width"), 1.0);
        assert_eq!((attr(rects[2], "x"), attr(rects[2], "width")), (299.0, 1.0));
    }

    #[test]
    fn size_validation() {
        let doc = roll_doc(vec![]);
        assert_eq!(
            render_svg(&doc, &RenderOptions::new(8, 100)),
            Err(ExportError::RenderSize {
                width: 8,
                height: 100
            })
        );
        assert!(render_svg(&doc, &RenderOptions::new(16, 16)).is_ok());
    }

    #[test]
    fn highlights_become_strokes() {
        let (doc, report) = sample_pair_doc();
        let map = highlight_assignment(
            &doc,
            "track-0",
            "track-1",
            &report.report,
            HighlightMode::Full,
        )
        .unwrap();
        let opts = RenderOptions {
            highlight: Some(map),
            ..RenderOptions::new(400, 200)
        };
        let svg = render_svg(&doc, &opts).unwrap();
        assert_eq!(svg.matches(r#"data-highlight="matched""#).count(), 4);
        assert_eq!(svg.matches(r#"data-highlight="missed""#).count(), 1);
        assert_eq!(svg.matches(r#"data-highlight="extra""#).count(), 2);
        assert!(svg.contains(r#"stroke-dasharray="4 2""#));
    }

    #[test]
    fn waveform_pedal_and_playhead() {
        let manifest =
            load_manifest(r#"[{"path":"a.wav","type":"audio"},{"path":"a.mid","type":"midi"}]"#)
                .unwrap();
        let samples: Vec<f32> = (0..8000).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        let wave = Waveform::from_pcm(&PcmAudio::new(4000, vec![samples]).unwrap());
        let pedal = vec![PedalSpan {
            start_sec: 0.5,
            end_sec: 1.5,
            track_index: 0,
            channel: 0,
        }];
        let doc = build_document(
            &manifest,
            vec![
                ParsedSource::Audio(wave),
                ParsedSource::Midi {
                    notes: vec![note(60, 0.0, 1.0)],
                    pedal,
                },
            ],
        )
        .unwrap();
        let opts = RenderOptions {
            show_playhead: true,
            playhead_sec: Some(1.0),
            ..RenderOptions::new(100, 50)
        };
        let svg = render_svg(&doc, &opts).unwrap();
        assert!(svg.contains(r#"class="wave-max""#));
        assert_eq!(svg.matches(r#"class="pedal""#).count(), 1);
        assert!(svg.contains(r#"<line class="playhead" x1="50""#));

        let bare = RenderOptions {
            show_waveform: false,
            show_pedal: false,
            ..RenderOptions::new(100, 50)
        };
        let svg = render_svg(&doc, &bare).unwrap();
        assert!(!svg.contains("wave-max") && !svg.contains(r#"class="pedal""#));
        let no_sustain = doc.set_sustain_visibility("track-1", false).unwrap();
        assert!(!render_svg(&no_sustain, &RenderOptions::new(100, 50))
            .unwrap()
            .contains(r#"class="pedal""#));
    }

    #[test]
    fn names_are_escaped() {
        let manifest =
            load_manifest(r#"[{"path":"a.mid","name":"<Tom & \"Jerry\">","type":"midi"}]"#)
                .unwrap();
        let doc = build_document(&manifest, vec![midi(vec![])]).unwrap();
        let svg = render_svg(&doc, &RenderOptions::new(100, 100)).unwrap();
        assert!(svg.contains("data-name=\"&lt;Tom &amp; &quot;Jerry&quot;&gt;\""));
    }

    #[test]
    fn silent_peaks_json() {
        let wave = Waveform::from_pcm(&PcmAudio::new(1000, vec![vec![0.0; 1000]]).unwrap());
        let json = export_peaks_json(&wave);
        assert!(json.starts_with(r#"{"sampleRate":1000,"channelCount":1,"durationSec":1.000000,"sampleCount":1000,"levels":[{"bucketSize":256,"min":[0.000000,0.000000,0.000000,0.000000],"max":[0.000000,"#));
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for level in value["levels"].as_array().unwrap() {
            for key in ["min", "max"] {
                assert!(level[key]
                    .as_array()
                    .unwrap()
                    .iter()
                    .all(|v| v.as_f64() == Some(0.0)));
            }
        }
    }

    #[test]
    fn render_is_deterministic() {
        let (doc, _) = sample_pair_doc();
        let opts = RenderOptions::new(640, 320);
        assert_eq!(
            render_svg(&doc, &opts).unwrap(),
            render_svg(&doc, &opts).unwrap()
        );
    }
}
