//! Comparison engine for layered MIDI piano rolls.
//!
//! The crate is organised bottom-up:
//!
//! * [`smf`] decodes Standard MIDI Files into timed events, notes and sustain spans.
//! * [`timebase`] maps ticks to seconds under a piecewise-constant tempo map.
//! * [`roll`] holds the layered document (tracks, colors, visibility, viewport) and the
//!   JSON manifest that describes it.
//! * [`matching`] pairs reference and estimate notes under a tolerance and derives
//!   precision/recall/F1 plus per-note highlight classes.
//! * [`transport`] is the playback clock (play/pause/stop/seek, A-B loop, per-track mix).
//! * [`wave`] decodes WAV audio and builds min/max peak pyramids.
//! * [`export`] writes canonical document JSON and static SVG renderings.

pub mod export;
pub mod matching;
pub mod roll;
pub mod smf;
pub mod timebase;
pub mod transport;
pub mod wave;

pub use export::{
    export_document_json, export_peaks_json, import_document_json, render_svg, ExportError,
    LayerReport, RenderOptions,
};
pub use matching::{
    candidate_hits, classify_diff, compute_metrics, highlight_assignment, max_bipartite_match,
    DiffReport, HighlightClass, HighlightMap, HighlightMode, HitMatrix, MatchError, MatchTolerance,
    Metrics,
};
pub use roll::{
    build_document, load_manifest, LayerKind, Manifest, ManifestEntry, ParsedSource, Rgba,
    RollDocument, RollError, TrackLayer, Viewport,
};
pub use smf::{
    decode_vlq, encode_vlq, extract_notes, extract_notes_with_report, extract_pedal, parse_smf,
    EventKind, MidiFile, NoteEvent, NoteReport, PedalSpan, SmfError, TimedEvent,
};
pub use timebase::{TempoMap, TimebaseError};
pub use transport::{
    events_in, ScheduledEvent, TrackMix, TransportError, TransportMode, TransportState,
};
pub use wave::{
    build_peaks, parse_wav, peaks_for_window, PcmAudio, PeakLevel, PeakPyramid, WavError, Waveform,
};
