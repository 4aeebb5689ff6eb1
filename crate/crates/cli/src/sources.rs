//! Reading manifests and the files they name.

use std::fs;
use std::path::{Path, PathBuf};

use pianodiff_core::{
    build_document, classify_diff, extract_notes_with_report, extract_pedal, load_manifest,
    parse_smf, parse_wav, LayerKind, LayerReport, Manifest, MatchTolerance, NoteEvent, NoteReport,
    ParsedSource, PedalSpan, RollDocument, TempoMap, Waveform,
};

use crate::error::CliError;

pub struct MidiSource {
    pub notes: Vec<NoteEvent>,
    pub pedal: Vec<PedalSpan>,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::input(path, e))
}

pub fn decode_midi(path: &Path, bytes: &[u8]) -> Result<MidiSource, CliError> {
    let file = parse_smf(bytes).map_err(|e| CliError::input(path, e))?;
    let tempo = TempoMap::from_file(&file);
    let (notes, report) = extract_notes_with_report(&file, &tempo);
    let pedal = extract_pedal(&file, &tempo);
    warn_irregular(path, &report);
    Ok(MidiSource { notes, pedal })
}

fn warn_irregular(path: &Path, report: &NoteReport) {
    let counts = [
        (report.orphan_note_offs, "orphan note-off(s) ignored"),
        (
            report.unterminated_notes,
            "unterminated note(s) closed at end of track",
        ),
        (report.zero_length_notes, "zero-length note(s) dropped"),
    ];
    for (count, what) in counts {
        if count > 0 {
            eprintln!("warning: {}: {count} {what}", path.display());
        }
    }
}

pub fn load_midi(path: &Path) -> Result<MidiSource, CliError> {
    decode_midi(path, &read_bytes(path)?)
}

pub fn load_wav(path: &Path) -> Result<Waveform, CliError> {
    let pcm = parse_wav(&read_bytes(path)?).map_err(|e| CliError::input(path, e))?;
    Ok(Waveform::from_pcm(&pcm))
}

/// A manifest with every named file read and decoded.
pub struct Project {
    pub doc: RollDocument,
    /// Raw bytes of each entry keyed by the path as written in the manifest.
    pub files: Vec<(String, Vec<u8>)>,
    pub waveform: Option<Waveform>,
}

/// Loads a manifest file. Entry paths are resolved against the manifest's directory.
pub fn load_project(manifest_path: &Path) -> Result<Project, CliError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| CliError::input(manifest_path, e))?;
    let manifest = load_manifest(&text).map_err(|e| CliError::input(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));

    let mut files = Vec::with_capacity(manifest.entries.len());
    let mut sources = Vec::with_capacity(manifest.entries.len());
    let mut waveform = None;
    for entry in &manifest.entries {
        let path: PathBuf = base.join(&entry.path);
        let bytes = read_bytes(&path)?;
        let source = match entry.kind {
            LayerKind::Midi => {
                let midi = decode_midi(&path, &bytes)?;
                ParsedSource::Midi {
                    notes: midi.notes,
                    pedal: midi.pedal,
                }
            }
            LayerKind::Audio => {
                let pcm = parse_wav(&bytes).map_err(|e| CliError::input(&path, e))?;
                let wave = Waveform::from_pcm(&pcm);
                waveform = Some(wave.clone());
                ParsedSource::Audio(wave)
            }
        };
        files.push((entry.path.clone(), bytes));
        sources.push(source);
    }
    let doc = build(manifest_path, &manifest, sources)?;
    Ok(Project {
        doc,
        files,
        waveform,
    })
}

pub fn build(
    origin: &Path,
    manifest: &Manifest,
    sources: Vec<ParsedSource>,
) -> Result<RollDocument, CliError> {
    build_document(manifest, sources).map_err(|e| CliError::input(origin, e))
}

/// The first MIDI layer diffed against every later MIDI layer.
pub fn reference_reports(doc: &RollDocument, tol: &MatchTolerance) -> Vec<LayerReport> {
    let mut midi = doc.layers().iter().filter(|l| l.kind == LayerKind::Midi);
    let Some(reference) = midi.next() else {
        return Vec::new();
    };
    midi.map(|est| LayerReport {
        ref_layer: reference.id.clone(),
        est_layer: est.id.clone(),
        report: classify_diff(doc.notes(&reference.id), doc.notes(&est.id), tol),
    })
    .collect()
}
