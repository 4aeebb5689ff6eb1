//! `pianodiff`: compare MIDI transcriptions, render layered piano rolls, export document JSON
//! and serve it all to the browser viewer.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or input error.

mod error;
mod serve;
mod sources;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pianodiff_core::export::MIN_RENDER_PX;
use pianodiff_core::{
    compute_metrics, export_document_json, export_peaks_json, highlight_assignment, render_svg,
    HighlightMode, LayerKind, Manifest, ManifestEntry, MatchTolerance, ParsedSource, RenderOptions,
    RollDocument, Viewport,
};

use crate::error::CliError;
use crate::sources::{build, load_midi, load_project, load_wav, reference_reports};

#[derive(Parser)]
#[command(
    name = "pianodiff",
    version,
    about = "Compare and render layered MIDI piano rolls"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score one or more estimate MIDI files against a reference.
    Compare(CompareArgs),
    /// Render a manifest as an SVG piano roll.
    Render(RenderArgs),
    /// Write the canonical document JSON for a manifest.
    Export(ExportArgs),
    /// Write the waveform peak pyramid of a WAV file as JSON.
    Peaks(PeaksArgs),
    /// Serve a manifest's document, peaks and raw files over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct ToleranceArgs {
    /// Maximum onset difference in seconds.
    #[arg(long, default_value_t = 0.05)]
    onset_tol: f64,
    /// Also require offsets to agree.
    #[arg(long)]
    offsets: bool,
    /// Offset tolerance as a fraction of the reference note's duration.
    #[arg(long, default_value_t = 0.2)]
    offset_ratio: f64,
    /// Lower bound of the offset tolerance in seconds.
    #[arg(long, default_value_t = 0.05)]
    offset_min_tol: f64,
}

impl ToleranceArgs {
    fn tolerance(&self) -> Result<MatchTolerance, CliError> {
        MatchTolerance {
            onset_tol_sec: self.onset_tol,
            require_exact_pitch: true,
            offset_enabled: self.offsets,
            offset_ratio: self.offset_ratio,
            offset_min_tol_sec: self.offset_min_tol,
        }
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct CompareArgs {
    /// Reference MIDI file followed by one or more estimates.
    files: Vec<PathBuf>,
    /// Take the inputs from a manifest instead: its first MIDI entry is the reference.
    #[arg(long, conflicts_with = "files")]
    manifest: Option<PathBuf>,
    /// Print the document JSON, reports included, instead of the table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    tolerance: ToleranceArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum HighlightArg {
    Off,
    Matched,
    Differences,
    Full,
}

impl From<HighlightArg> for HighlightMode {
    fn from(arg: HighlightArg) -> Self {
        match arg {
            HighlightArg::Off => HighlightMode::Off,
            HighlightArg::Matched => HighlightMode::EmphasizeMatched,
            HighlightArg::Differences => HighlightMode::EmphasizeDifferences,
            HighlightArg::Full => HighlightMode::Full,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    manifest: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1200)]
    width: u32,
    #[arg(long, default_value_t = 600)]
    height: u32,
    /// Outline notes by how the first two MIDI layers match.
    #[arg(long, value_enum, default_value_t = HighlightArg::Off)]
    highlight: HighlightArg,
    /// Start of the rendered time window in seconds.
    #[arg(long)]
    t0: Option<f64>,
    /// End of the rendered time window in seconds.
    #[arg(long)]
    t1: Option<f64>,
    /// Draw a playhead at this time.
    #[arg(long)]
    playhead: Option<f64>,
    #[arg(long)]
    no_waveform: bool,
    #[arg(long)]
    no_pedal: bool,
    #[command(flatten)]
    tolerance: ToleranceArgs,
}

#[derive(Args)]
struct ExportArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tolerance: ToleranceArgs,
}

#[derive(Args)]
struct PeaksArgs {
    wav: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    manifest: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory of viewer assets to serve from `/`.
    #[arg(long)]
    assets: Option<PathBuf>,
    #[command(flatten)]
    tolerance: ToleranceArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pianodiff: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Compare(args) => compare(args),
        Command::Render(args) => render(args),
        Command::Export(args) => {
            let tol = args.tolerance.tolerance()?;
            let project = load_project(&args.manifest)?;
            let json = document_json(&project.doc, &tol)?;
            write_output(args.out.as_deref(), &json)
        }
        Command::Peaks(args) => {
            let wave = load_wav(&args.wav)?;
            write_output(args.out.as_deref(), &export_peaks_json(&wave))
        }
        Command::Serve(args) => {
            let tol = args.tolerance.tolerance()?;
            let project = load_project(&args.manifest)?;
            let json = document_json(&project.doc, &tol)?;
            serve::run(serve::Config {
                host: args.host,
                port: args.port,
                assets: args.assets,
                document_json: json,
                project,
            })
        }
    }
}

fn document_json(doc: &RollDocument, tol: &MatchTolerance) -> Result<String, CliError> {
    export_document_json(doc, &reference_reports(doc, tol))
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn compare(args: CompareArgs) -> Result<(), CliError> {
    let tol = args.tolerance.tolerance()?;
    let doc = match &args.manifest {
        Some(path) => load_project(path)?.doc,
        None => {
            if args.files.len() < 2 {
                return Err(CliError::Usage(
                    "compare needs a reference and at least one estimate MIDI file".into(),
                ));
            }
            let mut entries = Vec::new();
            let mut sources = Vec::new();
            for path in &args.files {
                let midi = load_midi(path)?;
                entries.push(ManifestEntry {
                    path: path.display().to_string(),
                    name: path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    kind: LayerKind::Midi,
                });
                sources.push(ParsedSource::Midi {
                    notes: midi.notes,
                    pedal: midi.pedal,
                });
            }
            build(&args.files[0], &Manifest { entries }, sources)?
        }
    };

    let reports = reference_reports(&doc, &tol);
    if reports.is_empty() {
        return Err(CliError::Usage(
            "compare needs at least two MIDI inputs".into(),
        ));
    }
    if args.json {
        let json =
            export_document_json(&doc, &reports).map_err(|e| CliError::Internal(e.to_string()))?;
        print!("{json}");
        return Ok(());
    }

    let label = |id: &str| {
        let index = doc
            .layers()
            .iter()
            .position(|l| l.id == id)
            .unwrap_or_default();
        doc.manifest().entries[index].path.clone()
    };
    println!(
        "reference {}: {} notes",
        label(&reports[0].ref_layer),
        doc.notes(&reports[0].ref_layer).len()
    );
    for r in &reports {
        let m = compute_metrics(&r.report);
        println!(
            "{}: P={:.3} R={:.3} F1={:.3} matched={} missed={} extra={}",
            label(&r.est_layer),
            m.precision,
            m.recall,
            m.f1,
            m.matched_count,
            r.report.missed_ref.len(),
            r.report.extra_est.len()
        );
    }
    Ok(())
}

fn render(args: RenderArgs) -> Result<(), CliError> {
    let tol = args.tolerance.tolerance()?;
    let mut opts = RenderOptions::new(args.width, args.height);
    if args.width < MIN_RENDER_PX || args.height < MIN_RENDER_PX {
        return Err(CliError::Usage(format!(
            "render size {}x{} is below the {MIN_RENDER_PX} px minimum",
            args.width, args.height
        )));
    }
    for (flag, value) in [
        ("--t0", args.t0),
        ("--t1", args.t1),
        ("--playhead", args.playhead),
    ] {
        if value.is_some_and(|v| !v.is_finite() || v < 0.0) {
            return Err(CliError::Usage(format!(
                "{flag} must be a non-negative number of seconds"
            )));
        }
    }
    if let (Some(t0), Some(t1)) = (args.t0, args.t1) {
        if t0 >= t1 {
            return Err(CliError::Usage("--t0 must be less than --t1".into()));
        }
    }

    let project = load_project(&args.manifest)?;
    let mut doc = project.doc;
    let current = *doc.viewport();
    if args.t0.is_some() || args.t1.is_some() {
        doc = doc.set_viewport(Viewport {
            time_start: args.t0.unwrap_or(current.time_start),
            time_end: args.t1.unwrap_or(current.time_end),
            ..current
        });
    }

    let mode = HighlightMode::from(args.highlight);
    if mode != HighlightMode::Off {
        let reports = reference_reports(&doc, &tol);
        let first = reports
            .first()
            .ok_or_else(|| CliError::Usage("--highlight needs at least two MIDI layers".into()))?;
        let map = highlight_assignment(
            &doc,
            &first.ref_layer,
            &first.est_layer,
            &first.report,
            mode,
        )
        .map_err(|e| CliError::Internal(e.to_string()))?;
        opts.highlight = Some(map);
    }
    opts.show_waveform = !args.no_waveform;
    opts.show_pedal = !args.no_pedal;
    opts.show_playhead = args.playhead.is_some();
    opts.playhead_sec = args.playhead;

    let svg = render_svg(&doc, &opts).map_err(|e| CliError::Usage(e.to_string()))?;
    write_output(args.out.as_deref(), &svg)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::input(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
