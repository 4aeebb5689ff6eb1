//! Fixture builders shared by the integration tests.
//!
//! The `.mid`, `.wav` and manifest files under `tests/fixtures` are produced by
//! [`fixture_files`]. Run the tests with `PIANODIFF_BLESS=1` to rewrite them and the goldens.

#![allow(dead_code)]

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn goldens_dir() -> PathBuf {
    fixtures_dir().join("goldens")
}

pub fn blessing() -> bool {
    std::env::var_os("PIANODIFF_BLESS").is_some_and(|v| v == "1")
}

pub fn pianodiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pianodiff"))
        .args(args)
        .output()
        .expect("spawn pianodiff")
}

pub fn fixture(name: &str) -> String {
    fixtures_dir().join(name).display().to_string()
}

/// Byte-level track writer. Deltas are written before every event; `status` bytes are
/// omitted when the caller asks for running status.
#[derive(Default)]
pub struct Track {
    bytes: Vec<u8>,
    last_tick: u64,
}

pub fn vlq(mut value: u32) -> Vec<u8> {
    let mut out = vec![(value & 0x7F) as u8];
    value >>= 7;
    while value > 0 {
        out.push(((value & 0x7F) as u8) | 0x80);
        value >>= 7;
    }
    out.reverse();
    out
}

impl Track {
    fn at(&mut self, tick: u64) -> &mut Self {
        assert!(tick >= self.last_tick, "events must be added in tick order");
        self.bytes.extend(vlq((tick - self.last_tick) as u32));
        self.last_tick = tick;
        self
    }

    pub fn on(&mut self, tick: u64, channel: u8, pitch: u8, velocity: u8) -> &mut Self {
        self.at(tick)
            .bytes
            .extend([0x90 | channel, pitch, velocity]);
        self
    }

    pub fn off(&mut self, tick: u64, channel: u8, pitch: u8) -> &mut Self {
        self.at(tick).bytes.extend([0x80 | channel, pitch, 64]);
        self
    }

    /// Data bytes only, reusing the previous channel status.
    pub fn running(&mut self, tick: u64, data: &[u8]) -> &mut Self {
        self.at(tick).bytes.extend(data);
        self
    }

    pub fn cc(&mut self, tick: u64, channel: u8, controller: u8, value: u8) -> &mut Self {
        self.at(tick)
            .bytes
            .extend([0xB0 | channel, controller, value]);
        self
    }

    pub fn tempo(&mut self, tick: u64, micros_per_quarter: u32) -> &mut Self {
        let [_, a, b, c] = micros_per_quarter.to_be_bytes();
        self.meta(tick, 0x51, &[a, b, c])
    }

    pub fn meta(&mut self, tick: u64, kind: u8, data: &[u8]) -> &mut Self {
        self.at(tick).bytes.extend([0xFF, kind]);
        self.bytes.extend(vlq(data.len() as u32));
        self.bytes.extend(data);
        self
    }

    pub fn sysex(&mut self, tick: u64, body: &[u8]) -> &mut Self {
        self.at(tick).bytes.push(0xF0);
        self.bytes.extend(vlq(body.len() as u32));
        self.bytes.extend(body);
        self
    }

    pub fn end(&mut self, tick: u64) -> Vec<u8> {
        self.meta(tick, 0x2F, &[]);
        std::mem::take(&mut self.bytes)
    }
}

pub fn smf(format: u16, ppq: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
    let mut out = b"MThd".to_vec();
    out.extend(6u32.to_be_bytes());
    out.extend(format.to_be_bytes());
    out.extend((tracks.len() as u16).to_be_bytes());
    out.extend(ppq.to_be_bytes());
    for track in tracks {
        out.extend(b"MTrk");
        out.extend((track.len() as u32).to_be_bytes());
        out.extend(track);
    }
    out
}

/// Reference side of the sample pair. At 1000 PPQ and one second per quarter a tick is 1 ms.
pub fn sample_reference() -> Vec<u8> {
    let mut t = Track::default();
    t.meta(0, 0x03, b"Ground Truth").tempo(0, 1_000_000);
    t.on(0, 0, 60, 80).off(500, 0, 60);
    t.on(1000, 0, 60, 80).off(1500, 0, 60);
    t.on(2000, 0, 64, 80).off(2400, 0, 64);
    smf(0, 1000, &[t.end(2400)])
}

/// Estimate side of the sample pair, written with running status and velocity-0 note-offs.
pub fn sample_estimate() -> Vec<u8> {
    let mut t = Track::default();
    t.tempo(0, 1_000_000);
    t.on(30, 0, 60, 70).running(550, &[60, 0]);
    t.running(1200, &[60, 72]).running(1600, &[60, 0]);
    t.running(2010, &[64, 75]).running(2380, &[64, 0]);
    t.running(3000, &[67, 60]).running(3200, &[67, 0]);
    smf(0, 1000, &[t.end(3200)])
}

/// Format 1, 480 PPQ: a conductor track with a tempo change at tick 1920 (2.0 s), a right
/// hand with sustain pedal and running status, and a left hand with sysex, an orphan
/// note-off and a note left open at the end of its track.
pub fn multitrack() -> Vec<u8> {
    let mut conductor = Track::default();
    conductor
        .meta(0, 0x03, b"Conductor")
        .meta(0, 0x58, &[4, 2, 24, 8])
        .tempo(0, 500_000)
        .tempo(1920, 750_000);
    let conductor = conductor.end(3840);

    let mut right = Track::default();
    right.meta(0, 0x03, b"Right hand").cc(0, 0, 64, 127);
    let arpeggio = [60u8, 64, 67, 72, 67, 64, 60, 55];
    for (i, &pitch) in arpeggio.iter().enumerate() {
        let start = i as u64 * 240;
        if i == 0 {
            right.on(start, 0, pitch, 90);
        } else {
            right.running(start, &[pitch, 90 - i as u8 * 4]);
        }
        right.running(start + 200, &[pitch, 0]);
    }
    right.cc(1890, 0, 64, 0).cc(1920, 0, 64, 100);
    right
        .on(1920, 0, 72, 96)
        .running(2400, &[76, 90])
        .running(2880, &[79, 85]);
    right
        .running(3360, &[72, 0])
        .running(3360, &[76, 0])
        .running(3360, &[79, 0]);
    right.cc(3800, 0, 64, 10);
    let right = right.end(3840);

    let mut left = Track::default();
    left.meta(0, 0x03, b"Left hand")
        .sysex(0, &[0x7E, 0x7F, 0x09, 0x01, 0xF7]);
    left.on(0, 1, 36, 100).off(900, 1, 36);
    left.off(950, 1, 41);
    left.on(960, 1, 43, 95).off(1900, 1, 43);
    left.on(1920, 1, 41, 92).off(2880, 1, 41);
    left.on(2880, 1, 36, 88);
    let left = left.end(3840);

    smf(1, 480, &[conductor, right, left])
}

/// A different transcription of the multitrack piece flattened to one track at 96 PPQ and a
/// fixed 100 bpm, with one bass note missing and one spurious note.
pub fn format0() -> Vec<u8> {
    let mut t = Track::default();
    t.tempo(0, 600_000);
    // 96 ticks per 0.6 s quarter, so one tick is 6.25 ms.
    let notes: [(u64, u64, u8, u8); 11] = [
        (0, 33, 0, 60),
        (0, 140, 1, 36),
        (40, 72, 0, 64),
        (80, 112, 0, 67),
        (120, 152, 0, 72),
        (160, 192, 0, 67),
        (162, 300, 1, 43),
        (200, 232, 0, 64),
        (240, 272, 0, 60),
        (280, 312, 0, 55),
        (330, 500, 0, 72),
    ];
    let mut events: Vec<(u64, bool, u8, u8)> = Vec::new();
    for &(on, off, channel, pitch) in &notes {
        events.push((on, true, channel, pitch));
        events.push((off, false, channel, pitch));
    }
    events.push((410, true, 0, 90));
    events.push((420, false, 0, 90));
    events.sort_by_key(|&(tick, is_on, channel, pitch)| (tick, is_on, channel, pitch));
    for (tick, is_on, channel, pitch) in events {
        if is_on {
            t.on(tick, channel, pitch, 80);
        } else {
            t.off(tick, channel, pitch);
        }
    }
    smf(0, 96, &[t.end(520)])
}

/// 3.5 s of 8 kHz mono PCM16: a triangle wave at each reference note of the sample pair.
/// Integer arithmetic only, so the bytes are identical on every platform.
pub fn fixture_wav() -> Vec<u8> {
    const RATE: u32 = 8000;
    // (start ms, end ms, period in samples)
    let tones = [(0u32, 500u32, 30i32), (1000, 1500, 30), (2000, 2400, 24)];
    let total = RATE * 7 / 2;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("wav header");
        for n in 0..total {
            let ms = n / 8;
            let sample = tones
                .iter()
                .find(|&&(a, b, _)| (a..b).contains(&ms))
                .map_or(0i32, |&(a, _, period)| {
                    let phase = (n as i32) % period;
                    let half = period / 2;
                    let tri = if phase < half { phase } else { period - phase };
                    // Triangle spanning +-16384, fading linearly over the tone.
                    let elapsed = (ms - a) as i32;
                    (tri * 2 - half) * 16384 / half * (600 - elapsed) / 600
                });
            writer.write_sample(sample as i16).expect("wav sample");
        }
        writer.finalize().expect("wav finalize");
    }
    cursor.into_inner()
}

pub const SHOWCASE_MANIFEST: &str = r#"[
  {"path": "gt.wav", "name": "Audio",
   "type": "audio"},
  {"path": "gt.mid", "name": "Ground Truth",
   "type": "midi"},
  {"path": "my_model.mid", "name": "My Model",
   "type": "midi"}
]
"#;

pub const MULTITRACK_MANIFEST: &str = r#"[
  {"path": "multitrack.mid", "name": "Performance", "type": "midi"},
  {"path": "format0.mid", "name": "Transcription", "type": "midi"}
]
"#;

pub const EMPTY_MANIFEST: &str = "[]\n";

/// Every checked-in fixture with its expected bytes.
pub fn fixture_files() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("gt.mid", sample_reference()),
        ("my_model.mid", sample_estimate()),
        ("multitrack.mid", multitrack()),
        ("format0.mid", format0()),
        ("gt.wav", fixture_wav()),
        ("showcase.json", SHOWCASE_MANIFEST.as_bytes().to_vec()),
        ("multitrack.json", MULTITRACK_MANIFEST.as_bytes().to_vec()),
        ("empty.json", EMPTY_MANIFEST.as_bytes().to_vec()),
    ]
}

pub fn write_fixtures() {
    std::fs::create_dir_all(fixtures_dir()).unwrap();
    for (name, bytes) in fixture_files() {
        std::fs::write(fixtures_dir().join(name), bytes).unwrap();
    }
}

/// MIDI files of the corpus used for self-comparison.
pub fn corpus_midi() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(fixtures_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "mid"))
        .collect();
    files.sort();
    files
}

/// A golden document: which manifest, and the extra `render` flags.
pub struct Golden {
    pub name: &'static str,
    pub manifest: &'static str,
    pub render_args: &'static [&'static str],
}

pub const GOLDENS: [Golden; 3] = [
    Golden {
        name: "showcase",
        manifest: "showcase.json",
        render_args: &[
            "--width",
            "800",
            "--height",
            "400",
            "--highlight",
            "full",
            "--playhead",
            "1",
        ],
    },
    Golden {
        name: "multitrack",
        manifest: "multitrack.json",
        render_args: &[
            "--width", "640", "--height", "320", "--t0", "1", "--t1", "3",
        ],
    },
    Golden {
        name: "empty",
        manifest: "empty.json",
        render_args: &["--width", "200", "--height", "100"],
    },
];

/// Runs `render` or `export` for a golden and returns stdout, panicking on failure.
pub fn golden_output(golden: &Golden, command: &str) -> Vec<u8> {
    let manifest = fixture(golden.manifest);
    let mut args = vec![command, manifest.as_str()];
    if command == "render" {
        args.extend_from_slice(golden.render_args);
    }
    let out = pianodiff(&args);
    assert!(
        out.status.success(),
        "{command} {} failed: {}",
        golden.name,
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

pub fn golden_path(golden: &Golden, command: &str) -> PathBuf {
    let ext = if command == "render" { "svg" } else { "json" };
    goldens_dir().join(format!("{}.{ext}", golden.name))
}

pub fn write_goldens() {
    std::fs::create_dir_all(goldens_dir()).unwrap();
    for golden in &GOLDENS {
        for command in ["render", "export"] {
            std::fs::write(golden_path(golden, command), golden_output(golden, command)).unwrap();
        }
    }
}
