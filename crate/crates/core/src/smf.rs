//! Standard MIDI File decoding.
//!
//! Only what the comparison engine needs is modelled explicitly (notes, tempo, controllers,
//! end of track); everything else survives as [`EventKind::Other`] so that no information is
//! silently dropped. Timing is resolved to absolute ticks here and to seconds by
//! [`extract_notes`] / [`extract_pedal`] through a [`TempoMap`].

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::timebase::TempoMap;

/// Largest value a 4-byte variable-length quantity can hold, plus one.
pub const VLQ_LIMIT: u32 = 1 << 28;

const SUSTAIN_CONTROLLER: u8 = 64;
const PEDAL_DOWN_THRESHOLD: u8 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmfError {
    #[error("variable-length quantity is truncated")]
    TruncatedVlq,
    #[error("variable-length quantity is longer than 4 bytes")]
    MalformedVlq,
    #[error("not a standard MIDI file (missing MThd)")]
    BadMagic,
    #[error("header chunk length is {0}, expected 6")]
    BadHeaderLength(u32),
    #[error("header chunk is truncated")]
    TruncatedHeader,
    #[error("SMPTE time division is not supported")]
    UnsupportedDivision,
    #[error("time division of zero ticks per quarter note")]
    ZeroDivision,
    #[error("MIDI format {0} is not supported")]
    UnsupportedFormat(u16),
    #[error("header declares {expected} tracks but only {found} were found")]
    MissingTracks { expected: usize, found: usize },
    #[error("track {track}: chunk is truncated")]
    TruncatedTrack { track: usize },
    #[error("track {track}: event at byte {offset} is truncated")]
    TruncatedEvent { track: usize, offset: usize },
    #[error("track {track}: data byte at byte {offset} without a running status")]
    MissingStatus { track: usize, offset: usize },
    #[error("track {track}: status byte {status:#04x} at byte {offset} is not valid in a file")]
    InvalidStatus {
        track: usize,
        offset: usize,
        status: u8,
    },
}

/// Decodes one variable-length quantity from the front of `bytes`.
///
/// Returns the value and the number of bytes consumed.
pub fn decode_vlq(bytes: &[u8]) -> Result<(u32, usize), SmfError> {
    let mut value = 0u32;
    for (i, &byte) in bytes.iter().enumerate() {
        if i == 4 {
            return Err(SmfError::MalformedVlq);
        }
        value = (value << 7) | u32::from(byte & 0x7F);
        if byte & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    if bytes.len() >= 4 {
        Err(SmfError::MalformedVlq)
    } else {
        Err(SmfError::TruncatedVlq)
    }
}

/// Canonical (shortest) variable-length encoding of `value`.
///
/// # Panics
///
/// Panics if `value` does not fit in 28 bits.
pub fn encode_vlq(value: u32) -> Vec<u8> {
    assert!(
        value < VLQ_LIMIT,
        "{value} does not fit in a variable-length quantity"
    );
    let mut groups = vec![(value & 0x7F) as u8];
    let mut rest = value >> 7;
    while rest > 0 {
        groups.push(0x80 | (rest & 0x7F) as u8);
        rest >>= 7;
    }
    groups.reverse();
    groups
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventKind {
    NoteOn {
        channel: u8,
        pitch: u8,
        velocity: u8,
    },
    NoteOff {
        channel: u8,
        pitch: u8,
        velocity: u8,
    },
    /// Set Tempo meta event.
    Tempo {
        micros_per_quarter: u32,
    },
    ControlChange {
        channel: u8,
        controller: u8,
        value: u8,
    },
    EndOfTrack,
    /// Any other message. For meta events `status` is `0xFF` and the payload starts with the
    /// meta type byte; for sysex it is the raw sysex body.
    Other {
        status: u8,
        payload: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TimedEvent {
    /// Absolute tick from the start of the track.
    pub tick: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MidiFile {
    format: u16,
    division: u16,
    tracks: Vec<Vec<TimedEvent>>,
}

impl MidiFile {
    /// Builds a file from already-decoded tracks. Ticks within each track are expected to be
    /// non-decreasing.
    pub fn new(format: u16, division: u16, tracks: Vec<Vec<TimedEvent>>) -> Result<Self, SmfError> {
        if format > 1 {
            return Err(SmfError::UnsupportedFormat(format));
        }
        if division == 0 {
            return Err(SmfError::ZeroDivision);
        }
        if division & 0x8000 != 0 {
            return Err(SmfError::UnsupportedDivision);
        }
        Ok(Self {
            format,
            division,
            tracks,
        })
    }

    pub fn format(&self) -> u16 {
        self.format
    }

    /// Ticks per quarter note.
    pub fn division(&self) -> u16 {
        self.division
    }

    pub fn tracks(&self) -> &[Vec<TimedEvent>] {
        &self.tracks
    }
}

/// One sounded note in absolute seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset_sec: f64,
    pub offset_sec: f64,
    pub velocity: u8,
    pub track_index: usize,
    pub channel: u8,
}

impl NoteEvent {
    pub fn duration(&self) -> f64 {
        self.offset_sec - self.onset_sec
    }
}

/// A sustain-pedal-down interval `[start_sec, end_sec)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PedalSpan {
    pub start_sec: f64,
    pub end_sec: f64,
    pub track_index: usize,
    pub channel: u8,
}

/// Irregularities tolerated while pairing notes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NoteReport {
    /// Note-offs with no open note of the same pitch, channel and track.
    pub orphan_note_offs: usize,
    /// Note-ons still open at the end of their track, closed at the final tick.
    pub unterminated_notes: usize,
    /// Pairs whose on and off share a tick; these are dropped.
    pub zero_length_notes: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16_be(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32_be(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, SmfError> {
        let (value, used) = decode_vlq(&self.bytes[self.pos..])?;
        self.pos += used;
        Ok(value)
    }
}

/// Decodes a format 0 or 1 Standard MIDI File.
pub fn parse_smf(bytes: &[u8]) -> Result<MidiFile, SmfError> {
    let mut reader = Reader::new(bytes);
    if reader.take(4) != Some(b"MThd".as_slice()) {
        return Err(SmfError::BadMagic);
    }
    let header_len = reader.u32_be().ok_or(SmfError::TruncatedHeader)?;
    if header_len != 6 {
        return Err(SmfError::BadHeaderLength(header_len));
    }
    let format = reader.u16_be().ok_or(SmfError::TruncatedHeader)?;
    let ntrks = reader.u16_be().ok_or(SmfError::TruncatedHeader)? as usize;
    let division = reader.u16_be().ok_or(SmfError::TruncatedHeader)?;
    if division & 0x8000 != 0 {
        return Err(SmfError::UnsupportedDivision);
    }
    if format > 1 {
        return Err(SmfError::UnsupportedFormat(format));
    }
    if division == 0 {
        return Err(SmfError::ZeroDivision);
    }

    let mut tracks = Vec::with_capacity(ntrks);
    while tracks.len() < ntrks {
        let track = tracks.len();
        if reader.remaining() == 0 {
            return Err(SmfError::MissingTracks {
                expected: ntrks,
                found: track,
            });
        }
        let id = reader.take(4).ok_or(SmfError::TruncatedTrack { track })?;
        let len = reader.u32_be().ok_or(SmfError::TruncatedTrack { track })? as usize;
        let body = reader.take(len).ok_or(SmfError::TruncatedTrack { track })?;
        // Unknown chunk types are skipped.
        if id == b"MTrk" {
            tracks.push(parse_track(body, track)?);
        }
    }

    MidiFile::new(format, division, tracks)
}

fn parse_track(body: &[u8], track: usize) -> Result<Vec<TimedEvent>, SmfError> {
    let mut reader = Reader::new(body);
    let mut events = Vec::with_capacity(body.len() / 3);
    let mut tick = 0u64;
    let mut running_status: Option<u8> = None;

    while reader.remaining() > 0 {
        let start = reader.pos;
        let truncated = SmfError::TruncatedEvent {
            track,
            offset: start,
        };
        let delta = reader.vlq().map_err(|e| match e {
            SmfError::TruncatedVlq => truncated.clone(),
            other => other,
        })?;
        tick += u64::from(delta);

        let first = reader.u8().ok_or_else(|| truncated.clone())?;
        let kind = match first {
            0xFF => {
                let meta_type = reader.u8().ok_or_else(|| truncated.clone())?;
                let len = reader.vlq().map_err(|_| truncated.clone())? as usize;
                let data = reader.take(len).ok_or_else(|| truncated.clone())?;
                match (meta_type, data) {
                    (0x2F, _) => EventKind::EndOfTrack,
                    (0x51, &[a, b, c]) if u32::from_be_bytes([0, a, b, c]) > 0 => {
                        EventKind::Tempo {
                            micros_per_quarter: u32::from_be_bytes([0, a, b, c]),
                        }
                    }
                    _ => {
                        let mut payload = Vec::with_capacity(data.len() + 1);
                        payload.push(meta_type);
                        payload.extend_from_slice(data);
                        EventKind::Other {
                            status: 0xFF,
                            payload,
                        }
                    }
                }
            }
            0xF0 | 0xF7 => {
                let len = reader.vlq().map_err(|_| truncated.clone())? as usize;
                let data = reader.take(len).ok_or_else(|| truncated.clone())?;
                EventKind::Other {
                    status: first,
                    payload: data.to_vec(),
                }
            }
            0xF1..=0xFE => {
                return Err(SmfError::InvalidStatus {
                    track,
                    offset: start,
                    status: first,
                })
            }
            _ => {
                let (status, first_data) = if first & 0x80 != 0 {
                    running_status = Some(first);
                    (first, None)
                } else {
                    let status = running_status.ok_or(SmfError::MissingStatus {
                        track,
                        offset: start,
                    })?;
                    (status, Some(first))
                };
                let mut data_byte = |pre: Option<u8>| -> Result<u8, SmfError> {
                    match pre {
                        Some(b) => Ok(b),
                        None => reader.u8().ok_or_else(|| truncated.clone()),
                    }
                };
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x80 | 0x90 | 0xA0 | 0xB0 | 0xE0 => {
                        let d1 = data_byte(first_data)? & 0x7F;
                        let d2 = data_byte(None)? & 0x7F;
                        match status & 0xF0 {
                            0x80 => EventKind::NoteOff {
                                channel,
                                pitch: d1,
                                velocity: d2,
                            },
                            0x90 => EventKind::NoteOn {
                                channel,
                                pitch: d1,
                                velocity: d2,
                            },
                            0xB0 => EventKind::ControlChange {
                                channel,
                                controller: d1,
                                value: d2,
                            },
                            _ => EventKind::Other {
                                status,
                                payload: vec![d1, d2],
                            },
                        }
                    }
                    // Program change and channel pressure carry one data byte.
                    _ => {
                        let d1 = data_byte(first_data)? & 0x7F;
                        EventKind::Other {
                            status,
                            payload: vec![d1],
                        }
                    }
                }
            }
        };

        let end = kind == EventKind::EndOfTrack;
        events.push(TimedEvent { tick, kind });
        if end {
            break;
        }
    }
    Ok(events)
}

/// Pairs note-ons with note-offs and converts them to seconds. See [`extract_notes_with_report`].
pub fn extract_notes(file: &MidiFile, tempo: &TempoMap) -> Vec<NoteEvent> {
    extract_notes_with_report(file, tempo).0
}

/// Pairs every note-on with the earliest following note-off (or velocity-0 note-on) of the same
/// pitch, channel and track, first-in first-out. Notes still open when the track ends are
/// closed at the track's final tick. Output is sorted by onset, then pitch.
pub fn extract_notes_with_report(
    file: &MidiFile,
    tempo: &TempoMap,
) -> (Vec<NoteEvent>, NoteReport) {
    let mut notes = Vec::new();
    let mut report = NoteReport::default();

    for (track_index, events) in file.tracks().iter().enumerate() {
        let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
        let mut close = |on_tick: u64,
                         off_tick: u64,
                         channel: u8,
                         pitch: u8,
                         velocity: u8,
                         report: &mut NoteReport| {
            if off_tick <= on_tick {
                report.zero_length_notes += 1;
                return;
            }
            notes.push(NoteEvent {
                pitch,
                onset_sec: tempo.ticks_to_seconds(on_tick),
                offset_sec: tempo.ticks_to_seconds(off_tick),
                velocity,
                track_index,
                channel,
            });
        };

        for event in events {
            match event.kind {
                EventKind::NoteOn {
                    channel,
                    pitch,
                    velocity,
                } if velocity > 0 => {
                    open.entry((channel, pitch))
                        .or_default()
                        .push_back((event.tick, velocity));
                }
                EventKind::NoteOn { channel, pitch, .. }
                | EventKind::NoteOff { channel, pitch, .. } => {
                    match open
                        .get_mut(&(channel, pitch))
                        .and_then(VecDeque::pop_front)
                    {
                        Some((on_tick, velocity)) => {
                            close(on_tick, event.tick, channel, pitch, velocity, &mut report)
                        }
                        None => report.orphan_note_offs += 1,
                    }
                }
                _ => {}
            }
        }

        let final_tick = events.last().map_or(0, |e| e.tick);
        let mut leftovers: Vec<_> = open
            .into_iter()
            .flat_map(|((channel, pitch), queue)| {
                queue
                    .into_iter()
                    .map(move |(tick, velocity)| (tick, channel, pitch, velocity))
            })
            .collect();
        leftovers.sort_unstable();
        for (on_tick, channel, pitch, velocity) in leftovers {
            report.unterminated_notes += 1;
            close(on_tick, final_tick, channel, pitch, velocity, &mut report);
        }
    }

    notes.sort_by(|a, b| {
        a.onset_sec
            .total_cmp(&b.onset_sec)
            .then(a.pitch.cmp(&b.pitch))
            .then(a.track_index.cmp(&b.track_index))
            .then(a.channel.cmp(&b.channel))
            .then(a.offset_sec.total_cmp(&b.offset_sec))
    });
    (notes, report)
}

/// Sustain pedal (CC64) intervals. Values of 64 and above press the pedal, lower values
/// release it; a pedal still down at the end of a track is released at the final tick.
pub fn extract_pedal(file: &MidiFile, tempo: &TempoMap) -> Vec<PedalSpan> {
    let mut spans = Vec::new();
    for (track_index, events) in file.tracks().iter().enumerate() {
        let mut down: [Option<u64>; 16] = [None; 16];
        let mut push = |start: u64, end: u64, channel: u8| {
            if end > start {
                spans.push(PedalSpan {
                    start_sec: tempo.ticks_to_seconds(start),
                    end_sec: tempo.ticks_to_seconds(end),
                    track_index,
                    channel,
                });
            }
        };
        for event in events {
            if let EventKind::ControlChange {
                channel,
                controller: SUSTAIN_CONTROLLER,
                value,
            } = event.kind
            {
                let slot = &mut down[usize::from(channel & 0x0F)];
                match (*slot, value >= PEDAL_DOWN_THRESHOLD) {
                    (None, true) => *slot = Some(event.tick),
                    (Some(start), false) => {
                        *slot = None;
                        push(start, event.tick, channel);
                    }
                    _ => {}
                }
            }
        }
        let final_tick = events.last().map_or(0, |e| e.tick);
        for (channel, start) in down.iter().enumerate() {
            if let Some(start) = start {
                push(*start, final_tick, channel as u8);
            }
        }
    }
    spans.sort_by(|a, b| {
        a.start_sec
            .total_cmp(&b.start_sec)
            .then(a.track_index.cmp(&b.track_index))
            .then(a.channel.cmp(&b.channel))
    });
    spans
}
