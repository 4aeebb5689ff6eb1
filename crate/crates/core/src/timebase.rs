//! Tick to seconds conversion under a piecewise-constant tempo map.

use thiserror::Error;

use crate::smf::{EventKind, MidiFile};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimebaseError {
    #[error("ticks per quarter note must be positive")]
    ZeroPpq,
    #[error("tempo at tick {tick} must be positive")]
    ZeroTempo { tick: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoSegment {
    pub start_tick: u64,
    pub micros_per_quarter: u32,
    /// Seconds elapsed at `start_tick`.
    pub start_sec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TempoMap {
    ppq: u16,
    segments: Vec<TempoSegment>,
}

impl TempoMap {
    /// 120 BPM, assumed until the first tempo event.
    pub const DEFAULT_TEMPO: u32 = 500_000;

    /// Builds a map from `(tick, microseconds per quarter)` changes in any order. Changes at the
    /// same tick resolve to the one that appears last.
    pub fn new(ppq: u16, changes: &[(u64, u32)]) -> Result<Self, TimebaseError> {
        if ppq == 0 {
            return Err(TimebaseError::ZeroPpq);
        }
        if let Some(&(tick, _)) = changes.iter().find(|(_, tempo)| *tempo == 0) {
            return Err(TimebaseError::ZeroTempo { tick });
        }
        Ok(Self::from_sorted_changes(ppq, changes.to_vec()))
    }

    /// Merges the tempo events of every track. Tempo changes apply globally regardless of
    /// which track carries them.
    pub fn from_file(file: &MidiFile) -> Self {
        let changes = file
            .tracks()
            .iter()
            .flatten()
            .filter_map(|event| match event.kind {
                EventKind::Tempo { micros_per_quarter } if micros_per_quarter > 0 => {
                    Some((event.tick, micros_per_quarter))
                }
                _ => None,
            })
            .collect();
        Self::from_sorted_changes(file.division().max(1), changes)
    }

    fn from_sorted_changes(ppq: u16, mut changes: Vec<(u64, u32)>) -> Self {
        // Stable sort keeps encounter order within a tick, so the last one wins below.
        changes.sort_by_key(|&(tick, _)| tick);
        let mut deduped: Vec<(u64, u32)> = Vec::with_capacity(changes.len() + 1);
        for change in changes {
            match deduped.last_mut() {
                Some(last) if last.0 == change.0 => *last = change,
                _ => deduped.push(change),
            }
        }
        if deduped.first().is_none_or(|&(tick, _)| tick != 0) {
            deduped.insert(0, (0, Self::DEFAULT_TEMPO));
        }

        let mut segments: Vec<TempoSegment> = Vec::with_capacity(deduped.len());
        for (start_tick, micros_per_quarter) in deduped {
            let start_sec = match segments.last() {
                Some(prev) => {
                    prev.start_sec
                        + span_seconds(start_tick - prev.start_tick, prev.micros_per_quarter, ppq)
                }
                None => 0.0,
            };
            segments.push(TempoSegment {
                start_tick,
                micros_per_quarter,
                start_sec,
            });
        }
        Self { ppq, segments }
    }

    pub fn ppq(&self) -> u16 {
        self.ppq
    }

    pub fn segments(&self) -> &[TempoSegment] {
        &self.segments
    }

    pub fn ticks_to_seconds(&self, tick: u64) -> f64 {
        let idx = self.segments.partition_point(|s| s.start_tick <= tick) - 1;
        let seg = &self.segments[idx];
        seg.start_sec + span_seconds(tick - seg.start_tick, seg.micros_per_quarter, self.ppq)
    }
}

fn span_seconds(ticks: u64, micros_per_quarter: u32, ppq: u16) -> f64 {
    (ticks as f64 * f64::from(micros_per_quarter)) / (f64::from(ppq) * 1e6)
}
