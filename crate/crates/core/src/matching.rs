//! Note-level comparison of an estimate track against a reference track.
//!
//! A reference note and an estimate note are candidates for each other when their onsets are
//! within tolerance, their pitches agree and (optionally) their offsets agree. The final
//! pairing is a maximum-cardinality bipartite matching over the candidates, so every note is
//! used at most once and as many notes as possible are paired.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roll::RollDocument;
use crate::smf::NoteEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("onset tolerance must be positive and finite, got {0}")]
    OnsetTolerance(f64),
    #[error("offset ratio must be non-negative and finite, got {0}")]
    OffsetRatio(f64),
    #[error("minimum offset tolerance must be non-negative and finite, got {0}")]
    OffsetMinTolerance(f64),
    #[error("layer {0:?} is not a layer of the document")]
    UnknownLayer(String),
    #[error("report does not fit layer {layer:?}: index {index} out of range")]
    ReportMismatch { layer: String, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchTolerance {
    pub onset_tol_sec: f64,
    pub require_exact_pitch: bool,
    pub offset_enabled: bool,
    pub offset_ratio: f64,
    pub offset_min_tol_sec: f64,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        Self {
            onset_tol_sec: 0.05,
            require_exact_pitch: true,
            offset_enabled: false,
            offset_ratio: 0.2,
            offset_min_tol_sec: 0.05,
        }
    }
}

impl MatchTolerance {
    pub fn validate(self) -> Result<Self, MatchError> {
        if !(self.onset_tol_sec.is_finite() && self.onset_tol_sec > 0.0) {
            return Err(MatchError::OnsetTolerance(self.onset_tol_sec));
        }
        if !(self.offset_ratio.is_finite() && self.offset_ratio >= 0.0) {
            return Err(MatchError::OffsetRatio(self.offset_ratio));
        }
        if !(self.offset_min_tol_sec.is_finite() && self.offset_min_tol_sec >= 0.0) {
            return Err(MatchError::OffsetMinTolerance(self.offset_min_tol_sec));
        }
        Ok(self)
    }

    /// Whether `est` is an acceptable match for `reference`. Every bound is inclusive.
    pub fn accepts(&self, reference: &NoteEvent, est: &NoteEvent) -> bool {
        if (reference.onset_sec - est.onset_sec).abs() > self.onset_tol_sec {
            return false;
        }
        if self.require_exact_pitch && reference.pitch != est.pitch {
            return false;
        }
        if self.offset_enabled {
            let bound = self
                .offset_min_tol_sec
                .max(self.offset_ratio * reference.duration());
            if (reference.offset_sec - est.offset_sec).abs() > bound {
                return false;
            }
        }
        true
    }
}

/// Candidate pairs between `ref_count` reference and `est_count` estimate notes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitMatrix {
    pub ref_count: usize,
    pub est_count: usize,
    pub hits: BTreeSet<(usize, usize)>,
}

impl HitMatrix {
    /// Estimate indices hit by each reference note, ascending.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.ref_count];
        for &(r, e) in &self.hits {
            adj[r].push(e);
        }
        adj
    }
}

pub fn candidate_hits(
    reference: &[NoteEvent],
    estimate: &[NoteEvent],
    tol: &MatchTolerance,
) -> HitMatrix {
    // Scan estimates in onset order so each reference only looks at the onset window.
    let mut by_onset: Vec<usize> = (0..estimate.len()).collect();
    by_onset.sort_by(|&a, &b| estimate[a].onset_sec.total_cmp(&estimate[b].onset_sec));
    let onsets: Vec<f64> = by_onset.iter().map(|&i| estimate[i].onset_sec).collect();

    let mut hits = BTreeSet::new();
    for (r, note) in reference.iter().enumerate() {
        let lo = note.onset_sec - tol.onset_tol_sec;
        let hi = note.onset_sec + tol.onset_tol_sec;
        // Widen by one ulp-scale step on each side; `accepts` makes the exact call.
        let start = onsets.partition_point(|&t| t < lo - 1e-9);
        for &e in by_onset[start..]
            .iter()
            .take_while(|&&e| estimate[e].onset_sec <= hi + 1e-9)
        {
            if tol.accepts(note, &estimate[e]) {
                hits.insert((r, e));
            }
        }
    }
    HitMatrix {
        ref_count: reference.len(),
        est_count: estimate.len(),
        hits,
    }
}

const FREE: usize = usize::MAX;

/// Maximum-cardinality matching over the hit graph (Hopcroft–Karp).
///
/// Reference notes are processed in index order and their candidates in ascending estimate
/// order, so the result is deterministic. Pairs are returned sorted by reference index.
pub fn max_bipartite_match(hits: &HitMatrix) -> Vec<(usize, usize)> {
    let adj = hits.adjacency();
    let mut ref_mate = vec![FREE; hits.ref_count];
    let mut est_mate = vec![FREE; hits.est_count];
    let mut dist = vec![0usize; hits.ref_count];

    loop {
        // Layer the graph from the free reference notes.
        let mut queue = VecDeque::new();
        for r in 0..hits.ref_count {
            if ref_mate[r] == FREE {
                dist[r] = 0;
                queue.push_back(r);
            } else {
                dist[r] = usize::MAX;
            }
        }
        let mut found_free = false;
        while let Some(r) = queue.pop_front() {
            for &e in &adj[r] {
                match est_mate[e] {
                    FREE => found_free = true,
                    next if dist[next] == usize::MAX => {
                        dist[next] = dist[r] + 1;
                        queue.push_back(next);
                    }
                    _ => {}
                }
            }
        }
        if !found_free {
            break;
        }

        let mut cursor = vec![0usize; hits.ref_count];
        for root in 0..hits.ref_count {
            if ref_mate[root] == FREE {
                augment(
                    root,
                    &adj,
                    &mut ref_mate,
                    &mut est_mate,
                    &mut dist,
                    &mut cursor,
                );
            }
        }
    }

    ref_mate
        .iter()
        .enumerate()
        .filter(|&(_, &e)| e != FREE)
        .map(|(r, &e)| (r, e))
        .collect()
}

/// Iterative depth-first search for one augmenting path along the BFS layers.
fn augment(
    root: usize,
    adj: &[Vec<usize>],
    ref_mate: &mut [usize],
    est_mate: &mut [usize],
    dist: &mut [usize],
    cursor: &mut [usize],
) -> bool {
    // Each frame is a reference note plus the estimate edge taken to reach the next frame.
    let mut stack: Vec<(usize, usize)> = vec![(root, FREE)];
    while let Some(&(r, _)) = stack.last() {
        let Some(&e) = adj[r].get(cursor[r]) else {
            // Dead end: never revisit this note in the current phase.
            dist[r] = usize::MAX;
            stack.pop();
            if let Some(parent) = stack.last_mut() {
                cursor[parent.0] += 1;
            }
            continue;
        };
        stack.last_mut().unwrap().1 = e;
        let mate = est_mate[e];
        if mate == FREE {
            for &(r, e) in &stack {
                ref_mate[r] = e;
                est_mate[e] = r;
            }
            return true;
        }
        if dist[mate] != usize::MAX && dist[mate] == dist[r] + 1 {
            stack.push((mate, FREE));
        } else {
            cursor[r] += 1;
        }
    }
    false
}

/// Pairing plus the unpaired notes on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiffReport {
    pub pairs: Vec<(usize, usize)>,
    pub missed_ref: Vec<usize>,
    pub extra_est: Vec<usize>,
    pub tolerance: MatchTolerance,
}

impl DiffReport {
    pub fn ref_count(&self) -> usize {
        self.pairs.len() + self.missed_ref.len()
    }

    pub fn est_count(&self) -> usize {
        self.pairs.len() + self.extra_est.len()
    }
}

pub fn classify_diff(
    reference: &[NoteEvent],
    estimate: &[NoteEvent],
    tol: &MatchTolerance,
) -> DiffReport {
    let pairs = max_bipartite_match(&candidate_hits(reference, estimate, tol));
    let mut ref_used = vec![false; reference.len()];
    let mut est_used = vec![false; estimate.len()];
    for &(r, e) in &pairs {
        ref_used[r] = true;
        est_used[e] = true;
    }
    let unused = |used: &[bool]| -> Vec<usize> {
        used.iter()
            .enumerate()
            .filter(|(_, &u)| !u)
            .map(|(i, _)| i)
            .collect()
    };
    DiffReport {
        missed_ref: unused(&ref_used),
        extra_est: unused(&est_used),
        pairs,
        tolerance: *tol,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched_count: usize,
    pub ref_count: usize,
    pub est_count: usize,
}

pub fn compute_metrics(report: &DiffReport) -> Metrics {
    let matched = report.pairs.len();
    let ref_count = report.ref_count();
    let est_count = report.est_count();
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(matched, est_count);
    let recall = ratio(matched, ref_count);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        f1,
        matched_count: matched,
        ref_count,
        est_count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HighlightClass {
    Matched,
    Missed,
    Extra,
    Neutral,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum HighlightMode {
    #[default]
    Off,
    EmphasizeMatched,
    EmphasizeDifferences,
    Full,
}

/// Highlight class per `(layer id, note index)`; notes not present are neutral.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HighlightMap {
    classes: BTreeMap<(String, usize), HighlightClass>,
}

impl HighlightMap {
    pub fn get(&self, layer_id: &str, index: usize) -> HighlightClass {
        self.classes
            .get(&(layer_id.to_string(), index))
            .copied()
            .unwrap_or(HighlightClass::Neutral)
    }

    pub fn insert(&mut self, layer_id: &str, index: usize, class: HighlightClass) {
        if class == HighlightClass::Neutral {
            self.classes.remove(&(layer_id.to_string(), index));
        } else {
            self.classes.insert((layer_id.to_string(), index), class);
        }
    }

    pub fn count(&self, class: HighlightClass) -> usize {
        self.classes.values().filter(|&&c| c == class).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, HighlightClass)> {
        self.classes.iter().map(|((l, i), c)| (l.as_str(), *i, *c))
    }
}

/// Tags the notes of the two compared layers according to `mode`.
pub fn highlight_assignment(
    doc: &RollDocument,
    ref_layer: &str,
    est_layer: &str,
    report: &DiffReport,
    mode: HighlightMode,
) -> Result<HighlightMap, MatchError> {
    for layer in [ref_layer, est_layer] {
        if doc.layer(layer).is_none() {
            return Err(MatchError::UnknownLayer(layer.to_string()));
        }
    }
    let (ref_len, est_len) = (doc.notes(ref_layer).len(), doc.notes(est_layer).len());
    let ref_indices = report
        .pairs
        .iter()
        .map(|p| p.0)
        .chain(report.missed_ref.iter().copied());
    if let Some(index) = ref_indices.into_iter().find(|&i| i >= ref_len) {
        return Err(MatchError::ReportMismatch {
            layer: ref_layer.to_string(),
            index,
        });
    }
    let est_indices = report
        .pairs
        .iter()
        .map(|p| p.1)
        .chain(report.extra_est.iter().copied());
    if let Some(index) = est_indices.into_iter().find(|&i| i >= est_len) {
        return Err(MatchError::ReportMismatch {
            layer: est_layer.to_string(),
            index,
        });
    }

    let show_matched = matches!(mode, HighlightMode::EmphasizeMatched | HighlightMode::Full);
    let show_diff = matches!(
        mode,
        HighlightMode::EmphasizeDifferences | HighlightMode::Full
    );
    let mut map = HighlightMap::default();
    if show_matched {
        for &(r, e) in &report.pairs {
            map.insert(ref_layer, r, HighlightClass::Matched);
            map.insert(est_layer, e, HighlightClass::Matched);
        }
    }
    if show_diff {
        for &r in &report.missed_ref {
            map.insert(ref_layer, r, HighlightClass::Missed);
        }
        for &e in &report.extra_est {
            map.insert(est_layer, e, HighlightClass::Extra);
        }
    }
    Ok(map)
}
