//! Posterior smoothing, peak detection, FRR/FAR scoring and DET sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

/// Default merge gap between supra-threshold regions, in frames.
pub const DEFAULT_MIN_GAP: usize = 30;
/// Default match tolerance between a detection peak and a reference center.
pub const DEFAULT_TOLERANCE: usize = 50;
/// Frame hop used to convert frame counts to audio time.
pub const FRAME_HOP_S: f64 = 0.01;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("empty posterior trace")]
    EmptyTrace,
    #[error("smoothing window must be >= 1")]
    Window,
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("duplicate utterance id {0}")]
    DuplicateUtterance(String),
    #[error("{0}: overlapping reference spans")]
    OverlappingReferences(String),
    #[error("{0}: reference span with end before start")]
    BadReference(String),
    #[error("detections for unknown utterance {0}")]
    UnknownUtterance(String),
    #[error("no evaluation inputs")]
    EmptyEvalSet,
    #[error("a DET sweep needs at least 2 thresholds")]
    TooFewThresholds,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub smooth_window_frames: usize,
    pub threshold: f64,
    pub min_gap_frames: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            smooth_window_frames: 30,
            threshold: 0.5,
            min_gap_frames: DEFAULT_MIN_GAP,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.smooth_window_frames == 0 {
            return Err(DecodeError::Window);
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(DecodeError::Threshold(self.threshold));
        }
        Ok(())
    }
}

/// Centered moving average of width `w`. Near the edges the window is cut
/// to the frames that exist and the mean is taken over those.
///
/// For even `w` the window holds one more frame to the right.
pub fn smooth(trace: &[f64], w: usize) -> Result<Vec<f64>, DecodeError> {
    if trace.is_empty() {
        return Err(DecodeError::EmptyTrace);
    }
    if w == 0 {
        return Err(DecodeError::Window);
    }
    let left = (w - 1) / 2;
    let right = w - 1 - left;
    let mut prefix = Vec::with_capacity(trace.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in trace {
        acc += v;
        prefix.push(acc);
    }
    let n = trace.len();
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(left);
            let hi = (t + right + 1).min(n);
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            // prefix differences can overshoot the local max by an ulp
            let (mn, mx) = trace[lo..hi]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            mean.clamp(mn, mx)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub utt_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub peak_frame: usize,
    pub peak_score: f64,
}

/// Supra-threshold (`>=`) regions of `trace`, merged when fewer than
/// `min_gap_frames` sub-threshold frames separate them. Each region reports
/// its first and last frame and its earliest maximum.
pub fn detect_peaks(utt_id: &str, trace: &[f64], threshold: f64, min_gap_frames: usize) -> Vec<Detection> {
    let mut regions: Vec<(usize, usize)> = Vec::new();
    let mut t = 0;
    while t < trace.len() {
        if trace[t] >= threshold {
            let start = t;
            while t + 1 < trace.len() && trace[t + 1] >= threshold {
                t += 1;
            }
            match regions.last_mut() {
                Some(prev) if start - prev.1 - 1 < min_gap_frames => prev.1 = t,
                _ => regions.push((start, t)),
            }
        }
        t += 1;
    }
    regions
        .into_iter()
        .map(|(start, end)| {
            let mut peak = start;
            for i in start..=end {
                if trace[i] > trace[peak] {
                    peak = i;
                }
            }
            Detection {
                utt_id: utt_id.to_string(),
                start_frame: start,
                end_frame: end,
                peak_frame: peak,
                peak_score: trace[peak],
            }
        })
        .collect()
}

/// Inclusive labeled wake-word span in frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSpan {
    pub start_frame: usize,
    pub end_frame: usize,
}

impl RefSpan {
    pub fn center(&self) -> f64 {
        (self.start_frame + self.end_frame) as f64 / 2.0
    }
}

/// An evaluated utterance with its (possibly empty) reference spans.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalUtterance {
    pub utt_id: String,
    pub duration_s: f64,
    pub references: Vec<RefSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub threshold: f64,
    pub frr: f64,
    pub far: f64,
    pub true_positives: usize,
    pub false_rejects: usize,
    pub false_accepts: usize,
    pub total_audio_hours: f64,
}

fn check_references(utts: &[EvalUtterance]) -> Result<(), DecodeError> {
    if utts.is_empty() {
        return Err(DecodeError::EmptyEvalSet);
    }
    let mut seen = BTreeSet::new();
    for u in utts {
        if !seen.insert(u.utt_id.as_str()) {
            return Err(DecodeError::DuplicateUtterance(u.utt_id.clone()));
        }
        let mut spans = u.references.clone();
        if spans.iter().any(|r| r.end_frame < r.start_frame) {
            return Err(DecodeError::BadReference(u.utt_id.clone()));
        }
        spans.sort_by_key(|r| r.start_frame);
        if spans.windows(2).any(|w| w[1].start_frame <= w[0].end_frame) {
            return Err(DecodeError::OverlappingReferences(u.utt_id.clone()));
        }
    }
    Ok(())
}

/// Greedy one-to-one matching in ascending peak-to-center distance; returns
/// the number of matched pairs.
pub fn match_count(detections: &[Detection], references: &[RefSpan], tolerance_frames: usize) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (di, d) in detections.iter().enumerate() {
        for (ri, r) in references.iter().enumerate() {
            let dist = (d.peak_frame as f64 - r.center()).abs();
            if dist <= tolerance_frames as f64 {
                pairs.push((dist, ri, di));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; detections.len()];
    let mut used_r = vec![false; references.len()];
    let mut matched = 0;
    for (_, ri, di) in pairs {
        if !used_d[di] && !used_r[ri] {
            used_d[di] = true;
            used_r[ri] = true;
            matched += 1;
        }
    }
    matched
}

/// Scores detections against references. Utterances without an entry in
/// `detections` count as having none.
pub fn score(
    utts: &[EvalUtterance],
    detections: &BTreeMap<String, Vec<Detection>>,
    tolerance_frames: usize,
    threshold: f64,
) -> Result<EvalResult, DecodeError> {
    check_references(utts)?;
    let known: BTreeSet<&str> = utts.iter().map(|u| u.utt_id.as_str()).collect();
    if let Some(k) = detections.keys().find(|k| !known.contains(k.as_str())) {
        return Err(DecodeError::UnknownUtterance(k.clone()));
    }
    let mut tp = 0;
    let mut refs = 0;
    let mut dets = 0;
    let mut seconds = 0.0;
    for u in utts {
        let d = detections.get(&u.utt_id).map_or(&[][..], Vec::as_slice);
        tp += match_count(d, &u.references, tolerance_frames);
        refs += u.references.len();
        dets += d.len();
        seconds += u.duration_s;
    }
    Ok(finish(threshold, tp, refs, dets, seconds))
}

fn finish(threshold: f64, tp: usize, refs: usize, dets: usize, seconds: f64) -> EvalResult {
    let hours = seconds / 3600.0;
    let fa = dets - tp;
    EvalResult {
        threshold,
        frr: if refs == 0 { 0.0 } else { (refs - tp) as f64 / refs as f64 },
        far: if hours > 0.0 { fa as f64 / hours } else { 0.0 },
        true_positives: tp,
        false_rejects: refs - tp,
        false_accepts: fa,
        total_audio_hours: hours,
    }
}

/// A wake-word posterior trace aligned with an [`EvalUtterance`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub utt: EvalUtterance,
    pub posteriors: Vec<f64>,
}

/// `n` evenly spaced thresholds from `hi` down to `lo`.
pub fn threshold_sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n).map(|i| hi - (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// One [`EvalResult`] per threshold, in the given order. Every trace is
/// smoothed once with `smooth_window_frames`.
pub fn det_curve(
    traces: &[EvalTrace],
    thresholds: &[f64],
    smooth_window_frames: usize,
    min_gap_frames: usize,
    tolerance_frames: usize,
) -> Result<Vec<EvalResult>, DecodeError> {
    if traces.is_empty() {
        return Err(DecodeError::EmptyEvalSet);
    }
    if thresholds.len() < 2 {
        return Err(DecodeError::TooFewThresholds);
    }
    if let Some(&t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(DecodeError::Threshold(t));
    }
    let utts: Vec<EvalUtterance> = traces.iter().map(|t| t.utt.clone()).collect();
    check_references(&utts)?;
    let smoothed = crate::exec::try_map_range(traces.len(), |i| smooth(&traces[i].posteriors, smooth_window_frames))?;
    let refs: usize = utts.iter().map(|u| u.references.len()).sum();
    let seconds: f64 = utts.iter().map(|u| u.duration_s).sum();
    Ok(crate::exec::map(thresholds, |&th| {
        let (mut tp, mut dets) = (0, 0);
        for (u, s) in utts.iter().zip(&smoothed) {
            let d = detect_peaks(&u.utt_id, s, th, min_gap_frames);
            tp += match_count(&d, &u.references, tolerance_frames);
            dets += d.len();
        }
        finish(th, tp, refs, dets, seconds)
    }))
}

pub fn write_det_csv(points: &[EvalResult], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "threshold,far_per_hour,frr")?;
    for p in points {
        writeln!(w, "{:.6},{:.6},{:.6}", p.threshold, p.far, p.frr)?;
    }
    Ok(())
}

pub fn read_det_csv(r: impl BufRead) -> Result<Vec<(f64, f64, f64)>, DecodeError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| DecodeError::Parse { line: i + 1, msg: e.to_string() })?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DecodeError::Parse { line: i + 1, msg: e.to_string() })?;
        if v.len() != 3 {
            return Err(DecodeError::Parse { line: i + 1, msg: "expected 3 columns".into() });
        }
        out.push((v[0], v[1], v[2]));
    }
    Ok(out)
}

const SVG_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Standalone SVG with one FRR-vs-FAR polyline per labeled curve.
pub fn det_svg(curves: &[(&str, &[EvalResult])]) -> String {
    let (w, h, m) = (640.0, 480.0, 60.0);
    let max_far = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.far))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x = |far: f64| m + (w - 2.0 * m) * far / max_far;
    let y = |frr: f64| h - m - (h - 2.0 * m) * frr;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#, x(f * max_far), h - m + 16.0, f * max_far);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#, m - 6.0, y(f) + 4.0, f);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">false accepts per hour</text>"#, w / 2.0, h - 16.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">false reject rate</text>"#, h / 2.0, h / 2.0);
    for (k, (label, pts)) in curves.iter().enumerate() {
        let color = SVG_COLORS[k % SVG_COLORS.len()];
        let mut sorted: Vec<&EvalResult> = pts.iter().collect();
        sorted.sort_by(|a, b| a.far.total_cmp(&b.far).then(b.frr.total_cmp(&a.frr)));
        let path: Vec<String> = sorted.iter().map(|p| format!("{:.1},{:.1}", x(p.far), y(p.frr))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="{color}">{label}</text>"#, w - m - 120.0, m + 16.0 * (k + 1) as f64);
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_detections(dets: &[Detection], mut w: impl Write) -> io::Result<()> {
    for d in dets {
        writeln!(w, "{}\t{}\t{}\t{}\t{:.6}", d.utt_id, d.start_frame, d.end_frame, d.peak_frame, d.peak_score)?;
    }
    Ok(())
}

pub fn read_detections(r: impl BufRead) -> Result<Vec<Detection>, DecodeError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let err = |msg: String| DecodeError::Parse { line: i + 1, msg };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(e.to_string()));
        let d = Detection {
            utt_id: f[0].to_string(),
            start_frame: int(f[1])?,
            end_frame: int(f[2])?,
            peak_frame: int(f[3])?,
            peak_score: f[4].parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
        };
        if !(d.start_frame <= d.peak_frame && d.peak_frame <= d.end_frame) {
            return Err(err("peak outside its region".into()));
        }
        out.push(d);
    }
    Ok(out)
}

/// Median of the pooled FAR values of several curves.
pub fn median_far(curves: &[&[EvalResult]]) -> Option<f64> {
    let mut v: Vec<f64> = curves.iter().flat_map(|c| c.iter().map(|p| p.far)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Lowest FRR among points whose FAR does not exceed `far`; 1 if none do.
pub fn frr_at_far(points: &[EvalResult], far: f64) -> f64 {
    points
        .iter()
        .filter(|p| p.far <= far)
        .map(|p| p.frr)
        .fold(1.0, f64::min)
}
