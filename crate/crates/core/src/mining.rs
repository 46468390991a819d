//! Mining wake-word positives and confusable negatives from ASR hypotheses.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::LfbeConfig;
use crate::lexicon::ConfusableSet;

pub const DEFAULT_THETA: f64 = 0.5;

/// Frame `t` spans `[t * hop, t * hop + window)`; its center is half a
/// window past the start.
pub fn frame_center_s(t: usize) -> f64 {
    let cfg = LfbeConfig::default();
    (t as f64 * cfg.hop_ms + cfg.window_ms / 2.0) / 1000.0
}

#[derive(Debug, Error)]
pub enum MineError {
    #[error("threshold {name} = {value} is outside [0, 1]")]
    Threshold { name: &'static str, value: f64 },
    #[error("no {0} examples to balance")]
    EmptyPolarity(Polarity),
    #[error("invalid ratio {0:?}")]
    Ratio(String),
    #[error("{utt_id}: degenerate span")]
    DegenerateSpan { utt_id: String },
    #[error("{utt_id}: span {start}..{end} s lies outside {duration} s of audio")]
    SpanOutside { utt_id: String, start: f64, end: f64, duration: f64 },
    #[error("{utt_id}: span contains no frame center")]
    SpanWithoutFrames { utt_id: String },
    #[error("{utt_id}: {frames} frames does not match {duration} s of audio (expected {expected})")]
    FrameCount { utt_id: String, frames: usize, duration: f64, expected: usize },
    #[error("mined manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

impl FromStr for Polarity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" | "P" => Ok(Polarity::Positive),
            "negative" | "N" => Ok(Polarity::Negative),
            _ => Err(format!("unknown polarity {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypWord {
    pub w: String,
    pub conf: f64,
    pub start: f64,
    pub end: f64,
}

/// One ASR hypothesis with word-level confidences and timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceHypothesis {
    pub utt_id: String,
    pub audio_path: String,
    pub words: Vec<HypWord>,
}

impl UtteranceHypothesis {
    pub fn validate(&self) -> Result<(), String> {
        let mut last_end = f64::NEG_INFINITY;
        for (i, w) in self.words.iter().enumerate() {
            if !(0.0..=1.0).contains(&w.conf) {
                return Err(format!("word {i}: confidence {} outside [0, 1]", w.conf));
            }
            if !(w.start.is_finite() && w.end.is_finite() && w.start >= 0.0 && w.start <= w.end) {
                return Err(format!("word {i}: bad span {}..{}", w.start, w.end));
            }
            if w.start < last_end {
                return Err(format!("word {i}: overlaps the previous word"));
            }
            last_end = w.end;
        }
        Ok(())
    }
}

/// Parses line-delimited JSON hypotheses. Malformed or invalid records are
/// skipped; the skip count is returned alongside.
pub fn read_hypotheses(r: impl BufRead) -> std::io::Result<(Vec<UtteranceHypothesis>, usize)> {
    let mut hyps = Vec::new();
    let mut skipped = 0;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<UtteranceHypothesis>(&line) {
            Ok(h) => match h.validate() {
                Ok(()) => hyps.push(h),
                Err(e) => {
                    log::debug!("hypothesis line {}: {e}", i + 1);
                    skipped += 1;
                }
            },
            Err(e) => {
                log::debug!("hypothesis line {}: {e}", i + 1);
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed hypothesis records");
    }
    Ok((hyps, skipped))
}

/// A mined utterance, labeled by the word that triggered its selection.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedExample {
    pub utt_id: String,
    pub polarity: Polarity,
    pub trigger_word: String,
    pub trigger_span: (f64, f64),
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub positive: f64,
    pub negative: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            positive: DEFAULT_THETA,
            negative: DEFAULT_THETA,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), MineError> {
        for (name, value) in [("theta_p", self.positive), ("theta_n", self.negative)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(MineError::Threshold { name, value });
            }
        }
        Ok(())
    }
}

fn best_word<'a>(words: &'a [HypWord], threshold: f64, keep: impl Fn(&str) -> bool) -> Option<&'a HypWord> {
    // highest confidence wins; earliest on ties
    words
        .iter()
        .filter(|w| w.conf >= threshold && keep(&w.w.to_lowercase()))
        .fold(None, |best: Option<&HypWord>, w| match best {
            Some(b) if b.conf >= w.conf => Some(b),
            _ => Some(w),
        })
}

fn mine_one(h: &UtteranceHypothesis, wake: &str, confusables: &ConfusableSet, t: Thresholds) -> Option<MinedExample> {
    let (polarity, word) = match best_word(&h.words, t.positive, |w| w == wake) {
        Some(w) => (Polarity::Positive, w),
        None => (
            Polarity::Negative,
            best_word(&h.words, t.negative, |w| w != wake && confusables.contains(w))?,
        ),
    };
    Some(MinedExample {
        utt_id: h.utt_id.clone(),
        polarity,
        trigger_word: word.w.to_lowercase(),
        trigger_span: (word.start, word.end),
        confidence: word.conf,
    })
}

/// At most one example per utterance: a positive when the wake word clears
/// `theta_p`, else a negative when a confusable word clears `theta_n`.
/// Output is ordered by `utt_id`.
pub fn mine(
    hyps: &[UtteranceHypothesis],
    wake_word: &str,
    confusables: &ConfusableSet,
    thresholds: Thresholds,
) -> Result<Vec<MinedExample>, MineError> {
    thresholds.validate()?;
    let wake = wake_word.to_lowercase();
    let mut out: Vec<MinedExample> = crate::exec::map(hyps, |h| mine_one(h, &wake, confusables, thresholds))
        .into_iter()
        .flatten()
        .collect();
    out.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    Ok(out)
}

/// Desired positives-per-negative ratio, written `P:N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceRatio {
    pub positives: f64,
    pub negatives: f64,
}

impl Default for BalanceRatio {
    fn default() -> Self {
        BalanceRatio {
            positives: 1.0,
            negatives: 1.0,
        }
    }
}

impl FromStr for BalanceRatio {
    type Err = MineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MineError::Ratio(s.to_string());
        let (p, n) = s.split_once(':').ok_or_else(bad)?;
        let p: f64 = p.trim().parse().map_err(|_| bad())?;
        let n: f64 = n.trim().parse().map_err(|_| bad())?;
        if !(p > 0.0 && n > 0.0 && p.is_finite() && n.is_finite()) {
            return Err(bad());
        }
        Ok(BalanceRatio {
            positives: p,
            negatives: n,
        })
    }
}

fn keep_subset<R: rand::Rng>(items: Vec<MinedExample>, keep: usize, rng: &mut R) -> Vec<MinedExample> {
    if keep >= items.len() {
        return items;
    }
    let mut idx = sample(rng, items.len(), keep).into_vec();
    idx.sort_unstable();
    let mut take = idx.into_iter().peekable();
    items
        .into_iter()
        .enumerate()
        .filter_map(|(i, e)| {
            if take.peek() == Some(&i) {
                take.next();
                Some(e)
            } else {
                None
            }
        })
        .collect()
}

/// Downsamples the over-represented polarity (seeded, order-preserving) to
/// reach the requested ratio.
pub fn balance(examples: Vec<MinedExample>, ratio: BalanceRatio, seed: u64) -> Result<Vec<MinedExample>, MineError> {
    let (pos, neg): (Vec<_>, Vec<_>) = examples.into_iter().partition(|e| e.polarity == Polarity::Positive);
    if pos.is_empty() {
        return Err(MineError::EmptyPolarity(Polarity::Positive));
    }
    if neg.is_empty() {
        return Err(MineError::EmptyPolarity(Polarity::Negative));
    }
    let r = ratio.positives / ratio.negatives;
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (keep_p, keep_n) = if np > r * nn {
        ((r * nn).round() as usize, neg.len())
    } else {
        (pos.len(), (np / r).round() as usize)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = keep_subset(pos, keep_p.max(1), &mut rng);
    let neg = keep_subset(neg, keep_n.max(1), &mut rng);
    let mut out: Vec<MinedExample> = pos.into_iter().chain(neg).collect();
    out.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    Ok(out)
}

/// Frame-level targets of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub utt_id: String,
    pub targets: Vec<u8>,
}

impl FrameTargets {
    pub fn positives(&self) -> usize {
        self.targets.iter().filter(|&&y| y == 1).count()
    }
}

/// Marks frames whose center lies in `[start, end)` for positives; negatives
/// are all zero. `duration_s` is the audio length used to check the span
/// and the frame count.
pub fn make_frame_targets(ex: &MinedExample, frame_count: usize, duration_s: f64) -> Result<FrameTargets, MineError> {
    let cfg = LfbeConfig::default();
    let samples = (duration_s * cfg.sample_rate as f64).round() as usize;
    let expected = cfg.frame_count(samples);
    if frame_count.abs_diff(expected) > 1 {
        return Err(MineError::FrameCount {
            utt_id: ex.utt_id.clone(),
            frames: frame_count,
            duration: duration_s,
            expected,
        });
    }
    let (start, end) = ex.trigger_span;
    let mut targets = vec![0u8; frame_count];
    if ex.polarity == Polarity::Negative {
        return Ok(FrameTargets {
            utt_id: ex.utt_id.clone(),
            targets,
        });
    }
    if !(end > start) {
        return Err(MineError::DegenerateSpan { utt_id: ex.utt_id.clone() });
    }
    if start < 0.0 || end > duration_s + 1e-9 {
        return Err(MineError::SpanOutside {
            utt_id: ex.utt_id.clone(),
            start,
            end,
            duration: duration_s,
        });
    }
    for (t, y) in targets.iter_mut().enumerate() {
        let c = frame_center_s(t);
        if c >= start && c < end {
            *y = 1;
        }
    }
    let ft = FrameTargets {
        utt_id: ex.utt_id.clone(),
        targets,
    };
    if ft.positives() == 0 {
        return Err(MineError::SpanWithoutFrames { utt_id: ex.utt_id.clone() });
    }
    Ok(ft)
}

/// `utt_id  polarity  trigger  start  end  conf`
pub fn write_mined(examples: &[MinedExample], mut w: impl Write) -> std::io::Result<()> {
    for e in examples {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.3}\t{:.3}\t{:.4}",
            e.utt_id, e.polarity, e.trigger_word, e.trigger_span.0, e.trigger_span.1, e.confidence
        )?;
    }
    Ok(())
}

pub fn read_mined(r: impl BufRead) -> Result<Vec<MinedExample>, MineError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let bad = |msg: String| MineError::Manifest { line: i + 1, msg };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        out.push(MinedExample {
            utt_id: f[0].to_string(),
            polarity: f[1].parse().map_err(bad)?,
            trigger_word: f[2].to_string(),
            trigger_span: (num(f[3])?, num(f[4])?),
            confidence: num(f[5])?,
        });
    }
    Ok(out)
}
