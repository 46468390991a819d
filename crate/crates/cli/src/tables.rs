//! Line formats shared between subcommands.
//!
//! Utterance list: `utt_id<TAB>wav_path<TAB>polarity<TAB>start<TAB>end`, with
//! times in seconds, `-` for negatives, and an optional header line starting
//! with `utt_id`. Relative WAV paths resolve against the list's directory.
//!
//! Scores (written by `decode`): a `#smooth_window=N` line, then
//! `utt_id<TAB>duration_s<TAB>ref_start<TAB>ref_end<TAB>q0,q1,...` with the
//! reference frame span or `-`.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{read_failed, write_failed, CliError};
use wwkit::decode::{EvalTrace, EvalUtterance, RefSpan};
use wwkit::mining::{MinedExample, Polarity};

#[derive(Debug, Clone, PartialEq)]
pub struct ListEntry {
    pub utt_id: String,
    pub wav_path: PathBuf,
    pub polarity: Polarity,
    pub span: Option<(f64, f64)>,
}

impl ListEntry {
    pub fn as_example(&self) -> MinedExample {
        MinedExample {
            utt_id: self.utt_id.clone(),
            polarity: self.polarity,
            trigger_word: String::new(),
            trigger_span: self.span.unwrap_or((0.0, 0.0)),
            confidence: 1.0,
        }
    }
}

pub fn read_list(path: &Path) -> Result<Vec<ListEntry>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| read_failed(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |msg: String| CliError::data(format!("{}:{}: {msg}", path.display(), i + 1));
        if line.trim().is_empty() || line.starts_with("utt_id\t") || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", f.len())));
        }
        let polarity: Polarity = f[2].parse().map_err(bad)?;
        let span = match (f[3].trim(), f[4].trim()) {
            ("-" | "", "-" | "") => None,
            (s, e) => Some((
                s.parse::<f64>().map_err(|_| bad(format!("bad start {s:?}")))?,
                e.parse::<f64>().map_err(|_| bad(format!("bad end {e:?}")))?,
            )),
        };
        if polarity == Polarity::Positive && span.is_none() {
            return Err(bad("positive entry without a span".into()));
        }
        let wav = PathBuf::from(f[1]);
        out.push(ListEntry {
            utt_id: f[0].to_string(),
            wav_path: if wav.is_relative() { base.join(wav) } else { wav },
            polarity,
            span: if polarity == Polarity::Positive { span } else { None },
        });
    }
    Ok(out)
}

pub fn write_list(entries: &[ListEntry], path: &Path) -> Result<(), CliError> {
    let mut s = String::from("utt_id\twav_path\tpolarity\tstart\tend\n");
    for e in entries {
        let (a, b) = e
            .span
            .map_or(("-".to_string(), "-".to_string()), |(a, b)| (format!("{a:.3}"), format!("{b:.3}")));
        s.push_str(&format!("{}\t{}\t{}\t{a}\t{b}\n", e.utt_id, e.wav_path.display(), e.polarity));
    }
    std::fs::write(path, s).map_err(|e| write_failed(path, e))
}

pub fn write_scores(path: &Path, smooth_window: usize, traces: &[EvalTrace]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| write_failed(path, e))?);
    let mut go = || -> std::io::Result<()> {
        writeln!(f, "#smooth_window={smooth_window}")?;
        for t in traces {
            let (a, b) = t.utt.references.first().map_or(("-".to_string(), "-".to_string()), |r| {
                (r.start_frame.to_string(), r.end_frame.to_string())
            });
            let q: Vec<String> = t.posteriors.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(f, "{}\t{:.4}\t{a}\t{b}\t{}", t.utt.utt_id, t.utt.duration_s, q.join(","))?;
        }
        f.flush()
    };
    go().map_err(|e| write_failed(path, e))
}

/// Traces and the smoothing window recorded by `decode`.
pub fn read_scores(path: &Path) -> Result<(usize, Vec<EvalTrace>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| read_failed(path, e))?;
    let mut window = None;
    let mut traces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |msg: String| CliError::data(format!("{}:{}: {msg}", path.display(), i + 1));
        if let Some(w) = line.strip_prefix("#smooth_window=") {
            window = Some(w.trim().parse::<usize>().map_err(|_| bad("bad smooth_window".into()))?);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", f.len())));
        }
        let references = match (f[2], f[3]) {
            ("-", "-") => Vec::new(),
            (a, b) => vec![RefSpan {
                start_frame: a.parse().map_err(|_| bad("bad reference start".into()))?,
                end_frame: b.parse().map_err(|_| bad("bad reference end".into()))?,
            }],
        };
        let posteriors = f[4]
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad posterior {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        traces.push(EvalTrace {
            utt: EvalUtterance {
                utt_id: f[0].to_string(),
                duration_s: f[1].parse().map_err(|_| bad("bad duration".into()))?,
                references,
            },
            posteriors,
        });
    }
    let window = window.ok_or_else(|| CliError::data(format!("{}: missing #smooth_window line", path.display())))?;
    Ok((window, traces))
}
