//! Phoneme lexicon and the confusable-word filter.
//!
//! Words whose pronunciation lies within a small phoneme edit distance of the
//! wake word form the confusable set used to mine hard negatives.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{0}: empty lexicon")]
    Empty(String),
    #[error("wake word {0:?} is not in the lexicon")]
    MissingWakeWord(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A non-empty pronunciation as a sequence of opaque phoneme symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhonemeSeq(Vec<String>);

impl PhonemeSeq {
    /// Splits on whitespace. Returns `None` when there are no phonemes.
    pub fn parse(s: &str) -> Option<Self> {
        let phones: Vec<String> = s.split_whitespace().map(str::to_string).collect();
        (!phones.is_empty()).then_some(PhonemeSeq(phones))
    }

    pub fn from_symbols<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Option<Self> {
        let phones: Vec<String> = symbols.into_iter().map(Into::into).collect();
        (!phones.is_empty() && phones.iter().all(|p| !p.is_empty())).then_some(PhonemeSeq(phones))
    }

    pub fn symbols(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Unit-cost edit distance (insert, delete, substitute).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y {
                diag
            } else {
                1 + diag.min(up).min(row[j])
            };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn phoneme_distance(a: &PhonemeSeq, b: &PhonemeSeq) -> usize {
    levenshtein(a.symbols(), b.symbols())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    pub entries: BTreeMap<String, Vec<PhonemeSeq>>,
    /// Rank 1 is the most frequent word.
    pub frequency_rank: Option<BTreeMap<String, usize>>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, LexiconError> {
    let io = |e| LexiconError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let f = std::fs::File::open(path).map_err(io)?;
    std::io::BufReader::new(f).lines().collect::<Result<_, _>>().map_err(io)
}

impl Lexicon {
    /// Parses `word<TAB>PH1 PH2 ...` lines; repeated words add pronunciations.
    pub fn parse(text: &str, file: &str) -> Result<Self, LexiconError> {
        let mut entries: BTreeMap<String, Vec<PhonemeSeq>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| LexiconError::Parse {
                file: file.to_string(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let (word, phones) = line.split_once('\t').ok_or_else(|| err("expected word<TAB>phonemes"))?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(err("empty word"));
            }
            let pron = PhonemeSeq::parse(phones).ok_or_else(|| err("empty phoneme field"))?;
            let prons = entries.entry(word).or_default();
            if !prons.contains(&pron) {
                prons.push(pron);
            }
        }
        if entries.is_empty() {
            return Err(LexiconError::Empty(file.to_string()));
        }
        Ok(Lexicon {
            entries,
            frequency_rank: None,
        })
    }

    /// Parses `word<TAB>count` lines into ranks: descending count, then
    /// lexicographic.
    pub fn parse_frequencies(text: &str, file: &str) -> Result<BTreeMap<String, usize>, LexiconError> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| LexiconError::Parse {
                file: file.to_string(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let (word, count) = line.split_once('\t').ok_or_else(|| err("expected word<TAB>count"))?;
            let count: u64 = count.trim().parse().map_err(|_| err("count is not a non-negative integer"))?;
            *counts.entry(word.trim().to_lowercase()).or_default() += count;
        }
        let mut order: Vec<(String, u64)> = counts.into_iter().collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(order.into_iter().enumerate().map(|(i, (w, _))| (w, i + 1)).collect())
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[PhonemeSeq]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Whether `word` passes the frequency constraint. Without frequency
    /// data every word passes.
    pub fn within_top(&self, word: &str, top_n: usize) -> bool {
        match &self.frequency_rank {
            None => true,
            Some(ranks) => ranks.get(word).is_some_and(|&r| r <= top_n),
        }
    }
}

pub fn load_lexicon(path: impl AsRef<Path>, frequencies: Option<&Path>) -> Result<Lexicon, LexiconError> {
    let path = path.as_ref();
    let mut lex = Lexicon::parse(&read_lines(path)?.join("\n"), &path.display().to_string())?;
    if let Some(fp) = frequencies {
        lex.frequency_rank = Some(Lexicon::parse_frequencies(
            &read_lines(fp)?.join("\n"),
            &fp.display().to_string(),
        )?);
    }
    Ok(lex)
}

pub const DEFAULT_TOP_N: usize = 10_000;

/// Words within `d_max` phoneme edits of the wake word.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusableSet {
    pub wake_word: String,
    pub d_max: usize,
    /// word -> minimum distance over pronunciation pairs.
    pub members: BTreeMap<String, usize>,
}

impl ConfusableSet {
    pub fn contains(&self, word: &str) -> bool {
        self.members.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `word<TAB>distance`, one member per line in word order.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for (word, d) in &self.members {
            writeln!(w, "{word}\t{d}")?;
        }
        Ok(())
    }

    pub fn read_tsv(wake_word: &str, text: &str) -> Result<Self, LexiconError> {
        let mut members = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = line
                .split_once('\t')
                .and_then(|(w, d)| d.trim().parse::<usize>().ok().map(|d| (w.trim().to_lowercase(), d)));
            let (w, d) = parsed.ok_or_else(|| LexiconError::Parse {
                file: "confusables".into(),
                line: i + 1,
                msg: "expected word<TAB>distance".into(),
            })?;
            members.insert(w, d);
        }
        let d_max = members.values().copied().max().unwrap_or(0);
        Ok(ConfusableSet {
            wake_word: wake_word.to_lowercase(),
            d_max,
            members,
        })
    }
}

/// Scans the `top_n` most frequent words (all words without frequency data)
/// and keeps those with `1 <= d <= d_max`, where `d` is the minimum distance
/// over all pronunciation pairs with the wake word.
pub fn build_confusable_set(
    lex: &Lexicon,
    wake_word: &str,
    d_max: usize,
    top_n: usize,
) -> Result<ConfusableSet, LexiconError> {
    let wake = wake_word.to_lowercase();
    let wake_prons = lex
        .pronunciations(&wake)
        .ok_or_else(|| LexiconError::MissingWakeWord(wake.clone()))?;
    let candidates: Vec<(&String, &Vec<PhonemeSeq>)> = lex
        .entries
        .iter()
        .filter(|(w, _)| **w != wake && lex.within_top(w, top_n))
        .collect();
    let distances = crate::exec::map(&candidates, |(_, prons)| {
        prons
            .iter()
            .flat_map(|p| wake_prons.iter().map(move |q| phoneme_distance(p, q)))
            .min()
            .expect("entries have at least one pronunciation")
    });
    let members = candidates
        .iter()
        .zip(distances)
        .filter(|(_, d)| (1..=d_max).contains(d))
        .map(|((w, _), d)| ((*w).clone(), d))
        .collect();
    Ok(ConfusableSet {
        wake_word: wake,
        d_max,
        members,
    })
}
