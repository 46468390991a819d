//! Self-contained synthetic keyword corpus and the clean-only versus
//! multi-condition comparison run on it.
//!
//! Words are sequences of formant-tone syllables: a harmonic source whose
//! partials are weighted by two resonances. The wake word is a fixed
//! three-syllable sequence; distractors reuse parts of it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{rms_power, AudioClip, SAMPLE_RATE};
use crate::augment::{
    corrupt_with_rng, plan_mixed_dataset, render_job, reverberate, synthesize_rir, CorruptionSpec, MixRecipe,
    MixSources, RirFilter, RoomSampler,
};
use crate::decode::{det_curve, frr_at_far, median_far, threshold_sweep, EvalResult, EvalTrace, EvalUtterance, RefSpan};
use crate::features::{compute_lfbe_batch, stack_context, LfbeConfig};
use crate::mining::{make_frame_targets, MinedExample, Polarity};
use crate::spotter::{train, FrameDataset, SpotterModel, TrainConfig, TrainLog, UtteranceFrames};
use crate::{exec, Result};

/// (F1, F2) in Hz.
const SYLLABLES: [(f64, f64); 8] = [
    (730.0, 1090.0),
    (270.0, 2290.0),
    (530.0, 1840.0),
    (300.0, 870.0),
    (660.0, 1720.0),
    (490.0, 1350.0),
    (400.0, 2000.0),
    (600.0, 1000.0),
];

pub const WAKE_WORD: [usize; 3] = [0, 1, 2];

/// Near misses of the wake word, sampled more often than random words.
const CONFUSABLES: [&[usize]; 5] = [&[0, 1, 4], &[6, 1, 2], &[0, 2, 1], &[0, 1], &[1, 2]];

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub seed: u64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub positive_fraction: f64,
    pub utterance_s: f64,
    /// Clean share of the multi-condition training recipe.
    pub mct_clean_share: f64,
    pub train_rirs: usize,
    pub test_rirs: usize,
    pub test_snr_db: f64,
    /// Keep every n-th training frame.
    pub frame_stride: usize,
    pub thresholds: usize,
    pub tolerance_frames: usize,
    pub min_gap_frames: usize,
    pub train: TrainConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 1,
            train_utterances: 500,
            test_utterances: 200,
            positive_fraction: 0.5,
            utterance_s: 2.0,
            mct_clean_share: 0.1,
            train_rirs: 24,
            test_rirs: 12,
            test_snr_db: 10.0,
            frame_stride: 4,
            thresholds: 99,
            tolerance_frames: crate::decode::DEFAULT_TOLERANCE,
            min_gap_frames: crate::decode::DEFAULT_MIN_GAP,
            train: TrainConfig {
                learning_rate: 0.01,
                minibatch_size: 64,
                epochs: 8,
                ..TrainConfig::default()
            },
        }
    }
}

/// A clip with its wake-word span in seconds, if it has one.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub clip: AudioClip,
    pub span: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct DemoCorpus {
    pub train: Vec<LabeledClip>,
    /// Reverberated and corrupted with held-out rooms and interference.
    pub test: Vec<LabeledClip>,
    pub train_rirs: Vec<RirFilter>,
    pub train_noises: Vec<AudioClip>,
    pub train_musics: Vec<AudioClip>,
}

struct Voice {
    f0: f64,
    formant_scale: f64,
    rate: f64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn formant_gain(f: f64, f1: f64, f2: f64) -> f64 {
    let r = |c: f64, bw: f64| 1.0 / (1.0 + ((f - c) / bw).powi(2));
    r(f1, 90.0) + 0.7 * r(f2, 120.0) + 0.02
}

/// Adds one word starting at sample `at`; returns its length in samples.
fn render_word(out: &mut [f64], at: usize, word: &[usize], v: &Voice, amp: f64) -> usize {
    let sr = SAMPLE_RATE as f64;
    let mut pos = at;
    for &s in word {
        let len = (0.12 * v.rate * sr) as usize;
        let (f1, f2) = (SYLLABLES[s].0 * v.formant_scale, SYLLABLES[s].1 * v.formant_scale);
        let partials: Vec<(f64, f64)> = (1..)
            .map(|h| h as f64 * v.f0)
            .take_while(|&f| f < 4000.0)
            .map(|f| (f, formant_gain(f, f1, f2)))
            .collect();
        let norm: f64 = partials.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
        for i in 0..len {
            let Some(slot) = out.get_mut(pos + i) else { break };
            let t = i as f64 / sr;
            let env = (PI * i as f64 / len as f64).sin().powf(0.6);
            // slight pitch fall across the syllable
            let glide = 1.0 - 0.05 * i as f64 / len as f64;
            let x: f64 = partials.iter().map(|&(f, g)| g * (2.0 * PI * f * glide * t).sin()).sum();
            *slot += amp * env * x / norm;
        }
        pos += len;
    }
    pos - at
}

fn random_word(rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rng.random_bool(0.5) {
        CONFUSABLES[rng.random_range(0..CONFUSABLES.len())].to_vec()
    } else {
        let n = rng.random_range(2..=3);
        loop {
            let w: Vec<usize> = (0..n).map(|_| rng.random_range(0..SYLLABLES.len())).collect();
            if w != WAKE_WORD {
                return w;
            }
        }
    }
}

/// One utterance: a wake word (for positives) and up to two distractor
/// words over a -50 dB noise floor.
fn synth_utterance(id: String, positive: bool, dur_s: f64, rng: &mut ChaCha8Rng) -> LabeledClip {
    let n = (dur_s * SAMPLE_RATE as f64) as usize;
    let mut x = vec![0.0; n];
    let v = Voice {
        f0: rng.random_range(90.0..220.0),
        formant_scale: rng.random_range(0.9..1.1),
        rate: rng.random_range(0.85..1.15),
    };
    let mut words: Vec<(bool, Vec<usize>)> = Vec::new();
    if positive {
        words.push((true, WAKE_WORD.to_vec()));
    }
    let extra = rng.random_range(if positive { 0..=1 } else { 1..=2 });
    for _ in 0..extra {
        words.push((false, random_word(rng)));
    }
    // random order, with gaps
    for i in (1..words.len()).rev() {
        let j = rng.random_range(0..=i);
        words.swap(i, j);
    }
    let word_len = |w: &[usize]| (0.12 * v.rate * SAMPLE_RATE as f64) as usize * w.len();
    let busy: usize = words.iter().map(|(_, w)| word_len(w)).sum();
    let slack = n.saturating_sub(busy + (0.2 * SAMPLE_RATE as f64) as usize);
    let mut cuts: Vec<usize> = (0..words.len()).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut pos = (0.1 * SAMPLE_RATE as f64) as usize;
    let mut prev = 0;
    let mut span = None;
    for ((is_ww, w), c) in words.iter().zip(cuts) {
        pos += c - prev;
        prev = c;
        let amp = rng.random_range(0.15..0.5);
        let len = render_word(&mut x, pos, w, &v, amp);
        if *is_ww {
            let sr = SAMPLE_RATE as f64;
            span = Some((pos as f64 / sr, (pos + len) as f64 / sr));
        }
        pos += len;
    }
    let floor = 10f64.powf(-50.0 / 20.0) * rms_power(&x).unwrap_or(0.0).sqrt().max(0.05);
    for s in &mut x {
        *s += floor * rng.random_range(-1.0..1.0) * 3f64.sqrt();
    }
    LabeledClip {
        clip: AudioClip::new(id, x),
        span,
    }
}

/// Low-passed white noise with a random corner.
pub fn synth_noise(id: impl Into<String>, dur_s: f64, rng: &mut ChaCha8Rng) -> AudioClip {
    let n = (dur_s * SAMPLE_RATE as f64) as usize;
    let a: f64 = rng.random_range(0.0..0.95);
    let mut y = 0.0;
    let samples = (0..n)
        .map(|_| {
            y = a * y + (1.0 - a) * rng.random_range(-1.0..1.0);
            y
        })
        .collect();
    AudioClip::new(id, samples)
}

/// Sustained harmonic notes that change every few hundred milliseconds.
pub fn synth_music(id: impl Into<String>, dur_s: f64, rng: &mut ChaCha8Rng) -> AudioClip {
    let sr = SAMPLE_RATE as f64;
    let n = (dur_s * sr) as usize;
    let mut x = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let len = ((rng.random_range(0.15..0.5)) * sr) as usize;
        let voices = rng.random_range(1..=3);
        for _ in 0..voices {
            let f = 110.0 * 2f64.powf(rng.random_range(0..36) as f64 / 12.0);
            let amp = rng.random_range(0.2..1.0);
            for i in 0..len.min(n - start) {
                let t = i as f64 / sr;
                let env = (1.0 - i as f64 / len as f64).powf(0.5);
                let tone: f64 = (1..=4).map(|h| (2.0 * PI * f * h as f64 * t).sin() / h as f64).sum();
                x[start + i] += amp * env * tone;
            }
        }
        start += len;
    }
    AudioClip::new(id, x)
}

/// Random rooms, one RIR each.
pub fn random_rirs(prefix: &str, count: usize, seed: u64, stream_base: u64) -> Result<Vec<RirFilter>> {
    Ok(exec::try_map_range(count, |i| {
        let mut rng = stream_rng(seed, stream_base + i as u64);
        synthesize_rir(&RoomSampler::default().sample(&mut rng), format!("{prefix}{i:03}"))
    })?)
}

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1 << 20;
const RIR_STREAM: u64 = 2 << 20;
const NOISE_STREAM: u64 = 3 << 20;

pub fn generate_corpus(cfg: &DemoConfig) -> Result<DemoCorpus> {
    let utt = |base: u64, prefix: &'static str, count: usize| {
        let n_pos = (count as f64 * cfg.positive_fraction).round() as usize;
        exec::map_range(count, move |i| {
            let mut rng = stream_rng(cfg.seed, base + i as u64);
            // alternate so positives spread over the whole id range
            let positive = (i * n_pos) / count.max(1) != ((i + 1) * n_pos) / count.max(1);
            synth_utterance(format!("{prefix}{i:04}"), positive, cfg.utterance_s, &mut rng)
        })
    };
    let train = utt(TRAIN_STREAM, "train", cfg.train_utterances);
    let clean_test = utt(TEST_STREAM, "test", cfg.test_utterances);
    let train_rirs = random_rirs("rir-train-", cfg.train_rirs, cfg.seed, RIR_STREAM)?;
    let test_rirs = random_rirs("rir-test-", cfg.test_rirs, cfg.seed, RIR_STREAM + 4096)?;
    let pool = |base: u64, prefix: &str, music: bool| -> Vec<AudioClip> {
        (0..8)
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, NOISE_STREAM + base + i);
                let id = format!("{prefix}{i:02}");
                if music {
                    synth_music(id, 6.0, &mut rng)
                } else {
                    synth_noise(id, 6.0, &mut rng)
                }
            })
            .collect()
    };
    let train_noises = pool(0, "noise-train-", false);
    let train_musics = pool(100, "music-train-", true);
    let test_noises = pool(200, "noise-test-", false);
    let test_musics = pool(300, "music-test-", true);

    let spec = CorruptionSpec {
        snr_mean_db: cfg.test_snr_db,
        snr_std_db: 0.0,
        noise_music_split: 0.5,
        rng_seed: cfg.seed,
    };
    let test = exec::try_map_range(clean_test.len(), |i| -> Result<LabeledClip> {
        let src = &clean_test[i];
        let mut rng = stream_rng(cfg.seed, TEST_STREAM + (1 << 19) + i as u64);
        let rir = &test_rirs[rng.random_range(0..test_rirs.len())];
        let noise = &test_noises[rng.random_range(0..test_noises.len())];
        let music = &test_musics[rng.random_range(0..test_musics.len())];
        let rev = reverberate(&src.clip, rir)?;
        let out = corrupt_with_rng(&rev, noise, music, &spec, &mut rng)?;
        Ok(LabeledClip {
            clip: out.clip.with_samples(src.clip.id.clone(), out.clip.samples.clone()),
            span: src.span,
        })
    })?;
    Ok(DemoCorpus {
        train,
        test,
        train_rirs,
        train_noises,
        train_musics,
    })
}

/// Multi-condition rendition of the clean training pool.
pub fn mct_training_set(corpus: &DemoCorpus, cfg: &DemoConfig) -> Result<Vec<LabeledClip>> {
    let clean: Vec<AudioClip> = corpus.train.iter().map(|c| c.clip.clone()).collect();
    let sources = MixSources {
        clean: &clean,
        rirs: &corpus.train_rirs,
        noises: &corpus.train_noises,
        musics: &corpus.train_musics,
    };
    let recipe = MixRecipe::with_clean_share(cfg.train_utterances, cfg.mct_clean_share);
    let spec = CorruptionSpec {
        rng_seed: cfg.seed,
        ..CorruptionSpec::default()
    };
    let jobs = plan_mixed_dataset(&sources, &recipe, &spec)?;
    Ok(exec::try_map_range(jobs.len(), |i| -> Result<LabeledClip> {
        let r = render_job(&jobs[i], &sources, &spec)?;
        Ok(LabeledClip {
            clip: r.clip,
            span: corpus.train[jobs[i].source].span,
        })
    })?)
}

/// Filterbank frames and frame targets for labeled clips.
pub fn featurize(clips: &[LabeledClip]) -> Result<Vec<UtteranceFrames>> {
    let lfbe = LfbeConfig::default();
    let audio: Vec<AudioClip> = clips.iter().map(|c| c.clip.clone()).collect();
    let feats = compute_lfbe_batch(&audio, &lfbe)?;
    clips
        .iter()
        .zip(feats)
        .map(|(c, f)| {
            let ex = MinedExample {
                utt_id: c.clip.id.clone(),
                polarity: if c.span.is_some() { Polarity::Positive } else { Polarity::Negative },
                trigger_word: "ww".into(),
                trigger_span: c.span.unwrap_or((0.0, 0.0)),
                confidence: 1.0,
            };
            let t = make_frame_targets(&ex, f.num_frames(), c.clip.duration_s())?;
            Ok(UtteranceFrames {
                utt_id: ex.utt_id,
                features: f,
                targets: t.targets,
                polarity: ex.polarity,
            })
        })
        .collect()
}

/// Mean wake-word length in frames over the positives, at least 1.
pub fn mean_positive_frames(utts: &[UtteranceFrames]) -> usize {
    let lens: Vec<usize> = utts
        .iter()
        .filter(|u| u.polarity == Polarity::Positive)
        .map(|u| u.targets.iter().filter(|&&y| y == 1).count())
        .collect();
    if lens.is_empty() {
        return 1;
    }
    ((lens.iter().sum::<usize>() as f64 / lens.len() as f64).round() as usize).max(1)
}

/// Posterior traces of `model` over featurized evaluation utterances.
pub fn eval_traces(model: &SpotterModel, utts: &[UtteranceFrames], clips: &[LabeledClip]) -> Result<Vec<EvalTrace>> {
    Ok(exec::try_map_range(utts.len(), |i| -> Result<EvalTrace> {
        let u = &utts[i];
        let stacked = stack_context(&u.features)?;
        let posteriors = model.wake_posteriors(stacked.vectors.view())?;
        let ones: Vec<usize> = (0..u.targets.len()).filter(|&t| u.targets[t] == 1).collect();
        let references = match (ones.first(), ones.last()) {
            (Some(&a), Some(&b)) => vec![RefSpan { start_frame: a, end_frame: b }],
            _ => Vec::new(),
        };
        Ok(EvalTrace {
            utt: EvalUtterance {
                utt_id: u.utt_id.clone(),
                duration_s: clips[i].clip.duration_s(),
                references,
            },
            posteriors,
        })
    })?)
}

#[derive(Debug, Clone)]
pub struct DemoArm {
    pub label: &'static str,
    pub model: SpotterModel,
    pub log: TrainLog,
    pub curve: Vec<EvalResult>,
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    pub clean: DemoArm,
    pub mct: DemoArm,
    pub smooth_window: usize,
    pub median_far: f64,
    pub clean_frr: f64,
    pub mct_frr: f64,
}

/// Trains a clean-only and a multi-condition spotter on the same clean pool
/// and sweeps both over the degraded test set.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    let corpus = generate_corpus(cfg)?;
    let clean_utts = featurize(&corpus.train)?;
    let smooth_window = mean_positive_frames(&clean_utts);
    let mct_clips = mct_training_set(&corpus, cfg)?;
    let mct_utts = featurize(&mct_clips)?;
    let test_utts = featurize(&corpus.test)?;
    let thresholds = threshold_sweep(0.01, 0.99, cfg.thresholds);

    let arm = |label: &'static str, utts: Vec<UtteranceFrames>| -> Result<DemoArm> {
        let data = FrameDataset::new(utts, cfg.frame_stride)?;
        log::info!("{label}: training on {} frames", data.len());
        let (mut model, log) = train(&data, &cfg.train)?;
        model.smooth_window = Some(smooth_window);
        let traces = eval_traces(&model, &test_utts, &corpus.test)?;
        let curve = det_curve(&traces, &thresholds, smooth_window, cfg.min_gap_frames, cfg.tolerance_frames)?;
        Ok(DemoArm { label, model, log, curve })
    };
    let clean = arm("clean", clean_utts)?;
    let mct = arm("mct", mct_utts)?;
    let median_far = median_far(&[&clean.curve, &mct.curve]).expect("non-empty sweeps");
    let clean_frr = frr_at_far(&clean.curve, median_far);
    let mct_frr = frr_at_far(&mct.curve, median_far);
    Ok(DemoReport {
        clean,
        mct,
        smooth_window,
        median_far,
        clean_frr,
        mct_frr,
    })
}
