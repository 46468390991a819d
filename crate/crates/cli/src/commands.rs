use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::SeedableRng;

use crate::config::PipelineConfig;
use crate::error::{read_failed, write_failed, CliError};
use crate::tables::{read_list, read_scores, write_list, write_scores, ListEntry};
use wwkit::audio::{read_wav, write_wav_f32, AudioClip};
use wwkit::augment::{build_mixed_dataset, synthesize_rir, MixSources, RirFilter};
use wwkit::decode::{self, det_curve, det_svg, detect_peaks, score, smooth, threshold_sweep, write_det_csv, EvalResult};
use wwkit::features::{compute_lfbe, write_dump, LfbeConfig};
use wwkit::lexicon::{build_confusable_set, load_lexicon, ConfusableSet};
use wwkit::mining::{balance, make_frame_targets, mine, read_hypotheses, write_mined, Polarity};
use wwkit::spotter::{load_spotter, save_model, train, FrameDataset, UtteranceFrames};
use wwkit::{demo, exec};

fn required<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    v.as_deref().ok_or_else(|| CliError::config(key, "required by this subcommand"))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| write_failed(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| write_failed(path, e))
}

/// Sorted `.wav` files of a directory.
fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| read_failed(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    Ok(v)
}

fn read_wav_dir(dir: Option<&Path>) -> Result<Vec<AudioClip>, CliError> {
    let Some(dir) = dir else { return Ok(Vec::new()) };
    let files = wav_files(dir)?;
    Ok(exec::map(&files, |p| read_wav(p)).into_iter().collect::<Result<_, _>>()?)
}

pub fn rir_gen(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let sampler = cfg.rir.sampler();
    let dir = out.join("rirs");
    create_dir(&dir)?;
    let rooms: Vec<_> = (0..cfg.rir.count)
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(i as u64);
            sampler.sample(&mut rng)
        })
        .collect();
    let rirs = exec::try_map_range(rooms.len(), |i| synthesize_rir(&rooms[i], format!("rir-{i:04}")))?;
    let mut table = String::from("id\tdims\tsource\tmic\treflection_coeff\tmax_order\ttaps\n");
    for (room, rir) in rooms.iter().zip(&rirs) {
        let p = dir.join(format!("{}.wav", rir.id));
        write_wav_f32(&rir.to_clip(), &p).map_err(|e| write_failed(&p, e))?;
        let v = |a: [f64; 3]| format!("{:.3},{:.3},{:.3}", a[0], a[1], a[2]);
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{}\t{}\n",
            rir.id,
            v(room.dimensions),
            v(room.source),
            v(room.mic),
            room.reflection_coeff,
            room.max_order,
            rir.taps.len()
        ));
    }
    write(&out.join("rirs.tsv"), table)?;
    log::info!("wrote {} impulse responses", rirs.len());
    Ok(())
}

pub fn augment(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let recipe = cfg.recipe()?;
    let clean = read_wav_dir(Some(required(&cfg.augment.clean_dir, "augment.clean_dir")?))?;
    if clean.is_empty() {
        return Err(CliError::data("augment.clean_dir contains no WAV files"));
    }
    let rirs: Vec<RirFilter> = read_wav_dir(cfg.augment.rir_dir.as_deref())?
        .into_iter()
        .map(RirFilter::from_clip)
        .collect::<Result<_, _>>()?;
    let noises = read_wav_dir(cfg.augment.noise_dir.as_deref())?;
    let musics = read_wav_dir(cfg.augment.music_dir.as_deref())?;
    let sources = MixSources {
        clean: &clean,
        rirs: &rirs,
        noises: &noises,
        musics: &musics,
    };
    let rows = build_mixed_dataset(&sources, &recipe, &cfg.corruption(), out)?;
    log::info!("rendered {} utterances", rows.len());
    Ok(())
}

pub fn confusables(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let lex = load_lexicon(required(&cfg.lexicon.path, "lexicon.path")?, cfg.lexicon.frequencies.as_deref())?;
    let set = build_confusable_set(&lex, &cfg.lexicon.wake_word, cfg.lexicon.d_max, cfg.lexicon.top_n)?;
    let mut buf = Vec::new();
    set.write_tsv(&mut buf).expect("write to vec");
    write(&out.join("confusables.tsv"), buf)?;
    log::info!("{} confusable words", set.len());
    Ok(())
}

pub fn mine_cmd(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let path = required(&cfg.mining.hypotheses, "mining.hypotheses")?;
    let file = fs::File::open(path).map_err(|e| read_failed(path, e))?;
    let (hyps, _skipped) = read_hypotheses(BufReader::new(file)).map_err(|e| read_failed(path, e))?;
    let wake = &cfg.lexicon.wake_word;
    let set = match &cfg.mining.confusables {
        Some(p) => ConfusableSet::read_tsv(wake, &fs::read_to_string(p).map_err(|e| read_failed(p, e))?)?,
        None => ConfusableSet {
            wake_word: wake.to_lowercase(),
            d_max: 0,
            members: BTreeMap::new(),
        },
    };
    let mut mined = mine(&hyps, wake, &set, cfg.thresholds())?;
    if let Some(r) = cfg.ratio()? {
        mined = balance(mined, r, cfg.rng_seed)?;
    }
    let mut buf = Vec::new();
    write_mined(&mined, &mut buf).expect("write to vec");
    write(&out.join("mined.tsv"), buf)?;
    let audio: BTreeMap<&str, &str> = hyps.iter().map(|h| (h.utt_id.as_str(), h.audio_path.as_str())).collect();
    let base = path.parent().unwrap_or(Path::new("."));
    let list: Vec<ListEntry> = mined
        .iter()
        .map(|m| {
            let wav = PathBuf::from(audio[m.utt_id.as_str()]);
            ListEntry {
                utt_id: m.utt_id.clone(),
                wav_path: if wav.is_relative() { base.join(wav) } else { wav },
                polarity: m.polarity,
                span: (m.polarity == Polarity::Positive).then_some(m.trigger_span),
            }
        })
        .collect();
    write_list(&list, &out.join("train_list.tsv"))?;
    log::info!("mined {} examples from {} hypotheses", mined.len(), hyps.len());
    Ok(())
}

fn featurize_inputs(input: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    if input.is_dir() {
        Ok(wav_files(input)?
            .into_iter()
            .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
            .collect())
    } else {
        Ok(read_list(input)?.into_iter().map(|e| (e.utt_id, e.wav_path)).collect())
    }
}

pub fn featurize(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let inputs = featurize_inputs(required(&cfg.features.input, "features.input")?)?;
    if inputs.is_empty() {
        return Err(CliError::data("features.input lists no audio"));
    }
    let dir = out.join("features");
    create_dir(&dir)?;
    let lfbe = LfbeConfig::default();
    let frames = exec::try_map_range(inputs.len(), |i| -> Result<usize, CliError> {
        let (id, wav) = &inputs[i];
        let f = compute_lfbe(&read_wav(wav)?, &lfbe)?;
        let p = dir.join(format!("{id}.lfbe"));
        let mut buf = Vec::new();
        write_dump(f.frames.view(), &mut buf).expect("write to vec");
        write(&p, buf)?;
        Ok(f.num_frames())
    })?;
    let mut index = String::from("utt_id\tframes\tpath\n");
    for ((id, _), n) in inputs.iter().zip(frames) {
        index.push_str(&format!("{id}\t{n}\tfeatures/{id}.lfbe\n"));
    }
    write(&out.join("features.tsv"), index)
}

/// Reads, featurizes and labels every list entry.
fn load_utterances(entries: &[ListEntry]) -> Result<Vec<(UtteranceFrames, f64)>, CliError> {
    let lfbe = LfbeConfig::default();
    exec::try_map_range(entries.len(), |i| -> Result<_, CliError> {
        let e = &entries[i];
        let clip = read_wav(&e.wav_path)?;
        let f = compute_lfbe(&clip, &lfbe)?;
        let t = make_frame_targets(&e.as_example(), f.num_frames(), clip.duration_s())?;
        Ok((
            UtteranceFrames {
                utt_id: e.utt_id.clone(),
                features: f,
                targets: t.targets,
                polarity: e.polarity,
            },
            clip.duration_s(),
        ))
    })
}

pub fn train_cmd(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let tc = cfg.train_config()?;
    let entries = read_list(required(&cfg.training.list, "training.list")?)?;
    let utts: Vec<UtteranceFrames> = load_utterances(&entries)?.into_iter().map(|(u, _)| u).collect();
    let window = demo::mean_positive_frames(&utts);
    let data = FrameDataset::new(utts, cfg.training.frame_stride)?;
    log::info!("training on {} frames", data.len());
    let (mut model, log) = train(&data, &tc)?;
    model.smooth_window = Some(window);
    save_model(&model, &out.join("model.ckpt"), cfg.encoding()?)?;
    let mut s = String::from("epoch\tmean_loss\n");
    for (i, l) in log.epoch_losses.iter().enumerate() {
        s.push_str(&format!("{}\t{l:.6}\n", i + 1));
    }
    write(&out.join("train_log.tsv"), s)
}

pub fn decode_cmd(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let model = load_spotter(required(&cfg.decoding.model, "decoding.model")?)?;
    let entries = read_list(required(&cfg.decoding.list, "decoding.list")?)?;
    let window = cfg.decoding.smooth_window_frames.or(model.smooth_window).unwrap_or(30);
    let utts = load_utterances(&entries)?;
    let traces = exec::try_map_range(utts.len(), |i| -> Result<_, CliError> {
        let (u, dur) = &utts[i];
        let stacked = wwkit::features::stack_context(&u.features)?;
        let posteriors = model.wake_posteriors(stacked.vectors.view())?;
        let ones: Vec<usize> = (0..u.targets.len()).filter(|&t| u.targets[t] == 1).collect();
        let references = match (ones.first(), ones.last()) {
            (Some(&a), Some(&b)) => vec![decode::RefSpan { start_frame: a, end_frame: b }],
            _ => Vec::new(),
        };
        Ok(decode::EvalTrace {
            utt: decode::EvalUtterance {
                utt_id: u.utt_id.clone(),
                duration_s: *dur,
                references,
            },
            posteriors,
        })
    })?;
    write_scores(&out.join("scores.tsv"), window, &traces)?;
    let mut dets = Vec::new();
    for t in &traces {
        let s = smooth(&t.posteriors, window)?;
        dets.extend(detect_peaks(&t.utt.utt_id, &s, cfg.decoding.threshold, cfg.decoding.min_gap_frames));
    }
    let mut buf = Vec::new();
    decode::write_detections(&dets, &mut buf).expect("write to vec");
    write(&out.join("detections.tsv"), buf)
}

const SCORES: &str = "scores.tsv";

fn eval_inputs(cfg: &PipelineConfig) -> Result<Vec<(String, PathBuf)>, CliError> {
    let found: Vec<(String, PathBuf)> = cfg
        .decoding
        .inputs
        .iter()
        .filter(|d| d.join(SCORES).is_file())
        .map(|d| {
            let label = d.file_name().unwrap_or_default().to_string_lossy().into_owned();
            (label, d.clone())
        })
        .collect();
    if found.is_empty() {
        return Err(CliError::from(decode::DecodeError::EmptyEvalSet));
    }
    Ok(found)
}

pub fn eval(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let mut s = String::from("input\tthreshold\ttrue_positives\tfalse_rejects\tfalse_accepts\taudio_hours\tfrr\tfar_per_hour\n");
    for (label, dir) in eval_inputs(cfg)? {
        let (_, traces) = read_scores(&dir.join(SCORES))?;
        let det_path = dir.join("detections.tsv");
        let file = fs::File::open(&det_path).map_err(|e| read_failed(&det_path, e))?;
        let mut by_utt: BTreeMap<String, Vec<decode::Detection>> = BTreeMap::new();
        for d in decode::read_detections(BufReader::new(file))? {
            by_utt.entry(d.utt_id.clone()).or_default().push(d);
        }
        let utts: Vec<_> = traces.into_iter().map(|t| t.utt).collect();
        let r = score(&utts, &by_utt, cfg.decoding.tolerance_frames, cfg.decoding.threshold)?;
        s.push_str(&format!(
            "{label}\t{:.6}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
            r.threshold, r.true_positives, r.false_rejects, r.false_accepts, r.total_audio_hours, r.frr, r.far
        ));
    }
    write(&out.join("eval.tsv"), s)
}

fn csv(points: &[EvalResult]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_det_csv(points, &mut buf).expect("write to vec");
    buf
}

pub fn det(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let thresholds = threshold_sweep(0.01, 0.99, cfg.decoding.det_thresholds);
    let mut curves = Vec::new();
    for (label, dir) in eval_inputs(cfg)? {
        let (stored, traces) = read_scores(&dir.join(SCORES))?;
        let window = cfg.decoding.smooth_window_frames.unwrap_or(stored);
        let curve = det_curve(&traces, &thresholds, window, cfg.decoding.min_gap_frames, cfg.decoding.tolerance_frames)?;
        write(&out.join(format!("det_{label}.csv")), csv(&curve))?;
        curves.push((label, curve));
    }
    let refs: Vec<(&str, &[EvalResult])> = curves.iter().map(|(l, c)| (l.as_str(), c.as_slice())).collect();
    write(&out.join("det.svg"), det_svg(&refs))
}

pub fn e2e_demo(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let report = demo::run_demo(&cfg.demo_config())?;
    for arm in [&report.clean, &report.mct] {
        write(&out.join(format!("det_{}.csv", arm.label)), csv(&arm.curve))?;
        save_model(&arm.model, &out.join(format!("{}.ckpt", arm.label)), wwkit::spotter::Encoding::Text)?;
    }
    write(
        &out.join("det.svg"),
        det_svg(&[("clean-only", &report.clean.curve), ("multi-condition", &report.mct.curve)]),
    )?;
    let summary = format!(
        "seed\t{}\nsmooth_window\t{}\nmedian_far_per_hour\t{:.6}\nclean_frr\t{:.6}\nmct_frr\t{:.6}\n",
        cfg.rng_seed, report.smooth_window, report.median_far, report.clean_frr, report.mct_frr
    );
    write(&out.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}
