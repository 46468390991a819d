use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wwkit::audio::{read_wav, AudioClip};
use wwkit::augment::{
    build_mixed_dataset, read_manifest, reverberate, synthesize_rir, CorruptionSpec, MixRecipe, MixSources,
    RoomSampler,
};
use wwkit::demo::{featurize, generate_corpus, DemoConfig};
use wwkit::exec::with_jobs;
use wwkit::features::{compute_lfbe, stack_context, LfbeConfig};
use wwkit::spotter::{decode_model, encode_model, train, Encoding, FrameDataset, TrainConfig};

fn tiny_demo() -> DemoConfig {
    DemoConfig {
        train_utterances: 16,
        test_utterances: 4,
        train_rirs: 2,
        test_rirs: 2,
        ..DemoConfig::default()
    }
}

#[test]
fn features_train_checkpoint_posteriors() {
    let cfg = tiny_demo();
    let corpus = generate_corpus(&cfg).unwrap();
    let utts = featurize(&corpus.train).unwrap();
    let data = FrameDataset::new(utts, 4).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        minibatch_size: 32,
        ..TrainConfig::default()
    };
    let (model, log) = train(&data, &tc).unwrap();
    assert_eq!(log.epoch_losses.len(), 2);
    assert!(log.epoch_losses.iter().all(|l| l.is_finite()));

    let bytes = encode_model(&model, Encoding::Text);
    let back = decode_model(&bytes, "mem").unwrap();
    let feat = compute_lfbe(&corpus.test[0].clip, &LfbeConfig::default()).unwrap();
    let stacked = stack_context(&feat).unwrap();
    let a = model.wake_posteriors(stacked.vectors.view()).unwrap();
    let b = back.wake_posteriors(stacked.vectors.view()).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|q| (0.0..=1.0).contains(q)));
}

#[test]
fn mixing_writes_readable_audio_and_manifest() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clean: Vec<AudioClip> = (0..4)
        .map(|i| AudioClip::new(format!("c{i}"), (0..3200).map(|t| 0.3 * (t as f64 * 0.01 * (i + 1) as f64).sin()).collect()))
        .collect();
    let rirs: Vec<_> = (0..2)
        .map(|i| synthesize_rir(&RoomSampler::default().sample(&mut rng), format!("r{i}")).unwrap())
        .collect();
    let noise = vec![AudioClip::new("n", (0..5000).map(|_| rng.random_range(-0.5..0.5)).collect())];
    let sources = MixSources {
        clean: &clean,
        rirs: &rirs,
        noises: &noise,
        musics: &noise,
    };
    let dir = tempfile::tempdir().unwrap();
    let recipe = MixRecipe::new(10, 1, 3);
    let rows = build_mixed_dataset(&sources, &recipe, &CorruptionSpec::default(), dir.path()).unwrap();
    assert_eq!(rows.len(), 10);
    let text = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
    let back = read_manifest(std::io::Cursor::new(text)).unwrap();
    assert_eq!(back.len(), rows.len());
    for (b, r) in back.iter().zip(&rows) {
        assert_eq!((&b.id, b.condition, &b.source_id, &b.wav_path, &b.rir_id), (&r.id, r.condition, &r.source_id, &r.wav_path, &r.rir_id));
        // snr is written with six decimals
        assert_eq!(b.snr_db.is_some(), r.snr_db.is_some());
        assert!((b.snr_db.unwrap_or(0.0) - r.snr_db.unwrap_or(0.0)).abs() < 1e-6);
    }
    for r in &rows {
        let clip = read_wav(dir.path().join(&r.wav_path)).unwrap();
        assert_eq!(clip.len(), 3200);
        assert!(clip.peak() <= 1.0);
        assert_eq!(r.snr_db.is_some(), r.condition.noisy());
        assert_eq!(r.rir_id.is_some(), r.condition.reverberant());
    }
}

#[test]
fn sequential_pool_gives_identical_results() {
    let cfg = tiny_demo();
    let corpus = generate_corpus(&cfg).unwrap();
    let one = with_jobs(1, || featurize(&corpus.train).unwrap());
    let all = featurize(&corpus.train).unwrap();
    for (a, b) in one.iter().zip(&all) {
        assert_eq!(a.features.frames, b.features.frames);
        assert_eq!(a.targets, b.targets);
    }
    let rir = &corpus.train_rirs[0];
    let x = &corpus.train[0].clip;
    assert_eq!(with_jobs(1, || reverberate(x, rir).unwrap()), reverberate(x, rir).unwrap());
}
