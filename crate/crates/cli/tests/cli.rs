use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wwkit::audio::{write_wav, AudioClip};
use wwkit::demo::{generate_corpus, DemoConfig};

fn wwkit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wwkit"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Run directory printed on stdout by a successful invocation.
fn run_ok(out: &Path, args: &[&str]) -> PathBuf {
    let o = wwkit(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().lines().last().unwrap().trim())
}

fn tone(id: &str, f: f64, n: usize) -> AudioClip {
    AudioClip::new(id, (0..n).map(|i| 0.3 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin()).collect())
}

fn noise(id: &str, seed: u64, n: usize) -> AudioClip {
    let mut s = seed | 1;
    let samples = (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 2001) as f64 / 1000.0 - 1.0
        })
        .map(|v| 0.2 * v)
        .collect();
    AudioClip::new(id, samples)
}

fn write_dir(dir: &Path, clips: &[AudioClip]) {
    fs::create_dir_all(dir).unwrap();
    for c in clips {
        write_wav(c, dir.join(format!("{}.wav", c.id))).unwrap();
    }
}

#[test]
fn augment_scaled_table_row() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let clean: Vec<AudioClip> = (0..5).map(|i| tone(&format!("c{i}"), 300.0 + 100.0 * i as f64, 8000)).collect();
    write_dir(&root.join("clean"), &clean);
    write_dir(&root.join("noise"), &[noise("n0", 3, 12000), noise("n1", 5, 4000)]);
    write_dir(&root.join("music"), &[tone("m0", 440.0, 6000)]);

    let rir_run = run_ok(&root.join("runs"), &["rir-gen", "--set", "rir.count=3", "--set", "rir.max_order=3"]);
    let rirs = rir_run.join("rirs");
    assert_eq!(fs::read_dir(&rirs).unwrap().count(), 3);

    let p = |s: &str| root.join(s).display().to_string();
    let args = [
        "augment".to_string(),
        "--set".into(),
        "augment.recipe=\"200K\"".into(),
        "--set".into(),
        "augment.scale_to=200".into(),
        "--set".into(),
        format!("augment.clean_dir=\"{}\"", p("clean")),
        "--set".into(),
        format!("augment.rir_dir=\"{}\"", rirs.display()),
        "--set".into(),
        format!("augment.noise_dir=\"{}\"", p("noise")),
        "--set".into(),
        format!("augment.music_dir=\"{}\"", p("music")),
    ];
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let run_a = run_ok(&root.join("a"), &args);
    let manifest = fs::read_to_string(run_a.join("manifest.tsv")).unwrap();
    let count = |tag: &str| manifest.lines().filter(|l| l.split('\t').nth(1) == Some(tag)).count();
    assert_eq!(
        (count("CTM"), count("CTM+R"), count("CTM+N"), count("CTM+RN")),
        (20, 60, 60, 60),
        "{}",
        &manifest[..200.min(manifest.len())]
    );
    let run_b = run_ok(&root.join("b"), &args);
    assert_eq!(manifest, fs::read_to_string(run_b.join("manifest.tsv")).unwrap());
    assert_eq!(run_a.file_name(), run_b.file_name());
}

#[test]
fn det_without_inputs_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let kv = format!("decoding.inputs=[\"{}\"]", empty.display());
    let o = wwkit(&tmp.path().join("runs"), &["det", "--set", &kv]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no evaluation inputs"));
}

#[test]
fn out_of_range_theta_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let o = wwkit(&runs, &["mine", "--set", "mining.theta_p=1.01"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("mining.theta_p"), "{err}");
    assert!(!runs.exists(), "no work should start");
}

#[test]
fn unknown_subcommand_and_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wwkit(tmp.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wwkit(tmp.path(), &["train", "--set", "training.list=\"/no/such/list.tsv\""]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("training.list"));
    let o = wwkit(tmp.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_corpus(root: &Path) -> (PathBuf, PathBuf) {
    let cfg = DemoConfig {
        train_utterances: 16,
        test_utterances: 8,
        train_rirs: 1,
        test_rirs: 1,
        ..DemoConfig::default()
    };
    let c = generate_corpus(&cfg).unwrap();
    let wav = root.join("wav");
    fs::create_dir_all(&wav).unwrap();
    let mut lists = Vec::new();
    for (name, set) in [("train", &c.train), ("test", &c.test)] {
        let mut s = String::from("utt_id\twav_path\tpolarity\tstart\tend\n");
        for u in set {
            write_wav(&u.clip, wav.join(format!("{}.wav", u.clip.id))).unwrap();
            let (pol, a, b) = match u.span {
                Some((a, b)) => ("positive", format!("{a:.3}"), format!("{b:.3}")),
                None => ("negative", "-".into(), "-".into()),
            };
            s.push_str(&format!("{}\twav/{}.wav\t{pol}\t{a}\t{b}\n", u.clip.id, u.clip.id));
        }
        let p = root.join(format!("{name}.tsv"));
        fs::write(&p, s).unwrap();
        lists.push(p);
    }
    (lists[0].clone(), lists[1].clone())
}

#[test]
fn train_decode_eval_det_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (train_list, test_list) = write_corpus(root);
    fs::write(
        root.join("pipeline.toml"),
        format!(
            "rng_seed = 3\n[training]\nlist = \"{}\"\nepochs = 2\nhidden = 16\nbottleneck = 8\nblocks = 1\nframe_stride = 2\n",
            train_list.file_name().unwrap().to_string_lossy()
        ),
    )
    .unwrap();
    let config = root.join("pipeline.toml").display().to_string();
    let runs = root.join("runs");
    let train_a = run_ok(&runs, &["train", "--config", &config, "--jobs", "1"]);
    let ckpt = train_a.join("model.ckpt");
    assert!(fs::read_to_string(&ckpt).unwrap().starts_with("wwkit-spotter 1\n"));
    let train_b = run_ok(&root.join("runs2"), &["train", "--config", &config]);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(train_b.join("model.ckpt")).unwrap());

    let model = format!("decoding.model=\"{}\"", ckpt.display());
    let list = format!("decoding.list=\"{}\"", test_list.display());
    let dec = run_ok(&runs, &["decode", "--set", &model, "--set", &list, "--set", "decoding.threshold=0.3"]);
    assert!(dec.join("scores.tsv").is_file());
    assert!(dec.join("detections.tsv").is_file());

    let inputs = format!("decoding.inputs=[\"{}\"]", dec.display());
    let ev = run_ok(&runs, &["eval", "--set", &inputs, "--set", "decoding.threshold=0.3"]);
    let eval = fs::read_to_string(ev.join("eval.tsv")).unwrap();
    let row: Vec<&str> = eval.lines().nth(1).unwrap().split('\t').collect();
    let (tp, fr): (usize, usize) = (row[2].parse().unwrap(), row[3].parse().unwrap());
    assert_eq!(tp + fr, 4, "four positives in the test list");

    let det = run_ok(&runs, &["det", "--set", &inputs]);
    let label = dec.file_name().unwrap().to_string_lossy();
    let csv = fs::read_to_string(det.join(format!("det_{label}.csv"))).unwrap();
    assert!(csv.starts_with("threshold,far_per_hour,frr\n"));
    assert_eq!(csv.lines().count(), 100);
    assert!(fs::read_to_string(det.join("det.svg")).unwrap().contains("<polyline"));

    let feat = run_ok(&runs, &["featurize", "--set", &format!("features.input=\"{}\"", root.join("wav").display())]);
    let index = fs::read_to_string(feat.join("features.tsv")).unwrap();
    assert_eq!(index.lines().count(), 1 + 24);
}

#[test]
fn confusables_then_mine() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(
        root.join("lexicon.txt"),
        "alexa\tAH L EH K S AH\nalexis\tAH L EH K S IH S\nelection\tIH L EH K SH AH N\nbanana\tB AH N AE N AH\n",
    )
    .unwrap();
    let runs = root.join("runs");
    let lex = format!("lexicon.path=\"{}\"", root.join("lexicon.txt").display());
    let conf = run_ok(&runs, &["confusables", "--set", &lex, "--set", "lexicon.d_max=2"]);
    let tsv = fs::read_to_string(conf.join("confusables.tsv")).unwrap();
    assert_eq!(tsv, "alexis\t2\n");

    let hyps = [
        r#"{"utt_id":"u1","audio_path":"a/u1.wav","words":[{"w":"alexa","conf":0.9,"start":0.5,"end":1.0}]}"#,
        r#"{"utt_id":"u2","audio_path":"a/u2.wav","words":[{"w":"alexis","conf":0.8,"start":0.2,"end":0.7}]}"#,
        r#"{"utt_id":"u3","audio_path":"a/u3.wav","words":[{"w":"banana","conf":0.99,"start":0.2,"end":0.7}]}"#,
    ];
    fs::write(root.join("hyps.jsonl"), hyps.join("\n")).unwrap();
    let mine = run_ok(
        &runs,
        &[
            "mine",
            "--set",
            &format!("mining.hypotheses=\"{}\"", root.join("hyps.jsonl").display()),
            "--set",
            &format!("mining.confusables=\"{}\"", conf.join("confusables.tsv").display()),
        ],
    );
    let mined = fs::read_to_string(mine.join("mined.tsv")).unwrap();
    assert_eq!(mined, "u1\tpositive\talexa\t0.500\t1.000\t0.9000\nu2\tnegative\talexis\t0.200\t0.700\t0.8000\n");
    let list = fs::read_to_string(mine.join("train_list.tsv")).unwrap();
    assert!(list.lines().nth(1).unwrap().ends_with("positive\t0.500\t1.000"));
}

#[test]
fn small_demo_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "e2e-demo",
        "--seed",
        "2",
        "--set",
        "demo.train_utterances=24",
        "--set",
        "demo.test_utterances=10",
        "--set",
        "demo.epochs=1",
    ];
    let a = run_ok(&tmp.path().join("a"), &args);
    let b = run_ok(&tmp.path().join("b"), &args);
    for f in ["det_clean.csv", "det_mct.csv", "summary.tsv", "clean.ckpt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
