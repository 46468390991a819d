use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{corrupt_with_rng, reverberate, AugmentError, CorruptionSpec, RirFilter};
use crate::audio::{write_wav, AudioClip};

/// The four pooled acoustic conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    /// Clean close-talk audio.
    Ctm,
    /// Reverberated.
    Reverb,
    /// Noise-corrupted.
    Noise,
    /// Reverberated, then corrupted.
    ReverbNoise,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Ctm, Condition::Reverb, Condition::Noise, Condition::ReverbNoise];

    pub fn label(self) -> &'static str {
        match self {
            Condition::Ctm => "CTM",
            Condition::Reverb => "CTM+R",
            Condition::Noise => "CTM+N",
            Condition::ReverbNoise => "CTM+RN",
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Condition::Ctm => "ctm",
            Condition::Reverb => "ctm_r",
            Condition::Noise => "ctm_n",
            Condition::ReverbNoise => "ctm_rn",
        }
    }

    pub fn reverberant(self) -> bool {
        matches!(self, Condition::Reverb | Condition::ReverbNoise)
    }

    pub fn noisy(self) -> bool {
        matches!(self, Condition::Noise | Condition::ReverbNoise)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown condition {s:?}"))
    }
}

/// Per-condition utterance counts of a mixed training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixRecipe {
    /// Nominal size label. Published rows may overshoot it slightly.
    pub total_size: usize,
    pub ctm: usize,
    pub reverb: usize,
    pub noise: usize,
    pub reverb_noise: usize,
}

/// Published multi-condition rows: (size, CTM, CTM+R, CTM+N, CTM+RN).
const TABLE_ROWS: [(usize, usize, usize); 4] = [
    (50_000, 10_000, 14_000),
    (200_000, 20_000, 60_000),
    (350_000, 35_000, 105_000),
    (500_000, 50_000, 150_000),
];

impl MixRecipe {
    pub fn new(total_size: usize, ctm: usize, augmented_each: usize) -> Self {
        MixRecipe {
            total_size,
            ctm,
            reverb: augmented_each,
            noise: augmented_each,
            reverb_noise: augmented_each,
        }
    }

    /// One of the published rows, by nominal size (50K, 200K, 350K, 500K).
    pub fn published(total_size: usize) -> Option<Self> {
        TABLE_ROWS
            .iter()
            .find(|r| r.0 == total_size)
            .map(|&(t, c, a)| MixRecipe::new(t, c, a))
    }

    /// Divides every count by `divisor`; the counts must divide evenly.
    pub fn scaled_down(&self, divisor: usize) -> Result<Self, AugmentError> {
        let fields = [self.total_size, self.ctm, self.reverb, self.noise, self.reverb_noise];
        if divisor == 0 || fields.iter().any(|f| f % divisor != 0) {
            return Err(AugmentError::Recipe(format!("counts do not divide by {divisor}")));
        }
        Ok(MixRecipe {
            total_size: self.total_size / divisor,
            ctm: self.ctm / divisor,
            reverb: self.reverb / divisor,
            noise: self.noise / divisor,
            reverb_noise: self.reverb_noise / divisor,
        })
    }

    /// `total` utterances with `ctm_share` clean and the rest split evenly
    /// over the three augmented conditions.
    pub fn with_clean_share(total: usize, ctm_share: f64) -> Self {
        let ctm = (total as f64 * ctm_share).round() as usize;
        let each = (total - ctm.min(total)) / 3;
        MixRecipe::new(ctm + 3 * each, ctm, each)
    }

    pub fn count(&self, c: Condition) -> usize {
        match c {
            Condition::Ctm => self.ctm,
            Condition::Reverb => self.reverb,
            Condition::Noise => self.noise,
            Condition::ReverbNoise => self.reverb_noise,
        }
    }

    pub fn sum(&self) -> usize {
        self.ctm + self.reverb + self.noise + self.reverb_noise
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.reverb != self.noise || self.noise != self.reverb_noise {
            return Err(AugmentError::Recipe(format!(
                "augmented conditions must have equal counts, got {}/{}/{}",
                self.reverb, self.noise, self.reverb_noise
            )));
        }
        let sum = self.sum();
        if sum == 0 {
            return Err(AugmentError::Recipe("recipe is empty".into()));
        }
        // Published rows can exceed their size label (the 50K row holds 52K).
        if sum < self.total_size || (sum - self.total_size) * 20 > self.total_size {
            return Err(AugmentError::Recipe(format!(
                "counts sum to {sum}, which does not match total_size {}",
                self.total_size
            )));
        }
        Ok(())
    }

    /// Checks the clean share against the available clean pool: repetition
    /// may raise the clean count to at most 10% of the set.
    pub fn validate_against_pool(&self, clean_pool: usize) -> Result<(), AugmentError> {
        self.validate()?;
        if self.ctm > clean_pool && self.ctm * 10 > self.sum() {
            return Err(AugmentError::Recipe(format!(
                "up-sampled clean count {} exceeds 10% of {}",
                self.ctm,
                self.sum()
            )));
        }
        Ok(())
    }
}

/// Source pools for mixing.
#[derive(Debug, Clone, Copy)]
pub struct MixSources<'a> {
    pub clean: &'a [AudioClip],
    pub rirs: &'a [RirFilter],
    pub noises: &'a [AudioClip],
    pub musics: &'a [AudioClip],
}

/// One planned output utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct MixJob {
    pub index: usize,
    pub condition: Condition,
    pub source: usize,
    pub rir: Option<usize>,
    pub noise: Option<usize>,
    pub music: Option<usize>,
    seed: u64,
}

impl MixJob {
    pub fn id(&self) -> String {
        format!("{}-{:06}", self.condition.tag(), self.index)
    }

    fn rng(&self) -> ChaCha8Rng {
        job_rng(self.seed, self.index, 1)
    }
}

fn job_rng(seed: u64, index: usize, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index as u64 + lane);
    rng
}

/// Deterministic job list for a recipe: clean entries cycle through the
/// clean pool; augmented entries pick their sources uniformly.
pub fn plan_mixed_dataset(
    sources: &MixSources<'_>,
    recipe: &MixRecipe,
    spec: &CorruptionSpec,
) -> Result<Vec<MixJob>, AugmentError> {
    recipe.validate_against_pool(sources.clean.len())?;
    spec.validate()?;
    if sources.clean.is_empty() {
        return Err(AugmentError::EmptyPool("clean"));
    }
    if recipe.reverb > 0 && sources.rirs.is_empty() {
        return Err(AugmentError::EmptyPool("rir"));
    }
    let noisy = recipe.noise > 0;
    if noisy && spec.noise_music_split > 0.0 && sources.noises.is_empty() {
        return Err(AugmentError::EmptyPool("noise"));
    }
    if noisy && spec.noise_music_split < 1.0 && sources.musics.is_empty() {
        return Err(AugmentError::EmptyPool("music"));
    }

    let mut jobs = Vec::with_capacity(recipe.sum());
    let mut index = 0;
    for condition in Condition::ALL {
        for i in 0..recipe.count(condition) {
            let mut rng = job_rng(spec.rng_seed, index, 0);
            let (source, rir, noise, music) = if condition == Condition::Ctm {
                (i % sources.clean.len(), None, None, None)
            } else {
                let source = rng.random_range(0..sources.clean.len());
                let rir = condition
                    .reverberant()
                    .then(|| rng.random_range(0..sources.rirs.len()));
                let (noise, music) = if condition.noisy() {
                    let n = (!sources.noises.is_empty()).then(|| rng.random_range(0..sources.noises.len()));
                    let m = (!sources.musics.is_empty()).then(|| rng.random_range(0..sources.musics.len()));
                    (n, m)
                } else {
                    (None, None)
                };
                (source, rir, noise, music)
            };
            jobs.push(MixJob {
                index,
                condition,
                source,
                rir,
                noise,
                music,
                seed: spec.rng_seed,
            });
            index += 1;
        }
    }
    Ok(jobs)
}

/// One rendered utterance and its manifest entry.
#[derive(Debug, Clone)]
pub struct RenderedJob {
    pub clip: AudioClip,
    pub row: ManifestRow,
}

/// Renders one job. The returned row has an empty `wav_path`.
pub fn render_job(
    job: &MixJob,
    sources: &MixSources<'_>,
    spec: &CorruptionSpec,
) -> Result<RenderedJob, AugmentError> {
    let clean = &sources.clean[job.source];
    let mut clip = clean.clone();
    let mut rir_id = None;
    if let Some(r) = job.rir {
        let rir = &sources.rirs[r];
        clip = reverberate(&clip, rir)?;
        rir_id = Some(rir.id.clone());
    }
    let mut snr_db = None;
    if job.condition.noisy() {
        let empty = AudioClip::new("", Vec::new());
        let noise = job.noise.map_or(&empty, |i| &sources.noises[i]);
        let music = job.music.map_or(&empty, |i| &sources.musics[i]);
        let mut rng = job.rng();
        let out = corrupt_with_rng(&clip, noise, music, spec, &mut rng)?;
        snr_db = Some(out.realized_snr_db);
        clip = out.clip;
    }
    let id = job.id();
    clip.id = id.clone();
    Ok(RenderedJob {
        clip,
        row: ManifestRow {
            id,
            condition: job.condition,
            source_id: clean.id.clone(),
            wav_path: PathBuf::new(),
            snr_db,
            rir_id,
        },
    })
}

/// Renders every job and writes `wav/<id>.wav` under `out_dir` plus
/// `manifest.tsv`. WAV paths in the manifest are relative to `out_dir`.
pub fn build_mixed_dataset(
    sources: &MixSources<'_>,
    recipe: &MixRecipe,
    spec: &CorruptionSpec,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>, AugmentError> {
    let jobs = plan_mixed_dataset(sources, recipe, spec)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| AugmentError::Io {
        path: wav_dir.display().to_string(),
        source: e,
    })?;
    let rows: Vec<ManifestRow> = crate::exec::map(&jobs, |job| {
        let mut done = render_job(job, sources, spec)?;
        let rel = PathBuf::from("wav").join(format!("{}.wav", done.row.id));
        write_wav(&done.clip, out_dir.join(&rel))?;
        done.row.wav_path = rel;
        Ok(done.row)
    })
    .into_iter()
    .collect::<Result<_, AugmentError>>()?;
    let path = out_dir.join("manifest.tsv");
    let io = |e| AugmentError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io)?);
    write_manifest(&rows, &mut f).map_err(io)?;
    f.flush().map_err(io)?;
    Ok(rows)
}

/// `id  condition  source_id  wav_path  snr_db|NA  rir_id|NA`
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub condition: Condition,
    pub source_id: String,
    pub wav_path: PathBuf,
    pub snr_db: Option<f64>,
    pub rir_id: Option<String>,
}

pub fn write_manifest(rows: &[ManifestRow], mut w: impl Write) -> std::io::Result<()> {
    for r in rows {
        let snr = r.snr_db.map_or("NA".to_string(), |s| format!("{s:.6}"));
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            r.condition,
            r.source_id,
            r.wav_path.display(),
            snr,
            r.rir_id.as_deref().unwrap_or("NA")
        )?;
    }
    Ok(())
}

pub fn read_manifest(r: impl BufRead) -> Result<Vec<ManifestRow>, AugmentError> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let bad = |msg: String| AugmentError::Manifest { line: line_no, msg };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        let snr_db = match f[4] {
            "NA" => None,
            s => Some(s.parse().map_err(|_| bad(format!("bad snr {s:?}")))?),
        };
        rows.push(ManifestRow {
            id: f[0].to_string(),
            condition: f[1].parse().map_err(bad)?,
            source_id: f[2].to_string(),
            wav_path: PathBuf::from(f[3]),
            snr_db,
            rir_id: (f[5] != "NA").then(|| f[5].to_string()),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pools() -> (Vec<AudioClip>, Vec<RirFilter>, Vec<AudioClip>, Vec<AudioClip>) {
        let clean = (0..10)
            .map(|i| AudioClip::new(format!("c{i}"), (0..800).map(|k| ((k + i) as f64 * 0.05).sin() * 0.3).collect()))
            .collect();
        let rirs = vec![
            RirFilter::new("r0", vec![1.0, 0.0, 0.3]).unwrap(),
            RirFilter::new("r1", vec![0.0, 0.8, 0.2, 0.1]).unwrap(),
        ];
        let noises = vec![AudioClip::new("n0", (0..300).map(|k| ((k * 17 % 11) as f64 - 5.0) / 10.0).collect())];
        let musics = vec![AudioClip::new("m0", (0..2000).map(|k| (k as f64 * 0.3).sin()).collect())];
        (clean, rirs, noises, musics)
    }

    #[test]
    fn published_rows_scale() {
        let r = MixRecipe::published(200_000).unwrap().scaled_down(1000).unwrap();
        assert_eq!((r.ctm, r.reverb, r.noise, r.reverb_noise), (20, 60, 60, 60));
        let r = MixRecipe::published(50_000).unwrap().scaled_down(1000).unwrap();
        assert_eq!((r.ctm, r.reverb, r.noise, r.reverb_noise), (10, 14, 14, 14));
        assert_eq!(r.sum(), 52);
        r.validate().unwrap();
        for size in [50_000, 200_000, 350_000, 500_000] {
            MixRecipe::published(size).unwrap().validate().unwrap();
        }
        assert!(MixRecipe::published(1).is_none());
    }

    #[test]
    fn unequal_augmented_counts_rejected() {
        let r = MixRecipe {
            total_size: 100,
            ctm: 10,
            reverb: 30,
            noise: 31,
            reverb_noise: 29,
        };
        assert!(matches!(r.validate(), Err(AugmentError::Recipe(_))));
        assert!(MixRecipe::new(100, 10, 20).validate().is_err());
    }

    #[test]
    fn clean_upsampling_cap() {
        let r = MixRecipe::new(200, 20, 60);
        r.validate_against_pool(10).unwrap();
        let r = MixRecipe::new(100, 40, 20);
        assert!(r.validate_against_pool(10).is_err());
        r.validate_against_pool(40).unwrap();
    }

    #[test]
    fn plan_counts_and_cycling() {
        let (clean, rirs, noises, musics) = pools();
        let sources = MixSources { clean: &clean, rirs: &rirs, noises: &noises, musics: &musics };
        let recipe = MixRecipe::new(200, 20, 60);
        let jobs = plan_mixed_dataset(&sources, &recipe, &CorruptionSpec::default()).unwrap();
        assert_eq!(jobs.len(), 200);
        for c in Condition::ALL {
            assert_eq!(jobs.iter().filter(|j| j.condition == c).count(), recipe.count(c));
        }
        let ctm: Vec<usize> = jobs.iter().filter(|j| j.condition == Condition::Ctm).map(|j| j.source).collect();
        assert_eq!(ctm, (0..20).map(|i| i % 10).collect::<Vec<_>>());
        for j in &jobs {
            assert_eq!(j.rir.is_some(), j.condition.reverberant());
            assert_eq!(j.noise.is_some(), j.condition.noisy());
        }
    }

    #[test]
    fn empty_pools() {
        let (clean, _, noises, musics) = pools();
        let sources = MixSources { clean: &clean, rirs: &[], noises: &noises, musics: &musics };
        assert!(matches!(
            plan_mixed_dataset(&sources, &MixRecipe::new(200, 20, 60), &CorruptionSpec::default()),
            Err(AugmentError::EmptyPool("rir"))
        ));
        let only_clean = MixRecipe::new(10, 10, 0);
        plan_mixed_dataset(&sources, &only_clean, &CorruptionSpec::default()).unwrap();
    }

    #[test]
    fn build_is_reproducible_and_labels_rows() {
        let (clean, rirs, noises, musics) = pools();
        let sources = MixSources { clean: &clean, rirs: &rirs, noises: &noises, musics: &musics };
        let recipe = MixRecipe::new(50, 10, 14);
        let spec = CorruptionSpec { rng_seed: 5, ..CorruptionSpec::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let rows = build_mixed_dataset(&sources, &recipe, &spec, a.path()).unwrap();
        build_mixed_dataset(&sources, &recipe, &spec, b.path()).unwrap();
        let ma = std::fs::read(a.path().join("manifest.tsv")).unwrap();
        let mb = std::fs::read(b.path().join("manifest.tsv")).unwrap();
        assert_eq!(ma, mb);
        for r in &rows {
            let wa = std::fs::read(a.path().join(&r.wav_path)).unwrap();
            let wb = std::fs::read(b.path().join(&r.wav_path)).unwrap();
            assert_eq!(wa, wb);
            assert_eq!(r.snr_db.is_some(), r.condition.noisy());
            assert_eq!(r.rir_id.is_some(), r.condition.reverberant());
        }
        let back = read_manifest(&ma[..]).unwrap();
        assert_eq!(back.len(), 52);
        assert_eq!(back[0].condition, Condition::Ctm);
        assert_eq!(back[51].condition, Condition::ReverbNoise);
    }
}
