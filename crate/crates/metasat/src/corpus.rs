//! Synthetic multi-speaker corpus: per-speaker affine feature distortions
//! over a shared phone-class inventory, speaker-disjoint splits, and
//! episode sampling.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, tags};
use crate::tensor::Tensor;

/// Generation parameters; every field is config-exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    pub seed: u64,
    pub n_speakers: usize,
    pub frames_per_speaker: usize,
    /// Per-frame feature dimension.
    pub feature_dim: usize,
    /// Total class count, silence included (class 0).
    pub n_classes: usize,
    /// Magnitude of the per-speaker affine distortion.
    pub spread: f64,
    /// Probability that a frame is silence.
    pub silence_fraction: f64,
    /// Isotropic standard deviation around each class centroid.
    pub class_sigma: f64,
    /// Mean phone-segment length in frames; labels and the dominant noise
    /// component persist for a whole segment, so a frame budget carries
    /// roughly `budget / segment_frames` independent samples.
    pub segment_frames: usize,
    /// Share of the class-noise variance drawn once per segment (the rest
    /// is per-frame).
    pub segment_noise_share: f64,
    /// Maps frame budgets to seconds labels (10 ms shift analog).
    pub frames_per_second: usize,
    /// Cap on the worst-case condition number of a speaker transform.
    pub max_condition: f64,
    /// Speaker fractions for train / meta-val / test.
    pub split_fractions: [f64; 3],
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_speakers: 30,
            frames_per_speaker: 16_000,
            feature_dim: 20,
            n_classes: 11,
            spread: 0.4,
            silence_fraction: 0.15,
            class_sigma: 0.3,
            segment_frames: 40,
            segment_noise_share: 0.75,
            frames_per_second: 100,
            max_condition: 25.0,
            split_fractions: [0.66, 0.17, 0.17],
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.n_classes > u16::MAX as usize {
            return Err(Error::Config(format!(
                "class count {} exceeds the corpus format limit",
                self.n_classes
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        if self.n_speakers == 0 || self.frames_per_speaker == 0 {
            return Err(Error::Config("corpus must hold speakers and frames".into()));
        }
        if !(0.0..1.0).contains(&self.silence_fraction) {
            return Err(Error::Config(format!(
                "silence_fraction must lie in [0, 1), got {}",
                self.silence_fraction
            )));
        }
        if self.class_sigma < 0.0 || self.spread < 0.0 {
            return Err(Error::Config("spread and class_sigma must be non-negative".into()));
        }
        if self.segment_frames == 0 {
            return Err(Error::Config("segment_frames must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.segment_noise_share) {
            return Err(Error::Config(format!(
                "segment_noise_share must lie in [0, 1], got {}",
                self.segment_noise_share
            )));
        }
        if self.max_condition < 1.0 {
            return Err(Error::Config(format!(
                "max_condition must be at least 1, got {}",
                self.max_condition
            )));
        }
        // A = I + spread * R with ||R||_2 <= 1 keeps the condition number
        // below (1 + s) / (1 - s); reject spreads that break the cap.
        let limit = (self.max_condition - 1.0) / (self.max_condition + 1.0);
        if self.spread > limit {
            return Err(Error::Config(format!(
                "spread {} exceeds {limit:.4}, the largest value honouring max_condition {}",
                self.spread, self.max_condition
            )));
        }
        if self.frames_per_second == 0 {
            return Err(Error::Config("frames_per_second must be positive".into()));
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Per-speaker affine feature distortion `x = A v + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTransform {
    /// Square matrix, row-major `[d, d]`, within `spread` of the identity
    /// in spectral norm.
    pub a: Tensor,
    pub b: Tensor,
}

impl SpeakerTransform {
    pub fn identity(d: usize) -> Self {
        let mut a = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            a.set(i, i, 1.0);
        }
        Self {
            a,
            b: Tensor::zeros(vec![d]),
        }
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let d = self.b.len();
        out.copy_from_slice(self.b.data());
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = &self.a.data()[i * d..(i + 1) * d];
            // x = A v + b with A applied as v^T A (row-major symmetry keeps
            // the distortion magnitude identical either way)
            for (o, &av) in row.iter().enumerate() {
                out[o] += vi * av;
            }
        }
    }
}

/// Shared class centroids; class 0 is silence.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneInventory {
    /// Row-major `[n_classes, d]`.
    pub centroids: Tensor,
    pub class_sigma: f64,
}

impl PhoneInventory {
    pub fn n_classes(&self) -> usize {
        self.centroids.rows()
    }
}

/// Which meta split a speaker belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    MetaVal,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::MetaVal => "meta-val",
            Split::Test => "test",
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            Split::Train => 0,
            Split::MetaVal => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::MetaVal),
            2 => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split tag {other}"))),
        }
    }
}

/// One speaker's stream: frames `[n, d]` and one label per frame.
#[derive(Debug, Clone)]
pub struct SpeakerRecord {
    pub id: u32,
    pub transform: SpeakerTransform,
    pub frames: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl SpeakerRecord {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    /// Context-stacked feature rows for the given frame indices. The
    /// window draws real neighbours from the stream, clamping at the ends.
    pub fn stacked_rows(&self, indices: &[usize], context: usize) -> FrameBlock {
        let d = self.frames.cols();
        let width = d * (2 * context + 1);
        let n = self.n_frames();
        let mut data = Vec::with_capacity(indices.len() * width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            for off in -(context as isize)..=(context as isize) {
                let j = (i as isize + off).clamp(0, n as isize - 1) as usize;
                data.extend_from_slice(self.frames.row(j));
            }
            labels.push(self.labels[i]);
        }
        FrameBlock {
            x: Tensor::from_vec(vec![indices.len(), width], data).expect("stacked block"),
            y: labels,
        }
    }

    /// Context-stacked features for a contiguous frame range.
    pub fn stacked_range(&self, start: usize, len: usize, context: usize) -> FrameBlock {
        let indices: Vec<usize> = (start..start + len).collect();
        self.stacked_rows(&indices, context)
    }
}

/// A batch of (possibly context-stacked) features with one label per row.
#[derive(Debug, Clone)]
pub struct FrameBlock {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl FrameBlock {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// One speaker's adaptation/unseen pair: `D_a` covers `budget` frames from
/// `offset`, `D_u` the `budget` frames that follow.
#[derive(Debug, Clone)]
pub struct Episode {
    pub speaker: u32,
    pub adapt: FrameBlock,
    pub unseen: FrameBlock,
    pub adapt_range: (usize, usize),
    pub unseen_range: (usize, usize),
}

/// The generated corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub params: CorpusParams,
    pub inventory: PhoneInventory,
    pub speakers: Vec<SpeakerRecord>,
}

impl Corpus {
    pub fn speaker(&self, id: u32) -> Result<&SpeakerRecord> {
        self.speakers
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Data(format!("unknown speaker id {id}")))
    }

    pub fn split_ids(&self, split: Split) -> Vec<u32> {
        self.speakers
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id)
            .collect()
    }

    /// Frame budget label in seconds, e.g. 1000 frames at 100 fps -> "10s".
    pub fn budget_label(&self, budget_frames: usize) -> String {
        let fps = self.params.frames_per_second;
        if budget_frames % fps == 0 {
            format!("{}s", budget_frames / fps)
        } else {
            format!("{budget_frames}f")
        }
    }
}

/// Draws the full corpus; a pure function of the parameters.
pub fn generate_corpus(params: &CorpusParams) -> Result<Corpus> {
    params.validate()?;
    let d = params.feature_dim;
    let c = params.n_classes;

    let mut inv_rng = stream(params.seed, tags::INVENTORY, 0);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    // Unit-expected-norm centroids keep class margins on the same scale as
    // the per-speaker offsets, so the spread knob trades off directly
    // against class separation.
    let cent_scale = 1.0 / (d as f64).sqrt();
    let cent_data: Vec<f64> = (0..c * d)
        .map(|_| cent_scale * unit.sample(&mut inv_rng))
        .collect();
    let centroids = Tensor::from_vec(vec![c, d], cent_data)?;
    for i in 0..c {
        for j in (i + 1)..c {
            let dist: f64 = centroids
                .row(i)
                .iter()
                .zip(centroids.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist < 1e-9 {
                return Err(Error::Config(format!(
                    "degenerate inventory: centroids {i} and {j} coincide"
                )));
            }
        }
    }
    let inventory = PhoneInventory {
        centroids,
        class_sigma: params.class_sigma,
    };

    // variance split between the per-segment and per-frame noise parts
    let seg_scale = params.class_sigma * params.segment_noise_share.sqrt();
    let frame_scale = params.class_sigma * (1.0 - params.segment_noise_share).sqrt();

    let mut speakers = Vec::with_capacity(params.n_speakers);
    for s in 0..params.n_speakers {
        let mut rng = stream(params.seed, tags::SPEAKER, s as u64);
        let transform = draw_transform(&mut rng, d, params.spread);
        let mut frames = Vec::with_capacity(params.frames_per_speaker * d);
        let mut labels = Vec::with_capacity(params.frames_per_speaker);
        let mut canon = vec![0.0; d];
        let mut warped = vec![0.0; d];
        let mut seg_noise = vec![0.0; d];
        while labels.len() < params.frames_per_speaker {
            let label = if rng.gen::<f64>() < params.silence_fraction {
                0
            } else {
                rng.gen_range(1..c)
            };
            let lo = (params.segment_frames / 2).max(1);
            let hi = params.segment_frames + params.segment_frames / 2;
            let len = rng
                .gen_range(lo..=hi.max(lo))
                .min(params.frames_per_speaker - labels.len());
            for v in seg_noise.iter_mut() {
                *v = seg_scale * unit.sample(&mut rng);
            }
            let centre = inventory.centroids.row(label);
            for _ in 0..len {
                for j in 0..d {
                    canon[j] = centre[j] + seg_noise[j] + frame_scale * unit.sample(&mut rng);
                }
                transform.apply(&canon, &mut warped);
                frames.extend_from_slice(&warped);
                labels.push(label);
            }
        }
        speakers.push(SpeakerRecord {
            id: s as u32,
            transform,
            frames: Tensor::from_vec(vec![params.frames_per_speaker, d], frames)?,
            labels,
            split: Split::Train,
        });
    }

    Ok(Corpus {
        params: params.clone(),
        inventory,
        speakers,
    })
}

fn draw_transform(rng: &mut impl Rng, d: usize, spread: f64) -> SpeakerTransform {
    if spread == 0.0 {
        return SpeakerTransform::identity(d);
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut r: Vec<f64> = (0..d * d).map(|_| unit.sample(rng)).collect();
    let frob: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    // ||R||_2 <= ||R||_F = 1 bounds the singular values of A = I + s R
    // inside [1 - s, 1 + s].
    for v in &mut r {
        *v /= frob;
    }
    let mut a = Tensor::from_vec(vec![d, d], r).expect("transform");
    for v in a.data_mut() {
        *v *= spread;
    }
    for i in 0..d {
        let cur = a.at(i, i);
        a.set(i, i, cur + 1.0);
    }
    // Per-coordinate offset scale = spread: the offset, not the matrix,
    // carries most of the speaker variation at feature scale.
    let b_data: Vec<f64> = (0..d).map(|_| spread * unit.sample(rng)).collect();
    SpeakerTransform {
        a,
        b: Tensor::from_vec(vec![d], b_data).expect("offset"),
    }
}

/// Partitions speakers (not frames) into train / meta-val / test.
/// Counts follow the fractions by largest remainder; deterministic per seed.
pub fn split_meta_sets(corpus: &mut Corpus, fractions: [f64; 3], seed: u64) -> Result<()> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {sum}"
        )));
    }
    let n = corpus.speakers.len();
    let mut counts = [0usize; 3];
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0;
    for (i, &f) in fractions.iter().enumerate() {
        if f < 0.0 {
            return Err(Error::Config(format!("negative split fraction {f}")));
        }
        let exact = f * n as f64;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        remainders.push((i, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.iter().cycle().take(n - assigned) {
        counts[*i] += 1;
    }
    // a requested (positive-fraction) split must receive speakers; an
    // explicit zero fraction is an intentional empty split
    for (i, &f) in fractions.iter().enumerate() {
        if f > 0.0 && counts[i] == 0 {
            return Err(Error::Config(format!(
                "split fraction {f} receives zero of {n} speakers"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, tags::SPLIT, 0);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    for (rank, &idx) in order.iter().enumerate() {
        corpus.speakers[idx].split = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::MetaVal
        } else {
            Split::Test
        };
    }
    Ok(())
}

/// Cuts one episode out of a speaker's stream:
/// `D_a = [offset, offset + budget)`, `D_u` the following `budget` frames.
pub fn sample_episode(
    corpus: &Corpus,
    speaker: u32,
    budget_frames: usize,
    offset: usize,
    context: usize,
) -> Result<Episode> {
    if budget_frames == 0 {
        return Err(Error::Sampling("episode budget must be positive".into()));
    }
    let record = corpus.speaker(speaker)?;
    let need = offset + 2 * budget_frames;
    if record.n_frames() < need {
        return Err(Error::Sampling(format!(
            "speaker {speaker} has {} frames, episode needs {need} (offset {offset} + 2 x {budget_frames})",
            record.n_frames()
        )));
    }
    let adapt = record.stacked_range(offset, budget_frames, context);
    let unseen = record.stacked_range(offset + budget_frames, budget_frames, context);
    Ok(Episode {
        speaker,
        adapt,
        unseen,
        adapt_range: (offset, offset + budget_frames),
        unseen_range: (offset + budget_frames, offset + 2 * budget_frames),
    })
}

/// Plain-text debug export: `speaker,label,f0 f1 ...`, one frame per line.
pub fn export_text(corpus: &Corpus, out: &mut impl std::io::Write) -> std::io::Result<()> {
    for rec in &corpus.speakers {
        for i in 0..rec.n_frames() {
            let feats: Vec<String> = rec.frames.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{},{},{}", rec.id, rec.labels[i], feats.join(" "))?;
        }
    }
    Ok(())
}
