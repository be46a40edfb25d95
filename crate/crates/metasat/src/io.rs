//! Versioned binary containers for checkpoints and corpora, plus the
//! plain-text schedule files. Byte layouts are documented in
//! `docs/formats.md`; all integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::adapt::Schedule;
use crate::corpus::{Corpus, CorpusParams, PhoneInventory, SpeakerRecord, SpeakerTransform, Split};
use crate::error::{Error, Result};
use crate::layers::RunningStats;
use crate::model::{Model, ModelConfig};
use crate::params::{ParamId, ParamRole, ParamStore};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSATCKPT";
pub const CORPUS_MAGIC: &[u8; 8] = b"MSATCORP";
pub const FORMAT_VERSION: u32 = 1;

/// A persisted model: configuration, running statistics, and weights.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub params: ParamStore,
}

struct Writer<W: Write> {
    inner: W,
    path: String,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::io(self.path.clone(), e))
    }
}

struct Reader<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        for v in &mut out {
            *v = self.f64()?;
        }
        Ok(out)
    }
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::io(self.path.clone(), e))
    }
}

fn open_writer(path: &Path, overwrite: bool) -> Result<Writer<BufWriter<File>>> {
    if !overwrite && path.exists() {
        return Err(Error::Usage(format!(
            "output {} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(Writer {
        inner: BufWriter::new(file),
        path: path.display().to_string(),
    })
}

fn open_reader(path: &Path) -> Result<Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(Reader {
        inner: BufReader::new(file),
        path: path.display().to_string(),
    })
}

fn check_header(r: &mut Reader<impl Read>, magic: &[u8; 8], what: &str) -> Result<()> {
    let mut m = [0u8; 8];
    r.fill(&mut m)?;
    if &m != magic {
        return Err(Error::format(r.path.clone(), format!("not a {what} file")));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            r.path.clone(),
            format!("unsupported {what} version {version}"),
        ));
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint, overwrite: bool) -> Result<()> {
    let mut w = open_writer(path, overwrite)?;
    w.bytes(CHECKPOINT_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    let cfg = &ckpt.model.config;
    w.u32(cfg.input_dim as u32)?;
    w.u32(cfg.hidden.len() as u32)?;
    for &h in &cfg.hidden {
        w.u32(h as u32)?;
    }
    w.u32(cfg.n_classes as u32)?;
    w.u32(cfg.context_frames as u32)?;
    w.u32(cfg.silence_class as u32)?;
    w.f64(cfg.epsilon)?;
    w.f64(cfg.momentum)?;

    w.u32(ckpt.params.len() as u32)?;
    for (id, tensor) in ckpt.params.iter() {
        w.u32(id.layer as u32)?;
        w.u8(id.role.tag())?;
        w.u8(tensor.shape().len() as u8)?;
        for &d in tensor.shape() {
            w.u32(d as u32)?;
        }
        w.f64s(tensor.data())?;
    }

    w.u32(ckpt.model.stats.len() as u32)?;
    for st in &ckpt.model.stats {
        w.u32(st.width() as u32)?;
        w.f64s(st.mean.data())?;
        w.f64s(st.var.data())?;
    }
    w.inner
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = open_reader(path)?;
    check_header(&mut r, CHECKPOINT_MAGIC, "checkpoint")?;
    let input_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    let n_classes = r.u32()? as usize;
    let context_frames = r.u32()? as usize;
    let silence_class = r.u32()? as usize;
    let epsilon = r.f64()?;
    let momentum = r.f64()?;
    let config = ModelConfig {
        input_dim,
        hidden,
        n_classes,
        context_frames,
        silence_class,
        epsilon,
        momentum,
    };
    config.validate()?;

    let n_params = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let layer = r.u32()? as usize;
        let role = ParamRole::from_tag(r.u8()?)?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r.f64s(n)?;
        params.insert(ParamId::new(layer, role), Tensor::from_vec(shape, data)?);
    }

    let n_stats = r.u32()? as usize;
    let mut stats = Vec::with_capacity(n_stats);
    for _ in 0..n_stats {
        let width = r.u32()? as usize;
        let mean = Tensor::from_vec(vec![width], r.f64s(width)?)?;
        let var = Tensor::from_vec(vec![width], r.f64s(width)?)?;
        stats.push(RunningStats { mean, var });
    }
    if n_stats != config.hidden.len() {
        return Err(Error::format(
            path.display().to_string(),
            format!(
                "checkpoint has {} stat layers for {} hidden layers",
                n_stats,
                config.hidden.len()
            ),
        ));
    }
    Ok(Checkpoint {
        model: Model { config, stats },
        params,
    })
}

pub fn write_corpus(path: &Path, corpus: &Corpus, overwrite: bool) -> Result<()> {
    let mut w = open_writer(path, overwrite)?;
    w.bytes(CORPUS_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    let p = &corpus.params;
    w.u64(p.seed)?;
    w.u32(p.n_speakers as u32)?;
    w.u32(p.frames_per_speaker as u32)?;
    w.u32(p.feature_dim as u32)?;
    w.u32(p.n_classes as u32)?;
    w.f64(p.spread)?;
    w.f64(p.silence_fraction)?;
    w.f64(p.class_sigma)?;
    w.u32(p.segment_frames as u32)?;
    w.f64(p.segment_noise_share)?;
    w.u32(p.frames_per_second as u32)?;
    w.f64(p.max_condition)?;
    for &f in &p.split_fractions {
        w.f64(f)?;
    }
    w.f64s(corpus.inventory.centroids.data())?;
    for rec in &corpus.speakers {
        w.u32(rec.id)?;
        w.u8(rec.split.tag())?;
        w.f64s(rec.transform.a.data())?;
        w.f64s(rec.transform.b.data())?;
        w.u32(rec.n_frames() as u32)?;
        for &l in &rec.labels {
            w.bytes(&(l as u16).to_le_bytes())?;
        }
        w.f64s(rec.frames.data())?;
    }
    w.inner
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let mut r = open_reader(path)?;
    check_header(&mut r, CORPUS_MAGIC, "corpus")?;
    let seed = r.u64()?;
    let n_speakers = r.u32()? as usize;
    let frames_per_speaker = r.u32()? as usize;
    let feature_dim = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    let spread = r.f64()?;
    let silence_fraction = r.f64()?;
    let class_sigma = r.f64()?;
    let segment_frames = r.u32()? as usize;
    let segment_noise_share = r.f64()?;
    let frames_per_second = r.u32()? as usize;
    let max_condition = r.f64()?;
    let split_fractions = [r.f64()?, r.f64()?, r.f64()?];
    let params = CorpusParams {
        seed,
        n_speakers,
        frames_per_speaker,
        feature_dim,
        n_classes,
        spread,
        silence_fraction,
        class_sigma,
        segment_frames,
        segment_noise_share,
        frames_per_second,
        max_condition,
        split_fractions,
    };
    params.validate()?;
    let centroids = Tensor::from_vec(
        vec![n_classes, feature_dim],
        r.f64s(n_classes * feature_dim)?,
    )?;
    let inventory = PhoneInventory {
        centroids,
        class_sigma,
    };
    let mut speakers = Vec::with_capacity(n_speakers);
    for _ in 0..n_speakers {
        let id = r.u32()?;
        let split = Split::from_tag(r.u8()?)?;
        let a = Tensor::from_vec(vec![feature_dim, feature_dim], r.f64s(feature_dim * feature_dim)?)?;
        let b = Tensor::from_vec(vec![feature_dim], r.f64s(feature_dim)?)?;
        let n_frames = r.u32()? as usize;
        let mut labels = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let mut b2 = [0u8; 2];
            r.fill(&mut b2)?;
            let l = u16::from_le_bytes(b2) as usize;
            if l >= n_classes {
                return Err(Error::format(
                    path.display().to_string(),
                    format!("label {l} outside {n_classes} classes"),
                ));
            }
            labels.push(l);
        }
        let frames = Tensor::from_vec(vec![n_frames, feature_dim], r.f64s(n_frames * feature_dim)?)?;
        speakers.push(SpeakerRecord {
            id,
            transform: SpeakerTransform { a, b },
            frames,
            labels,
            split,
        });
    }
    Ok(Corpus {
        params,
        inventory,
        speakers,
    })
}

/// Writes a schedule with `# key = value` header metadata.
pub fn write_schedule(
    path: &Path,
    schedule: &Schedule,
    header: &[(String, String)],
    overwrite: bool,
) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::Usage(format!(
            "output {} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    std::fs::write(path, schedule.to_text(header))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_schedule(path: &Path) -> Result<(Schedule, Vec<(String, String)>)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Schedule::from_text(&text).map_err(|e| match e {
        Error::Config(msg) => Error::format(path.display().to_string(), msg),
        other => other,
    })
}
