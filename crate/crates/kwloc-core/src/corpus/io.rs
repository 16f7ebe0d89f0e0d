//! On-disk corpus layout:
//!   dir/vocab.json                 — keywords and semantic groups
//!   dir/<split>/manifest.jsonl     — one JSON object per utterance
//!   dir/<split>/features/<id>.kwsf — magic "KWSF", u16 version, u32 T,
//!                                    u32 F, then T·F little-endian f32
//! Floats round-trip bit-exactly.

use crate::corpus::{Span, SynthCorpus, Utterance};
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const FEATURE_MAGIC: &[u8; 4] = b"KWSF";
const FEATURE_VERSION: u16 = 1;
pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    frames: usize,
    spans: Vec<Span>,
    /// Indices of present keywords.
    bow: Vec<usize>,
    /// Soft visual scores, length W.
    vis: Vec<f32>,
}

fn write_features(path: &Path, features: &Tensor<f32>) -> Result<()> {
    let (t, f) = features.dims2()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_u16::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u32::<LittleEndian>(t as u32)?;
    w.write_u32::<LittleEndian>(f as u32)?;
    for &v in features.data() {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

fn read_features(path: &Path) -> Result<Tensor<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::CorpusFormat(format!("{}: too short", path.display())))?;
    if &magic != FEATURE_MAGIC {
        return Err(CoreError::CorpusFormat(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| CoreError::CorpusFormat(format!("{}: truncated version", path.display())))?;
    if version != FEATURE_VERSION {
        return Err(CoreError::CorpusFormat(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let t = r.read_u32::<LittleEndian>()? as usize;
    let f = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0f32; t * f];
    for v in data.iter_mut() {
        *v = r.read_f32::<LittleEndian>().map_err(|_| {
            CoreError::CorpusFormat(format!("{}: truncated feature data", path.display()))
        })?;
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(CoreError::CorpusFormat(format!(
            "{}: trailing bytes",
            path.display()
        )));
    }
    Tensor::new(vec![t, f], data)
}

/// Write vocab, manifests, and feature files for all three splits.
pub fn write_corpus(corpus: &SynthCorpus<f32>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let vocab_json = serde_json::to_string_pretty(&corpus.vocab)?;
    fs::write(dir.join("vocab.json"), vocab_json)?;
    for split in SPLITS {
        write_split(corpus.split(split)?, &corpus.vocab, dir, split)?;
    }
    Ok(())
}

pub fn write_split(
    utterances: &[Utterance<f32>],
    vocab: &Vocabulary,
    dir: &Path,
    split: &str,
) -> Result<()> {
    let split_dir = dir.join(split);
    let feat_dir = split_dir.join("features");
    fs::create_dir_all(&feat_dir)?;
    let mut manifest = BufWriter::new(File::create(split_dir.join("manifest.jsonl"))?);
    for utt in utterances {
        let entry = ManifestEntry {
            id: utt.id.clone(),
            frames: utt.frames(),
            spans: utt.spans.clone(),
            bow: (0..vocab.len()).filter(|&k| utt.bow[k]).collect(),
            vis: utt.vis.clone(),
        };
        serde_json::to_writer(&mut manifest, &entry)?;
        manifest.write_all(b"\n")?;
        write_features(&feat_dir.join(format!("{}.kwsf", utt.id)), &utt.features)?;
    }
    manifest.flush()?;
    Ok(())
}

pub fn read_vocab(dir: &Path) -> Result<Vocabulary> {
    let path = dir.join("vocab.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CoreError::CorpusFormat(format!("{}: {e}", path.display())))?;
    let vocab: Vocabulary = serde_json::from_str(&text)?;
    vocab.finalize()
}

pub fn read_split(dir: &Path, split: &str) -> Result<Vec<Utterance<f32>>> {
    let vocab = read_vocab(dir)?;
    read_split_with_vocab(dir, split, &vocab)
}

fn read_split_with_vocab(dir: &Path, split: &str, vocab: &Vocabulary) -> Result<Vec<Utterance<f32>>> {
    let split_dir = dir.join(split);
    let manifest_path = split_dir.join("manifest.jsonl");
    let file = File::open(&manifest_path)
        .map_err(|e| CoreError::CorpusFormat(format!("{}: {e}", manifest_path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            CoreError::CorpusFormat(format!(
                "{} line {}: {e}",
                manifest_path.display(),
                lineno + 1
            ))
        })?;
        let feat_path = split_dir.join("features").join(format!("{}.kwsf", entry.id));
        if !feat_path.exists() {
            return Err(CoreError::CorpusFormat(format!(
                "utterance '{}': missing feature file {}",
                entry.id,
                feat_path.display()
            )));
        }
        let features = read_features(&feat_path)?;
        if features.shape()[0] != entry.frames {
            return Err(CoreError::CorpusFormat(format!(
                "utterance '{}': manifest says {} frames, feature file has {}",
                entry.id,
                entry.frames,
                features.shape()[0]
            )));
        }
        for span in &entry.spans {
            if span.start > span.end || span.end >= entry.frames {
                return Err(CoreError::CorpusFormat(format!(
                    "utterance '{}': span {}..={} outside 0..{}",
                    entry.id, span.start, span.end, entry.frames
                )));
            }
        }
        if entry.vis.len() != vocab.len() {
            return Err(CoreError::CorpusFormat(format!(
                "utterance '{}': {} visual scores for {} keywords",
                entry.id,
                entry.vis.len(),
                vocab.len()
            )));
        }
        let mut bow = vec![false; vocab.len()];
        for &k in &entry.bow {
            if k >= vocab.len() {
                return Err(CoreError::CorpusFormat(format!(
                    "utterance '{}': keyword index {k} out of range",
                    entry.id
                )));
            }
            bow[k] = true;
        }
        out.push(Utterance {
            id: entry.id,
            features,
            spans: entry.spans,
            bow,
            vis: entry.vis,
        });
    }
    Ok(out)
}

#[derive(Debug)]
pub struct DiskCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<Utterance<f32>>,
    pub dev: Vec<Utterance<f32>>,
    pub test: Vec<Utterance<f32>>,
}

impl DiskCorpus {
    pub fn split(&self, name: &str) -> Result<&[Utterance<f32>]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(CoreError::invalid(format!("unknown split '{other}'"))),
        }
    }
}

pub fn read_corpus(dir: &Path) -> Result<DiskCorpus> {
    let vocab = read_vocab(dir)?;
    Ok(DiskCorpus {
        train: read_split_with_vocab(dir, "train", &vocab)?,
        dev: read_split_with_vocab(dir, "dev", &vocab)?,
        test: read_split_with_vocab(dir, "test", &vocab)?,
        vocab,
    })
}
