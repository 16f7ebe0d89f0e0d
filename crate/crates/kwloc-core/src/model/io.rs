//! Model file format: magic "KWLM", u16 version, a canonical JSON block with
//! the config and vocabulary, then named parameter tensors as
//! (u32 name length, UTF-8 name, u8 rank, u32 dims, little-endian f32 data).
//! Save → load → save is byte-identical.

use crate::error::{CoreError, Result};
use crate::model::{KeywordModel, ModelConfig};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"KWLM";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct FileHeader {
    config: ModelConfig,
    vocab: Vocabulary,
}

pub fn save_model(model: &KeywordModel<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    let header = serde_json::to_vec(&FileHeader {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
    })?;
    w.write_u32::<LittleEndian>(header.len() as u32)?;
    w.write_all(&header)?;

    let params = model.named_params();
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for (name, tensor) in params {
        let bytes = name.as_bytes();
        w.write_u32::<LittleEndian>(bytes.len() as u32)?;
        w.write_all(bytes)?;
        w.write_u8(tensor.shape().len() as u8)?;
        for &d in tensor.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in tensor.data() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<KeywordModel<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::ModelFormat("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(CoreError::ModelFormat(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| CoreError::ModelFormat("truncated version field".into()))?;
    if version != VERSION {
        return Err(CoreError::ModelFormat(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let header_len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| CoreError::ModelFormat("truncated header length".into()))?;
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|_| CoreError::ModelFormat("truncated config block".into()))?;
    let header: FileHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| CoreError::ModelFormat(format!("config block: {e}")))?;
    let vocab = header.vocab.finalize()?;
    header.config.validate(vocab.len())?;

    // Skeleton with the right shapes, then fill tensors by name.
    let mut model = KeywordModel::<f32>::init(header.config, vocab, 0)?;
    let expected: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    let shapes: Vec<Vec<usize>> = model
        .named_params()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();

    let n_tensors = r
        .read_u32::<LittleEndian>()
        .map_err(|_| CoreError::ModelFormat("truncated tensor count".into()))?;
    if n_tensors as usize != expected.len() {
        return Err(CoreError::ModelFormat(format!(
            "file has {n_tensors} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut params = model.params_mut();
    for i in 0..n_tensors as usize {
        let name_len = r
            .read_u32::<LittleEndian>()
            .map_err(|_| CoreError::ModelFormat("truncated tensor name length".into()))?;
        let mut name_bytes = vec![0u8; name_len as usize];
        r.read_exact(&mut name_bytes)
            .map_err(|_| CoreError::ModelFormat("truncated tensor name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CoreError::ModelFormat("tensor name is not UTF-8".into()))?;
        if name != expected[i] {
            return Err(CoreError::ModelFormat(format!(
                "tensor {i} is '{name}', expected '{}'",
                expected[i]
            )));
        }
        let rank = r
            .read_u8()
            .map_err(|_| CoreError::ModelFormat("truncated tensor rank".into()))?;
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(
                r.read_u32::<LittleEndian>()
                    .map_err(|_| CoreError::ModelFormat("truncated tensor dims".into()))?
                    as usize,
            );
        }
        if dims != shapes[i] {
            return Err(CoreError::ModelFormat(format!(
                "tensor '{name}' has shape {dims:?}, config implies {:?}",
                shapes[i]
            )));
        }
        let numel: usize = dims.iter().product();
        let mut data = vec![0f32; numel];
        for v in data.iter_mut() {
            *v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| CoreError::ModelFormat(format!("truncated data in '{name}'")))?;
        }
        *params[i] = Tensor::new(dims, data)?;
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(CoreError::ModelFormat("trailing bytes after tensors".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelVariant, Preset};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn sample_model(seed: u64) -> KeywordModel<f32> {
        let vocab = Vocabulary::new(
            (0..5).map(|i| format!("kw{i}")).collect(),
            vec![vec!["kw0".into(), "other".into()]],
        )
        .unwrap();
        let cfg = ModelConfig::preset(Preset::Desk, ModelVariant::CnnAttend, 4, vocab.len());
        KeywordModel::init(cfg, vocab, seed).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.kwlm");
        let p2 = dir.path().join("b.kwlm");
        let model = sample_model(7);
        save_model(&model, &p1).unwrap();
        let loaded = load_model(&p1).unwrap();
        save_model(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kwlm");
        let model = sample_model(3);
        save_model(&model, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        let err = load_model(&p).unwrap_err();
        assert!(matches!(err, CoreError::ModelFormat(_)), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kwlm");
        save_model(&sample_model(3), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_model(&p).is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kwlm");
        save_model(&sample_model(3), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_model(&p).is_err());
    }

    #[test]
    fn detection_identical_after_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kwlm");
        let model = sample_model(11);
        save_model(&model, &p).unwrap();
        let loaded = load_model(&p).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for i in 0..10 {
            let t = rng.gen_range(6..30);
            let x = Tensor::new(
                vec![t, 4],
                (0..t * 4).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            let w = i % 5;
            assert_eq!(
                model.detect_attention(&x, w).unwrap(),
                loaded.detect_attention(&x, w).unwrap()
            );
        }
    }
}
