use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

const FORMAT: &str = "mcis-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct Dims {
    vocab: usize,
    embed: usize,
    hidden: usize,
    audio: usize,
    visual: usize,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    dims: Dims,
    params: ModelParams,
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let doc = Document {
        format: FORMAT.to_string(),
        dims: Dims {
            vocab: params.vocab.len(),
            embed: params.embed_dim(),
            hidden: params.hidden_dim(),
            audio: params.audio_dim(),
            visual: params.visual_dim(),
        },
        params: params.clone(),
    };
    let text = serde_json::to_string(&doc)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::CheckpointError(format!("{}: {e}", path.display())))?;
    let doc: Document = serde_json::from_str(&text)
        .map_err(|e| Error::CheckpointError(format!("{}: {e}", path.display())))?;
    if doc.format != FORMAT {
        return Err(Error::CheckpointError(format!(
            "unsupported format {:?}",
            doc.format
        )));
    }
    let mut params = doc.params;
    params.rebuild_index()?;
    params.check_shapes()?;
    let d = &doc.dims;
    if d.vocab != params.vocab.len()
        || d.embed != params.embed_dim()
        || d.hidden != params.hidden_dim()
        || d.audio != params.audio_dim()
        || d.visual != params.visual_dim()
    {
        return Err(Error::CheckpointError(
            "declared dims disagree with parameter arrays".into(),
        ));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, GeneratorConfig};
    use crate::model::tests::random_params;
    use crate::model::{train, FusionKind, TrainConfig};

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for (seed, fusion) in [(1, FusionKind::Concat), (2, FusionKind::Gated)] {
            let path = dir.path().join(format!("ckpt{seed}.json"));
            let mut p = random_params(seed, fusion);
            p.train_mae = Some(0.123456789);
            save_checkpoint(&p, &path).unwrap();
            let q = load_checkpoint(&path).unwrap();
            assert_eq!(p, q);
            for (a, b) in p.slices().iter().zip(q.slices()) {
                let bits_a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b);
            }
            assert_eq!(q.token_row("good").unwrap(), p.token_row("good").unwrap());
        }
    }

    #[test]
    fn truncated_file_is_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&random_params(3, FusionKind::Concat), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointError(_))
        ));
    }

    #[test]
    fn mismatched_corpus_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let small = |audio_dim| GeneratorConfig {
            n_train: 16,
            n_valid: 4,
            n_test: 4,
            audio_dim,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&small(4), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        save_checkpoint(&train(&corpus, &cfg).unwrap(), &path).unwrap();
        let params = load_checkpoint(&path).unwrap();
        params.check_corpus(&corpus).unwrap();
        let other = generate_corpus(&small(7), 1).unwrap();
        assert!(matches!(
            params.check_corpus(&other),
            Err(Error::SchemaError(_))
        ));
    }
}
