//! Binary model files.
//!
//! Layout (little-endian): `b"AKDM"`, `u32` format version, the config as
//! six `u64` sizes followed by two `f64` rates, the `u64` vocabulary hash,
//! the `u64` parameter count, a `u64` checksum over all preceding header
//! bytes, then every parameter in declaration order as `f64`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, Seq2SeqModel};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AKDM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 96;
const SIZE_LIMIT: u64 = 1 << 24;

fn header_checksum(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(Sha256::digest(bytes)[..8].try_into().expect("32-byte digest"))
}

impl Seq2SeqModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let c = self.config();
        let mut buf = Vec::with_capacity(HEADER_LEN + self.num_parameters() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [c.hidden_size, c.ffn_size, c.num_layers, c.num_heads, c.max_positions, c.vocab_size] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.extend_from_slice(&c.dropout_rate.to_le_bytes());
        buf.extend_from_slice(&c.label_smoothing.to_le_bytes());
        buf.extend_from_slice(&self.vocab_hash().to_le_bytes());
        buf.extend_from_slice(&(self.num_parameters() as u64).to_le_bytes());
        let sum = header_checksum(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        debug_assert_eq!(buf.len(), HEADER_LEN);
        for p in self.params() {
            for v in p.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let bad = |field: &'static str, reason: String| Error::Format {
            path: path.to_path_buf(),
            field,
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad("header", format!("file has {} bytes, header needs {HEADER_LEN}", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("magic", format!("expected {MAGIC:?}, found {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad("version", format!("expected {FORMAT_VERSION}, found {version}")));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
        const SIZE_FIELDS: [&str; 6] = ["hidden_size", "ffn_size", "num_layers", "num_heads", "max_positions", "vocab_size"];
        let mut sizes = [0usize; 6];
        for (i, name) in SIZE_FIELDS.iter().enumerate() {
            let v = word(i);
            if v == 0 || v > SIZE_LIMIT {
                return Err(bad(name, format!("implausible value {v}")));
            }
            sizes[i] = v as usize;
        }
        let dropout_rate = f64::from_bits(word(6));
        let label_smoothing = f64::from_bits(word(7));
        let config = ModelConfig {
            hidden_size: sizes[0],
            ffn_size: sizes[1],
            num_layers: sizes[2],
            num_heads: sizes[3],
            max_positions: sizes[4],
            vocab_size: sizes[5],
            dropout_rate,
            label_smoothing,
        };
        if config.hidden_size % config.num_heads != 0 {
            return Err(bad("num_heads", format!("{} does not divide hidden_size {}", config.num_heads, config.hidden_size)));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(bad("dropout_rate", format!("{dropout_rate} outside [0, 1)")));
        }
        if !(0.0..1.0).contains(&label_smoothing) {
            return Err(bad("label_smoothing", format!("{label_smoothing} outside [0, 1)")));
        }
        let vocab_hash = word(8);
        let count = word(9);
        let expected = Seq2SeqModel::checked_param_count(&config).map_or(u64::MAX, |c| c as u64);
        if count != expected {
            return Err(bad("param_count", format!("header says {count}, config implies {expected}")));
        }
        let stored = word(10);
        if stored != header_checksum(&bytes[..HEADER_LEN - 8]) {
            return Err(bad("header_checksum", "header bytes do not match their checksum".into()));
        }
        let count = count as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != count as u64 * 8 {
            return Err(bad("parameters", format!("expected {} bytes, found {}", count * 8, payload.len())));
        }
        let template = Seq2SeqModel::init(config.clone(), 0)?;
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let params = template
            .params()
            .iter()
            .map(|p| Tensor::new(p.shape().to_vec(), values.by_ref().take(p.numel()).collect()))
            .collect::<Result<Vec<_>>>()?;
        Seq2SeqModel::from_parts(config, vocab_hash, params)
    }

    /// Loads a model and checks it was built for `vocab`.
    pub fn load_for_vocab(path: &Path, vocab: &crate::corpus::Vocabulary) -> Result<Self> {
        let model = Self::load(path)?;
        if model.config().vocab_size != vocab.len() {
            return Err(Error::Contract(format!(
                "{} was built for {} tokens, vocabulary has {}",
                path.display(),
                model.config().vocab_size,
                vocab.len()
            )));
        }
        if model.vocab_hash() != vocab.content_hash() {
            return Err(Error::VocabMismatch {
                expected: vocab.content_hash(),
                found: model.vocab_hash(),
            });
        }
        Ok(model)
    }
}
