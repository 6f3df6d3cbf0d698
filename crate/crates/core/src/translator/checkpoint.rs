//! Single-file checkpoint: a tag line, a JSON header, then raw little-endian
//! payload (f32 weights followed by optional f64 optimizer moments).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TranslatorConfig, TranslatorModel};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Group};

pub const CHECKPOINT_TAG: &str = "anodet-ckpt-v1";

/// 64-bit FNV-1a of the canonical JSON form of `cfg`, as hex.
pub fn config_fingerprint(cfg: &TranslatorConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Training progress stored alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSnapshot {
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub adam_generator: AdamState,
    pub adam_discriminator: AdamState,
    /// Free-form training settings echoed for provenance.
    pub settings: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
    group: Group,
}

#[derive(Serialize, Deserialize)]
struct MomentHeader {
    steps: u64,
    sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    step: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    adam_generator: MomentHeader,
    adam_discriminator: MomentHeader,
    settings: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tag: String,
    fingerprint: String,
    config: TranslatorConfig,
    params: Vec<ParamHeader>,
    train: Option<TrainHeader>,
}

pub struct Checkpoint {
    pub model: TranslatorModel<f32>,
    pub train: Option<TrainSnapshot>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let params = self
            .model
            .store
            .iter()
            .map(|p| ParamHeader {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                group: p.group,
            })
            .collect();
        let moments = |s: &AdamState| MomentHeader {
            steps: s.steps,
            sizes: s.m.iter().map(Vec::len).collect(),
        };
        let train = self.train.as_ref().map(|t| TrainHeader {
            step: t.step,
            rng_seed: hex(&t.rng.get_seed()),
            rng_stream: t.rng.get_stream(),
            rng_word_pos: t.rng.get_word_pos().to_string(),
            adam_generator: moments(&t.adam_generator),
            adam_discriminator: moments(&t.adam_discriminator),
            settings: t.settings.clone(),
        });
        let header = Header {
            tag: CHECKPOINT_TAG.to_string(),
            fingerprint: config_fingerprint(self.model.config()),
            config: self.model.config().clone(),
            params,
            train,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        w.write_all(CHECKPOINT_TAG.as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for p in self.model.store.iter() {
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        if let Some(t) = &self.train {
            for s in [&t.adam_generator, &t.adam_discriminator] {
                for buf in s.m.iter().chain(&s.v) {
                    for v in buf {
                        w.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
            }
        }
        w.flush().map_err(io)?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let io = |e| Error::io(path, e);
        let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let mut r = BufReader::new(File::open(path).map_err(io)?);

        let mut tag = vec![0u8; CHECKPOINT_TAG.len() + 1];
        r.read_exact(&mut tag)
            .map_err(|_| bad("file too short for a checkpoint".into()))?;
        if &tag[..CHECKPOINT_TAG.len()] != CHECKPOINT_TAG.as_bytes() || tag[CHECKPOINT_TAG.len()] != b'\n' {
            return Err(bad(format!("missing version tag {CHECKPOINT_TAG}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(bad("header length out of range".into()));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(io)?;
        let header: Header =
            serde_json::from_slice(&header).map_err(|e| bad(format!("bad header: {e}")))?;
        if header.tag != CHECKPOINT_TAG {
            return Err(bad(format!("unsupported version {:?}", header.tag)));
        }
        if header.fingerprint != config_fingerprint(&header.config) {
            return Err(bad("config fingerprint does not match stored config".into()));
        }

        let mut model = TranslatorModel::<f32>::new(header.config.clone(), 0)?;
        if model.store.len() != header.params.len() {
            return Err(bad(format!(
                "expected {} tensors, file has {}",
                model.store.len(),
                header.params.len()
            )));
        }
        for (p, h) in model.store.iter_mut().zip(&header.params) {
            if p.name != h.name || p.value.shape() != h.shape.as_slice() || p.group != h.group {
                return Err(bad(format!("tensor {} does not match architecture", h.name)));
            }
            for v in p.value.data_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(io)?;
                *v = f32::from_le_bytes(b);
            }
        }

        let train = match header.train {
            None => None,
            Some(t) => {
                let mut read_moments = |h: &MomentHeader| -> Result<AdamState> {
                    let mut bufs = Vec::with_capacity(2 * h.sizes.len());
                    for &n in h.sizes.iter().chain(&h.sizes) {
                        let mut buf = vec![0f64; n];
                        for v in buf.iter_mut() {
                            let mut b = [0u8; 8];
                            r.read_exact(&mut b).map_err(io)?;
                            *v = f64::from_le_bytes(b);
                        }
                        bufs.push(buf);
                    }
                    let v = bufs.split_off(h.sizes.len());
                    Ok(AdamState {
                        steps: h.steps,
                        m: bufs,
                        v,
                    })
                };
                let adam_generator = read_moments(&t.adam_generator)?;
                let adam_discriminator = read_moments(&t.adam_discriminator)?;
                let seed: [u8; 32] = unhex(&t.rng_seed)
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(|| bad("bad rng seed".into()))?;
                let word_pos: u128 = t
                    .rng_word_pos
                    .parse()
                    .map_err(|_| bad("bad rng position".into()))?;
                let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
                rng.set_stream(t.rng_stream);
                rng.set_word_pos(word_pos);
                Some(TrainSnapshot {
                    step: t.step,
                    rng,
                    adam_generator,
                    adam_discriminator,
                    settings: t.settings,
                })
            }
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(bad("trailing bytes after payload".into()));
        }
        Ok(Checkpoint { model, train })
    }

    /// Load and insist the stored architecture equals `expected`.
    pub fn load_compatible(path: &Path, expected: &TranslatorConfig) -> Result<Checkpoint> {
        let ck = Self::load(path)?;
        let (got, want) = (config_fingerprint(ck.model.config()), config_fingerprint(expected));
        if got != want {
            return Err(Error::Checkpoint(format!(
                "{}: architecture fingerprint {got} differs from configured {want}",
                path.display()
            )));
        }
        Ok(ck)
    }
}
