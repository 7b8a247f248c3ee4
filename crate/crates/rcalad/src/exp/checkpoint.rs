//! Binary training checkpoints with a JSON sidecar.
//!
//! The binary file opens with the magic `RCAL`, a format version, the
//! config hash, and the step counters, followed by length-prefixed named
//! blocks of little-endian `f64` values: every parameter tensor, every
//! piece of non-trainable state (batch-norm statistics and spectral
//! vectors), both optimizers' moment buffers, and the position of every
//! random stream. That is the complete mutable state of a [`Trainer`], so
//! a restored run continues bit-for-bit as if it had never stopped.
//!
//! The sidecar at `<path>.json` repeats the header metadata and block
//! directory for inspection without a binary parser, and carries the
//! per-epoch loss history, which the binary does not. Wall-clock time is
//! deliberately excluded from both files: checkpoints from identical
//! configs and seeds are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::optim::OptimizerState;
use crate::autodiff::rng::RngStream;
use crate::error::{io_err, Error, Result};
use crate::train::{EpochStats, TrainHistory, Trainer};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RCAL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// The random streams a trainer owns, with the names used for their blocks.
/// Must stay in step with [`crate::train::TrainRngs::visit`]; a test checks
/// that it does.
fn rng_states(t: &Trainer) -> Vec<(&'static str, ([u8; 32], u128))> {
    let r = &t.rngs;
    vec![
        ("latent", r.latent.state()),
        ("sigma", r.sigma.state()),
        ("shuffle", r.shuffle.state()),
        ("drop.enc", r.dropout.enc.state()),
        ("drop.gen", r.dropout.gen.state()),
        ("drop.d_xz", r.dropout.d_xz.state()),
        ("drop.d_xx", r.dropout.d_xx.state()),
        ("drop.d_zz", r.dropout.d_zz.state()),
        ("drop.d_xxzz", r.dropout.d_xxzz.state()),
    ]
}

/// A stream state as a block of 48 values, one byte each: the 32-byte key,
/// then the 16-byte little-endian word position. Keeping everything in the
/// common `f64` block shape makes the file format uniform.
fn encode_rng(key: [u8; 32], pos: u128) -> Vec<f64> {
    key.iter()
        .chain(pos.to_le_bytes().iter())
        .map(|&b| b as f64)
        .collect()
}

fn decode_rng(name: &str, values: &[f64]) -> Result<([u8; 32], u128)> {
    if values.len() != 48 {
        return Err(Error::Invalid(format!(
            "block `{name}` holds {} values, a stream state needs 48",
            values.len()
        )));
    }
    let mut bytes = [0u8; 48];
    for (i, &v) in values.iter().enumerate() {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(Error::Invalid(format!(
                "block `{name}` value {v} at offset {i} is not a byte"
            )));
        }
        bytes[i] = v as u8;
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&bytes[..32]);
    let mut pos = [0u8; 16];
    pos.copy_from_slice(&bytes[32..]);
    Ok((key, u128::from_le_bytes(pos)))
}

/// Everything needed to continue a training run, as named value blocks.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    /// Hash of the experiment config the run was started under; loading
    /// refuses to resume under a different one.
    pub config_hash: String,
    /// Completed optimization steps.
    pub step: u64,
    pub opt_d_t: u64,
    pub opt_eg_t: u64,
    /// `param.*`, `state.*`, `opt_d.*`, `opt_eg.*`, and `rng.*` blocks, in
    /// capture order.
    pub blocks: Vec<(String, Vec<f64>)>,
    /// Per-epoch loss history (sidecar only).
    pub epochs: Vec<EpochStats>,
}

/// Sidecar JSON contents.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    config_hash: String,
    step: u64,
    opt_d_t: u64,
    opt_eg_t: u64,
    blocks: Vec<SidecarBlock>,
    epochs: Vec<EpochStats>,
}

#[derive(Serialize, Deserialize, PartialEq, Eq)]
struct SidecarBlock {
    name: String,
    len: usize,
}

/// The sidecar lives next to the binary with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

impl Checkpoint {
    /// Snapshots a trainer's full mutable state.
    pub fn capture(trainer: &Trainer, config_hash: &str) -> Checkpoint {
        let mut blocks: Vec<(String, Vec<f64>)> = Vec::new();
        trainer
            .bundle
            .visit_params(&mut |name, t| blocks.push((format!("param.{name}"), t.data().to_vec())));
        trainer
            .bundle
            .visit_state(&mut |name, v| blocks.push((format!("state.{name}"), v.to_vec())));
        for (prefix, opt) in [("opt_d", &trainer.opt_d), ("opt_eg", &trainer.opt_eg)] {
            for (name, m, v) in opt.slots() {
                blocks.push((format!("{prefix}.m.{name}"), m.to_vec()));
                blocks.push((format!("{prefix}.v.{name}"), v.to_vec()));
            }
        }
        for (name, (key, pos)) in rng_states(trainer) {
            blocks.push((format!("rng.{name}"), encode_rng(key, pos)));
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            step: trainer.step,
            opt_d_t: trainer.opt_d.t(),
            opt_eg_t: trainer.opt_eg.t(),
            blocks,
            epochs: trainer.history.epochs.clone(),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&CHECKPOINT_MAGIC);
        b.extend_from_slice(&self.version.to_le_bytes());
        let hash = self.config_hash.as_bytes();
        b.extend_from_slice(&(hash.len() as u32).to_le_bytes());
        b.extend_from_slice(hash);
        for v in [self.step, self.opt_d_t, self.opt_eg_t, self.blocks.len() as u64] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for (name, values) in &self.blocks {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    /// Strict parse; any truncation, garbage, or version mismatch is an
    /// error and nothing is returned. The `epochs` field is left empty; the
    /// sidecar supplies it.
    fn from_bytes(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
        let mut c = Cursor { bytes, at: 0 };
        let magic = c.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"));
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!(
                "format version {version} is not supported; this build reads version {CHECKPOINT_VERSION}"
            ));
        }
        let hash_len = c.u32()? as usize;
        let config_hash = String::from_utf8(c.take(hash_len)?.to_vec())
            .map_err(|_| "config hash is not UTF-8".to_string())?;
        let step = c.u64()?;
        let opt_d_t = c.u64()?;
        let opt_eg_t = c.u64()?;
        let n_blocks = c.u64()? as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name_len = c.u32()? as usize;
            let name = String::from_utf8(c.take(name_len)?.to_vec())
                .map_err(|_| "block name is not UTF-8".to_string())?;
            let len = c.u64()? as usize;
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                values.push(c.f64()?);
            }
            blocks.push((name, values));
        }
        if c.at != bytes.len() {
            return Err(format!("{} trailing bytes after the last block", bytes.len() - c.at));
        }
        Ok(Checkpoint {
            version,
            config_hash,
            step,
            opt_d_t,
            opt_eg_t,
            blocks,
            epochs: Vec::new(),
        })
    }

    /// Writes the binary file and its sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| io_err(path, e))?;
        let sidecar = Sidecar {
            format_version: self.version,
            config_hash: self.config_hash.clone(),
            step: self.step,
            opt_d_t: self.opt_d_t,
            opt_eg_t: self.opt_eg_t,
            blocks: self
                .blocks
                .iter()
                .map(|(name, v)| SidecarBlock { name: name.clone(), len: v.len() })
                .collect(),
            epochs: self.epochs.clone(),
        };
        let side = sidecar_path(path);
        let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        json.push('\n');
        std::fs::write(&side, json).map_err(|e| io_err(&side, e))
    }

    /// Reads and cross-checks both files.
    pub fn load(path: &Path) -> Result<Checkpoint> {
        let ck_err = |what: String| Error::Checkpoint {
            path: path.display().to_string(),
            what,
        };
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let mut ck = Checkpoint::from_bytes(&bytes).map_err(ck_err)?;
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|e| ck_err(format!("sidecar: {e}")))?;
        let dir: Vec<SidecarBlock> = ck
            .blocks
            .iter()
            .map(|(name, v)| SidecarBlock { name: name.clone(), len: v.len() })
            .collect();
        if sidecar.format_version != ck.version
            || sidecar.config_hash != ck.config_hash
            || sidecar.step != ck.step
            || sidecar.opt_d_t != ck.opt_d_t
            || sidecar.opt_eg_t != ck.opt_eg_t
            || sidecar.blocks != dir
        {
            return Err(ck_err("sidecar metadata disagrees with the binary".into()));
        }
        ck.epochs = sidecar.epochs;
        Ok(ck)
    }

    /// Restores a trainer to this snapshot. The trainer must have been
    /// built with the same architecture and config; the hash guards the
    /// config, the block names and lengths guard the architecture. All
    /// checks run before the first write, so a failed apply leaves the
    /// trainer untouched.
    pub fn apply(&self, trainer: &mut Trainer, expected_hash: &str) -> Result<()> {
        if self.config_hash != expected_hash {
            return Err(Error::Invalid(format!(
                "written under config hash {}, the current config hashes to {expected_hash}",
                self.config_hash
            )));
        }
        let mut map: BTreeMap<&str, &[f64]> = BTreeMap::new();
        for (n, v) in &self.blocks {
            if map.insert(n.as_str(), v.as_slice()).is_some() {
                return Err(Error::Invalid(format!("duplicate block `{n}`")));
            }
        }

        // Validation pass: the fixed targets (parameters, state, streams)
        // must each have a block of the right length, optimizer blocks must
        // pair up and match their parameter, and nothing may be left over.
        let mut expected: BTreeMap<String, usize> = BTreeMap::new();
        trainer
            .bundle
            .visit_params(&mut |n, t| {
                expected.insert(format!("param.{n}"), t.numel());
            });
        trainer
            .bundle
            .visit_state(&mut |n, v| {
                expected.insert(format!("state.{n}"), v.len());
            });
        for (n, _) in rng_states(trainer) {
            expected.insert(format!("rng.{n}"), 48);
        }
        for (name, want) in &expected {
            match map.get(name.as_str()) {
                None => return Err(Error::Invalid(format!("missing block `{name}`"))),
                Some(v) if v.len() != *want => {
                    return Err(Error::Invalid(format!(
                        "block `{name}` holds {} values, the target needs {want}",
                        v.len()
                    )))
                }
                Some(_) => {}
            }
        }
        for prefix in ["opt_d", "opt_eg"] {
            let mp = format!("{prefix}.m.");
            for name in map.keys().filter(|k| k.starts_with(&mp)) {
                let slot = &name[mp.len()..];
                let want = *expected
                    .get(&format!("param.{slot}"))
                    .ok_or_else(|| Error::Invalid(format!("optimizer block `{name}` has no parameter")))?;
                let vk = format!("{prefix}.v.{slot}");
                for key in [name.to_string(), vk] {
                    let v = map
                        .get(key.as_str())
                        .ok_or_else(|| Error::Invalid(format!("missing block `{key}`")))?;
                    if v.len() != want {
                        return Err(Error::Invalid(format!(
                            "block `{key}` holds {} values, parameter `{slot}` has {want}",
                            v.len()
                        )));
                    }
                }
            }
        }
        for name in map.keys() {
            let known = expected.contains_key(*name)
                || ["opt_d.m.", "opt_d.v.", "opt_eg.m.", "opt_eg.v."]
                    .iter()
                    .any(|p| {
                        name.strip_prefix(p)
                            .is_some_and(|slot| expected.contains_key(&format!("param.{slot}")))
                    });
            if !known {
                return Err(Error::Invalid(format!("unrecognized block `{name}`")));
            }
        }
        let mut streams: BTreeMap<String, ([u8; 32], u128)> = BTreeMap::new();
        for (n, _) in rng_states(trainer) {
            let block = format!("rng.{n}");
            streams.insert(n.to_string(), decode_rng(&block, map[block.as_str()])?);
        }

        // Write pass; nothing below can fail.
        trainer.bundle.visit_params_mut(&mut |n, t| {
            t.data_mut().copy_from_slice(map[format!("param.{n}").as_str()]);
        });
        trainer.bundle.visit_state_mut(&mut |n, s| {
            s.copy_from_slice(map[format!("state.{n}").as_str()]);
        });
        for (prefix, opt, t) in [
            ("opt_d", &mut trainer.opt_d, self.opt_d_t),
            ("opt_eg", &mut trainer.opt_eg, self.opt_eg_t),
        ] {
            *opt = OptimizerState::new();
            let mp = format!("{prefix}.m.");
            let names: Vec<String> =
                map.keys().filter(|k| k.starts_with(&mp)).map(|s| s.to_string()).collect();
            for mk in names {
                let slot = mk[mp.len()..].to_string();
                let m = map[mk.as_str()].to_vec();
                let v = map[format!("{prefix}.v.{slot}").as_str()].to_vec();
                opt.restore_slot(&slot, m, v).expect("lengths validated above");
            }
            opt.set_t(t);
        }
        trainer.rngs.visit(&mut |name, stream| {
            let (key, pos) = streams[name];
            *stream = RngStream::restore(key, pos);
        });
        trainer.step = self.step;
        trainer.history = TrainHistory { epochs: self.epochs.clone(), wall_secs: 0.0 };
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.at + n > self.bytes.len() {
            return Err(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.at,
                self.bytes.len()
            ));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Captures and writes a trainer snapshot in one step.
pub fn save_checkpoint(path: &Path, trainer: &Trainer, config_hash: &str) -> Result<()> {
    Checkpoint::capture(trainer, config_hash).save(path)
}

/// Loads a snapshot into an existing trainer, refusing on a config-hash
/// mismatch or any structural disagreement.
pub fn load_checkpoint(path: &Path, trainer: &mut Trainer, expected_hash: &str) -> Result<()> {
    let ck = Checkpoint::load(path)?;
    ck.apply(trainer, expected_hash).map_err(|e| Error::Checkpoint {
        path: path.display().to_string(),
        what: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::rng::RngStream;
    use crate::autodiff::tensor::Tensor;
    use crate::net::{default_arch, ArchPreset, ModelBundle};
    use crate::train::{TrainConfig, TrainRngs};

    fn toy_trainer(seed: u64) -> Trainer {
        let arch = default_arch(ArchPreset::Toy, 5, 2).unwrap();
        let mut rng = RngStream::from_seed(seed);
        let bundle = ModelBundle::build(&arch, &mut rng).unwrap();
        Trainer::new(bundle, TrainConfig::default(), &rng.substream("run")).unwrap()
    }

    fn random_batch(seed: u64) -> Tensor {
        let mut rng = RngStream::from_seed(seed);
        let mut x = Tensor::zeros(8, 5);
        rng.fill_normal(x.data_mut(), 0.0, 1.0);
        x
    }

    fn param_bits(t: &Trainer) -> Vec<(String, Vec<u64>)> {
        let mut out = Vec::new();
        t.bundle.visit_params(&mut |n, p| {
            out.push((n.to_string(), p.data().iter().map(|v| v.to_bits()).collect()));
        });
        out
    }

    #[test]
    fn manual_stream_list_matches_the_visitor() {
        let mut rngs = TrainRngs::derive(&RngStream::from_seed(1));
        let mut visited = Vec::new();
        rngs.visit(&mut |name, _| visited.push(name.to_string()));
        let t = toy_trainer(1);
        let manual: Vec<String> = rng_states(&t).iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(manual, visited);
    }

    #[test]
    fn rng_block_roundtrip_is_exact() {
        let mut s = RngStream::from_seed(99);
        for _ in 0..7 {
            s.next_f64();
        }
        let (key, pos) = s.state();
        let (k2, p2) = decode_rng("rng.x", &encode_rng(key, pos)).unwrap();
        assert_eq!(key, k2);
        assert_eq!(pos, p2);
        assert!(decode_rng("rng.x", &[0.5; 48]).is_err());
        assert!(decode_rng("rng.x", &[0.0; 47]).is_err());
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = toy_trainer(2);
        let x = random_batch(3);
        for _ in 0..3 {
            t.train_step(&x).unwrap();
        }
        let p1 = dir.path().join("a.rcal");
        save_checkpoint(&p1, &t, "hash-a").unwrap();
        let ck = Checkpoint::load(&p1).unwrap();
        let p2 = dir.path().join("b.rcal");
        ck.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(
            std::fs::read(sidecar_path(&p1)).unwrap(),
            std::fs::read(sidecar_path(&p2)).unwrap()
        );
    }

    #[test]
    fn resume_equals_uninterrupted_training_bitwise() {
        let x = random_batch(4);
        let total = 20;
        let half = 10;

        let mut full = toy_trainer(5);
        for _ in 0..total {
            full.train_step(&x).unwrap();
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.rcal");
        let mut first = toy_trainer(5);
        for _ in 0..half {
            first.train_step(&x).unwrap();
        }
        save_checkpoint(&path, &first, "cfg").unwrap();

        // A trainer from a different seed: everything it starts with must be
        // overwritten by the checkpoint.
        let mut resumed = toy_trainer(1234);
        load_checkpoint(&path, &mut resumed, "cfg").unwrap();
        assert_eq!(resumed.step, half as u64);
        for _ in 0..(total - half) {
            resumed.train_step(&x).unwrap();
        }

        assert_eq!(param_bits(&full), param_bits(&resumed));
        let mut sf = Vec::new();
        full.bundle.visit_state(&mut |n, v| sf.push((n.to_string(), v.to_vec())));
        let mut sr = Vec::new();
        resumed.bundle.visit_state(&mut |n, v| sr.push((n.to_string(), v.to_vec())));
        assert_eq!(sf, sr, "running statistics and spectral vectors must match too");
        assert_eq!(full.step, resumed.step);
        assert_eq!(full.opt_d.t(), resumed.opt_d.t());
    }

    #[test]
    fn history_rides_along_in_the_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = toy_trainer(6);
        t.cfg.max_epochs = 2;
        t.cfg.batch_size = 4;
        let x = random_batch(7);
        t.fit(&x, |_, _| Ok(())).unwrap();
        let path = dir.path().join("h.rcal");
        save_checkpoint(&path, &t, "cfg").unwrap();
        let mut fresh = toy_trainer(7);
        load_checkpoint(&path, &mut fresh, "cfg").unwrap();
        assert_eq!(fresh.history.epochs.len(), 2);
        assert_eq!(fresh.history.epochs[1].epoch, 1);
        assert_eq!(fresh.history.wall_secs, 0.0, "wall clock never enters a checkpoint");
    }

    #[test]
    fn hash_mismatch_refuses_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let t = toy_trainer(8);
        let path = dir.path().join("c.rcal");
        save_checkpoint(&path, &t, "old-hash").unwrap();
        let mut target = toy_trainer(8);
        let err = load_checkpoint(&path, &mut target, "new-hash").unwrap_err();
        assert_eq!(err.code(), "checkpoint");
        assert!(err.to_string().contains("hash"), "{err}");
    }

    #[test]
    fn truncation_anywhere_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = toy_trainer(9);
        let path = dir.path().join("t.rcal");
        save_checkpoint(&path, &t, "cfg").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [0, 3, 4, 7, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(!err.is_empty(), "cut at {cut}");
        }
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(Checkpoint::from_bytes(&padded).unwrap_err().contains("trailing"));
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).unwrap_err().contains("magic"));
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        let msg = Checkpoint::from_bytes(&wrong_version).unwrap_err();
        assert!(msg.contains("version"), "{msg}");
    }

    #[test]
    fn structural_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = toy_trainer(10);
        let path = dir.path().join("s.rcal");
        save_checkpoint(&path, &t, "cfg").unwrap();

        // A trainer over a different architecture must refuse the blocks.
        let arch = default_arch(ArchPreset::Toy, 6, 2).unwrap();
        let mut rng = RngStream::from_seed(11);
        let bundle = ModelBundle::build(&arch, &mut rng).unwrap();
        let mut other =
            Trainer::new(bundle, TrainConfig::default(), &rng.substream("run")).unwrap();
        let err = load_checkpoint(&path, &mut other, "cfg").unwrap_err();
        assert_eq!(err.code(), "checkpoint");

        // Unknown extra blocks are also an error, not silently dropped.
        let mut ck = Checkpoint::load(&path).unwrap();
        ck.blocks.push(("param.phantom".into(), vec![1.0]));
        let mut target = toy_trainer(10);
        let err = ck.apply(&mut target, "cfg").unwrap_err();
        assert!(err.to_string().contains("phantom"), "{err}");
    }

    #[test]
    fn sidecar_disagreement_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = toy_trainer(12);
        let path = dir.path().join("d.rcal");
        save_checkpoint(&path, &t, "cfg").unwrap();
        let side = sidecar_path(&path);
        let text = std::fs::read_to_string(&side).unwrap();
        std::fs::write(&side, text.replace("\"step\": 0", "\"step\": 5")).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert_eq!(err.code(), "checkpoint");
        assert!(err.to_string().contains("sidecar"), "{err}");
    }
}
