//! Labeled echo samples on disk.
//!
//! The store is a directory holding one sub-directory of WAV files per room
//! and a `manifest.json` that lists every sample with its split tag and
//! content hash. Mutations are serialized through a store-level lock and
//! the manifest is replaced atomically, so readers always see a committed
//! version.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{wav, AudioRecord};
use crate::error::{Error, Result};
use crate::nn::network::mix;
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoomLabel {
    pub label_id: String,
    pub class_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    /// Path relative to the store root.
    pub file: String,
    /// `null` until a split has been assigned.
    pub split: Option<Split>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomEntry {
    pub label_id: String,
    pub class_index: usize,
    pub samples: Vec<SampleRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomManifest {
    pub version: u64,
    pub rooms: Vec<RoomEntry>,
}

impl RoomManifest {
    pub fn labels(&self) -> Vec<RoomLabel> {
        self.rooms
            .iter()
            .map(|r| RoomLabel {
                label_id: r.label_id.clone(),
                class_index: r.class_index,
            })
            .collect()
    }

    pub fn classes(&self) -> usize {
        self.rooms.len()
    }

    pub fn room(&self, label_id: &str) -> Option<&RoomEntry> {
        self.rooms.iter().find(|r| r.label_id == label_id)
    }

    pub fn sample_count(&self) -> usize {
        self.rooms.iter().map(|r| r.samples.len()).sum()
    }

    pub fn count_split(&self, split: Split) -> usize {
        self.rooms
            .iter()
            .flat_map(|r| &r.samples)
            .filter(|s| s.split == Some(split))
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        let mut labels = HashSet::new();
        let mut files = HashSet::new();
        for (i, room) in self.rooms.iter().enumerate() {
            if room.class_index != i {
                return Err(Error::format(
                    "rooms",
                    format!("room `{}` has class index {} at position {i}", room.label_id, room.class_index),
                ));
            }
            if !labels.insert(room.label_id.as_str()) {
                return Err(Error::format("rooms", format!("duplicate label `{}`", room.label_id)));
            }
            for s in &room.samples {
                if !files.insert(s.file.as_str()) {
                    return Err(Error::format("samples", format!("`{}` referenced twice", s.file)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-room sample counts for each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            train: 500,
            val: 250,
            test: 250,
        }
    }
}

impl SplitPolicy {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Half for training, a quarter each for validation and test, with at
    /// least one sample in every split.
    pub fn proportional(available: usize) -> Self {
        let val = (available / 4).max(1);
        let test = (available / 4).max(1);
        Self {
            train: available.saturating_sub(val + test).max(1),
            val,
            test,
        }
    }
}

/// Shuffles each room with a stream derived from `(seed, class_index)` and
/// tags the first `train`, next `val` and next `test` samples. Samples
/// beyond the policy total are left untagged.
pub fn split(manifest: &RoomManifest, policy: &SplitPolicy, seed: u64) -> Result<RoomManifest> {
    split_with(manifest, |_| *policy, seed)
}

/// [`split`] with a policy chosen per room from its sample count.
pub fn split_with(
    manifest: &RoomManifest,
    policy_for: impl Fn(usize) -> SplitPolicy,
    seed: u64,
) -> Result<RoomManifest> {
    let mut out = manifest.clone();
    for room in &mut out.rooms {
        let policy = policy_for(room.samples.len());
        let tags = assign_splits(&room.label_id, room.class_index, room.samples.len(), &policy, seed)?;
        for (s, tag) in room.samples.iter_mut().zip(tags) {
            s.split = tag;
        }
    }
    Ok(out)
}

/// Split tags for the `n` samples of one room: a shuffle seeded by
/// `(seed, class_index)`, then train, val and test counts in that order.
/// Samples beyond the policy total stay untagged.
pub fn assign_splits(
    room: &str,
    class_index: usize,
    n: usize,
    policy: &SplitPolicy,
    seed: u64,
) -> Result<Vec<Option<Split>>> {
    if policy.train == 0 || policy.val == 0 || policy.test == 0 {
        return Err(Error::Policy {
            room: room.to_string(),
            message: "every split needs at least one sample".into(),
        });
    }
    if n < policy.total() {
        return Err(Error::Policy {
            room: room.to_string(),
            message: format!("has {n} samples, policy needs {}", policy.total()),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, class_index as u64)));
    let mut tags = vec![None; n];
    for (rank, &i) in order.iter().enumerate() {
        tags[i] = if rank < policy.train {
            Some(Split::Train)
        } else if rank < policy.train + policy.val {
            Some(Split::Val)
        } else if rank < policy.total() {
            Some(Split::Test)
        } else {
            None
        };
    }
    Ok(tags)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Directory-backed sample store.
pub struct DatasetStore {
    root: PathBuf,
    manifest: RwLock<RoomManifest>,
    writer: Mutex<()>,
}

impl DatasetStore {
    /// Opens (or initializes) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let path = root.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            RoomManifest::from_json(&text)?
        } else {
            RoomManifest::default()
        };
        Ok(Self {
            root,
            manifest: RwLock::new(manifest),
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// The last committed manifest.
    pub fn manifest(&self) -> RoomManifest {
        self.manifest.read().clone()
    }

    fn commit(&self, manifest: RoomManifest) -> Result<RoomManifest> {
        let path = self.root.join(MANIFEST_FILE);
        let tmp = self.root.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, manifest.to_json()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        *self.manifest.write() = manifest.clone();
        Ok(manifest)
    }

    /// Persists labeled records, declaring unknown labels as new classes.
    /// Records whose WAV encoding is already stored for that room are skipped.
    pub fn ingest<T: Scalar>(&self, batch: &[(String, AudioRecord<T>)]) -> Result<RoomManifest> {
        let _guard = self.writer.lock();
        let mut manifest = self.manifest();
        let encoded: Vec<Result<(Vec<u8>, String)>> = batch
            .par_iter()
            .map(|(_, rec)| {
                let bytes = wav::to_bytes(std::slice::from_ref(rec))?;
                let digest = sha256_hex(&bytes);
                Ok((bytes, digest))
            })
            .collect();
        let mut seen: Vec<HashSet<String>> = manifest
            .rooms
            .iter()
            .map(|r| r.samples.iter().map(|s| s.sha256.clone()).collect())
            .collect();
        for ((label, _), enc) in batch.iter().zip(encoded) {
            let (bytes, digest) = enc?;
            let idx = match manifest.rooms.iter().position(|r| &r.label_id == label) {
                Some(i) => i,
                None => {
                    if label.trim().is_empty() {
                        return Err(Error::Argument("room label must not be empty".into()));
                    }
                    let class_index = manifest.rooms.len();
                    manifest.rooms.push(RoomEntry {
                        label_id: label.clone(),
                        class_index,
                        samples: Vec::new(),
                    });
                    seen.push(HashSet::new());
                    class_index
                }
            };
            if !seen[idx].insert(digest.clone()) {
                continue;
            }
            let dir = room_dir(idx, label);
            let rel = format!("{dir}/{}.wav", &digest[..16]);
            let abs = self.root.join(&dir);
            std::fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
            let file = self.root.join(&rel);
            std::fs::write(&file, &bytes).map_err(|e| Error::io(&file, e))?;
            manifest.rooms[idx].samples.push(SampleRef {
                file: rel,
                split: None,
                sha256: digest,
            });
        }
        manifest.version += 1;
        self.commit(manifest)
    }

    /// Decodes WAV bytes (one or more records) and ingests them under one label.
    pub fn ingest_wav(&self, label: &str, bytes: &[u8]) -> Result<RoomManifest> {
        let records: Vec<AudioRecord<f64>> = wav::from_bytes(bytes)?;
        let batch: Vec<_> = records.into_iter().map(|r| (label.to_string(), r)).collect();
        self.ingest(&batch)
    }

    /// Assigns and persists split tags.
    pub fn apply_split(&self, policy: &SplitPolicy, seed: u64) -> Result<RoomManifest> {
        self.apply_split_with(|_| *policy, seed)
    }

    pub fn apply_split_with(&self, policy_for: impl Fn(usize) -> SplitPolicy, seed: u64) -> Result<RoomManifest> {
        let _guard = self.writer.lock();
        let mut next = split_with(&self.manifest(), policy_for, seed)?;
        next.version += 1;
        self.commit(next)
    }

    /// Loads the records tagged `split` (all records when `None`) as
    /// `(class_index, record)` pairs, in manifest order.
    pub fn load<T: Scalar>(&self, split: Option<Split>) -> Result<Vec<(usize, AudioRecord<T>)>> {
        let manifest = self.manifest();
        let wanted: Vec<(usize, &SampleRef)> = manifest
            .rooms
            .iter()
            .flat_map(|r| r.samples.iter().map(move |s| (r.class_index, s)))
            .filter(|(_, s)| split.is_none() || s.split == split)
            .collect();
        wanted
            .par_iter()
            .map(|&(class, s)| {
                let path = self.root.join(&s.file);
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                if sha256_hex(&bytes) != s.sha256 {
                    return Err(Error::format(s.file.as_str(), "content hash does not match the manifest"));
                }
                let mut recs = wav::from_bytes::<T>(&bytes)?;
                if recs.len() != 1 {
                    return Err(Error::format(s.file.as_str(), format!("holds {} records, expected 1", recs.len())));
                }
                Ok((class, recs.pop().expect("one record")))
            })
            .collect()
    }
}

fn room_dir(class_index: usize, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(48)
        .collect();
    format!("{class_index:03}-{clean}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::RECORD_SAMPLES;

    fn record(seed: u64) -> AudioRecord<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        AudioRecord::new(
            (0..RECORD_SAMPLES)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    ((state >> 40) as f64 / (1u64 << 24) as f64 - 0.5) * 0.5
                })
                .collect(),
        )
        .unwrap()
    }

    fn manifest_with(rooms: &[(&str, usize)]) -> RoomManifest {
        RoomManifest {
            version: 1,
            rooms: rooms
                .iter()
                .enumerate()
                .map(|(i, &(label, n))| RoomEntry {
                    label_id: label.into(),
                    class_index: i,
                    samples: (0..n)
                        .map(|j| SampleRef {
                            file: format!("{label}/{j}.wav"),
                            split: None,
                            sha256: format!("{i}-{j}"),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn default_split_is_500_250_250() {
        let m = split(&manifest_with(&[("a", 1000), ("b", 1000)]), &SplitPolicy::default(), 3).unwrap();
        for room in &m.rooms {
            let count = |s| room.samples.iter().filter(|x| x.split == Some(s)).count();
            assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (500, 250, 250));
        }
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let base = manifest_with(&[("a", 1000)]);
        let policy = SplitPolicy::default();
        assert_eq!(split(&base, &policy, 9).unwrap(), split(&base, &policy, 9).unwrap());
        assert_ne!(split(&base, &policy, 9).unwrap(), split(&base, &policy, 10).unwrap());
    }

    #[test]
    fn short_room_is_named_in_policy_error() {
        let err = split(&manifest_with(&[("a", 1000), ("short", 999)]), &SplitPolicy::default(), 0).unwrap_err();
        match err {
            Error::Policy { room, .. } => assert_eq!(room, "short"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_assigns_classes_and_dedups() {
        let dir = tempfile::tempdir().unwrap();
        let store = DatasetStore::open(dir.path()).unwrap();
        let batch: Vec<_> = (0..5).map(|i| ("kitchen".to_string(), record(i))).collect();
        let m1 = store.ingest(&batch).unwrap();
        assert_eq!((m1.classes(), m1.sample_count(), m1.version), (1, 5, 1));

        let m2 = store.ingest(&batch).unwrap();
        assert_eq!(m2.rooms, m1.rooms);
        assert_eq!(m2.version, 2);

        let m3 = store.ingest(&[("lab".to_string(), record(77))]).unwrap();
        assert_eq!(m3.classes(), 2);
        assert_eq!(m3.room("lab").unwrap().class_index, 1);
        assert_eq!(m3.room("kitchen").unwrap().class_index, 0);

        let reopened = DatasetStore::open(dir.path()).unwrap();
        assert_eq!(reopened.manifest(), m3);
        let loaded: Vec<(usize, AudioRecord<f64>)> = reopened.load(None).unwrap();
        assert_eq!(loaded.len(), 6);
        assert_eq!(loaded[5].0, 1);
    }

    #[test]
    fn corrupt_wav_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = DatasetStore::open(dir.path()).unwrap();
        assert!(matches!(store.ingest_wav("x", b"RIFF\0\0\0\0WAVEjunk"), Err(Error::Format { .. })));
        assert_eq!(store.manifest().version, 0);
    }

    #[test]
    fn manifest_json_round_trip() {
        let m = split(&manifest_with(&[("a", 6), ("b", 4)]), &SplitPolicy { train: 2, val: 1, test: 1 }, 1).unwrap();
        let json = m.to_json().unwrap();
        assert_eq!(RoomManifest::from_json(&json).unwrap(), m);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let samples = v["rooms"][0]["samples"].as_array().unwrap();
        assert_eq!(samples.iter().filter(|s| s["split"].is_string()).count(), 4);
        assert_eq!(samples.iter().filter(|s| s["split"].is_null()).count(), 2);
    }

    #[test]
    fn proportional_policy_covers_small_rooms() {
        assert_eq!(SplitPolicy::proportional(500), SplitPolicy { train: 250, val: 125, test: 125 });
        assert_eq!(SplitPolicy::proportional(4), SplitPolicy { train: 2, val: 1, test: 1 });
    }
}
