use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_extxyz, to_extxyz_string, DataError, LabeledFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Split tag per frame: a seeded shuffle of `0..n`, then contiguous blocks
/// of train, validation and test. Counts come from largest remainders, so
/// each is within one of `n · ratio`.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<Vec<Split>, DataError> {
    if ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(DataError::Split(format!("ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::Split(format!("ratios sum to {total}, expected 1")));
    }
    if n < 3 {
        return Err(DataError::Split(format!("{n} frames cannot fill 3 splits")));
    }
    let exact = ratios.map(|r| r * n as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tags = vec![Split::Train; n];
    for (rank, &i) in idx.iter().enumerate() {
        tags[i] = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(tags)
}

/// Frames with split tags and the files (and hashes) they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<LabeledFrame>,
    pub assignment: Vec<Split>,
    pub sources: Vec<ManifestFile>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

/// Tag `frames` by [`split_indices`].
pub fn split(
    frames: Vec<LabeledFrame>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Dataset, DataError> {
    let assignment = split_indices(frames.len(), ratios, seed)?;
    let sources = vec![ManifestFile {
        path: PathBuf::from("<memory>"),
        sha256: sha256_hex(to_extxyz_string(&frames).as_bytes()),
        frames: frames.len(),
    }];
    Ok(Dataset {
        frames,
        assignment,
        sources,
        seed,
        ratios,
    })
}

impl Dataset {
    /// Read and concatenate extended XYZ files, then split.
    pub fn from_files(paths: &[PathBuf], ratios: [f64; 3], seed: u64) -> Result<Self, DataError> {
        let mut frames = Vec::new();
        let mut sources = Vec::new();
        for p in paths {
            let bytes = std::fs::read(p).map_err(|e| DataError::Io(format!("{}: {e}", p.display())))?;
            let part = read_extxyz(p)?;
            sources.push(ManifestFile {
                path: p.clone(),
                sha256: sha256_hex(&bytes),
                frames: part.len(),
            });
            frames.extend(part);
        }
        let mut ds = split(frames, ratios, seed)?;
        ds.sources = sources;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn subset(&self, which: Split) -> Vec<&LabeledFrame> {
        self.frames
            .iter()
            .zip(&self.assignment)
            .filter(|(_, s)| **s == which)
            .map(|(f, _)| f)
            .collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let c = |w| self.assignment.iter().filter(|s| **s == w).count();
        [c(Split::Train), c(Split::Val), c(Split::Test)]
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            seed: self.seed,
            ratios: self.ratios,
            counts: self.counts(),
            files: self.sources.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: PathBuf,
    pub sha256: String,
    pub frames: usize,
}

/// TOML description of how a dataset was assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub counts: [usize; 3],
    pub files: Vec<ManifestFile>,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Parse {
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_toml()).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_extxyz_str;
    use proptest::prelude::*;

    #[test]
    fn exact_division() {
        let tags = split_indices(10, [0.6, 0.2, 0.2], 0).unwrap();
        let c = |w| tags.iter().filter(|t| **t == w).count();
        assert_eq!((c(Split::Train), c(Split::Val), c(Split::Test)), (6, 2, 2));
        assert_eq!(tags, split_indices(10, [0.6, 0.2, 0.2], 0).unwrap());
    }

    #[test]
    fn large_split_counts() {
        let tags = split_indices(800_000, [0.6, 0.2, 0.2], 7).unwrap();
        let c = |w| tags.iter().filter(|t| **t == w).count();
        assert_eq!((c(Split::Train), c(Split::Val), c(Split::Test)), (480_000, 160_000, 160_000));
    }

    #[test]
    fn invalid_requests() {
        assert!(split_indices(2, [0.6, 0.2, 0.2], 0).is_err());
        assert!(split_indices(10, [0.6, 0.5, 0.2], 0).is_err());
        assert!(split_indices(10, [1.0, 0.0, 0.0], 0).is_err());
        assert!(split_indices(10, [1.2, -0.1, -0.1], 0).is_err());
    }

    #[test]
    fn dataset_and_manifest() {
        let text: String = (0..5).map(|k| format!("1\nenergy={k}\nH 0 0 0\n")).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.xyz");
        std::fs::write(&path, &text).unwrap();
        let ds = Dataset::from_files(&[path.clone()], [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(ds.counts(), [3, 1, 1]);
        assert_eq!(ds.subset(Split::Train).len(), 3);
        let m = ds.manifest();
        assert_eq!(m.files[0].sha256, sha256_hex(text.as_bytes()));
        assert_eq!(m.files[0].sha256.len(), 64);
        assert_eq!(DatasetManifest::from_toml(&m.to_toml()).unwrap(), m);
        assert!(DatasetManifest::from_toml("seed = 1\nbogus = 2\n").is_err());
        let mem = split(parse_extxyz_str(&text).unwrap(), [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(mem.assignment, ds.assignment);
        assert!(Dataset::from_files(&[dir.path().join("missing.xyz")], [0.6, 0.2, 0.2], 3).is_err());
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    proptest! {
        #[test]
        fn counts_within_one(n in 3usize..500, a in 0.05f64..0.9, seed in 0u64..50) {
            let b = (1.0 - a) * 0.5;
            let ratios = [a, b, 1.0 - a - b];
            let tags = split_indices(n, ratios, seed).unwrap();
            prop_assert_eq!(tags.len(), n);
            for (w, r) in [Split::Train, Split::Val, Split::Test].into_iter().zip(ratios) {
                let c = tags.iter().filter(|t| **t == w).count() as f64;
                prop_assert!((c - r * n as f64).abs() <= 1.0);
            }
            prop_assert_eq!(&tags, &split_indices(n, ratios, seed).unwrap());
        }
    }
}
