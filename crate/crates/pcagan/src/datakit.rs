//! Dataset generation and the on-disk container.
//!
//! Pair `i` of a dataset is drawn from `stream(seed, Data, i)`, with the
//! index running over train, then validation, then test. Any pair can be
//! regenerated on its own with [`pair_at`].
//!
//! File layout:
//!
//! ```text
//! b"PCAGDATA" | header length (u32 LE) | JSON header | payload
//! ```
//!
//! The payload is little-endian `f64`, pair by pair in split order, each
//! pair `x` followed by `y`. The header stores the format version, RNG
//! identifier, counts, seed, prior hash, the embedded prior and measurement
//! model, and a SHA-256 of the payload.

use crate::error::{Error, Result};
use crate::gaussian_world::{sample_pair, GaussianPrior, MeasurementModel, FORMAT_VERSION};
use crate::rng::{stream, Domain, RNG_ALGORITHM};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"PCAGDATA";

pub type Pair = (DVector<f64>, DVector<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub prior: GaussianPrior,
    pub mm: MeasurementModel,
    pub seed: u64,
    pub counts: SplitCounts,
    pub train: Vec<Pair>,
    pub val: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl DatasetHandle {
    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn split(&self, which: Split) -> &[Pair] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn prior_hash(&self) -> String {
        self.prior.content_hash()
    }
}

/// The pair at global position `index` (train first, then val, then test).
pub fn pair_at(prior: &GaussianPrior, mm: &MeasurementModel, seed: u64, index: usize) -> Result<Pair> {
    sample_pair(prior, mm, &mut stream(seed, Domain::Data, index as u64))
}

pub fn generate_dataset(
    prior: &GaussianPrior,
    mm: &MeasurementModel,
    counts: SplitCounts,
    seed: u64,
) -> Result<DatasetHandle> {
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(Error::invalid(format!("split counts must be positive, got {counts:?}")));
    }
    crate::error::ensure_dim("measurement model", mm.dim(), prior.dim())?;
    let range = |start: usize, n: usize| -> Result<Vec<Pair>> {
        (start..start + n).map(|i| pair_at(prior, mm, seed, i)).collect()
    };
    Ok(DatasetHandle {
        prior: prior.clone(),
        mm: mm.clone(),
        seed,
        counts,
        train: range(0, counts.train)?,
        val: range(counts.train, counts.val)?,
        test: range(counts.train + counts.val, counts.test)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    rng: String,
    dim: usize,
    counts: SplitCounts,
    seed: u64,
    prior_hash: String,
    prior: serde_json::Value,
    measurement: serde_json::Value,
    payload_len: u64,
    payload_sha256: String,
}

fn payload_bytes(handle: &DatasetHandle) -> Vec<u8> {
    let d = handle.dim();
    let mut out = Vec::with_capacity(handle.counts.total() * 2 * d * 8);
    for (x, y) in handle.train.iter().chain(&handle.val).chain(&handle.test) {
        for v in x.iter().chain(y.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(handle: &DatasetHandle, path: &Path) -> Result<()> {
    let payload = payload_bytes(handle);
    let header = Header {
        format_version: FORMAT_VERSION,
        rng: RNG_ALGORITHM.to_string(),
        dim: handle.dim(),
        counts: handle.counts,
        seed: handle.seed,
        prior_hash: handle.prior_hash(),
        prior: serde_json::from_str(&handle.prior.to_json())?,
        measurement: serde_json::from_str(&handle.mm.to_json())?,
        payload_len: payload.len() as u64,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header.len() as u32).to_le_bytes())?;
    file.write_all(&header)?;
    file.write_all(&payload)?;
    file.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DatasetHandle> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let truncated = |detail: &str| Error::Truncated {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let malformed = |detail: String| Error::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 12 {
        return Err(truncated("shorter than the fixed preamble"));
    }
    if &bytes[..8] != MAGIC {
        return Err(malformed("not a dataset file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(truncated("header cut short"));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&body[..header_len]).map_err(|e| malformed(format!("header: {e}")))?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value).map_err(|e| malformed(format!("header: {e}")))?;
    let payload = &body[header_len..];
    let expected_len = header.counts.total() * 2 * header.dim * 8;
    if header.payload_len as usize != expected_len {
        return Err(malformed(format!(
            "header declares {} payload bytes but the counts need {expected_len}",
            header.payload_len
        )));
    }
    if payload.len() < expected_len {
        return Err(truncated(&format!(
            "payload has {} of {expected_len} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected_len {
        return Err(malformed(format!(
            "{} trailing bytes after the payload",
            payload.len() - expected_len
        )));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    let prior = GaussianPrior::from_json(&header.prior.to_string())?;
    let prior_hash = prior.content_hash();
    if prior_hash != header.prior_hash {
        return Err(Error::HashMismatch {
            what: "embedded prior",
            found: prior_hash,
            expected: header.prior_hash,
        });
    }
    let mm = MeasurementModel::from_json(&header.measurement.to_string())?;
    let d = header.dim;
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<Pair> {
        (0..n)
            .map(|_| {
                let x = DVector::from_iterator(d, values.by_ref().take(d));
                let y = DVector::from_iterator(d, values.by_ref().take(d));
                (x, y)
            })
            .collect()
    };
    let train = take(header.counts.train);
    let val = take(header.counts.val);
    let test = take(header.counts.test);
    Ok(DatasetHandle {
        prior,
        mm,
        seed: header.seed,
        counts: header.counts,
        train,
        val,
        test,
    })
}

/// Loads a dataset and checks that it was generated from `prior`.
pub fn load_expecting(path: &Path, prior: &GaussianPrior) -> Result<DatasetHandle> {
    let handle = load(path)?;
    if handle.dim() != prior.dim() {
        return Err(Error::invalid(format!(
            "{} holds d = {} data but d = {} was requested",
            path.display(),
            handle.dim(),
            prior.dim()
        )));
    }
    let (found, expected) = (handle.prior_hash(), prior.content_hash());
    if found != expected {
        return Err(Error::HashMismatch {
            what: "prior",
            found,
            expected,
        });
    }
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_world::MaskConvention;
    use nalgebra::{DMatrix, DVector};

    fn small() -> DatasetHandle {
        let prior = GaussianPrior::new(
            DVector::from_vec(vec![0.5, -1.0, 0.0, 2.0]),
            DVector::from_vec(vec![1.5, 0.3, 0.9, 0.05]),
            DMatrix::identity(4, 4),
        )
        .unwrap();
        let mm = MeasurementModel::masked_even(4, 1e-3, MaskConvention::ZeroBasedEven).unwrap();
        let counts = SplitCounts {
            train: 5,
            val: 3,
            test: 2,
        };
        generate_dataset(&prior, &mm, counts, 11).unwrap()
    }

    #[test]
    fn pairs_are_position_addressable() {
        let h = small();
        assert_eq!(h.val[1], pair_at(&h.prior, &h.mm, 11, 6).unwrap());
        assert_eq!(h.test[0], pair_at(&h.prior, &h.mm, 11, 8).unwrap());
    }

    #[test]
    fn round_trip_and_integrity() {
        let h = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save(&h, &path).unwrap();
        assert_eq!(load(&path).unwrap(), h);

        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Checksum { .. })));

        std::fs::write(&path, &bytes[..n - 10]).unwrap();
        assert!(matches!(load(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn zero_count_rejected() {
        let h = small();
        let counts = SplitCounts {
            train: 0,
            val: 1,
            test: 1,
        };
        assert!(generate_dataset(&h.prior, &h.mm, counts, 0).is_err());
    }
}
