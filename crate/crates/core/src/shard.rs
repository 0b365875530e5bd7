//! Binary shard files for packed sequences plus a JSON index.
//!
//! All integers are little-endian.
//!
//! ```text
//! header:   "XMFS" | version u32 = 1 | max_len u32 | sequence count u32
//! sequence: n u32
//!           token_ids     n x u32
//!           loss_weights  n x f32
//!           segment_ids   n x u16
//!           attention     u8 (0 = causal, 1 = prefix non-causal)
//!           segments      u16, then that many u32 prefix lengths
//! ```
//!
//! Weights are stored as `f32`. Since every weight is determined by the
//! segment layout (0 or `1/T`), the reader checks each stored value against
//! the `f32` rounding of the expected weight and restores the `f64` value, so
//! a write/read cycle reproduces the in-memory sequence exactly.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pack::{assign_loss_weights, AttentionPolicy, PackedSequence};

pub const MAGIC: &[u8; 4] = b"XMFS";
pub const VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, thiserror::Error)]
pub enum ShardError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic in {0}")]
    BadMagic(PathBuf),
    #[error("unsupported shard version {0}")]
    UnsupportedVersion(u32),
    #[error("shard {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("checksum mismatch for {path}: index says {expected}, file hashes to {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("shard size must be positive")]
    ZeroShardSize,
    #[error("sequence of length {len} cannot be stored: {reason}")]
    Unencodable { len: usize, reason: String },
    #[error("decoding index: {0}")]
    Index(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    /// Path relative to the index file.
    pub path: String,
    pub count: usize,
    /// First 8 bytes of the SHA-256 of the shard file, as 16 hex digits.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardIndex {
    pub version: u32,
    pub max_len: usize,
    pub total_sequences: usize,
    pub shards: Vec<ShardEntry>,
}

pub fn checksum64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

fn format_checksum(sum: u64) -> String {
    format!("{sum:016x}")
}

/// Encodes one shard file in memory.
pub fn encode_shard(seqs: &[PackedSequence], max_len: usize) -> Result<Vec<u8>, ShardError> {
    let too_big = |len: usize, what: &str| ShardError::Unencodable {
        len,
        reason: format!("{what} exceeds the u32/u16 range of the format"),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(max_len).map_err(|_| too_big(max_len, "max_len"))?.to_le_bytes());
    out.extend_from_slice(
        &u32::try_from(seqs.len())
            .map_err(|_| too_big(seqs.len(), "sequence count"))?
            .to_le_bytes(),
    );
    for seq in seqs {
        let n = seq.len();
        if seq.loss_weights.len() != n || seq.segment_ids.len() != n {
            return Err(ShardError::Unencodable {
                len: n,
                reason: "parallel lists differ in length".into(),
            });
        }
        out.extend_from_slice(&u32::try_from(n).map_err(|_| too_big(n, "length"))?.to_le_bytes());
        for id in &seq.token_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for w in &seq.loss_weights {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
        for s in &seq.segment_ids {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.push(seq.attention_policy.to_byte());
        let segs = seq.prefix_lengths.len();
        out.extend_from_slice(
            &u16::try_from(segs)
                .map_err(|_| too_big(segs, "segment count"))?
                .to_le_bytes(),
        );
        for p in &seq.prefix_lengths {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ShardError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.corrupt(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn corrupt(&self, reason: String) -> ShardError {
        ShardError::Corrupt {
            path: self.path.to_path_buf(),
            reason,
        }
    }

    fn u8(&mut self) -> Result<u8, ShardError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ShardError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ShardError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ShardError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a shard file. Returns `(max_len, sequences)`.
pub fn decode_shard(bytes: &[u8], path: &Path) -> Result<(usize, Vec<PackedSequence>), ShardError> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(4)? != MAGIC {
        return Err(ShardError::BadMagic(path.to_path_buf()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ShardError::UnsupportedVersion(version));
    }
    let max_len = cur.u32()? as usize;
    let count = cur.u32()? as usize;
    let mut seqs = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = cur.u32()? as usize;
        if n > max_len {
            return Err(cur.corrupt(format!("sequence length {n} exceeds max_len {max_len}")));
        }
        let token_ids = (0..n).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let stored = (0..n).map(|_| cur.f32()).collect::<Result<Vec<_>, _>>()?;
        let segment_ids = (0..n).map(|_| cur.u16()).collect::<Result<Vec<_>, _>>()?;
        let policy_byte = cur.u8()?;
        let attention_policy = AttentionPolicy::from_byte(policy_byte)
            .ok_or_else(|| cur.corrupt(format!("unknown attention policy {policy_byte}")))?;
        let segs = cur.u16()? as usize;
        let prefix_lengths = (0..segs).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let seq = assign_loss_weights(PackedSequence {
            token_ids,
            loss_weights: Vec::new(),
            segment_ids,
            attention_policy,
            prefix_lengths,
        });
        seq.check(max_len).map_err(|e| cur.corrupt(e))?;
        if let Some(i) = (0..n).find(|&i| stored[i].to_bits() != (seq.loss_weights[i] as f32).to_bits()) {
            return Err(cur.corrupt(format!("stored loss weight at position {i} breaks the 1/T law")));
        }
        seqs.push(seq);
    }
    if cur.pos != bytes.len() {
        return Err(cur.corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok((max_len, seqs))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ShardError + '_ {
    move |source| ShardError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn shard_file_name(i: usize) -> String {
    format!("shard-{i:05}.xmfs")
}

/// Writes `seqs` into `dir` as shards of at most `shard_size` sequences and
/// an `index.json`. Returns the index.
pub fn write_shards(
    seqs: &[PackedSequence],
    dir: &Path,
    shard_size: usize,
    max_len: usize,
) -> Result<ShardIndex, ShardError> {
    if shard_size == 0 {
        return Err(ShardError::ZeroShardSize);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut shards = Vec::new();
    for (i, chunk) in seqs.chunks(shard_size).enumerate() {
        let bytes = encode_shard(chunk, max_len)?;
        let name = shard_file_name(i);
        let path = dir.join(&name);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        shards.push(ShardEntry {
            path: name,
            count: chunk.len(),
            checksum: format_checksum(checksum64(&bytes)),
        });
    }
    let index = ShardIndex {
        version: VERSION,
        max_len,
        total_sequences: seqs.len(),
        shards,
    };
    let index_path = dir.join(INDEX_FILE);
    let mut file = fs::File::create(&index_path).map_err(io_err(&index_path))?;
    serde_json::to_writer_pretty(&mut file, &index)?;
    file.write_all(b"\n").map_err(io_err(&index_path))?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<ShardIndex, ShardError> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads every shard listed in `dir/index.json`, verifying checksums and
/// counts, and returns the concatenated sequences.
pub fn read_shards(dir: &Path) -> Result<(ShardIndex, Vec<PackedSequence>), ShardError> {
    let index = read_index(dir)?;
    let mut all = Vec::with_capacity(index.total_sequences);
    for entry in &index.shards {
        let path = dir.join(&entry.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let actual = format_checksum(checksum64(&bytes));
        if actual != entry.checksum {
            return Err(ShardError::ChecksumMismatch {
                path,
                expected: entry.checksum.clone(),
                actual,
            });
        }
        let (max_len, seqs) = decode_shard(&bytes, &path)?;
        if max_len != index.max_len || seqs.len() != entry.count {
            return Err(ShardError::Corrupt {
                path,
                reason: "header disagrees with index".into(),
            });
        }
        all.extend(seqs);
    }
    if all.len() != index.total_sequences {
        return Err(ShardError::Corrupt {
            path: dir.join(INDEX_FILE),
            reason: format!("index total {} but shards hold {}", index.total_sequences, all.len()),
        });
    }
    Ok((index, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::{pack, SeparatorPolicy, SerializedPair};

    fn sequences(count: usize) -> Vec<PackedSequence> {
        let pairs: Vec<_> = (0..count)
            .map(|i| SerializedPair {
                input_ids: vec![i as u32; 1 + i % 3],
                target_ids: vec![1000 + i as u32; 1 + i % 4],
                separator_policy: SeparatorPolicy::Space,
            })
            .collect();
        // Every pair is at most 7 tokens.
        let (seqs, _) = pack(&pairs, 7, AttentionPolicy::PrefixNoncausal).unwrap();
        seqs
    }

    #[test]
    fn empty_input_writes_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let index = write_shards(&[], dir.path(), 16, 8).unwrap();
        assert!(index.shards.is_empty());
        assert_eq!(index.total_sequences, 0);
        let (_, back) = read_shards(dir.path()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn single_sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = sequences(1);
        let index = write_shards(&seqs, dir.path(), 16, 7).unwrap();
        assert_eq!(index.shards.len(), 1);
        let (_, back) = read_shards(dir.path()).unwrap();
        assert_eq!(back, seqs);
    }

    #[test]
    fn header_layout_is_exact() {
        let seq = assign_loss_weights(PackedSequence {
            token_ids: vec![5, 6, 7],
            loss_weights: vec![],
            segment_ids: vec![1, 1, 1],
            attention_policy: AttentionPolicy::Causal,
            prefix_lengths: vec![1],
        });
        let bytes = encode_shard(&[seq], 2048).unwrap();
        let mut expected = b"XMFS".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2048u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&3u32.to_le_bytes());
        for id in [5u32, 6, 7] {
            expected.extend_from_slice(&id.to_le_bytes());
        }
        for w in [0.0f32, 0.5, 0.5] {
            expected.extend_from_slice(&w.to_le_bytes());
        }
        for s in [1u16, 1, 1] {
            expected.extend_from_slice(&s.to_le_bytes());
        }
        expected.push(0);
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn shard_counts_split_by_size() {
        let seq = assign_loss_weights(PackedSequence {
            token_ids: vec![1, 2],
            loss_weights: vec![],
            segment_ids: vec![1, 1],
            attention_policy: AttentionPolicy::Causal,
            prefix_lengths: vec![1],
        });
        let seqs = vec![seq; 10_007];
        let dir = tempfile::tempdir().unwrap();
        let index = write_shards(&seqs, dir.path(), 4096, 4).unwrap();
        let counts: Vec<usize> = index.shards.iter().map(|s| s.count).collect();
        assert_eq!(counts, vec![4096, 4096, 1815]);
        let (read_index, back) = read_shards(dir.path()).unwrap();
        assert_eq!(read_index, index);
        assert_eq!(back.len(), 10_007);
    }

    #[test]
    fn detects_checksum_and_weight_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = sequences(5);
        write_shards(&seqs, dir.path(), 100, 7).unwrap();
        let path = dir.path().join(shard_file_name(0));
        let mut bytes = fs::read(&path).unwrap();

        // Flip a weight: first sequence starts at byte 16, n at 16..20.
        let n = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let w_off = 20 + 4 * n;
        bytes[w_off..w_off + 4].copy_from_slice(&0.75f32.to_le_bytes());
        assert!(matches!(
            decode_shard(&bytes, &path),
            Err(ShardError::Corrupt { .. })
        ));
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_shards(dir.path()),
            Err(ShardError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("mem");
        assert!(matches!(decode_shard(b"NOPE\x01\0\0\0", p), Err(ShardError::BadMagic(_))));
        let bytes = encode_shard(&sequences(3), 7).unwrap();
        assert!(matches!(
            decode_shard(&bytes[..bytes.len() - 1], p),
            Err(ShardError::Corrupt { .. })
        ));
    }

    #[test]
    fn zero_shard_size_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_shards(&[], dir.path(), 0, 8),
            Err(ShardError::ZeroShardSize)
        ));
    }
}
