//! Append-only log file with an in-memory key index.
//!
//! File layout: magic `QXAR`, `u16` format version, then records. Each
//! record is `u32` payload length, `u32` CRC32 of the payload, and the
//! payload. A payload is one entry, or op `3`, a `u32` count and that many
//! entries applied atomically. An entry is an op byte (`1` put, `2` delete),
//! `u32` key length, key, and for puts a `u32` value length and the value.
//! On open the file is scanned and cut back to the end of the last intact
//! record.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;

use super::kv::{BatchOp, KvEngine};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QXAR";
pub const LOG_VERSION: u16 = 1;
const HEADER_LEN: u64 = 6;
const FRAME_LEN: usize = 8;
const OP_PUT: u8 = 1;
const OP_DELETE: u8 = 2;
const OP_BATCH: u8 = 3;
/// Buffered bytes that trigger a write to the OS before `flush`.
const SPILL_AT: usize = 1 << 20;

#[derive(Clone, Copy, Debug)]
struct Slot {
    offset: u64,
    len: u32,
}

struct Inner {
    file: File,
    /// Bytes handed to the OS.
    written: u64,
    /// Appended but not yet written.
    pending: Vec<u8>,
    index: BTreeMap<Vec<u8>, Slot>,
    /// Bytes held by superseded or deleted records.
    garbage: u64,
}

/// What `LogEngine::open` found.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub records: u64,
    pub live_keys: usize,
    /// Bytes cut from the tail because they did not form a valid record.
    pub truncated_bytes: u64,
}

pub struct LogEngine {
    path: PathBuf,
    inner: Mutex<Inner>,
    report: RecoveryReport,
}

impl std::fmt::Debug for LogEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogEngine").field("path", &self.path).finish()
    }
}

fn encode_entry(out: &mut Vec<u8>, op: u8, key: &[u8], value: Option<&[u8]>) {
    out.push(op);
    out.extend_from_slice(&(key.len() as u32).to_le_bytes());
    out.extend_from_slice(key);
    if let Some(v) = value {
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        out.extend_from_slice(v);
    }
}

/// Appends one framed record holding `ops` (a batch when more than one).
/// Returns, per op, the value offset relative to the record start.
fn encode_record(out: &mut Vec<u8>, ops: &[(u8, &[u8], Option<&[u8]>)]) -> Vec<u64> {
    let start = out.len();
    out.extend_from_slice(&[0; FRAME_LEN]);
    if ops.len() != 1 {
        out.push(OP_BATCH);
        out.extend_from_slice(&(ops.len() as u32).to_le_bytes());
    }
    let mut rels = Vec::with_capacity(ops.len());
    for &(op, key, value) in ops {
        encode_entry(out, op, key, value);
        rels.push((out.len() - start - value.map_or(0, |v| v.len())) as u64);
    }
    let payload_len = (out.len() - start - FRAME_LEN) as u32;
    let crc = crc32fast::hash(&out[start + FRAME_LEN..]);
    out[start..start + 4].copy_from_slice(&payload_len.to_le_bytes());
    out[start + 4..start + 8].copy_from_slice(&crc.to_le_bytes());
    rels
}

enum Parsed<'a> {
    Put(&'a [u8], u64, u32),
    Delete(&'a [u8]),
}

/// Parses the entry at `at` within `payload`, which starts at file offset
/// `base`.
fn parse_entry(payload: &[u8], at: usize, base: usize) -> Option<(Parsed<'_>, usize)> {
    let u32_at = |i: usize| payload.get(i..i + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize);
    let op = *payload.get(at)?;
    let key_len = u32_at(at + 1)?;
    let key_start = at + 5;
    let key = payload.get(key_start..key_start.checked_add(key_len)?)?;
    let after_key = key_start + key_len;
    match op {
        OP_PUT => {
            let vlen = u32_at(after_key)?;
            let end = (after_key + 4).checked_add(vlen)?;
            if end > payload.len() {
                return None;
            }
            Some((Parsed::Put(key, (base + after_key + 4) as u64, vlen as u32), end))
        }
        OP_DELETE => Some((Parsed::Delete(key), after_key)),
        _ => None,
    }
}

/// Parses one record at `pos`; `None` if it is torn or corrupt.
fn parse_record(buf: &[u8], pos: usize) -> Option<(Vec<Parsed<'_>>, usize)> {
    let frame = buf.get(pos..pos + FRAME_LEN)?;
    let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
    let crc = u32::from_le_bytes(frame[4..].try_into().unwrap());
    let body_start = pos + FRAME_LEN;
    let payload = buf.get(body_start..body_start.checked_add(len)?)?;
    if crc32fast::hash(payload) != crc {
        return None;
    }
    let (count, mut at) = if *payload.first()? == OP_BATCH {
        (u32::from_le_bytes(payload.get(1..5)?.try_into().unwrap()) as usize, 5)
    } else {
        (1, 0)
    };
    let mut out = Vec::with_capacity(count.min(len));
    for _ in 0..count {
        let (p, next) = parse_entry(payload, at, body_start)?;
        out.push(p);
        at = next;
    }
    (at == len).then_some((out, body_start + len))
}

impl LogEngine {
    /// Opens or creates the log at `path`, recovering the longest valid
    /// prefix of records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let io = |e| Error::io(&path, e);
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path).map_err(io)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(io)?;

        if (buf.len() as u64) < HEADER_LEN {
            if !MAGIC.starts_with(&buf[..buf.len().min(4)]) {
                return Err(Error::malformed(0, "not a log file"));
            }
            // empty or torn header: start over
            file.set_len(0).map_err(io)?;
            let mut header = MAGIC.to_vec();
            header.extend_from_slice(&LOG_VERSION.to_le_bytes());
            file.write_all_at(&header, 0).map_err(io)?;
            file.sync_all().map_err(io)?;
            sync_parent(&path)?;
            buf = header;
        }
        if &buf[..4] != MAGIC {
            return Err(Error::malformed(0, "not a log file"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != LOG_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: LOG_VERSION,
            });
        }

        let mut index = BTreeMap::new();
        let mut garbage = 0u64;
        let mut records = 0u64;
        let mut pos = HEADER_LEN as usize;
        while let Some((entries, next)) = parse_record(&buf, pos) {
            records += 1;
            for rec in entries {
            match rec {
                Parsed::Put(key, offset, len) => {
                    if let Some(old) = index.insert(key.to_vec(), Slot { offset, len }) {
                        garbage += u64::from(old.len) + key.len() as u64;
                    }
                }
                Parsed::Delete(key) => {
                    if let Some(old) = index.remove(key) {
                        garbage += u64::from(old.len) + key.len() as u64;
                    }
                }
            }
            }
            pos = next;
        }
        let truncated = (buf.len() - pos) as u64;
        if truncated > 0 {
            tracing::warn!(path = %path.display(), offset = pos, bytes = truncated, "dropping torn log tail");
            file.set_len(pos as u64).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        let report = RecoveryReport {
            records,
            live_keys: index.len(),
            truncated_bytes: truncated,
        };
        Ok(LogEngine {
            path,
            inner: Mutex::new(Inner {
                file,
                written: pos as u64,
                pending: Vec::new(),
                index,
                garbage,
            }),
            report,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn recovery(&self) -> RecoveryReport {
        self.report
    }

    /// Bytes currently in the log, including unflushed appends.
    pub fn size(&self) -> u64 {
        let inner = self.inner.lock();
        inner.written + inner.pending.len() as u64
    }

    pub fn garbage_bytes(&self) -> u64 {
        self.inner.lock().garbage
    }

    /// Rewrites the file with only live records, then swaps it in.
    pub fn compact(&self) -> Result<()> {
        let mut inner = self.inner.lock();
        self.spill(&mut inner)?;
        let tmp = self.path.with_extension("compact");
        let io_tmp = |e| Error::io(&tmp, e);
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&LOG_VERSION.to_le_bytes());
        let mut index = BTreeMap::new();
        for (key, slot) in &inner.index {
            let value = read_slot(&inner.file, *slot, &self.path)?;
            let base = out.len() as u64;
            let rel = encode_record(&mut out, &[(OP_PUT, key, Some(&value))])[0];
            index.insert(key.clone(), Slot { offset: base + rel, len: slot.len });
        }
        {
            let mut f = File::create(&tmp).map_err(io_tmp)?;
            f.write_all(&out).map_err(io_tmp)?;
            f.sync_all().map_err(io_tmp)?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        sync_parent(&self.path)?;
        inner.file = OpenOptions::new().read(true).write(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        inner.written = out.len() as u64;
        inner.index = index;
        inner.garbage = 0;
        Ok(())
    }

    fn spill(&self, inner: &mut Inner) -> Result<()> {
        if inner.pending.is_empty() {
            return Ok(());
        }
        inner
            .file
            .write_all_at(&inner.pending, inner.written)
            .map_err(|e| Error::io(&self.path, e))?;
        inner.written += inner.pending.len() as u64;
        inner.pending.clear();
        Ok(())
    }

    /// Appends `ops` as one record so they survive a crash together.
    fn append(&self, inner: &mut Inner, ops: &[(u8, &[u8], Option<&[u8]>)]) -> Result<()> {
        if ops.is_empty() {
            return Ok(());
        }
        if ops.len() > u32::MAX as usize
            || ops
                .iter()
                .any(|(_, k, v)| k.len() > u32::MAX as usize || v.is_some_and(|v| v.len() > u32::MAX as usize))
        {
            return Err(Error::InvalidParameter("key, value or batch exceeds 4 GiB".into()));
        }
        let base = inner.written + inner.pending.len() as u64;
        let rels = encode_record(&mut inner.pending, ops);
        for (&(_, key, value), rel) in ops.iter().zip(rels) {
            let old = match value {
                Some(v) => inner.index.insert(
                    key.to_vec(),
                    Slot {
                        offset: base + rel,
                        len: v.len() as u32,
                    },
                ),
                None => inner.index.remove(key),
            };
            if let Some(old) = old {
                inner.garbage += u64::from(old.len) + key.len() as u64;
            }
            if value.is_none() {
                inner.garbage += 5 + key.len() as u64;
            }
        }
        if inner.pending.len() >= SPILL_AT {
            self.spill(inner)?;
        }
        Ok(())
    }

    fn read(&self, inner: &Inner, slot: Slot) -> Result<Vec<u8>> {
        if slot.offset >= inner.written {
            let at = (slot.offset - inner.written) as usize;
            return Ok(inner.pending[at..at + slot.len as usize].to_vec());
        }
        read_slot(&inner.file, slot, &self.path)
    }
}

fn read_slot(file: &File, slot: Slot, path: &Path) -> Result<Vec<u8>> {
    let mut out = vec![0u8; slot.len as usize];
    file.read_exact_at(&mut out, slot.offset).map_err(|e| Error::io(path, e))?;
    Ok(out)
}

fn sync_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        File::open(dir).and_then(|d| d.sync_all()).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

impl KvEngine for LogEngine {
    fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        let mut inner = self.inner.lock();
        self.append(&mut inner, &[(OP_PUT, key, Some(value))])
    }

    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        let inner = self.inner.lock();
        match inner.index.get(key) {
            Some(&slot) => self.read(&inner, slot).map(Some),
            None => Ok(None),
        }
    }

    fn delete(&self, key: &[u8]) -> Result<bool> {
        let mut inner = self.inner.lock();
        if !inner.index.contains_key(key) {
            return Ok(false);
        }
        self.append(&mut inner, &[(OP_DELETE, key, None)])?;
        Ok(true)
    }

    fn iterate(&self, prefix: &[u8]) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let inner = self.inner.lock();
        inner
            .index
            .range(prefix.to_vec()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, &slot)| Ok((k.clone(), self.read(&inner, slot)?)))
            .collect()
    }

    fn flush(&self) -> Result<()> {
        let mut inner = self.inner.lock();
        self.spill(&mut inner)?;
        inner.file.sync_data().map_err(|e| Error::io(&self.path, e))
    }

    fn write_batch(&self, ops: &[BatchOp]) -> Result<()> {
        let mut inner = self.inner.lock();
        let mut written: std::collections::HashSet<&[u8]> = std::collections::HashSet::new();
        let mut entries = Vec::with_capacity(ops.len());
        for op in ops {
            match op {
                BatchOp::Put(k, v) => {
                    written.insert(k.as_slice());
                    entries.push((OP_PUT, k.as_slice(), Some(v.as_slice())));
                }
                BatchOp::Delete(k) => {
                    if written.contains(k.as_slice()) || inner.index.contains_key(k.as_slice()) {
                        entries.push((OP_DELETE, k.as_slice(), None));
                    }
                }
            }
        }
        self.append(&mut inner, &entries)
    }
}

impl Drop for LogEngine {
    fn drop(&mut self) {
        let mut inner = self.inner.lock();
        if let Err(e) = self.spill(&mut inner) {
            tracing::error!(error = %e, "failed to write log tail on close");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn snapshot(kv: &LogEngine) -> BTreeMap<Vec<u8>, Vec<u8>> {
        kv.iterate(b"").unwrap().into_iter().collect()
    }

    #[test]
    fn torn_batch_is_dropped_whole() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kv.log");
        let kv = LogEngine::open(&path).unwrap();
        kv.put(b"a", b"1").unwrap();
        kv.flush().unwrap();
        let committed = kv.size();
        kv.write_batch(&[
            BatchOp::Put(b"b".to_vec(), b"2".to_vec()),
            BatchOp::Delete(b"a".to_vec()),
            BatchOp::Put(b"c".to_vec(), vec![7; 40]),
            BatchOp::Delete(b"zz".to_vec()),
        ])
        .unwrap();
        kv.flush().unwrap();
        let full = kv.size();
        let after = snapshot(&kv);
        drop(kv);
        let bytes = fs::read(&path).unwrap();
        let before: BTreeMap<_, _> = [(b"a".to_vec(), b"1".to_vec())].into_iter().collect();
        for cut in committed..=full {
            let p = dir.path().join("cut.log");
            fs::write(&p, &bytes[..cut as usize]).unwrap();
            let kv = LogEngine::open(&p).unwrap();
            assert_eq!(snapshot(&kv), if cut == full { after.clone() } else { before.clone() }, "cut {cut}");
        }
        assert_eq!(after.len(), 2);
    }

    #[test]
    fn random_ops_survive_reopen_and_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kv.log");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut oracle: HashMap<Vec<u8>, Vec<u8>> = HashMap::new();
        let mut kv = LogEngine::open(&path).unwrap();
        for i in 0..10_000 {
            let key = format!("k{}", rng.random_range(0..500)).into_bytes();
            if rng.random_bool(0.2) {
                assert_eq!(kv.delete(&key).unwrap(), oracle.remove(&key).is_some());
            } else {
                let len = rng.random_range(0..64);
                let value: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                kv.put(&key, &value).unwrap();
                oracle.insert(key, value);
            }
            if i % 2500 == 2499 {
                kv.flush().unwrap();
                drop(kv);
                kv = LogEngine::open(&path).unwrap();
                assert_eq!(kv.recovery().truncated_bytes, 0);
            }
        }
        let want: BTreeMap<_, _> = oracle.into_iter().collect();
        assert_eq!(snapshot(&kv), want);
        let before = kv.size();
        kv.compact().unwrap();
        assert!(kv.size() < before);
        assert_eq!(snapshot(&kv), want);
        drop(kv);
        assert_eq!(snapshot(&LogEngine::open(&path).unwrap()), want);
    }

    #[test]
    fn every_cut_of_the_last_record_recovers_the_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kv.log");
        {
            let kv = LogEngine::open(&path).unwrap();
            kv.put(b"a", b"1").unwrap();
            kv.put(b"b", b"22").unwrap();
            kv.flush().unwrap();
        }
        let durable = fs::metadata(&path).unwrap().len();
        {
            let kv = LogEngine::open(&path).unwrap();
            kv.put(b"c", b"333").unwrap();
            kv.flush().unwrap();
        }
        let full = fs::read(&path).unwrap();
        for cut in durable..full.len() as u64 {
            fs::write(&path, &full[..cut as usize]).unwrap();
            let kv = LogEngine::open(&path).unwrap();
            assert_eq!(kv.recovery().truncated_bytes, cut - durable);
            assert_eq!(kv.get(b"c").unwrap(), None, "cut {cut}");
            assert_eq!(kv.get(b"b").unwrap().as_deref(), Some(&b"22"[..]));
            drop(kv);
            assert_eq!(fs::metadata(&path).unwrap().len(), durable);
        }
    }

    #[test]
    fn flipped_byte_stops_recovery_there() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kv.log");
        {
            let kv = LogEngine::open(&path).unwrap();
            kv.put(b"a", b"1").unwrap();
            kv.flush().unwrap();
            kv.put(b"b", b"2").unwrap();
            kv.put(b"c", b"3").unwrap();
        }
        let mut bytes = fs::read(&path).unwrap();
        let second = HEADER_LEN as usize + FRAME_LEN + 1 + 4 + 1 + 4 + 1;
        bytes[second + FRAME_LEN + 2] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        let kv = LogEngine::open(&path).unwrap();
        assert_eq!(kv.recovery().records, 1);
        assert_eq!(kv.iterate(b"").unwrap().len(), 1);
    }

    #[test]
    fn header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kv.log");
        drop(LogEngine::open(&path).unwrap());
        let mut bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len() as u64, HEADER_LEN);
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            LogEngine::open(&path),
            Err(Error::VersionMismatch { found: 9, expected: LOG_VERSION })
        ));
        fs::write(&path, b"garbage!").unwrap();
        assert!(matches!(LogEngine::open(&path), Err(Error::Malformed { .. })));
        fs::write(&path, b"QX").unwrap();
        assert!(LogEngine::open(&path).is_ok());
    }

    #[test]
    fn batch_and_pending_reads() {
        let dir = tempfile::tempdir().unwrap();
        let kv = LogEngine::open(dir.path().join("kv.log")).unwrap();
        kv.write_batch(&[
            BatchOp::Put(b"x".to_vec(), b"1".to_vec()),
            BatchOp::Put(b"y".to_vec(), b"2".to_vec()),
            BatchOp::Delete(b"x".to_vec()),
            BatchOp::Delete(b"nope".to_vec()),
        ])
        .unwrap();
        assert_eq!(kv.get(b"x").unwrap(), None);
        assert_eq!(kv.get(b"y").unwrap().as_deref(), Some(&b"2"[..]));
        kv.flush().unwrap();
        assert_eq!(kv.get(b"y").unwrap().as_deref(), Some(&b"2"[..]));
    }
}
