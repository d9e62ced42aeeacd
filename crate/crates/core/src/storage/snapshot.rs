//! Serialized index plus quantizer state.
//!
//! Layout: magic `QXAR`, `u16` version, kind byte `S`, `u64` generation,
//! metric byte, `u32` dim, index tag (`0` flat, `1` hnsw) and body,
//! quantizer tag (`0` none, `1` pq, `2` bq) and body, then a CRC32 of all
//! preceding bytes. Quantized codes are not stored; they are recomputed
//! from the vectors on load.

use crate::distance::DistanceKernel;
use crate::error::{Error, Result};
use crate::index::{FlatIndex, HnswIndex, HnswParams, Index};
use crate::quantization::{HyperplaneSet, PqCodebook, Quantizer};
use crate::storage::codec::{ByteReader, ByteWriter};
use crate::storage::log::MAGIC;
use crate::types::DistanceMetric;

pub const SNAPSHOT_VERSION: u16 = 1;
const KIND: u8 = b'S';

#[derive(Clone, Debug)]
pub struct Snapshot {
    /// Collection generation the snapshot was taken at.
    pub generation: u64,
    pub index: Index,
    pub quantizer: Option<Quantizer>,
}

pub fn snapshot_index(index: &Index, quantizer: Option<&Quantizer>, generation: u64) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u16(SNAPSHOT_VERSION);
    w.u8(KIND);
    w.u64(generation);
    w.u8(index.metric().as_u8());
    w.u32(index.dim() as u32);
    match index {
        Index::Flat(f) => {
            w.u8(0);
            let (ids, vectors) = f.raw_parts();
            w.u64(ids.len() as u64);
            for &id in ids {
                w.u64(id);
            }
            w.f32s(vectors);
        }
        Index::Hnsw(h) => {
            w.u8(1);
            w.u32(h.params.m as u32);
            w.u32(h.params.ef_construction as u32);
            w.u64(h.params.seed);
            w.u64(h.inserted);
            w.u8(u8::from(h.entry.is_some()));
            w.u32(h.entry.unwrap_or(0));
            w.u64(h.ids.len() as u64);
            for &id in &h.ids {
                w.u64(id);
            }
            for &d in &h.deleted {
                w.u8(u8::from(d));
            }
            w.f32s(&h.vectors);
            for layers in &h.links {
                w.u8(layers.len() as u8);
                for list in layers {
                    w.u32(list.len() as u32);
                    for &n in list {
                        w.u32(n);
                    }
                }
            }
        }
    }
    match quantizer {
        None => w.u8(0),
        Some(Quantizer::Pq(cb)) => {
            w.u8(1);
            w.u32(cb.m() as u32);
            w.u32(cb.k() as u32);
            w.u32(cb.sub_dim() as u32);
            w.f32s(cb.centroids());
        }
        Some(Quantizer::Bq(h)) => {
            w.u8(2);
            w.u32(h.m() as u32);
            w.u32(h.dim() as u32);
            w.f32s(h.normals());
        }
    }
    let crc = crc32fast::hash(w.as_slice());
    w.u32(crc);
    w.into_inner()
}

fn count(r: &mut ByteReader<'_>, elem_size: usize) -> Result<usize> {
    let at = r.position();
    let n = r.u64()?;
    let fits = usize::try_from(n).ok().and_then(|n| n.checked_mul(elem_size)).is_some_and(|b| b <= r.remaining());
    if !fits {
        return Err(Error::malformed(at, format!("count {n} exceeds remaining bytes")));
    }
    Ok(n as usize)
}

fn product(at: usize, parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Error::malformed(at, "size overflows"))
}

pub fn load_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::malformed(0, "bad snapshot magic"));
    }
    let version = r.u16()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: SNAPSHOT_VERSION,
        });
    }
    if bytes.len() < 4 + 2 + 4 {
        return Err(Error::malformed(bytes.len(), "snapshot too short"));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(Error::malformed(body_end, "snapshot checksum mismatch"));
    }
    let mut r = ByteReader::new(&bytes[..body_end]);
    r.take(6, "header")?;
    if r.u8()? != KIND {
        return Err(Error::malformed(6, "not an index snapshot"));
    }
    let generation = r.u64()?;
    let metric_at = r.position();
    let metric = DistanceMetric::from_u8(r.u8()?).ok_or_else(|| Error::malformed(metric_at, "unknown metric"))?;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::malformed(metric_at + 1, "zero dimension"));
    }
    let tag_at = r.position();
    let index = match r.u8()? {
        0 => {
            let n = count(&mut r, 8)?;
            let ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let at = r.position();
            let vectors = r.f32s(product(at, &[n, dim])?)?;
            Index::Flat(FlatIndex::from_raw_parts(metric, dim, ids, vectors).map_err(|e| Error::malformed(at, e.to_string()))?)
        }
        1 => {
            let m = r.u32()? as usize;
            let ef_construction = r.u32()? as usize;
            let seed = r.u64()?;
            let inserted = r.u64()?;
            let has_entry = r.u8()? != 0;
            let entry = r.u32()?;
            let n = count(&mut r, 8)?;
            let ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let deleted = r.take(n, "tombstones")?.iter().map(|&b| b != 0).collect();
            let at = r.position();
            let vectors = r.f32s(product(at, &[n, dim])?)?;
            let mut links = Vec::with_capacity(n);
            for _ in 0..n {
                let levels = r.u8()? as usize;
                let mut node = Vec::with_capacity(levels);
                for _ in 0..levels {
                    let len = r.u32()? as usize;
                    node.push(r.u32s(len)?);
                }
                links.push(node);
            }
            let at = r.position();
            let params = HnswParams {
                m,
                ef_construction,
                seed,
            };
            if m < 2 {
                return Err(Error::malformed(at, "hnsw m < 2"));
            }
            Index::Hnsw(HnswIndex::from_raw_parts(
                DistanceKernel::new(metric, dim),
                params,
                ids,
                vectors,
                links,
                deleted,
                has_entry.then_some(entry),
                inserted,
            )?)
        }
        t => return Err(Error::malformed(tag_at, format!("unknown index tag {t}"))),
    };
    let q_at = r.position();
    let quantizer = match r.u8()? {
        0 => None,
        1 => {
            let m = r.u32()? as usize;
            let k = r.u32()? as usize;
            let sub_dim = r.u32()? as usize;
            let at = r.position();
            let centroids = r.f32s(product(at, &[m, k, sub_dim])?)?;
            Some(Quantizer::Pq(
                PqCodebook::from_parts(m, k, sub_dim, centroids).map_err(|e| Error::malformed(at, e.to_string()))?,
            ))
        }
        2 => {
            let m = r.u32()? as usize;
            let qdim = r.u32()? as usize;
            let at = r.position();
            let normals = r.f32s(product(at, &[m, qdim])?)?;
            Some(Quantizer::Bq(
                HyperplaneSet::from_parts(m, qdim, normals).map_err(|e| Error::malformed(at, e.to_string()))?,
            ))
        }
        t => return Err(Error::malformed(q_at, format!("unknown quantizer tag {t}"))),
    };
    r.finish()?;
    Ok(Snapshot {
        generation,
        index,
        quantizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantization::{bq_train, pq_train_block};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn hnsw_snapshot_answers_identically() {
        let data = rows(1000, 16, 1);
        let mut h = HnswIndex::new(DistanceMetric::Euclidean, 16, HnswParams { m: 8, ef_construction: 64, seed: 5 }).unwrap();
        for (i, v) in data.iter().enumerate() {
            h.insert(i as u64, v).unwrap();
        }
        for id in (0..1000).step_by(7) {
            h.remove(id);
        }
        let flat_block: Vec<f32> = data.iter().flatten().copied().collect();
        let (cb, _) = pq_train_block(&flat_block, 16, 4, 16, 10, 3).unwrap();
        let q = Quantizer::Pq(cb);
        let index = Index::Hnsw(h.clone());
        let bytes = snapshot_index(&index, Some(&q), 42);
        let snap = load_snapshot(&bytes).unwrap();
        assert_eq!(snap.generation, 42);
        assert_eq!(snap.quantizer, Some(q));
        let Index::Hnsw(loaded) = snap.index else { panic!("wrong index kind") };
        for query in rows(50, 16, 9) {
            assert_eq!(h.search(&query, 10, 40).unwrap(), loaded.search(&query, 10, 40).unwrap());
        }
        let mut loaded = loaded;
        loaded.insert(5000, &data[0]).unwrap();
        h.insert(5000, &data[0]).unwrap();
        assert_eq!(h.neighbors(5000, 0), loaded.neighbors(5000, 0));
    }

    #[test]
    fn flat_and_bq_round_trip() {
        let mut f = FlatIndex::new(DistanceMetric::Cosine, 4);
        for (i, v) in rows(20, 4, 2).iter().enumerate() {
            f.insert(i as u64, v).unwrap();
        }
        let q = Quantizer::Bq(bq_train(4, 8, 1).unwrap());
        let bytes = snapshot_index(&Index::Flat(f.clone()), Some(&q), 0);
        let snap = load_snapshot(&bytes).unwrap();
        let Index::Flat(g) = snap.index else { panic!("wrong index kind") };
        assert_eq!(g.raw_parts(), f.raw_parts());
        assert_eq!(g.metric(), DistanceMetric::Cosine);
        assert_eq!(snap.quantizer, Some(q));
    }

    #[test]
    fn version_and_corruption_are_detected() {
        let f = FlatIndex::new(DistanceMetric::Euclidean, 2);
        let mut bytes = snapshot_index(&Index::Flat(f), None, 1);
        let mut bumped = bytes.clone();
        bumped[4] = 2;
        assert!(matches!(
            load_snapshot(&bumped),
            Err(Error::VersionMismatch { found: 2, expected: SNAPSHOT_VERSION })
        ));
        bytes[12] ^= 1;
        assert!(matches!(load_snapshot(&bytes), Err(Error::Malformed { .. })));
        for cut in 0..bytes.len() {
            assert!(load_snapshot(&bytes[..cut]).is_err());
        }
    }

    proptest::proptest! {
        #[test]
        fn random_bytes_never_panic(mut bytes in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..300)) {
            let _ = load_snapshot(&bytes);
            if bytes.len() >= 10 {
                bytes[..4].copy_from_slice(MAGIC);
                bytes[4..6].copy_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
                let end = bytes.len() - 4;
                let crc = crc32fast::hash(&bytes[..end]);
                bytes[end..].copy_from_slice(&crc.to_le_bytes());
                let _ = load_snapshot(&bytes);
            }
        }
    }
}
