//! Little-endian byte codec and the on-disk entity layout.
//!
//! Entity layout: id `u64`, dim `u32`, `dim` x `f32`, metadata count `u16`,
//! then per entry a `u16`-length-prefixed UTF-8 key, a tag byte and the
//! value (`0` text: `u32` length + UTF-8, `1` int: `i64`, `2` float: `f64`,
//! `3` bool: one byte). All integers little-endian.

use crate::error::{Error, Result};
use crate::types::{Entity, Metadata, MetadataValue, Vector};

const TAG_TEXT: u8 = 0;
const TAG_INT: u8 = 1;
const TAG_FLOAT: u8 = 2;
const TAG_BOOL: u8 = 3;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

/// Cursor over a byte slice; every failure reports the offset it hit.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

macro_rules! read_le {
    ($name:ident, $ty:ty) => {
        pub fn $name(&mut self) -> Result<$ty> {
            let b = self.take(std::mem::size_of::<$ty>(), stringify!($name))?;
            Ok(<$ty>::from_le_bytes(b.try_into().unwrap()))
        }
    };
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::malformed(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    read_le!(u8, u8);
    read_le!(u16, u16);
    read_le!(u32, u32);
    read_le!(u64, u64);
    read_le!(i64, i64);
    read_le!(f64, f64);

    /// Reads `n` floats, refusing counts the remaining bytes cannot hold.
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::malformed(self.pos, "float count overflows"))?;
        let b = self.take(len, "f32 array")?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::malformed(self.pos, "u32 count overflows"))?;
        let b = self.take(len, "u32 array")?;
        Ok(b.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn utf8(&mut self, n: usize) -> Result<String> {
        let start = self.pos;
        let b = self.take(n, "string")?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::malformed(start, "invalid utf-8"))
    }

    /// Errors unless every byte was consumed.
    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::malformed(self.pos, format!("{} unexpected trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn encode_entity(entity: &Entity) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    write_entity(&mut w, entity)?;
    Ok(w.into_inner())
}

fn write_entity(w: &mut ByteWriter, entity: &Entity) -> Result<()> {
    let too_long = |what: &str| Error::InvalidParameter(format!("{what} too long to encode"));
    w.u64(entity.id);
    w.u32(u32::try_from(entity.vector.dim()).map_err(|_| too_long("vector"))?);
    w.f32s(&entity.vector);
    w.u16(u16::try_from(entity.metadata.len()).map_err(|_| too_long("metadata"))?);
    for (key, value) in &entity.metadata {
        w.u16(u16::try_from(key.len()).map_err(|_| too_long("metadata key"))?);
        w.bytes(key.as_bytes());
        match value {
            MetadataValue::Text(s) => {
                w.u8(TAG_TEXT);
                w.u32(u32::try_from(s.len()).map_err(|_| too_long("metadata text"))?);
                w.bytes(s.as_bytes());
            }
            MetadataValue::Int(i) => {
                w.u8(TAG_INT);
                w.i64(*i);
            }
            MetadataValue::Float(f) => {
                w.u8(TAG_FLOAT);
                w.f64(*f);
            }
            MetadataValue::Bool(b) => {
                w.u8(TAG_BOOL);
                w.u8(u8::from(*b));
            }
        }
    }
    Ok(())
}

pub fn decode_entity(bytes: &[u8]) -> Result<Entity> {
    let mut r = ByteReader::new(bytes);
    let entity = read_entity(&mut r)?;
    r.finish()?;
    Ok(entity)
}

fn read_entity(r: &mut ByteReader<'_>) -> Result<Entity> {
    let id = r.u64()?;
    let dim = r.u32()? as usize;
    let vector = Vector::from(r.f32s(dim)?);
    let count = r.u16()?;
    let mut metadata = Metadata::new();
    for _ in 0..count {
        let key_len = r.u16()? as usize;
        let key = r.utf8(key_len)?;
        let tag_at = r.position();
        let value = match r.u8()? {
            TAG_TEXT => {
                let n = r.u32()? as usize;
                MetadataValue::Text(r.utf8(n)?)
            }
            TAG_INT => MetadataValue::Int(r.i64()?),
            TAG_FLOAT => MetadataValue::Float(r.f64()?),
            TAG_BOOL => match r.u8()? {
                0 => MetadataValue::Bool(false),
                1 => MetadataValue::Bool(true),
                b => return Err(Error::malformed(tag_at + 1, format!("bad bool byte {b}"))),
            },
            t => return Err(Error::malformed(tag_at, format!("unknown value tag {t}"))),
        };
        if metadata.insert(key, value).is_some() {
            return Err(Error::malformed(tag_at, "duplicate metadata key"));
        }
    }
    Ok(Entity { id, vector, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn value() -> impl Strategy<Value = MetadataValue> {
        prop_oneof![
            ".{0,12}".prop_map(MetadataValue::Text),
            any::<i64>().prop_map(MetadataValue::Int),
            (-1e12f64..1e12).prop_map(MetadataValue::Float),
            any::<bool>().prop_map(MetadataValue::Bool),
        ]
    }

    fn entity() -> impl Strategy<Value = Entity> {
        (
            any::<u64>(),
            prop::collection::vec(-1e6f32..1e6, 1..32),
            prop::collection::btree_map("[a-z_]{1,10}", value(), 0..6),
        )
            .prop_map(|(id, v, metadata)| Entity {
                id,
                vector: Vector::from(v),
                metadata,
            })
    }

    #[test]
    fn layout_is_as_documented() {
        let e = Entity::new(1, vec![1.0f32]).with_metadata("a", 2i64);
        let bytes = encode_entity(&e).unwrap();
        let mut want = vec![];
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&1u16.to_le_bytes());
        want.extend_from_slice(&1u16.to_le_bytes());
        want.push(b'a');
        want.push(TAG_INT);
        want.extend_from_slice(&2i64.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn empty_metadata() {
        let e = Entity::new(3, vec![0.5f32, 0.25]);
        let bytes = encode_entity(&e).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &0u16.to_le_bytes());
        assert!(decode_entity(&bytes).unwrap().metadata.is_empty());
    }

    #[test]
    fn truncation_is_malformed() {
        let e = Entity::new(3, vec![0.5f32, 0.25]).with_metadata("k", "value");
        let bytes = encode_entity(&e).unwrap();
        for cut in 0..bytes.len() {
            assert!(matches!(decode_entity(&bytes[..cut]), Err(Error::Malformed { .. })), "cut {cut}");
        }
    }

    proptest! {
        #[test]
        fn round_trip(e in entity()) {
            prop_assert_eq!(decode_entity(&encode_entity(&e).unwrap()).unwrap(), e);
        }

        #[test]
        fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_entity(&bytes);
        }
    }
}
