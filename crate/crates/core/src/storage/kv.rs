use std::collections::BTreeMap;

use parking_lot::RwLock;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BatchOp {
    Put(Vec<u8>, Vec<u8>),
    Delete(Vec<u8>),
}

/// Ordered byte-keyed store. Writes are visible to reads immediately and
/// durable after `flush`.
pub trait KvEngine: Send + Sync {
    fn put(&self, key: &[u8], value: &[u8]) -> Result<()>;
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>>;
    /// Returns whether the key existed.
    fn delete(&self, key: &[u8]) -> Result<bool>;
    /// All pairs whose key starts with `prefix`, in key order.
    fn iterate(&self, prefix: &[u8]) -> Result<Vec<(Vec<u8>, Vec<u8>)>>;
    fn flush(&self) -> Result<()>;

    fn write_batch(&self, ops: &[BatchOp]) -> Result<()> {
        for op in ops {
            match op {
                BatchOp::Put(k, v) => self.put(k, v)?,
                BatchOp::Delete(k) => {
                    self.delete(k)?;
                }
            }
        }
        Ok(())
    }
}

/// Volatile engine; `flush` is a no-op.
#[derive(Debug, Default)]
pub struct MemoryKv {
    map: RwLock<BTreeMap<Vec<u8>, Vec<u8>>>,
}

impl MemoryKv {
    pub fn new() -> Self {
        Self::default()
    }
}

impl KvEngine for MemoryKv {
    fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.map.write().insert(key.to_vec(), value.to_vec());
        Ok(())
    }

    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(self.map.read().get(key).cloned())
    }

    fn delete(&self, key: &[u8]) -> Result<bool> {
        Ok(self.map.write().remove(key).is_some())
    }

    fn iterate(&self, prefix: &[u8]) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        Ok(self
            .map
            .read()
            .range(prefix.to_vec()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect())
    }

    fn flush(&self) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_iteration_is_ordered_and_bounded() {
        let kv = MemoryKv::new();
        for k in ["b/2", "a/1", "b/1", "c", "b"] {
            kv.put(k.as_bytes(), b"x").unwrap();
        }
        let keys: Vec<_> = kv.iterate(b"b/").unwrap().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, vec![b"b/1".to_vec(), b"b/2".to_vec()]);
        assert!(kv.delete(b"c").unwrap());
        assert!(!kv.delete(b"c").unwrap());
        assert_eq!(kv.get(b"c").unwrap(), None);
    }
}
