//! Persistence: a byte-keyed KV engine, the entity codec and index
//! snapshots.

mod codec;
mod kv;
mod log;
mod snapshot;

pub use codec::{decode_entity, encode_entity, ByteReader, ByteWriter};
pub use kv::{BatchOp, KvEngine, MemoryKv};
pub use log::{LogEngine, RecoveryReport, LOG_VERSION, MAGIC};
pub use snapshot::{load_snapshot, snapshot_index, Snapshot, SNAPSHOT_VERSION};
