//! Canonical textual keys for CAN identifiers in serialized maps.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest 29-bit extended identifier.
pub const MAX_EXTENDED_ID: u32 = 0x1FFF_FFFF;
/// Largest 11-bit standard identifier.
pub const MAX_STANDARD_ID: u32 = 0x7FF;

/// Map key for an identifier: three hex digits for standard IDs, eight for extended.
pub fn id_key(id: u32) -> String {
    if id <= MAX_STANDARD_ID {
        format!("{id:03x}")
    } else {
        format!("{id:08x}")
    }
}

pub fn parse_id_key(key: &str) -> Option<u32> {
    u32::from_str_radix(key, 16).ok().filter(|id| *id <= MAX_EXTENDED_ID)
}

/// `serialize_with` adapter writing `BTreeMap<u32, V>` with hex string keys.
pub fn serialize_id_map<V, S>(map: &BTreeMap<u32, V>, serializer: S) -> Result<S::Ok, S::Error>
where
    V: Serialize,
    S: Serializer,
{
    serializer.collect_map(map.iter().map(|(id, v)| (id_key(*id), v)))
}

pub fn deserialize_id_map<'de, V, D>(deserializer: D) -> Result<BTreeMap<u32, V>, D::Error>
where
    V: Deserialize<'de>,
    D: Deserializer<'de>,
{
    let raw = BTreeMap::<String, V>::deserialize(deserializer)?;
    raw.into_iter()
        .map(|(k, v)| {
            parse_id_key(&k).map(|id| (id, v)).ok_or_else(|| D::Error::custom(format!("invalid CAN id key {k:?}")))
        })
        .collect()
}

pub fn serialize_id_list<S: Serializer>(ids: &[u32], serializer: S) -> Result<S::Ok, S::Error> {
    serializer.collect_seq(ids.iter().map(|id| id_key(*id)))
}

pub fn deserialize_id_list<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u32>, D::Error> {
    let raw = Vec::<String>::deserialize(deserializer)?;
    raw.iter().map(|k| parse_id_key(k).ok_or_else(|| D::Error::custom(format!("invalid CAN id key {k:?}")))).collect()
}
