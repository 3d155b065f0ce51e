use std::collections::{BTreeMap, BTreeSet};

use super::types::{EntityKind, EntityRecord, VideoScript};
use super::validate::kind_of;

/// One record per unique entity name, sorted by name.
///
/// Names in a validated script are already normalized, so strict matching
/// is byte equality.
pub fn find_common_entities(script: &VideoScript) -> Vec<EntityRecord> {
    let mut seen: BTreeMap<&str, (bool, BTreeSet<usize>)> = BTreeMap::new();
    for scene in &script.scenes {
        for (name, kind) in scene.entity_names() {
            let entry = seen.entry(name).or_default();
            entry.0 |= kind == EntityKind::Foreground;
            entry.1.insert(scene.index);
        }
    }
    seen.into_iter()
        .map(|(name, (fg, occurrences))| EntityRecord {
            name: name.to_string(),
            kind: kind_of(fg),
            occurrences,
            description: None,
        })
        .collect()
}
