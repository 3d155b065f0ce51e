//! Stage two with the toy image backend: one isolated reference per entity,
//! written as PPM images with PGM masks.

use std::collections::BTreeSet;

use videostudio::refs::{build_entity_references, LuminanceSegmenter, RefBackends, ToyImageBackend};
use videostudio::script::{EntityKind, EntityRecord};

fn record(name: &str, kind: EntityKind, description: &str) -> EntityRecord {
    EntityRecord {
        name: name.into(),
        kind,
        occurrences: BTreeSet::from([1, 2]),
        description: Some(description.into()),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = [
        record("young man", EntityKind::Foreground, "A slim young man in a white t-shirt and blue jeans."),
        record("kitchen", EntityKind::Background, "A bright kitchen with white tiles and wooden counters."),
    ];
    let backends = RefBackends { images: &ToyImageBackend, segmenter: &LuminanceSegmenter::default() };
    let refs = build_entity_references(&records, &backends, 42, (64, 64))?;
    let dir = std::env::temp_dir().join("videostudio_refs");
    std::fs::create_dir_all(&dir)?;
    for (name, r) in &refs {
        let kept = r.kept_region();
        let area = kept.data().iter().filter(|&&v| v >= 0.5).count();
        let stem = name.replace(' ', "_");
        r.image.write_ppm(&dir.join(format!("{stem}.ppm")))?;
        std::fs::write(dir.join(format!("{stem}_mask.pgm")), r.mask.encode_pgm())?;
        println!("{name:10} {:?}: keeps {area} of {} pixels", r.kind, 64 * 64);
    }
    println!("written to {}", dir.display());
    Ok(())
}
