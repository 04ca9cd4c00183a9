//! Writes a small annotated corpus to disk, loads it back and checks the
//! per-category instance criteria.
//!
//! `cargo run --example dataset_io [dir]` (default: a fresh temp dir).

use signkit::model::{load_dataset, validate_category_criteria};
use signkit::toy::{toy_corpus, ToyOptions};

fn main() -> signkit::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("signkit-dataset-io"));
    let corpus = toy_corpus(&ToyOptions {
        counts: vec![25, 18, 30, 22, 12],
        backgrounds: 3,
        ..Default::default()
    });
    corpus.write_to(&dir)?;

    let loaded = load_dataset(dir.join("annotations.json"))?;
    for w in &loaded.warnings {
        println!("warning: {w}");
    }
    let ds = loaded.dataset;
    let difficult = ds.instances.iter().filter(|i| i.difficult).count();
    println!(
        "{}: {} images, {} instances ({difficult} difficult, min side < 30 px)",
        dir.display(),
        ds.images.len(),
        ds.instances.len()
    );
    for c in &ds.categories {
        println!(
            "  category {} {:<14} geometry={} template={}",
            c.id,
            c.name,
            c.has_geometry,
            c.template.as_ref().map_or(0, |t| t.points.len())
        );
    }

    // at least 20 instances of at least 30 px per category
    let report = validate_category_criteria(&ds, 20, 30.0);
    for c in &report.categories {
        println!(
            "  category {} {}: {} of {} instances qualify",
            c.id,
            if c.pass { "ok  " } else { "FAIL" },
            c.compliant_instances,
            c.instances
        );
    }
    println!("failing categories: {:?}", report.failing);
    Ok(())
}
