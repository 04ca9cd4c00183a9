//! Train/test split that keeps every geographic cluster of images on one
//! side while giving each category at least a quarter of its instances in
//! the test set.

use signkit::split::{cluster_by_location, split, SplitOptions};
use signkit::toy::geotagged_metadata;

fn main() -> signkit::Result<()> {
    let ds = geotagged_metadata(2000, 50, 1);
    let clustering = cluster_by_location(&ds.images, 50.0);
    let largest = clustering.clusters.iter().map(Vec::len).max().unwrap_or(0);
    println!(
        "{} images in {} clusters within 50 m (largest {largest})",
        ds.images.len(),
        clustering.clusters.len()
    );

    for seed in 0..3 {
        let r = split(&ds, &SplitOptions { seed, ..Default::default() })?;
        let worst = r
            .per_category
            .iter()
            .map(|(c, n)| (n.test as f64 / (n.train + n.test) as f64, *c))
            .fold((1.0, 0), |a, b| if b.0 < a.0 { b } else { a });
        println!(
            "seed {seed}: {} train / {} test images, lowest test share {:.3} (category {})",
            r.train.len(),
            r.test.len(),
            worst.0,
            worst.1
        );
    }
    Ok(())
}
