//! Fits distortion distributions on the toy corpus and tops every category
//! up to 200 instances with synthetic composites.
//!
//! Run with `cargo run --release --example augment_toy [out_dir]`; with an
//! output directory the composites and the annotation delta are written.

use std::path::PathBuf;
use std::time::Instant;

use signkit::distortion::{fit_distortion_model, GmmOptions};
use signkit::imageio::write_png;
use signkit::model::dataset_to_json;
use signkit::observe::observe_dataset;
use signkit::synthesize::{augment_dataset, AugmentOptions};
use signkit::toy::{toy_corpus, ToyOptions};

fn main() -> signkit::Result<()> {
    let out: Option<PathBuf> = std::env::args().nth(1).map(PathBuf::from);
    let start = Instant::now();
    let corpus = toy_corpus(&ToyOptions::default());
    let ds = &corpus.dataset;
    println!("toy corpus: {} images, counts {:?}", ds.images.len(), ds.instance_counts());

    let observations = observe_dataset(ds, &corpus.images)?;
    let model = fit_distortion_model(ds, &observations, &GmmOptions::default())?;
    if let Some(rot) = &model.rotation {
        let deg: Vec<f64> = rot.means[0].iter().map(|a| a.to_degrees()).collect();
        println!("rotation mean (deg) {deg:.2?}, variances {:.4?}", rot.variances[0]);
    }
    if let Some(scale) = &model.scale {
        println!("scale components: means {:?} weights {:.2?}", scale.means, scale.weights);
    }

    let opts = AugmentOptions {
        seed: 42,
        ..Default::default()
    };
    let mut written = 0;
    let result = augment_dataset(
        ds,
        &corpus.images,
        &corpus.backgrounds,
        &corpus.background_images,
        &model,
        &opts,
        &mut |record, img| {
            if let Some(dir) = &out {
                write_png(&dir.join(&record.uri), img)?;
                written += 1;
            }
            Ok(())
        },
    )?;
    println!(
        "{} composites, synthesized per category {:?}",
        result.composites.len(),
        result.synthesized
    );
    let mut merged = ds.clone();
    merged.merge(result.delta.clone())?;
    println!("after augmentation: {:?}", merged.instance_counts());
    if let Some(dir) = &out {
        std::fs::write(dir.join("synthetic.json"), dataset_to_json(&result.delta)?)
            .map_err(|e| signkit::Error::InvalidInput(e.to_string()))?;
        println!("wrote {written} images to {}", dir.display());
    }
    println!("done in {:.1?}", start.elapsed());
    Ok(())
}
