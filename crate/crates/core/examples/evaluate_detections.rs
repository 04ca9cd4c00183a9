//! Scores simulated detections on the test side of a geo split: mAP at
//! IoU 0.5 and 0.5:0.95, max recall and the best-F operating point.

use signkit::eval::{evaluate, ground_truths, EvalConfig, Interpolation};
use signkit::split::{split, SplitOptions};
use signkit::toy::{geotagged_metadata, simulated_detections};

fn main() -> signkit::Result<()> {
    let ds = geotagged_metadata(600, 12, 3);
    let sides = split(&ds, &SplitOptions::default())?;
    let test = ds.subset(&sides.test.iter().copied().collect());
    let dets = simulated_detections(&test, 3);
    let gts = ground_truths(&test);
    println!("{} test images, {} ground truths, {} detections", test.images.len(), gts.len(), dets.len());

    let report = evaluate(&dets, &gts, &EvalConfig::default());
    print!("{}", report.to_table());

    let coco = evaluate(
        &dets,
        &gts,
        &EvalConfig {
            interpolation: Interpolation::Coco101,
            ..Default::default()
        },
    );
    println!(
        "101-point interpolation: mAP50 {:.2}, mAP50:95 {:.2}",
        coco.map50, coco.map50_95
    );
    Ok(())
}
