//! The three ROI selection strategies on exported candidates of one image,
//! with the loss weights each stage applies.

use std::collections::BTreeMap;

use signkit::roi::{
    assign_weights, balanced_select, ohem_candidate_pool, ohem_select, pass_through, PassThrough, RoiCandidate,
    Stage, DEFAULT_NMS_IOU,
};
use signkit::seed::rng_for;
use signkit::toy::{geotagged_metadata, simulated_proposals};

fn main() -> signkit::Result<()> {
    let ds = geotagged_metadata(1, 3, 5);
    let cands = simulated_proposals(&ds, 600, 5);
    let fg = cands.iter().filter(|c| c.label.is_foreground()).count();
    println!("{} candidates, {fg} foreground", cands.len());

    // hard mining: NMS-thinned pool, then the highest losses per class
    let pool: Vec<RoiCandidate> = ohem_candidate_pool(&cands, 2000, DEFAULT_NMS_IOU)
        .into_iter()
        .map(|i| cands[i].clone())
        .collect();
    let hard = ohem_select(&pool, 32, 96, None)?;
    let (fg_picks, bg_picks): (Vec<usize>, Vec<usize>) = hard.iter().partition(|&&i| pool[i].label.is_foreground());
    let lowest_bg = bg_picks.iter().map(|&i| pool[i].loss.unwrap_or(0.0)).fold(f64::INFINITY, f64::min);
    println!(
        "OHEM: pool {} -> {} foreground + {} background, lowest background loss kept {lowest_bg:.3}",
        pool.len(),
        fg_picks.len(),
        bg_picks.len()
    );

    // the same budget spread evenly over the objects
    let assigned: Vec<RoiCandidate> = cands.iter().filter(|c| c.assigned_gt.is_some()).cloned().collect();
    let picked = balanced_select(&assigned, 5, &mut rng_for(0, "example/balanced"))?;
    let mut per_object: BTreeMap<u64, usize> = BTreeMap::new();
    for i in picked {
        *per_object.entry(assigned[i].assigned_gt.expect("assigned")).or_default() += 1;
    }
    println!("balanced: per object {per_object:?}");

    let mut levels: BTreeMap<u32, Vec<RoiCandidate>> = BTreeMap::new();
    for c in &cands {
        levels.entry(c.level).or_default().push(c.clone());
    }
    let cfg = PassThrough {
        pre_nms_top: 100,
        post_merge: 50,
        ..Default::default()
    };
    let kept = pass_through(&levels, &cfg);
    println!("pass-through over {} levels: {} kept", levels.len(), kept.len());

    for stage in [Stage::Rpn, Stage::Classifier] {
        let weights: Vec<f64> = assign_weights(&kept, stage).iter().map(|w| w.weight).collect();
        let mut distinct = weights.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        println!("{stage:?} weights: {distinct:?}");
    }
    Ok(())
}
