//! Recall of the top-N region proposals per image over a grid of N and IoU
//! thresholds, overall and for small signs only.

use signkit::eval::{ground_truths, proposal_recall, CategoryWeighting, ProposalOptions, RecallGrid};
use signkit::toy::{simulated_proposals, toy_corpus, ToyOptions};

fn print_grid(title: &str, grid: &RecallGrid) {
    println!("{title} ({} ground truths)", grid.ground_truths);
    print!("{:>6}", "N");
    for t in &grid.iou_thresholds {
        print!("{t:>8.2}");
    }
    println!();
    for (n, row) in grid.top_n.iter().zip(&grid.recall) {
        print!("{n:>6}");
        for r in row {
            print!("{r:>8.1}");
        }
        println!();
    }
}

fn main() {
    let ds = toy_corpus(&ToyOptions {
        backgrounds: 0,
        ..Default::default()
    })
    .dataset;
    let proposals = simulated_proposals(&ds, 300, 4);
    let gts = ground_truths(&ds);
    let top_n = [1, 5, 10, 50, 100, 300];
    let ious = [0.5, 0.6, 0.7, 0.8, 0.9];

    let all = proposal_recall(&proposals, &gts, &top_n, &ious, &ProposalOptions::default());
    print_grid("all sizes, categories weighted equally", &all);

    let small = ProposalOptions {
        size_band: Some((30.0, 50.0)),
        min_size: 0.0,
        weighting: CategoryWeighting::Instance,
    };
    print_grid("boxes of 30 to 50 px, pooled over instances", &proposal_recall(&proposals, &gts, &top_n, &ious, &small));
}
