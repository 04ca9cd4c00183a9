//! Measures pose, size and brightness of every annotated sign, fits the
//! distortion model and draws samples with the doubled variance.

use signkit::distortion::{fit_distortion_model, fit_gmm, sample_distortion, GmmOptions};
use signkit::observe::observe_dataset;
use signkit::seed::rng_for;
use signkit::toy::{toy_corpus, ToyOptions};

fn main() -> signkit::Result<()> {
    let corpus = toy_corpus(&ToyOptions {
        backgrounds: 0,
        ..Default::default()
    });
    let ds = &corpus.dataset;
    let observations = observe_dataset(ds, &corpus.images)?;
    let with_pose = observations.iter().filter(|o| o.angles.is_some()).count();
    println!("{} observations, {with_pose} with a recovered pose", observations.len());

    // how many scale components does the data support?
    let sizes: Vec<Vec<f64>> = observations.iter().filter_map(|o| o.size.map(|s| vec![s])).collect();
    for k in 1..=4 {
        let fit = fit_gmm(&sizes, k, &GmmOptions::default())?;
        let ll = *fit.log_likelihood.last().expect("at least one value");
        let params = 3 * k - 1;
        let bic = params as f64 * (sizes.len() as f64).ln() - 2.0 * ll;
        println!(
            "scale K={k}: log-likelihood {ll:.1}, BIC {bic:.1}, {} EM iterations{}",
            fit.iterations,
            if fit.converged { "" } else { " (not converged)" }
        );
    }

    let model = fit_distortion_model(ds, &observations, &GmmOptions::default())?;
    println!("{}", model.to_json());

    let mut rng = rng_for(1, "example/samples");
    for category in [1, 4] {
        for _ in 0..3 {
            let s = sample_distortion(&model, category, &mut rng)?;
            println!(
                "category {category}: angles {:.1?} deg, L {:.1}, contrast {:.2}, scale {:.1} px",
                s.angles.as_array().map(f64::to_degrees),
                s.brightness_mean,
                s.contrast_scale,
                s.scale
            );
        }
    }
    Ok(())
}
