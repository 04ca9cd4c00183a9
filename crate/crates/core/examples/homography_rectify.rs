//! Rectifies a perspective-distorted sign onto its template and recovers
//! the plane rotation it was seen under.
//!
//! `cargo run --example homography_rectify [out_dir]` writes the crop and
//! the rectified patch as PNGs when a directory is given.

use signkit::geometry::{compose_plane_homography, decompose_rotation, rectify_instance, EulerAngles, Intrinsics};
use signkit::imageio::{write_png, ImageSource};
use signkit::observe::{crop_instance, geometry_usable, observe_instance};
use signkit::toy::{toy_corpus, ToyOptions};

fn main() -> signkit::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);

    // round trip on a synthetic pose first
    let truth = EulerAngles::from_degrees(12.0, -25.0, 4.0);
    let k = Intrinsics::new(1000.0, 640.0, 360.0)?;
    let h = compose_plane_homography(&truth, &k, 800.0)?;
    let back = decompose_rotation(&h, &k)?;
    println!(
        "composed {:.3?} deg, decomposed {:.3?} deg",
        truth.as_array().map(f64::to_degrees),
        back.as_array().map(f64::to_degrees)
    );

    let corpus = toy_corpus(&ToyOptions {
        counts: vec![6, 6, 6],
        backgrounds: 0,
        ..Default::default()
    });
    let ds = &corpus.dataset;
    let images = ds.image_index();
    let mut shown = 0;
    for inst in ds.instances.iter().filter(|i| !i.difficult) {
        let cat = ds.category(inst.category_id).expect("known category");
        if !geometry_usable(cat, inst) {
            continue;
        }
        let record = images[&inst.image_id];
        let img = corpus.images.load(record)?;
        let crop = crop_instance(&img, inst)?;
        let rect = rectify_instance(&crop.patch, &crop.polygon, cat.id, cat.template.as_ref())?;
        let obs = observe_instance(record, cat, inst, &crop)?;
        let angles = obs.angles.map(|a| a.as_array().map(f64::to_degrees));
        println!(
            "instance {:>3} ({:<12}) crop {:?} -> template {:?}, corner rms {:.2e}, angles {:.1?} deg, size {:.1} px",
            inst.id,
            cat.name,
            crop.patch.dimensions(),
            rect.patch.dimensions(),
            rect.rms,
            angles,
            obs.size.unwrap_or(f64::NAN)
        );
        if let Some(dir) = &out {
            write_png(&dir.join(format!("{}_crop.png", inst.id)), &crop.patch)?;
            write_png(&dir.join(format!("{}_rectified.png", inst.id)), &rect.patch)?;
        }
        shown += 1;
        if shown == 6 {
            break;
        }
    }
    Ok(())
}
