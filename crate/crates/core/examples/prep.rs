//! Prepares a synthetic capture: marker-based normalization, water plane,
//! scene box, masks and train/val split.
//!
//! `cargo run --release --example prep`

use bathy_nerf::dataprep::{prepare_dataset, Dataset, MediumLabel, PrepOptions};
use bathy_nerf::synthscene::{render_dataset, SyntheticScene, Trajectory};

fn main() -> bathy_nerf::Result<()> {
    let dir = std::env::temp_dir().join("bathy_prep");
    let raw = render_dataset(&SyntheticScene::default(), &Trajectory::with_cameras(16), 48, &dir.join("raw"))?;
    let mut opts = PrepOptions::new(&raw.cameras, &raw.markers, &raw.images, dir.join("data"));
    opts.masks = Some(raw.masks.clone());
    prepare_dataset(&opts)?;

    let data = Dataset::load(&dir.join("data"))?;
    let b = &data.bundle;
    println!("views: {} train / {} val", b.split.train.len(), b.split.val.len());
    println!("normalization scale {:.4}, translation {:?}", b.norm.scale, b.norm.translation.as_slice());
    println!(
        "water plane normal {:?} offset {:.4}",
        b.water_plane.normal.as_slice(),
        b.water_plane.intercept
    );
    println!("scene box {:?} .. {:?}", b.scene_box.min.as_slice(), b.scene_box.max.as_slice());
    let water: usize = data.masks.iter().map(|m| m.count(MediumLabel::Water)).sum();
    let land: usize = data.masks.iter().map(|m| m.count(MediumLabel::Land)).sum();
    println!("labelled pixels: {water} water, {land} land");
    println!("dataset at {}", data.root.display());
    Ok(())
}
