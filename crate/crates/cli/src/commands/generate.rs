use irstd_core::data::{
    generate_scene, item_seed, serialize_yolo_labels, split_dataset, Manifest, ManifestEntry, SplitName,
};

use super::{create_dir, par_map, write_file};
use crate::config::RunConfig;
use crate::error::Result;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerateSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub targets: usize,
}

/// Writes `images/NNNNN.pgm`, `labels/NNNNN.txt` and a manifest with a
/// seeded train/val/test split.
pub fn generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    cfg.scene.to_spec(cfg.seed).validate()?;
    let n = cfg.generate.count;
    let split = split_dataset(&(0..n).collect::<Vec<_>>(), cfg.seed)?;
    let mut membership = vec![SplitName::Train; n];
    for &i in &split.val {
        membership[i] = SplitName::Val;
    }
    for &i in &split.test {
        membership[i] = SplitName::Test;
    }

    cfg.freeze()?;
    let images = cfg.out.join("images");
    let labels = cfg.out.join("labels");
    create_dir(&images)?;
    create_dir(&labels)?;

    let indices: Vec<usize> = (0..n).collect();
    let scenes = par_map(&indices, cfg.jobs, |&i| generate_scene(&cfg.scene.to_spec(item_seed(cfg.seed, i as u64))));
    let mut manifest = Manifest::default();
    let mut targets = 0;
    for (i, scene) in scenes.into_iter().enumerate() {
        let scene = scene?;
        targets += scene.labels.len();
        let image = format!("images/{i:05}.pgm");
        let label = format!("labels/{i:05}.txt");
        write_file(&cfg.out.join(&image), scene.image.encode_pgm())?;
        write_file(&cfg.out.join(&label), serialize_yolo_labels(&scene.labels))?;
        manifest.entries.push(ManifestEntry {
            split: membership[i],
            image: image.into(),
            labels: label.into(),
        });
    }
    write_file(&cfg.out.join(MANIFEST), manifest.to_text())?;
    log::info!(
        "wrote {n} scenes ({targets} targets) to {}: {}/{}/{} train/val/test",
        cfg.out.display(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(GenerateSummary {
        train: split.train.len(),
        val: split.val.len(),
        test: split.test.len(),
        targets,
    })
}
