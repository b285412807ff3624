//! The `synth` command: emits COCO-format ground-truth and detection
//! fixtures generated from the configured scene model.

use anyhow::{Context, Result};

use sodet_core::evalmap::{
    detections_from_ground_truth, write_detections, write_ground_truth, CocoMeta,
};
use sodet_core::synthgen::{generate_dataset, perturb};

use crate::config::RunConfig;
use crate::report::render_table;

pub fn run(config: &RunConfig, images: Option<usize>, identity_detections: bool) -> Result<()> {
    let num_images = images.unwrap_or(config.scene.num_images);
    let spec = config.scene_spec();
    let scenes = generate_dataset(&spec, num_images)?;
    let gts: Vec<_> = scenes.iter().flatten().copied().collect();

    let dets = if identity_detections {
        detections_from_ground_truth(&gts)
    } else {
        let mut all = Vec::new();
        for (i, scene) in scenes.iter().enumerate() {
            all.extend(perturb(
                scene,
                &config.perturb,
                (spec.image_width, spec.image_height),
                config.seed,
                i as u64 + 1,
            )?);
        }
        all
    };

    let mut meta = CocoMeta::default();
    for id in 1..=num_images as u64 {
        meta.images.insert(id, (spec.image_width, spec.image_height));
    }
    for cat in 1..=spec.num_categories {
        meta.categories.insert(cat, format!("cat_{cat}"));
    }

    let out_dir = config.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let run_id = config.run_id();
    let gt_path = out_dir.join(format!("synth-{run_id}-gt.json"));
    let det_path = out_dir.join(format!("synth-{run_id}-det.json"));
    write_ground_truth(&gt_path, &gts, &meta)?;
    write_detections(&det_path, &dets)?;

    let rows = vec![
        ("images".to_string(), num_images.to_string()),
        ("ground truths".to_string(), gts.len().to_string()),
        ("detections".to_string(), dets.len().to_string()),
        (
            "detection model".to_string(),
            if identity_detections {
                "identity (score 1)".to_string()
            } else {
                "perturbed".to_string()
            },
        ),
        ("gt file".to_string(), gt_path.display().to_string()),
        ("det file".to_string(), det_path.display().to_string()),
    ];
    print!("{}", render_table("synthetic fixtures", &rows));
    Ok(())
}
