use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::SynthClass;
use crate::error::{PromiError, Result};
use crate::evaluation::{BenchmarkManifest, Episode, ImageEntry};
use crate::feature_store::save_feature_map;

/// Files written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest_path: PathBuf,
    pub episode_path: PathBuf,
    pub manifest: BenchmarkManifest,
    pub episode: Episode,
}

fn dir_name(class: &str) -> String {
    class
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Renders every class to `out/<class>/img_NNN.{npy,json}` plus
/// `img_NNN_mask.png`, and writes `manifest.json` (all classes) and
/// `episode.json` (first class: images `0..shots` as support, image `shots`
/// as query). Paths inside both files are relative to `out`.
pub fn write_dataset(classes: &[SynthClass], out: &Path, shots: usize) -> Result<SynthDataset> {
    if classes.is_empty() {
        return Err(PromiError::Config("scene file defines no classes".into()));
    }
    if shots == 0 {
        return Err(PromiError::Config("shots must be at least 1".into()));
    }
    let mut pools = IndexMap::new();
    for class in classes {
        if class.images < shots + 1 {
            return Err(PromiError::Config(format!(
                "class {:?} renders {} images, {shots}-shot episodes need {}",
                class.name,
                class.images,
                shots + 1
            )));
        }
        if pools.contains_key(&class.name) {
            return Err(PromiError::Config(format!("duplicate class name {:?}", class.name)));
        }
        let rel_dir = PathBuf::from(dir_name(&class.name));
        let abs_dir = out.join(&rel_dir);
        std::fs::create_dir_all(&abs_dir).map_err(|e| PromiError::io(&abs_dir, e))?;
        let mut pool = Vec::with_capacity(class.images);
        for i in 0..class.images {
            let img = class.scene.generate_image(i as u64)?;
            let feature_rel = rel_dir.join(format!("img_{i:03}.npy"));
            let mask_rel = rel_dir.join(format!("img_{i:03}_mask.png"));
            save_feature_map(&img.features, &out.join(&feature_rel))?;
            img.mask.save_png(&out.join(&mask_rel))?;
            pool.push(ImageEntry {
                feature_path: feature_rel,
                mask_path: Some(mask_rel),
                boxes: Some(img.boxes),
                image_h: class.scene.image_h,
                image_w: class.scene.image_w,
                source_image_path: None,
            });
        }
        pools.insert(class.name.clone(), pool);
    }

    let manifest = BenchmarkManifest { classes: pools };
    let (class_id, pool) = manifest.classes.get_index(0).expect("one class");
    let episode = Episode {
        class_id: class_id.clone(),
        support: pool[..shots].to_vec(),
        query: vec![pool[shots].clone()],
        seed: None,
        task_index: None,
    };
    let manifest_path = out.join("manifest.json");
    let episode_path = out.join("episode.json");
    manifest.save(&manifest_path)?;
    episode.save(&episode_path)?;
    Ok(SynthDataset {
        manifest: manifest.resolved(out),
        episode: Episode {
            support: episode.support.iter().map(|e| e.resolved(out)).collect(),
            query: episode.query.iter().map(|e| e.resolved(out)).collect(),
            ..episode
        },
        manifest_path,
        episode_path,
    })
}
