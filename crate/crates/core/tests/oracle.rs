mod common;

use common::*;
use promi::evaluation::{run_benchmark, EvalOptions};
use promi::prototypes::FitConfig;
use proptest::prelude::*;

#[test]
fn thousand_batches_match_reference_every_iteration() {
    for seed in 0..1000 {
        batch_matches_reference(seed).unwrap();
    }
}

#[test]
fn hundred_scenes_match_reference_masks() {
    let fitted = (0..100).filter_map(|s| scene_matches_reference(s).unwrap()).count();
    assert_eq!(fitted, 100);
}

proptest! {
    #[test]
    fn arbitrary_batch_seeds_match_reference(seed in any::<u64>()) {
        prop_assert_eq!(batch_matches_reference(seed), Ok(()));
    }

    #[test]
    fn arbitrary_scene_seeds_match_reference(seed in 1000u64..1_000_000) {
        prop_assert!(scene_matches_reference(seed).is_ok());
    }
}

#[test]
fn stopping_contract_holds() {
    check_stopping_contract().unwrap();
}

#[test]
fn ten_task_fixture_metric_matches_counting_oracle() {
    check_metric_oracle().unwrap();
}

#[test]
fn pinned_ten_task_fixture_value() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_fixture(dir.path());
    let opts = EvalOptions {
        seeds: vec![0],
        tasks_per_seed: 10,
        ..Default::default()
    };
    let report = run_benchmark(&manifest, &FitConfig::default(), &opts).unwrap();
    assert_eq!(report.seeds[0].mean_iou, Some(0.9619185786394852));
}

#[test]
fn ablation_and_k_sweep_orderings() {
    let episodes = ablation_episodes(50);
    let off = episode_mean_iou(&episodes, &flag_config(false, false));
    let bg = episode_mean_iou(&episodes, &flag_config(true, false));
    let full = episode_mean_iou(&episodes, &flag_config(true, true));
    assert!(off <= bg && bg <= full, "{off} {bg} {full}");
    let k1 = episode_mean_iou(
        &episodes,
        &FitConfig {
            k_max: 1,
            ..FitConfig::default()
        },
    );
    assert!(full >= k1, "{k1} {full}");
}

#[test]
fn separable_band_scenes_are_exact() {
    for seed in 0..10 {
        assert_eq!(separable_iou(&separable_scene(seed)), 1.0, "seed {seed}");
    }
}

#[test]
fn one_pixel_patches_make_interior_rectangles_exact() {
    let mut s = promi::synth::SynthScene::orthogonal(6, 1, 9);
    s.image_h = s.grid_h;
    s.image_w = s.grid_w;
    assert_eq!(separable_iou(&s), 1.0);
}

#[test]
fn interior_rectangle_corners_are_rounded_by_interpolation() {
    let iou = separable_iou(&promi::synth::SynthScene::orthogonal(6, 1, 9));
    assert!(iou < 1.0 && iou > 0.95, "{iou}");
}
