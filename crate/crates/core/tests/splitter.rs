use kfseg::harness::{cross_val_split, split_manifest};
use kfseg::synthgen::video_id;
use kfseg::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn corpus(seed: u64) -> Vec<(String, usize)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..17).map(|i| (video_id(i), r.random_range(250..=600))).collect()
}

#[test]
fn folds_are_balanced_disjoint_and_complete() {
    for seed in 0..20 {
        let videos = corpus(seed);
        let total: usize = videos.iter().map(|v| v.1).sum();
        let folds = cross_val_split(&videos, 5, seed).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = HashSet::new();
        for f in &folds {
            let share = f.test_frames as f64 / (total as f64 / 5.0);
            assert!((0.85..=1.15).contains(&share), "seed {seed} fold {}: {share}", f.fold_id);
            assert_eq!(f.train_frames + f.test_frames, total);
            let test: HashSet<_> = f.test.iter().collect();
            assert!(f.train.iter().all(|v| !test.contains(v)));
            assert_eq!(f.train.len() + f.test.len(), 17);
            for v in &f.test {
                assert!(seen.insert(v.clone()), "{v} tested twice");
            }
        }
        assert_eq!(seen.len(), 17);
    }
}

#[test]
fn split_is_deterministic_in_the_seed() {
    let videos = corpus(3);
    assert_eq!(cross_val_split(&videos, 5, 7).unwrap(), cross_val_split(&videos, 5, 7).unwrap());
}

#[test]
fn too_few_videos_for_the_folds() {
    let videos = corpus(0)[..4].to_vec();
    assert!(matches!(cross_val_split(&videos, 5, 0), Err(Error::TooFewVideos { needed: 5, got: 4 })));
}

#[test]
fn manifest_split_uses_the_listed_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = kfseg::synthgen::SynthConfig { image_size: 32, ..Default::default() };
    let m = kfseg::synthgen::generate_dataset(&cfg, 5, Some((3, 6)), dir.path()).unwrap();
    let folds = split_manifest(&m, 5, 0).unwrap();
    let by_id: std::collections::HashMap<_, _> = m.videos.iter().map(|v| (v.id.clone(), v.frames)).collect();
    for f in &folds {
        assert_eq!(f.test.len(), 1);
        assert_eq!(f.test_frames, by_id[&f.test[0]]);
    }
}
