use std::collections::VecDeque;

use grouplens_core::stimgen::{
    gen_grouping_dataset, gen_grouping_stimulus, gen_p3_dataset, gen_p3_stimulus, read_label_png, Appearance,
    DatasetManifest, FeatureDim, FeatureValue, GroupingSpec, SingletonDim, SingletonSpec, StimError, Stimulus,
    Version, BACKGROUND, MANIFEST_FILE,
};
use image::GrayImage;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Connected regions (4-neighborhood) of pixels carrying `label`, as pixel lists.
fn regions(labels: &GrayImage, label: u8) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = labels.dimensions();
    let mut seen = vec![false; (w * h) as usize];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if seen[i] || labels.get_pixel(x, y).0[0] != label {
                continue;
            }
            seen[i] = true;
            let mut region = Vec::new();
            let mut queue = VecDeque::from([(x, y)]);
            while let Some((cx, cy)) = queue.pop_front() {
                region.push((cx, cy));
                let neighbors = [
                    (cx.wrapping_sub(1), cy),
                    (cx + 1, cy),
                    (cx, cy.wrapping_sub(1)),
                    (cx, cy + 1),
                ];
                for (nx, ny) in neighbors {
                    if nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if !seen[j] && labels.get_pixel(nx, ny).0[0] == label {
                        seen[j] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            out.push(region);
        }
    }
    out
}

fn assert_labels_sound(stim: &Stimulus) {
    assert_eq!(stim.image.dimensions(), stim.labels.dimensions());
    for (p, l) in stim.image.pixels().zip(stim.labels.pixels()) {
        let label = l.0[0];
        assert!(label <= 2);
        assert_eq!(label == 0, p.0 == BACKGROUND, "label {label} on color {:?}", p.0);
    }
}

#[test]
fn p3_target_cell_is_uniform() {
    let n = 10_000u64;
    let mut counts = [0u64; 49];
    for seed in 0..n {
        let (r, c) = SingletonSpec::sample(SingletonDim::ALL[(seed % 3) as usize], seed).target_cell;
        counts[(r * 7 + c) as usize] += 1;
    }
    let expected = n as f64 / 49.0;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(48.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat:.2}, p = {p:.4}");
}

#[test]
fn p3_single_target_region_and_48_distractors() {
    for dim in SingletonDim::ALL {
        let mut spec = SingletonSpec::sample(dim, 5);
        spec.target_cell = (3, 3);
        let stim = gen_p3_stimulus(&spec).unwrap();
        assert_eq!(stim.image.dimensions(), (1024, 1024));
        assert_eq!(regions(&stim.labels, 1).len(), 1, "{dim:?}");
        assert_eq!(regions(&stim.labels, 2).len(), 48, "{dim:?}");
        assert_labels_sound(&stim);
    }
}

#[test]
fn p3_size_target_area_scales_quadratically() {
    let mut spec = SingletonSpec::sample(SingletonDim::Size, 11);
    spec.distractor_value = FeatureValue::Scalar(64.0);
    spec.target_value = FeatureValue::Scalar(128.0);
    let stim = gen_p3_stimulus(&spec).unwrap();
    let target = stim.label_count(1) as f64;
    let distractor_mean = stim.label_count(2) as f64 / 48.0;
    let ratio = target / distractor_mean;
    assert!((ratio - 4.0).abs() <= 0.4, "area ratio {ratio}");
}

#[test]
fn p3_distractors_identical() {
    let stim = gen_p3_stimulus(&SingletonSpec::sample(SingletonDim::Orientation, 3)).unwrap();
    let regs = regions(&stim.labels, 2);
    let normalized = |r: &Vec<(u32, u32)>| {
        let x0 = r.iter().map(|p| p.0).min().unwrap();
        let y0 = r.iter().map(|p| p.1).min().unwrap();
        let mut v: Vec<_> = r.iter().map(|&(x, y)| (x - x0, y - y0)).collect();
        v.sort_unstable();
        v
    };
    let first = normalized(&regs[0]);
    for r in &regs[1..] {
        assert_eq!(normalized(r), first);
    }
}

#[test]
fn grouping_v16_figures_fit_tokens_and_rows_alternate() {
    let spec = GroupingSpec {
        group_a_value: FeatureValue::Scalar(0.0),
        group_b_value: FeatureValue::Scalar(120.0),
        ..GroupingSpec::sample(FeatureDim::Hue, Version::V16, 7)
    };
    let stim = gen_grouping_stimulus(&spec).unwrap();
    assert_eq!(stim.image.dimensions(), (224, 224));
    assert_labels_sound(&stim);
    let mut figures: Vec<(u8, u32, u32)> = Vec::new();
    for label in [1u8, 2] {
        for r in regions(&stim.labels, label) {
            let (x0, x1) = (r.iter().map(|p| p.0).min().unwrap(), r.iter().map(|p| p.0).max().unwrap());
            let (y0, y1) = (r.iter().map(|p| p.1).min().unwrap(), r.iter().map(|p| p.1).max().unwrap());
            assert_eq!(x0 / 16, x1 / 16, "figure spans two token columns");
            assert_eq!(y0 / 16, y1 / 16, "figure spans two token rows");
            figures.push((label, y0 / 16, x0 / 16));
        }
    }
    assert_eq!(figures.len(), 4 * spec.figures_per_row as usize);
    let mut rows: Vec<u32> = figures.iter().map(|f| f.1).collect();
    rows.sort_unstable();
    rows.dedup();
    assert_eq!(rows.len(), 4);
    for (label, row, _) in figures {
        let rank = rows.iter().position(|&r| r == row).unwrap();
        assert_eq!(label, if rank % 2 == 0 { 1 } else { 2 });
    }
}

#[test]
fn grouping_groups_differ_only_in_their_dimension() {
    for version in [Version::V16, Version::V32, Version::V37] {
        for dim in FeatureDim::ALL {
            for seed in 0..20 {
                let spec = GroupingSpec::sample(dim, version, seed);
                let a = spec.group_appearance(0).unwrap();
                let b = spec.group_appearance(1).unwrap();
                let same = |f: fn(&Appearance) -> String| f(&a) == f(&b);
                let checks: [(FeatureDim, bool); 5] = [
                    (FeatureDim::Shape, same(|x| format!("{:?}", x.shape))),
                    (FeatureDim::Size, same(|x| x.size_px.to_string())),
                    (FeatureDim::Orientation, same(|x| x.orientation_deg.to_string())),
                    (FeatureDim::Saturation, same(|x| x.saturation.to_string())),
                    (FeatureDim::Lightness, same(|x| x.lightness.to_string())),
                ];
                for (d, equal) in checks {
                    assert_eq!(equal, d != dim, "{version:?} {dim:?} seed {seed}: {d:?}");
                }
                assert_eq!(a.hue_deg == b.hue_deg, dim != FeatureDim::Hue);
                let stim = gen_grouping_stimulus(&spec).unwrap();
                assert_labels_sound(&stim);
                assert!(stim.label_count(1) > 0 && stim.label_count(2) > 0);
            }
        }
    }
}

#[test]
fn grouping_is_deterministic() {
    let spec = GroupingSpec::sample(FeatureDim::Shape, Version::V32, 99);
    let a = gen_grouping_stimulus(&spec).unwrap();
    let b = gen_grouping_stimulus(&spec).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a.labels, b.labels);
}

#[test]
fn dataset_counts_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_grouping_dataset(&[Version::V37], 1, 0, dir.path()).unwrap();
    assert_eq!(m.records.len(), 6);
    let back = DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(back, m);
    for r in &m.records {
        let labels = read_label_png(&r.mask_file(dir.path())).unwrap();
        let img = image::open(r.image_file(dir.path())).unwrap().to_rgb8();
        assert_eq!(labels.dimensions(), img.dimensions());
    }
    assert!(matches!(
        gen_grouping_dataset(&[Version::V37], 1, 0, dir.path()),
        Err(StimError::DuplicateDataset(_))
    ));

    let all = tempfile::tempdir().unwrap();
    let m = gen_grouping_dataset(&[Version::V16, Version::V32, Version::V37], 2, 1, all.path()).unwrap();
    assert_eq!(m.records.len(), 36);
}

#[test]
fn dataset_generation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = gen_p3_dataset(6, 7, a.path()).unwrap();
    let mb = gen_p3_dataset(6, 7, b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ma.records.iter().filter(|r| r.feature_dim == "size").count(), 2);
    for r in &ma.records {
        assert_eq!(
            std::fs::read(r.image_file(a.path())).unwrap(),
            std::fs::read(r.image_file(b.path())).unwrap()
        );
    }
}
