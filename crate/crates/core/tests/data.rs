use phcnet::data::pgm::quantize8;
use phcnet::data::*;
use phcnet::Tensor;
use proptest::prelude::*;

fn fraction(bits: impl Iterator<Item = bool>) -> f64 {
    let (mut on, mut n) = (0usize, 0usize);
    for b in bits {
        on += b as usize;
        n += 1;
    }
    on as f64 / n as f64
}

#[test]
fn single_view_labels_are_balanced_at_ten_thousand() {
    let r = render_synthetic(&SyntheticSpec { count: 10_000, size: 16, seed: 21, ..Default::default() }).unwrap();
    let p = fraction(r.dataset.samples.iter().map(|s| s.labels[0] == 1));
    assert!((p - 0.5).abs() <= 0.02, "{p}");
}

#[test]
fn xor_cues_are_balanced_and_individually_uninformative() {
    let spec = SyntheticSpec { count: 10_000, size: 16, label_rule: LabelRule::CrossViewXor, seed: 22, ..Default::default() };
    let r = render_synthetic(&spec).unwrap();
    let rows: Vec<(u8, [u8; 2])> = r.dataset.samples.iter().zip(&r.cues).map(|(s, c)| (s.labels[0], c[0])).collect();

    // label is the xor of the two designed bits
    assert!(rows.iter().all(|(y, c)| *y == c[0] ^ c[1]));
    assert!((fraction(rows.iter().map(|r| r.0 == 1)) - 0.5).abs() <= 0.02);
    for k in 0..2 {
        assert!((fraction(rows.iter().map(|r| r.1[k] == 1)) - 0.5).abs() <= 0.02);
        // the label given one cue is still a coin flip
        for c in 0..2 {
            let p = fraction(rows.iter().filter(|r| r.1[k] == c).map(|r| r.0 == 1));
            assert!((p - 0.5).abs() <= 0.03, "cue {k}={c}: {p}");
        }
        // the best decision rule on one cue
        let agree = fraction(rows.iter().map(|r| r.0 == r.1[k]));
        assert!(agree.max(1.0 - agree) <= 0.55, "cue {k} probe {agree}");
    }
}

/// Horizontal mask centroid minus the image midline, in pixels.
fn centroid_offset(s: &Sample, view: usize) -> f64 {
    let mask = s.masks.as_ref().unwrap();
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    let plane = &mask.data()[view * h * w..(view + 1) * h * w];
    let (mut sx, mut n) = (0.0, 0.0);
    for (i, &m) in plane.iter().enumerate() {
        if m >= 0.5 {
            sx += (i % w) as f64 + 0.5;
            n += 1.0;
        }
    }
    sx / n - w as f64 / 2.0
}

#[test]
fn xor_cues_are_visible_in_the_masks() {
    let spec = SyntheticSpec { count: 200, label_rule: LabelRule::CrossViewXor, seed: 23, ..Default::default() };
    let r = render_synthetic(&spec).unwrap();
    for (s, c) in r.dataset.samples.iter().zip(&r.cues) {
        // a disk centred on the midline is allowed either way
        let side = if c[0][0] == 1 { 1.0 } else { -1.0 };
        assert!(side * centroid_offset(s, 0) >= -0.5, "{}", s.id);
        let mask = s.masks.as_ref().unwrap();
        let (h, w) = (mask.shape()[1], mask.shape()[2]);
        let plane = &mask.data()[h * w..];
        let cols = (0..w).filter(|&x| (0..h).any(|y| plane[y * w + x] >= 0.5)).count();
        let rows = (0..h).filter(|&y| (0..w).any(|x| plane[y * w + x] >= 0.5)).count();
        assert_eq!((rows > cols) as u8, c[0][1], "{}", s.id);
    }
}

#[test]
fn written_dataset_reloads_with_quantized_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { count: 8, views: 4, seed: 5, ..Default::default() };
    let m = gen_synthetic(&spec, dir.path()).unwrap();
    let loaded = Dataset::load(&dir.path().join("manifest.json")).unwrap();
    let rendered = render_synthetic(&spec).unwrap().dataset;
    assert_eq!(m.entries.len(), 8);
    for (a, b) in loaded.samples.iter().zip(&rendered.samples) {
        assert_eq!(a.labels.len(), 2);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.views.shape(), &[4, 32, 32]);
        assert_eq!(a.views.data(), &b.views.data().iter().map(|&v| quantize8(v)).collect::<Vec<_>>()[..]);
        assert_eq!(a.masks.as_ref().map(|m| m.data().to_vec()), b.masks.as_ref().map(|m| m.data().to_vec()));
    }
}

#[test]
fn split_is_stratified_and_disjoint() {
    let r = render_synthetic(&SyntheticSpec { count: 300, seed: 9, ..Default::default() }).unwrap();
    let (train, test) = stratified_split(&r.manifest, 0.2, 3).unwrap();
    assert_eq!(train.entries.len() + test.entries.len(), 300);
    let ids: std::collections::HashSet<_> = train.entries.iter().map(|e| &e.id).collect();
    assert!(test.entries.iter().all(|e| !ids.contains(&e.id)));
    let pos = |m: &Manifest| m.entries.iter().filter(|e| e.labels[0] == 1).count() as f64 / m.entries.len() as f64;
    assert!((pos(&train) - pos(&test)).abs() < 0.03);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pgm_round_trips_quantized_images(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::<f32>::rand_uniform(&[1, h, w], 0.0, 1.0, &mut phcnet::rng::seeded(seed));
        let path = dir.path().join("x.pgm");
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        prop_assert_eq!(back.data(), &img.data().iter().map(|&v| quantize8(v)).collect::<Vec<_>>()[..]);
        prop_assert!(back.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
    }

    #[test]
    fn flips_are_involutions(seed in any::<u64>()) {
        let x = Tensor::<f32>::rand_uniform(&[2, 9, 9], 0.0, 1.0, &mut phcnet::rng::seeded(seed));
        let p = AugmentParams { angle_deg: 0.0, hflip: true, vflip: true };
        let twice = augment::apply(&augment::apply(&x, &p).unwrap(), &p).unwrap();
        prop_assert_eq!(twice.data(), x.data());
    }
}
