//! Two-view patch pairs cut around lesions and from lesion-free tissue.

use std::path::Path;

use rand::Rng as _;

use super::manifest::{lesion_class, DatasetKind, Dataset, Entry, Manifest, Metadata, Sample, PATCH_CLASSES};
use super::pgm::save_image;
use crate::error::{Error, Result};
use crate::rng::{derived, Rng};
use crate::tensor::Tensor;

pub const DEFAULT_PER_LESION: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub id: String,
    pub source: String,
    pub class: usize,
    /// Top-left corner `(x, y)` in each of the two views.
    pub origins: [[usize; 2]; 2],
    /// `(2, P, P)`.
    pub views: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct PatchOptions {
    pub size: usize,
    /// Patches per lesion, half around the lesion and half background.
    pub per_lesion: usize,
    pub seed: u64,
}

impl Default for PatchOptions {
    fn default() -> Self {
        PatchOptions {
            size: 32,
            per_lesion: DEFAULT_PER_LESION,
            seed: 0,
        }
    }
}

struct Pair<'a> {
    views: [&'a [f32]; 2],
    masks: [&'a [f32]; 2],
}

fn apply(m: &[[f64; 3]; 2], p: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
    ]
}

/// Corner of the `p`-wide window centered at `c`, if it fits in `s`.
fn corner(c: [f64; 2], p: usize, s: [usize; 2]) -> Option<[usize; 2]> {
    let x = (c[0] - p as f64 / 2.0).round();
    let y = (c[1] - p as f64 / 2.0).round();
    (x >= 0.0 && y >= 0.0 && x as usize + p <= s[1] && y as usize + p <= s[0]).then_some([x as usize, y as usize])
}

fn clamp_corner(c: [f64; 2], p: usize, s: [usize; 2]) -> [usize; 2] {
    let x = (c[0] - p as f64 / 2.0).round().clamp(0.0, (s[1] - p) as f64);
    let y = (c[1] - p as f64 / 2.0).round().clamp(0.0, (s[0] - p) as f64);
    [x as usize, y as usize]
}

fn window_hits(mask: &[f32], width: usize, o: [usize; 2], p: usize) -> bool {
    (o[1]..o[1] + p).any(|y| mask[y * width + o[0]..y * width + o[0] + p].iter().any(|&v| v > 0.5))
}

fn crop(plane: &[f32], width: usize, o: [usize; 2], p: usize) -> Vec<f32> {
    (o[1]..o[1] + p)
        .flat_map(|y| plane[y * width + o[0]..y * width + o[0] + p].iter().copied())
        .collect()
}

fn plane(t: &Tensor<f32>, v: usize) -> &[f32] {
    let len = t.shape()[1] * t.shape()[2];
    &t.data()[v * len..(v + 1) * len]
}

/// Extracts `per_lesion / 2` jittered lesion patches and as many
/// background patches for every lesion of every entry (both views of a
/// side at corresponding coordinates). Lesion-free entries contribute
/// background patches only.
pub fn extract_patches(manifest: &Manifest, dataset: &Dataset, opts: &PatchOptions) -> Result<Vec<PatchRecord>> {
    let [h, w] = manifest.metadata.image_size;
    let p = opts.size;
    if p == 0 || p > h || p > w {
        return Err(Error::config(format!("image {h}x{w} is too small for {p}x{p} patches")));
    }
    if manifest.metadata.kind == DatasetKind::Patch {
        return Err(Error::config("cannot extract patches from a patch manifest"));
    }
    let t = manifest
        .metadata
        .view_transform
        .unwrap_or([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    let roi_n = opts.per_lesion / 2;
    let bg_n = opts.per_lesion - roi_n;
    let mut out = Vec::new();
    for (ei, (entry, sample)) in manifest.entries.iter().zip(&dataset.samples).enumerate() {
        let masks = sample
            .masks
            .as_ref()
            .ok_or_else(|| Error::config(format!("{}: patch extraction needs masks", entry.id)))?;
        let mut rng = derived(opts.seed, 0xA7C4, ei as u64);
        let sides: Vec<usize> = if entry.lesions.is_empty() {
            vec![0]
        } else {
            entry.lesions.iter().map(|l| l.side).collect()
        };
        for (li, &side) in sides.iter().enumerate() {
            let pair = Pair {
                views: [plane(&sample.views, side), plane(&sample.views, side + 1)],
                masks: [plane(masks, side), plane(masks, side + 1)],
            };
            let mut push = |class: usize, origins: [[usize; 2]; 2], k: usize| -> Result<()> {
                let data = [crop(pair.views[0], w, origins[0], p), crop(pair.views[1], w, origins[1], p)].concat();
                out.push(PatchRecord {
                    id: format!("{}_l{li}_p{k:02}", entry.id),
                    source: entry.id.clone(),
                    class,
                    origins,
                    views: Tensor::new(&[2, p, p], data)?,
                });
                Ok(())
            };
            let mut k = 0;
            if let Some(lesion) = entry.lesions.get(li) {
                let class = lesion_class(lesion.kind, lesion.shape);
                let b = lesion.boxes[0];
                let center = [(b[0] + b[2]) as f64 / 2.0, (b[1] + b[3]) as f64 / 2.0];
                for _ in 0..roi_n {
                    push(class, roi_origins(&mut rng, center, &t, p, [h, w], &pair), k)?;
                    k += 1;
                }
            }
            for _ in 0..bg_n {
                let o = background_origins(&mut rng, &t, p, [h, w], &pair)
                    .ok_or_else(|| Error::config(format!("{}: no lesion-free {p}x{p} window", entry.id)))?;
                push(0, o, k)?;
                k += 1;
            }
        }
    }
    Ok(out)
}

fn roi_origins(rng: &mut Rng, center: [f64; 2], t: &[[f64; 3]; 2], p: usize, s: [usize; 2], pair: &Pair<'_>) -> [[usize; 2]; 2] {
    let j = p as f64 / 2.0;
    let at = |c: [f64; 2]| [clamp_corner(c, p, s), clamp_corner(apply(t, c), p, s)];
    for _ in 0..100 {
        let c = [center[0] + rng.random_range(-j..j), center[1] + rng.random_range(-j..j)];
        let o = at(c);
        if window_hits(pair.masks[0], s[1], o[0], p) && window_hits(pair.masks[1], s[1], o[1], p) {
            return o;
        }
    }
    at(center)
}

fn background_origins(rng: &mut Rng, t: &[[f64; 3]; 2], p: usize, s: [usize; 2], pair: &Pair<'_>) -> Option<[[usize; 2]; 2]> {
    let half = p as f64 / 2.0;
    for _ in 0..2000 {
        let c = [
            rng.random_range(half..=s[1] as f64 - half),
            rng.random_range(half..=s[0] as f64 - half),
        ];
        let (Some(a), Some(b)) = (corner(c, p, s), corner(apply(t, c), p, s)) else {
            continue;
        };
        if !window_hits(pair.masks[0], s[1], a, p) && !window_hits(pair.masks[1], s[1], b, p) {
            return Some([a, b]);
        }
    }
    None
}

/// Bundles patch records as a patch dataset with its manifest.
pub fn patch_dataset(records: &[PatchRecord], size: usize) -> (Manifest, Dataset) {
    let metadata = Metadata {
        kind: DatasetKind::Patch,
        image_size: [size, size],
        views_per_sample: 2,
        class_names: PATCH_CLASSES.iter().map(|s| s.to_string()).collect(),
        view_transform: None,
        label_rule: None,
    };
    let entries = records
        .iter()
        .map(|r| Entry {
            id: r.id.clone(),
            views: vec![format!("patches/{}_0.pgm", r.id), format!("patches/{}_1.pgm", r.id)],
            labels: vec![],
            class: Some(r.class),
            masks: vec![],
            lesions: vec![],
        })
        .collect();
    let samples = records
        .iter()
        .map(|r| Sample {
            id: r.id.clone(),
            views: r.views.clone(),
            labels: vec![],
            class: Some(r.class),
            masks: None,
        })
        .collect();
    (Manifest::new(metadata.clone(), entries), Dataset { metadata, samples })
}

/// Writes patch images and a patch manifest under `dir`.
pub fn write_patches(dir: &Path, records: &[PatchRecord], size: usize) -> Result<Manifest> {
    let (manifest, dataset) = patch_dataset(records, size);
    let sub = dir.join("patches");
    std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    for (e, s) in manifest.entries.iter().zip(&dataset.samples) {
        for (v, path) in e.views.iter().enumerate() {
            let img = Tensor::new(&[1, size, size], plane(&s.views, v).to_vec())?;
            save_image(&dir.join(path), &img)?;
        }
    }
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
