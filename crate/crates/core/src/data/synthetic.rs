//! Procedural multi-view exams: a textured background per view plus a
//! lesion drawn from a latent shared by the views of one side.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{
    lesion_class, DatasetKind, Dataset, Entry, Lesion, LesionKind, LesionShape, Manifest, Metadata, Sample,
};
use super::pgm::{quantize8, save_image};
use crate::error::{Error, Result};
use crate::rng::{derived, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Label is whether the lesion is spiculated; visible in either view.
    #[default]
    SingleView,
    /// View 1 carries a position bit, view 2 an orientation bit; the label
    /// is their XOR.
    CrossViewXor,
}

impl LabelRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelRule::SingleView => "single-view",
            LabelRule::CrossViewXor => "cross-view-xor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SyntheticSpec {
    pub size: usize,
    pub count: usize,
    /// 2 (one side) or 4 (`[L-CC, L-MLO, R-CC, R-MLO]`).
    pub views: usize,
    pub label_rule: LabelRule,
    /// Lesion radius range as fractions of `size`.
    pub radius: [f64; 2],
    pub contrast: [f64; 2],
    pub noise: f64,
    /// Amplitude of the smooth background texture.
    pub texture: f64,
    /// Probability that a lesion is a mass rather than a calcification cluster.
    pub mass_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            size: 32,
            count: 100,
            views: 2,
            label_rule: LabelRule::SingleView,
            radius: [0.09, 0.14],
            contrast: [0.3, 0.5],
            noise: 0.03,
            texture: 0.15,
            mass_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::config(format!("synthetic size {} is below 16", self.size)));
        }
        if self.count == 0 {
            return Err(Error::config("synthetic count must be at least 1"));
        }
        if self.views != 2 && self.views != 4 {
            return Err(Error::config(format!("synthetic views must be 2 or 4, got {}", self.views)));
        }
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 < r[0] && r[0] <= r[1];
        if !range_ok(self.radius) || self.radius[1] > 0.2 {
            return Err(Error::config(format!("bad radius range {:?}", self.radius)));
        }
        if !range_ok(self.contrast) || self.contrast[1] > 1.0 {
            return Err(Error::config(format!("bad contrast range {:?}", self.contrast)));
        }
        if !(self.noise >= 0.0 && self.texture >= 0.0 && (0.0..=1.0).contains(&self.mass_fraction)) {
            return Err(Error::config("noise and texture must be non-negative, mass-fraction in [0, 1]"));
        }
        Ok(())
    }

    pub fn kind(&self) -> DatasetKind {
        if self.views == 4 {
            DatasetKind::FourView
        } else {
            DatasetKind::TwoView
        }
    }

    /// Pixel-space map from view 1 to view 2: a fixed small rotation and
    /// shrink about the image center plus a shift.
    pub fn view_transform(&self) -> Affine {
        let s = self.size as f64;
        Affine::about_center(s, 12f64.to_radians(), 0.92, [0.04 * s, -0.03 * s])
    }
}

/// `p' = M·[x, y, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine(pub [[f64; 3]; 2]);

impl Affine {
    pub const IDENTITY: Affine = Affine([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn about_center(size: f64, angle: f64, scale: f64, shift: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let (a, b, cc, d) = (scale * c, -scale * s, scale * s, scale * c);
        let m = size / 2.0;
        Affine([
            [a, b, m - a * m - b * m + shift[0]],
            [cc, d, m - cc * m - d * m + shift[1]],
        ])
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    pub fn inverse(&self) -> Affine {
        let m = &self.0;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        Affine([
            [a, b, -(a * m[0][2] + b * m[1][2])],
            [c, d, -(c * m[0][2] + d * m[1][2])],
        ])
    }
}

/// Continuous lesion intensity in view-1 coordinates.
#[derive(Clone, Debug)]
enum Shape {
    Disk { r: f64 },
    /// Core disk plus tapered rays of the given angles and length.
    Star { core: f64, rays: Vec<f64>, len: f64 },
    Dots { dots: Vec<[f64; 2]>, r: f64 },
    /// Elongated blob with semi-axes `(a, b)`; `vertical` swaps them.
    Rod { a: f64, b: f64, vertical: bool },
}

fn soft_edge(inside: f64) -> f64 {
    // `inside` is the signed distance into the shape in pixels
    (inside + 0.5).clamp(0.0, 1.0)
}

impl Shape {
    /// Value in `[0, 1]` at offset `(dx, dy)` from the lesion center.
    fn at(&self, dx: f64, dy: f64) -> f64 {
        let d = dx.hypot(dy);
        match self {
            Shape::Disk { r } => soft_edge(r - d),
            Shape::Star { core, rays, len } => {
                let mut v = soft_edge(core - d);
                for &t in rays {
                    let (s, c) = t.sin_cos();
                    let along = dx * c + dy * s;
                    if along < 0.0 || along > *len {
                        continue;
                    }
                    let across = (dy * c - dx * s).abs();
                    let half = 0.7 * (1.0 - along / len) + 0.25;
                    v = v.max(soft_edge(half - across));
                }
                v
            }
            Shape::Dots { dots, r } => dots
                .iter()
                .map(|p| soft_edge(r - (dx - p[0]).hypot(dy - p[1])))
                .fold(0.0, f64::max),
            Shape::Rod { a, b, vertical } => {
                let (u, w) = if *vertical { (dy, dx) } else { (dx, dy) };
                let e = ((u / a).powi(2) + (w / b).powi(2)).sqrt();
                // approximate signed distance scaled by the short axis
                soft_edge((1.0 - e) * b)
            }
        }
    }

    /// Radius of a disk containing the whole shape.
    fn extent(&self) -> f64 {
        match self {
            Shape::Disk { r } => *r,
            Shape::Star { len, .. } => *len,
            Shape::Dots { dots, r } => dots.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max) + r,
            Shape::Rod { a, .. } => *a,
        }
    }
}

#[derive(Clone, Debug)]
struct Blob {
    center: [f64; 2],
    shape: Shape,
    contrast: f64,
}

/// A lesion placed in a view, plus the map from pixel coordinates of that
/// view back to the blob's frame.
struct Placed<'a> {
    blob: &'a Blob,
    back: Affine,
}

struct SideRender {
    views: [Vec<f32>; 2],
    masks: [Vec<f32>; 2],
    label: u8,
    lesion: Lesion,
    cues: Option<[u8; 2]>,
}

fn uniform(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Smooth low-frequency background: a base level plus a few broad bumps.
fn texture(spec: &SyntheticSpec, rng: &mut Rng) -> Vec<f32> {
    let s = spec.size;
    let sf = s as f64;
    let bumps: Vec<([f64; 2], f64, f64)> = (0..5)
        .map(|_| {
            let c = [rng.random_range(0.0..sf), rng.random_range(0.0..sf)];
            let amp = spec.texture * rng.random_range(-1.0..1.0);
            let sigma = sf * rng.random_range(0.12..0.3);
            (c, amp, sigma)
        })
        .collect();
    let base = 0.3 + rng.random_range(-0.05..0.05);
    let mut out = vec![0.0f32; s * s];
    for y in 0..s {
        for x in 0..s {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let mut v = base;
            for (c, amp, sigma) in &bumps {
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            out[y * s + x] = v as f32;
        }
    }
    out
}

/// Adds the blobs and noise onto `bg`; returns the view and its mask.
fn compose(spec: &SyntheticSpec, mut bg: Vec<f32>, blobs: &[Placed<'_>], rng: &mut Rng) -> (Vec<f32>, Vec<f32>) {
    let s = spec.size;
    let noise = Normal::new(0.0, spec.noise.max(1e-12)).expect("valid sigma");
    let mut mask = vec![0.0f32; s * s];
    for y in 0..s {
        for x in 0..s {
            let i = y * s + x;
            let mut lesion: f64 = 0.0;
            let mut hit = false;
            for pl in blobs {
                let q = pl.back.apply([x as f64 + 0.5, y as f64 + 0.5]);
                let v = pl.blob.shape.at(q[0] - pl.blob.center[0], q[1] - pl.blob.center[1]);
                lesion = lesion.max(pl.blob.contrast * v);
                hit |= v >= 0.5;
            }
            let n = if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            bg[i] = quantize8((bg[i] as f64 + lesion + n) as f32);
            mask[i] = if hit { 1.0 } else { 0.0 };
        }
    }
    (bg, mask)
}

fn mask_box(mask: &[f32], s: usize) -> Option<[usize; 4]> {
    let mut b = [usize::MAX, usize::MAX, 0, 0];
    let mut any = false;
    for y in 0..s {
        for x in 0..s {
            if mask[y * s + x] > 0.5 {
                any = true;
                b[0] = b[0].min(x);
                b[1] = b[1].min(y);
                b[2] = b[2].max(x + 1);
                b[3] = b[3].max(y + 1);
            }
        }
    }
    any.then_some(b)
}

/// Center sampled so a disk of radius `extent` stays inside the image in
/// view 1 and, mapped through `t`, in view 2.
fn place(rng: &mut Rng, size: f64, extent: f64, t: &Affine, x_range: Option<[f64; 2]>) -> [f64; 2] {
    let lo = extent + 1.0;
    let hi = size - extent - 1.0;
    let (xlo, xhi) = match x_range {
        Some([a, b]) => (a.max(lo), b.min(hi)),
        None => (lo, hi),
    };
    let mut p = [(xlo + xhi) / 2.0, size / 2.0];
    for _ in 0..100 {
        let c = [rng.random_range(xlo..xhi), rng.random_range(lo..hi)];
        let q = t.apply(c);
        if q.iter().all(|&v| v >= lo && v <= hi) {
            p = c;
            break;
        }
    }
    p
}

fn lesion_shape(rng: &mut Rng, kind: LesionKind, shape: LesionShape, r: f64) -> Shape {
    match (kind, shape) {
        (LesionKind::Mass, LesionShape::Round) => Shape::Disk { r },
        (LesionKind::Mass, LesionShape::Spiculated) => {
            let k = rng.random_range(6..=9);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let rays = (0..k)
                .map(|j| phase + std::f64::consts::TAU * (j as f64 + rng.random_range(-0.2..0.2)) / k as f64)
                .collect();
            Shape::Star {
                core: 0.55 * r,
                rays,
                len: 2.0 * r,
            }
        }
        (LesionKind::Calc, LesionShape::Round) => {
            // compact cluster
            let k = rng.random_range(5..=8);
            let dots = (0..k)
                .map(|_| {
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    let d = 0.8 * r * rng.random::<f64>().sqrt();
                    [d * t.cos(), d * t.sin()]
                })
                .collect();
            Shape::Dots { dots, r: 0.9 }
        }
        (LesionKind::Calc, LesionShape::Spiculated) => {
            // dots strung along a few branches
            let branches = rng.random_range(2..=3);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let mut dots = vec![[0.0, 0.0]];
            for j in 0..branches {
                let t = phase + std::f64::consts::TAU * j as f64 / branches as f64;
                for step in 1..=3 {
                    let d = 2.0 * r * step as f64 / 3.0;
                    dots.push([d * t.cos(), d * t.sin()]);
                }
            }
            Shape::Dots { dots, r: 0.9 }
        }
    }
}

fn render_side(spec: &SyntheticSpec, rng: &mut Rng, t: &Affine) -> SideRender {
    let size = spec.size as f64;
    let r = size * uniform(rng, spec.radius);
    let contrast = uniform(rng, spec.contrast);
    let bg1 = texture(spec, rng);
    let bg2 = texture(spec, rng);
    match spec.label_rule {
        LabelRule::SingleView => {
            let kind = if rng.random_bool(spec.mass_fraction) {
                LesionKind::Mass
            } else {
                LesionKind::Calc
            };
            let shape = if rng.random_bool(0.5) {
                LesionShape::Spiculated
            } else {
                LesionShape::Round
            };
            let geometry = lesion_shape(rng, kind, shape, r);
            let center = place(rng, size, geometry.extent(), t, None);
            let blob = Blob {
                center,
                shape: geometry,
                contrast,
            };
            let gain = rng.random_range(0.85..1.0);
            let blob2 = Blob {
                contrast: contrast * gain,
                ..blob.clone()
            };
            let (v1, m1) = compose(spec, bg1, &[Placed { blob: &blob, back: Affine::IDENTITY }], rng);
            let (v2, m2) = compose(spec, bg2, &[Placed { blob: &blob2, back: t.inverse() }], rng);
            let boxes = [&m1, &m2]
                .iter()
                .map(|m| mask_box(m, spec.size).unwrap_or([0, 0, 0, 0]))
                .collect();
            SideRender {
                views: [v1, v2],
                masks: [m1, m2],
                label: (shape == LesionShape::Spiculated) as u8,
                lesion: Lesion {
                    kind,
                    shape,
                    side: 0,
                    boxes,
                },
                cues: None,
            }
        }
        LabelRule::CrossViewXor => {
            let cue1 = rng.random_bool(0.5) as u8;
            let cue2 = rng.random_bool(0.5) as u8;
            let half = size / 2.0;
            let xr = if cue1 == 1 { [half, size] } else { [0.0, half] };
            let disk = Blob {
                center: place(rng, size, r, &Affine::IDENTITY, Some(xr)),
                shape: Shape::Disk { r },
                contrast,
            };
            let rod_shape = Shape::Rod {
                a: 1.8 * r,
                b: 0.6 * r,
                vertical: cue2 == 1,
            };
            let rod = Blob {
                center: place(rng, size, rod_shape.extent(), &Affine::IDENTITY, None),
                shape: rod_shape,
                contrast,
            };
            let (v1, m1) = compose(spec, bg1, &[Placed { blob: &disk, back: Affine::IDENTITY }], rng);
            let (v2, m2) = compose(spec, bg2, &[Placed { blob: &rod, back: Affine::IDENTITY }], rng);
            let boxes = [&m1, &m2]
                .iter()
                .map(|m| mask_box(m, spec.size).unwrap_or([0, 0, 0, 0]))
                .collect();
            SideRender {
                views: [v1, v2],
                masks: [m1, m2],
                label: cue1 ^ cue2,
                lesion: Lesion {
                    kind: LesionKind::Mass,
                    shape: LesionShape::Round,
                    side: 0,
                    boxes,
                },
                cues: Some([cue1, cue2]),
            }
        }
    }
}

/// An in-memory dataset plus the manifest `gen_synthetic` would write.
pub struct Rendered {
    pub manifest: Manifest,
    pub dataset: Dataset,
    /// Per side: the two designed cue bits of cross-view-xor samples.
    pub cues: Vec<Vec<[u8; 2]>>,
}

pub fn sample_id(i: usize) -> String {
    format!("s{i:05}")
}

pub fn view_names(views: usize) -> &'static [&'static str] {
    if views == 4 {
        &["l-cc", "l-mlo", "r-cc", "r-mlo"]
    } else {
        &["cc", "mlo"]
    }
}

/// Renders sample `index` of `spec`; independent of every other sample.
pub fn render_sample(spec: &SyntheticSpec, index: usize) -> Result<(Sample, Entry, Vec<[u8; 2]>)> {
    spec.validate()?;
    let t = match spec.label_rule {
        LabelRule::SingleView => spec.view_transform(),
        LabelRule::CrossViewXor => Affine::IDENTITY,
    };
    let mut rng = derived(spec.seed, 0x5E_ED, index as u64);
    let s = spec.size;
    let id = sample_id(index);
    let mut planes = Vec::new();
    let mut masks = Vec::new();
    let mut labels = Vec::new();
    let mut lesions = Vec::new();
    let mut cues = Vec::new();
    for side in 0..spec.views / 2 {
        let r = render_side(spec, &mut rng, &t);
        let [v1, v2] = r.views;
        let [m1, m2] = r.masks;
        planes.extend([v1, v2]);
        masks.extend([m1, m2]);
        labels.push(r.label);
        lesions.push(Lesion {
            side: 2 * side,
            ..r.lesion
        });
        cues.extend(r.cues);
    }
    let names = view_names(spec.views);
    let class = (spec.views == 2 && spec.label_rule == LabelRule::SingleView)
        .then(|| lesion_class(lesions[0].kind, lesions[0].shape));
    let entry = Entry {
        id: id.clone(),
        views: names.iter().map(|v| format!("images/{id}_{v}.pgm")).collect(),
        labels: labels.clone(),
        class,
        masks: names.iter().map(|v| format!("masks/{id}_{v}.pgm")).collect(),
        lesions,
    };
    let v = planes.len();
    let sample = Sample {
        id,
        views: Tensor::new(&[v, s, s], planes.concat())?,
        labels,
        class,
        masks: Some(Tensor::new(&[v, s, s], masks.concat())?),
    };
    Ok((sample, entry, cues))
}

pub fn metadata(spec: &SyntheticSpec) -> Metadata {
    Metadata {
        kind: spec.kind(),
        image_size: [spec.size, spec.size],
        views_per_sample: spec.views,
        class_names: vec!["negative".into(), "positive".into()],
        view_transform: (spec.label_rule == LabelRule::SingleView).then(|| spec.view_transform().0),
        label_rule: Some(spec.label_rule.as_str().into()),
    }
}

pub fn render_synthetic(spec: &SyntheticSpec) -> Result<Rendered> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.count);
    let mut entries = Vec::with_capacity(spec.count);
    let mut cues = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let (s, e, c) = render_sample(spec, i)?;
        samples.push(s);
        entries.push(e);
        cues.push(c);
    }
    let metadata = metadata(spec);
    Ok(Rendered {
        manifest: Manifest::new(metadata.clone(), entries),
        dataset: Dataset { metadata, samples },
        cues,
    })
}

fn plane(t: &Tensor<f32>, v: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    let len = s[1] * s[2];
    Tensor::new(&[1, s[1], s[2]], t.data()[v * len..(v + 1) * len].to_vec())
}

/// Writes an in-memory dataset's images and masks under `dir` following
/// the paths in `manifest`, then the manifest itself.
pub fn write_dataset(dir: &Path, manifest: &Manifest, dataset: &Dataset) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (e, s) in manifest.entries.iter().zip(&dataset.samples) {
        for (v, path) in e.views.iter().enumerate() {
            save_image(&dir.join(path), &plane(&s.views, v)?)?;
        }
        if let Some(m) = &s.masks {
            for (v, path) in e.masks.iter().enumerate() {
                save_image(&dir.join(path), &plane(m, v)?)?;
            }
        }
    }
    manifest.save(&dir.join("manifest.json"))
}

/// Renders `spec` to `dir` and returns the manifest written there.
pub fn gen_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<Manifest> {
    let r = render_synthetic(spec)?;
    write_dataset(dir, &r.manifest, &r.dataset)?;
    Ok(r.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(count: usize, rule: LabelRule) -> SyntheticSpec {
        SyntheticSpec {
            count,
            label_rule: rule,
            seed: 11,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_spec_gives_identical_files() {
        let s = spec(4, LabelRule::SingleView);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_synthetic(&s, a.path()).unwrap();
        gen_synthetic(&s, b.path()).unwrap();
        for rel in ["manifest.json", "images/s00003_mlo.pgm", "masks/s00002_cc.pgm"] {
            let x = std::fs::read(a.path().join(rel)).unwrap();
            let y = std::fs::read(b.path().join(rel)).unwrap();
            assert_eq!(x, y, "{rel}");
        }
    }

    #[test]
    fn written_dataset_loads_back_exactly() {
        let s = spec(3, LabelRule::SingleView);
        let dir = tempfile::tempdir().unwrap();
        gen_synthetic(&s, dir.path()).unwrap();
        let loaded = Dataset::load(&dir.path().join("manifest.json")).unwrap();
        let r = render_synthetic(&s).unwrap();
        assert_eq!(loaded.samples, r.dataset.samples);
    }

    #[test]
    fn views_share_lesion_through_the_transform() {
        let s = spec(20, LabelRule::SingleView);
        let t = s.view_transform();
        let r = render_synthetic(&s).unwrap();
        for e in &r.manifest.entries {
            let b = &e.lesions[0].boxes;
            let c1 = [(b[0][0] + b[0][2]) as f64 / 2.0, (b[0][1] + b[0][3]) as f64 / 2.0];
            let c2 = [(b[1][0] + b[1][2]) as f64 / 2.0, (b[1][1] + b[1][3]) as f64 / 2.0];
            let p = t.apply(c1);
            // box centers move with the map up to rasterization of the extent
            assert!((p[0] - c2[0]).abs() < 3.0 && (p[1] - c2[1]).abs() < 3.0, "{p:?} vs {c2:?}");
        }
    }

    #[test]
    fn masks_mark_bright_pixels() {
        let s = SyntheticSpec {
            noise: 0.0,
            texture: 0.0,
            ..spec(5, LabelRule::SingleView)
        };
        let r = render_synthetic(&s).unwrap();
        for smp in &r.dataset.samples {
            let m = smp.masks.as_ref().unwrap();
            let inside: Vec<f32> = smp.views.data().iter().zip(m.data()).filter(|(_, &k)| k > 0.5).map(|(&v, _)| v).collect();
            let outside_max = smp.views.data().iter().zip(m.data()).filter(|(_, &k)| k < 0.5).map(|(&v, _)| v).fold(0.0f32, f32::max);
            assert!(!inside.is_empty());
            let inside_mean = inside.iter().sum::<f32>() / inside.len() as f32;
            assert!(inside_mean > outside_max, "{inside_mean} {outside_max}");
        }
    }

    #[test]
    fn affine_inverse_round_trips() {
        let t = SyntheticSpec::default().view_transform();
        let p = [3.0, 20.5];
        let q = t.inverse().apply(t.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn four_view_samples_have_two_sides() {
        let s = SyntheticSpec {
            views: 4,
            ..spec(3, LabelRule::SingleView)
        };
        let r = render_synthetic(&s).unwrap();
        r.manifest.validate().unwrap();
        for (e, smp) in r.manifest.entries.iter().zip(&r.dataset.samples) {
            assert_eq!(e.labels.len(), 2);
            assert_eq!(smp.views.shape(), &[4, 32, 32]);
            assert_eq!(e.lesions.iter().map(|l| l.side).collect::<Vec<_>>(), vec![0, 2]);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for bad in [
            SyntheticSpec { size: 8, ..Default::default() },
            SyntheticSpec { count: 0, ..Default::default() },
            SyntheticSpec { views: 3, ..Default::default() },
        ] {
            assert!(matches!(render_synthetic(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn spec_json_uses_kebab_case() {
        let s: SyntheticSpec =
            serde_json::from_str(r#"{"size": 48, "label-rule": "cross-view-xor", "mass-fraction": 1.0}"#).unwrap();
        assert_eq!(s.size, 48);
        assert_eq!(s.label_rule, LabelRule::CrossViewXor);
        assert!(serde_json::from_str::<SyntheticSpec>(r#"{"sizes": 48}"#).is_err());
    }
}
