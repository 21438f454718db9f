//! Procedurally rendered landmark collections.
//!
//! Every class is a scene of textured convex polygons over a two-tone
//! backdrop. Views of a class re-render the same scene through a jittered
//! similarity transform and a brightness change; distractors are scenes of
//! their own, each seen once.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imagecore::{save_image, Image};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Maximum rotation, degrees.
    pub rotation_deg: f64,
    /// Maximum relative scale change.
    pub scale: f64,
    /// Maximum translation, as a fraction of the image side.
    pub translate: f64,
    /// Maximum relative brightness change.
    pub gain: f64,
    /// Maximum additive brightness offset.
    pub offset: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            rotation_deg: 6.0,
            scale: 0.08,
            translate: 0.05,
            gain: 0.1,
            offset: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub classes: usize,
    pub views: usize,
    pub distractors: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub jitter: Jitter,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            classes: 10,
            views: 5,
            distractors: 150,
            height: 128,
            width: 128,
            jitter: Jitter::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Config("synthetic dataset needs at least one class".into()));
        }
        if self.views < 2 {
            return Err(Error::Config("each class needs a query view and a relevant view".into()));
        }
        if self.height < 32 || self.width < 32 || self.height > 4096 || self.width > 4096 {
            return Err(Error::Config(format!(
                "image size {}x{} outside [32, 4096]",
                self.height, self.width
            )));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("bad dataset name '{}'", self.name)));
        }
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        self.classes * self.views + self.distractors
    }
}

#[derive(Debug, Clone)]
enum Texture {
    Flat,
    Stripes { freq: f64, angle: f64, contrast: f64 },
    Checker { freq: f64, contrast: f64 },
    Dots { freq: f64, radius: f64, contrast: f64 },
}

impl Texture {
    fn value(&self, u: f64, v: f64) -> f64 {
        match *self {
            Texture::Flat => 1.0,
            Texture::Stripes { freq, angle, contrast } => {
                let t = (2.0 * PI * freq * (u * angle.cos() + v * angle.sin())).sin();
                1.0 - contrast * 0.5 * (1.0 - t)
            }
            Texture::Checker { freq, contrast } => {
                let a = ((u * freq).floor() + (v * freq).floor()) as i64;
                if a.rem_euclid(2) == 0 {
                    1.0
                } else {
                    1.0 - contrast
                }
            }
            Texture::Dots { freq, radius, contrast } => {
                let fu = (u * freq).fract() - 0.5;
                let fv = (v * freq).fract() - 0.5;
                if fu * fu + fv * fv < radius * radius {
                    1.0 - contrast
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Shape {
    /// Counter-clockwise convex polygon in scene units.
    vertices: Vec<(f64, f64)>,
    color: [f64; 3],
    texture: Texture,
}

impl Shape {
    fn contains(&self, u: f64, v: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let (x0, y0) = self.vertices[i];
            let (x1, y1) = self.vertices[(i + 1) % n];
            (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) >= 0.0
        })
    }
}

/// A renderable landmark.
#[derive(Debug, Clone)]
pub struct Scene {
    sky: [f64; 3],
    ground: [f64; 3],
    horizon: f64,
    shapes: Vec<Shape>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

impl Scene {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_hue: f64 = rng.random();
        let palette: Vec<[f64; 3]> = (0..3)
            .map(|k| {
                hsv(
                    base_hue + k as f64 * rng.random_range(0.08..0.3),
                    rng.random_range(0.3..0.9),
                    rng.random_range(0.35..0.95),
                )
            })
            .collect();
        let sky = hsv(rng.random_range(0.5..0.7), rng.random_range(0.1..0.5), rng.random_range(0.6..0.95));
        let ground = hsv(rng.random_range(0.05..0.35), rng.random_range(0.1..0.5), rng.random_range(0.2..0.5));
        let n_shapes = rng.random_range(7..12);
        let shapes = (0..n_shapes)
            .map(|i| {
                let (cx, cy) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
                // large shapes first so smaller detail lands on top
                let r = rng.random_range(0.06..0.2) * (1.0 - 0.5 * i as f64 / n_shapes as f64) + 0.03;
                let k = rng.random_range(3..7);
                let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                angles.sort_by(f64::total_cmp);
                let vertices = angles
                    .iter()
                    .map(|a| {
                        let rr = r * rng.random_range(0.7..1.3);
                        (cx + rr * a.cos(), cy + rr * a.sin())
                    })
                    .collect::<Vec<_>>();
                let vertices = convex_hull(vertices);
                let texture = match rng.random_range(0..4) {
                    0 => Texture::Flat,
                    1 => Texture::Stripes {
                        freq: rng.random_range(8.0..24.0),
                        angle: rng.random_range(0.0..PI),
                        contrast: rng.random_range(0.3..0.7),
                    },
                    2 => Texture::Checker {
                        freq: rng.random_range(8.0..20.0),
                        contrast: rng.random_range(0.3..0.6),
                    },
                    _ => Texture::Dots {
                        freq: rng.random_range(8.0..18.0),
                        radius: rng.random_range(0.2..0.4),
                        contrast: rng.random_range(0.3..0.7),
                    },
                };
                let color = palette[rng.random_range(0..palette.len())];
                Shape { vertices, color, texture }
            })
            .collect();
        Scene {
            sky,
            ground,
            horizon: rng.random_range(0.55..0.8),
            shapes,
        }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        for s in self.shapes.iter().rev() {
            if s.contains(u, v) {
                let t = s.texture.value(u, v);
                return s.color.map(|c| c * t);
            }
        }
        if v < self.horizon {
            let k = 0.85 + 0.15 * v / self.horizon;
            self.sky.map(|c| c * k)
        } else {
            self.ground
        }
    }

    /// Bounding box of all shapes, in scene units.
    fn extent(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for s in &self.shapes {
            for &(x, y) in &s.vertices {
                b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
            }
        }
        b
    }
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Camera pose and lighting of one rendered view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub rotation: f64,
    pub scale: f64,
    pub shift: (f64, f64),
    pub gain: f64,
    pub offset: f64,
}

impl View {
    pub const IDENTITY: View = View {
        rotation: 0.0,
        scale: 1.0,
        shift: (0.0, 0.0),
        gain: 1.0,
        offset: 0.0,
    };

    pub fn random(jitter: &Jitter, rng: &mut impl Rng) -> Self {
        let sym = |rng: &mut dyn rand::RngCore, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        View {
            rotation: sym(rng, jitter.rotation_deg).to_radians(),
            scale: 1.0 + sym(rng, jitter.scale),
            shift: (sym(rng, jitter.translate), sym(rng, jitter.translate)),
            gain: 1.0 + sym(rng, jitter.gain),
            offset: sym(rng, jitter.offset),
        }
    }

    /// Image-normalised coordinates to scene coordinates.
    fn to_scene(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - 0.5 - self.shift.0, y - 0.5 - self.shift.1);
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        (0.5 + (c * dx + s * dy) / self.scale, 0.5 + (-s * dx + c * dy) / self.scale)
    }

    fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        let (du, dv) = ((u - 0.5) * self.scale, (v - 0.5) * self.scale);
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        (0.5 + self.shift.0 + c * du - s * dv, 0.5 + self.shift.1 + s * du + c * dv)
    }
}

/// Renders `scene` through `view` with 3x3 supersampling.
pub fn render(scene: &Scene, view: &View, height: usize, width: usize) -> Result<Image> {
    const SS: usize = 3;
    Image::from_fn(height, width, |py, px| {
        let mut acc = [0.0; 3];
        for sy in 0..SS {
            for sx in 0..SS {
                let x = (px as f64 + (sx as f64 + 0.5) / SS as f64) / width as f64;
                let y = (py as f64 + (sy as f64 + 0.5) / SS as f64) / height as f64;
                let (u, v) = view.to_scene(x, y);
                let c = scene.sample(u, v);
                for k in 0..3 {
                    acc[k] += c[k];
                }
            }
        }
        acc.map(|a| a / (SS * SS) as f64 * view.gain + view.offset)
    })
}

/// Pixel bounding box `(x1, y1, x2, y2)` of the scene's shapes in `view`,
/// padded by 4% and clipped to the image.
pub fn scene_box(scene: &Scene, view: &View, height: usize, width: usize) -> (f64, f64, f64, f64) {
    let (u0, v0, u1, v1) = scene.extent();
    let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (u, v) in [(u0, v0), (u1, v0), (u0, v1), (u1, v1)] {
        let (x, y) = view.to_image(u, v);
        b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
    }
    let pad = 0.04;
    let (w, h) = (width as f64, height as f64);
    let x1 = ((b.0 - pad) * w).floor().clamp(0.0, w - 16.0);
    let y1 = ((b.1 - pad) * h).floor().clamp(0.0, h - 16.0);
    let x2 = ((b.2 + pad) * w).ceil().clamp(x1 + 16.0, w);
    let y2 = ((b.3 + pad) * h).ceil().clamp(y1 + 16.0, h);
    (x1, y1, x2, y2)
}

/// One rendered dataset image before it is written to disk.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    /// `Some(class)` for landmark views, `None` for distractors.
    pub class: Option<usize>,
    pub view_index: usize,
    pub image: Image,
    pub bbox: (f64, f64, f64, f64),
}

pub fn class_name(class: usize) -> String {
    format!("landmark{class:02}")
}

/// Renders every image of the collection in memory.
pub fn render_collection(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    let mut jobs = Vec::with_capacity(spec.total_images());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..spec.classes {
        let scene_seed = rng.random::<u64>();
        for v in 0..spec.views {
            let view = if v == 0 {
                View::IDENTITY
            } else {
                View::random(&spec.jitter, &mut rng)
            };
            jobs.push((format!("{}_{:06}", class_name(c), v + 1), Some(c), v, scene_seed, view));
        }
    }
    for d in 0..spec.distractors {
        let scene_seed = rng.random::<u64>();
        let view = View::random(&spec.jitter, &mut rng);
        jobs.push((format!("distractor_{:06}", d + 1), None, 0, scene_seed, view));
    }
    crate::par::try_map(&jobs, |(id, class, view_index, scene_seed, view)| {
        let scene = Scene::random(*scene_seed);
        Ok(SynthImage {
            id: id.clone(),
            class: *class,
            view_index: *view_index,
            image: render(&scene, view, spec.height, spec.width)?,
            bbox: scene_box(&scene, view, spec.height, spec.width),
        })
    })
}

/// Writes a collection in the ground-truth layout read by
/// [`load_oxford_groundtruth`](super::load_oxford_groundtruth).
pub fn write_collection(spec: &SynthSpec, images: &[SynthImage], root: &Path) -> Result<()> {
    let img_dir = root.join("images");
    let gt_dir = root.join("gt");
    for d in [&img_dir, &gt_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    crate::par::try_map(images, |im| save_image(&im.image, img_dir.join(format!("{}.png", im.id))))?;
    for c in 0..spec.classes {
        let members: Vec<&SynthImage> = images.iter().filter(|im| im.class == Some(c)).collect();
        let query = members
            .iter()
            .find(|im| im.view_index == 0)
            .ok_or_else(|| Error::Data(format!("class {c} has no query view")))?;
        let name = format!("{}_1", class_name(c));
        let (x1, y1, x2, y2) = query.bbox;
        let write = |suffix: &str, body: String| {
            let p = gt_dir.join(format!("{name}_{suffix}.txt"));
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("query", format!("synth_{} {x1:.1} {y1:.1} {x2:.1} {y2:.1}\n", query.id))?;
        let good: String = members
            .iter()
            .filter(|im| im.view_index != 0)
            .map(|im| format!("{}\n", im.id))
            .collect();
        write("good", good)?;
        write("ok", String::new())?;
        write("junk", String::new())?;
    }
    let spec_path = root.join("synth_spec.json");
    fs::write(&spec_path, serde_json::to_vec_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_is_counter_clockwise_and_convex() {
        let hull = convex_hull(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)]);
        assert_eq!(hull.len(), 4);
        let s = Shape { vertices: hull, color: [1.0; 3], texture: Texture::Flat };
        assert!(s.contains(0.5, 0.5));
        assert!(!s.contains(1.5, 0.5));
    }

    #[test]
    fn view_transform_inverts() {
        let v = View { rotation: 0.1, scale: 1.07, shift: (0.03, -0.02), gain: 1.0, offset: 0.0 };
        let (u, w) = v.to_scene(0.3, 0.7);
        let (x, y) = v.to_image(u, w);
        assert!((x - 0.3).abs() < 1e-12 && (y - 0.7).abs() < 1e-12);
    }

    #[test]
    fn counts_and_determinism() {
        let spec = SynthSpec { classes: 3, views: 4, distractors: 5, height: 48, width: 40, ..Default::default() };
        let a = render_collection(&spec, 1).unwrap();
        assert_eq!(a.len(), 17);
        let b = render_collection(&spec, 1).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.id == y.id && x.image == y.image));
        let c = render_collection(&spec, 2).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SynthSpec { classes: 0, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { views: 1, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { height: 8, ..Default::default() }.validate().is_err());
    }
}
