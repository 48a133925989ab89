//! Synthetic paired RGB/depth fall-detection dataset.
//!
//! Every scene is a soft circular blob on a background; a "fall" clip
//! translates the blob strictly downward, an "other" clip moves it
//! horizontally or not at all. The RGB rendering draws a bright blob over
//! a drifting sinusoidal texture with per-scene channel color; the texture
//! drift is a motion distractor uncorrelated with the label, and it drifts
//! strictly horizontally so it can never impersonate a fall. The depth
//! rendering encodes the same geometry as intensity proportional to
//! synthetic distance: a flat near backdrop stays dark while the blob sits
//! farther away, at a per-scene distance, so it reads brighter but with
//! less contrast than in RGB. The appearance gap between the renderings
//! (texture and its motion, color, contrast statistics) is the modality
//! gap the adaptation pipeline must cross; the blob motion is the
//! label-carrying signal shared by both.
//!
//! Scene `i` of the train set drives both `rgb_train_i` and
//! `depth_train_i` (same trajectory, modality-specific appearance), so the
//! two training pools depict the same underlying events. Each clip derives
//! its randomness from an independent per-scene stream, which makes
//! generation embarrassingly parallel and byte-deterministic.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ClipRecord, Modality, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Background texture bounds for RGB and the flat depth backdrop; the blob
/// stays strictly brighter than the background in both modalities.
const RGB_BG_BASE: f64 = 0.35;
const RGB_BG_AMP: f64 = 0.2;
const DEPTH_BG: f64 = 0.35;

#[derive(Debug, Clone, Copy)]
struct Scene {
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    r: f64,
    bright: [f64; 3],
    far: f64,
    tex_fx: f64,
    tex_fy: f64,
    tex_phase: f64,
    tex_dx: f64,
    tex_dy: f64,
}

impl Scene {
    /// Draws one scene. The draw count depends only on the label, so the
    /// RGB and depth renderings of a paired scene see identical geometry.
    fn draw(rng: &mut ChaCha8Rng, label: u8, cfg: &SynthConfig) -> Scene {
        let (t, h, w) = (cfg.t as f64, cfg.h as f64, cfg.w as f64);
        let r = (h.min(w) / 8.0).max(1.5);
        let m = r + 1.0;
        let steps = (t - 1.0).max(1.0);
        let (x0, y0, vx, vy);
        if label == 1 {
            // Fall: full vertical sweep from top margin to bottom margin.
            x0 = rng.gen_range(m..=(w - 1.0 - m));
            y0 = m;
            vx = 0.0;
            vy = ((h - 1.0 - m) - m) / steps;
        } else {
            y0 = rng.gen_range(m..=(h - 1.0 - m));
            if rng.gen_bool(0.5) {
                x0 = m;
                vx = ((w - 1.0 - m) - m) / steps;
            } else {
                x0 = rng.gen_range(m..=(w - 1.0 - m));
                vx = 0.0;
            }
            vy = 0.0;
        }
        let bright = [
            0.8 + 0.2 * rng.gen_range(0.0..1.0),
            0.8 + 0.2 * rng.gen_range(0.0..1.0),
            0.8 + 0.2 * rng.gen_range(0.0..1.0),
        ];
        let far = 0.55 + 0.2 * rng.gen_range(0.0..1.0);
        let tex_fx = rng.gen_range(1.0..3.0) / w;
        let tex_fy = rng.gen_range(1.0..3.0) / h;
        let tex_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        // Horizontal-only drift: the nuisance motion must never mimic the
        // vertical sweep that defines a fall.
        let drift = rng.gen_range(1.0..2.5);
        let tex_dx = if rng.gen_bool(0.5) { drift } else { -drift };
        let tex_dy = 0.0;
        Scene { x0, y0, vx, vy, r, bright, far, tex_fx, tex_fy, tex_phase, tex_dx, tex_dy }
    }

    fn center(&self, frame: usize) -> (f64, f64) {
        (self.x0 + self.vx * frame as f64, self.y0 + self.vy * frame as f64)
    }

    /// Soft cone: 1 at the center, 0 at radius r.
    fn blob(&self, x: f64, y: f64, cx: f64, cy: f64) -> f64 {
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        (1.0 - d / self.r).max(0.0)
    }

    fn rgb_bg(&self, x: f64, y: f64, frame: usize) -> f64 {
        let f = frame as f64;
        let u = self.tex_fx * (x - self.tex_dx * f) + self.tex_fy * (y - self.tex_dy * f);
        RGB_BG_BASE + RGB_BG_AMP * (std::f64::consts::TAU * u + self.tex_phase).sin()
    }
}

#[derive(Debug, Clone)]
struct ClipPlan {
    clip_id: String,
    modality: Modality,
    split: Split,
    label: u8,
    scene: u64,
}

fn noise_sampler(level: f64) -> Option<Normal<f64>> {
    if level > 0.0 {
        Some(Normal::new(0.0, level).expect("validated noise level"))
    } else {
        None
    }
}

fn render_clip(plan: &ClipPlan, cfg: &SynthConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, &e))?;
    let mut rng = rng::stream(cfg.seed, Purpose::Synth, plan.scene);
    let scene = Scene::draw(&mut rng, plan.label, cfg);
    let noise = noise_sampler(cfg.noise_level);
    let sample = |rng: &mut ChaCha8Rng| noise.as_ref().map_or(0.0, |n| n.sample(rng));
    let (w, h) = (cfg.w as u32, cfg.h as u32);
    for frame in 0..cfg.t {
        let (cx, cy) = scene.center(frame);
        let path = dir.join(format!("frame_{frame:05}.png"));
        match plan.modality {
            Modality::Rgb => {
                let mut img = image::RgbImage::new(w, h);
                for y in 0..h {
                    for x in 0..w {
                        let b = scene.blob(x as f64, y as f64, cx, cy);
                        let bg = scene.rgb_bg(x as f64, y as f64, frame);
                        let mut px = [0u8; 3];
                        for c in 0..3 {
                            let v = bg * (1.0 - b) + scene.bright[c] * b + sample(&mut rng);
                            px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                        }
                        img.put_pixel(x, y, image::Rgb(px));
                    }
                }
                img.save(&path).map_err(|e| Error::file(&path, &e))?;
            }
            Modality::Depth => {
                let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w, h);
                for y in 0..h {
                    for x in 0..w {
                        let b = scene.blob(x as f64, y as f64, cx, cy);
                        let v = DEPTH_BG * (1.0 - b) + scene.far * b + sample(&mut rng);
                        img.put_pixel(x, y, image::Luma([(v.clamp(0.0, 1.0) * 65535.0).round() as u16]));
                    }
                }
                img.save(&path).map_err(|e| Error::file(&path, &e))?;
            }
        }
    }
    Ok(())
}

fn plans(cfg: &SynthConfig) -> Vec<ClipPlan> {
    let mut out = Vec::new();
    for i in 0..cfg.n_train_pairs {
        let label = (i % 2 == 0) as u8;
        out.push(ClipPlan {
            clip_id: format!("rgb_train_{i:04}"),
            modality: Modality::Rgb,
            split: Split::Train,
            label,
            scene: i as u64,
        });
    }
    for i in 0..cfg.n_train_pairs {
        let label = (i % 2 == 0) as u8;
        out.push(ClipPlan {
            clip_id: format!("depth_train_{i:04}"),
            modality: Modality::Depth,
            split: Split::Train,
            label,
            scene: i as u64,
        });
    }
    for j in 0..cfg.n_test_depth {
        let label = (j % 2 == 0) as u8;
        out.push(ClipPlan {
            clip_id: format!("depth_test_{j:04}"),
            modality: Modality::Depth,
            split: Split::Test,
            label,
            scene: (cfg.n_train_pairs + j) as u64,
        });
    }
    out
}

#[cfg(feature = "parallel")]
fn render_all(plans: &[ClipPlan], cfg: &SynthConfig, root: &Path) -> Result<()> {
    use rayon::prelude::*;
    plans.par_iter().try_for_each(|p| render_clip(p, cfg, &root.join("frames").join(&p.clip_id)))
}

#[cfg(not(feature = "parallel"))]
fn render_all(plans: &[ClipPlan], cfg: &SynthConfig, root: &Path) -> Result<()> {
    plans.iter().try_for_each(|p| render_clip(p, cfg, &root.join("frames").join(&p.clip_id)))
}

/// Renders the dataset under `root` and writes `manifest.csv`. Returns the
/// records exactly as [`crate::data::load_manifest`] will reload them.
pub fn synth_generate(cfg: &SynthConfig, root: &Path) -> Result<Vec<ClipRecord>> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::file(root, &e))?;
    let plans = plans(cfg);
    render_all(&plans, cfg, root)?;

    let mut manifest = String::from("clip_id,modality,split,label,frame_dir\n");
    for p in &plans {
        writeln!(
            manifest,
            "{},{},{},{},frames/{}",
            p.clip_id,
            p.modality.as_str(),
            p.split.as_str(),
            p.label,
            p.clip_id
        )
        .expect("string write");
    }
    let mpath = root.join("manifest.csv");
    fs::write(&mpath, manifest).map_err(|e| Error::file(&mpath, &e))?;

    Ok(plans
        .iter()
        .map(|p| ClipRecord {
            clip_id: p.clip_id.clone(),
            modality: p.modality,
            split: p.split,
            label: Some(p.label),
            frame_dir: root.join("frames").join(&p.clip_id),
        })
        .collect())
}

/// Directory for one clip id, mirroring the generated layout.
pub fn clip_dir(root: &Path, clip_id: &str) -> PathBuf {
    root.join("frames").join(clip_id)
}
