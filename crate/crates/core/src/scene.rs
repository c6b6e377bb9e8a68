//! Procedural depth scenes.
//!
//! Each scene is a background plane whose depth ramps from far (top) to
//! near (bottom), overlaid with axis-aligned rectangles at random depths;
//! the nearest surface wins at each pixel. Surface colour is a fixed
//! function of depth plus per-pixel texture noise, so depth is recoverable
//! from appearance.
//!
//! Noisy patches model reflective surfaces: inside a patch the image shows
//! a striped sheen over the colour of some unrelated depth, and the depth
//! label carries additive Gaussian noise. Outside patches the label equals
//! the rendered depth exactly.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub size: usize,
    pub min_rects: usize,
    pub max_rects: usize,
    pub rect_side: (usize, usize),
    pub rect_depth: (f32, f32),
    pub far_depth: f32,
    /// Bottom-row background depth is drawn from this range.
    pub near_depth: (f32, f32),
    /// Patch count is uniform in `0..=max_noisy_patches`.
    pub max_noisy_patches: usize,
    pub patch_side: (usize, usize),
    pub label_noise_std: f32,
    pub texture_noise: f32,
    pub sheen: f32,
    /// Labels are clamped to this range.
    pub label_range: (f32, f32),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            size: 64,
            min_rects: 3,
            max_rects: 8,
            rect_side: (8, 28),
            rect_depth: (1.5, 8.0),
            far_depth: 9.0,
            near_depth: (5.0, 7.0),
            max_noisy_patches: 3,
            patch_side: (8, 16),
            label_noise_std: 0.5,
            texture_noise: 0.04,
            sheen: 0.3,
            label_range: (1.0, 9.0),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("scene", r));
        if self.size == 0 {
            return bad("size must be positive");
        }
        if self.min_rects > self.max_rects {
            return bad("min_rects exceeds max_rects");
        }
        for (lo, hi) in [self.rect_side, self.patch_side] {
            if lo == 0 || lo > hi || hi > self.size {
                return bad("side ranges must satisfy 0 < lo <= hi <= size");
            }
        }
        if !(self.label_range.0 > 0.0 && self.label_range.0 < self.label_range.1) {
            return bad("label range must be positive and increasing");
        }
        Ok(())
    }

    /// Expected fraction of pixels covered by noisy patches, ignoring
    /// overlap between patches of the same scene.
    pub fn expected_patch_fraction(&self) -> f64 {
        let mean_count = self.max_noisy_patches as f64 / 2.0;
        let mean_side = (self.patch_side.0 + self.patch_side.1) as f64 / 2.0;
        mean_count * mean_side * mean_side / (self.size * self.size) as f64
    }
}

/// Axis-aligned pixel rectangle `[x, x + w) × [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }
}

/// One training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// RGB, `3 × h × w`, values in `[0, 1]`.
    pub image: Tensor,
    /// Depth label, `1 × h × w`.
    pub depth: Tensor,
    /// Evaluable pixels, row-major.
    pub mask: Vec<bool>,
    pub seed: u64,
    pub patches: Vec<Rect>,
}

impl Sample {
    /// Per-pixel flag: inside any noisy patch.
    pub fn patch_mask(&self) -> Vec<bool> {
        let (h, w) = (self.depth.shape()[1], self.depth.shape()[2]);
        patch_mask(&self.patches, h, w)
    }
}

pub fn patch_mask(patches: &[Rect], h: usize, w: usize) -> Vec<bool> {
    (0..h * w)
        .map(|i| patches.iter().any(|r| r.contains(i % w, i / w)))
        .collect()
}

/// A rendered scene before label noise, kept for tests.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub sample: Sample,
    pub clean_depth: Tensor,
}

/// Seed of sample `index` under `master_seed`.
pub fn sample_seed(master_seed: u64, index: u64) -> u64 {
    seed::mix(master_seed, index)
}

/// Surface colour for a given depth.
pub fn albedo(depth: f32, params: &SceneParams) -> [f32; 3] {
    let (lo, hi) = params.label_range;
    let t = ((depth - lo) / (hi - lo)).clamp(0.0, 1.0);
    [
        0.1 + 0.8 * t,
        0.85 - 0.7 * t,
        0.25 + 0.5 * libm::sinf(core::f32::consts::PI * t),
    ]
}

pub fn generate(params: &SceneParams, seed: u64) -> Result<Rendered> {
    params.validate()?;
    let n = params.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let near = rng.random_range(params.near_depth.0..=params.near_depth.1);
    let mut depth: Vec<f32> = (0..n * n)
        .map(|i| {
            let row = (i / n) as f32 / (n.max(2) - 1) as f32;
            params.far_depth + (near - params.far_depth) * row
        })
        .collect();

    let rect_count = rng.random_range(params.min_rects..=params.max_rects);
    for _ in 0..rect_count {
        let w = rng.random_range(params.rect_side.0..=params.rect_side.1);
        let h = rng.random_range(params.rect_side.0..=params.rect_side.1);
        let r = Rect {
            x: rng.random_range(0..=n - w),
            y: rng.random_range(0..=n - h),
            w,
            h,
        };
        let z = rng.random_range(params.rect_depth.0..=params.rect_depth.1);
        for py in r.y..r.y + r.h {
            for d in &mut depth[py * n + r.x..py * n + r.x + r.w] {
                *d = d.min(z);
            }
        }
    }

    let plane = n * n;
    let mut image = vec![0.0f32; 3 * plane];
    for (p, &z) in depth.iter().enumerate() {
        let rgb = albedo(z, params);
        for ch in 0..3 {
            image[ch * plane + p] = rgb[ch];
        }
    }

    let patch_count = rng.random_range(0..=params.max_noisy_patches);
    let mut patches = Vec::with_capacity(patch_count);
    for _ in 0..patch_count {
        let w = rng.random_range(params.patch_side.0..=params.patch_side.1);
        let h = rng.random_range(params.patch_side.0..=params.patch_side.1);
        let r = Rect {
            x: rng.random_range(0..=n - w),
            y: rng.random_range(0..=n - h),
            w,
            h,
        };
        let reflected = albedo(rng.random_range(params.rect_depth.0..=params.rect_depth.1), params);
        for py in r.y..r.y + r.h {
            for px in r.x..r.x + r.w {
                let stripe = if (px + py) % 4 < 2 { params.sheen } else { 0.0 };
                for ch in 0..3 {
                    image[ch * plane + py * n + px] = reflected[ch] + stripe;
                }
            }
        }
        patches.push(r);
    }

    for v in &mut image {
        let noise = rng.random_range(-params.texture_noise..=params.texture_noise);
        *v = (*v + noise).clamp(0.0, 1.0);
    }

    let clean: Vec<f32> = depth.iter().map(|d| d.clamp(params.label_range.0, params.label_range.1)).collect();
    let normal = Normal::new(0.0f32, params.label_noise_std).map_err(|_| Error::invalid("scene", "label noise std"))?;
    let in_patch = patch_mask(&patches, n, n);
    let label: Vec<f32> = clean
        .iter()
        .zip(&in_patch)
        .map(|(&d, &noisy)| {
            if noisy {
                (d + normal.sample(&mut rng)).clamp(params.label_range.0, params.label_range.1)
            } else {
                d
            }
        })
        .collect();

    let sample = Sample {
        image: Tensor::new(&[3, n, n], image)?,
        depth: Tensor::new(&[1, n, n], label)?,
        mask: vec![true; plane],
        seed,
        patches,
    };
    Ok(Rendered {
        sample,
        clean_depth: Tensor::new(&[1, n, n], clean)?,
    })
}

/// Sample `index` of the dataset generated from `master_seed`.
pub fn generate_indexed(params: &SceneParams, master_seed: u64, index: u64) -> Result<Sample> {
    Ok(generate(params, sample_seed(master_seed, index))?.sample)
}

/// Train/val/test assignment: 80/10/10 by index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn of(index: usize, count: usize) -> Split {
        let train_end = count * 8 / 10;
        let val_end = count * 9 / 10;
        if index < train_end {
            Split::Train
        } else if index < val_end {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}
