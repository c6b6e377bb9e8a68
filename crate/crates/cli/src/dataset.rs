//! On-disk synthetic datasets: one PPM image, PFM label and PFM mask per
//! sample plus a JSON manifest.

use std::ops::Range;
use std::path::{Path, PathBuf};

use depthgrad_core::scene::{self, Rect, Sample, SceneParams, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub image: String,
    pub depth: String,
    pub mask: String,
}

impl SampleFiles {
    fn for_index(index: usize) -> Self {
        Self {
            image: format!("{index:05}_rgb.ppm"),
            depth: format!("{index:05}_depth.pfm"),
            mask: format!("{index:05}_mask.pfm"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn for_count(count: usize) -> Self {
        let (a, b) = (count * 8 / 10, count * 9 / 10);
        debug_assert!((0..count).all(|i| {
            let s = Split::of(i, count);
            (s == Split::Train) == (i < a) && (s == Split::Test) == (i >= b)
        }));
        Self {
            train: 0..a,
            val: a..b,
            test: b..count,
        }
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub count: usize,
    pub master_seed: u64,
    pub params: SceneParams,
    pub seeds: Vec<u64>,
    pub splits: Splits,
    pub patches: Vec<Vec<Rect>>,
    pub files: Vec<SampleFiles>,
}

impl DatasetManifest {
    fn check(&self, path: &Path) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::Dataset {
                path: path.into(),
                reason: reason.into(),
            })
        };
        if self.version != MANIFEST_VERSION {
            return bad("unsupported manifest version");
        }
        if self.seeds.len() != self.count || self.patches.len() != self.count || self.files.len() != self.count {
            return bad("per-sample lists disagree with count");
        }
        if self.splits != Splits::for_count(self.count) {
            return bad("split ranges disagree with count");
        }
        Ok(())
    }
}

pub fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(Error::usage(format!("unknown split {s:?} (expected train, val or test)"))),
    }
}

/// Generates `count` samples into `out_dir` and returns the manifest.
pub fn generate_dataset(count: usize, master_seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::usage("--n must be at least 1"));
    }
    let params = SceneParams::default();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let samples: Vec<Sample> = (0..count)
        .into_par_iter()
        .map(|i| scene::generate_indexed(&params, master_seed, i as u64))
        .collect::<depthgrad_core::Result<_>>()?;

    let mut files = Vec::with_capacity(count);
    for (i, s) in samples.iter().enumerate() {
        let f = SampleFiles::for_index(i);
        let (h, w) = (s.depth.shape()[1], s.depth.shape()[2]);
        io::write_ppm(&out_dir.join(&f.image), &s.image)?;
        io::write_pfm(&out_dir.join(&f.depth), &s.depth)?;
        io::write_pfm(&out_dir.join(&f.mask), &io::mask_to_map(&s.mask, h, w)?)?;
        files.push(f);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        count,
        master_seed,
        params,
        seeds: samples.iter().map(|s| s.seed).collect(),
        splits: Splits::for_count(count),
        patches: samples.into_iter().map(|s| s.patches).collect(),
        files,
    };
    io::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A dataset directory with its parsed manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let manifest: DatasetManifest = io::read_json(&path)?;
        manifest.check(&path)?;
        Ok(Self {
            dir: dir.into(),
            manifest,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    /// Reads sample `index` back from disk.
    pub fn load(&self, index: usize) -> Result<Sample> {
        let m = &self.manifest;
        let f = m.files.get(index).ok_or_else(|| Error::Dataset {
            path: self.manifest_path(),
            reason: format!("sample {index} out of range"),
        })?;
        let image = io::read_ppm(&self.dir.join(&f.image))?;
        let depth = io::read_pfm(&self.dir.join(&f.depth))?;
        let mask_path = self.dir.join(&f.mask);
        let mask_map = io::read_pfm(&mask_path)?;
        let size = m.params.size;
        for (path, t, c) in [(&f.image, &image, 3), (&f.depth, &depth, 1), (&f.mask, &mask_map, 1)] {
            if t.shape() != [c, size, size] {
                return Err(Error::Dataset {
                    path: self.dir.join(path),
                    reason: format!("expected {c}x{size}x{size}, found {:?}", t.shape()),
                });
            }
        }
        Ok(Sample {
            image,
            depth,
            mask: io::map_to_mask(&mask_map),
            seed: m.seeds[index],
            patches: m.patches[index].clone(),
        })
    }

    /// All samples of `split`, in index order.
    pub fn load_split(&self, split: Split) -> Result<Vec<(usize, Sample)>> {
        let range = self.manifest.splits.range(split);
        if range.is_empty() {
            return Err(Error::Dataset {
                path: self.manifest_path(),
                reason: format!("{} split is empty", split.name()),
            });
        }
        range
            .into_par_iter()
            .map(|i| self.load(i).map(|s| (i, s)))
            .collect()
    }

    /// Paths of every file belonging to `split`, manifest first.
    pub fn split_files(&self, split: Split) -> Vec<PathBuf> {
        let mut out = vec![self.manifest_path()];
        for i in self.manifest.splits.range(split) {
            let f = &self.manifest.files[i];
            out.extend([&f.image, &f.depth, &f.mask].map(|p| self.dir.join(p)));
        }
        out
    }
}

/// Pixels outside every noisy patch and inside the label mask.
pub fn clean_mask(sample: &Sample) -> Vec<bool> {
    sample.patch_mask().iter().zip(&sample.mask).map(|(&p, &m)| m && !p).collect()
}
