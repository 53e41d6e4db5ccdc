//! Labeled patch datasets: extraction from annotated images, stratified
//! splitting, client partitioning and the patch CSV format.

mod csv_io;
pub mod pnm;
pub mod synthetic;

use std::collections::VecDeque;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{read_patch_csv, read_patch_file, write_patch_csv, write_patch_file};

pub const PATCH_WIDTH: usize = 7;
pub const PATCH_HEIGHT: usize = 6;
pub const CHANNELS: usize = 3;
/// Features per patch: 7 wide × 6 high × RGB.
pub const PATCH_FEATURES: usize = PATCH_WIDTH * PATCH_HEIGHT * CHANNELS;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("image is {image_w}x{image_h} but mask is {mask_w}x{mask_h}")]
    DimensionMismatch {
        image_w: usize,
        image_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
    #[error("image {width}x{height} is smaller than a {PATCH_WIDTH}x{PATCH_HEIGHT} patch")]
    ImageTooSmall { width: usize, height: usize },
    #[error("pixel buffer has {got} entries, expected {expected}")]
    PixelCount { expected: usize, got: usize },
    #[error("found {found} lesion components, need {needed}")]
    InsufficientLesions { found: usize, needed: usize },
    #[error("found {found} lesion-free windows, need {needed}")]
    InsufficientHealthyArea { found: usize, needed: usize },
    #[error("split leaves the {0} side empty")]
    DegenerateSplit(&'static str),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("cannot split {healthy} healthy / {affected} affected patches into {k} balanced shares")]
    TooFewPatches {
        healthy: usize,
        affected: usize,
        k: usize,
    },
    #[error("patch has {0} features, expected {PATCH_FEATURES}")]
    FeatureCount(usize),
    #[error("feature {index} = {value} is outside [0, 1]")]
    FeatureRange { index: usize, value: f64 },
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("missing or invalid header")]
    MissingHeader,
    #[error("invalid image file: {0}")]
    InvalidImage(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary class of a patch. Files use 0/1, the classifier uses -1/+1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Affected,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Healthy, Label::Affected];

    pub fn sign(self) -> f64 {
        match self {
            Label::Healthy => -1.0,
            Label::Affected => 1.0,
        }
    }

    /// `+1` for non-negative values, ties going to `Affected`.
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Affected
        } else {
            Label::Healthy
        }
    }

    pub fn from_sign(sign: i8) -> Option<Label> {
        match sign {
            -1 => Some(Label::Healthy),
            1 => Some(Label::Affected),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Label::Healthy => 0,
            Label::Affected => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Healthy),
            1 => Some(Label::Affected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self, DataError> {
        if pixels.len() != width * height {
            return Err(DataError::PixelCount {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LesionMask {
    pub width: usize,
    pub height: usize,
    pub flags: Vec<bool>,
}

impl LesionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        LesionMask {
            width,
            height,
            flags: vec![false; width * height],
        }
    }

    pub fn new(width: usize, height: usize, flags: Vec<bool>) -> Result<Self, DataError> {
        if flags.len() != width * height {
            return Err(DataError::PixelCount {
                expected: width * height,
                got: flags.len(),
            });
        }
        Ok(LesionMask {
            width,
            height,
            flags,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, lesion: bool) {
        self.flags[y * self.width + x] = lesion;
    }

    /// Whether the patch window with top-left `(x, y)` touches any lesion pixel.
    pub fn window_overlaps(&self, x: usize, y: usize) -> bool {
        (y..y + PATCH_HEIGHT).any(|yy| (x..x + PATCH_WIDTH).any(|xx| self.get(xx, yy)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub image_id: String,
    pub x: usize,
    pub y: usize,
}

/// One 7×6 RGB window. Features are rows top-to-bottom, columns
/// left-to-right, channels fastest, each scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    features: Vec<f64>,
    pub label: Label,
    pub provenance: Option<Provenance>,
}

impl Patch {
    pub fn new(features: Vec<f64>, label: Label) -> Result<Self, DataError> {
        if features.len() != PATCH_FEATURES {
            return Err(DataError::FeatureCount(features.len()));
        }
        if let Some((index, &value)) = features
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(DataError::FeatureRange { index, value });
        }
        Ok(Patch {
            features,
            label,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// Cuts the window with top-left `(x, y)` out of `image`.
    pub fn from_window(image: &RasterImage, x: usize, y: usize, label: Label) -> Self {
        let mut features = Vec::with_capacity(PATCH_FEATURES);
        for yy in y..y + PATCH_HEIGHT {
            for xx in x..x + PATCH_WIDTH {
                features.extend(image.pixel(xx, yy).iter().map(|&v| v as f64 / 255.0));
            }
        }
        Patch {
            features,
            label,
            provenance: None,
        }
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchDataset {
    pub id: String,
    pub patches: Vec<Patch>,
}

impl PatchDataset {
    pub fn new(id: impl Into<String>, patches: Vec<Patch>) -> Self {
        PatchDataset {
            id: id.into(),
            patches,
        }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.patches.iter().filter(|p| p.label == label).count()
    }

    /// `(healthy, affected)`.
    pub fn class_counts(&self) -> (usize, usize) {
        (self.count(Label::Healthy), self.count(Label::Affected))
    }

    pub fn is_balanced(&self) -> bool {
        let (h, a) = self.class_counts();
        h == a
    }

    /// Concatenates several datasets in order.
    pub fn concat(id: impl Into<String>, parts: &[PatchDataset]) -> Self {
        PatchDataset {
            id: id.into(),
            patches: parts.iter().flat_map(|d| d.patches.iter().cloned()).collect(),
        }
    }

    fn by_class(&self, label: Label) -> Vec<Patch> {
        self.patches
            .iter()
            .filter(|p| p.label == label)
            .cloned()
            .collect()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected lesion components (8-connectivity) in raster-scan order of
/// their first pixel, each as a list of `(x, y)`.
fn lesion_components(mask: &LesionMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut components = Vec::new();
    for start in 0..w * h {
        if !mask.flags[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % w, idx / w);
            pixels.push((x, y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask.flags[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        components.push(pixels);
    }
    components
}

/// Top-left corner of the window whose centre pixel sits on the floored
/// centroid of `pixels`, clamped into the image.
fn centred_window(pixels: &[(usize, usize)], width: usize, height: usize) -> (usize, usize) {
    let n = pixels.len() as f64;
    let cx = (pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n).floor() as usize;
    let cy = (pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n).floor() as usize;
    let x = cx.saturating_sub(PATCH_WIDTH / 2).min(width - PATCH_WIDTH);
    let y = cy.saturating_sub(PATCH_HEIGHT / 2).min(height - PATCH_HEIGHT);
    (x, y)
}

/// Extracts `per_class` affected patches centred on lesion components and
/// `per_class` healthy patches drawn from lesion-free windows.
pub fn extract_patches(
    image_id: &str,
    image: &RasterImage,
    mask: &LesionMask,
    per_class: usize,
    rng_seed: u64,
) -> Result<PatchDataset, DataError> {
    if image.width != mask.width || image.height != mask.height {
        return Err(DataError::DimensionMismatch {
            image_w: image.width,
            image_h: image.height,
            mask_w: mask.width,
            mask_h: mask.height,
        });
    }
    if image.width < PATCH_WIDTH || image.height < PATCH_HEIGHT {
        return Err(DataError::ImageTooSmall {
            width: image.width,
            height: image.height,
        });
    }
    let mut rng = rng(rng_seed);
    let provenance = |x, y| Provenance {
        image_id: image_id.to_string(),
        x,
        y,
    };

    let components = lesion_components(mask);
    if components.len() < per_class {
        return Err(DataError::InsufficientLesions {
            found: components.len(),
            needed: per_class,
        });
    }
    let mut chosen = index::sample(&mut rng, components.len(), per_class).into_vec();
    chosen.sort_unstable();
    let mut patches = Vec::with_capacity(2 * per_class);
    for c in chosen {
        let (x, y) = centred_window(&components[c], image.width, image.height);
        patches.push(Patch::from_window(image, x, y, Label::Affected).with_provenance(provenance(x, y)));
    }

    let candidates: Vec<(usize, usize)> = (0..=image.height - PATCH_HEIGHT)
        .flat_map(|y| (0..=image.width - PATCH_WIDTH).map(move |x| (x, y)))
        .filter(|&(x, y)| !mask.window_overlaps(x, y))
        .collect();
    if candidates.len() < per_class {
        return Err(DataError::InsufficientHealthyArea {
            found: candidates.len(),
            needed: per_class,
        });
    }
    for i in index::sample(&mut rng, candidates.len(), per_class) {
        let (x, y) = candidates[i];
        patches.push(Patch::from_window(image, x, y, Label::Healthy).with_provenance(provenance(x, y)));
    }
    Ok(PatchDataset::new(image_id, patches))
}

/// Per-class train counts. The overall train size is `floor(N·fraction)`;
/// each class gets the floor of its share and the remainder goes to the
/// classes with the largest fractional parts (healthy first on ties).
fn train_allocation(counts: [usize; 2], fraction: f64) -> [usize; 2] {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction).floor() as usize;
    let exact = counts.map(|c| c as f64 * fraction);
    let mut alloc = exact.map(|e| e.floor() as usize);
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(alloc.iter().sum());
    for &c in &order {
        if remaining == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            remaining -= 1;
        }
    }
    alloc
}

/// Stratified train/test split.
pub fn split(
    dataset: &PatchDataset,
    train_fraction: f64,
    rng_seed: u64,
) -> Result<(PatchDataset, PatchDataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let mut rng = rng(rng_seed);
    let (h, a) = dataset.class_counts();
    let alloc = train_allocation([h, a], train_fraction);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, n_train) in Label::ALL.into_iter().zip(alloc) {
        let mut class = dataset.by_class(label);
        class.shuffle(&mut rng);
        let rest = class.split_off(n_train);
        train.extend(class);
        test.extend(rest);
    }
    if train.is_empty() {
        return Err(DataError::DegenerateSplit("train"));
    }
    if test.is_empty() {
        return Err(DataError::DegenerateSplit("test"));
    }
    Ok((
        PatchDataset::new(format!("{}-train", dataset.id), train),
        PatchDataset::new(format!("{}-test", dataset.id), test),
    ))
}

/// Deals a dataset into `k` disjoint stratified shares whose per-class
/// sizes differ by at most one.
pub fn partition_clients(
    dataset: &PatchDataset,
    k: usize,
    rng_seed: u64,
) -> Result<Vec<PatchDataset>, DataError> {
    let (healthy, affected) = dataset.class_counts();
    if k == 0 || healthy < k || affected < k {
        return Err(DataError::TooFewPatches {
            healthy,
            affected,
            k,
        });
    }
    let mut rng = rng(rng_seed);
    let mut shares: Vec<Vec<Patch>> = vec![Vec::new(); k];
    // The second class continues dealing where the first stopped so total
    // share sizes also stay within one of each other.
    let mut next = 0;
    for label in Label::ALL {
        let mut class = dataset.by_class(label);
        class.shuffle(&mut rng);
        for patch in class {
            shares[next].push(patch);
            next = (next + 1) % k;
        }
    }
    Ok(shares
        .into_iter()
        .enumerate()
        .map(|(i, patches)| PatchDataset::new(format!("{}-c{}", dataset.id, i + 1), patches))
        .collect())
}
