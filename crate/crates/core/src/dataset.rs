//! Labeled PNG catalogs, stratified splitting and mini-batch assembly.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canny::{canny_gray, CannyParams};
use crate::error::{Error, Result};
use crate::image::{decode_png_any, resize_bilinear, DecodedImage, GrayImage};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Side length of every network input.
pub const INPUT_SIZE: usize = 64;

pub const INFECTED_DIR: &str = "Parasitized";
pub const UNINFECTED_DIR: &str = "Uninfected";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Infected,
    Uninfected,
}

impl Label {
    pub fn target(self) -> f32 {
        match self {
            Label::Infected => 1.0,
            Label::Uninfected => 0.0,
        }
    }

    /// Thresholds a probability; ties at 0.5 count as infected.
    pub fn from_probability(p: f64) -> Label {
        if p >= 0.5 {
            Label::Infected
        } else {
            Label::Uninfected
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Infected => "infected",
            Label::Uninfected => "uninfected",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Raw,
    Canny,
}

impl Mode {
    pub fn channels(self) -> usize {
        match self {
            Mode::Raw => 3,
            Mode::Canny => 1,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Raw => "raw",
            Mode::Canny => "canny",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    entries: Vec<Entry>,
    mode: Mode,
}

impl DatasetIndex {
    pub fn new(entries: Vec<Entry>, mode: Mode) -> Self {
        DatasetIndex { entries, mode }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// Sum of the on-disk sizes of every indexed file.
    pub fn total_bytes(&self) -> Result<u64> {
        self.entries.iter().try_fold(0u64, |acc, e| {
            let meta = std::fs::metadata(&e.path).map_err(|err| Error::io(&e.path, err))?;
            Ok(acc + meta.len())
        })
    }

    fn by_label(&self, label: Label) -> Vec<Entry> {
        self.entries.iter().filter(|e| e.label == label).cloned().collect()
    }

    /// Deterministic stratified subset with `per_class` entries from each class.
    pub fn stratified_subset(&self, per_class: usize, seed: u64) -> Result<DatasetIndex> {
        let rng = Rng::new(seed);
        let mut entries = Vec::new();
        for (stream, label) in [(0, Label::Infected), (1, Label::Uninfected)] {
            let mut class = self.by_label(label);
            if class.len() < per_class {
                return Err(Error::param(format!(
                    "subset wants {per_class} {label} images, only {} available",
                    class.len()
                )));
            }
            rng.fork(stream).shuffle(&mut class);
            class.truncate(per_class);
            entries.extend(class);
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(DatasetIndex::new(entries, self.mode))
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn scan_class(root: &Path, dir: &str, label: Label) -> Result<Vec<Entry>> {
    let class_dir = root.join(dir);
    let mut paths = Vec::new();
    for item in std::fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))? {
        let path = item.map_err(|e| Error::io(&class_dir, e))?.path();
        if path.is_file() && is_png(&path) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::EmptyClass(dir.to_string()));
    }
    paths.sort();
    Ok(paths.into_iter().map(|path| Entry { path, label }).collect())
}

/// Catalog `<root>/Parasitized/*.png` and `<root>/Uninfected/*.png` in lexicographic order.
pub fn scan_dataset(root: impl AsRef<Path>, mode: Mode) -> Result<DatasetIndex> {
    let root = root.as_ref();
    for dir in [INFECTED_DIR, UNINFECTED_DIR] {
        if !root.join(dir).is_dir() {
            return Err(Error::Layout(format!(
                "{} is missing the `{dir}/` subdirectory",
                root.display()
            )));
        }
    }
    let mut entries = scan_class(root, INFECTED_DIR, Label::Infected)?;
    entries.extend(scan_class(root, UNINFECTED_DIR, Label::Uninfected)?);
    Ok(DatasetIndex::new(entries, mode))
}

/// Per-class shuffled split; each class contributes `round(n * test_fraction)` test entries.
pub fn stratified_split(
    index: &DatasetIndex,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetIndex, DatasetIndex)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let rng = Rng::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (stream, label) in [(0, Label::Infected), (1, Label::Uninfected)] {
        let mut class = index.by_label(label);
        rng.fork(stream).shuffle(&mut class);
        let n_test = (class.len() as f64 * test_fraction).round() as usize;
        test.extend(class.drain(..n_test));
        train.extend(class);
    }
    Ok((
        DatasetIndex::new(train, index.mode),
        DatasetIndex::new(test, index.mode),
    ))
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[batch, channels, 64, 64]`, values in `[0, 1]`.
    pub inputs: Tensor<f32>,
    /// `[batch]`, infected = 1, uninfected = 0.
    pub targets: Tensor<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Produce the network input planes for an already decoded image.
///
/// Raw mode uses the RGB channels. Canny mode takes single-channel files as
/// persisted edge maps and runs edge detection on anything else.
pub fn prepare_image(img: DecodedImage, mode: Mode, canny: &CannyParams) -> Result<Vec<f32>> {
    let scale = 1.0 / 255.0;
    match mode {
        Mode::Raw => {
            let rgb = resize_bilinear(&img.into_rgb(), INPUT_SIZE, INPUT_SIZE)?;
            let plane = INPUT_SIZE * INPUT_SIZE;
            let mut out = vec![0.0f32; 3 * plane];
            for (i, px) in rgb.pixels().chunks_exact(3).enumerate() {
                for c in 0..3 {
                    out[c * plane + i] = px[c] as f32 * scale;
                }
            }
            Ok(out)
        }
        Mode::Canny => {
            let edges: GrayImage = match img {
                DecodedImage::Gray(g) => g,
                DecodedImage::Rgb(rgb) => {
                    canny_gray(&crate::image::to_grayscale(&rgb), canny)?
                }
            };
            let small = resize_bilinear(&edges, INPUT_SIZE, INPUT_SIZE)?;
            Ok(small.pixels().iter().map(|&v| v as f32 * scale).collect())
        }
    }
}

pub fn load_image(path: &Path, mode: Mode) -> Result<Vec<f32>> {
    let load_err = |message: String| Error::Load {
        path: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| load_err(e.to_string()))?;
    let img = decode_png_any(&bytes).map_err(|e| load_err(e.to_string()))?;
    prepare_image(img, mode, &CannyParams::default()).map_err(|e| load_err(e.to_string()))
}

/// Load a contiguous run of entries as one batch.
pub fn load_batch(entries: &[&Entry], mode: Mode) -> Result<Batch> {
    let planes: Vec<Vec<f32>> = entries
        .par_iter()
        .map(|e| load_image(&e.path, mode))
        .collect::<Result<_>>()?;
    let n = entries.len();
    let inputs = Tensor::new(
        &[n, mode.channels(), INPUT_SIZE, INPUT_SIZE],
        planes.concat(),
    )?;
    let targets = Tensor::new(&[n], entries.iter().map(|e| e.label.target()).collect())?;
    Ok(Batch { inputs, targets })
}

/// Shuffled order of index positions for one epoch.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    Rng::new(seed).fork(epoch as u64).shuffle(&mut order);
    order
}

/// Group an epoch order into batch-sized chunks. The final short chunk is kept;
/// a trailing single entry is merged into the chunk before it, because
/// training-mode batch normalization needs at least two samples.
pub fn batch_plan(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut plan: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if plan.len() >= 2 && plan.last().is_some_and(|c| c.len() == 1) {
        let last = plan.pop().unwrap();
        plan.last_mut().unwrap().extend(last);
    }
    plan
}

/// Lazy batch stream for one epoch; images are decoded when a batch is requested.
pub struct Batches<'a> {
    index: &'a DatasetIndex,
    plan: std::vec::IntoIter<Vec<usize>>,
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let chunk = self.plan.next()?;
        let entries: Vec<&Entry> = chunk.iter().map(|&i| &self.index.entries[i]).collect();
        Some(load_batch(&entries, self.index.mode))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.plan.size_hint()
    }
}

pub fn make_batches(
    index: &DatasetIndex,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    let order = epoch_order(index.len(), seed, epoch);
    Ok(Batches {
        index,
        plan: batch_plan(&order, batch_size).into_iter(),
    })
}

/// Batches in index order, without shuffling, for evaluation.
pub fn sequential_batches(index: &DatasetIndex, batch_size: usize) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    let order: Vec<usize> = (0..index.len()).collect();
    let plan: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    Ok(Batches {
        index,
        plan: plan.into_iter(),
    })
}
