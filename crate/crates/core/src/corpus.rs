//! Corpus-level utilities: byte accounting and the offline edge-map preprocessing pass.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use walkdir::WalkDir;

use crate::canny::{canny_pipeline, CannyParams};
use crate::error::{Error, Result};
use crate::image::{decode_png_any, encode_png};

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn png_files(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
        ));
    }
    let mut files = Vec::new();
    for item in WalkDir::new(root).sort_by_file_name() {
        let item = item.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if item.file_type().is_file() && is_png(item.path()) {
            files.push(item.into_path());
        }
    }
    Ok(files)
}

/// Sum of the sizes of every PNG file below `root`.
pub fn measure_corpus_bytes(root: impl AsRef<Path>) -> Result<u64> {
    let mut total = 0;
    for path in png_files(root.as_ref())? {
        total += std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreprocessSummary {
    pub files: usize,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

impl PreprocessSummary {
    pub fn ratio(&self) -> f64 {
        if self.input_bytes == 0 {
            0.0
        } else {
            self.output_bytes as f64 / self.input_bytes as f64
        }
    }
}

/// Run edge detection over every PNG below `input` and write single-channel edge
/// maps to the same relative paths below `output`.
pub fn preprocess_corpus(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    params: &CannyParams,
) -> Result<PreprocessSummary> {
    params.validate()?;
    let input = input.as_ref();
    let output = output.as_ref();
    let files = png_files(input)?;
    let sizes = files
        .par_iter()
        .map(|src| -> Result<(u64, u64)> {
            let rel = src.strip_prefix(input).expect("walk stays below its root");
            let dst = output.join(rel);
            let bytes = std::fs::read(src).map_err(|e| Error::io(src, e))?;
            let load_err = |e: Error| Error::Load {
                path: src.clone(),
                message: e.to_string(),
            };
            let rgb = decode_png_any(&bytes).map_err(load_err)?.into_rgb();
            let edges = canny_pipeline(&rgb, params).map_err(load_err)?;
            let encoded = encode_png(&edges);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&dst, &encoded).map_err(|e| Error::io(&dst, e))?;
            Ok((bytes.len() as u64, encoded.len() as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreprocessSummary {
        files: files.len(),
        input_bytes: sizes.iter().map(|s| s.0).sum(),
        output_bytes: sizes.iter().map(|s| s.1).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{GrayImage, RgbImage};

    #[test]
    fn byte_totals() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(measure_corpus_bytes(dir.path()).unwrap(), 0);
        std::fs::create_dir(dir.path().join("a")).unwrap();
        std::fs::write(dir.path().join("a/x.png"), vec![0u8; 100]).unwrap();
        std::fs::write(dir.path().join("y.PNG"), vec![0u8; 200]).unwrap();
        std::fs::write(dir.path().join("notes.txt"), vec![0u8; 50]).unwrap();
        assert_eq!(measure_corpus_bytes(dir.path()).unwrap(), 300);
        assert!(matches!(
            measure_corpus_bytes(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn preprocess_mirrors_tree_and_is_idempotent() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let mut img = RgbImage::filled(20, 16, [200, 180, 190]).unwrap();
        for y in 4..12 {
            for x in 5..15 {
                img.put(x, y, [40, 10, 60]);
            }
        }
        for (dir, name) in [("Parasitized", "a.png"), ("Uninfected", "b.png")] {
            std::fs::create_dir_all(src.path().join(dir)).unwrap();
            std::fs::write(src.path().join(dir).join(name), encode_png(&img)).unwrap();
        }
        let params = CannyParams::default();
        let first = preprocess_corpus(src.path(), out.path(), &params).unwrap();
        assert_eq!(first.files, 2);
        let written = std::fs::read(out.path().join("Parasitized/a.png")).unwrap();
        let gray: GrayImage = decode_png_any(&written).unwrap().into_gray();
        assert_eq!((gray.width(), gray.height()), (20, 16));
        assert!(gray.pixels().iter().all(|&v| v == 0 || v == 255));
        assert!(gray.pixels().contains(&255));
        let second = preprocess_corpus(src.path(), out.path(), &params).unwrap();
        assert_eq!(first, second);
        assert_eq!(std::fs::read(out.path().join("Parasitized/a.png")).unwrap(), written);
        assert_eq!(measure_corpus_bytes(out.path()).unwrap(), first.output_bytes);
    }
}
