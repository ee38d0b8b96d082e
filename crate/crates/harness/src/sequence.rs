//! OTB-layout sequences: `img/` with numbered frames plus `groundtruth_rect.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use mfst_core::{BBox, Tensor3};

use crate::error::{HarnessError, Result};

pub const GROUND_TRUTH_FILE: &str = "groundtruth_rect.txt";
pub const FRAME_DIR: &str = "img";

const FRAME_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub name: String,
    pub frame_paths: Vec<PathBuf>,
    pub ground_truth: Vec<BBox>,
}

impl SequenceRecord {
    pub fn length(&self) -> usize {
        self.frame_paths.len()
    }
}

pub fn load_sequence(dir: impl AsRef<Path>) -> Result<SequenceRecord> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());

    let gt_path = dir.join(GROUND_TRUTH_FILE);
    if !gt_path.is_file() {
        return Err(HarnessError::Ingest {
            path: dir.to_path_buf(),
            reason: format!("missing {GROUND_TRUTH_FILE}"),
        });
    }
    let text = fs::read_to_string(&gt_path).map_err(|e| HarnessError::io(&gt_path, e))?;
    let ground_truth = parse_ground_truth(&text, &gt_path)?;

    let frame_dir = dir.join(FRAME_DIR);
    if !frame_dir.is_dir() {
        return Err(HarnessError::Ingest {
            path: dir.to_path_buf(),
            reason: format!("missing {FRAME_DIR}/ directory"),
        });
    }
    let frame_paths = numbered_frames(&frame_dir)?;
    if frame_paths.is_empty() {
        return Err(HarnessError::Ingest {
            path: frame_dir,
            reason: "no frames".into(),
        });
    }
    if frame_paths.len() != ground_truth.len() {
        return Err(HarnessError::Validation(format!(
            "{name}: {} frames but {} ground-truth boxes",
            frame_paths.len(),
            ground_truth.len()
        )));
    }
    Ok(SequenceRecord {
        name,
        frame_paths,
        ground_truth,
    })
}

/// Frames sorted by the number in their file stem.
fn numbered_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if !FRAME_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let Ok(index) = stem.parse::<u64>() else {
            return Err(HarnessError::Ingest {
                path,
                reason: "frame file name is not a number".into(),
            });
        };
        frames.push((index, path));
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// One `x y w h` box per non-empty line; commas, tabs and spaces all separate.
pub fn parse_ground_truth(text: &str, path: &Path) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |reason: String| HarnessError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 numbers, found {}",
                fields.len()
            )));
        }
        let mut v = [0f64; 4];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(format!("'{field}' is not a number")))?;
        }
        let bbox =
            BBox::from_top_left(v[0], v[1], v[2], v[3]).map_err(|e| parse_err(e.to_string()))?;
        boxes.push(bbox);
    }
    Ok(boxes)
}

/// Every subdirectory of `dir`, loaded in name order. Ingestion errors are
/// returned alongside the sequence name instead of aborting.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(String, Result<SequenceRecord>)>> {
    let dir = dir.as_ref();
    let mut subdirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.is_dir() {
            subdirs.push(path);
        }
    }
    subdirs.sort();
    Ok(subdirs
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            (name, load_sequence(&p))
        })
        .collect())
}

/// Decodes an image file into an RGB tensor with values in `[0, 1]`.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| HarnessError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor3::from_fn(w, h, 3, |x, y, c| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<BBox>> {
        parse_ground_truth(text, Path::new("gt.txt"))
    }

    #[test]
    fn delimiters_are_interchangeable() {
        let comma = parse("10,20,30,40").unwrap();
        let tab = parse("10\t20\t30\t40").unwrap();
        let space = parse("10 20  30 40\n").unwrap();
        assert_eq!(comma, tab);
        assert_eq!(comma, space);
        let b = comma[0];
        assert_eq!(
            (b.center_x, b.center_y, b.width, b.height),
            (25.0, 40.0, 30.0, 40.0)
        );
    }

    #[test]
    fn short_line_names_its_number() {
        let err = parse("1,2,3,4\n10,20,30\n").unwrap_err();
        match err {
            HarnessError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("1,2,x,4").is_err());
        assert!(parse("1,2,0,4").is_err());
    }
}
