//! Scene file I/O.
//!
//! Scenes are JSON: `{"voxels": [{"id", "xyz", "type"}], "views":
//! [{"index", "pose": [16 row-major], "intrinsics": {fx, fy, cx, cy},
//! "size": [W, H], "image_path"?}]}`. Poses are camera-to-world.
//! Images are binary PGM (P5, maxval 255), resolved relative to the
//! scene file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::mvcs::{CameraView, GrayImage, Intrinsics, SceneModel, Voxel};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ViewRecord {
    index: usize,
    pose: Vec<f64>,
    intrinsics: Intrinsics,
    size: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    voxels: Vec<Voxel>,
    views: Vec<ViewRecord>,
}

/// Writes a binary PGM (P5). Values are clamped to 0..=255 and rounded.
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.data.iter().map(|&v| v.clamp(0.0, 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a binary PGM (P5) with maxval <= 255.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ctx = || path.display().to_string();
    let mut pos = 0usize;
    let mut fields = Vec::new();
    // Header: magic, width, height, maxval, separated by whitespace, with
    // '#' comments allowed.
    while fields.len() < 4 {
        while pos < raw.len() && (raw[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !(raw[pos] as char).is_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(ctx(), "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&raw[start..pos]).to_string());
    }
    if fields[0] != "P5" {
        return Err(Error::parse(
            ctx(),
            format!("expected P5 magic, got {}", fields[0]),
        ));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse(ctx(), "bad width"))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| Error::parse(ctx(), "bad height"))?;
    let maxval: usize = fields[3]
        .parse()
        .map_err(|_| Error::parse(ctx(), "bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(ctx(), format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height;
    if raw.len() < pos + need {
        return Err(Error::parse(
            ctx(),
            format!("expected {need} pixel bytes, found {}", raw.len() - pos),
        ));
    }
    let data = raw[pos..pos + need].iter().map(|&b| f64::from(b)).collect();
    Ok(GrayImage {
        width,
        height,
        data,
    })
}

/// Loads a scene file, pulling in any referenced PGM images.
pub fn load_scene(path: &Path) -> Result<SceneModel> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let record: SceneRecord = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::with_capacity(record.views.len());
    let mut prev_index: Option<usize> = None;
    for v in record.views {
        if v.pose.len() != 16 {
            return Err(Error::parse(
                path.display().to_string(),
                format!(
                    "view {}: pose must have 16 values, got {}",
                    v.index,
                    v.pose.len()
                ),
            ));
        }
        if let Some(prev) = prev_index {
            if v.index <= prev {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!(
                        "view indices must be strictly increasing at index {}",
                        v.index
                    ),
                ));
            }
        }
        prev_index = Some(v.index);
        let mut pose = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                pose[r][c] = v.pose[r * 4 + c];
            }
        }
        let image = match &v.image_path {
            Some(rel) => Some(read_pgm(&base.join(rel))?),
            None => None,
        };
        views.push(CameraView {
            index: v.index,
            pose,
            intrinsics: v.intrinsics,
            image_size: (v.size[0], v.size[1]),
            image,
        });
    }
    Ok(SceneModel {
        voxels: record.voxels,
        views,
    })
}

/// Saves a scene as `<path>` plus an `images/` directory of PGMs next to
/// it (only for views that carry images).
pub fn save_scene(scene: &SceneModel, path: &Path) -> Result<PathBuf> {
    let base = path.parent().unwrap_or(Path::new("."));
    let image_dir = base.join("images");
    let mut views = Vec::with_capacity(scene.views.len());
    for v in &scene.views {
        let image_path = match &v.image {
            Some(img) => {
                std::fs::create_dir_all(&image_dir)
                    .map_err(|e| Error::io(image_dir.display().to_string(), e))?;
                let rel = format!("images/view_{:04}.pgm", v.index);
                write_pgm(&base.join(&rel), img)?;
                Some(rel)
            }
            None => None,
        };
        let mut pose = Vec::with_capacity(16);
        for r in 0..4 {
            for c in 0..4 {
                pose.push(v.pose[r][c]);
            }
        }
        views.push(ViewRecord {
            index: v.index,
            pose,
            intrinsics: v.intrinsics,
            size: [v.image_size.0, v.image_size.1],
            image_path,
        });
    }
    let record = SceneRecord {
        voxels: scene.voxels.clone(),
        views,
    };
    let mut json =
        serde_json::to_string_pretty(&record).map_err(|e| Error::parse("scene", e.to_string()))?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path.to_path_buf())
}
