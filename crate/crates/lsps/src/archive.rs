//! Dataset archive directories: `manifest.json` plus one raw array per field.

use std::path::Path;

use lsps_core::depth::DepthImage;
use lsps_core::posekit::PoseVec;
use lsps_core::synthgen::{ArchiveManifest, DatasetArchive, LabeledSplit};
use serde::{Deserialize, Serialize};

use crate::binio::{f32_bytes, prepare_dir, read_f32, read_file, write_file};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub name: String,
    /// `"f32le"` or `"u8"`.
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskManifest {
    pub archive: ArchiveManifest,
    pub files: Vec<FileEntry>,
}

fn image_bytes(images: &[DepthImage]) -> Vec<u8> {
    f32_bytes(images.iter().flat_map(|i| i.pixels().iter().copied()))
}

fn pose_bytes(poses: &[PoseVec]) -> Vec<u8> {
    f32_bytes(poses.iter().flat_map(|p| p.values.iter().map(|&v| v as f32)))
}

/// Writes `archive` into `dir`. Every pose must share the manifest's cube.
pub fn save_archive(archive: &DatasetArchive, dir: &Path, force: bool) -> Result<()> {
    let m = &archive.manifest;
    let cube = m.cube;
    let (real_images, hidden, mask) = archive.storage_parts();
    let all_poses = archive.synthetic.poses.iter().chain(hidden).chain(&archive.test.poses);
    if all_poses.clone().any(|p| p.cube() != cube) {
        return Err(Error::format(dir, "poses must share the manifest crop cube"));
    }
    prepare_dir(dir, force)?;
    let res = m.params.resolution;
    let d = m.skeleton.joint_count * 3;
    let f32e = |name: &str, shape: Vec<usize>| FileEntry { name: name.into(), dtype: "f32le".into(), shape };
    let files = vec![
        (f32e("synthetic_images.f32", vec![m.params.n_synthetic, res, res]), image_bytes(&archive.synthetic.images)),
        (f32e("synthetic_poses.f32", vec![m.params.n_synthetic, d]), pose_bytes(&archive.synthetic.poses)),
        (f32e("real_images.f32", vec![m.params.n_real, res, res]), image_bytes(real_images)),
        (f32e("real_labels_hidden.f32", vec![m.params.n_real, d]), pose_bytes(hidden)),
        (FileEntry { name: "label_mask.u8".into(), dtype: "u8".into(), shape: vec![m.params.n_real] }, mask.iter().map(|&b| b as u8).collect()),
        (f32e("test_images.f32", vec![m.params.n_test, res, res]), image_bytes(&archive.test.images)),
        (f32e("test_poses.f32", vec![m.params.n_test, d]), pose_bytes(&archive.test.poses)),
    ];
    for (entry, bytes) in &files {
        write_file(&dir.join(&entry.name), bytes)?;
    }
    let manifest = DiskManifest { archive: m.clone(), files: files.into_iter().map(|(e, _)| e).collect() };
    write_file(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())
}

pub fn load_manifest(dir: &Path) -> Result<DiskManifest> {
    let path = dir.join(MANIFEST);
    let bytes = read_file(&path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path, source })
}

pub fn load_archive(dir: &Path) -> Result<DatasetArchive> {
    let disk = load_manifest(dir)?;
    let m = disk.archive;
    let res = m.params.resolution;
    let d = m.skeleton.joint_count * 3;
    let cube = m.cube;
    let entry = |name: &str, dtype: &str, shape: Vec<usize>| -> Result<std::path::PathBuf> {
        let e = disk
            .files
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::format(dir.join(MANIFEST), format!("missing file entry {name}")))?;
        if e.dtype != dtype || e.shape != shape {
            return Err(Error::format(dir.join(name), format!("declared {} {:?}, expected {dtype} {shape:?}", e.dtype, e.shape)));
        }
        Ok(dir.join(name))
    };
    let images = |name: &str, n: usize| -> Result<Vec<DepthImage>> {
        let path = entry(name, "f32le", vec![n, res, res])?;
        let px = read_f32(&path, n * res * res)?;
        Ok(px.chunks_exact(res * res.max(1)).take(n).map(|c| DepthImage::from_pixels(res, c.to_vec())).collect())
    };
    let poses = |name: &str, n: usize| -> Result<Vec<PoseVec>> {
        let path = entry(name, "f32le", vec![n, d])?;
        let v = read_f32(&path, n * d)?;
        Ok(v.chunks_exact(d.max(1))
            .take(n)
            .map(|c| PoseVec { values: c.iter().map(|&x| x as f64).collect(), cube_center: cube.center, cube_size: cube.size_mm })
            .collect())
    };
    let p = m.params.clone();
    let synthetic = LabeledSplit { images: images("synthetic_images.f32", p.n_synthetic)?, poses: poses("synthetic_poses.f32", p.n_synthetic)? };
    let real = images("real_images.f32", p.n_real)?;
    let hidden = poses("real_labels_hidden.f32", p.n_real)?;
    let mask_path = entry("label_mask.u8", "u8", vec![p.n_real])?;
    let mask_bytes = read_file(&mask_path)?;
    if mask_bytes.len() != p.n_real || mask_bytes.iter().any(|&b| b > 1) {
        return Err(Error::format(mask_path, "label mask must hold one 0/1 byte per real frame"));
    }
    let mask = mask_bytes.iter().map(|&b| b == 1).collect();
    let test = LabeledSplit { images: images("test_images.f32", p.n_test)?, poses: poses("test_poses.f32", p.n_test)? };
    Ok(DatasetArchive::from_parts(m, synthetic, real, hidden, mask, test)?)
}
