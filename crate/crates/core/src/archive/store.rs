use std::fs;
use std::path::{Path, PathBuf};

use bytes::Bytes;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{digest_hex, ArchiveEntry, ArchiveError, BlobStore, ImageAnnotation, PageArchive};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
const BLOB_DIR: &str = "blobs";

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    page_url: String,
    created_at: DateTime<Utc>,
    entries: Vec<ArchiveEntry>,
    images: Vec<ImageAnnotation>,
}

/// Writes `archive` under `dir` (created if needed) and returns the manifest path.
pub fn save(archive: &PageArchive, dir: impl AsRef<Path>) -> Result<PathBuf, ArchiveError> {
    archive.validate()?;
    let dir = dir.as_ref();
    let blob_dir = dir.join(BLOB_DIR);
    fs::create_dir_all(&blob_dir)?;
    for (digest, bytes) in archive.blobs.iter() {
        let path = blob_dir.join(digest);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        page_url: archive.page_url.clone(),
        created_at: archive.created_at,
        entries: archive.entries.clone(),
        images: archive.images.clone(),
    };
    let text = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| ArchiveError::CorruptManifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, &text)?;
    Ok(path)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArchiveError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads an archive written by [`save`]. Accepts either the archive
/// directory or the manifest file itself.
pub fn load(path: impl AsRef<Path>) -> Result<PageArchive, ArchiveError> {
    let path = path.as_ref();
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, path.to_path_buf())
    };
    let text = fs::read(&manifest_path).map_err(|e| {
        ArchiveError::CorruptManifest(format!("{}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_slice(&text)
        .map_err(|e| ArchiveError::CorruptManifest(e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(ArchiveError::CorruptManifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }

    let mut blobs = BlobStore::new();
    for entry in &manifest.entries {
        if blobs.contains(&entry.body_ref) {
            continue;
        }
        if entry.body_ref.len() != 64 || !entry.body_ref.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(ArchiveError::CorruptManifest(format!(
                "invalid body_ref {:?}",
                entry.body_ref
            )));
        }
        let blob_path = dir.join(BLOB_DIR).join(&entry.body_ref);
        let bytes = fs::read(&blob_path).map_err(|e| {
            ArchiveError::CorruptManifest(format!("missing blob {}: {e}", blob_path.display()))
        })?;
        let actual = digest_hex(&bytes);
        if actual != entry.body_ref {
            return Err(ArchiveError::DigestMismatch {
                expected: entry.body_ref.clone(),
                actual,
            });
        }
        blobs.insert_verified(actual, Bytes::from(bytes));
    }

    let archive = PageArchive {
        page_url: manifest.page_url,
        entries: manifest.entries,
        images: manifest.images,
        created_at: manifest.created_at,
        blobs,
    };
    archive.validate()?;
    Ok(archive)
}
