//! Replayable page archives.
//!
//! A [`PageArchive`] holds every recorded response of one page load plus an
//! image manifest. Bodies live in a content-addressed [`BlobStore`] keyed by
//! the lowercase hex SHA-256 of the bytes. On disk an archive is a directory:
//!
//! ```text
//! <dir>/manifest.json      versioned manifest (entries + image manifest)
//! <dir>/blobs/<sha256-hex> raw body bytes
//! ```

mod har;
mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use bytes::Bytes;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use har::{import_har, import_har_with_clock, ImportWarning, Imported};
pub use store::{load, save, MANIFEST_FILE, MANIFEST_VERSION};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("capture has no HTML entry for root document {0}")]
    MissingRootDocument(String),
    #[error("malformed capture: {0}")]
    MalformedCapture(String),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("digest mismatch for blob {expected}: stored bytes hash to {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("archive invariant violated: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content-addressed body storage.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlobStore {
    blobs: BTreeMap<String, Bytes>,
}

impl BlobStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `bytes` and returns its digest. Identical bodies share one blob.
    pub fn insert(&mut self, bytes: impl Into<Bytes>) -> String {
        let bytes = bytes.into();
        let digest = digest_hex(&bytes);
        self.blobs.entry(digest.clone()).or_insert(bytes);
        digest
    }

    pub fn get(&self, digest: &str) -> Option<&Bytes> {
        self.blobs.get(digest)
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.blobs.contains_key(digest)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Bytes)> {
        self.blobs.iter()
    }

    /// Drops blobs no entry references.
    fn retain_referenced(&mut self, refs: &HashSet<&str>) {
        self.blobs.retain(|k, _| refs.contains(k.as_str()));
    }

    pub(crate) fn insert_verified(&mut self, digest: String, bytes: Bytes) {
        self.blobs.insert(digest, bytes);
    }
}

/// One recorded request/response pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub url: String,
    pub method: String,
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body_ref: String,
    pub content_type: String,
    pub transfer_size: u64,
    pub duration_ms: u64,
    pub is_image: bool,
}

impl ArchiveEntry {
    pub fn is_html(&self) -> bool {
        self.content_type.to_ascii_lowercase().contains("text/html")
    }
}

/// Semantic labels an annotator may attach to an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Food,
    Landscape,
    Object,
    Hand,
    Animal,
    Celebrity,
    Person,
    Face,
    Text,
}

impl Tag {
    pub const ALL: [Tag; 9] = [
        Tag::Food,
        Tag::Landscape,
        Tag::Object,
        Tag::Hand,
        Tag::Animal,
        Tag::Celebrity,
        Tag::Person,
        Tag::Face,
        Tag::Text,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Food => "food",
            Tag::Landscape => "landscape",
            Tag::Object => "object",
            Tag::Hand => "hand",
            Tag::Animal => "animal",
            Tag::Celebrity => "celebrity",
            Tag::Person => "person",
            Tag::Face => "face",
            Tag::Text => "text",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("at most 3 tags per image, got {0}")]
    TooMany(usize),
    #[error("`person` and `face` cannot be used together")]
    PersonWithFace,
    #[error("duplicate tag `{0}`")]
    Duplicate(Tag),
}

/// At most three distinct tags, never `person` together with `face`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Tag>", into = "Vec<Tag>")]
pub struct TagSet(Vec<Tag>);

impl TagSet {
    pub const MAX: usize = 3;

    pub fn new(tags: Vec<Tag>) -> Result<Self, TagError> {
        if tags.len() > Self::MAX {
            return Err(TagError::TooMany(tags.len()));
        }
        let mut seen = HashSet::new();
        for t in &tags {
            if !seen.insert(*t) {
                return Err(TagError::Duplicate(*t));
            }
        }
        if seen.contains(&Tag::Person) && seen.contains(&Tag::Face) {
            return Err(TagError::PersonWithFace);
        }
        Ok(Self(tags))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[Tag] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = Tag> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, tag: Tag) -> bool {
        self.0.contains(&tag)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<Tag>> for TagSet {
    type Error = TagError;

    fn try_from(value: Vec<Tag>) -> Result<Self, Self::Error> {
        TagSet::new(value)
    }
}

impl From<TagSet> for Vec<Tag> {
    fn from(value: TagSet) -> Self {
        value.0
    }
}

/// Per-image annotation kept in the archive's image manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub url: String,
    #[serde(default)]
    pub alt_text: Option<String>,
    #[serde(default)]
    pub client_prompt: Option<String>,
    #[serde(default)]
    pub server_prompt: Option<String>,
    #[serde(default)]
    pub caption: Option<String>,
    pub above_fold: bool,
    #[serde(default)]
    pub tags: TagSet,
    pub width: u32,
    pub height: u32,
}

impl ImageAnnotation {
    pub fn new(url: impl Into<String>, width: u32, height: u32, above_fold: bool) -> Self {
        Self {
            url: url.into(),
            alt_text: None,
            client_prompt: None,
            server_prompt: None,
            caption: None,
            above_fold,
            tags: TagSet::empty(),
            width,
            height,
        }
    }
}

/// Number of leading manifest images flagged above the fold at import.
pub const DEFAULT_ABOVE_FOLD: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageArchive {
    pub page_url: String,
    pub entries: Vec<ArchiveEntry>,
    pub images: Vec<ImageAnnotation>,
    pub created_at: DateTime<Utc>,
    pub blobs: BlobStore,
}

impl PageArchive {
    /// Exact-match lookup on `(url, method)`.
    pub fn lookup(&self, url: &str, method: &str) -> Option<&ArchiveEntry> {
        self.entries
            .iter()
            .find(|e| e.url == url && e.method == method)
    }

    /// The root HTML document entry.
    pub fn root(&self) -> Option<&ArchiveEntry> {
        self.entries
            .iter()
            .find(|e| e.url == self.page_url && e.is_html())
    }

    pub fn body(&self, entry: &ArchiveEntry) -> Option<&Bytes> {
        self.blobs.get(&entry.body_ref)
    }

    pub fn root_html(&self) -> Option<String> {
        let root = self.root()?;
        self.body(root)
            .map(|b| String::from_utf8_lossy(b).into_owned())
    }

    pub fn image(&self, url: &str) -> Option<&ImageAnnotation> {
        self.images.iter().find(|i| i.url == url)
    }

    /// Index of entries keyed by `(url, method)`; useful for hot lookup paths.
    pub fn index(&self) -> HashMap<(&str, &str), usize> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.url.as_str(), e.method.as_str()), i))
            .collect()
    }

    pub(crate) fn prune_blobs(&mut self) {
        let refs: HashSet<&str> = self.entries.iter().map(|e| e.body_ref.as_str()).collect();
        self.blobs.retain_referenced(&refs);
    }

    /// Checks every archive, entry and image-manifest invariant.
    pub fn validate(&self) -> Result<(), ArchiveError> {
        let mut keys = HashSet::new();
        for e in &self.entries {
            if !keys.insert((e.url.as_str(), e.method.as_str())) {
                return Err(ArchiveError::Invalid(format!(
                    "duplicate entry {} {}",
                    e.method, e.url
                )));
            }
            match self.blobs.get(&e.body_ref) {
                None => {
                    return Err(ArchiveError::Invalid(format!(
                        "entry {} references missing blob {}",
                        e.url, e.body_ref
                    )))
                }
                Some(b) => {
                    let actual = digest_hex(b);
                    if actual != e.body_ref {
                        return Err(ArchiveError::DigestMismatch {
                            expected: e.body_ref.clone(),
                            actual,
                        });
                    }
                }
            }
            let in_manifest = self.images.iter().any(|i| i.url == e.url);
            let expect_image = e.content_type.starts_with("image/") || in_manifest;
            if e.is_image != expect_image {
                return Err(ArchiveError::Invalid(format!(
                    "entry {} has is_image={} but content type / manifest imply {}",
                    e.url, e.is_image, expect_image
                )));
            }
        }
        let roots = self
            .entries
            .iter()
            .filter(|e| e.url == self.page_url && e.is_html())
            .count();
        if roots != 1 {
            return Err(ArchiveError::Invalid(format!(
                "expected exactly one HTML entry for {}, found {roots}",
                self.page_url
            )));
        }
        let mut seen_images = HashSet::new();
        for img in &self.images {
            if !seen_images.insert(img.url.as_str()) {
                return Err(ArchiveError::Invalid(format!(
                    "image {} listed twice in the manifest",
                    img.url
                )));
            }
            let matches = self
                .entries
                .iter()
                .filter(|e| e.url == img.url && e.is_image)
                .count();
            if matches != 1 {
                return Err(ArchiveError::Invalid(format!(
                    "manifest image {} matches {matches} image entries",
                    img.url
                )));
            }
            if let (Some(server), Some(caption)) = (&img.server_prompt, &img.caption) {
                if !server.contains(caption.as_str()) {
                    return Err(ArchiveError::Invalid(format!(
                        "server prompt of {} does not contain its caption",
                        img.url
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_set_limits() {
        assert!(TagSet::new(vec![Tag::Food, Tag::Object, Tag::Text]).is_ok());
        assert_eq!(
            TagSet::new(vec![Tag::Food, Tag::Object, Tag::Text, Tag::Hand]),
            Err(TagError::TooMany(4))
        );
        assert_eq!(
            TagSet::new(vec![Tag::Person, Tag::Face]),
            Err(TagError::PersonWithFace)
        );
        assert_eq!(
            TagSet::new(vec![Tag::Food, Tag::Food]),
            Err(TagError::Duplicate(Tag::Food))
        );
    }

    #[test]
    fn tag_set_deserialization_is_validated() {
        let ok: TagSet = serde_json::from_str(r#"["food","landscape"]"#).unwrap();
        assert_eq!(ok.as_slice(), &[Tag::Food, Tag::Landscape]);
        assert!(serde_json::from_str::<TagSet>(r#"["person","face"]"#).is_err());
    }

    #[test]
    fn blob_store_deduplicates() {
        let mut store = BlobStore::new();
        let a = store.insert(b"same".to_vec());
        let b = store.insert(b"same".to_vec());
        assert_eq!(a, b);
        assert_eq!(store.len(), 1);
        assert_eq!(
            a,
            "0967115f2813a3541eaef77de9d9d5773f1c0c04314b0bbfe4ff3b3b1c55b5d5"
        );
    }
}
