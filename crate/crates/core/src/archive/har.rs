use std::collections::HashMap;
use std::io::Cursor;

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::Deserialize;
use url::Url;

use super::{ArchiveEntry, ArchiveError, BlobStore, ImageAnnotation, PageArchive, DEFAULT_ABOVE_FOLD};
use crate::annotate;

#[derive(Debug, Deserialize)]
struct Har {
    log: HarLog,
}

#[derive(Debug, Deserialize)]
struct HarLog {
    #[serde(default)]
    entries: Vec<HarEntry>,
}

#[derive(Debug, Deserialize)]
struct HarEntry {
    #[serde(default)]
    time: f64,
    request: HarRequest,
    response: HarResponse,
}

#[derive(Debug, Deserialize)]
struct HarRequest {
    method: String,
    url: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarResponse {
    status: i64,
    #[serde(default)]
    headers: Vec<HarHeader>,
    #[serde(default)]
    content: HarContent,
    #[serde(default)]
    body_size: Option<i64>,
    #[serde(default, rename = "_transferSize")]
    transfer_size: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct HarHeader {
    name: String,
    value: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarContent {
    #[serde(default)]
    mime_type: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    encoding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImportWarning {
    /// The entry carried no response body and was dropped.
    MissingBody { url: String, method: String },
    /// A later entry replaced an earlier one with the same `(url, method)`.
    Duplicate { url: String, method: String },
    /// Body text could not be decoded; the entry was dropped.
    UndecodableBody { url: String, reason: String },
    /// The root HTML references an image the capture does not contain.
    ImageNotArchived { url: String },
    /// Another HTML entry for the page URL under a different method was dropped.
    ExtraRootDocument { method: String },
}

#[derive(Debug, Clone)]
pub struct Imported {
    pub archive: PageArchive,
    pub warnings: Vec<ImportWarning>,
}

fn normalize_url(raw: &str) -> String {
    Url::parse(raw).map(String::from).unwrap_or_else(|_| raw.to_string())
}

fn image_dimensions(bytes: &[u8]) -> (u32, u32) {
    image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .ok()
        .and_then(|r| r.into_dimensions().ok())
        .unwrap_or((0, 0))
}

/// Imports a HAR 1.2 capture, stamping the archive with the current time.
pub fn import_har(har_document: &[u8], page_url: &str) -> Result<Imported, ArchiveError> {
    import_har_with_clock(har_document, page_url, Utc::now())
}

pub fn import_har_with_clock(
    har_document: &[u8],
    page_url: &str,
    created_at: DateTime<Utc>,
) -> Result<Imported, ArchiveError> {
    let har: Har = serde_json::from_slice(har_document)
        .map_err(|e| ArchiveError::MalformedCapture(e.to_string()))?;
    let page_url = normalize_url(page_url);

    let mut warnings = Vec::new();
    let mut blobs = BlobStore::new();
    let mut entries: Vec<ArchiveEntry> = Vec::new();
    let mut positions: HashMap<(String, String), usize> = HashMap::new();

    for raw in har.log.entries {
        let url = normalize_url(&raw.request.url);
        let method = raw.request.method.to_ascii_uppercase();
        let Some(text) = raw.response.content.text else {
            warnings.push(ImportWarning::MissingBody { url, method });
            continue;
        };
        let body = if raw.response.content.encoding.as_deref() == Some("base64") {
            match base64::engine::general_purpose::STANDARD.decode(text.trim()) {
                Ok(b) => b,
                Err(e) => {
                    warnings.push(ImportWarning::UndecodableBody {
                        url,
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        } else {
            text.into_bytes()
        };

        let headers: Vec<(String, String)> = raw
            .response
            .headers
            .into_iter()
            .map(|h| (h.name, h.value))
            .collect();
        let content_type = raw
            .response
            .content
            .mime_type
            .filter(|m| !m.is_empty())
            .or_else(|| {
                headers
                    .iter()
                    .find(|(n, _)| n.eq_ignore_ascii_case("content-type"))
                    .map(|(_, v)| v.clone())
            })
            .unwrap_or_else(|| "application/octet-stream".to_string());
        let transfer_size = raw
            .response
            .transfer_size
            .filter(|s| *s >= 0)
            .or(raw.response.body_size.filter(|s| *s >= 0))
            .map(|s| s as u64)
            .unwrap_or(body.len() as u64);
        let status = u16::try_from(raw.response.status)
            .map_err(|_| ArchiveError::MalformedCapture(format!("bad status for {url}")))?;

        let body_ref = blobs.insert(body);
        let entry = ArchiveEntry {
            url: url.clone(),
            method: method.clone(),
            status,
            headers,
            body_ref,
            is_image: content_type.starts_with("image/"),
            content_type,
            transfer_size,
            duration_ms: raw.time.max(0.0).round() as u64,
        };

        match positions.get(&(url.clone(), method.clone())) {
            Some(&idx) => {
                warnings.push(ImportWarning::Duplicate { url, method });
                entries[idx] = entry;
            }
            None => {
                positions.insert((url, method), entries.len());
                entries.push(entry);
            }
        }
    }

    let root_methods: Vec<String> = entries
        .iter()
        .filter(|e| e.url == page_url && e.is_html())
        .map(|e| e.method.clone())
        .collect();
    if root_methods.is_empty() {
        return Err(ArchiveError::MissingRootDocument(page_url));
    }
    if root_methods.len() > 1 {
        let keep = if root_methods.iter().any(|m| m == "GET") {
            "GET".to_string()
        } else {
            root_methods[0].clone()
        };
        entries.retain(|e| {
            let drop = e.url == page_url && e.is_html() && e.method != keep;
            if drop {
                warnings.push(ImportWarning::ExtraRootDocument {
                    method: e.method.clone(),
                });
            }
            !drop
        });
    }

    let mut archive = PageArchive {
        page_url,
        entries,
        images: Vec::new(),
        created_at,
        blobs,
    };
    build_image_manifest(&mut archive, &mut warnings);
    archive.prune_blobs();
    archive.validate()?;
    Ok(Imported { archive, warnings })
}

fn build_image_manifest(archive: &mut PageArchive, warnings: &mut Vec<ImportWarning>) {
    let Some(html) = archive.root_html() else {
        return;
    };
    let mut images: Vec<ImageAnnotation> = Vec::new();
    for image_ref in annotate::find_images(&html, &archive.page_url) {
        if images.iter().any(|i| i.url == image_ref.url) {
            continue;
        }
        let Some(idx) = archive
            .entries
            .iter()
            .position(|e| e.url == image_ref.url && e.method == "GET")
        else {
            if !warnings
                .iter()
                .any(|w| matches!(w, ImportWarning::ImageNotArchived { url } if *url == image_ref.url))
            {
                warnings.push(ImportWarning::ImageNotArchived { url: image_ref.url });
            }
            continue;
        };
        if archive.entries[idx].url == archive.page_url {
            continue;
        }
        let entry = &mut archive.entries[idx];
        entry.is_image = true;
        let (width, height) = archive
            .blobs
            .get(&entry.body_ref)
            .map(|b| image_dimensions(b))
            .unwrap_or((0, 0));
        let above_fold = images.len() < DEFAULT_ABOVE_FOLD;
        images.push(ImageAnnotation::new(image_ref.url, width, height, above_fold));
    }
    archive.images = images;
}
