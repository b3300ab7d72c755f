//! Proxy auto-configuration for the image/content proxy split.

use std::sync::OnceLock;

use regex::Regex;

use crate::archive::PageArchive;

const TEMPLATE: &str = include_str!("../templates/proxy.pac");

/// Matched against the URL with scheme and authority removed.
pub const IMAGE_PATH_PATTERN: &str = r"\.(png|jpe?g|gif|webp|svg|ico|avif)(\?|$)";

fn image_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!("(?i){IMAGE_PATH_PATTERN}")).expect("static regex"))
}

fn authority_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^[a-z][a-z0-9+.\-]*://[^/?#]*").expect("static regex"))
}

/// PAC script routing image URLs to `image_host_port` and everything else to
/// `content_host_port`.
pub fn emit_pac(content_host_port: &str, image_host_port: &str) -> String {
    TEMPLATE
        .replace("{{IMAGE_PROXY}}", image_host_port)
        .replace("{{CONTENT_PROXY}}", content_host_port)
}

/// The URL with `scheme://authority` stripped, as the PAC script sees it.
pub fn url_path(url: &str) -> &str {
    match authority_re().find(url) {
        Some(m) => &url[m.end()..],
        None => url,
    }
}

/// Same decision the emitted script makes.
pub fn routes_to_image(url: &str) -> bool {
    image_re().is_match(url_path(url))
}

/// Manifest image URLs the PAC rule would send to the content proxy.
pub fn unmatched_images(archive: &PageArchive) -> Vec<&str> {
    archive
        .images
        .iter()
        .map(|i| i.url.as_str())
        .filter(|u| !routes_to_image(u))
        .collect()
}
