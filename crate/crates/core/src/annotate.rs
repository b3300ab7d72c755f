//! Prompt derivation from page context.
//!
//! Client prompts use only what a browser could see: the image's `alt`
//! attribute and the `p`/`h1`-`h4` text inside the surrounding `div`
//! ancestors. Ascent stops at the first ancestor `div` that also holds a
//! different image. Server prompts prepend a machine caption of the original
//! image to the client prompt.

use std::sync::OnceLock;

use ego_tree::{NodeId, NodeRef};
use regex::Regex;
use scraper::{Html, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::archive::PageArchive;
use crate::genclient::{Captioner, GenError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotateError {
    #[error("node path {0:?} does not address an image element")]
    InvalidNodePath(Vec<usize>),
    #[error("caption is empty")]
    EmptyCaption,
    #[error("archive has no root HTML document")]
    MissingRootDocument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ImgSrc,
    CssBackground,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub url: String,
    pub source_kind: SourceKind,
    /// Child indices (over all node kinds) from the document root.
    pub node_path: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextExtract {
    pub alt_text: Option<String>,
    pub heading_texts: Vec<String>,
    pub paragraph_texts: Vec<String>,
    pub combined_prompt: String,
}

pub const PROMPT_SEPARATOR: &str = "; ";

fn background_url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)background-image\s*:\s*url\(\s*(?:"([^"]*)"|'([^']*)'|([^)]*?))\s*\)"#)
            .expect("static regex")
    })
}

/// Collapses runs of whitespace to one space and trims.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_data_url(s: &str) -> bool {
    s.trim_start().get(..5).is_some_and(|p| p.eq_ignore_ascii_case("data:"))
}

fn element_name<'a>(node: &NodeRef<'a, Node>) -> Option<&'a str> {
    match node.value() {
        Node::Element(el) => Some(el.name()),
        _ => None,
    }
}

fn attr<'a>(node: &NodeRef<'a, Node>, name: &str) -> Option<&'a str> {
    match node.value() {
        Node::Element(el) => el.attr(name),
        _ => None,
    }
}

/// Raw image sources an element carries, before URL resolution.
fn raw_sources(node: &NodeRef<'_, Node>) -> Vec<(SourceKind, String)> {
    let mut out = Vec::new();
    if element_name(node) == Some("img") {
        if let Some(src) = attr(node, "src").map(str::trim).filter(|s| !s.is_empty()) {
            if !is_data_url(src) {
                out.push((SourceKind::ImgSrc, src.to_string()));
            }
        }
    }
    if let Some(style) = attr(node, "style") {
        if let Some(caps) = background_url_re().captures(style) {
            let raw = caps
                .get(1)
                .or_else(|| caps.get(2))
                .or_else(|| caps.get(3))
                .map(|m| m.as_str().trim())
                .unwrap_or("");
            if !raw.is_empty() && !is_data_url(raw) {
                out.push((SourceKind::CssBackground, raw.to_string()));
            }
        }
    }
    out
}

fn node_path(node: &NodeRef<'_, Node>) -> Vec<usize> {
    let mut path = Vec::new();
    let mut cur = *node;
    while let Some(parent) = cur.parent() {
        let idx = parent
            .children()
            .position(|c| c.id() == cur.id())
            .expect("child is listed under its parent");
        path.push(idx);
        cur = parent;
    }
    path.reverse();
    path
}

/// A parsed page that can be queried repeatedly.
fn nearest_div(from: NodeRef<'_, Node>) -> Option<NodeRef<'_, Node>> {
    from.ancestors().find(|a| element_name(a) == Some("div"))
}

pub struct ParsedPage {
    doc: Html,
    base: Option<Url>,
}

impl ParsedPage {
    pub fn parse(html: &str, base_url: &str) -> Self {
        Self {
            doc: Html::parse_document(html),
            base: Url::parse(base_url).ok(),
        }
    }

    fn resolve(&self, raw: &str) -> Option<String> {
        let url = match &self.base {
            Some(base) => base.join(raw).ok()?,
            None => Url::parse(raw).ok()?,
        };
        if url.scheme() == "data" {
            return None;
        }
        Some(url.into())
    }

    fn image_nodes(&self) -> Vec<(NodeId, ImageRef)> {
        let mut out = Vec::new();
        for node in self.doc.tree.root().descendants() {
            for (kind, raw) in raw_sources(&node) {
                if let Some(url) = self.resolve(&raw) {
                    out.push((
                        node.id(),
                        ImageRef {
                            url,
                            source_kind: kind,
                            node_path: node_path(&node),
                        },
                    ));
                }
            }
        }
        out
    }

    /// Every image reference in document order.
    pub fn images(&self) -> Vec<ImageRef> {
        self.image_nodes().into_iter().map(|(_, r)| r).collect()
    }

    fn node_at(&self, path: &[usize]) -> Option<NodeRef<'_, Node>> {
        let mut cur = self.doc.tree.root();
        for &idx in path {
            cur = cur.children().nth(idx)?;
        }
        Some(cur)
    }

    pub fn context(&self, image: &ImageRef) -> Result<ContextExtract, AnnotateError> {
        let invalid = || AnnotateError::InvalidNodePath(image.node_path.clone());
        let node = self.node_at(&image.node_path).ok_or_else(invalid)?;
        let kinds = raw_sources(&node);
        if !kinds.iter().any(|(k, _)| *k == image.source_kind) {
            return Err(invalid());
        }

        let other_images: Vec<NodeId> = self
            .image_nodes()
            .into_iter()
            .map(|(id, _)| id)
            .filter(|id| *id != node.id())
            .collect();
        let holds_other_image = |div: &NodeRef<'_, Node>| {
            div.descendants().any(|d| other_images.contains(&d.id()))
        };

        let alt_text = if image.source_kind == SourceKind::ImgSrc {
            attr(&node, "alt").map(normalize_text).filter(|s| !s.is_empty())
        } else {
            None
        };

        let start = if element_name(&node) == Some("div") {
            Some(node)
        } else {
            nearest_div(node)
        };

        let mut scope = start;
        if let Some(mut cur) = start {
            while let Some(parent) = nearest_div(cur) {
                if holds_other_image(&parent) {
                    break;
                }
                scope = Some(parent);
                cur = parent;
            }
        }

        let mut seen: Vec<String> = alt_text.iter().cloned().collect();
        let mut ordered = Vec::new();
        let mut heading_texts = Vec::new();
        let mut paragraph_texts = Vec::new();
        if let Some(scope) = scope {
            for (is_heading, text) in collect_text_blocks(scope) {
                if text.is_empty() || seen.contains(&text) {
                    continue;
                }
                seen.push(text.clone());
                ordered.push(text.clone());
                if is_heading {
                    heading_texts.push(text);
                } else {
                    paragraph_texts.push(text);
                }
            }
        }

        let combined_prompt = alt_text
            .iter()
            .chain(ordered.iter())
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(PROMPT_SEPARATOR);

        Ok(ContextExtract {
            alt_text,
            heading_texts,
            paragraph_texts,
            combined_prompt,
        })
    }
}

/// Outermost `p`/`h1`-`h4` elements under `scope`, in document order, with
/// their normalized text content.
fn collect_text_blocks(scope: NodeRef<'_, Node>) -> Vec<(bool, String)> {
    fn walk(node: NodeRef<'_, Node>, out: &mut Vec<(bool, String)>) {
        for child in node.children() {
            match element_name(&child) {
                Some(name @ ("p" | "h1" | "h2" | "h3" | "h4")) => {
                    let text: String = child
                        .descendants()
                        .filter_map(|d| match d.value() {
                            Node::Text(t) => Some(&**t),
                            _ => None,
                        })
                        .collect();
                    out.push((name != "p", normalize_text(&text)));
                }
                Some("script" | "style" | "template") => {}
                _ => walk(child, out),
            }
        }
    }
    let mut out = Vec::new();
    walk(scope, &mut out);
    out
}

/// Every `img` with a non-empty `src` and every element whose inline style
/// sets `background-image: url(...)`, resolved against `base_url`, in
/// document order. `data:` URLs are skipped.
pub fn find_images(html: &str, base_url: &str) -> Vec<ImageRef> {
    ParsedPage::parse(html, base_url).images()
}

pub fn extract_context(html: &str, image: &ImageRef) -> Result<ContextExtract, AnnotateError> {
    ParsedPage::parse(html, &image.url).context(image)
}

/// Caption first, then the client context.
pub fn build_server_prompt(context: &ContextExtract, caption: &str) -> Result<String, AnnotateError> {
    let caption = normalize_text(caption);
    if caption.is_empty() {
        return Err(AnnotateError::EmptyCaption);
    }
    let context = normalize_text(&context.combined_prompt);
    if context.is_empty() {
        Ok(caption)
    } else {
        Ok(format!("{caption}{PROMPT_SEPARATOR}{context}"))
    }
}

#[derive(Debug)]
pub struct Annotated {
    pub archive: PageArchive,
    /// Images whose captioning failed; they keep a client prompt only.
    pub failures: Vec<(String, GenError)>,
}

/// Fills client prompts for every manifest image and, given a captioner,
/// captions and server prompts. Re-running on its own output is a no-op.
pub fn annotate_archive(
    archive: &PageArchive,
    captioner: Option<&dyn Captioner>,
) -> Result<Annotated, AnnotateError> {
    let html = archive.root_html().ok_or(AnnotateError::MissingRootDocument)?;
    let page = ParsedPage::parse(&html, &archive.page_url);
    let refs = page.images();
    let mut out = archive.clone();
    let mut failures = Vec::new();

    for image in &mut out.images {
        let context = refs
            .iter()
            .find(|r| r.url == image.url)
            .map(|r| page.context(r))
            .transpose()?
            .unwrap_or_default();
        image.alt_text = context.alt_text.clone();
        image.client_prompt = Some(context.combined_prompt.clone());

        let Some(captioner) = captioner else {
            continue;
        };
        let bytes = archive
            .lookup(&image.url, "GET")
            .and_then(|e| archive.body(e));
        let result = match bytes {
            Some(b) => captioner.caption(b),
            None => Err(GenError::UndecodableImage("image body missing".into())),
        };
        let outcome = result.and_then(|caption| {
            let server = build_server_prompt(&context, &caption)
                .map_err(|e| GenError::MalformedImagePayload(e.to_string()))?;
            Ok((normalize_text(&caption), server))
        });
        match outcome {
            Ok((caption, server)) => {
                image.caption = Some(caption);
                image.server_prompt = Some(server);
            }
            Err(e) => {
                image.caption = None;
                image.server_prompt = None;
                failures.push((image.url.clone(), e));
            }
        }
    }
    Ok(Annotated {
        archive: out,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt_for(html: &str, idx: usize) -> String {
        let refs = find_images(html, "https://x.com/");
        extract_context(html, &refs[idx]).unwrap().combined_prompt
    }

    #[test]
    fn finds_img_and_background() {
        let html = r#"<img src="/a.png"><div style="background-image: url('b.jpg')"></div>
            <img src="data:image/png;base64,AAAA"><img src="  ">"#;
        let refs = find_images(html, "https://x.com");
        assert_eq!(refs.len(), 2);
        assert_eq!(refs[0].url, "https://x.com/a.png");
        assert_eq!(refs[0].source_kind, SourceKind::ImgSrc);
        assert_eq!(refs[1].url, "https://x.com/b.jpg");
        assert_eq!(refs[1].source_kind, SourceKind::CssBackground);
    }

    #[test]
    fn alt_and_sibling_heading() {
        let html = r#"<div><img src="bike.png" alt="red bicycle"><h2>City rides</h2></div>"#;
        assert_eq!(prompt_for(html, 0), "red bicycle; City rides");
    }

    #[test]
    fn no_context_gives_empty_prompt() {
        let html = r#"<body><img src="x.png"></body>"#;
        let ctx = extract_context(html, &find_images(html, "https://x.com/")[0]).unwrap();
        assert_eq!(ctx, ContextExtract::default());
    }

    #[test]
    fn stop_rule_keeps_prompts_apart() {
        let html = r#"<div id="gp">
            <div><img src="a.png"><h3>Alpha</h3></div>
            <div><img src="b.png"><h3>Beta</h3></div>
            <p>Shared caption</p>
        </div>"#;
        assert_eq!(prompt_for(html, 0), "Alpha");
        assert_eq!(prompt_for(html, 1), "Beta");
    }

    #[test]
    fn invalid_node_path() {
        let html = "<div><img src=a.png></div>";
        let bogus = ImageRef {
            url: "https://x.com/a.png".into(),
            source_kind: SourceKind::ImgSrc,
            node_path: vec![0, 9, 9],
        };
        assert!(matches!(
            extract_context(html, &bogus),
            Err(AnnotateError::InvalidNodePath(_))
        ));
    }

    #[test]
    fn server_prompt_assembly() {
        let ctx = ContextExtract {
            combined_prompt: "Golden Gate at dusk".into(),
            ..Default::default()
        };
        assert_eq!(
            build_server_prompt(&ctx, "a bridge with clouds").unwrap(),
            "a bridge with clouds; Golden Gate at dusk"
        );
        assert_eq!(
            build_server_prompt(&ContextExtract::default(), "a bridge").unwrap(),
            "a bridge"
        );
        let padded = ContextExtract {
            combined_prompt: "Golden Gate  ".into(),
            ..Default::default()
        };
        assert_eq!(
            build_server_prompt(&padded, "a bridge   ").unwrap(),
            "a bridge; Golden Gate"
        );
        assert_eq!(
            build_server_prompt(&ctx, "  "),
            Err(AnnotateError::EmptyCaption)
        );
    }
}
