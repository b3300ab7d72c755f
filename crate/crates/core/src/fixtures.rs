//! Small synthetic pages for demos, benchmarks and tests.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotate::{annotate_archive, build_server_prompt, ContextExtract};
use crate::archive::{digest_hex, ArchiveEntry, BlobStore, ImageAnnotation, PageArchive, Tag, TagSet};
use crate::genclient::{render_stub_png, Captioner, StubCaptioner};

/// One image of a synthetic page.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSpec {
    pub path: String,
    pub transfer_size: u64,
    pub width: u32,
    pub height: u32,
    pub above_fold: bool,
    pub alt: Option<String>,
    pub heading: Option<String>,
    pub paragraph: Option<String>,
    /// Whether the page also gets a server-side prompt (caption + context).
    pub captioned: bool,
}

impl ImageSpec {
    pub fn new(path: impl Into<String>, transfer_size: u64, above_fold: bool) -> Self {
        Self {
            path: path.into(),
            transfer_size,
            width: 64,
            height: 48,
            above_fold,
            alt: None,
            heading: None,
            paragraph: None,
            captioned: true,
        }
    }

    pub fn alt(mut self, alt: &str) -> Self {
        self.alt = Some(alt.into());
        self
    }

    pub fn heading(mut self, heading: &str) -> Self {
        self.heading = Some(heading.into());
        self
    }

    pub fn paragraph(mut self, paragraph: &str) -> Self {
        self.paragraph = Some(paragraph.into());
        self
    }

    pub fn dims(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn uncaptioned(mut self) -> Self {
        self.captioned = false;
        self
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Page HTML with each image in its own `div.card`.
pub fn page_html(title: &str, images: &[ImageSpec]) -> String {
    let mut html = format!(
        "<!doctype html>\n<html><head><title>{}</title><link rel=\"stylesheet\" href=\"/style.css\"></head>\n<body>\n",
        escape(title)
    );
    for img in images {
        html.push_str("<div class=\"card\">");
        html.push_str(&format!("<img src=\"/{}\"", escape(&img.path)));
        if let Some(alt) = &img.alt {
            html.push_str(&format!(" alt=\"{}\"", escape(alt)));
        }
        html.push('>');
        if let Some(h) = &img.heading {
            html.push_str(&format!("<h2>{}</h2>", escape(h)));
        }
        if let Some(p) = &img.paragraph {
            html.push_str(&format!("<p>{}</p>", escape(p)));
        }
        html.push_str("</div>\n");
    }
    html.push_str("<script src=\"/app.js\"></script>\n</body></html>\n");
    html
}

fn entry(blobs: &mut BlobStore, url: String, content_type: &str, body: Vec<u8>, transfer_size: u64) -> ArchiveEntry {
    let body_ref = blobs.insert(body);
    ArchiveEntry {
        url,
        method: "GET".into(),
        status: 200,
        headers: vec![("Content-Type".into(), content_type.into())],
        body_ref,
        content_type: content_type.into(),
        transfer_size,
        duration_ms: 0,
        is_image: content_type.starts_with("image/"),
    }
}

fn mime(path: &str) -> &'static str {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else if lower.ends_with(".gif") {
        "image/gif"
    } else if lower.ends_with(".webp") {
        "image/webp"
    } else {
        "image/png"
    }
}

/// Builds and annotates a page under `origin` (e.g. `http://shop.example`).
/// Image bodies are small stub PNGs; `transfer_size` carries the nominal
/// size used by savings and the simulator.
pub fn build_page(origin: &str, root_transfer_size: u64, images: &[ImageSpec]) -> PageArchive {
    let origin = origin.trim_end_matches('/');
    let page_url = format!("{origin}/");
    let html = page_html("Fixture page", images);
    let mut blobs = BlobStore::new();
    let html_len = html.len() as u64;
    let mut entries = vec![entry(
        &mut blobs,
        page_url.clone(),
        "text/html; charset=utf-8",
        html.into_bytes(),
        root_transfer_size.max(html_len),
    )];
    let css = b"body{font-family:sans-serif}.card{margin:1em}".to_vec();
    let css_len = css.len() as u64;
    entries.push(entry(&mut blobs, format!("{origin}/style.css"), "text/css", css, css_len));
    let js = b"console.log('loaded');".to_vec();
    let js_len = js.len() as u64;
    entries.push(entry(&mut blobs, format!("{origin}/app.js"), "application/javascript", js, js_len));

    let mut manifest = Vec::new();
    for img in images {
        let url = format!("{origin}/{}", img.path);
        let png = render_stub_png(&img.path, 0, img.width.max(1), img.height.max(1)).to_vec();
        let mut e = entry(&mut blobs, url.clone(), mime(&img.path), png, img.transfer_size);
        e.is_image = true;
        entries.push(e);
        manifest.push(ImageAnnotation::new(url, img.width, img.height, img.above_fold));
    }

    let archive = PageArchive {
        page_url,
        entries,
        images: manifest,
        created_at: fixed_time(),
        blobs,
    };
    let mut archive = annotate_archive(&archive, None).expect("fixture has a root").archive;
    for (ann, spec) in archive.images.iter_mut().zip(images) {
        if !spec.captioned {
            continue;
        }
        let body = {
            let e = archive.entries.iter().find(|e| e.url == ann.url).expect("entry");
            archive.blobs.get(&e.body_ref).expect("blob").clone()
        };
        let caption = StubCaptioner.caption(&body).expect("stub png decodes");
        let ctx = ContextExtract {
            combined_prompt: ann.client_prompt.clone().unwrap_or_default(),
            ..Default::default()
        };
        ann.server_prompt = Some(build_server_prompt(&ctx, &caption).expect("caption"));
        ann.caption = Some(caption);
    }
    debug_assert!(archive.validate().is_ok());
    debug_assert!(archive.entries.iter().all(|e| archive.blobs.get(&e.body_ref).map(|b| digest_hex(b)) == Some(e.body_ref.clone())));
    archive
}

fn fixed_time() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).expect("valid timestamp")
}

/// A small storefront page:
///
/// | image        | bytes   | fold  | context                | server prompt |
/// |--------------|---------|-------|------------------------|---------------|
/// | hero.jpg     | 500,000 | above | alt + heading          | yes           |
/// | banner.png   | 800,000 | above | heading + paragraph    | yes           |
/// | icon.gif     | 100     | above | alt                    | yes           |
/// | spacer.png   | 2,000   | below | none (empty prompt)    | no            |
pub fn demo_archive() -> PageArchive {
    build_page(
        "http://shop.example",
        40_000,
        &[
            ImageSpec::new("img/hero.jpg", 500_000, true)
                .alt("red bicycle")
                .heading("City rides")
                .dims(320, 240),
            ImageSpec::new("img/banner.png", 800_000, true)
                .heading("Summer sale")
                .paragraph("Fresh strawberries and cream.")
                .dims(480, 120),
            ImageSpec::new("img/icon.gif", 100, true).alt("shopping cart").dims(20, 20),
            ImageSpec::new("img/spacer.png", 2_000, false).dims(1, 1).uncaptioned(),
        ],
    )
}

/// A 20-image page: three large above-fold images and seventeen smaller
/// ones below the fold.
pub fn gallery_archive() -> PageArchive {
    let mut images = Vec::new();
    for i in 0..3 {
        images.push(
            ImageSpec::new(format!("hero{i}.jpg"), 2_500_000, true)
                .alt(&format!("hero photo {i}"))
                .heading(&format!("Feature {i}")),
        );
    }
    for i in 0..17 {
        images.push(
            ImageSpec::new(format!("thumb{i}.jpg"), 300_000, false)
                .alt(&format!("thumbnail {i}"))
                .paragraph(&format!("Item {i} description")),
        );
    }
    build_page("http://gallery.example", 60_000, &images)
}

/// A valid archive of `entries` responses (at least 1) with random bodies,
/// headers, methods and statuses. Roughly a third of the non-root entries
/// are manifest images; some bodies repeat so blobs are shared.
pub fn random_archive(seed: u64, entries: usize) -> PageArchive {
    const TYPES: [&str; 6] = ["image/png", "image/jpeg", "text/css", "application/javascript", "application/json", "font/woff2"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = format!("https://site{}.example", rng.gen_range(0..1000));
    let mut blobs = BlobStore::new();
    let mut bodies: Vec<Vec<u8>> = Vec::new();
    let html = format!("<html><body><p>page {seed}</p></body></html>");
    let mut out = vec![entry(&mut blobs, format!("{origin}/"), "text/html", html.into_bytes(), 0)];
    out[0].transfer_size = rng.gen_range(0..200_000);
    out[0].duration_ms = rng.gen_range(0..5_000);
    let mut images = Vec::new();
    for i in 1..entries.max(1) {
        let content_type = TYPES[rng.gen_range(0..TYPES.len())];
        let body = if !bodies.is_empty() && rng.gen_bool(0.15) {
            bodies[rng.gen_range(0..bodies.len())].clone()
        } else {
            let len = rng.gen_range(0..2048);
            (0..len).map(|_| rng.gen()).collect()
        };
        bodies.push(body.clone());
        let ext = content_type.rsplit('/').next().unwrap_or("bin");
        let url = format!("{origin}/r/{i}.{ext}?v={}", rng.gen_range(0..100));
        let mut e = entry(&mut blobs, url.clone(), content_type, body, rng.gen_range(0..3_000_000));
        e.method = if rng.gen_bool(0.9) { "GET" } else { "POST" }.into();
        e.status = [200, 200, 200, 204, 301, 404][rng.gen_range(0..6)];
        e.duration_ms = rng.gen_range(0..5_000);
        for h in 0..rng.gen_range(0..4) {
            e.headers.push((format!("X-H{h}"), format!("{}", rng.gen::<u32>())));
        }
        if e.is_image && e.method == "GET" && rng.gen_bool(0.4) {
            let mut img = ImageAnnotation::new(url, rng.gen_range(1..2000), rng.gen_range(1..2000), images.len() < 3);
            img.alt_text = rng.gen_bool(0.5).then(|| format!("alt {i}"));
            img.client_prompt = Some(format!("prompt {i}"));
            if rng.gen_bool(0.5) {
                img.caption = Some(format!("caption {i}"));
                img.server_prompt = Some(format!("caption {i}; prompt {i}"));
            }
            let tag = Tag::ALL[rng.gen_range(0..Tag::ALL.len())];
            img.tags = TagSet::new(vec![tag]).expect("single tag");
            images.push(img);
        }
        out.push(e);
    }
    let archive = PageArchive {
        page_url: format!("{origin}/"),
        entries: out,
        images,
        created_at: DateTime::from_timestamp(1_600_000_000 + rng.gen_range(0..100_000_000), rng.gen_range(0..1_000_000_000))
            .expect("valid timestamp"),
        blobs,
    };
    debug_assert!(archive.validate().is_ok());
    archive
}
