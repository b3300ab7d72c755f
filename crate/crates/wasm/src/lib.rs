//! Browser bindings. Every export takes and returns plain strings; results
//! are JSON documents, errors are JSON `{"error": ...}` objects.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;
use webforge_core::annotate::{ParsedPage, SourceKind};
use webforge_core::archive::PageArchive;
use webforge_core::fixtures::{demo_archive, gallery_archive};
use webforge_core::genclient::LatencyProfile;
use webforge_core::metrics::{bandwidth_savings, simulate_waterfall, Arm, SimParams, Waterfall};
use webforge_core::pac::{emit_pac, routes_to_image, url_path};
use webforge_core::replay::{Mode, ServeMode};
use webforge_core::shaper::ConnectivityProfile;

fn error(msg: impl ToString) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

fn page(name: &str) -> Result<PageArchive, String> {
    match name {
        "demo" => Ok(demo_archive()),
        "gallery" => Ok(gallery_archive()),
        other => Err(format!("unknown page `{other}` (demo, gallery)")),
    }
}

#[derive(Serialize)]
struct Simulation {
    page_url: String,
    profile: String,
    latency: String,
    mode: String,
    savings_bytes: u64,
    si_delta_ms: f64,
    plt_delta_ms: f64,
    original: Waterfall,
    generated: Waterfall,
}

fn run_simulation(
    page_name: &str,
    profile: &str,
    latency: &str,
    mode: &str,
    connections: usize,
    slots: usize,
) -> Result<Simulation, String> {
    let archive = page(page_name)?;
    let profile: ConnectivityProfile = profile.parse()?;
    let latency: LatencyProfile = latency.parse()?;
    let mode: Mode = mode.parse()?;
    if mode == Mode::Hybrid {
        return Err("hybrid needs a URL list; pick another mode".into());
    }
    let params = SimParams {
        parallel_connections: connections,
        generation_slots: slots,
        mode: ServeMode::new(mode),
        ..SimParams::default()
    };
    let run = |arm| simulate_waterfall(&archive, &profile, &latency, arm, &params).map_err(|e| e.to_string());
    let original = run(Arm::Original)?;
    let generated = run(Arm::Generated)?;
    Ok(Simulation {
        page_url: archive.page_url.clone(),
        profile: profile.to_string(),
        latency: latency.to_string(),
        mode: mode.to_string(),
        savings_bytes: bandwidth_savings(&archive, &params.mode),
        si_delta_ms: original.metrics.si_ms - generated.metrics.si_ms,
        plt_delta_ms: original.metrics.plt_ms - generated.metrics.plt_ms,
        original,
        generated,
    })
}

/// Simulates one load of a built-in page (`demo` or `gallery`) in both arms.
#[wasm_bindgen]
pub fn simulate(page_name: &str, profile: &str, latency: &str, mode: &str, connections: usize, slots: usize) -> String {
    match run_simulation(page_name, profile, latency, mode, connections, slots) {
        Ok(sim) => serde_json::to_string(&sim).unwrap_or_else(error),
        Err(e) => error(e),
    }
}

#[derive(Serialize)]
struct Prompt {
    url: String,
    kind: SourceKind,
    alt_text: Option<String>,
    prompt: String,
}

/// Client-side prompts for every image in `html`.
#[wasm_bindgen]
pub fn extract_prompts(html: &str, base_url: &str) -> String {
    let page = ParsedPage::parse(html, base_url);
    let mut out = Vec::new();
    for image in page.images() {
        match page.context(&image) {
            Ok(ctx) => out.push(Prompt {
                url: image.url,
                kind: image.source_kind,
                alt_text: ctx.alt_text,
                prompt: ctx.combined_prompt,
            }),
            Err(e) => return error(e),
        }
    }
    serde_json::to_string(&out).unwrap_or_else(error)
}

/// Which proxy the PAC script picks for each newline-separated URL.
#[wasm_bindgen]
pub fn route_urls(urls: &str, content_proxy: &str, image_proxy: &str) -> String {
    let routes: Vec<_> = urls
        .lines()
        .map(str::trim)
        .filter(|u| !u.is_empty())
        .map(|u| {
            let image = routes_to_image(u);
            json!({
                "url": u,
                "path": url_path(u),
                "proxy": if image { image_proxy } else { content_proxy },
                "image": image,
            })
        })
        .collect();
    json!({ "routes": routes, "pac": emit_pac(content_proxy, image_proxy) }).to_string()
}
