use std::path::PathBuf;
use std::process::Command;

use serde::Deserialize;
use webforge_core::pac::{emit_pac, routes_to_image};

#[derive(Deserialize)]
struct Case {
    url: String,
    route: String,
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn cases() -> Vec<Case> {
    serde_json::from_slice(&std::fs::read(data("pac_urls.json")).unwrap()).unwrap()
}

#[test]
fn matches_golden_template() {
    let golden = std::fs::read_to_string(data("proxy.pac.golden")).unwrap();
    assert_eq!(emit_pac("127.0.0.1:8080", "127.0.0.1:8081"), golden);
}

#[test]
fn rust_rule_agrees_with_fixture_list() {
    let cases = cases();
    assert_eq!(cases.len(), 50);
    for c in &cases {
        assert_eq!(routes_to_image(&c.url), c.route == "image", "{}", c.url);
    }
}

/// Runs the emitted script under node and returns one proxy string per URL.
fn eval_with_node(pac: &str, urls: &[String]) -> Option<Vec<String>> {
    let script = format!(
        "{pac}\nconst urls = {};\nfor (const u of urls) {{ const h = new URL(u).hostname; console.log(FindProxyForURL(u, h)); }}\n",
        serde_json::to_string(urls).unwrap()
    );
    let out = Command::new("node").arg("-e").arg(script).output().ok()?;
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Some(String::from_utf8(out.stdout).unwrap().lines().map(str::to_string).collect())
}

#[test]
fn script_routes_fixture_urls() {
    let cases = cases();
    let pac = emit_pac("10.0.0.1:8080", "10.0.0.1:8081");
    let urls: Vec<String> = cases.iter().map(|c| c.url.clone()).collect();
    let Some(routes) = eval_with_node(&pac, &urls) else {
        eprintln!("node not found; skipping script evaluation");
        return;
    };
    assert_eq!(routes.len(), cases.len());
    for (c, got) in cases.iter().zip(&routes) {
        let want = if c.route == "image" { "PROXY 10.0.0.1:8081" } else { "PROXY 10.0.0.1:8080" };
        assert_eq!(got, want, "{}", c.url);
    }
}
