use std::net::{SocketAddr, TcpListener as StdListener};
use std::sync::Arc;
use std::time::{Duration, Instant};

use webforge_core::archive::PageArchive;
use webforge_core::fixtures::demo_archive;
use webforge_core::genclient::{
    GenError, GeneratedImage, GenerationConfig, ImageGenerator, LatencyProfile, StubGenerator,
};
use webforge_core::replay::{MissPolicy, Mode, ServeMode};
use webforge_core::shaper::ConnectivityProfile;
use webforge_net::proxy::{run_pair, ProxyError, ProxyHandle, ProxyPairConfig, ERROR_HEADER, GENERATED_HEADER};

fn client_via(addr: SocketAddr) -> reqwest::Client {
    reqwest::Client::builder()
        .proxy(reqwest::Proxy::all(format!("http://{addr}")).unwrap())
        .build()
        .unwrap()
}

async fn start(mode: ServeMode, tweak: impl FnOnce(&mut ProxyPairConfig)) -> (Arc<PageArchive>, ProxyHandle) {
    let archive = Arc::new(demo_archive());
    let mut config = ProxyPairConfig::ephemeral(mode);
    tweak(&mut config);
    let handle = run_pair(archive.clone(), Arc::new(StubGenerator::new()), config)
        .await
        .unwrap();
    (archive, handle)
}

#[tokio::test]
async fn original_mode_is_byte_faithful() {
    let (archive, handle) = start(ServeMode::original(), |_| {}).await;
    let content = client_via(handle.content_addr());
    let images = client_via(handle.image_addr());
    for entry in &archive.entries {
        let client = if entry.is_image { &images } else { &content };
        let resp = client.get(&entry.url).send().await.unwrap();
        assert_eq!(resp.status().as_u16(), entry.status);
        assert!(resp.headers().get(GENERATED_HEADER).is_none());
        assert_eq!(
            resp.headers()["content-type"].to_str().unwrap(),
            entry.content_type
        );
        let body = resp.bytes().await.unwrap();
        assert_eq!(&body[..], &archive.body(entry).unwrap()[..], "{}", entry.url);
    }
    handle.shutdown().await;
}

#[tokio::test]
async fn origin_form_requests_use_host_header() {
    let (archive, handle) = start(ServeMode::original(), |_| {}).await;
    let resp = reqwest::Client::new()
        .get(format!("http://{}/", handle.content_addr()))
        .header("host", "shop.example")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.bytes().await.unwrap(), archive.root_html().unwrap().into_bytes());
    handle.shutdown().await;
}

#[tokio::test]
async fn generated_server_substitutes_with_rounded_dimensions() {
    let (archive, handle) = start(ServeMode::new(Mode::GeneratedServer), |_| {}).await;
    let images = client_via(handle.image_addr());
    for (url, dims) in [
        ("http://shop.example/img/hero.jpg", (320, 240)),
        ("http://shop.example/img/icon.gif", (64, 64)),
    ] {
        let resp = images.get(url).send().await.unwrap();
        assert_eq!(resp.status(), 200);
        assert_eq!(resp.headers()[GENERATED_HEADER], "1");
        assert_eq!(resp.headers()["content-type"], "image/png");
        let png = resp.bytes().await.unwrap();
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!((img.width(), img.height()), dims);
    }
    // No server prompt: archived original.
    let spacer = archive.image("http://shop.example/img/spacer.png").unwrap();
    assert!(spacer.server_prompt.is_none());
    let resp = images.get(&spacer.url).send().await.unwrap();
    assert!(resp.headers().get(GENERATED_HEADER).is_none());
    handle.shutdown().await;
}

#[tokio::test]
async fn empty_client_prompt_falls_back_to_original() {
    let (archive, handle) = start(ServeMode::new(Mode::GeneratedClient), |_| {}).await;
    let images = client_via(handle.image_addr());
    let url = "http://shop.example/img/spacer.png";
    let resp = images.get(url).send().await.unwrap();
    assert!(resp.headers().get(GENERATED_HEADER).is_none());
    let entry = archive.lookup(url, "GET").unwrap();
    assert_eq!(&resp.bytes().await.unwrap()[..], &archive.body(entry).unwrap()[..]);
    handle.shutdown().await;
}

#[tokio::test]
async fn misses_follow_policy() {
    for (policy, status) in [(MissPolicy::NotFound404, 404), (MissPolicy::Gateway502, 502)] {
        let (_, handle) = start(ServeMode::original(), |c| c.miss_policy = policy).await;
        let resp = client_via(handle.content_addr())
            .get("http://shop.example/missing.html")
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status().as_u16(), status);
        // Archived for GET only.
        let resp = client_via(handle.content_addr())
            .post("http://shop.example/")
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status().as_u16(), status);
        handle.shutdown().await;
    }
}

struct DownGenerator;

impl ImageGenerator for DownGenerator {
    fn generate(&self, _: &str, _: &GenerationConfig) -> Result<GeneratedImage, GenError> {
        Err(GenError::BackendUnavailable {
            endpoint: "http://gpu:9000/generate".into(),
            reason: "connection refused".into(),
        })
    }
}

#[tokio::test]
async fn backend_outage_is_502_with_error_header() {
    let archive = Arc::new(demo_archive());
    let handle = run_pair(
        archive,
        Arc::new(DownGenerator),
        ProxyPairConfig::ephemeral(ServeMode::new(Mode::GeneratedServer)),
    )
    .await
    .unwrap();
    let resp = client_via(handle.image_addr())
        .get("http://shop.example/img/hero.jpg")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 502);
    let err = resp.headers()[ERROR_HEADER].to_str().unwrap();
    assert!(err.contains("http://gpu:9000/generate"), "{err}");
    assert!(resp.headers().get(GENERATED_HEADER).is_none());
    handle.shutdown().await;
}

#[tokio::test]
async fn occupied_port_is_reported() {
    let busy = StdListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap();
    let free: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let config = ProxyPairConfig::new(addr, free, ServeMode::original());
    let err = run_pair(Arc::new(demo_archive()), Arc::new(StubGenerator::new()), config)
        .await
        .err()
        .unwrap();
    assert!(matches!(err, ProxyError::PortInUse(a) if a == addr), "{err}");
}

#[tokio::test]
async fn shutdown_drains_slow_generation_within_bound() {
    let archive = Arc::new(demo_archive());
    let slow = StubGenerator::benchmarking(LatencyProfile::custom(2000, 0).unwrap());
    let handle = run_pair(
        archive,
        Arc::new(slow),
        ProxyPairConfig::ephemeral(ServeMode::new(Mode::GeneratedServer)),
    )
    .await
    .unwrap();
    let client = client_via(handle.image_addr());
    let request = tokio::spawn(async move {
        client.get("http://shop.example/img/hero.jpg").send().await
    });
    tokio::time::sleep(Duration::from_millis(200)).await;
    let start = Instant::now();
    handle.shutdown().await;
    let drained = start.elapsed();
    assert!(drained < Duration::from_secs(5), "{drained:?}");
    let resp = request.await.unwrap().unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()[GENERATED_HEADER], "1");
}

#[tokio::test]
async fn shaping_applies_to_content_proxy_only() {
    let (_, handle) = start(ServeMode::original(), |c| {
        c.shaping = Some(ConnectivityProfile::SLOW);
    })
    .await;
    let url = "http://shop.example/img/icon.gif";
    let time = |addr: SocketAddr| async move {
        let client = client_via(addr);
        let start = Instant::now();
        client.get(url).send().await.unwrap().bytes().await.unwrap();
        start.elapsed()
    };
    let shaped = time(handle.content_addr()).await;
    let unshaped = time(handle.image_addr()).await;
    assert!(shaped >= Duration::from_millis(90), "{shaped:?}");
    assert!(unshaped < Duration::from_millis(50), "{unshaped:?}");
    handle.shutdown().await;
}

#[tokio::test]
async fn pac_points_at_both_listeners() {
    let (_, handle) = start(ServeMode::original(), |_| {}).await;
    let pac = handle.pac();
    assert!(pac.contains(&format!("PROXY {}", handle.content_addr())));
    assert!(pac.contains(&format!("PROXY {}", handle.image_addr())));
    handle.shutdown().await;
}
