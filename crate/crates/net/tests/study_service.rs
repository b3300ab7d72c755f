use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::Arc;

use serde_json::{json, Value};
use webforge_core::archive::TagSet;
use webforge_core::study::{StudyConfig, StudyStore, StudyTask, TaskKind, Variant};
use webforge_net::study_service::{serve_on, StudyService};

const SECRET: &str = "s3cret";

fn tasks() -> Vec<StudyTask> {
    let mut out = Vec::new();
    for i in 0..5 {
        for variant in [Variant::Server, Variant::Client] {
            let suffix = if variant == Variant::Client { "c" } else { "s" };
            out.push(StudyTask {
                task_id: format!("img{i}{suffix}"),
                kind: TaskKind::Images,
                variant,
                prompt_text: format!("prompt {i}"),
                original_ref: format!("orig/{i}.png"),
                generated_ref: Some(format!("gen/{i}.png")),
                tags: TagSet::empty(),
            });
        }
    }
    out.push(StudyTask {
        task_id: "rel0".into(),
        kind: TaskKind::Scale,
        variant: Variant::Server,
        prompt_text: "a bowl of fruit".into(),
        original_ref: "orig/0.png".into(),
        generated_ref: None,
        tags: TagSet::empty(),
    });
    out
}

struct Server {
    addr: SocketAddr,
    _dir: tempfile::TempDir,
    store: Arc<StudyStore>,
}

async fn start(quota: usize) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let media = dir.path().join("media");
    std::fs::create_dir_all(media.join("orig")).unwrap();
    std::fs::write(media.join("orig/0.png"), b"png-bytes").unwrap();
    let config = StudyConfig {
        quota,
        secret: SECRET.into(),
        seed: 7,
        ..Default::default()
    };
    let store = Arc::new(StudyStore::create(dir.path().join("study"), tasks(), config).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let service = StudyService::new(store.clone(), SECRET, media);
    tokio::spawn(serve_on(service, listener, std::future::pending()));
    Server {
        addr,
        _dir: dir,
        store,
    }
}

async fn next(client: &reqwest::Client, addr: SocketAddr, ty: &str, pid: &str) -> Value {
    client
        .get(format!("http://{addr}/tasks/next?type={ty}&pid={pid}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap()
}

async fn submit(client: &reqwest::Client, addr: SocketAddr, body: Value) -> reqwest::StatusCode {
    client
        .post(format!("http://{addr}/scores"))
        .bearer_auth(SECRET)
        .json(&body)
        .send()
        .await
        .unwrap()
        .status()
}

#[tokio::test]
async fn client_suffix_selects_variant() {
    let s = start(10).await;
    let c = reqwest::Client::new();
    let v = next(&c, s.addr, "images_client", "p1").await;
    assert_eq!(v["status"], "task");
    assert_eq!(v["task"]["variant"], "client");
    let v = next(&c, s.addr, "images", "p1").await;
    assert_eq!(v["task"]["variant"], "server");
    let resp = c
        .get(format!("http://{}/tasks/next?type=movies&pid=p1", s.addr))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 404);
}

#[tokio::test]
async fn submit_requires_bearer_and_validates() {
    let s = start(10).await;
    let c = reqwest::Client::new();
    let body = json!({"task_id": "img0s", "participant_id": "p1", "response": {"quality": 5}});
    let unauth = c
        .post(format!("http://{}/scores", s.addr))
        .json(&body)
        .send()
        .await
        .unwrap();
    assert_eq!(unauth.status(), 401);
    assert_eq!(submit(&c, s.addr, body.clone()).await, 201);
    assert_eq!(submit(&c, s.addr, body).await, 409);
    let wrong = json!({"task_id": "img0s", "participant_id": "p2", "response": {"relevance": 3}});
    assert_eq!(submit(&c, s.addr, wrong).await, 422);
    let unknown = json!({"task_id": "nope", "participant_id": "p2", "response": {"quality": 3}});
    assert_eq!(submit(&c, s.addr, unknown).await, 404);
    let cj = json!({"task_id": "rel0", "participant_id": "p2", "response": "cannot_judge"});
    assert_eq!(submit(&c, s.addr, cj).await, 201);
}

#[tokio::test]
async fn results_and_media() {
    let s = start(10).await;
    let c = reqwest::Client::new();
    for (i, score) in [1, 2, 2, 3, 4, 4, 5, 5, 5, 5].into_iter().enumerate() {
        let body = json!({"task_id": "img0s", "participant_id": format!("p{i}"), "response": {"quality": score}});
        assert_eq!(submit(&c, s.addr, body).await, 201);
    }
    let r: Value = c
        .get(format!("http://{}/results?type=images", s.addr))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let summary = &r["summaries"][0];
    assert_eq!((summary["n"].as_u64(), summary["median"].as_f64()), (Some(10), Some(4.0)));
    assert_eq!((summary["q1"].as_f64(), summary["q3"].as_f64()), (Some(2.0), Some(5.0)));
    let client_side: Value = c
        .get(format!("http://{}/results?type=images_client", s.addr))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(client_side["summaries"].as_array().unwrap().len(), 0);

    let media = c.get(format!("http://{}/media/orig/0.png", s.addr)).send().await.unwrap();
    assert_eq!(media.status(), 200);
    assert_eq!(media.headers()["content-type"], "image/png");
    assert_eq!(&media.bytes().await.unwrap()[..], b"png-bytes");
    let escape = c
        .get(format!("http://{}/media/..%2F..%2Fetc%2Fpasswd", s.addr))
        .send()
        .await
        .unwrap();
    assert_eq!(escape.status(), 404);
}

/// Participants loop on next_task/submit until exhausted, all at once.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_participants_stay_balanced() {
    let s = start(10).await;
    let c = reqwest::Client::new();
    let mut handles = Vec::new();
    for p in 0..12 {
        let c = c.clone();
        let addr = s.addr;
        handles.push(tokio::spawn(async move {
            let pid = format!("w{p}");
            let mut done = 0;
            loop {
                let v = next(&c, addr, "images", &pid).await;
                if v["status"] == "exhausted" {
                    return (done, v["completion_code"].as_str().unwrap().to_string());
                }
                let body = json!({"task_id": v["task"]["task_id"], "participant_id": pid, "response": {"quality": 3}});
                assert_eq!(submit(&c, addr, body).await, 201);
                done += 1;
            }
        }));
    }
    let mut codes = HashSet::new();
    let mut total = 0;
    for h in handles {
        let (done, code) = h.await.unwrap();
        total += done;
        codes.insert(code);
    }
    // Five server-variant image tasks with a quota of ten each.
    assert_eq!(total, 50);
    assert_eq!(codes.len(), 12);
    let counts = s.store.counts();
    let server: Vec<usize> = counts
        .iter()
        .filter(|(k, _)| k.ends_with('s') && k.starts_with("img"))
        .map(|(_, v)| *v)
        .collect();
    assert!(server.iter().all(|&c| c == 10), "{counts:?}");
}
