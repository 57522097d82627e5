mod common;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::routing::post;
use base64::Engine;
use common::{archive, archive_with_raw_name, assert_no_orphans};
use raptor_proxy::{serve, Controller, ProxyConfig, ProxyHandle, StatsSnapshot};
use serde_json::{json, Value};

const ECHO: &str = "#!/bin/sh\ncat <&3 >&4\n";

fn three_function_manifest() -> Value {
    json!({"functions": [
        {"name": "function1:main", "location": "p1/file", "dependencies": []},
        {"name": "function2:main", "location": "p2/file", "dependencies": []},
        {"name": "function3:main", "location": "p3/file", "dependencies": ["function1:main", "function2:main"]},
    ]})
}

fn three_function_archive(first_task_body: &str) -> String {
    let f1 = format!("#!/bin/sh\n{first_task_body}\nprintf '{{\"from\":\"f1\"}}' >&4\n");
    let bytes = archive(&[
        ("p1/file", &f1),
        ("p2/file", "#!/bin/sh\nprintf '{\"from\":\"f2\"}' >&4\n"),
        ("p3/file", ECHO),
    ]);
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

async fn start(root: &Path, controller: Option<Controller>) -> ProxyHandle {
    let cfg = ProxyConfig { controller, linger: Duration::from_millis(300), ..ProxyConfig::new(root) };
    serve(cfg).await.unwrap()
}

async fn post_json(url: &str, body: &Value) -> (u16, Value) {
    let resp = reqwest::Client::new().post(url).json(body).send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap_or(Value::Null))
}

async fn init_three_functions(proxy: &ProxyHandle, first_task_body: &str) {
    let body = json!({"value": {"code": three_function_archive(first_task_body), "binary": true, "manifest": three_function_manifest()}});
    let (status, reply) = post_json(&proxy.url("/init"), &body).await;
    assert_eq!(status, 200, "{reply}");
}

async fn stats(proxy: &ProxyHandle) -> StatsSnapshot {
    reqwest::get(proxy.url("/stats")).await.unwrap().json().await.unwrap()
}

/// A controller that counts requests and answers after `delay`.
async fn stub_controller(delay: Duration) -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let app = axum::Router::new().route(
        "/invoke",
        post(move |_body: axum::Json<Value>| {
            let counter = counter.clone();
            async move {
                counter.fetch_add(1, Ordering::SeqCst);
                tokio::time::sleep(delay).await;
                axum::Json(json!({"accepted": true}))
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/invoke"), hits)
}

async fn eventually(what: &str, mut check: impl AsyncFnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while !check().await {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test]
async fn legacy_run_executes_once_without_flight_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    let (status, _) = post_json(&proxy.url("/init"), &json!({"value": {"code": ECHO}})).await;
    assert_eq!(status, 200);

    let (status, reply) = post_json(&proxy.url("/run"), &json!({"value": {"x": 1}})).await;
    assert_eq!((status, reply), (200, json!({"x": 1})));
    let s = stats(&proxy).await;
    assert_eq!(s.processes_spawned, 1);
    assert_eq!(s.task_executions.get("main"), Some(&1));
    assert_eq!((s.forks_issued, s.peer_messages_sent, s.peer_messages_received), (0, 0, 0));
    proxy.shutdown().await;
    assert_no_orphans(dir.path());
}

#[tokio::test]
async fn second_init_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    let init = json!({"value": {"code": ECHO}});
    assert_eq!(post_json(&proxy.url("/init"), &init).await.0, 200);
    assert_eq!(post_json(&proxy.url("/init"), &init).await.0, 403);
    proxy.shutdown().await;
}

#[tokio::test]
async fn run_before_init_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    assert_eq!(post_json(&proxy.url("/run"), &json!({"value": {}})).await.0, 403);
    proxy.shutdown().await;
}

#[tokio::test]
async fn manifest_pack_runs_the_whole_dag() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    let body = json!({"value": {"code": three_function_archive(""), "binary": true, "manifest": three_function_manifest()}});
    let (status, reply) = post_json(&proxy.url("/init"), &body).await;
    assert_eq!(status, 200);
    assert_eq!(reply["functions"].as_array().unwrap().len(), 3);

    let (status, reply) = post_json(&proxy.url("/run"), &json!({"value": {}})).await;
    assert_eq!(status, 200);
    let expected = json!({"function3:main": {"function1:main": {"from": "f1"}, "function2:main": {"from": "f2"}}});
    assert_eq!(reply, expected);
    assert_eq!(stats(&proxy).await.processes_spawned, 3);
    proxy.shutdown().await;
}

#[tokio::test]
async fn manifest_as_string_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    let manifest = three_function_manifest().to_string();
    let body = json!({"value": {"code": three_function_archive(""), "binary": true, "manifest": manifest}});
    assert_eq!(post_json(&proxy.url("/init"), &body).await.0, 200);
    proxy.shutdown().await;
}

#[tokio::test]
async fn archive_escaping_the_root_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    let code = base64::engine::general_purpose::STANDARD.encode(archive_with_raw_name("../evil"));
    let (status, reply) = post_json(&proxy.url("/init"), &json!({"value": {"code": code, "binary": true}})).await;
    assert_eq!(status, 400);
    assert!(reply["error"].as_str().unwrap().contains("invalid archive"), "{reply}");
    assert!(!dir.path().join("code/evil").exists() && !dir.path().join("evil").exists());
    proxy.shutdown().await;
}

#[tokio::test]
async fn manifest_naming_a_missing_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    let code = base64::engine::general_purpose::STANDARD.encode(archive(&[("p1/file", ECHO)]));
    let body = json!({"value": {"code": code, "binary": true, "manifest": three_function_manifest()}});
    assert_eq!(post_json(&proxy.url("/init"), &body).await.0, 400);
    proxy.shutdown().await;
}

#[tokio::test]
async fn mask_limits_execution_to_selected_functions() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    init_three_functions(&proxy, "").await;
    let (status, reply) = post_json(&proxy.url("/run"), &json!({"value": {}, "mask": ["function1:main"]})).await;
    assert_eq!((status, reply), (200, json!({"function1:main": {"from": "f1"}})));
    let s = stats(&proxy).await;
    assert_eq!(s.task_executions.keys().collect::<Vec<_>>(), ["function1:main"]);
    proxy.shutdown().await;
}

#[tokio::test]
async fn bad_context_is_a_client_error() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    init_three_functions(&proxy, "").await;
    for bad in [
        json!({"value": {}, "offset": 2, "flight_size": 2}),
        json!({"value": {}, "mask": ["nope"]}),
        json!({"value": {}, "offset": 1, "flight_size": 2}),
    ] {
        assert_eq!(post_json(&proxy.url("/run"), &bad).await.0, 400, "{bad}");
    }
    proxy.shutdown().await;
}

#[tokio::test]
async fn leader_forks_exactly_n_minus_one_followers() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = stub_controller(Duration::ZERO).await;
    let proxy = start(dir.path(), Some(Controller::Url(url))).await;
    init_three_functions(&proxy, "").await;
    let mut expected_forks = 0;
    for n in [1u32, 2, 4] {
        let (status, reply) = post_json(&proxy.url("/run"), &json!({"value": {}, "flight_size": n})).await;
        assert_eq!(status, 200);
        assert!(reply["function3:main"].is_object());
        expected_forks += n as usize - 1;
        eventually("forks", async || hits.load(Ordering::SeqCst) == expected_forks).await;
    }
    assert_eq!(stats(&proxy).await.forks_issued, 4);
    proxy.shutdown().await;
}

#[tokio::test]
async fn unreachable_controller_still_completes() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), Some(Controller::Url("http://127.0.0.1:1/run".into()))).await;
    init_three_functions(&proxy, "").await;
    let (status, reply) = post_json(&proxy.url("/run"), &json!({"value": {}, "flight_size": 3})).await;
    assert_eq!(status, 200);
    assert_eq!(reply["function3:main"]["function1:main"], json!({"from": "f1"}));
    assert_eq!(stats(&proxy).await.processes_spawned, 3);
    proxy.shutdown().await;
}

#[tokio::test]
async fn missing_controller_degrades_to_leader_only() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), None).await;
    init_three_functions(&proxy, "").await;
    let (status, _) = post_json(&proxy.url("/run"), &json!({"value": {}, "flight_size": 2})).await;
    assert_eq!(status, 200);
    assert_eq!(stats(&proxy).await.forks_issued, 0);
    proxy.shutdown().await;
}

#[tokio::test]
async fn slow_controller_does_not_delay_the_first_task() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = stub_controller(Duration::from_secs(10)).await;
    let proxy = start(dir.path(), Some(Controller::Url(url))).await;
    let marker = dir.path().join("first-start");
    init_three_functions(&proxy, &format!("date +%s%N > {}", marker.display())).await;

    let sent = SystemTime::now().duration_since(UNIX_EPOCH).unwrap();
    let (status, _) = post_json(&proxy.url("/run"), &json!({"value": {}, "flight_size": 2})).await;
    assert_eq!(status, 200);
    let started: u128 = std::fs::read_to_string(&marker).unwrap().trim().parse().unwrap();
    let waited = Duration::from_nanos((started - sent.as_nanos()) as u64);
    assert!(waited < Duration::from_millis(100), "first task started after {waited:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    proxy.shutdown().await;
}

#[tokio::test]
async fn loopback_flight_shares_results_between_members() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = start(dir.path(), Some(Controller::Loopback)).await;
    // Slow enough that followers join while the leader is still working.
    init_three_functions(&proxy, "sleep 0.3").await;
    let (status, reply) = post_json(&proxy.url("/run"), &json!({"value": {"k": 1}, "flight_size": 3})).await;
    assert_eq!(status, 200);
    assert_eq!(reply["function3:main"]["function2:main"], json!({"from": "f2"}));

    eventually("followers", async || stats(&proxy).await.activations == 3).await;
    eventually("follower completion", async || stats(&proxy).await.processes_live == 0).await;
    let s = stats(&proxy).await;
    assert!(s.peer_messages_received > 0, "{s:?}");
    for (task, runs) in &s.task_executions {
        assert!(*runs <= 3, "{task} ran {runs} times");
    }
    proxy.shutdown().await;
    assert_no_orphans(dir.path());
}
