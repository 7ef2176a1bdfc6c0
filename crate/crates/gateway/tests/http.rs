mod support;

use std::sync::Arc;

use byoc_core::llm::{Engine, ScriptedBackend};
use byoc_gateway::http::BackgroundServer;
use serde_json::json;
use support::{annotate_over_http, common, Client, Fixture};

fn start(service: Arc<byoc_gateway::service::Service>) -> (BackgroundServer, Client) {
    let server = BackgroundServer::start(service, "127.0.0.1:0".parse().unwrap()).unwrap();
    let client = Client::new(server.url(""));
    (server, client)
}

#[test]
fn full_session_over_http() {
    let f = Fixture::new();
    let (_server, c) = start(f.service("store"));
    let sid = c.post_ok("/classifiers/sessions", f.create_body())["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    annotate_over_http(&c, &sid, 0, 4);
    let (status, snap) = c.get(&format!("/sessions/{sid}"));
    assert_eq!(status, 200);
    assert_eq!(snap["complete"], true);

    let done = c.post_ok(
        &format!("/sessions/{sid}/finalize"),
        json!({ "name": "email triage", "edits": { "Unimportant": "Anything I can ignore." } }),
    );
    let id = done["artifact_id"].as_str().unwrap().to_string();
    assert_eq!(done["artifact"]["provenance"]["user_edited"], json!(["Unimportant"]));

    let (status, list) = c.get("/classifiers");
    assert_eq!(status, 200);
    assert_eq!(list.as_array().unwrap().len(), 1);
    let (status, artifact) = c.get(&format!("/classifiers/{id}"));
    assert_eq!(status, 200);
    assert_eq!(artifact, done["artifact"]);

    let out = c.post_ok(&format!("/classifiers/{id}/classify"), json!({ "text": "Lunch menu for Friday." }));
    assert_eq!(out["class"], "Important");
    assert_eq!(out["calls"], 1);
    assert_eq!(
        out["tokens"]["total"].as_u64().unwrap(),
        out["tokens"]["prompt"].as_u64().unwrap() + out["tokens"]["output"].as_u64().unwrap()
    );

    let created = c.post_ok(
        "/evaluations",
        json!({ "method": "byoc", "artifact_id": id, "dataset": f.split }),
    );
    let rid = created["report_id"].as_str().unwrap();
    let (status, report) = c.get(&format!("/evaluations/{rid}"));
    assert_eq!(status, 200);
    assert_eq!(report["n"], 6);
    assert_eq!(report["method"], "byoc");
}

#[test]
fn error_statuses() {
    let f = Fixture::new();
    let (_server, c) = start(f.service("store"));
    let sid = c.post_ok("/classifiers/sessions", f.create_body())["session_id"]
        .as_str()
        .unwrap()
        .to_string();

    let (status, body) = c.post(&format!("/sessions/{sid}/answer"), json!({ "answer": "early" }));
    assert_eq!(status, 409, "{body}");
    assert_eq!(body["code"], "state");

    let (status, body) = c.post(&format!("/sessions/{sid}/label"), json!({ "class": "Important" }));
    assert_eq!(status, 409, "{body}");

    let (status, body) = c.post("/classifiers/nope/classify", json!({ "text": "x" }));
    assert_eq!(status, 404);
    assert_eq!(body["code"], "not_found");

    let (status, _) = c.get("/sessions/missing");
    assert_eq!(status, 404);

    let (status, body) = c.post("/classifiers/sessions", json!({ "spec0": { "purpose": "p", "classes": [] } }));
    assert_eq!(status, 400, "{body}");
    assert_eq!(body["code"], "validation");

    let (status, _) = c.post("/classifiers/sessions", json!({ "wrong": true }));
    assert_eq!(status, 400);

    let (status, _) = c.get("/no/such/route");
    assert_eq!(status, 404);

    let (status, body) = c.post(&format!("/sessions/{sid}/finalize"), json!({ "name": "early" }));
    assert_eq!(status, 409);
    assert_eq!(body["detail"]["unlabeled"].as_array().unwrap().len(), 4);
}

#[test]
fn a_restart_mid_session_yields_the_same_artifact() {
    let f = Fixture::new();
    let straight = {
        let (_server, c) = start(f.service("straight"));
        let sid = c.post_ok("/classifiers/sessions", f.create_body())["session_id"].as_str().unwrap().to_string();
        annotate_over_http(&c, &sid, 0, 4);
        c.post_ok(&format!("/sessions/{sid}/finalize"), json!({ "name": "n" }))["artifact"].clone()
    };

    // One backend outlives both gateway processes.
    let engine = Engine::new(Arc::new(ScriptedBackend::new(support::full_script())));
    let sid = {
        let (server, c) = start(f.service_with("restarted", engine.clone()));
        let sid = c.post_ok("/classifiers/sessions", f.create_body())["session_id"].as_str().unwrap().to_string();
        annotate_over_http(&c, &sid, 0, 2);
        c.post_ok(&format!("/sessions/{sid}/question"), json!({}));
        server.stop().unwrap();
        sid
    };
    let (_server, c) = start(f.service_with("restarted", engine));
    let (status, snap) = c.get(&format!("/sessions/{sid}"));
    assert_eq!(status, 200);
    assert_eq!(snap["cursor"], 2);
    // The pending question survives the restart and is not asked again.
    let q = c.post_ok(&format!("/sessions/{sid}/question"), json!({}));
    assert_eq!(q["question"], "Question 2.1?");
    c.post_ok(&format!("/sessions/{sid}/answer"), json!({ "answer": common::answer(2, 1) }));
    for j in 2..=support::M {
        c.post_ok(&format!("/sessions/{sid}/question"), json!({}));
        c.post_ok(&format!("/sessions/{sid}/answer"), json!({ "answer": common::answer(2, j) }));
    }
    c.post_ok(
        &format!("/sessions/{sid}/label"),
        json!({ "class": "Important", "explanation": common::user_explanation(2) }),
    );
    annotate_over_http(&c, &sid, 3, 4);
    let resumed = c.post_ok(&format!("/sessions/{sid}/finalize"), json!({ "name": "n" }))["artifact"].clone();
    assert_eq!(
        serde_json::to_string_pretty(&resumed).unwrap(),
        serde_json::to_string_pretty(&straight).unwrap()
    );
}
