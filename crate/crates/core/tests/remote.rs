mod common;

use std::sync::Arc;

use common::{chat_reply, MockServer};
use igft_core::embedding::{EmbeddingProvider, LexicalEmbedder, ProviderError};
use igft_core::eval::{StatementExtractor, StatementSource};
use igft_core::infogain::{ClipRange, MixtureWeights};
use igft_core::quality::{AssessmentContext, AssessorError, HeuristicAssessor, Provenance, QualityAssessor};
use igft_core::remote::{
    ChatClient, EndpointConfig, RemoteAssessor, RemoteEmbeddingProvider, RemoteError, RemoteExtractor,
};
use igft_core::vignette::ClinicalEntity;

fn endpoint(url: &str) -> EndpointConfig {
    EndpointConfig {
        url: url.to_string(),
        model: "test-model".into(),
        token: Some("secret".into()),
        timeout_secs: 5,
        max_retries: 2,
        backoff_ms: 1,
    }
}

fn entities() -> Vec<ClinicalEntity> {
    vec![ClinicalEntity {
        id: "a".into(),
        surface: "chest pain".into(),
        aliases: vec![],
        category: "symptom".into(),
        importance_weight: 1.0,
    }]
}

fn with_ctx<T>(f: impl FnOnce(&AssessmentContext<'_>) -> T) -> T {
    let all = entities();
    let unc: Vec<&ClinicalEntity> = all.iter().collect();
    let ctx =
        AssessmentContext { chief_complaint: "chest pain", conversation: "", uncovered: &unc, all_entities: &all };
    f(&ctx)
}

const GOOD: &str = r#"{"information_gathering": 0.8, "specificity": 0.7, "patient_engagement": 0.9, "clinical_relevance": 0.85, "comprehensiveness": 0.6}"#;

#[test]
fn chat_client_sends_wire_format_and_token() {
    let server = MockServer::start(|_, _| (200, chat_reply("hello")));
    let chat = ChatClient::new(endpoint(&server.url)).unwrap();
    assert_eq!(chat.complete("ping").unwrap(), "hello");
    let req = server.requests.lock().unwrap()[0].clone();
    assert_eq!(req.header("authorization"), Some("Bearer secret"));
    let body = req.json();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "ping");
}

#[test]
fn chat_client_retries_server_errors_then_succeeds() {
    let server = MockServer::start(|n, _| if n < 2 { (503, "busy".into()) } else { (200, chat_reply("ok")) });
    let chat = ChatClient::new(endpoint(&server.url)).unwrap();
    assert_eq!(chat.complete("x").unwrap(), "ok");
    assert_eq!(server.count(), 3);
}

#[test]
fn chat_client_reports_status_without_retrying_client_errors() {
    let server = MockServer::start(|_, _| (401, "{\"error\":\"denied\"}".into()));
    let chat = ChatClient::new(endpoint(&server.url)).unwrap();
    match chat.complete("x") {
        Err(RemoteError::Status { status, .. }) => assert_eq!(status, 401),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.count(), 1);
}

#[test]
fn chat_client_gives_up_after_retry_budget() {
    let server = MockServer::start(|_, _| (500, "boom".into()));
    let chat = ChatClient::new(endpoint(&server.url)).unwrap();
    assert!(matches!(chat.complete("x"), Err(RemoteError::Status { status: 500, .. })));
    assert_eq!(server.count(), 3);
}

#[test]
fn remote_assessor_parses_scores() {
    let server = MockServer::start(|_, _| (200, chat_reply(GOOD)));
    let assessor = RemoteAssessor::new(ChatClient::new(endpoint(&server.url)).unwrap(), None, 2, 4);
    let s = with_ctx(|ctx| assessor.assess("Where is the pain?", ctx)).unwrap();
    assert!((s.aggregate - 0.77).abs() < 1e-9);
    assert_eq!(s.provenance, Provenance::Remote);
    let prompt = server.requests.lock().unwrap()[0].json()["messages"][0]["content"].as_str().unwrap().to_string();
    assert!(prompt.contains("Where is the pain?") && prompt.contains("chest pain (symptom)"));
}

#[test]
fn remote_assessor_clamps_out_of_range_scores() {
    let server = MockServer::start(|_, _| {
        (
            200,
            chat_reply(
                r#"{"information_gathering": 1.3, "specificity": 0.7, "patient_engagement": 0.9, "clinical_relevance": 0.85, "comprehensiveness": 0.6}"#,
            ),
        )
    });
    let assessor = RemoteAssessor::new(ChatClient::new(endpoint(&server.url)).unwrap(), None, 1, 1);
    let s = with_ctx(|ctx| assessor.assess("q?", ctx)).unwrap();
    assert_eq!(s.information_gathering, 1.0);
}

#[test]
fn remote_assessor_unparseable_after_attempts() {
    let server = MockServer::start(|_, _| (200, chat_reply("I would rate it highly.")));
    let assessor = RemoteAssessor::new(ChatClient::new(endpoint(&server.url)).unwrap(), None, 3, 1);
    match with_ctx(|ctx| assessor.assess("q?", ctx)) {
        Err(AssessorError::Unparseable { attempts, raw, .. }) => {
            assert_eq!(attempts, 3);
            assert!(raw.contains("highly"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.count(), 3);
}

#[test]
fn remote_assessor_falls_back_when_endpoint_down() {
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1", l.local_addr().unwrap())
    };
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(LexicalEmbedder::default());
    let heuristic = Arc::new(HeuristicAssessor::new(provider, MixtureWeights::default(), ClipRange::default()));
    let assessor = RemoteAssessor::new(
        ChatClient::new(EndpointConfig { max_retries: 0, ..endpoint(&dead) }).unwrap(),
        Some(heuristic.clone()),
        1,
        1,
    );
    let s = with_ctx(|ctx| assessor.assess("Is the chest pain sharp?", ctx)).unwrap();
    assert_eq!(s.provenance, Provenance::Fallback);
    let h = with_ctx(|ctx| heuristic.assess("Is the chest pain sharp?", ctx)).unwrap();
    assert_eq!(s.dims(), h.dims());
}

#[test]
fn assess_batch_keeps_input_order() {
    let server = MockServer::start(|_, req| {
        let prompt = req.json()["messages"][0]["content"].as_str().unwrap().to_string();
        let v = if prompt.contains("first?") { 0.1 } else { 0.9 };
        (
            200,
            chat_reply(&format!(
                r#"{{"information_gathering": {v}, "specificity": {v}, "patient_engagement": {v}, "clinical_relevance": {v}, "comprehensiveness": {v}}}"#
            )),
        )
    });
    let assessor = RemoteAssessor::new(ChatClient::new(endpoint(&server.url)).unwrap(), None, 1, 2);
    let out = with_ctx(|ctx| assessor.assess_batch(&[("first?", *ctx), ("second?", *ctx), ("third?", *ctx)]));
    let aggs: Vec<f64> = out.into_iter().map(|r| r.unwrap().aggregate).collect();
    assert_eq!(aggs, vec![0.1, 0.9, 0.9]);
}

#[test]
fn remote_relevance_signal() {
    let server = MockServer::start(|_, _| (200, chat_reply(r#"{"relevance": 0.42}"#)));
    let assessor = RemoteAssessor::new(ChatClient::new(endpoint(&server.url)).unwrap(), None, 1, 1);
    assert_eq!(assessor.relevance(&entities()[0], "Any pain?").unwrap(), 0.42);
}

#[test]
fn remote_embeddings_are_normalized_and_counted() {
    let server = MockServer::start(|_, req| {
        let n = req.json()["texts"].as_array().unwrap().len();
        let vectors: Vec<Vec<f64>> = (0..n).map(|i| vec![3.0, 4.0 + i as f64]).collect();
        (200, serde_json::json!({ "vectors": vectors }).to_string())
    });
    let p = RemoteEmbeddingProvider::new(endpoint(&server.url)).unwrap();
    let e = p.embed_batch(&["a", "b"]).unwrap();
    assert_eq!(e.len(), 2);
    assert!((e[0].values()[0] - 0.6).abs() < 1e-12);
    let body = server.requests.lock().unwrap()[0].json();
    assert_eq!(body["texts"][1], "b");
    assert_eq!(body["model"], "test-model");

    let short = MockServer::start(|_, _| (200, r#"{"vectors": [[1.0]]}"#.into()));
    let p = RemoteEmbeddingProvider::new(endpoint(&short.url)).unwrap();
    assert!(matches!(p.embed_batch(&["a", "b"]), Err(ProviderError::Count { expected: 2, got: 1 })));
}

#[test]
fn remote_extractor_validates_reply() {
    let server = MockServer::start(|_, _| (200, chat_reply(r#"["Chest pain started today", "Pain is sharp"]"#)));
    let x = RemoteExtractor { chat: ChatClient::new(endpoint(&server.url)).unwrap() };
    let s = x.extract("Chest pain started today and is sharp.", StatementSource::Generated).unwrap();
    assert_eq!(s.len(), 2);

    let bad = MockServer::start(|_, _| (200, chat_reply("two statements")));
    let x = RemoteExtractor { chat: ChatClient::new(endpoint(&bad.url)).unwrap() };
    match x.extract("text", StatementSource::Generated) {
        Err(igft_core::eval::EvalError::Extraction { raw, .. }) => assert_eq!(raw, "two statements"),
        other => panic!("unexpected {other:?}"),
    }
}
