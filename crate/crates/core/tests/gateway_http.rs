mod common;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use common::StubServer;
use serde_json::json;
use t2ijudge::gateway::image::render_procedural;
use t2ijudge::gateway::{ChatTurn, DecodingParams, EndpointKind, Gateway, GatewayError, ModelEndpoint, MISSING_LOGPROB};
use t2ijudge::lingmetrics::perplexity;
use t2ijudge::scoring::{vqascore, JudgeOptions, ScoreMethod};

fn endpoint(kind: EndpointKind, server: &StubServer) -> ModelEndpoint {
    ModelEndpoint { backoff_ms: 1, ..ModelEndpoint::live(kind, "stub-model", server.base_url.clone()) }
}

fn chat_body(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn status_500_exhausts_exactly_max_retries_plus_one() {
    let server = StubServer::start(|_, _| (500, "{\"error\":\"boom\"}".into()));
    let gw = Gateway::connect(ModelEndpoint { max_retries: 2, ..endpoint(EndpointKind::Mllm, &server) }).unwrap();
    let err = gw.chat(&[ChatTurn::user("hello")], &DecodingParams::default()).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(server.hits(), 3);
}

#[test]
fn transient_failure_then_success() {
    let server = StubServer::start(|_, n| if n == 0 { (503, "{}".into()) } else { (200, chat_body("Prompt: a red cat")) });
    let gw = Gateway::connect(endpoint(EndpointKind::Mllm, &server)).unwrap();
    assert_eq!(gw.chat(&[ChatTurn::user("hi")], &DecodingParams::default()).unwrap(), "Prompt: a red cat");
    assert_eq!(server.hits(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(|_, _| (401, "{\"error\":\"bad token\"}".into()));
    let gw = Gateway::connect(ModelEndpoint { max_retries: 5, ..endpoint(EndpointKind::Mllm, &server) }).unwrap();
    let err = gw.chat(&[ChatTurn::user("hi")], &DecodingParams::default()).unwrap_err();
    assert!(matches!(err, GatewayError::Status { status: 401, .. }), "{err:?}");
    assert_eq!(server.hits(), 1);
}

#[test]
fn request_carries_messages_params_and_token() {
    let server = StubServer::start(|_, _| (200, chat_body("ok")));
    let ep = ModelEndpoint { auth_token: Some("secret".into()), ..endpoint(EndpointKind::Mllm, &server) };
    let gw = Gateway::connect(ep).unwrap();
    let params = DecodingParams { max_tokens: 7, ..DecodingParams::default() }.with_seed(11);
    gw.chat(&[ChatTurn::system("sys"), ChatTurn::user("hello")], &params).unwrap();
    let seen = &server.seen()[0];
    assert_eq!(seen.path, "/v1/chat/completions");
    assert!(seen.headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer secret"));
    assert_eq!(seen.body["model"], "stub-model");
    assert_eq!(seen.body["messages"][0]["role"], "system");
    assert_eq!(seen.body["messages"][1]["content"], "hello");
    assert_eq!(seen.body["temperature"], 0.3);
    assert_eq!(seen.body["max_tokens"], 7);
    assert_eq!(seen.body["seed"], 11);
    assert!(seen.body.get("top_k").is_none());
}

#[test]
fn logprob_payload_round_trip() {
    let payload = json!({"choices": [{
        "message": {"content": "Yes"},
        "logprobs": {"content": [{
            "token": "Yes", "logprob": -0.105360515657826,
            "top_logprobs": [
                {"token": "Yes", "logprob": -0.105360515657826},
                {"token": "No", "logprob": -2.31},
                {"token": "Maybe", "logprob": -7.5}
            ]
        }]}
    }]});
    let server = StubServer::start(move |_, _| (200, payload.to_string()));
    let gw = Gateway::connect(endpoint(EndpointKind::Mllm, &server)).unwrap();
    let cands: Vec<String> = ["Yes", "No", "Maybe", "Absent"].iter().map(|s| s.to_string()).collect();
    let m = gw.first_token_logprobs(&[ChatTurn::user("q")], &cands).unwrap();
    assert!((m["Yes"] - -0.105360515657826).abs() < 1e-12);
    assert!((m["No"] - -2.31).abs() < 1e-12);
    assert!((m["Maybe"] - -7.5).abs() < 1e-12);
    assert_eq!(m["Absent"], MISSING_LOGPROB);
    assert!(m.values().all(|v| *v <= 0.0));
    let seen = &server.seen()[0];
    assert_eq!(seen.body["logprobs"], true);
    assert_eq!(seen.body["temperature"], 0.0);
}

#[test]
fn vqascore_over_http_and_degenerate_fallback() {
    let png = render_procedural(b"stub image");
    let image = t2ijudge::gateway::ImageArtifact::from_png(png, "a red cat").unwrap();
    let payload = json!({"choices": [{"logprobs": {"content": [{"token": "Yes", "logprob": 0.9f64.ln(),
        "top_logprobs": [{"token": "Yes", "logprob": 0.9f64.ln()}, {"token": "No", "logprob": 0.1f64.ln()}]}]}}]});
    let server = StubServer::start(move |_, _| (200, payload.to_string()));
    let gw = Gateway::connect(endpoint(EndpointKind::Mllm, &server)).unwrap();
    let s = vqascore(&gw, &image, "a red cat", &JudgeOptions::default()).unwrap();
    assert!((s.value() - 0.9).abs() < 1e-12);
    let url = server.seen()[0].body["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap().to_string();
    assert!(url.starts_with("data:image/png;base64,"));

    // No logprobs on the endpoint: the sampled answer decides.
    let server =
        StubServer::start(
            |req, _| {
                if req.body.get("logprobs").is_some() {
                    (400, "{\"error\":\"logprobs not supported\"}".into())
                } else {
                    (200, chat_body("No."))
                }
            },
        );
    let gw = Gateway::connect(endpoint(EndpointKind::Mllm, &server)).unwrap();
    let s = vqascore(&gw, &image, "a red cat", &JudgeOptions::default()).unwrap();
    assert_eq!(s.value(), 0.0);
    assert_eq!(s.method(), ScoreMethod::Degenerate);
}

#[test]
fn echo_payload_sums_continuation_tokens() {
    // prefix "There's an image of a" is 21 bytes; the continuation tokens
    // start at offset 21 and sum to -7.25.
    let payload = json!({"choices": [{"text": "", "logprobs": {
        "tokens": ["There", "'s", " an", " image", " of", " a", " red", " cat", " on", " mat", "!"],
        "token_logprobs": [null, -1.0, -0.5, -2.0, -0.1, -0.2, -3.0, -1.5, -0.75, -1.25, -0.75],
        "text_offset": [0, 5, 7, 10, 16, 19, 21, 25, 29, 32, 36]
    }}]});
    let server = StubServer::start(move |_, _| (200, payload.to_string()));
    let gw = Gateway::connect(endpoint(EndpointKind::Lm, &server)).unwrap();
    let s = gw.token_logprobs_sum("There's an image of a", " red cat on mat!").unwrap();
    assert!((s.logprob_sum - -7.25).abs() < 1e-12);
    assert_eq!(s.token_count, 5);
    let ppl = perplexity(&gw, "red cat on mat!").unwrap();
    assert!((ppl - (7.25f64 / 5.0).exp()).abs() < 1e-12);
    let seen = &server.seen()[0];
    assert_eq!(seen.path, "/v1/completions");
    assert_eq!(seen.body["echo"], true);
}

#[test]
fn image_generation_round_trip_and_refusal() {
    let png = render_procedural(b"a lighthouse at dusk");
    let b64 = BASE64.encode(&png);
    let server = StubServer::start(move |req, _| {
        if req.body["prompt"] == "forbidden" {
            (400, "{\"error\":{\"code\":\"content_policy_violation\"}}".into())
        } else {
            (200, json!({"data": [{"b64_json": b64}]}).to_string())
        }
    });
    let gw = Gateway::connect(endpoint(EndpointKind::T2i, &server)).unwrap();
    let img = gw.generate_image("a lighthouse", 3).unwrap();
    assert_eq!(img.bytes(), &png[..]);
    assert_eq!(img.content_hash(), t2ijudge::gateway::image::sha256_hex(&png));
    assert_eq!(server.seen()[0].body["seed"], 3);
    assert!(matches!(gw.generate_image("forbidden", 3), Err(GatewayError::SafetyRefusal(_))));
    assert_eq!(server.hits(), 2);
}

#[test]
fn malformed_reply_is_an_error() {
    let server = StubServer::start(|_, _| (200, "{\"unexpected\": true}".into()));
    let gw = Gateway::connect(endpoint(EndpointKind::Mllm, &server)).unwrap();
    assert!(matches!(gw.chat(&[ChatTurn::user("x")], &DecodingParams::default()), Err(GatewayError::Malformed(_))));
    let server = StubServer::start(|_, _| (200, "not json".into()));
    let gw = Gateway::connect(endpoint(EndpointKind::Mllm, &server)).unwrap();
    assert!(matches!(gw.chat(&[ChatTurn::user("x")], &DecodingParams::default()), Err(GatewayError::Malformed(_))));
}

#[test]
fn unreachable_host_is_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let ep = ModelEndpoint { max_retries: 1, backoff_ms: 1, ..ModelEndpoint::live(EndpointKind::Mllm, "m", format!("http://127.0.0.1:{port}/v1")) };
    let gw = Gateway::connect(ep).unwrap();
    let err = gw.chat(&[ChatTurn::user("x")], &DecodingParams::default()).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 2, .. }), "{err:?}");
}
