//! Websocket sessions and static files against an in-process server.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;

use interact_cli::lift::lift_hand;
use interact_cli::serve::{prediction_message, server_schema, spawn, Service, ServerMessage, CLOSE_PROTOCOL_MISMATCH};
use interact_core::data::{robot_rest_frame, Action, AgentKind, Embodiment, JointSet, Normalizer, WindowSpec, ROBOT_DIMS};
use interact_core::dynamics::{DynamicsConfig, DynamicsModel};
use interact_core::embedding::{EmbeddingConfig, EmbeddingModel};
use interact_core::generation::{rollout_robot, RolloutOptions, RolloutState};
use interact_core::robot_map::{HumanContext, RobotMapConfig, RobotModel};
use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

const W: usize = 8;
const JOINTS: JointSet = JointSet::ArmTorso;

fn hand_path(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|t| {
            let s = t as f64 * 0.2;
            [0.6 * s.sin(), 0.8 * (1.3 * s).cos()]
        })
        .collect()
}

fn model() -> RobotModel {
    let emb_cfg = EmbeddingConfig {
        latent_dim: 4,
        hidden: vec![16],
        window: WindowSpec { w: W, stride: 1 },
        seed: 3,
        ..EmbeddingConfig::default()
    };
    let frames: Vec<Vec<f64>> = hand_path(60).into_iter().map(|xy| lift_hand(Action::HandShake, JOINTS, xy)).collect();
    let human_norm = Normalizer::fit_frames(AgentKind::Human, &frames).unwrap();
    let human = EmbeddingModel::new(emb_cfg.clone(), AgentKind::Human, human_norm).unwrap();
    let robot_emb = EmbeddingModel::new(emb_cfg, AgentKind::Robot, Normalizer::identity(AgentKind::Robot, ROBOT_DIMS)).unwrap();
    let dynamics = DynamicsModel::new(
        DynamicsConfig {
            state_dim: 12,
            d_dim: 4,
            seed: 5,
            ..DynamicsConfig::default()
        },
        human,
    )
    .unwrap();
    RobotModel::new(
        RobotMapConfig {
            state_dim: 10,
            seed: 7,
            ..RobotMapConfig::default()
        },
        robot_emb,
        HumanContext::Dynamics(Box::new(dynamics)),
    )
    .unwrap()
}

fn opts() -> RolloutOptions {
    RolloutOptions {
        refresh_every: 4,
        sample_seed: None,
    }
}

fn start(static_dir: &std::path::Path) -> (Arc<Service>, SocketAddr) {
    let service = Arc::new(Service::new(model(), opts(), static_dir.to_path_buf()).unwrap());
    let (addr, _) = spawn(Arc::clone(&service), "127.0.0.1:0").unwrap();
    (service, addr)
}

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn connect(addr: SocketAddr) -> Client {
    tungstenite::connect(format!("ws://{addr}/live")).unwrap().0
}

fn send(ws: &mut Client, v: Value) {
    ws.send(Message::text(v.to_string())).unwrap();
}

fn recv(ws: &mut Client) -> Value {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => {
                let v: Value = serde_json::from_str(&t).unwrap();
                assert!(server_schema().is_valid(&v), "reply violates the protocol schema: {v}");
                return v;
            }
            Message::Close(f) => panic!("unexpected close {f:?}"),
            _ => {}
        }
    }
}

fn hello(ws: &mut Client) -> Value {
    send(ws, json!({"type": "hello", "protocol": 1, "action": "hand_shake"}));
    recv(ws)
}

fn frame(ws: &mut Client, t_ms: u64, xy: [f64; 2]) -> Value {
    send(ws, json!({"type": "frame", "t_ms": t_ms, "hand_xy": xy}));
    recv(ws)
}

fn offline(service: &Service, inputs: &[[f64; 2]]) -> Vec<Value> {
    let mut state = RolloutState::new(&service.model, &robot_rest_frame(&Embodiment::default()), opts()).unwrap();
    inputs
        .iter()
        .enumerate()
        .map(|(i, xy)| {
            let out = state.online_step(&service.model, &lift_hand(Action::HandShake, JOINTS, *xy)).unwrap();
            serde_json::to_value(prediction_message(service, Action::HandShake, 25 * i as u64, &out, false)).unwrap()
        })
        .collect()
}

#[test]
fn handshake_acknowledges_protocol_and_window() {
    let dir = tempfile::tempdir().unwrap();
    let (_, addr) = start(dir.path());
    let mut ws = connect(addr);
    let ack = hello(&mut ws);
    assert_eq!(ack, json!({"type": "hello_ack", "protocol": 1, "action": "hand_shake", "w": W, "robot_dims": 7}));
}

#[test]
fn replayed_stream_matches_offline_stepping_and_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let (service, addr) = start(dir.path());
    let path = hand_path(24);
    let mut ws = connect(addr);
    hello(&mut ws);
    let replies: Vec<Value> = path.iter().enumerate().map(|(i, xy)| frame(&mut ws, 25 * i as u64, *xy)).collect();
    let expected = offline(&service, &path);
    assert_eq!(replies, expected);
    for r in &replies {
        assert_eq!(r["robot_window"].as_array().unwrap().len(), W);
        assert_eq!(r["human_window_hand_xy"].as_array().unwrap().len(), W);
        assert_eq!(r["stale"], false);
    }

    let commands: Vec<Vec<f64>> = replies
        .iter()
        .map(|r| serde_json::from_value(r["robot_frame"].clone()).unwrap())
        .collect();
    let human: Vec<Vec<f64>> = path.iter().map(|xy| lift_hand(Action::HandShake, JOINTS, *xy)).collect();
    for n in [4, 8, 12, 20] {
        let mut robot = vec![robot_rest_frame(&Embodiment::default())];
        robot.extend(commands[..n - 1].iter().cloned());
        let batch = rollout_robot(&service.model, &human[..n], &robot, 1, opts()).unwrap();
        assert_eq!(batch[0], commands[n - 1], "refresh point {n}");
    }
}

#[test]
fn gaps_are_held_and_flagged_stale() {
    let dir = tempfile::tempdir().unwrap();
    let (service, addr) = start(dir.path());
    let (a, b) = ([0.1, 0.2], [0.5, -0.4]);
    let mut ws = connect(addr);
    hello(&mut ws);
    frame(&mut ws, 0, a);
    let late = frame(&mut ws, 100, b);
    assert_eq!(late["stale"], true);
    let mut expected = offline(&service, &[a, a, a, a, b]).pop().unwrap();
    expected["t_ms"] = json!(100);
    expected["stale"] = json!(true);
    assert_eq!(late, expected);
}

#[test]
fn fast_frames_are_resampled_to_ticks() {
    let dir = tempfile::tempdir().unwrap();
    let (service, addr) = start(dir.path());
    let (a, b, c) = ([0.0, 0.0], [0.3, 0.3], [0.4, -0.2]);
    let mut ws = connect(addr);
    hello(&mut ws);
    let first = frame(&mut ws, 0, a);
    let between = frame(&mut ws, 10, b);
    assert_eq!(between["robot_frame"], first["robot_frame"], "no tick completed");
    assert_eq!(between["stale"], false);
    let on_tick = frame(&mut ws, 40, c);
    // Tick 25 lies 15/30 of the way from the 10 ms frame to the 40 ms frame.
    let mid = [b[0] + 0.5 * (c[0] - b[0]), b[1] + 0.5 * (c[1] - b[1])];
    let expected = offline(&service, &[a, mid]);
    assert_eq!(on_tick["robot_frame"], expected[1]["robot_frame"]);
}

#[test]
fn malformed_messages_get_errors_and_the_session_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (_, addr) = start(dir.path());
    let mut ws = connect(addr);
    ws.send(Message::text("{not json")).unwrap();
    assert_eq!(recv(&mut ws)["type"], "error");
    let early = frame(&mut ws, 0, [0.0, 0.0]);
    assert!(early["msg"].as_str().unwrap().contains("before hello"));
    send(&mut ws, json!({"type": "frame", "t_ms": 5}));
    assert_eq!(recv(&mut ws)["type"], "error");
    send(&mut ws, json!({"type": "hello", "protocol": 1, "action": "juggling"}));
    assert_eq!(recv(&mut ws)["type"], "error");
    assert_eq!(hello(&mut ws)["type"], "hello_ack");
    assert_eq!(frame(&mut ws, 50, [0.1, 0.1])["type"], "prediction");
    assert_eq!(frame(&mut ws, 25, [0.1, 0.1])["type"], "error");
    assert_eq!(frame(&mut ws, 75, [0.1, 0.1])["type"], "prediction");
}

#[test]
fn protocol_mismatch_closes_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let (_, addr) = start(dir.path());
    let mut ws = connect(addr);
    send(&mut ws, json!({"type": "hello", "protocol": 2, "action": "rocket"}));
    loop {
        match ws.read() {
            Ok(Message::Close(Some(f))) => {
                assert_eq!(u16::from(f.code), CLOSE_PROTOCOL_MISMATCH);
                break;
            }
            Ok(Message::Close(None)) => panic!("close without code"),
            Ok(_) => continue,
            Err(e) => panic!("connection ended without a close frame: {e}"),
        }
    }
}

#[test]
fn concurrent_sessions_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let (service, addr) = start(dir.path());
    let p = hand_path(12);
    let q: Vec<[f64; 2]> = p.iter().map(|xy| [-xy[1], xy[0]]).collect();
    let (mut a, mut b) = (connect(addr), connect(addr));
    hello(&mut a);
    hello(&mut b);
    let mut ra = Vec::new();
    let mut rb = Vec::new();
    for i in 0..p.len() {
        ra.push(frame(&mut a, 25 * i as u64, p[i]));
        rb.push(frame(&mut b, 25 * i as u64, q[i]));
    }
    assert_eq!(ra, offline(&service, &p));
    assert_eq!(rb, offline(&service, &q));
}

#[test]
fn bye_closes_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let (_, addr) = start(dir.path());
    let mut ws = connect(addr);
    hello(&mut ws);
    send(&mut ws, json!({"type": "bye"}));
    loop {
        match ws.read() {
            Ok(Message::Close(Some(f))) => {
                assert_eq!(u16::from(f.code), 1000);
                break;
            }
            Ok(_) => continue,
            Err(e) => panic!("{e}"),
        }
    }
}

fn http_get(addr: SocketAddr, target: &str) -> (String, Vec<u8>) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {target} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut buf = Vec::new();
    s.read_to_end(&mut buf).unwrap();
    let split = buf.windows(4).position(|w| w == b"\r\n\r\n").unwrap() + 4;
    (String::from_utf8_lossy(&buf[..split]).into_owned(), buf[split..].to_vec())
}

#[test]
fn static_files_are_served_from_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>live</title>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let (_, addr) = start(dir.path());

    let (head, body) = http_get(addr, "/");
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    assert!(head.contains("text/html"));
    assert_eq!(body, b"<!doctype html><title>live</title>");

    let (head, body) = http_get(addr, "/app.js?v=1");
    assert!(head.contains("text/javascript"));
    assert_eq!(body, b"console.log(1)");

    assert!(http_get(addr, "/missing.css").0.starts_with("HTTP/1.1 404"));
    assert!(http_get(addr, "/../Cargo.toml").0.starts_with("HTTP/1.1 404"));
}

#[test]
fn prediction_message_pads_windows_to_model_length() {
    let dir = tempfile::tempdir().unwrap();
    let service = Service::new(model(), opts(), dir.path().to_path_buf()).unwrap();
    let mut state = RolloutState::new(&service.model, &robot_rest_frame(&Embodiment::default()), opts()).unwrap();
    let mut last = None;
    for xy in hand_path(3) {
        last = Some(state.online_step(&service.model, &lift_hand(Action::HandShake, JOINTS, xy)).unwrap());
    }
    let out = last.unwrap();
    assert_eq!(out.robot_window.len(), W - 2);
    match prediction_message(&service, Action::HandShake, 50, &out, false) {
        ServerMessage::Prediction {
            robot_window,
            human_window_hand_xy,
            ..
        } => {
            assert_eq!(robot_window.len(), W);
            assert_eq!(robot_window[W - 1], out.robot_window[W - 3]);
            assert_eq!(human_window_hand_xy.len(), W);
        }
        other => panic!("{other:?}"),
    }
}
