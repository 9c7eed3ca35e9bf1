//! Live prediction service: websocket sessions plus static file serving on
//! one port.
//!
//! Each connection runs on its own thread. A request carrying
//! `Upgrade: websocket` becomes a session; any other GET is answered from the
//! static directory. Sessions share the robot model read-only.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;
use std::time::Duration;

use interact_core::data::{robot_rest_frame, Action, Embodiment, JointSet, ROBOT_DIMS};
use interact_core::generation::{OnlineOutput, RolloutOptions, RolloutState};
use interact_core::robot_map::{HumanContext, RobotModel};
use jsonschema::JSONSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use crate::lift::{lift_hand, project_hand};
use crate::pipeline::{load_robot_model, Context, ROBOT_MAP};
use crate::CliError;

pub const PROTOCOL_VERSION: u64 = 1;
/// Tick spacing of the model's 40 Hz input stream.
pub const TICK_MS: u64 = 25;
/// Gaps longer than this are held at the last position and flagged stale.
pub const MAX_GAP_MS: u64 = 50;
/// Close code sent when the client speaks another protocol version.
pub const CLOSE_PROTOCOL_MISMATCH: u16 = 4001;

pub const PROTOCOL_SCHEMA: &str = include_str!("../fixtures/protocol.schema.json");

fn compile_part(part: &str) -> JSONSchema {
    let mut root: Value = serde_json::from_str(PROTOCOL_SCHEMA).expect("protocol schema is valid JSON");
    root["oneOf"] = serde_json::json!([{ "$ref": format!("#/definitions/{part}") }]);
    JSONSchema::compile(&root).expect("protocol schema compiles")
}

/// Validator for messages sent by clients.
pub fn client_schema() -> &'static JSONSchema {
    static S: OnceLock<JSONSchema> = OnceLock::new();
    S.get_or_init(|| compile_part("client_message"))
}

/// Validator for messages sent by the server.
pub fn server_schema() -> &'static JSONSchema {
    static S: OnceLock<JSONSchema> = OnceLock::new();
    S.get_or_init(|| compile_part("server_message"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello { protocol: u64, action: Action },
    Frame { t_ms: u64, hand_xy: [f64; 2] },
    Bye,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    HelloAck {
        protocol: u64,
        action: Action,
        w: usize,
        robot_dims: usize,
    },
    Prediction {
        t_ms: u64,
        robot_frame: Vec<f64>,
        robot_window: Vec<Vec<f64>>,
        human_window_hand_xy: Vec<[f64; 2]>,
        stale: bool,
    },
    Error {
        msg: String,
    },
}

/// Parses and validates one client text message.
pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    if let Err(errors) = client_schema().validate(&value) {
        let msgs: Vec<String> = errors.map(|e| format!("{}: {e}", e.instance_path)).collect();
        return Err(format!("message does not match the protocol: {}", msgs.join("; ")));
    }
    serde_json::from_value(value).map_err(|e| format!("malformed message: {e}"))
}

/// Shared, read-only state of a running service.
pub struct Service {
    pub model: RobotModel,
    pub joints: JointSet,
    pub rest_robot: Vec<f64>,
    pub opts: RolloutOptions,
    pub static_dir: PathBuf,
}

impl Service {
    pub fn new(model: RobotModel, opts: RolloutOptions, static_dir: PathBuf) -> Result<Self, CliError> {
        let dims = match &model.context {
            HumanContext::Dynamics(d) => d.frame_dims(),
            _ => return Err(CliError::Other("the service needs a robot model driven by task dynamics".into())),
        };
        Ok(Self {
            joints: JointSet::from_dims(dims)?,
            rest_robot: robot_rest_frame(&Embodiment::default()),
            model,
            opts,
            static_dir,
        })
    }

    pub fn window_len(&self) -> usize {
        self.model.embedding.window_len()
    }
}

struct Active {
    action: Action,
    state: RolloutState,
    /// Time and position of the last received frame.
    last: Option<(u64, [f64; 2])>,
    /// Next 40 Hz tick to process.
    next_tick: u64,
    latest: Option<OnlineOutput>,
}

/// Protocol state of one connection, independent of the transport.
pub struct Session<'a> {
    service: &'a Service,
    active: Option<Active>,
}

/// What the transport should do after handling a message.
#[derive(Debug, PartialEq)]
pub enum Reply {
    Send(ServerMessage),
    Close(u16, String),
}

impl<'a> Session<'a> {
    pub fn new(service: &'a Service) -> Self {
        Self { service, active: None }
    }

    fn error(msg: impl Into<String>) -> Reply {
        Reply::Send(ServerMessage::Error { msg: msg.into() })
    }

    pub fn handle_text(&mut self, text: &str) -> Reply {
        match parse_client(text) {
            Ok(m) => self.handle(m),
            Err(e) => Self::error(e),
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Reply {
        match msg {
            ClientMessage::Hello { protocol, action } => {
                if protocol != PROTOCOL_VERSION {
                    return Reply::Close(
                        CLOSE_PROTOCOL_MISMATCH,
                        format!("unsupported protocol {protocol}, server speaks {PROTOCOL_VERSION}"),
                    );
                }
                let state = match RolloutState::new(&self.service.model, &self.service.rest_robot, self.service.opts) {
                    Ok(s) => s,
                    Err(e) => return Self::error(e.to_string()),
                };
                self.active = Some(Active {
                    action,
                    state,
                    last: None,
                    next_tick: 0,
                    latest: None,
                });
                Reply::Send(ServerMessage::HelloAck {
                    protocol: PROTOCOL_VERSION,
                    action,
                    w: self.service.window_len(),
                    robot_dims: ROBOT_DIMS,
                })
            }
            ClientMessage::Frame { t_ms, hand_xy } => self.frame(t_ms, hand_xy),
            ClientMessage::Bye => Reply::Close(1000, "bye".into()),
        }
    }

    /// Advances the session over every 40 Hz tick up to `t_ms`. Ticks within
    /// a short gap interpolate linearly between the last two frames; ticks
    /// inside a longer gap hold the previous position and mark the reply
    /// stale. Frames that complete no tick repeat the latest prediction.
    fn frame(&mut self, t_ms: u64, hand_xy: [f64; 2]) -> Reply {
        let service = self.service;
        let Some(a) = self.active.as_mut() else {
            return Self::error("frame before hello");
        };
        if hand_xy.iter().any(|v| !v.is_finite()) {
            return Self::error("hand_xy must be finite");
        }
        let mut inputs: Vec<[f64; 2]> = Vec::new();
        let mut stale = false;
        match a.last {
            None => {
                inputs.push(hand_xy);
                a.next_tick = t_ms + TICK_MS;
            }
            Some((t0, xy0)) => {
                if t_ms < t0 {
                    return Self::error(format!("t_ms {t_ms} is earlier than the previous frame at {t0}"));
                }
                let gap = t_ms - t0;
                while a.next_tick <= t_ms {
                    let tick = a.next_tick;
                    let xy = if tick == t_ms {
                        hand_xy
                    } else if gap > MAX_GAP_MS {
                        stale = true;
                        xy0
                    } else {
                        let s = (tick - t0) as f64 / gap as f64;
                        [xy0[0] + s * (hand_xy[0] - xy0[0]), xy0[1] + s * (hand_xy[1] - xy0[1])]
                    };
                    inputs.push(xy);
                    a.next_tick += TICK_MS;
                }
            }
        }
        let mut next = a.state.clone();
        let mut latest = None;
        for xy in &inputs {
            let human = lift_hand(a.action, service.joints, *xy);
            match next.online_step(&service.model, &human) {
                Ok(out) => latest = Some(out),
                Err(e) => return Self::error(e.to_string()),
            }
        }
        a.state = next;
        a.last = Some((t_ms, hand_xy));
        if latest.is_some() {
            a.latest = latest;
        }
        let out = a.latest.as_ref().expect("first frame always completes a tick");
        Reply::Send(prediction_message(service, a.action, t_ms, out, stale))
    }
}

fn pad<T: Clone>(mut v: Vec<T>, len: usize) -> Vec<T> {
    if let Some(last) = v.last().cloned() {
        v.resize(len, last);
    }
    v
}

/// Reply for one online step. Windows are padded to the model window length
/// by holding their final frame.
pub fn prediction_message(service: &Service, action: Action, t_ms: u64, out: &OnlineOutput, stale: bool) -> ServerMessage {
    let w = service.window_len();
    let hand: Vec<[f64; 2]> = out
        .human_window
        .iter()
        .map(|f| project_hand(action, service.joints, f))
        .collect();
    ServerMessage::Prediction {
        t_ms,
        robot_frame: out.command.clone(),
        robot_window: pad(out.robot_window.clone(), w),
        human_window_hand_xy: pad(hand, w),
        stale,
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> tungstenite::Result<()> {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    ws.send(Message::text(text))
}

fn run_session(service: &Service, stream: TcpStream) -> Result<(), String> {
    stream.set_nodelay(true).map_err(|e| e.to_string())?;
    let mut ws = tungstenite::accept(stream).map_err(|e| format!("handshake: {e}"))?;
    let mut session = Session::new(service);
    loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.to_string()),
        };
        let reply = match msg {
            Message::Text(text) => session.handle_text(&text),
            Message::Binary(_) => Session::error("binary messages are not part of the protocol"),
            Message::Close(_) => return Ok(()),
            _ => continue,
        };
        match reply {
            Reply::Send(m) => send(&mut ws, &m).map_err(|e| e.to_string())?,
            Reply::Close(code, reason) => {
                let frame = CloseFrame {
                    code: CloseCode::from(code),
                    reason: reason.into(),
                };
                ws.close(Some(frame)).map_err(|e| e.to_string())?;
                while ws.read().is_ok() {}
                return Ok(());
            }
        }
    }
}

fn header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n").map(|p| p + 4)
}

/// Peeks at the request head without consuming it.
fn peek_head(stream: &TcpStream) -> std::io::Result<String> {
    let mut buf = vec![0u8; 8192];
    let mut seen = 0;
    for _ in 0..2000 {
        let n = stream.peek(&mut buf)?;
        if n == 0 {
            break;
        }
        if let Some(end) = header_end(&buf[..n]) {
            return Ok(String::from_utf8_lossy(&buf[..end]).into_owned());
        }
        if n == buf.len() {
            break;
        }
        if n == seen {
            std::thread::sleep(Duration::from_millis(1));
        }
        seen = n;
    }
    Ok(String::from_utf8_lossy(&buf[..seen]).into_owned())
}

fn is_upgrade(head: &str) -> bool {
    head.lines().any(|l| {
        let l = l.to_ascii_lowercase();
        l.starts_with("upgrade:") && l.contains("websocket")
    })
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Maps a request target to a file under `root`; rejects parent components.
pub fn static_path(root: &Path, target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut full = root.join(rel);
    if path.ends_with('/') || rel.as_os_str().is_empty() {
        full.push("index.html");
    }
    Some(full)
}

fn serve_static(root: &Path, mut stream: TcpStream, head: &str) -> std::io::Result<()> {
    let mut consumed = vec![0u8; head.len()];
    stream.read_exact(&mut consumed)?;
    let mut parts = head.lines().next().unwrap_or("").split_whitespace();
    let (method, target) = (parts.next().unwrap_or(""), parts.next().unwrap_or("/"));
    let respond = |stream: &mut TcpStream, status: &str, ctype: &str, body: &[u8], send_body: bool| {
        write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            body.len()
        )?;
        if send_body {
            stream.write_all(body)?;
        }
        stream.flush()
    };
    if method != "GET" && method != "HEAD" {
        return respond(&mut stream, "405 Method Not Allowed", "text/plain", b"method not allowed\n", true);
    }
    match static_path(root, target).and_then(|p| std::fs::read(&p).ok().map(|b| (p, b))) {
        Some((p, body)) => respond(&mut stream, "200 OK", content_type(&p), &body, method == "GET"),
        None => respond(&mut stream, "404 Not Found", "text/plain", b"not found\n", method == "GET"),
    }
}

fn handle_connection(service: &Service, stream: TcpStream) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let head = match peek_head(&stream) {
        Ok(h) => h,
        Err(e) => {
            log::debug!("{peer:?}: {e}");
            return;
        }
    };
    if is_upgrade(&head) {
        let _ = stream.set_read_timeout(None);
        log::info!("session from {peer:?}");
        if let Err(e) = run_session(service, stream) {
            log::warn!("session {peer:?}: {e}");
        }
    } else if let Err(e) = serve_static(&service.static_dir, stream, &head) {
        log::debug!("static {peer:?}: {e}");
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve_forever(service: Arc<Service>, listener: TcpListener) {
    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                let service = Arc::clone(&service);
                std::thread::spawn(move || handle_connection(&service, s));
            }
            Err(e) => log::warn!("accept: {e}"),
        }
    }
}

/// Binds `addr` and serves on a background thread.
pub fn spawn(service: Arc<Service>, addr: &str) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((local, std::thread::spawn(move || serve_forever(service, listener))))
}

pub fn cmd_serve(ctx: &Context) -> Result<(), CliError> {
    let ds = ctx.load_dataset()?;
    let model = load_robot_model(ctx, &ds, ROBOT_MAP)?;
    let serve = &ctx.cfg.serve;
    let service = Arc::new(Service::new(model, serve.rollout, serve.static_dir.clone())?);
    let listener = TcpListener::bind((serve.host.as_str(), serve.port))?;
    println!(
        "serving on ws://{0} and http://{0} (static files from {1})",
        listener.local_addr()?,
        serve.static_dir.display()
    );
    serve_forever(service, listener);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        assert_eq!(
            parse_client(r#"{"type":"hello","protocol":1,"action":"hand_shake"}"#).unwrap(),
            ClientMessage::Hello {
                protocol: 1,
                action: Action::HandShake
            }
        );
        assert_eq!(
            parse_client(r#"{"type":"frame","t_ms":25,"hand_xy":[0.5,-0.25]}"#).unwrap(),
            ClientMessage::Frame {
                t_ms: 25,
                hand_xy: [0.5, -0.25]
            }
        );
        assert_eq!(parse_client(r#"{"type":"bye"}"#).unwrap(), ClientMessage::Bye);
    }

    #[test]
    fn schema_rejects_malformed() {
        for bad in [
            "not json",
            r#"{"type":"frame","t_ms":1}"#,
            r#"{"type":"frame","t_ms":1,"hand_xy":[1]}"#,
            r#"{"type":"frame","t_ms":-3,"hand_xy":[1,2]}"#,
            r#"{"type":"hello","protocol":1,"action":"juggle"}"#,
            r#"{"type":"dance"}"#,
        ] {
            assert!(parse_client(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn server_messages_match_schema() {
        let msgs = [
            ServerMessage::HelloAck {
                protocol: 1,
                action: Action::Rocket,
                w: 40,
                robot_dims: 7,
            },
            ServerMessage::Error { msg: "x".into() },
            ServerMessage::Prediction {
                t_ms: 0,
                robot_frame: vec![0.0; 7],
                robot_window: vec![vec![0.0; 7]; 40],
                human_window_hand_xy: vec![[0.0, 0.0]; 40],
                stale: false,
            },
        ];
        for m in msgs {
            assert!(server_schema().is_valid(&serde_json::to_value(&m).unwrap()), "{m:?}");
        }
    }

    #[test]
    fn static_paths_stay_inside_root() {
        let root = Path::new("/srv/ui");
        assert_eq!(static_path(root, "/"), Some(root.join("index.html")));
        assert_eq!(static_path(root, "/app.js?v=2"), Some(root.join("app.js")));
        assert_eq!(static_path(root, "/../etc/passwd"), None);
        assert_eq!(static_path(root, "/a/./b"), Some(root.join("a/b")));
    }
}
