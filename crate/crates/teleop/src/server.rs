//! WebSocket front end. One task owns the [`Session`] and steps it in real
//! time; client connections talk to it through a command channel and
//! receive telemetry from a broadcast channel.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tower_http::services::ServeDir;
use wayfarer::Checkpoint;

use crate::protocol::{Command, ServerMessage};
use crate::session::{Session, SessionConfig};
use crate::TeleopError;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub addr: String,
    pub session: SessionConfig,
    /// Directory with the operator console bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Wall-clock time per simulation tick; defaults to the checkpoint's dt.
    pub tick_interval: Option<Duration>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: "127.0.0.1:8080".into(),
            session: SessionConfig::default(),
            static_dir: None,
            tick_interval: None,
        }
    }
}

/// An outbound line, tagged with the tick it was produced on.
struct Outbound {
    tick: u64,
    is_state: bool,
    line: String,
}

type Frame = Arc<Outbound>;

type CommandEnvelope = (Command, oneshot::Sender<ServerMessage>);

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<CommandEnvelope>,
    frames: broadcast::Sender<Frame>,
    latest: watch::Receiver<Option<Frame>>,
}

/// A bound but not yet running server.
pub struct Server {
    listener: TcpListener,
    session: Session,
    interval: Duration,
    static_dir: Option<PathBuf>,
}

impl Server {
    pub async fn bind(checkpoint: Checkpoint, config: ServerConfig) -> Result<Server, TeleopError> {
        let interval = config
            .tick_interval
            .unwrap_or_else(|| Duration::from_secs_f64(checkpoint.episode.dynamics.dt));
        let session = Session::new(Arc::new(checkpoint), config.session)?;
        let listener = TcpListener::bind(&config.addr)
            .await
            .map_err(|source| TeleopError::Bind {
                addr: config.addr.clone(),
                source,
            })?;
        Ok(Server {
            listener,
            session,
            interval,
            static_dir: config.static_dir,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TeleopError> {
        self.listener.local_addr().map_err(TeleopError::Io)
    }

    /// Runs until the listener fails.
    pub async fn run(self) -> Result<(), TeleopError> {
        let (cmd_tx, cmd_rx) = mpsc::channel(64);
        let (frames, _) = broadcast::channel(64);
        let (latest_tx, latest) = watch::channel(None);
        tokio::spawn(simulate(
            self.session,
            self.interval,
            cmd_rx,
            frames.clone(),
            latest_tx,
        ));
        let state = AppState {
            commands: cmd_tx,
            frames,
            latest,
        };
        let router = Router::new().route("/ws", get(upgrade));
        let router = match self.static_dir {
            Some(dir) => router.fallback_service(ServeDir::new(dir)),
            None => router.route("/", get(placeholder)),
        };
        axum::serve(self.listener, router.with_state(state))
            .await
            .map_err(TeleopError::Io)
    }
}

/// Binds and runs in one call.
pub async fn serve(checkpoint: Checkpoint, config: ServerConfig) -> Result<(), TeleopError> {
    Server::bind(checkpoint, config).await?.run().await
}

async fn simulate(
    mut session: Session,
    interval: Duration,
    mut commands: mpsc::Receiver<CommandEnvelope>,
    frames: broadcast::Sender<Frame>,
    latest: watch::Sender<Option<Frame>>,
) {
    let mut clock = tokio::time::interval(interval);
    clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            received = commands.recv() => {
                let Some((cmd, reply)) = received else { return };
                let msg = session.submit(cmd).unwrap_or_else(|e| ServerMessage::Error {
                    message: e.to_string(),
                });
                let _ = reply.send(msg);
            }
            _ = clock.tick() => {
                let msg = match session.advance() {
                    Ok(Some(t)) => ServerMessage::State(t),
                    Ok(None) => continue,
                    Err(e) => {
                        // keep serving: report and start a fresh episode
                        let _ = session.restart();
                        ServerMessage::Error { message: format!("simulation error: {e}") }
                    }
                };
                let is_state = matches!(msg, ServerMessage::State(_));
                let frame: Frame = Arc::new(Outbound { tick: session.tick(), is_state, line: msg.to_line() });
                if is_state {
                    latest.send_replace(Some(frame.clone()));
                }
                // no receivers is fine
                let _ = frames.send(frame);
            }
        }
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    let (mut sink, mut incoming) = socket.split();
    let mut frames = state.frames.subscribe();
    let mut last_tick = 0;
    let initial = state.latest.borrow().clone();
    if let Some(frame) = initial {
        last_tick = frame.tick;
        if sink.send(Message::Text(frame.line.clone().into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(frame) => {
                    // the snapshot sent on connect may overlap the stream
                    if frame.is_state && frame.tick <= last_tick {
                        continue;
                    }
                    last_tick = last_tick.max(frame.tick);
                    if sink.send(Message::Text(frame.line.clone().into())).await.is_err() {
                        return;
                    }
                }
                // slow client: old frames are dropped
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return,
            },
            msg = incoming.next() => {
                let text = match msg {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Binary(_))) => {
                        let reply = ServerMessage::Error { message: "binary frames are not supported".into() };
                        if sink.send(Message::Text(reply.to_line().into())).await.is_err() {
                            return;
                        }
                        continue;
                    }
                    Some(Ok(_)) => continue,
                    Some(Err(_)) | None => return,
                };
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let reply = match Command::parse(line) {
                        Ok(cmd) => {
                            let (tx, rx) = oneshot::channel();
                            if state.commands.send((cmd, tx)).await.is_err() {
                                return;
                            }
                            match rx.await {
                                Ok(reply) => reply,
                                Err(_) => return,
                            }
                        }
                        Err(e) => ServerMessage::Error { message: e.to_string() },
                    };
                    if sink.send(Message::Text(reply.to_line().into())).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><title>wayfarer teleop</title>\
         <p>The operator console is not bundled with this server. \
         Telemetry and commands are available as newline-delimited JSON \
         over the WebSocket at <code>/ws</code>.</p>",
    )
}
