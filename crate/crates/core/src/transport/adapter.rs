//! Client-side adapter contract. A session needs three independent halves,
//! one per bot: a sender, an echo (chat) reader and an event reader.
//! [`TcpConnector`] speaks the mock wire protocol; other platforms plug in by
//! implementing [`Connector`].

use std::sync::Arc;

use async_trait::async_trait;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::mpsc;

use super::TransportError;
use crate::mock::{moderate, ChannelState};
use crate::model::{FilterConfig, FilterLevel, Fragment, MessageId, ModerationCategory, Outcome};
use crate::wire::{event_fragments, ClientFrame, ServerFrame, StreamKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Echo {
    /// `None` for platforms that echo text only.
    pub id: Option<MessageId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModerationEvent {
    pub id: Option<MessageId>,
    pub text: String,
    pub category: ModerationCategory,
    pub topics: Vec<String>,
    pub fragments: Vec<Fragment>,
    pub level: FilterLevel,
}

#[async_trait]
pub trait MessageSender: Send {
    async fn send(&mut self, id: &MessageId, text: &str) -> Result<(), TransportError>;
}

#[async_trait]
pub trait EchoSource: Send {
    /// `Ok(None)` once the stream is closed.
    async fn next_echo(&mut self) -> Result<Option<Echo>, TransportError>;
}

#[async_trait]
pub trait EventSource: Send {
    async fn next_event(&mut self) -> Result<Option<ModerationEvent>, TransportError>;
}

pub struct Connection {
    pub sender: Box<dyn MessageSender>,
    pub echoes: Box<dyn EchoSource>,
    pub events: Box<dyn EventSource>,
}

#[async_trait]
pub trait Connector: Send + Sync {
    /// Open all three halves. Both readers must be live before this returns.
    async fn connect(&self, channel: &str) -> Result<Connection, TransportError>;
}

fn lost(e: std::io::Error) -> TransportError {
    TransportError::ConnectionLost(e.to_string())
}

async fn read_frame(lines: &mut Lines<BufReader<OwnedReadHalf>>) -> Result<Option<ServerFrame>, TransportError> {
    loop {
        let Some(line) = lines.next_line().await.map_err(lost)? else {
            return Ok(None);
        };
        if line.trim().is_empty() {
            continue;
        }
        return serde_json::from_str(&line)
            .map(Some)
            .map_err(|e| TransportError::Protocol(format!("undecodable frame {line:?}: {e}")));
    }
}

async fn write_frame(wr: &mut OwnedWriteHalf, frame: &ClientFrame) -> Result<(), TransportError> {
    wr.write_all(frame.to_line().as_bytes()).await.map_err(lost)
}

/// Adapter for the mock service (or anything speaking its protocol).
#[derive(Debug, Clone)]
pub struct TcpConnector {
    pub addr: String,
}

impl TcpConnector {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpConnector { addr: addr.into() }
    }

    async fn open(&self) -> Result<(Lines<BufReader<OwnedReadHalf>>, OwnedWriteHalf), TransportError> {
        let stream = TcpStream::connect(&self.addr)
            .await
            .map_err(|e| TransportError::Connect(format!("{}: {e}", self.addr)))?;
        stream.set_nodelay(true).ok();
        let (rd, wr) = stream.into_split();
        Ok((BufReader::new(rd).lines(), wr))
    }

    async fn request(&self, frame: ClientFrame) -> Result<(ServerFrame, Lines<BufReader<OwnedReadHalf>>, OwnedWriteHalf), TransportError> {
        let (mut lines, mut wr) = self.open().await?;
        write_frame(&mut wr, &frame).await?;
        match read_frame(&mut lines).await? {
            Some(ServerFrame::Error { reason }) => Err(TransportError::Protocol(reason)),
            Some(reply) => Ok((reply, lines, wr)),
            None => Err(TransportError::ConnectionLost("closed before reply".into())),
        }
    }

    async fn subscribe(&self, channel: &str, stream: StreamKind) -> Result<TcpReader, TransportError> {
        let (reply, lines, wr) = self
            .request(ClientFrame::Subscribe { channel: channel.into(), stream })
            .await?;
        match reply {
            ServerFrame::Subscribed { .. } => Ok(TcpReader { lines, channel: channel.into(), _wr: wr }),
            other => Err(TransportError::Protocol(format!("expected subscription ack, got {other:?}"))),
        }
    }

    /// Push a filter config to the mock channel.
    pub async fn configure(&self, channel: &str, config: &FilterConfig) -> Result<(), TransportError> {
        let frame = ClientFrame::Configure {
            channel: channel.into(),
            active: config.active().iter().cloned().collect(),
            levels: config.levels().clone(),
        };
        match self.request(frame).await?.0 {
            ServerFrame::Configured { .. } => Ok(()),
            other => Err(TransportError::Protocol(format!("expected configure ack, got {other:?}"))),
        }
    }
}

struct TcpReader {
    lines: Lines<BufReader<OwnedReadHalf>>,
    channel: String,
    _wr: OwnedWriteHalf,
}

struct TcpSender {
    channel: String,
    wr: OwnedWriteHalf,
    errors: mpsc::UnboundedReceiver<String>,
}

#[async_trait]
impl MessageSender for TcpSender {
    async fn send(&mut self, id: &MessageId, text: &str) -> Result<(), TransportError> {
        if let Ok(reason) = self.errors.try_recv() {
            return Err(TransportError::Protocol(reason));
        }
        let frame = ClientFrame::Send {
            channel: self.channel.clone(),
            id: id.0.clone(),
            text: text.to_string(),
        };
        write_frame(&mut self.wr, &frame).await
    }
}

#[async_trait]
impl EchoSource for TcpReader {
    async fn next_echo(&mut self) -> Result<Option<Echo>, TransportError> {
        loop {
            match read_frame(&mut self.lines).await? {
                None => return Ok(None),
                Some(ServerFrame::Chat { channel, id, text }) if channel == self.channel => {
                    return Ok(Some(Echo { id: id.map(MessageId), text }))
                }
                Some(ServerFrame::Error { reason }) => return Err(TransportError::Protocol(reason)),
                Some(_) => continue,
            }
        }
    }
}

#[async_trait]
impl EventSource for TcpReader {
    async fn next_event(&mut self) -> Result<Option<ModerationEvent>, TransportError> {
        loop {
            match read_frame(&mut self.lines).await? {
                None => return Ok(None),
                Some(ServerFrame::AutomodEvent { channel, id, text, category, topics, fragments, level })
                    if channel == self.channel =>
                {
                    let category = category
                        .parse()
                        .map_err(|e| TransportError::Protocol(format!("bad category: {e}")))?;
                    let level = FilterLevel::new(level as i64)
                        .map_err(|e| TransportError::Protocol(e.to_string()))?;
                    return Ok(Some(ModerationEvent {
                        id: id.map(MessageId),
                        text,
                        category,
                        topics,
                        fragments: event_fragments(&fragments),
                        level,
                    }));
                }
                Some(ServerFrame::Error { reason }) => return Err(TransportError::Protocol(reason)),
                Some(_) => continue,
            }
        }
    }
}

#[async_trait]
impl Connector for TcpConnector {
    async fn connect(&self, channel: &str) -> Result<Connection, TransportError> {
        let echoes = self.subscribe(channel, StreamKind::Chat).await?;
        let events = self.subscribe(channel, StreamKind::Automod).await?;
        let (mut lines, wr) = self.open().await?;
        let (err_tx, err_rx) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            while let Ok(Some(frame)) = read_frame(&mut lines).await {
                if let ServerFrame::Error { reason } = frame {
                    if err_tx.send(reason).is_err() {
                        break;
                    }
                }
            }
        });
        Ok(Connection {
            sender: Box::new(TcpSender { channel: channel.into(), wr, errors: err_rx }),
            echoes: Box::new(echoes),
            events: Box::new(events),
        })
    }
}

/// In-process adapter that runs the simulator directly, no sockets. Works
/// under a paused tokio clock.
#[derive(Debug, Clone)]
pub struct LoopbackConnector {
    pub state: Arc<ChannelState>,
    /// Strip ids from echoes, like a text-only chat platform.
    pub text_only_echoes: bool,
}

impl LoopbackConnector {
    pub fn new(state: ChannelState) -> Self {
        LoopbackConnector { state: Arc::new(state), text_only_echoes: false }
    }
}

struct LoopbackSender {
    state: Arc<ChannelState>,
    text_only: bool,
    echo_tx: mpsc::UnboundedSender<Echo>,
    event_tx: mpsc::UnboundedSender<ModerationEvent>,
}

#[async_trait]
impl MessageSender for LoopbackSender {
    async fn send(&mut self, id: &MessageId, text: &str) -> Result<(), TransportError> {
        let closed = || TransportError::ConnectionLost("loopback reader dropped".into());
        match moderate(text, &self.state) {
            Outcome::Passed => self
                .echo_tx
                .send(Echo {
                    id: (!self.text_only).then(|| id.clone()),
                    text: text.to_string(),
                })
                .map_err(|_| closed()),
            Outcome::Moderated { category, fragments, level } => {
                let mut topics = Vec::new();
                for f in &fragments {
                    if let Ok(c) = self.state.categories.criterion_for(&f.category) {
                        let c = c.to_string();
                        if !topics.contains(&c) {
                            topics.push(c);
                        }
                    }
                }
                self.event_tx
                    .send(ModerationEvent {
                        id: Some(id.clone()),
                        text: text.to_string(),
                        category,
                        topics,
                        fragments,
                        level,
                    })
                    .map_err(|_| closed())
            }
            Outcome::PreFiltered => Ok(()),
        }
    }
}

struct LoopbackEchoes(mpsc::UnboundedReceiver<Echo>);
struct LoopbackEvents(mpsc::UnboundedReceiver<ModerationEvent>);

#[async_trait]
impl EchoSource for LoopbackEchoes {
    async fn next_echo(&mut self) -> Result<Option<Echo>, TransportError> {
        Ok(self.0.recv().await)
    }
}

#[async_trait]
impl EventSource for LoopbackEvents {
    async fn next_event(&mut self) -> Result<Option<ModerationEvent>, TransportError> {
        Ok(self.0.recv().await)
    }
}

#[async_trait]
impl Connector for LoopbackConnector {
    async fn connect(&self, channel: &str) -> Result<Connection, TransportError> {
        if channel != self.state.channel {
            return Err(TransportError::Connect(format!("unknown channel {channel:?}")));
        }
        let (echo_tx, echo_rx) = mpsc::unbounded_channel();
        let (event_tx, event_rx) = mpsc::unbounded_channel();
        Ok(Connection {
            sender: Box::new(LoopbackSender {
                state: self.state.clone(),
                text_only: self.text_only_echoes,
                echo_tx,
                event_tx,
            }),
            echoes: Box::new(LoopbackEchoes(echo_rx)),
            events: Box::new(LoopbackEvents(event_rx)),
        })
    }
}
