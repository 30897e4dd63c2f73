use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use log::debug;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::mpsc::{self, UnboundedSender, WeakUnboundedSender};
use tokio::task::JoinHandle;

use super::moderator::{moderate, ChannelState};
use crate::model::{category_to_criterion, FilterConfig, Outcome};
use crate::wire::{ClientFrame, ServerFrame, StreamKind, WireFragment};

struct ChannelSlot {
    state: Arc<ChannelState>,
    chat: Vec<WeakUnboundedSender<String>>,
    automod: Vec<WeakUnboundedSender<String>>,
}

impl ChannelSlot {
    fn subscribers(&mut self, stream: StreamKind) -> &mut Vec<WeakUnboundedSender<String>> {
        match stream {
            StreamKind::Chat => &mut self.chat,
            StreamKind::Automod => &mut self.automod,
        }
    }

    fn publish(&mut self, stream: StreamKind, frame: &ServerFrame) {
        let line = frame.to_line();
        self.subscribers(stream)
            .retain(|weak| match weak.upgrade() {
                Some(tx) => tx.send(line.clone()).is_ok(),
                None => false,
            });
    }
}

/// In-process simulator of the audited chat service.
#[derive(Clone)]
pub struct MockService {
    channels: Arc<Mutex<HashMap<String, ChannelSlot>>>,
}

impl MockService {
    pub fn new(channels: impl IntoIterator<Item = ChannelState>) -> Self {
        let channels = channels
            .into_iter()
            .map(|state| {
                (
                    state.channel.clone(),
                    ChannelSlot {
                        state: Arc::new(state),
                        chat: Vec::new(),
                        automod: Vec::new(),
                    },
                )
            })
            .collect();
        MockService {
            channels: Arc::new(Mutex::new(channels)),
        }
    }

    /// Bind and serve in a background task.
    pub async fn spawn(
        self,
        addr: impl ToSocketAddrs,
    ) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
        let listener = TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        Ok((local, tokio::spawn(self.serve(listener))))
    }

    pub async fn serve(self, listener: TcpListener) -> std::io::Result<()> {
        loop {
            let (stream, peer) = listener.accept().await?;
            debug!("mock: connection from {peer}");
            let svc = self.clone();
            tokio::spawn(async move {
                if let Err(e) = svc.handle_connection(stream).await {
                    debug!("mock: connection {peer} closed: {e}");
                }
            });
        }
    }

    async fn handle_connection(&self, stream: TcpStream) -> std::io::Result<()> {
        let (rd, mut wr) = stream.into_split();
        let (tx, mut rx) = mpsc::unbounded_channel::<String>();
        let writer = tokio::spawn(async move {
            while let Some(line) = rx.recv().await {
                if wr.write_all(line.as_bytes()).await.is_err() {
                    break;
                }
            }
        });
        let mut lines = BufReader::new(rd).lines();
        let result = loop {
            match lines.next_line().await {
                Ok(Some(line)) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    if let Some(reply) = self.handle_line(&line, &tx) {
                        let _ = tx.send(reply.to_line());
                    }
                }
                Ok(None) => break Ok(()),
                Err(e) => break Err(e),
            }
        };
        drop(tx);
        let _ = writer.await;
        result
    }

    /// Process one client line; returns the direct reply, if any.
    pub(crate) fn handle_line(&self, line: &str, conn: &UnboundedSender<String>) -> Option<ServerFrame> {
        let frame: ClientFrame = match serde_json::from_str(line) {
            Ok(f) => f,
            Err(e) => {
                return Some(ServerFrame::Error {
                    reason: format!("malformed frame: {e}"),
                })
            }
        };
        let mut channels = self.channels.lock().expect("channel table poisoned");
        let channel_name = match &frame {
            ClientFrame::Send { channel, .. }
            | ClientFrame::Subscribe { channel, .. }
            | ClientFrame::Configure { channel, .. } => channel.clone(),
        };
        let Some(slot) = channels.get_mut(&channel_name) else {
            return Some(ServerFrame::Error {
                reason: format!("unknown channel {channel_name:?}"),
            });
        };
        match frame {
            ClientFrame::Subscribe { channel, stream } => {
                slot.subscribers(stream).push(conn.downgrade());
                Some(ServerFrame::Subscribed { channel, stream })
            }
            ClientFrame::Configure { channel, active, levels } => {
                match FilterConfig::new(active, levels) {
                    Ok(cfg) => {
                        slot.state = Arc::new(slot.state.with_config(cfg));
                        Some(ServerFrame::Configured { channel })
                    }
                    Err(e) => Some(ServerFrame::Error {
                        reason: format!("bad config: {e}"),
                    }),
                }
            }
            ClientFrame::Send { channel, id, text } => {
                if text.is_empty() {
                    return Some(ServerFrame::Error {
                        reason: "empty text".into(),
                    });
                }
                match moderate(&text, &slot.state) {
                    Outcome::Passed => {
                        let frame = ServerFrame::Chat { channel, id: Some(id), text };
                        slot.publish(StreamKind::Chat, &frame);
                    }
                    Outcome::Moderated { category, fragments, level } => {
                        let mut topics: Vec<String> = Vec::new();
                        for f in &fragments {
                            let topic = slot
                                .state
                                .categories
                                .criterion_for(&f.category)
                                .or_else(|_| category_to_criterion(&f.category))
                                .map(|c| c.to_string())
                                .unwrap_or_else(|_| f.category.to_string());
                            if !topics.contains(&topic) {
                                topics.push(topic);
                            }
                        }
                        let frame = ServerFrame::AutomodEvent {
                            channel,
                            id: Some(id),
                            text,
                            category: category.to_string(),
                            topics,
                            fragments: fragments.iter().map(WireFragment::from).collect(),
                            level: level.get(),
                        };
                        slot.publish(StreamKind::Automod, &frame);
                    }
                    Outcome::PreFiltered => {
                        debug!("mock: message {id} pre-filtered");
                    }
                }
                None
            }
        }
    }
}
