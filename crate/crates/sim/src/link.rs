//! A client connection with injected one-way delays in both directions.
//!
//! Every message is held until `base + delay`, where `delay` comes from the
//! link's latency model and messages never overtake each other. For inbound
//! messages `base` is the server's `sent_at_ms` stamp, which is meaningful
//! because the server and the simulated clients read the same
//! [`MonotonicClock`]; the recorded receipt instant is therefore exactly
//! `sent_at_ms + delay` unless the real loopback transfer was slower.

use std::net::SocketAddr;
use std::time::Duration;

use copano_server::client::Connection;
use copano_server::wire::{Envelope, WireError};
use copano_server::{Clock, MonotonicClock};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::latency::{DelaySampler, LatencyModel};

/// An inbound message and the simulated instant it arrived.
#[derive(Clone, Debug)]
pub struct Delivered {
    pub env: Envelope,
    pub receipt_ms: f64,
}

pub struct SimLink {
    clock: MonotonicClock,
    outbound: mpsc::UnboundedSender<Envelope>,
    inbound: mpsc::UnboundedReceiver<Result<Delivered, WireError>>,
    tasks: [JoinHandle<()>; 2],
}

fn instant_at(clock: &MonotonicClock, ms: f64) -> Instant {
    Instant::from_std(clock.instant_at(0)) + Duration::from_secs_f64(ms.max(0.0) / 1000.0)
}

impl SimLink {
    /// Connects to `addr`. Uplink and downlink draw delays from separate
    /// streams derived from `seed`.
    pub async fn connect(addr: SocketAddr, clock: MonotonicClock, latency: LatencyModel, seed: u64) -> std::io::Result<Self> {
        let (mut writer, mut reader) = Connection::connect(addr).await?.split();
        let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Envelope>();
        let (in_tx, in_rx) = mpsc::unbounded_channel();

        let mut up: DelaySampler = latency.sampler(seed.wrapping_mul(2));
        let up_task = tokio::spawn(async move {
            let mut last_due = 0f64;
            while let Some(env) = out_rx.recv().await {
                let due = (env.sent_at_ms as f64 + up.next_ms()).max(last_due);
                last_due = due;
                tokio::time::sleep_until(instant_at(&clock, due)).await;
                if writer.send(&env).await.is_err() {
                    break;
                }
            }
        });

        let mut down: DelaySampler = latency.sampler(seed.wrapping_mul(2) + 1);
        let down_task = tokio::spawn(async move {
            let mut last_due = 0f64;
            while let Some(msg) = reader.recv().await {
                let arrived = clock.now_ms_f64();
                let msg = match msg {
                    Ok(env) => {
                        let due = (env.sent_at_ms as f64 + down.next_ms()).max(last_due);
                        last_due = due;
                        if due > arrived {
                            tokio::time::sleep_until(instant_at(&clock, due)).await;
                        }
                        Ok(Delivered { env, receipt_ms: due.max(arrived) })
                    }
                    Err(e) => Err(e),
                };
                if in_tx.send(msg).is_err() {
                    break;
                }
            }
        });

        Ok(Self { clock, outbound: out_tx, inbound: in_rx, tasks: [up_task, down_task] })
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn clock(&self) -> MonotonicClock {
        self.clock
    }

    /// Queues `env` for delayed sending. Its `sent_at_ms` should be the
    /// current clock reading.
    pub fn send(&self, env: Envelope) -> bool {
        self.outbound.send(env).is_ok()
    }

    /// Next delivered message; `None` once the connection is gone.
    pub async fn recv(&mut self) -> Option<Result<Delivered, WireError>> {
        self.inbound.recv().await
    }

    /// Waits for the next message of `kind`, skipping others, within
    /// `timeout`.
    pub async fn expect(&mut self, kind: copano_server::wire::Kind, timeout: Duration) -> anyhow::Result<Delivered> {
        tokio::time::timeout(timeout, async {
            loop {
                match self.recv().await {
                    Some(Ok(d)) if d.env.kind() == Some(kind) => return Ok(d),
                    Some(Ok(d)) if d.env.kind() == Some(copano_server::wire::Kind::Error) => {
                        let e: copano_server::wire::ErrorPayload = d.env.payload()?;
                        if e.in_reply_to.as_deref() == Some(kind.as_str()) {
                            anyhow::bail!("server refused {}: {} ({})", kind.as_str(), e.code, e.message);
                        }
                    }
                    Some(Ok(_)) => {}
                    Some(Err(e)) => return Err(e.into()),
                    None => anyhow::bail!("connection closed while waiting for {}", kind.as_str()),
                }
            }
        })
        .await
        .map_err(|_| anyhow::anyhow!("timed out waiting for {}", kind.as_str()))?
    }
}

impl Drop for SimLink {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}
