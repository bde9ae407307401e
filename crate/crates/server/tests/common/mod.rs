#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use copano_core::ids::{DeviceId, GroupId};
use copano_core::imaging::{encode_jpeg, encode_png, Image};
use copano_server::client::Connection;
use copano_server::wire::*;
use copano_server::{start, MonotonicClock, ServerConfig, ServerHandle};

pub async fn server(dir: &std::path::Path) -> ServerHandle {
    let config = ServerConfig { data_dir: dir.to_path_buf(), registry_seed: Some(1), ..ServerConfig::default() };
    start(config, MonotonicClock::shared()).await.unwrap()
}

pub struct Client {
    pub conn: Connection,
    pub id: DeviceId,
    pub group: GroupId,
    seq: u64,
}

impl Client {
    pub async fn register(addr: SocketAddr) -> Client {
        let mut conn = Connection::connect(addr).await.unwrap();
        conn.send(&Envelope::new(Kind::Register, 0, &Empty {})).await.unwrap();
        let reply = next_of(&mut conn, Kind::Register).await;
        let r: Registered = reply.payload().unwrap();
        Client { conn, id: r.device_id, group: r.group_id, seq: 0 }
    }

    pub async fn send<P: serde::Serialize>(&mut self, kind: Kind, payload: &P) {
        self.conn.send(&Envelope::new(kind, 0, payload)).await.unwrap();
    }

    pub async fn join(&mut self, group: &GroupId) -> GroupUpdate {
        self.send(Kind::Join, &JoinRequest { group_id: group.clone() }).await;
        let update: GroupUpdate = self.expect(Kind::Join).await.payload().unwrap();
        self.group = update.group_id.clone();
        update
    }

    pub async fn frame(&mut self, img: &Image) {
        self.seq += 1;
        let p = FramePayload { width: img.width(), height: img.height(), jpeg: encode_b64(&encode_jpeg(img, 90).unwrap()) };
        self.conn.send(&Envelope::new(Kind::Frame, 0, &p).with_seq(self.seq)).await.unwrap();
    }

    pub async fn upload(&mut self, order: &CaptureOrderPayload, img: &Image, ts: u64) {
        let p = CaptureUpload { order_id: order.order_id.clone(), capture_timestamp_ms: ts, png: encode_b64(&encode_png(img).unwrap()) };
        self.send(Kind::CaptureUpload, &p).await;
    }

    /// Next message of `kind`, skipping others; panics after 20 s.
    pub async fn expect(&mut self, kind: Kind) -> Envelope {
        next_of(&mut self.conn, kind).await
    }

    /// Next message that is not a preview.
    pub async fn next_non_preview(&mut self) -> Envelope {
        loop {
            let env = recv(&mut self.conn).await;
            if env.kind() != Some(Kind::Preview) {
                return env;
            }
        }
    }
}

pub async fn recv(conn: &mut Connection) -> Envelope {
    tokio::time::timeout(Duration::from_secs(20), conn.recv())
        .await
        .expect("timed out waiting for a message")
        .expect("connection closed")
        .expect("malformed message")
}

pub async fn next_of(conn: &mut Connection, kind: Kind) -> Envelope {
    loop {
        let env = recv(conn).await;
        if env.kind() == Some(kind) {
            return env;
        }
    }
}

/// Host plus `n - 1` members in one group, with a started session.
pub async fn group(addr: SocketAddr, n: usize) -> Vec<Client> {
    let mut clients = vec![Client::register(addr).await];
    let g = clients[0].group.clone();
    for _ in 1..n {
        let mut c = Client::register(addr).await;
        c.join(&g).await;
        clients.push(c);
    }
    clients
}

pub async fn start_session(clients: &mut [Client]) -> SessionStarted {
    clients[0].send(Kind::Start, &Empty {}).await;
    let mut started = None;
    for c in clients.iter_mut() {
        started = Some(c.expect(Kind::Start).await.payload::<SessionStarted>().unwrap());
    }
    started.unwrap()
}

pub fn arc_clock() -> Arc<MonotonicClock> {
    MonotonicClock::shared()
}
