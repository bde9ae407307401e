mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use common::*;
use copano_core::imaging::{decode, Image};
use copano_core::texture::procedural;
use copano_server::client::{http_get, Connection};
use copano_server::persist::SessionMeta;
use copano_server::wire::*;

fn views(n: usize) -> (Image, Vec<Image>) {
    let scene = procedural(1400, 500, 4);
    let tiles = (0..n).map(|i| scene.crop(60 + 240 * i as u32, 100, 300, 225)).collect();
    (scene, tiles)
}

#[tokio::test]
async fn unknown_kind_keeps_connection_alive() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let mut conn = Connection::connect(srv.local_addr()).await.unwrap();
    conn.send_raw(bytes::Bytes::from_static(br#"{"kind":"teleport","sent_at_ms":0}"#)).await.unwrap();
    let err: ErrorPayload = recv(&mut conn).await.payload().unwrap();
    assert_eq!(err.code, "unknown_kind");
    conn.send_raw(bytes::Bytes::from_static(b"not json")).await.unwrap();
    assert_eq!(recv(&mut conn).await.payload::<ErrorPayload>().unwrap().code, "bad_message");
    conn.send(&Envelope::new(Kind::Start, 0, &Empty {})).await.unwrap();
    assert_eq!(recv(&mut conn).await.payload::<ErrorPayload>().unwrap().code, "not_registered");
    conn.send(&Envelope::new(Kind::Register, 0, &Empty {})).await.unwrap();
    assert_eq!(recv(&mut conn).await.kind(), Some(Kind::Register));
    srv.shutdown().await;
}

#[tokio::test]
async fn join_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let mut a = Client::register(srv.local_addr()).await;
    a.send(Kind::Join, &JoinRequest { group_id: "nonsense".into() }).await;
    let err: ErrorPayload = a.expect(Kind::Error).await.payload().unwrap();
    assert_eq!(err.code, "unknown_group");
    let mut b = Client::register(srv.local_addr()).await;
    let update = a.join(&b.group).await;
    assert_eq!(update.members.len(), 2);
    assert!(update.members.iter().any(|m| m.device_id == b.id && m.is_host));
    let seen: GroupUpdate = b.expect(Kind::Join).await.payload().unwrap();
    assert_eq!(seen, update);
    // Only the host may start.
    a.send(Kind::Start, &Empty {}).await;
    assert_eq!(a.expect(Kind::Error).await.payload::<ErrorPayload>().unwrap().code, "not_host");
    srv.shutdown().await;
}

#[tokio::test]
async fn single_client_preview_is_its_frame() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let mut clients = group(srv.local_addr(), 1).await;
    let started = start_session(&mut clients).await;
    assert!(started.single_member_warning);
    let (_, tiles) = views(1);
    clients[0].frame(&tiles[0]).await;
    let preview: PreviewPayload = clients[0].expect(Kind::Preview).await.payload().unwrap();
    assert_eq!((preview.width, preview.height), (300, 225));
    assert_eq!(preview.quads.len(), 1);
    assert!(preview.unplaced.is_empty());
    let img = decode(&decode_b64(&preview.jpeg).unwrap()).unwrap();
    let mean_err: f64 = img.data().iter().zip(tiles[0].data()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>()
        / img.data().len() as f64;
    assert!(mean_err < 6.0, "mean error {mean_err}");
    srv.shutdown().await;
}

#[tokio::test]
async fn three_member_session_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let addr = srv.local_addr();
    let mut clients = group(addr, 3).await;
    let started = start_session(&mut clients).await;
    assert_eq!(started.members.len(), 3);
    let sid = started.session_id.clone();
    let (scene, tiles) = views(3);
    for (c, t) in clients.iter_mut().zip(&tiles) {
        c.frame(t).await;
    }

    // Wait for a preview where everyone is placed.
    let mut ticks = Vec::new();
    let preview = loop {
        let p: PreviewPayload = clients[0].expect(Kind::Preview).await.payload().unwrap();
        ticks.push(p.tick);
        if p.quads.len() == 3 && p.unplaced.is_empty() {
            break p;
        }
    };
    assert!(ticks.windows(2).all(|w| w[0] < w[1]), "ticks increase: {ticks:?}");
    let colors: BTreeSet<u8> = preview.quads.iter().map(|q| q.color).collect();
    assert_eq!(colors.len(), 3);

    // Instructions go to the target only, normalized.
    let target = clients[2].id.clone();
    clients[0].send(Kind::Instruct, &InstructPayload { target: target.clone(), dx: -3.0, dy: 0.0 }).await;
    let arrow: ArrowPayload = clients[2].expect(Kind::Arrow).await.payload().unwrap();
    assert_eq!((arrow.dx, arrow.dy), (-1.0, 0.0));
    assert_eq!(arrow.expires_at_ms - arrow.issued_at_ms, 1500);
    clients[1].send(Kind::Instruct, &InstructPayload { target, dx: 1.0, dy: 0.0 }).await;
    assert_eq!(clients[1].expect(Kind::Error).await.payload::<ErrorPayload>().unwrap().code, "not_host");

    // Capture: a member cannot trigger; the host's order reaches everyone
    // as identical bytes.
    clients[1].send(Kind::CaptureOrder, &CaptureRequest::default()).await;
    assert_eq!(clients[1].expect(Kind::Error).await.payload::<ErrorPayload>().unwrap().code, "not_host");
    clients[0].send(Kind::CaptureOrder, &CaptureRequest::default()).await;
    let mut orders = Vec::new();
    for c in clients.iter_mut() {
        orders.push(c.expect(Kind::CaptureOrder).await);
    }
    assert!(orders.windows(2).all(|w| w[0] == w[1]));
    let order: CaptureOrderPayload = orders[0].payload().unwrap();
    assert_eq!(order.countdown_ms, 3000);

    // Not ready before the uploads are in.
    let (status, _) = http_get(addr, &format!("/sessions/{sid}/panorama.png")).await.unwrap();
    assert_eq!(status, 409);

    let full: Vec<Image> = (0..3).map(|i| scene.crop(60 + 384 * i as u32, 100, 480, 360)).collect();
    // Reframe the captures at capture resolution so they overlap by 1/5.
    for (i, c) in clients.iter_mut().enumerate() {
        c.upload(&order, &full[i], 10_000 + i as u64 * 7).await;
        let ack: UploadAck = c.expect(Kind::CaptureUpload).await.payload().unwrap();
        assert_eq!(ack.received, i + 1);
    }
    // A repeated identical upload is acknowledged as a duplicate.
    clients[0].upload(&order, &full[0], 10_000).await;
    let ack: UploadAck = clients[0].expect(Kind::CaptureUpload).await.payload().unwrap();
    assert!(ack.duplicate);

    let ready: ResultReady = clients[1].expect(Kind::ResultReady).await.payload().unwrap();
    assert_eq!(ready.skew_ms, 14);
    assert!(!ready.partial);
    assert_eq!(ready.placed.len(), 3);
    assert!((ready.width as i64 - (384 * 2 + 480)).abs() <= 2, "width {}", ready.width);

    let (status, body) = http_get(addr, &ready.url).await.unwrap();
    assert_eq!(status, 200);
    let pano = decode(&body).unwrap();
    assert_eq!((pano.width(), pano.height()), (ready.width, ready.height));
    let (status, body) = http_get(addr, &format!("/sessions/{sid}/session.meta")).await.unwrap();
    assert_eq!(status, 200);
    let meta = SessionMeta::from_toml(std::str::from_utf8(&body).unwrap()).unwrap();
    assert_eq!(meta.captures.len(), 3);
    assert!(meta.captures.iter().all(|c| c.placement.is_some()));
    assert_eq!(meta.skew_ms, 14);
    for c in &clients {
        assert!(dir.path().join("sessions").join(sid.as_str()).join(format!("capture_{}.png", c.id)).is_file());
    }
    assert_eq!(http_get(addr, "/sessions/nope/panorama.png").await.unwrap().0, 404);

    // The group can run another session afterwards.
    clients[0].send(Kind::Start, &Empty {}).await;
    let again: SessionStarted = clients[0].expect(Kind::Start).await.payload().unwrap();
    assert_ne!(again.session_id, sid);
    srv.shutdown().await;
}

#[tokio::test]
async fn unplaced_member_blocks_capture_without_override() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let mut clients = group(srv.local_addr(), 2).await;
    start_session(&mut clients).await;
    // Only the host streams, so the second member is unplaced.
    let (_, tiles) = views(1);
    clients[0].frame(&tiles[0]).await;
    clients[0].expect(Kind::Preview).await;
    clients[0].send(Kind::CaptureOrder, &CaptureRequest::default()).await;
    let err: ErrorPayload = clients[0].next_non_preview().await.payload().unwrap();
    assert_eq!(err.code, "unplaced_members");
    clients[0].send(Kind::CaptureOrder, &CaptureRequest { allow_unplaced: true }).await;
    clients[0].expect(Kind::CaptureOrder).await;
    clients[1].expect(Kind::CaptureOrder).await;
    srv.shutdown().await;
}

#[tokio::test]
async fn host_disconnect_aborts_only_its_session() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path()).await;
    let mut first = group(srv.local_addr(), 2).await;
    let mut second = group(srv.local_addr(), 2).await;
    start_session(&mut first).await;
    let other = start_session(&mut second).await;

    let host = first.remove(0);
    drop(host);
    let err: ErrorPayload = first[0].expect(Kind::Error).await.payload().unwrap();
    assert_eq!(err.code, "session_aborted");

    // The other session keeps working.
    let (_, tiles) = views(2);
    second[0].frame(&tiles[0]).await;
    second[1].frame(&tiles[1]).await;
    second[1].expect(Kind::Preview).await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert_eq!(srv.session_phase(&other.session_id), Some(copano_core::session::Phase::CapturingPreview));
    srv.shutdown().await;
}

#[tokio::test]
async fn static_app_is_served() {
    let dir = tempfile::tempdir().unwrap();
    let app = tempfile::tempdir().unwrap();
    std::fs::write(app.path().join("index.html"), "<html>copano</html>").unwrap();
    let config = copano_server::ServerConfig {
        data_dir: dir.path().to_path_buf(),
        app_dir: Some(app.path().to_path_buf()),
        ..Default::default()
    };
    let srv = copano_server::start(config, arc_clock()).await.unwrap();
    let (status, body) = http_get(srv.local_addr(), "/app/").await.unwrap();
    assert_eq!(status, 200);
    assert_eq!(body, b"<html>copano</html>");
    for path in ["/app/../secret", "/app/%2e%2e/secret", "/app/missing.js"] {
        let status = http_get(srv.local_addr(), path).await.unwrap().0;
        assert!((400..500).contains(&status), "{path}: {status}");
    }
    srv.shutdown().await;
}
