//! Capture-skew measurement through the real server.
//!
//! Each trial starts a session, has the host order a capture and lets every
//! client report `receipt + countdown` as its capture instant. The skew of a
//! trial is the server's own measurement, the spread of the reported
//! instants. Trials are spread over several independent groups that run
//! concurrently.

use std::net::SocketAddr;
use std::time::Duration;

use anyhow::Context;
use copano_core::imaging::encode_png;
use copano_core::Image;
use copano_server::wire::*;
use copano_server::MonotonicClock;

use crate::latency::LatencyModel;
use crate::link::SimLink;
use crate::session::form_session;

#[derive(Clone, Debug, PartialEq)]
pub struct SkewTrial {
    pub trial: usize,
    /// Skew the server reported, from integer-millisecond timestamps.
    pub skew_ms: u64,
    /// Spread of the exact simulated capture instants.
    pub exact_skew_ms: f64,
}

#[derive(Clone, Debug)]
pub struct SkewStats {
    pub latency: LatencyModel,
    pub clients: usize,
    pub trials: Vec<SkewTrial>,
    pub max_ms: u64,
    pub mean_ms: f64,
    pub p99_ms: u64,
}

impl SkewStats {
    fn from_trials(latency: LatencyModel, clients: usize, mut trials: Vec<SkewTrial>) -> Self {
        trials.sort_by_key(|t| t.trial);
        let mut skews: Vec<u64> = trials.iter().map(|t| t.skew_ms).collect();
        skews.sort_unstable();
        let n = skews.len().max(1);
        let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n) - 1;
        Self {
            latency,
            clients,
            max_ms: skews.last().copied().unwrap_or(0),
            mean_ms: skews.iter().sum::<u64>() as f64 / n as f64,
            p99_ms: skews.get(rank).copied().unwrap_or(0),
            trials,
        }
    }

    /// `trial,skew_ms` rows.
    pub fn csv(&self) -> String {
        let mut out = String::from("trial,skew_ms\n");
        for t in &self.trials {
            out.push_str(&format!("{},{}\n", t.trial, t.skew_ms));
        }
        out
    }
}

/// Runs `trials` capture trials with `clients` clients each, split over
/// `groups` concurrent groups.
pub async fn measure_capture_skew(
    addr: SocketAddr,
    clock: MonotonicClock,
    clients: usize,
    latency: LatencyModel,
    trials: usize,
    groups: usize,
    seed: u64,
) -> anyhow::Result<SkewStats> {
    anyhow::ensure!(trials >= 1 && clients >= 1, "need at least one trial and one client");
    let groups = groups.clamp(1, trials);
    let mut tasks = Vec::new();
    for g in 0..groups {
        let mine: Vec<usize> = (g..trials).step_by(groups).collect();
        let group_seed = seed.wrapping_mul(7919).wrapping_add(g as u64);
        tasks.push(tokio::spawn(run_group(addr, clock, clients, latency, group_seed, mine)));
    }
    let mut all = Vec::with_capacity(trials);
    for t in tasks {
        all.extend(t.await.context("skew group panicked")??);
    }
    Ok(SkewStats::from_trials(latency, clients, all))
}

async fn run_group(
    addr: SocketAddr,
    clock: MonotonicClock,
    clients: usize,
    latency: LatencyModel,
    seed: u64,
    trials: Vec<usize>,
) -> anyhow::Result<Vec<SkewTrial>> {
    let wait = Duration::from_secs(20);
    let (mut links, _, _, _) = form_session(addr, clock, clients, latency, seed).await?;
    // Tiny captures keep the final render negligible.
    let pngs: Vec<String> = (0..clients)
        .map(|i| encode_png(&Image::filled(16, 12, &[40 * i as u8, 90, 160])).map(|b| encode_b64(&b)))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(trials.len());
    for (k, &trial) in trials.iter().enumerate() {
        if k > 0 {
            start(&mut links, wait).await?;
        }
        let host = &links[0];
        host.send(Envelope::new(Kind::CaptureOrder, host.now_ms(), &CaptureRequest { allow_unplaced: true }));
        let mut instants = Vec::with_capacity(clients);
        for (link, png) in links.iter_mut().zip(&pngs) {
            let d = link.expect(Kind::CaptureOrder, wait).await?;
            let order: CaptureOrderPayload = d.env.payload()?;
            let at = d.receipt_ms + order.countdown_ms as f64;
            instants.push(at);
            let upload = CaptureUpload { order_id: order.order_id, capture_timestamp_ms: at.round() as u64, png: png.clone() };
            link.send(Envelope::new(Kind::CaptureUpload, link.now_ms(), &upload));
        }
        let mut skew_ms = None;
        for link in &mut links {
            let ready: ResultReady = link.expect(Kind::ResultReady, wait).await?.env.payload()?;
            skew_ms = Some(ready.skew_ms);
        }
        let lo = instants.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = instants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push(SkewTrial { trial, skew_ms: skew_ms.expect("at least one client"), exact_skew_ms: hi - lo });
    }
    Ok(out)
}

async fn start(links: &mut [SimLink], wait: Duration) -> anyhow::Result<()> {
    links[0].send(Envelope::new(Kind::Start, links[0].now_ms(), &Empty {}));
    for link in links.iter_mut() {
        link.expect(Kind::Start, wait).await?;
    }
    Ok(())
}
