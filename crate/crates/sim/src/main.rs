use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use copano_core::imaging::encode_png;
use copano_server::MonotonicClock;
use copano_sim::ghosting::{bundled_setup, ghosting_metric, CaptureMode};
use copano_sim::latency::LatencyModel;
use copano_sim::scene::Scene;
use copano_sim::session::{check_layout, run_scripted_session, trajectories_csv, unfollowed_instructions, Script, SessionConfig};
use copano_sim::skew::measure_capture_skew;
use copano_sim::local_server;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Preview,
    Skew,
    Ghosting,
}

/// Simulated phones against an in-process copano server.
#[derive(Parser, Debug)]
#[command(name = "sim", version)]
struct Args {
    /// Scene manifest (TOML); the bundled scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    clients: usize,
    #[arg(long, default_value = "spread")]
    script: Script,
    /// `fixed:<ms>` or `uniform:<lo>,<hi>`.
    #[arg(long, default_value = "fixed:0")]
    latency: LatencyModel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Preview)]
    mode: Mode,
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
    /// Capture trials in skew mode.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Seconds between tiles in the sequential ghosting baseline.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Give up on a scripted session after this many seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    #[arg(long, default_value = "warn")]
    log_level: String,
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_scene(args: &Args) -> anyhow::Result<Option<Scene>> {
    args.scene.as_deref().map(Scene::from_manifest).transpose().context("loading scene")
}

async fn preview(args: &Args) -> anyhow::Result<bool> {
    let scene = Arc::new(load_scene(args)?.unwrap_or_else(Scene::bundled));
    let clock = MonotonicClock::new();
    let server = local_server(clock, args.out.join("server")).await?;
    let cfg = SessionConfig {
        clients: args.clients,
        script: args.script,
        latency: args.latency,
        seed: args.seed,
        timeout: Duration::from_secs(args.timeout),
        ..SessionConfig::default()
    };
    let a = run_scripted_session(server.local_addr(), clock, scene, cfg).await?;
    server.shutdown().await;

    write(&args.out, "panorama.png", encode_png(&a.panorama)?)?;
    write(&args.out, "trajectories.csv", trajectories_csv(&a.trajectories))?;
    let mut ticks = String::from("tick,t_ms\n");
    for (tick, t) in &a.preview_ticks {
        ticks.push_str(&format!("{tick},{t}\n"));
    }
    write(&args.out, "preview_ticks.csv", ticks)?;

    let check = check_layout(&a);
    println!("session {} elapsed {:.1} s", a.session_id, a.elapsed.as_secs_f64());
    println!("panorama {}x{} skew {} ms partial {}", a.panorama.width(), a.panorama.height(), a.result.skew_ms, a.result.partial);
    println!("bounds truth {:?} recovered {:?} max side error {:.2} px", check.truth_bounds, check.recovered_bounds, check.max_side_error_px);
    println!("adjacent overlaps {:?} (truth {:?})", check.adjacent_overlaps, check.truth_overlaps);
    let mut ok = check.unplaced.is_empty() && check.max_side_error_px <= 2.0;
    if args.clients > 1 && args.script == Script::Spread {
        ok &= check.adjacent_overlaps.iter().all(|o| (0.15..=0.30).contains(o));
    }
    if args.script == Script::Follow {
        let mut lines = String::from("t_ms,target,dx,dy\n");
        for i in &a.instructions {
            lines.push_str(&format!("{},{},{},{}\n", i.t_ms, i.target, i.dx, i.dy));
        }
        write(&args.out, "instructions.csv", lines)?;
        let failures = unfollowed_instructions(&a.instructions, &a.trajectories, 1000);
        println!("instructions {} unfollowed {}", a.instructions.len(), failures.len());
        for f in &failures {
            println!("  {f}");
        }
        ok &= failures.is_empty();
    }
    Ok(ok)
}

async fn skew(args: &Args) -> anyhow::Result<bool> {
    let clock = MonotonicClock::new();
    let server = local_server(clock, args.out.join("server")).await?;
    let stats = measure_capture_skew(server.local_addr(), clock, args.clients, args.latency, args.trials, 8, args.seed).await?;
    server.shutdown().await;
    write(&args.out, "skew.csv", stats.csv())?;
    println!(
        "{} trials, {} clients, {}: max {} ms, mean {:.2} ms, p99 {} ms",
        stats.trials.len(),
        stats.clients,
        stats.latency,
        stats.max_ms,
        stats.mean_ms,
        stats.p99_ms
    );
    Ok(true)
}

fn ghosting(args: &Args) -> anyhow::Result<bool> {
    let (bundled, tiles) = bundled_setup();
    let scene = load_scene(args)?.unwrap_or(bundled);
    let mut report = String::from("mode,displacement_px,duplicates\n");
    for (name, mode) in [("sequential", CaptureMode::Sequential { dt_s: args.dt }), ("synchronized", CaptureMode::Synchronized)] {
        let r = ghosting_metric(&scene, &tiles, mode, 0.0)?;
        report.push_str(&format!("{name},{:.2},{}\n", r.displacement_px, r.duplicate_count));
        write(&args.out, &format!("ghosting_{name}.png"), encode_png(&r.panorama)?)?;
        println!("{name}: displacement {:.2} px, duplicates {}", r.displacement_px, r.duplicate_count);
    }
    write(&args.out, "ghosting.txt", report)?;
    Ok(true)
}

fn main() -> ExitCode {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&args.log_level).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("sim: creating {}: {e}", args.out.display());
        return ExitCode::FAILURE;
    }
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let result = match args.mode {
        Mode::Preview => runtime.block_on(preview(&args)),
        Mode::Skew => runtime.block_on(skew(&args)),
        Mode::Ghosting => ghosting(&args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("sim: checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("sim: {e:#}");
            ExitCode::FAILURE
        }
    }
}
