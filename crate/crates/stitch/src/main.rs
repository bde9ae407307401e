use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use copano_core::imaging::encode_png;
use copano_stitch::{load_inputs, stitch, Mode, Options};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Preview,
    Final,
}

/// Stitches image files into a panorama and prints a layout report.
///
/// Exits 0 when every image was placed, 2 when some were not (the
/// panorama is still written), 1 on errors.
#[derive(Parser, Debug)]
#[command(name = "stitch", version)]
struct Args {
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Final)]
    mode: ModeArg,
    /// Index of the image that anchors the layout.
    #[arg(long, default_value_t = 0)]
    anchor: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

fn run(args: &Args) -> anyhow::Result<bool> {
    let inputs = load_inputs(&args.images)?;
    let mode = match args.mode {
        ModeArg::Preview => Mode::Preview,
        ModeArg::Final => Mode::Final,
    };
    let outcome = stitch(&inputs, &Options { mode, anchor: args.anchor, seed: args.seed })?;
    std::fs::write(&args.out, encode_png(&outcome.panorama)?)
        .map_err(|e| anyhow::anyhow!("writing {}: {e}", args.out.display()))?;
    if let Some(path) = &args.report {
        std::fs::write(path, &outcome.report).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
    }
    print!("{}", outcome.report);
    Ok(outcome.all_placed())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("stitch: {e:#}");
            ExitCode::FAILURE
        }
    }
}
