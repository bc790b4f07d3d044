//! `tilestitch`: plan, stitch and measure tiled segmentation runs from the
//! command line.
//!
//! Every subcommand writes its artifacts plus a `manifest.json` into
//! `--out`, echoing the inputs and the derived parameters (period, margins,
//! patch size, shift set) so a run can be repeated exactly.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tilestitch::analysis::{
    averaging_sweep, bench_csv, bench_patch_sizes, correlation_matrix, edge_error_profile, grid_shifts,
};
use tilestitch::synth::synth_tile;
use tilestitch::{
    full_tile_forward, plan, stitch_with, tiler, Error, NetGeometry, NetworkGraph, Raster, StitchOptions,
    StitchStrategy, TilePlan, Window,
};

use manifest::Manifest;

#[derive(Parser)]
#[command(
    name = "tilestitch",
    version,
    about = "Tiled segmentation inference and stitching experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the network's geometry: node sizes, period, margins.
    Geom(GeomArgs),
    /// Write a synthetic noise-and-rectangles tile.
    Synth(SynthArgs),
    /// Run tiled inference and stitch the patches.
    Stitch(StitchArgs),
    /// Run the network over the whole tile in one pass.
    Oracle(OracleArgs),
    /// Correlation of outputs under small input translations.
    Corr(CorrArgs),
    /// Disagreement with the oracle by distance to the patch border.
    EdgeProfile(StitchArgs),
    /// Oracle IoU of scores averaged over shifted grids.
    AvgSweep(SweepArgs),
    /// Time stitching at several patch sizes.
    Bench(BenchArgs),
    /// Write a patch plan and its coverage summary.
    Plan(PlanArgs),
}

#[derive(Args)]
struct NetArgs {
    /// NETSPEC file.
    #[arg(long)]
    net: PathBuf,
    /// WTS1 weights file.
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    weights: Option<PathBuf>,
    /// Seed for deterministic weight initialisation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TileArgs {
    /// RAS1 tile.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    tile: Option<PathBuf>,
    /// Generate a synthetic tile from this seed instead of reading one.
    #[arg(long)]
    synth: Option<u64>,
    /// Synthetic tile size.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Constant rectangles drawn on the synthetic tile.
    #[arg(long, default_value_t = 12)]
    rects: usize,
}

#[derive(Args)]
struct OutArgs {
    /// Directory for artifacts and the run manifest.
    #[arg(long, default_value = "tilestitch-out")]
    out: PathBuf,
}

#[derive(Args)]
struct GeomArgs {
    #[arg(long)]
    net: PathBuf,
    /// Input size used for the per-node report.
    #[arg(long, default_value_t = 572)]
    probe: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 12)]
    rects: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct StitchArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    tile: TileArgs,
    /// concat, clip:<c>, avg:<stride> or avg:<stride>:taper.
    #[arg(long, default_value = "concat")]
    strategy: StitchStrategy,
    /// Patch input size; defaults to an exact size around twice the margin plus 128.
    #[arg(long)]
    patch: Option<usize>,
    /// Replay a saved plan instead of planning.
    #[arg(long, conflicts_with_all = ["strategy", "patch"])]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    tile: TileArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CorrArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    tile: TileArgs,
    /// Shifts 0..max-shift on each axis.
    #[arg(long, default_value_t = 8)]
    max_shift: usize,
    /// Output region as x,y,w,h; defaults to a 32x32 region clear of the tile edge.
    #[arg(long, value_parser = parse_region)]
    region: Option<Window>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    tile: TileArgs,
    #[arg(long)]
    patch: Option<usize>,
    /// Spacing of the shift grid in pixels; defaults to 1 (mostly misaligned).
    #[arg(long, default_value_t = 1)]
    shift_step: usize,
    #[arg(long, default_value_t = 16)]
    shifts: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    tile: TileArgs,
    /// Comma-separated patch sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    net: PathBuf,
    /// Tile width and height.
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value = "concat")]
    strategy: StitchStrategy,
    #[arg(long)]
    patch: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_region(s: &str) -> Result<Window, String> {
    let v: Vec<i64> = s
        .split(',')
        .map(|p| p.trim().parse::<i64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        &[x, y, w, h] if w > 0 && h > 0 => Ok(Window::new(x, y, w as usize, h as usize)),
        _ => Err("expected x,y,w,h with positive w and h".into()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format(_) | Error::Spec { .. } | Error::Weights(_) | Error::Io(_) => 3,
        Error::Coverage(_) => 5,
        Error::OutOfBounds { .. }
        | Error::UnsupportedReflect { .. }
        | Error::Shape(_)
        | Error::Geometry(_)
        | Error::Plan(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    match run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tilestitch: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_net(args: &NetArgs, m: &mut Manifest) -> Result<NetworkGraph, Error> {
    let net = NetworkGraph::parse(&fs::read_to_string(&args.net)?)?;
    m.input("net", &args.net);
    match (&args.weights, args.seed) {
        (Some(path), _) => {
            m.input("weights", path);
            net.load_weights(path)
        }
        (None, Some(seed)) => {
            m.param("weight_seed", seed);
            Ok(net.init_weights(seed))
        }
        (None, None) => unreachable!("clap requires weights or seed"),
    }
}

fn load_tile(args: &TileArgs, channels: usize, m: &mut Manifest) -> Result<Raster, Error> {
    match (&args.tile, args.synth) {
        (Some(path), _) => {
            m.input("tile", path);
            Raster::read_ras1(path)
        }
        (None, Some(seed)) => {
            m.param(
                "synth",
                json!({"seed": seed, "size": args.size, "channels": channels, "rects": args.rects}),
            );
            Ok(synth_tile(seed, args.size, args.size, channels, args.rects))
        }
        (None, None) => unreachable!("clap requires a tile or a synth seed"),
    }
}

fn default_patch(geom: &NetGeometry) -> Result<usize, Error> {
    let want = 2 * geom.margin_in() + 128;
    geom.next_exact_size(want.next_multiple_of(geom.delta_tot()))
        .ok_or_else(|| Error::Geometry(format!("no exact patch size near {want}")))
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>, m: &mut Manifest) -> Result<(), Error> {
    fs::write(dir.join(name), bytes)?;
    m.output(name);
    Ok(())
}

fn run(cmd: Command, argv: Vec<String>) -> Result<(), Error> {
    let name = match &cmd {
        Command::Geom(_) => "geom",
        Command::Synth(_) => "synth",
        Command::Stitch(_) => "stitch",
        Command::Oracle(_) => "oracle",
        Command::Corr(_) => "corr",
        Command::EdgeProfile(_) => "edge-profile",
        Command::AvgSweep(_) => "avg-sweep",
        Command::Bench(_) => "bench",
        Command::Plan(_) => "plan",
    };
    let mut m = Manifest::new(name, argv);
    let out = match cmd {
        Command::Geom(a) => geom(a, &mut m)?,
        Command::Synth(a) => synth(a, &mut m)?,
        Command::Stitch(a) => stitch_cmd(a, &mut m)?,
        Command::Oracle(a) => oracle(a, &mut m)?,
        Command::Corr(a) => corr(a, &mut m)?,
        Command::EdgeProfile(a) => edge_profile(a, &mut m)?,
        Command::AvgSweep(a) => avg_sweep(a, &mut m)?,
        Command::Bench(a) => bench(a, &mut m)?,
        Command::Plan(a) => plan_cmd(a, &mut m)?,
    };
    m.write(&out)
}

fn geom(a: GeomArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    let net = NetworkGraph::parse(&fs::read_to_string(&a.net)?)?;
    m.input("net", &a.net);
    let g = net.geometry()?;
    let mut report = String::new();
    report += &format!("delta_tot {}\n", g.delta_tot());
    report += &format!("margin_in {}\n", g.margin_in());
    report += &format!("receptive_field {}\n", g.receptive_field());
    report += &format!("probe {}\n", a.probe);
    match g.node_sizes(a.probe) {
        Ok(sizes) => {
            for (node, size) in net.nodes().iter().zip(&sizes) {
                report += &format!("node {} {} {}\n", node.name, node.kind.keyword(), size);
            }
            report += &format!("output {}\n", sizes[net.output_index()]);
            report += &format!("contamination_margin {}\n", g.contamination_margin(a.probe)?);
            let reasons = g.inexact_reasons(a.probe)?;
            report += &format!("exact {}\n", reasons.is_empty());
            for r in reasons {
                report += &format!("inexact {r}\n");
            }
        }
        Err(e) => report += &format!("probe_error {e}\n"),
    }
    if let Some(n) = g.next_exact_size(a.probe) {
        report += &format!("next_exact {n}\n");
    }
    print!("{report}");
    m.param("probe", a.probe);
    m.derived("delta_tot", g.delta_tot());
    m.derived("margin_in", g.margin_in());
    fs::create_dir_all(&a.out.out)?;
    write(&a.out.out, "geom.txt", &report, m)?;
    Ok(a.out.out)
}

fn synth(a: SynthArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    if a.width == 0 || a.height == 0 || a.channels == 0 {
        return Err(Error::Shape("synthetic tile dimensions must be at least 1".into()));
    }
    let tile = synth_tile(a.seed, a.width, a.height, a.channels, a.rects);
    m.param(
        "synth",
        json!({"seed": a.seed, "width": a.width, "height": a.height, "channels": a.channels, "rects": a.rects}),
    );
    fs::create_dir_all(&a.out.out)?;
    write(&a.out.out, "tile.ras1", tile.to_ras1_bytes(), m)?;
    Ok(a.out.out)
}

fn make_plan(
    net: &NetworkGraph,
    w: usize,
    h: usize,
    strategy: StitchStrategy,
    patch: Option<usize>,
    m: &mut Manifest,
) -> Result<TilePlan, Error> {
    let g = net.geometry()?;
    let patch = match patch {
        Some(p) => p,
        None => default_patch(&g)?,
    };
    let p = plan(w, h, &g, patch, strategy)?;
    m.param("strategy", strategy.to_string());
    m.param("patch", patch);
    m.derived("delta_tot", g.delta_tot());
    m.derived("margin_in", g.margin_in());
    m.derived("patch_output", p.patch_output);
    m.derived("entries", p.entries.len());
    Ok(p)
}

fn write_labels(dir: &Path, prob: &Raster, labels: &Raster, m: &mut Manifest) -> Result<(), Error> {
    write(dir, "prob.ras1", prob.to_ras1_bytes(), m)?;
    write(dir, "labels.ras1", labels.to_ras1_bytes(), m)?;
    labels.write_pgm(dir.join("labels.pgm"))?;
    m.output("labels.pgm");
    Ok(())
}

fn stitch_cmd(a: StitchArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    let net = load_net(&a.net, m)?;
    let tile = load_tile(&a.tile, net.input_channels(), m)?;
    let p = match &a.plan {
        Some(path) => {
            m.input("plan", path);
            let p = TilePlan::from_text(&fs::read_to_string(path)?)?;
            if (p.tile_w, p.tile_h) != (tile.width(), tile.height()) {
                return Err(Error::Plan(format!(
                    "plan is for a {}x{} tile, got {}x{}",
                    p.tile_w,
                    p.tile_h,
                    tile.width(),
                    tile.height()
                )));
            }
            p
        }
        None => make_plan(&net, tile.width(), tile.height(), a.strategy, a.patch, m)?,
    };
    m.param("workers", a.workers);
    let res = stitch_with(
        &tile,
        &net,
        &p,
        &StitchOptions {
            workers: a.workers.max(1),
        },
    )?;
    fs::create_dir_all(&a.out.out)?;
    write_labels(&a.out.out, &res.prob, &res.labels, m)?;
    write(&a.out.out, "plan.txt", p.to_text(), m)?;
    write(&a.out.out, "timing.txt", res.timing.to_string(), m)?;
    print!("{}", res.timing);
    Ok(a.out.out)
}

fn oracle(a: OracleArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    let net = load_net(&a.net, m)?;
    let tile = load_tile(&a.tile, net.input_channels(), m)?;
    let prob = full_tile_forward(&net, &tile)?;
    let labels = tilestitch::stitcher::argmax_labels(&prob)?;
    fs::create_dir_all(&a.out.out)?;
    write_labels(&a.out.out, &prob, &labels, m)?;
    Ok(a.out.out)
}

fn corr(a: CorrArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    let net = load_net(&a.net, m)?;
    let tile = load_tile(&a.tile, net.input_channels(), m)?;
    let g = net.geometry()?;
    let start = (g.margin_in() + a.max_shift) as i64;
    let region = a.region.unwrap_or(Window::new(start, start, 32, 32));
    let cm = correlation_matrix(&net, &tile, region, a.max_shift)?;
    m.param("max_shift", a.max_shift);
    m.param("region", [region.x0, region.y0, region.w as i64, region.h as i64]);
    m.derived("delta_tot", g.delta_tot());
    m.derived("exact_shifts", cm.exact_shifts());
    fs::create_dir_all(&a.out.out)?;
    write(&a.out.out, "corr.csv", cm.to_csv(), m)?;
    cm.to_heatmap().write_pgm(a.out.out.join("corr.pgm"))?;
    m.output("corr.pgm");
    for (di, dj) in cm.exact_shifts() {
        println!("exact {di} {dj}");
    }
    Ok(a.out.out)
}

fn edge_profile(a: StitchArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    let net = load_net(&a.net, m)?;
    let tile = load_tile(&a.tile, net.input_channels(), m)?;
    let p = make_plan(&net, tile.width(), tile.height(), a.strategy, a.patch, m)?;
    let prof = edge_error_profile(&net, &tile, &p)?;
    m.derived("total_errors", prof.total_errors());
    fs::create_dir_all(&a.out.out)?;
    write(&a.out.out, "edge_profile.csv", prof.to_csv(), m)?;
    println!("errors {}", prof.total_errors());
    Ok(a.out.out)
}

fn avg_sweep(a: SweepArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    let net = load_net(&a.net, m)?;
    let tile = load_tile(&a.tile, net.input_channels(), m)?;
    let patch = match a.patch {
        Some(p) => p,
        None => default_patch(&net.geometry()?)?,
    };
    let shifts = grid_shifts(a.shift_step, a.shifts);
    let pts = averaging_sweep(&net, &tile, patch, &shifts)?;
    m.param("patch", patch);
    m.param("shifts", &shifts);
    let mut csv = String::from("n,shift_x,shift_y,iou\n");
    for (k, p) in pts.iter().enumerate() {
        csv += &format!("{},{},{},{:.6}\n", k + 1, p.shift.0, p.shift.1, p.iou);
    }
    fs::create_dir_all(&a.out.out)?;
    write(&a.out.out, "sweep.csv", &csv, m)?;
    print!("{csv}");
    Ok(a.out.out)
}

fn bench(a: BenchArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    let net = load_net(&a.net, m)?;
    let tile = load_tile(&a.tile, net.input_channels(), m)?;
    let records = bench_patch_sizes(&net, &tile, &a.sizes, a.runs.max(1), a.workers.max(1))?;
    m.param("sizes", &a.sizes);
    m.param("runs", a.runs);
    m.param("workers", a.workers);
    let csv = bench_csv(&records);
    fs::create_dir_all(&a.out.out)?;
    write(&a.out.out, "bench.csv", &csv, m)?;
    print!("{csv}");
    Ok(a.out.out)
}

fn plan_cmd(a: PlanArgs, m: &mut Manifest) -> Result<PathBuf, Error> {
    let net = NetworkGraph::parse(&fs::read_to_string(&a.net)?)?;
    m.input("net", &a.net);
    m.param("size", a.size);
    let p = make_plan(&net, a.size, a.size, a.strategy, a.patch, m)?;
    let cov = tiler::coverage_map(&p);
    let counts = cov.as_u8().expect("coverage is U8");
    let (lo, hi) = counts.iter().fold((u8::MAX, 0), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    m.derived("coverage_min", lo);
    m.derived("coverage_max", hi);
    fs::create_dir_all(&a.out.out)?;
    write(&a.out.out, "plan.txt", p.to_text(), m)?;
    println!("entries {} coverage {lo}..{hi}", p.entries.len());
    Ok(a.out.out)
}
