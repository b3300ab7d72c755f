use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use webforge_core::genclient::LatencyProfile;
use webforge_core::metrics::DeltaMode;
use webforge_core::replay::{MissPolicy, Mode};
use webforge_core::shaper::ConnectivityProfile;
use webforge_core::study::StudyType;

mod commands;
mod exit;

/// Replay archived webpages with generated images and measure the effect.
#[derive(Parser, Debug)]
#[command(name = "webforge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Import a HAR capture into an archive directory.
    ImportHar {
        har: PathBuf,
        /// URL of the page's root document.
        #[arg(long)]
        page_url: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill client-side prompts from the page's HTML context.
    Annotate {
        archive: PathBuf,
        /// Write here instead of updating the archive in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Caption archived images and build server-side prompts.
    Caption {
        archive: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "CAPTION_URL")]
        caption_url: Option<String>,
        /// Use the deterministic offline captioner.
        #[arg(long)]
        stub: bool,
    },
    /// Generate every substituted image of an archive to disk.
    Pregenerate {
        archive: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
        #[command(flatten)]
        generator: GeneratorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the content and image proxies and write the PAC file.
    Serve {
        archive: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
        #[command(flatten)]
        generator: GeneratorArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 8080)]
        content_port: u16,
        #[arg(long, default_value_t = 8081)]
        image_port: u16,
        /// 404 or 502.
        #[arg(long, default_value = "404")]
        miss_policy: MissPolicy,
        /// Shape the content proxy: slow, average, fast or custom:<mbps>:<rtt_ms>.
        #[arg(long)]
        profile: Option<ConnectivityProfile>,
        #[arg(long, default_value_t = 1)]
        max_in_flight: usize,
        /// Also accept HTTP/2 with prior knowledge.
        #[arg(long)]
        http2: bool,
        #[arg(long, default_value = "proxy.pac")]
        pac_out: PathBuf,
    },
    /// Simulate or ingest page loads and emit SI/PLT delta tables.
    Bench(BenchArgs),
    /// Bytes saved by generating instead of transferring images.
    Savings {
        archive: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Score and prompt-agreement tables.
    Report(ReportArgs),
    /// Serve the crowdsourcing study API.
    StudyServe(StudyServeArgs),
    /// List manifest images the PAC pattern would not route to the image proxy.
    LintPac { archive: PathBuf },
}

#[derive(Args, Debug, Clone)]
struct ModeArgs {
    /// original, generated_client, generated_server or hybrid.
    #[arg(long, default_value = "generated_server")]
    mode: Mode,
    /// File with one image URL per line, for hybrid mode.
    #[arg(long)]
    hybrid_urls: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct GeneratorArgs {
    /// Generation endpoint; without it the offline stub generator is used.
    #[arg(long, env = "GENERATE_URL")]
    generate_url: Option<String>,
    /// Make the stub sleep like this GPU: v100, a40, a100 or custom:<ms>[:<jitter>].
    #[arg(long)]
    latency: Option<LatencyProfile>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    steps: u32,
    #[arg(long, default_value_t = 5.0)]
    guidance_scale: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Archives to simulate.
    archives: Vec<PathBuf>,
    /// Simulate loads over the archives.
    #[arg(long, conflicts_with = "reports")]
    simulate: bool,
    /// Metric report files to ingest instead of simulating.
    #[arg(long, num_args = 1..)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "average")]
    profile: ConnectivityProfile,
    #[arg(long, default_value = "a100")]
    latency: LatencyProfile,
    #[arg(long, default_value_t = 5)]
    runs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long, default_value_t = 6)]
    connections: usize,
    #[arg(long, default_value_t = 1)]
    slots: usize,
    /// delta_of_medians or median_of_deltas.
    #[arg(long, default_value = "delta_of_medians")]
    delta_mode: DeltaMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Study store directory to summarize.
    #[arg(long, requires = "study_type")]
    study: Option<PathBuf>,
    /// Study type, e.g. images or scale_client.
    #[arg(long = "type")]
    study_type: Option<StudyType>,
    /// Archive whose client and server prompts are compared.
    #[arg(long)]
    archive: Option<PathBuf>,
    #[arg(long, env = "EMBED_URL")]
    embed_url: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StudyServeArgs {
    /// Study store directory; created from --tasks when empty.
    #[arg(long)]
    dir: PathBuf,
    /// JSON array of tasks.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Root for /media/<ref>.
    #[arg(long)]
    media: PathBuf,
    /// Built UI bundle served at /.
    #[arg(long)]
    ui: Option<PathBuf>,
    #[arg(long, env = "STUDY_SECRET")]
    secret: String,
    #[arg(long, default_value = "127.0.0.1:8090")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 10)]
    quota: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
