use std::fs::{self, File};
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Serialize;
use webforge_core::annotate::annotate_archive;
use webforge_core::archive::{self, digest_hex, PageArchive};
use webforge_core::evaluate::{self, agreement_stats, EmbeddingProvider, StubEmbedder};
use webforge_core::genclient::{Captioner, GenerationConfig, ImageGenerator, StubCaptioner, StubGenerator};
use webforge_core::metrics::{self, bandwidth_savings, compute_deltas, simulate_runs, ingest_report, LoadMetrics, Metric, SimParams};
use webforge_core::pac::unmatched_images;
use webforge_core::replay::{Mode, ServeMode};
use webforge_core::study::{StudyConfig, StudyStore, StudyTask};
use webforge_net::backends::{HttpCaptioner, HttpEmbedder, HttpGenerator};
use webforge_net::proxy::{run_pair, ProxyPairConfig};
use webforge_net::study_service::{self, StudyService};

use crate::exit::invalid;
use crate::{BenchArgs, Command, GeneratorArgs, ModeArgs, ReportArgs, StudyServeArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::ImportHar { har, page_url, out } => import_har(&har, &page_url, &out),
        Command::Annotate { archive, out } => annotate(&archive, out.as_deref(), None),
        Command::Caption {
            archive,
            out,
            caption_url,
            stub,
        } => {
            let captioner: Box<dyn Captioner> = match (caption_url, stub) {
                (_, true) => Box::new(StubCaptioner),
                (Some(url), false) => Box::new(HttpCaptioner::new(url)),
                (None, false) => return Err(invalid("caption needs --caption-url (or CAPTION_URL) or --stub")),
            };
            annotate(&archive, out.as_deref(), Some(captioner.as_ref()))
        }
        Command::Pregenerate {
            archive,
            mode,
            generator,
            out,
        } => pregenerate(&archive, &mode, &generator, &out),
        Command::Serve {
            archive,
            mode,
            generator,
            host,
            content_port,
            image_port,
            miss_policy,
            profile,
            max_in_flight,
            http2,
            pac_out,
        } => {
            let archive = load(&archive)?;
            let serve_mode = serve_mode(&mode)?;
            let mut config = ProxyPairConfig::new(
                SocketAddr::new(host, content_port),
                SocketAddr::new(host, image_port),
                serve_mode,
            );
            config.miss_policy = miss_policy;
            config.shaping = profile;
            config.max_in_flight = max_in_flight;
            config.http2 = http2;
            config.generation = generation_config(&generator);
            serve(archive, build_generator(&generator), config, &pac_out)
        }
        Command::Bench(args) => bench(&args),
        Command::Savings { archive, mode } => {
            let archive = load(&archive)?;
            println!("{}", bandwidth_savings(&archive, &serve_mode(&mode)?));
            Ok(())
        }
        Command::Report(args) => report(&args),
        Command::StudyServe(args) => study_serve(args),
        Command::LintPac { archive } => {
            let archive = load(&archive)?;
            let unmatched = unmatched_images(&archive);
            for url in &unmatched {
                println!("{url}");
            }
            eprintln!(
                "{} of {} manifest images not matched by the PAC image pattern",
                unmatched.len(),
                archive.images.len()
            );
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<PageArchive> {
    archive::load(path).with_context(|| format!("loading archive {}", path.display()))
}

fn save(archive: &PageArchive, dir: &Path) -> Result<()> {
    archive::save(archive, dir).with_context(|| format!("saving archive to {}", dir.display()))?;
    Ok(())
}

/// The archive directory for a path that may name the manifest file.
fn archive_dir(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

fn import_har(har: &Path, page_url: &str, out: &Path) -> Result<()> {
    let bytes = fs::read(har).with_context(|| format!("reading {}", har.display()))?;
    let imported = archive::import_har(&bytes, page_url)?;
    for w in &imported.warnings {
        eprintln!("warning: {w:?}");
    }
    save(&imported.archive, out)?;
    println!(
        "{} entries, {} manifest images -> {}",
        imported.archive.entries.len(),
        imported.archive.images.len(),
        out.display()
    );
    Ok(())
}

fn annotate(path: &Path, out: Option<&Path>, captioner: Option<&dyn Captioner>) -> Result<()> {
    let archive = load(path)?;
    let annotated = annotate_archive(&archive, captioner)?;
    for (url, e) in &annotated.failures {
        eprintln!("warning: captioning {url} failed: {e}");
    }
    let dest = out.map(Path::to_path_buf).unwrap_or_else(|| archive_dir(path));
    save(&annotated.archive, &dest)?;
    let with_context = annotated
        .archive
        .images
        .iter()
        .filter(|i| i.client_prompt.as_deref().is_some_and(|p| !p.is_empty()))
        .count();
    let with_server = annotated.archive.images.iter().filter(|i| i.server_prompt.is_some()).count();
    println!(
        "{} images: {} with client prompts, {} with server prompts",
        annotated.archive.images.len(),
        with_context,
        with_server
    );
    Ok(())
}

fn serve_mode(args: &ModeArgs) -> Result<ServeMode> {
    match (args.mode, &args.hybrid_urls) {
        (Mode::Hybrid, Some(file)) => {
            let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            Ok(ServeMode::hybrid(
                text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')),
            ))
        }
        (Mode::Hybrid, None) => Err(invalid("hybrid mode needs --hybrid-urls")),
        (_, Some(_)) => Err(invalid("--hybrid-urls only applies to hybrid mode")),
        (mode, None) => Ok(ServeMode::new(mode)),
    }
}

fn generation_config(args: &GeneratorArgs) -> GenerationConfig {
    GenerationConfig {
        steps: args.steps,
        guidance_scale: args.guidance_scale,
        seed: Some(args.seed),
        ..Default::default()
    }
}

fn build_generator(args: &GeneratorArgs) -> Arc<dyn ImageGenerator> {
    match (&args.generate_url, args.latency) {
        (Some(url), _) => Arc::new(HttpGenerator::new(url.clone())),
        (None, Some(latency)) => Arc::new(StubGenerator::benchmarking(latency)),
        (None, None) => Arc::new(StubGenerator::new()),
    }
}

fn pregenerate(path: &Path, mode: &ModeArgs, generator_args: &GeneratorArgs, out: &Path) -> Result<()> {
    let archive = load(path)?;
    let mode = serve_mode(mode)?;
    let generator = build_generator(generator_args);
    let base = generation_config(generator_args);
    base.validate()?;
    fs::create_dir_all(out)?;
    let mut index = csv::Writer::from_path(out.join("index.csv"))?;
    index.write_record(["url", "file", "width", "height", "elapsed_ms", "prompt"])?;
    let mut failures = 0;
    for image in &archive.images {
        let Some(prompt) = mode.prompt_for(image) else {
            continue;
        };
        let config = base.with_dimensions_of(image.width, image.height);
        match generator.generate(prompt, &config) {
            Ok(img) => {
                let file = format!("{}.png", &digest_hex(image.url.as_bytes())[..16]);
                fs::write(out.join(&file), &img.png)?;
                index.write_record([
                    image.url.clone(),
                    file,
                    config.width.to_string(),
                    config.height.to_string(),
                    img.elapsed_ms.to_string(),
                    prompt.to_string(),
                ])?;
            }
            Err(e) => {
                failures += 1;
                eprintln!("warning: generating {} failed: {e}", image.url);
            }
        }
    }
    index.flush()?;
    if failures > 0 {
        anyhow::bail!("{failures} images failed to generate");
    }
    Ok(())
}

fn serve(
    archive: PageArchive,
    generator: Arc<dyn ImageGenerator>,
    config: ProxyPairConfig,
    pac_out: &Path,
) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let handle = run_pair(Arc::new(archive), generator, config).await?;
        fs::write(pac_out, handle.pac()).with_context(|| format!("writing {}", pac_out.display()))?;
        println!(
            "content proxy {}, image proxy {}, PAC {}",
            handle.content_addr(),
            handle.image_addr(),
            pac_out.display()
        );
        tokio::signal::ctrl_c().await?;
        eprintln!("draining");
        handle.shutdown().await;
        Ok(())
    })
}

/// Everything needed to rerun a benchmark.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: u32,
    pub source: &'static str,
    pub archives: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub serve_mode: Mode,
    pub profile: String,
    pub latency: String,
    pub runs: u32,
    pub seed: u64,
    pub parallel_connections: usize,
    pub generation_slots: usize,
    pub delta_mode: metrics::DeltaMode,
    pub output_dir: PathBuf,
}

fn bench(args: &BenchArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(invalid("--runs must be at least 1"));
    }
    let mode = serve_mode(&args.mode)?;
    let runs: Vec<LoadMetrics> = if args.simulate {
        if args.archives.is_empty() {
            return Err(invalid("bench --simulate needs at least one archive"));
        }
        let params = SimParams {
            parallel_connections: args.connections,
            generation_slots: args.slots,
            mode,
            seed: args.seed,
            run_index: 0,
        };
        let mut all = Vec::new();
        for path in &args.archives {
            let archive = load(path)?;
            all.extend(simulate_runs(&archive, &args.profile, &args.latency, &params, args.runs)?);
        }
        all
    } else if !args.reports.is_empty() {
        let mut all = Vec::new();
        for path in &args.reports {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            all.extend(ingest_report(&text).with_context(|| format!("in {}", path.display()))?);
        }
        all
    } else {
        return Err(invalid("bench needs --simulate or --reports"));
    };

    let mut deltas = compute_deltas(&runs, Metric::Si, args.delta_mode)?;
    deltas.extend(compute_deltas(&runs, Metric::Plt, args.delta_mode)?);

    fs::create_dir_all(&args.out)?;
    metrics::write_deltas_csv(File::create(args.out.join("deltas.csv"))?, &deltas)?;
    for metric in [Metric::Si, Metric::Plt] {
        let values: Vec<f64> = deltas.iter().filter(|d| d.metric == metric).map(|d| d.delta_ms).collect();
        metrics::write_cdf_csv(File::create(args.out.join(format!("{metric}_delta_cdf.csv")))?, &values)?;
    }
    serde_json::to_writer_pretty(BufWriter::new(File::create(args.out.join("runs.json"))?), &runs)?;
    let manifest = RunManifest {
        version: 1,
        source: if args.simulate { "simulate" } else { "reports" },
        archives: args.archives.clone(),
        reports: args.reports.clone(),
        serve_mode: args.mode.mode,
        profile: args.profile.to_string(),
        latency: args.latency.to_string(),
        runs: args.runs,
        seed: args.seed,
        parallel_connections: args.connections,
        generation_slots: args.slots,
        delta_mode: args.delta_mode,
        output_dir: args.out.clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(args.out.join("manifest.json"))?), &manifest)?;
    for d in &deltas {
        println!("{}\t{}\t{}", d.page_url, d.metric, d.delta_ms);
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    if args.study.is_none() && args.archive.is_none() {
        return Err(invalid("report needs --study/--type or --archive"));
    }
    fs::create_dir_all(&args.out)?;
    if let (Some(dir), Some(study_type)) = (&args.study, args.study_type) {
        let store = StudyStore::open(dir)?;
        let results = store.results(study_type);
        evaluate::write_summaries_csv(File::create(args.out.join("summaries.csv"))?, &results.summaries)?;
        evaluate::write_cdf_csv(File::create(args.out.join("score_cdf.csv"))?, &results.cdf)?;
        evaluate::write_boxplots_csv(File::create(args.out.join("tag_boxplots.csv"))?, &results.boxplots)?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(args.out.join("results.json"))?), &results)?;
        println!("{}: {} items scored", study_type, results.summaries.len());
    }
    if let Some(path) = &args.archive {
        let archive = load(path)?;
        let pairs: Vec<(String, String)> = archive
            .images
            .iter()
            .filter_map(|i| Some((i.client_prompt.clone()?, i.server_prompt.clone()?)))
            .collect();
        let provider: Box<dyn EmbeddingProvider> = match &args.embed_url {
            Some(url) => Box::new(HttpEmbedder::new(url.clone())),
            None => Box::new(StubEmbedder),
        };
        let agreement = agreement_stats(&pairs, provider.as_ref())?;
        for (i, e) in &agreement.dropped {
            eprintln!("warning: pair {i} dropped: {e}");
        }
        metrics::write_cdf_csv(File::create(args.out.join("similarity_cdf.csv"))?, &agreement.similarities)?;
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(args.out.join("similarity.json"))?),
            &agreement.distribution,
        )?;
        let d = &agreement.distribution;
        println!(
            "prompt similarity over {} pairs: median {:.3}, mean {:.3}, p25 {:.3}, p75 {:.3}",
            d.n, d.median, d.mean, d.p25, d.p75
        );
    }
    Ok(())
}

fn study_serve(args: StudyServeArgs) -> Result<()> {
    if args.secret.is_empty() {
        return Err(invalid("--secret (or STUDY_SECRET) must not be empty"));
    }
    let config = StudyConfig {
        quota: args.quota,
        seed: args.seed,
        secret: args.secret.clone(),
        ..Default::default()
    };
    let store = if args.dir.join("tasks.json").exists() {
        StudyStore::open(&args.dir)?
    } else {
        let path = args
            .tasks
            .as_ref()
            .ok_or_else(|| invalid(format!("{} holds no study; pass --tasks", args.dir.display())))?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let tasks: Vec<StudyTask> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        StudyStore::create(&args.dir, tasks, config)?
    };
    let mut service = StudyService::new(Arc::new(store), &args.secret, args.media.clone());
    if let Some(ui) = &args.ui {
        service = service.with_ui(ui.clone());
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await.with_context(|| format!("binding {}", args.addr))?;
        println!("study service on http://{}", listener.local_addr()?);
        study_service::serve_on(service, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}
