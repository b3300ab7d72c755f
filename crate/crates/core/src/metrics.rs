//! Page-load accounting: metric reports, original-vs-generated deltas,
//! bandwidth savings, and a waterfall load simulator.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::archive::PageArchive;
use crate::genclient::{sample_latency, LatencyProfile};
use crate::replay::{Mode, ServeMode};
use crate::shaper::ConnectivityProfile;
use crate::stats;

pub const REPORT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("report schema violation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    SchemaViolation(Vec<FieldError>),
    #[error("no runs for the {0} arm")]
    MissingArm(Arm),
    #[error("archive is not annotated: {0}")]
    UnannotatedArchive(String),
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Original,
    Generated,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Original => "original",
            Arm::Generated => "generated",
        })
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Arm::Original),
            "generated" => Ok(Arm::Generated),
            other => Err(format!("unknown arm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Si,
    Plt,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Si => "si",
            Metric::Plt => "plt",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadMetrics {
    pub page_url: String,
    pub arm: Arm,
    pub run_index: u32,
    pub si_ms: f64,
    pub plt_ms: f64,
    pub bytes_downloaded: u64,
}

impl LoadMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Si => self.si_ms,
            Metric::Plt => self.plt_ms,
        }
    }
}

/// `original - generated`; positive means the generated page is faster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub page_url: String,
    pub metric: Metric,
    pub delta_ms: f64,
}

/// How runs are reduced before differencing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Median per arm, then difference.
    #[default]
    DeltaOfMedians,
    /// Pair runs by `run_index`, difference each pair, take the median.
    MedianOfDeltas,
}

impl FromStr for DeltaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delta_of_medians" => Ok(DeltaMode::DeltaOfMedians),
            "median_of_deltas" => Ok(DeltaMode::MedianOfDeltas),
            other => Err(format!("unknown delta mode `{other}`")),
        }
    }
}

/// Parses a versioned metric report:
///
/// ```json
/// {"version": 1, "page_url": "...", "arm": "original",
///  "runs": [{"si_ms": 1200, "plt_ms": 3400, "bytes": 1048576, "arm": "generated"}]}
/// ```
///
/// A run's `arm` overrides the document-level default; `run_index` defaults
/// to the run's position among runs of the same arm.
pub fn ingest_report(document: &str) -> Result<Vec<LoadMetrics>, MetricsError> {
    let value: Value = serde_json::from_str(document).map_err(|e| {
        MetricsError::SchemaViolation(vec![FieldError {
            field: "$".into(),
            message: e.to_string(),
        }])
    })?;
    let mut errors = Vec::new();
    let mut err = |field: String, message: &str| {
        errors.push(FieldError {
            field,
            message: message.to_string(),
        })
    };

    let Some(obj) = value.as_object() else {
        err("$".into(), "expected an object");
        return Err(MetricsError::SchemaViolation(errors));
    };
    match obj.get("version").and_then(Value::as_u64) {
        Some(REPORT_VERSION) => {}
        Some(_) => err("version".into(), "unsupported version"),
        None => err("version".into(), "required integer"),
    }
    let page_url = match obj.get("page_url").and_then(Value::as_str) {
        Some(u) if !u.is_empty() => u.to_string(),
        _ => {
            err("page_url".into(), "required non-empty string");
            String::new()
        }
    };
    let default_arm = match obj.get("arm") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_str().map(str::parse::<Arm>) {
            Some(Ok(a)) => Some(a),
            _ => {
                err("arm".into(), "must be \"original\" or \"generated\"");
                None
            }
        },
    };
    let Some(runs) = obj.get("runs").and_then(Value::as_array) else {
        err("runs".into(), "required array");
        return Err(MetricsError::SchemaViolation(errors));
    };

    let mut out = Vec::with_capacity(runs.len());
    let mut per_arm: BTreeMap<Arm, u32> = BTreeMap::new();
    for (i, run) in runs.iter().enumerate() {
        let field = |name: &str| format!("runs[{i}].{name}");
        let Some(run) = run.as_object() else {
            err(format!("runs[{i}]"), "expected an object");
            continue;
        };
        let arm = match run.get("arm") {
            None | Some(Value::Null) => default_arm,
            Some(v) => match v.as_str().map(str::parse::<Arm>) {
                Some(Ok(a)) => Some(a),
                _ => {
                    err(field("arm"), "must be \"original\" or \"generated\"");
                    continue;
                }
            },
        };
        let Some(arm) = arm else {
            err(field("arm"), "required when the document has no default arm");
            continue;
        };
        let mut time = |name: &str| match run.get(name).and_then(Value::as_f64) {
            Some(v) if v.is_finite() && v >= 0.0 => Some(v),
            Some(_) => {
                err(field(name), "must be a non-negative number");
                None
            }
            None => {
                err(field(name), "required number");
                None
            }
        };
        let si = time("si_ms");
        let plt = time("plt_ms");
        let bytes = match run.get("bytes") {
            Some(v) => match v.as_u64() {
                Some(b) => Some(b),
                None => {
                    err(field("bytes"), "must be a non-negative integer");
                    None
                }
            },
            None => {
                err(field("bytes"), "required integer");
                None
            }
        };
        let counter = per_arm.entry(arm).or_insert(0);
        let run_index = match run.get("run_index") {
            None => Some(*counter),
            Some(v) => match v.as_u64().and_then(|x| u32::try_from(x).ok()) {
                Some(x) => Some(x),
                None => {
                    err(field("run_index"), "must be a non-negative integer");
                    None
                }
            },
        };
        *counter += 1;
        if let (Some(si_ms), Some(plt_ms), Some(bytes_downloaded), Some(run_index)) = (si, plt, bytes, run_index) {
            out.push(LoadMetrics {
                page_url: page_url.clone(),
                arm,
                run_index,
                si_ms,
                plt_ms,
                bytes_downloaded,
            });
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(MetricsError::SchemaViolation(errors))
    }
}

/// Delta for one page. Runs for other pages than the first run's are ignored.
pub fn compute_delta(runs: &[LoadMetrics], metric: Metric) -> Result<MetricDelta, MetricsError> {
    compute_delta_with(runs, metric, DeltaMode::default())
}

pub fn compute_delta_with(
    runs: &[LoadMetrics],
    metric: Metric,
    mode: DeltaMode,
) -> Result<MetricDelta, MetricsError> {
    let page_url = runs
        .first()
        .map(|r| r.page_url.clone())
        .ok_or(MetricsError::MissingArm(Arm::Original))?;
    let arm_runs = |arm: Arm| -> Vec<&LoadMetrics> {
        runs.iter()
            .filter(|r| r.arm == arm && r.page_url == page_url)
            .collect()
    };
    let original = arm_runs(Arm::Original);
    let generated = arm_runs(Arm::Generated);
    if original.is_empty() {
        return Err(MetricsError::MissingArm(Arm::Original));
    }
    if generated.is_empty() {
        return Err(MetricsError::MissingArm(Arm::Generated));
    }
    let delta_ms = match mode {
        DeltaMode::DeltaOfMedians => {
            let med = |rs: &[&LoadMetrics]| {
                stats::median(&rs.iter().map(|r| r.get(metric)).collect::<Vec<_>>())
                    .expect("non-empty")
            };
            med(&original) - med(&generated)
        }
        DeltaMode::MedianOfDeltas => {
            let diffs: Vec<f64> = original
                .iter()
                .filter_map(|o| {
                    generated
                        .iter()
                        .find(|g| g.run_index == o.run_index)
                        .map(|g| o.get(metric) - g.get(metric))
                })
                .collect();
            stats::median(&diffs).ok_or(MetricsError::MissingArm(Arm::Generated))?
        }
    };
    Ok(MetricDelta {
        page_url,
        metric,
        delta_ms,
    })
}

/// One delta per page present in `runs`, in first-seen page order.
pub fn compute_deltas(
    runs: &[LoadMetrics],
    metric: Metric,
    mode: DeltaMode,
) -> Result<Vec<MetricDelta>, MetricsError> {
    let mut pages: Vec<&str> = Vec::new();
    for r in runs {
        if !pages.contains(&r.page_url.as_str()) {
            pages.push(&r.page_url);
        }
    }
    pages
        .into_iter()
        .map(|page| {
            let subset: Vec<LoadMetrics> = runs.iter().filter(|r| r.page_url == page).cloned().collect();
            compute_delta_with(&subset, metric, mode)
        })
        .collect()
}

/// Bytes not transferred because `mode` generates the image instead.
pub fn bandwidth_savings(archive: &PageArchive, mode: &ServeMode) -> u64 {
    archive
        .images
        .iter()
        .filter(|img| mode.substitutes(img))
        .filter_map(|img| archive.lookup(&img.url, "GET"))
        .map(|e| e.transfer_size)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub parallel_connections: usize,
    pub generation_slots: usize,
    /// Which images the generated arm substitutes.
    pub mode: ServeMode,
    pub seed: u64,
    pub run_index: u32,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            parallel_connections: 6,
            generation_slots: 1,
            mode: ServeMode::new(Mode::GeneratedServer),
            seed: 0,
            run_index: 0,
        }
    }
}

/// Seed for the latency sample of the `image_index`-th substituted image.
pub fn latency_seed(seed: u64, run_index: u32, image_index: usize) -> u64 {
    let mut z = seed
        ^ (u64::from(run_index)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (image_index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-resource completion times from one simulated load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub resources: Vec<ResourceTiming>,
    pub metrics: LoadMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceTiming {
    pub url: String,
    pub bytes: u64,
    pub start_ms: f64,
    pub end_ms: f64,
    pub generated: bool,
    pub above_fold: bool,
}

/// Load model:
///
/// * The root document is fetched first, alone. Every other entry is
///   dispatched in archive order once the root completes.
/// * Network resources occupy one of `parallel_connections`. Each spends
///   one RTT of request overhead, then transfers its bytes; transfers in
///   flight share the link bandwidth equally.
/// * In the generated arm, images the serve mode substitutes skip the
///   network and instead queue FIFO on `generation_slots`, each taking a
///   sampled inference latency.
/// * PLT is the last completion. SI is the byte-weighted mean completion
///   time of the root document and the above-fold images, weighted by
///   their archived transfer sizes in both arms.
pub fn simulate_load(
    archive: &PageArchive,
    profile: &ConnectivityProfile,
    latency: &LatencyProfile,
    arm: Arm,
    params: &SimParams,
) -> Result<LoadMetrics, MetricsError> {
    simulate_waterfall(archive, profile, latency, arm, params).map(|w| w.metrics)
}

pub fn simulate_waterfall(
    archive: &PageArchive,
    profile: &ConnectivityProfile,
    latency: &LatencyProfile,
    arm: Arm,
    params: &SimParams,
) -> Result<Waterfall, MetricsError> {
    if params.parallel_connections == 0 || params.generation_slots == 0 {
        return Err(MetricsError::InvalidParams(
            "parallel_connections and generation_slots must be >= 1".into(),
        ));
    }
    if profile.bandwidth_bps == 0 {
        return Err(MetricsError::InvalidParams("bandwidth must be > 0".into()));
    }
    let root_idx = archive
        .entries
        .iter()
        .position(|e| e.url == archive.page_url && e.is_html())
        .ok_or_else(|| MetricsError::InvalidParams("archive has no root document".into()))?;
    if arm == Arm::Generated {
        if let Some(img) = archive.images.iter().find(|i| i.client_prompt.is_none()) {
            return Err(MetricsError::UnannotatedArchive(format!(
                "image {} has no prompt",
                img.url
            )));
        }
    }

    let rtt = profile.rtt_ms as f64;
    let bytes_per_ms = profile.bandwidth_bps as f64 / 8000.0;

    let n = archive.entries.len();
    let mut start = vec![f64::NAN; n];
    let mut end = vec![f64::NAN; n];
    let mut generated = vec![false; n];
    let mut above_fold = vec![false; n];
    for (i, e) in archive.entries.iter().enumerate() {
        if let Some(img) = archive.image(&e.url).filter(|_| e.is_image) {
            above_fold[i] = img.above_fold;
            if arm == Arm::Generated && params.mode.substitutes(img) {
                generated[i] = true;
            }
        }
    }

    let mut net = FluidLink::new(params.parallel_connections, rtt, bytes_per_ms);
    net.enqueue(root_idx, archive.entries[root_idx].transfer_size);
    let root_done = net.run_until_complete(root_idx, &mut start, &mut end);

    // Generation queue.
    let mut slots = vec![root_done; params.generation_slots];
    let mut gen_count = 0usize;
    for i in 0..n {
        if i == root_idx || !generated[i] {
            continue;
        }
        let ms = sample_latency(latency, latency_seed(params.seed, params.run_index, gen_count)) as f64;
        gen_count += 1;
        let slot = slots
            .iter_mut()
            .min_by(|a, b| a.partial_cmp(b).unwrap())
            .expect("at least one slot");
        start[i] = *slot;
        *slot += ms;
        end[i] = *slot;
    }

    for (i, e) in archive.entries.iter().enumerate() {
        if i != root_idx && !generated[i] {
            net.enqueue(i, e.transfer_size);
        }
    }
    net.run(&mut start, &mut end);

    let plt_ms = end.iter().copied().fold(0.0, f64::max);
    let mut weight = 0.0;
    let mut weighted = 0.0;
    for (i, e) in archive.entries.iter().enumerate() {
        if i == root_idx || above_fold[i] {
            let w = e.transfer_size.max(1) as f64;
            weight += w;
            weighted += w * end[i];
        }
    }
    let si_ms = weighted / weight;
    let bytes_downloaded = archive
        .entries
        .iter()
        .zip(&generated)
        .filter(|(_, g)| !**g)
        .map(|(e, _)| e.transfer_size)
        .sum();

    let resources = archive
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| ResourceTiming {
            url: e.url.clone(),
            bytes: e.transfer_size,
            start_ms: start[i],
            end_ms: end[i],
            generated: generated[i],
            above_fold: i == root_idx || above_fold[i],
        })
        .collect();
    Ok(Waterfall {
        resources,
        metrics: LoadMetrics {
            page_url: archive.page_url.clone(),
            arm,
            run_index: params.run_index,
            si_ms,
            plt_ms,
            bytes_downloaded,
        },
    })
}

#[derive(Debug)]
enum Phase {
    Request { until: f64 },
    Transfer { remaining: f64 },
}

#[derive(Debug)]
struct Flow {
    idx: usize,
    bytes: u64,
    phase: Phase,
}

/// Processor-sharing link with a bounded number of connections.
struct FluidLink {
    connections: usize,
    rtt: f64,
    rate: f64,
    now: f64,
    queue: VecDeque<(usize, u64)>,
    active: Vec<Flow>,
}

const EPS: f64 = 1e-9;

impl FluidLink {
    fn new(connections: usize, rtt: f64, rate: f64) -> Self {
        Self {
            connections,
            rtt,
            rate,
            now: 0.0,
            queue: VecDeque::new(),
            active: Vec::new(),
        }
    }

    fn enqueue(&mut self, idx: usize, bytes: u64) {
        self.queue.push_back((idx, bytes));
    }

    fn admit(&mut self, start: &mut [f64]) {
        while self.active.len() < self.connections {
            let Some((idx, bytes)) = self.queue.pop_front() else {
                break;
            };
            start[idx] = self.now;
            self.active.push(Flow {
                idx,
                bytes,
                phase: Phase::Request {
                    until: self.now + self.rtt,
                },
            });
        }
    }

    /// Advances to the next event; returns false once idle.
    fn step(&mut self, start: &mut [f64], end: &mut [f64]) -> bool {
        self.admit(start);
        if self.active.is_empty() {
            return false;
        }
        let transferring = self
            .active
            .iter()
            .filter(|f| matches!(f.phase, Phase::Transfer { .. }))
            .count();
        let share = if transferring > 0 {
            self.rate / transferring as f64
        } else {
            0.0
        };
        let mut next = f64::INFINITY;
        for f in &self.active {
            let t = match f.phase {
                Phase::Request { until } => until,
                Phase::Transfer { remaining } => self.now + remaining / share,
            };
            next = next.min(t);
        }
        let dt = next - self.now;
        self.now = next;
        let mut done = Vec::new();
        for f in &mut self.active {
            match &mut f.phase {
                Phase::Transfer { remaining } => {
                    *remaining -= share * dt;
                    if *remaining <= EPS * self.rate.max(1.0) {
                        done.push(f.idx);
                    }
                }
                Phase::Request { until } => {
                    if *until <= self.now + EPS {
                        if f.bytes == 0 {
                            done.push(f.idx);
                        } else {
                            f.phase = Phase::Transfer {
                                remaining: f.bytes as f64,
                            };
                        }
                    }
                }
            }
        }
        for idx in &done {
            end[*idx] = self.now;
        }
        self.active.retain(|f| !done.contains(&f.idx));
        true
    }

    fn run_until_complete(&mut self, idx: usize, start: &mut [f64], end: &mut [f64]) -> f64 {
        while end[idx].is_nan() && self.step(start, end) {}
        end[idx]
    }

    fn run(&mut self, start: &mut [f64], end: &mut [f64]) {
        while self.step(start, end) {}
    }
}

/// `runs` simulated loads per arm, original then generated for each run
/// index, with `params.run_index` set per run.
pub fn simulate_runs(
    archive: &PageArchive,
    profile: &ConnectivityProfile,
    latency: &LatencyProfile,
    params: &SimParams,
    runs: u32,
) -> Result<Vec<LoadMetrics>, MetricsError> {
    let mut out = Vec::with_capacity(2 * runs as usize);
    for run_index in 0..runs {
        let params = SimParams {
            run_index,
            ..params.clone()
        };
        for arm in [Arm::Original, Arm::Generated] {
            out.push(simulate_load(archive, profile, latency, arm, &params)?);
        }
    }
    Ok(out)
}

/// Writes `page_url,metric,delta_ms` rows.
pub fn write_deltas_csv<W: io::Write>(out: W, deltas: &[MetricDelta]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["page_url", "metric", "delta_ms"])?;
    for d in deltas {
        w.write_record([d.page_url.clone(), d.metric.to_string(), format!("{}", d.delta_ms)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `value,cumulative_fraction` rows for the empirical CDF of `values`.
pub fn write_cdf_csv<W: io::Write>(out: W, values: &[f64]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "cumulative_fraction"])?;
    for (v, f) in stats::ecdf(values) {
        w.write_record([format!("{v}"), format!("{f}")])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(arm: Arm, idx: u32, plt: f64) -> LoadMetrics {
        LoadMetrics {
            page_url: "https://x.com/".into(),
            arm,
            run_index: idx,
            si_ms: plt / 2.0,
            plt_ms: plt,
            bytes_downloaded: 0,
        }
    }

    #[test]
    fn delta_sign_and_medians() {
        let runs = vec![run(Arm::Original, 0, 4000.0), run(Arm::Generated, 0, 6000.0)];
        assert_eq!(compute_delta(&runs, Metric::Plt).unwrap().delta_ms, -2000.0);

        let same = vec![run(Arm::Original, 0, 10.0), run(Arm::Generated, 0, 10.0)];
        assert_eq!(compute_delta(&same, Metric::Plt).unwrap().delta_ms, 0.0);

        let mut runs = Vec::new();
        for (i, v) in [3000.0, 3100.0, 3050.0, 2900.0, 3000.0].into_iter().enumerate() {
            runs.push(run(Arm::Original, i as u32, v));
        }
        for (i, v) in [2500.0, 2600.0, 2550.0, 2500.0, 2700.0].into_iter().enumerate() {
            runs.push(run(Arm::Generated, i as u32, v));
        }
        assert_eq!(compute_delta(&runs, Metric::Plt).unwrap().delta_ms, 450.0);
        // Pairwise: 500, 500, 500, 400, 300 -> median 500.
        assert_eq!(
            compute_delta_with(&runs, Metric::Plt, DeltaMode::MedianOfDeltas).unwrap().delta_ms,
            500.0
        );
    }

    #[test]
    fn missing_arm() {
        let runs = vec![run(Arm::Original, 0, 1.0)];
        assert!(matches!(
            compute_delta(&runs, Metric::Si),
            Err(MetricsError::MissingArm(Arm::Generated))
        ));
    }

    #[test]
    fn report_ingest() {
        let doc = r#"{"version":1,"page_url":"https://x.com/","arm":"original",
            "runs":[{"si_ms":1,"plt_ms":2,"bytes":3},{"si_ms":1,"plt_ms":2,"bytes":3},
                    {"si_ms":1,"plt_ms":2,"bytes":3},{"si_ms":1,"plt_ms":2,"bytes":3},
                    {"si_ms":1,"plt_ms":2,"bytes":3,"arm":"generated"}]}"#;
        let runs = ingest_report(doc).unwrap();
        assert_eq!(runs.len(), 5);
        assert_eq!(runs[4].arm, Arm::Generated);
        assert_eq!(runs[4].run_index, 0);
        assert_eq!(runs[3].run_index, 3);
    }

    #[test]
    fn report_negative_time_names_field() {
        let doc = r#"{"version":1,"page_url":"p","arm":"original","runs":[{"si_ms":-5,"plt_ms":2,"bytes":3}]}"#;
        match ingest_report(doc) {
            Err(MetricsError::SchemaViolation(errs)) => {
                assert_eq!(errs.len(), 1);
                assert_eq!(errs[0].field, "runs[0].si_ms");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_structural_errors() {
        assert!(matches!(ingest_report("[1,2]"), Err(MetricsError::SchemaViolation(_))));
        assert!(matches!(ingest_report("{"), Err(MetricsError::SchemaViolation(_))));
        let no_arm = r#"{"version":1,"page_url":"p","runs":[{"si_ms":1,"plt_ms":2,"bytes":3}]}"#;
        match ingest_report(no_arm) {
            Err(MetricsError::SchemaViolation(errs)) => assert_eq!(errs[0].field, "runs[0].arm"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
