//! End-to-end scenario runner: drives the exfiltration client against the
//! in-process server on a simulated clock, meters the synthetic traffic,
//! and scores the resulting flows with every model in the models directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use dohcore::client::{self, ExfilConfig, TransmissionStats};
use dohcore::detect::{load_models_dir, predict_all, ModelReport};
use dohcore::flowmeter::{export_csv, features, FeatureVector, Flow, FlowMeter, MeterConfig};
use dohcore::server::{ExfilServer, ReconstructionResult};

use crate::clock::{SimClock, VIRTUAL_START_EPOCH};
use crate::loopback::{LoopbackTransport, RESOLVER_IP};
use crate::predict::render_prediction_log;
use crate::timefmt::run_stamp;

/// Knobs for one scenario run.
pub struct ScenarioOptions {
    /// Directory the `run-<stamp>/<scenario>` tree is created under.
    pub out_root: PathBuf,
    /// Overrides the config's RNG seed when set.
    pub seed: Option<u64>,
    /// Fraction of each virtual delay really slept; 0 runs instantly.
    pub time_scale: f64,
    /// Directory scanned for `*_model.json` bundles.
    pub models_dir: PathBuf,
}

impl ScenarioOptions {
    pub fn new(out_root: impl Into<PathBuf>) -> Self {
        ScenarioOptions {
            out_root: out_root.into(),
            seed: None,
            time_scale: 0.0,
            models_dir: PathBuf::from("models"),
        }
    }
}

/// Everything a finished run produced, with paths into the run directory.
pub struct ScenarioResult {
    pub scenario: String,
    pub run_dir: PathBuf,
    pub session_id: String,
    pub stats: TransmissionStats,
    pub reconstruction: ReconstructionResult,
    /// SHA-256 of the input file, for comparison against the reconstruction.
    pub input_digest: String,
    pub flows_csv: PathBuf,
    pub client_log: PathBuf,
    pub predictor_log: PathBuf,
    /// Feature vectors for every metered flow, in CSV order.
    pub vectors: Vec<FeatureVector>,
    /// How many of those flows touch the resolver endpoint.
    pub resolver_flows: usize,
    pub reports: Vec<ModelReport>,
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Resolves a test-file path from the config: tries it as given, then
/// relative to the config's directory, then relative to that directory's
/// parent (configs typically sit in a sibling directory of the data).
fn resolve_input(path: &str, config_path: &Path) -> Result<PathBuf> {
    let direct = PathBuf::from(path);
    if direct.exists() {
        return Ok(direct);
    }
    if let Some(dir) = config_path.parent() {
        let beside = dir.join(path);
        if beside.exists() {
            return Ok(beside);
        }
        if let Some(root) = dir.parent() {
            let above = root.join(path);
            if above.exists() {
                return Ok(above);
            }
        }
    }
    bail!("test file not found: {path}");
}

/// Replays packet events through a flow meter, flushing idle flows at every
/// `cleanup_period` boundary of the virtual clock and draining the rest at
/// the end. Returned flows are ordered by first packet time.
pub fn meter_events(
    events: Vec<dohcore::flowmeter::PacketEvent>,
    start: f64,
    cfg: MeterConfig,
) -> Vec<Flow> {
    let period = cfg.cleanup_period;
    let mut meter = FlowMeter::new(cfg);
    let mut flows = Vec::new();
    let mut next_flush = start + period;
    for ev in events {
        while ev.ts >= next_flush {
            flows.extend(meter.flush(next_flush));
            next_flush += period;
        }
        if let Some(done) = meter.ingest(ev) {
            flows.push(done);
        }
    }
    flows.extend(meter.drain());
    flows.sort_by(|a, b| a.first_ts.total_cmp(&b.first_ts));
    flows
}

/// Runs the scenario described by `config_path` and writes the full run
/// directory: client log, flow CSV, predictor log, reconstruction report.
pub fn run_scenario(config_path: &Path, opts: &ScenarioOptions) -> Result<ScenarioResult> {
    let scenario = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let cfg = ExfilConfig::from_json(&text)
        .with_context(|| format!("parsing config {}", config_path.display()))?;

    let input_rel = cfg
        .test_files
        .first()
        .cloned()
        .context("config lists no test_files")?;
    let input_path = resolve_input(&input_rel, config_path)?;
    let input = fs::read(&input_path)
        .with_context(|| format!("reading test file {}", input_path.display()))?;
    let input_digest = sha256_hex(&input);

    let run_dir = opts
        .out_root
        .join(format!("run-{}", run_stamp(VIRTUAL_START_EPOCH)))
        .join(&scenario);
    let logs_dir = run_dir.join("logs");
    fs::create_dir_all(&logs_dir)
        .with_context(|| format!("creating {}", logs_dir.display()))?;

    let server = ExfilServer::new(cfg.framing_config(), cfg.pipeline_config());
    let mut clock = SimClock::new(VIRTUAL_START_EPOCH, opts.time_scale);
    let mut transport = LoopbackTransport::new(&server, clock.shared_now());

    let client_log = logs_dir.join("client.log");
    let seed = opts.seed.unwrap_or(cfg.rng_seed);
    let (stats, session_id) = {
        let file = fs::File::create(&client_log)
            .with_context(|| format!("creating {}", client_log.display()))?;
        let mut log = BufWriter::new(file);
        client::connectivity_check(&mut transport, &cfg.doh_servers[0])
            .context("connectivity check failed")?;
        let out = client::exfiltrate(&input, &cfg, &mut transport, &mut clock, seed, &mut log)
            .context("exfiltration failed")?;
        log.flush()?;
        out
    };
    let end_time = dohcore::client::Clock::now(&clock);
    let events = std::mem::take(&mut transport.events);
    drop(transport);

    let flows = meter_events(events, VIRTUAL_START_EPOCH, MeterConfig::default());
    let vectors: Vec<FeatureVector> = flows
        .iter()
        .map(features)
        .collect::<Result<_, _>>()
        .context("computing flow features")?;

    let flows_csv = run_dir.join("flows.csv");
    {
        let file = fs::File::create(&flows_csv)
            .with_context(|| format!("creating {}", flows_csv.display()))?;
        let mut out = BufWriter::new(file);
        export_csv(&vectors, &mut out, None).context("writing flow CSV")?;
        out.flush()?;
    }

    let resolver_vectors: Vec<FeatureVector> = vectors
        .iter()
        .filter(|v| v.source_ip == RESOLVER_IP || v.destination_ip == RESOLVER_IP)
        .cloned()
        .collect();

    let bundles = load_models_dir(&opts.models_dir)
        .with_context(|| format!("loading models from {}", opts.models_dir.display()))?;
    if bundles.is_empty() {
        bail!("no models found in {}", opts.models_dir.display());
    }
    let reports = predict_all(&bundles, &resolver_vectors).context("scoring flows")?;

    let predictor_log = logs_dir.join(format!(
        "predictor_{}-{}.log",
        scenario, end_time as u64
    ));
    {
        let file = fs::File::create(&predictor_log)
            .with_context(|| format!("creating {}", predictor_log.display()))?;
        let mut out = BufWriter::new(file);
        render_prediction_log(
            &bundles,
            &opts.models_dir,
            &flows_csv,
            0,
            &reports,
            end_time,
            &mut out,
        )?;
        out.flush()?;
    }

    let reconstruction = server
        .reassemble(&session_id)
        .with_context(|| format!("reassembling session {session_id}"))?;
    let report_path = run_dir.join("reconstruction.txt");
    write_reconstruction_report(
        &report_path,
        &session_id,
        &reconstruction,
        &input_digest,
        &server.log_lines(),
    )?;

    Ok(ScenarioResult {
        scenario,
        run_dir,
        session_id,
        stats,
        reconstruction,
        input_digest,
        flows_csv,
        client_log,
        predictor_log,
        vectors,
        resolver_flows: resolver_vectors.len(),
        reports,
    })
}

fn write_reconstruction_report(
    path: &Path,
    session_id: &str,
    rec: &ReconstructionResult,
    input_digest: &str,
    server_log: &[String],
) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("session: {session_id}\n"));
    text.push_str(&format!("complete: {}\n", rec.complete));
    text.push_str(&format!("chunks: {}\n", rec.chunks_received));
    text.push_str(&format!("bytes: {}\n", rec.bytes.len()));
    text.push_str(&format!("sha256: {}\n", rec.digest));
    text.push_str(&format!("input sha256: {input_digest}\n"));
    text.push_str(&format!("match: {}\n", rec.digest == input_digest));
    text.push_str(&format!("elapsed: {:.2}s\n", rec.elapsed));
    if rec.missing.is_empty() {
        text.push_str("missing: none\n");
    } else {
        let seqs: Vec<String> = rec.missing.iter().map(|s| s.to_string()).collect();
        text.push_str(&format!("missing: {}\n", seqs.join(",")));
    }
    text.push_str("server log:\n");
    for line in server_log {
        text.push_str(line);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
