//! `senh`: corpus synthesis, SNR mixing, enhancer training, enhancement,
//! metric reports, speaker-verification protocols, and spectrogram images,
//! as one binary with subcommands.
//!
//! Every command is deterministic given (config, seed); exit code 0 on
//! success, 2 on usage errors, 1 on runtime errors. Each run appends a
//! JSON line with its resolved configuration and input hashes to the run
//! log.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::{parse_front_end, RunConfig};
use senh_core::asv::{run_protocol, EnrollCondition};
use senh_core::checkpoint::ModelCheckpoint;
use senh_core::corpus::{
    derive_seed, load_wav, make_noise, mix_at_snr, save_wav, synth_corpus, Condition, Manifest,
    ManifestEntry, NoiseType, Split,
};
use senh_core::dnnse::{collect_noisy_clean_pairs, train_dnnse, training_set_from_manifest};
use senh_core::dsp::{stft, stft_with};
use senh_core::enhance::{DnnSeEnhancer, Enhancer, MmseEnhancer, NoEnhancement, Pix2PixEnhancer};
use senh_core::metrics::build_report;
use senh_core::mmse::enhance_mmse;
use senh_core::pix2pix::{enhance_pix2pix, train as train_gan, write_loss_log};

#[derive(Parser)]
#[command(name = "senh", about = "Speech enhancement and evaluation toolkit", version)]
struct Cli {
    /// Worker threads for data-parallel stages (0 = auto). Use 1 for
    /// fully serial acceptance runs.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Run log path (one JSON line appended per run).
    #[arg(long, global = true, default_value = "senh-runs.jsonl")]
    run_log: PathBuf,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic speech corpus and its manifest.
    Synth(SynthArgs),
    /// Mix noise into clean manifest entries at given SNRs.
    Mix(MixArgs),
    /// Train an enhancer front-end.
    Train(TrainArgs),
    /// Enhance a single wav file.
    Enhance(EnhanceArgs),
    /// Evaluate front-ends over the test conditions (STOI and proxies).
    Eval(EvalArgs),
    /// Run the speaker-verification protocol and report EER.
    Asv(AsvArgs),
    /// Render a log-magnitude spectrogram image.
    Specgram(SpecgramArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    speakers: u32,
    #[arg(long)]
    utts: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Noise type, a comma list, or `all`.
    #[arg(long)]
    noise: String,
    /// Comma list of SNRs in dB, e.g. `0,5,10,15,20`.
    #[arg(long)]
    snr: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which splits to mix (comma list of ubm,tr,enr,tst or `all`).
    #[arg(long, default_value = "all")]
    split: String,
    /// Output manifest path (default: manifest_mixed.jsonl next to input).
    #[arg(long)]
    out_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// `pix2pix` or `dnnse`.
    #[arg(long)]
    method: String,
    /// `ng` or `ns:<noise>`.
    #[arg(long, default_value = "ng")]
    front_end: String,
    #[arg(long)]
    manifest: PathBuf,
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline config overrides, repeatable: --set key=value.
    #[arg(long = "set")]
    sets: Vec<String>,
    /// Seed shortcut (overrides config).
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss log path (default: <out>.losses).
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    /// `mmse`, `pix2pix`, `dnnse` or `none`.
    #[arg(long)]
    method: String,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma list: none | mmse | pix2pix=CKPT | dnnse=CKPT.
    #[arg(long)]
    front_ends: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AsvArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `clean` or `multi`.
    #[arg(long)]
    protocol: String,
    /// none | mmse | pix2pix=CKPT | dnnse=CKPT.
    #[arg(long)]
    enhancer: String,
    #[arg(long)]
    out: PathBuf,
    /// Optional score-file output ("trial_id target|impostor score").
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set")]
    sets: Vec<String>,
}

#[derive(Args)]
struct SpecgramArgs {
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    /// Output image: .pgm always available, .png via the bundled encoder.
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<senh_core::Error> for CliError {
    fn from(e: senh_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .ok();
    }
    let code = match run(&cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let mut log = RunLog::new(&cli.run_log);
    match &cli.cmd {
        Cmd::Synth(a) => cmd_synth(a, &mut log)?,
        Cmd::Mix(a) => cmd_mix(a, &mut log)?,
        Cmd::Train(a) => cmd_train(a, &mut log)?,
        Cmd::Enhance(a) => cmd_enhance(a, &mut log)?,
        Cmd::Eval(a) => cmd_eval(a, &mut log)?,
        Cmd::Asv(a) => cmd_asv(a, &mut log)?,
        Cmd::Specgram(a) => cmd_specgram(a, &mut log)?,
    }
    log.flush(started.elapsed().as_millis() as u64);
    Ok(())
}

// ---------------------------------------------------------------------------
// Run log
// ---------------------------------------------------------------------------

struct RunLog {
    path: PathBuf,
    command: String,
    config: BTreeMap<String, String>,
    input_hashes: BTreeMap<String, String>,
}

impl RunLog {
    fn new(path: &Path) -> Self {
        RunLog {
            path: path.to_path_buf(),
            command: std::env::args().skip(1).collect::<Vec<_>>().join(" "),
            config: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
        }
    }

    fn set_config(&mut self, cfg: BTreeMap<String, String>) {
        self.config = cfg;
    }

    fn hash_input(&mut self, path: &Path) {
        if let Ok(bytes) = std::fs::read(path) {
            let mut h = Sha256::new();
            h.update(&bytes);
            self.input_hashes
                .insert(path.display().to_string(), format!("{:x}", h.finalize()));
        }
    }

    fn flush(&self, wall_ms: u64) {
        let record = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "input_hashes": self.input_hashes,
            "wall_ms": wall_ms,
        });
        if let Ok(mut f) = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
        {
            use std::io::Write;
            let _ = writeln!(f, "{record}");
        }
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_synth(a: &SynthArgs, log: &mut RunLog) -> Result<(), CliError> {
    if a.speakers < 2 {
        return Err(CliError::Usage("need at least 2 speakers".into()));
    }
    let manifest = synth_corpus(&a.out, a.speakers, a.utts, a.seed)?;
    let path = a.out.join("manifest.jsonl");
    manifest.save(&path)?;
    let mut cfg = BTreeMap::new();
    cfg.insert("seed".into(), a.seed.to_string());
    cfg.insert("speakers".into(), a.speakers.to_string());
    cfg.insert("utts".into(), a.utts.to_string());
    log.set_config(cfg);
    println!(
        "wrote {} utterances to {} (manifest {})",
        manifest.entries.len(),
        a.out.display(),
        path.display()
    );
    Ok(())
}

fn parse_noise_list(s: &str) -> Result<Vec<NoiseType>, CliError> {
    if s == "all" {
        return Ok(NoiseType::ALL.to_vec());
    }
    s.split(',')
        .map(|n| {
            NoiseType::parse(n.trim())
                .ok_or_else(|| CliError::Usage(format!("unknown noise type {n:?}")))
        })
        .collect()
}

fn parse_snr_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad SNR value {v:?}")))
        })
        .collect()
}

fn parse_splits(s: &str) -> Result<Vec<Split>, CliError> {
    if s == "all" {
        return Ok(vec![Split::Ubm, Split::EnhancerTrain, Split::Enroll, Split::Test]);
    }
    s.split(',')
        .map(|p| match p.trim() {
            "ubm" => Ok(Split::Ubm),
            "tr" => Ok(Split::EnhancerTrain),
            "enr" => Ok(Split::Enroll),
            "tst" => Ok(Split::Test),
            other => Err(CliError::Usage(format!("unknown split {other:?}"))),
        })
        .collect()
}

fn snr_label(snr: f64) -> String {
    let s = if snr == snr.trunc() {
        format!("{}", snr as i64)
    } else {
        format!("{snr}").replace('.', "p")
    };
    s.replace('-', "m") + "db"
}

fn cmd_mix(a: &MixArgs, log: &mut RunLog) -> Result<(), CliError> {
    let noises = parse_noise_list(&a.noise)?;
    let snrs = parse_snr_list(&a.snr)?;
    let splits = parse_splits(&a.split)?;
    let manifest = Manifest::load(&a.manifest)?;
    log.hash_input(&a.manifest);

    let mixed_dir = manifest.base_dir.join("mixed");
    std::fs::create_dir_all(&mixed_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", mixed_dir.display())))?;

    // Babble sources come from the clean UBM split (speaker-disjoint from
    // the evaluation speakers, mirroring an external speech corpus).
    let babble_pool: Vec<senh_core::corpus::Waveform> = if noises.contains(&NoiseType::Babble) {
        manifest
            .in_split(Split::Ubm)
            .iter()
            .filter(|e| e.is_clean())
            .map(|e| load_wav(manifest.resolve(e)))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    let mut out = Manifest {
        base_dir: manifest.base_dir.clone(),
        entries: manifest.entries.clone(),
    };
    let mut made = 0usize;
    for entry in &manifest.entries {
        if !entry.is_clean() {
            continue;
        }
        let Some(split) = entry.split() else { continue };
        if !splits.contains(&split) {
            continue;
        }
        let clean = load_wav(manifest.resolve(entry))?;
        for &noise_type in &noises {
            for &snr in &snrs {
                let tag = format!("{}__{}_{}", entry.utterance_id, noise_type, snr_label(snr));
                let mix_seed = derive_seed(a.seed, &tag);
                let noise = make_noise(noise_type, clean.len() + 16_000, mix_seed, &babble_pool)?;
                let mixed = mix_at_snr(&clean, &noise, snr, mix_seed)?;
                let rel = PathBuf::from("mixed").join(format!("{tag}.wav"));
                save_wav(manifest.base_dir.join(&rel), &mixed)?;
                out.entries.push(ManifestEntry {
                    utterance_id: tag,
                    speaker_id: entry.speaker_id.clone(),
                    text_id: entry.text_id,
                    session_id: entry.session_id,
                    file_path: rel,
                    condition: Condition::Noisy {
                        noise_type,
                        snr_db: snr,
                    },
                });
                made += 1;
            }
        }
    }
    let out_path = a
        .out_manifest
        .clone()
        .unwrap_or_else(|| manifest.base_dir.join("manifest_mixed.jsonl"));
    out.save(&out_path)?;

    let mut cfg = BTreeMap::new();
    cfg.insert("seed".into(), a.seed.to_string());
    cfg.insert("noise".into(), a.noise.clone());
    cfg.insert("snr".into(), a.snr.clone());
    cfg.insert("split".into(), a.split.clone());
    log.set_config(cfg);
    println!("mixed {made} files; manifest {}", out_path.display());
    Ok(())
}

fn load_run_config(
    config: &Option<PathBuf>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {s:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(CliError::Usage)?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs, log: &mut RunLog) -> Result<(), CliError> {
    let front_end = parse_front_end(&a.front_end).map_err(CliError::Usage)?;
    let cfg = load_run_config(&a.config, &a.sets, a.seed)?;
    let manifest = Manifest::load(&a.manifest)?;
    log.hash_input(&a.manifest);
    if let Some(c) = &a.config {
        log.hash_input(c);
    }
    log.set_config(cfg.resolved());

    match a.method.as_str() {
        "pix2pix" => {
            let gan_cfg = cfg.gan_config(front_end);
            let side = gan_cfg.side;
            let pairs = collect_noisy_clean_pairs(&manifest, front_end)?;
            if pairs.is_empty() {
                return Err(CliError::Runtime(
                    "no matching noisy training entries in the manifest".into(),
                ));
            }
            let mut noisy_mags = Vec::new();
            let mut clean_mags = Vec::new();
            for (noisy_path, clean_path) in &pairs {
                let noisy = load_wav(noisy_path)?;
                let clean = load_wav(clean_path)?;
                noisy_mags.push(stft_with(&noisy, 2 * side, side)?.mag);
                clean_mags.push(stft_with(&clean, 2 * side, side)?.mag);
            }
            let chunk_pairs = senh_core::pix2pix::training_chunks(&noisy_mags, &clean_mags, side)?;

            let result = train_gan(&chunk_pairs, &gan_cfg)?;
            result.checkpoint.save(&a.out)?;
            let loss_path = a
                .loss_log
                .clone()
                .unwrap_or_else(|| a.out.with_extension("losses"));
            write_loss_log(&loss_path, &result.history)?;
            println!(
                "trained {} iterations ({} D steps, {} G steps); checkpoint {}",
                result.history.len(),
                result.d_steps,
                result.g_steps,
                a.out.display()
            );
        }
        "dnnse" => {
            let (x, y) = training_set_from_manifest(&manifest, front_end)?;
            let result = train_dnnse(&x, &y, &cfg.dnn_config(front_end))?;
            result.checkpoint.save(&a.out)?;
            let loss_path = a
                .loss_log
                .clone()
                .unwrap_or_else(|| a.out.with_extension("losses"));
            let mut text = String::new();
            for (i, (train_mse, val_mse)) in result.history.iter().enumerate() {
                text.push_str(&format!("{} {:.6} {:.6}\n", i + 1, train_mse, val_mse));
            }
            std::fs::write(&loss_path, text)
                .map_err(|e| CliError::Runtime(format!("cannot write loss log: {e}")))?;
            println!(
                "trained {} epochs (final val MSE {:.5}); checkpoint {}",
                result.history.len(),
                result.history.last().map(|h| h.1).unwrap_or(f64::NAN),
                a.out.display()
            );
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown method {other:?}: expected pix2pix or dnnse"
            )))
        }
    }
    Ok(())
}

fn cmd_enhance(a: &EnhanceArgs, log: &mut RunLog) -> Result<(), CliError> {
    log.hash_input(&a.input);
    let mut cfg = BTreeMap::new();
    cfg.insert("method".into(), a.method.clone());
    log.set_config(cfg);

    match a.method.as_str() {
        "none" => {
            std::fs::copy(&a.input, &a.out)
                .map_err(|e| CliError::Runtime(format!("copy failed: {e}")))?;
        }
        "mmse" => {
            let w = load_wav(&a.input)?;
            save_wav(&a.out, &enhance_mmse(&w)?)?;
        }
        "pix2pix" | "dnnse" => {
            let ckpt_path = a.ckpt.as_ref().ok_or_else(|| {
                CliError::Usage(format!("--ckpt is required for method {}", a.method))
            })?;
            log.hash_input(ckpt_path);
            let ckpt = ModelCheckpoint::load(ckpt_path)?;
            let w = load_wav(&a.input)?;
            let enhanced = if a.method == "pix2pix" {
                enhance_pix2pix(&w, &ckpt)?
            } else {
                senh_core::dnnse::enhance_dnnse(&w, &ckpt)?
            };
            save_wav(&a.out, &enhanced)?;
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown method {other:?}: expected none, mmse, pix2pix or dnnse"
            )))
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Parse a front-end spec: none | mmse | pix2pix=CKPT | dnnse=CKPT.
fn parse_enhancer(spec: &str) -> Result<Box<dyn Enhancer>, CliError> {
    match spec {
        "none" => Ok(Box::new(NoEnhancement)),
        "mmse" => Ok(Box::new(MmseEnhancer)),
        other => {
            let (method, path) = other.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "bad front-end {other:?}: expected none, mmse, pix2pix=CKPT or dnnse=CKPT"
                ))
            })?;
            let ckpt = ModelCheckpoint::load(Path::new(path))?;
            let stem = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "ckpt".into());
            match method {
                "pix2pix" => Ok(Box::new(Pix2PixEnhancer {
                    name: format!("pix2pix:{stem}"),
                    checkpoint: ckpt,
                })),
                "dnnse" => Ok(Box::new(DnnSeEnhancer {
                    name: format!("dnnse:{stem}"),
                    checkpoint: ckpt,
                })),
                m => Err(CliError::Usage(format!("unknown front-end method {m:?}"))),
            }
        }
    }
}

fn cmd_eval(a: &EvalArgs, log: &mut RunLog) -> Result<(), CliError> {
    let manifest = Manifest::load(&a.manifest)?;
    log.hash_input(&a.manifest);
    let mut cfg = BTreeMap::new();
    cfg.insert("front_ends".into(), a.front_ends.clone());
    log.set_config(cfg);

    let enhancers: Vec<Box<dyn Enhancer>> = a
        .front_ends
        .split(',')
        .map(|s| parse_enhancer(s.trim()))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&dyn Enhancer> = enhancers.iter().map(|b| b.as_ref()).collect();
    let report = build_report(&manifest, &refs)?;
    debug_assert!(report.mean_consistency_error() < 1e-12);

    std::fs::write(&a.out, report.to_csv())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", a.out.display())))?;
    print!("{}", report.to_table());
    println!("csv written to {}", a.out.display());
    Ok(())
}

fn cmd_asv(a: &AsvArgs, log: &mut RunLog) -> Result<(), CliError> {
    let protocol = match a.protocol.as_str() {
        "clean" => EnrollCondition::Clean,
        "multi" => EnrollCondition::MultiCondition,
        other => {
            return Err(CliError::Usage(format!(
                "unknown protocol {other:?}: expected clean or multi"
            )))
        }
    };
    let cfg = load_run_config(&a.config, &a.sets, None)?;
    let manifest = Manifest::load(&a.manifest)?;
    log.hash_input(&a.manifest);
    log.set_config(cfg.resolved());

    let enhancer = parse_enhancer(&a.enhancer)?;
    let result = run_protocol(&manifest, enhancer.as_ref(), protocol, &cfg.asv_config())?;
    std::fs::write(&a.out, result.to_csv())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", a.out.display())))?;
    if let Some(scores) = &a.scores {
        std::fs::write(scores, result.score_lines())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", scores.display())))?;
    }
    print!("{}", result.to_csv());
    Ok(())
}

fn cmd_specgram(a: &SpecgramArgs, log: &mut RunLog) -> Result<(), CliError> {
    log.hash_input(&a.input);
    log.set_config(BTreeMap::new());
    let w = load_wav(&a.input)?;
    let spec = stft(&w)?;

    // 256 rows (the highest band dropped, matching the GAN chunk geometry),
    // frequency ascending upward, 60 dB dynamic range.
    let height = 256usize;
    let width = spec.frames();
    let max_mag = spec
        .mag
        .data()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let mut pixels = vec![0u8; width * height];
    if max_mag > 0.0 {
        for row in 0..height {
            let bin = height - 1 - row;
            for t in 0..width {
                let m = spec.mag.at(bin, t);
                let db = 20.0 * (m / max_mag).max(1e-12).log10();
                let level = ((db + 60.0) / 60.0).clamp(0.0, 1.0);
                pixels[row * width + t] = (level * 255.0).round() as u8;
            }
        }
    }

    let ext = a
        .out
        .extension()
        .map(|e| e.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => {
            let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
                .expect("buffer matches dimensions");
            img.save(&a.out)
                .map_err(|e| CliError::Runtime(format!("png encode failed: {e}")))?;
        }
        _ => {
            let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
            buf.extend_from_slice(&pixels);
            std::fs::write(&a.out, buf)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", a.out.display())))?;
        }
    }
    println!("wrote {} ({}x{})", a.out.display(), width, height);
    Ok(())
}
