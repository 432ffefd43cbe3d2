use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lanstyle::features::{snr_db, train_autoencoder, write_wav, AeConfig, AeTrainConfig, FeatureKind};
use lanstyle::synth::{bench, Synthesizer};
use lanstyle::text::{Language, Scheme, Tokenizer};
use lanstyle::training::checkpoint::{load_autoencoder, save_autoencoder};
use lanstyle::training::toy::{generate_toy_corpus, ToyConfig};
use lanstyle::training::{
    corpus_mels, export_embeddings, extract_features, read_kv, read_manifest, Checkpoint, FeatureSetInfo, FeatureStore,
    Settings, Trainer,
};
use lanstyle::Error;

#[derive(Parser)]
#[command(name = "lanstyle", version, about = "Multilingual style-adaptive text-to-speech toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print results as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base settings the config file and flags are applied to.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Convert text into phoneme and style rows.
    Tokenize(TokenizeArgs),
    /// Write a synthetic corpus with exact durations.
    GenToy(GenToyArgs),
    /// Cache log-mel (or latent) features for a manifest.
    ExtractFeatures(ExtractArgs),
    /// Train the feature autoencoder.
    TrainAe(TrainAeArgs),
    /// Train the acoustic model.
    Train(TrainArgs),
    /// Synthesize a WAV from text.
    Synth(SynthArgs),
    /// Write the phoneme embedding table as CSV.
    ExportEmbeddings(ExportArgs),
    /// Time acoustic-model and vocoder stages and report parameter counts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    lang: Language,
    #[arg(long, default_value = "ipa")]
    scheme: Scheme,
    text: String,
}

#[derive(Args)]
struct GenToyArgs {
    /// Number of utterances.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Output directory for manifest.jsonl and wavs/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Feature cache directory.
    #[arg(long)]
    out: PathBuf,
    /// Autoencoder file; encodes latent features instead of mel.
    #[arg(long)]
    ae: Option<PathBuf>,
}

#[derive(Args)]
struct TrainAeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output autoencoder file.
    #[arg(long)]
    out: PathBuf,
    /// Manifest of held-out audio for the reconstruction SNR.
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Feature cache directory written by extract-features.
    #[arg(long)]
    features: PathBuf,
    /// Output directory for checkpoints and loss_history.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    /// Autoencoder file, required for latent features.
    #[arg(long)]
    ae: Option<PathBuf>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    lang: Language,
    #[arg(long)]
    text: String,
    #[arg(long)]
    out: PathBuf,
    /// `predicted`, `gt` (looked up in --manifest) or comma-separated frames.
    #[arg(long, default_value = "predicted")]
    durations: String,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    gl_iters: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 8.0)]
    seconds: f64,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long)]
    gl_iters: Option<usize>,
}

/// Failure reported on stderr and through the exit status.
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl Failure {
    fn input(kind: &str, message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: kind.into(),
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_io() => 4,
            Error::ShapeMismatch(_)
            | Error::OddEmbeddingDim(_)
            | Error::KindMismatch { .. }
            | Error::InvalidConfig(_)
            | Error::Checkpoint(_)
            | Error::NaNLoss(_) => 3,
            _ => 2,
        };
        Self {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

struct Ctx {
    json: bool,
    seed: Option<u64>,
    settings: Settings,
}

impl Ctx {
    fn print(&self, human: String, value: serde_json::Value) {
        if self.json {
            println!("{value}");
        } else {
            println!("{human}");
        }
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn tokenize(ctx: &Ctx, a: TokenizeArgs) -> CmdResult {
    let tok = Tokenizer::builtin();
    let seq = tok.tokenize(&a.text, a.lang, a.scheme)?;
    let (phonemes, styles) = tok.render(&seq);
    let markers: Vec<&str> = seq
        .style_ids
        .iter()
        .map(|&id| tok.styles().entry(id).map_or("?", |e| e.marker.as_str()))
        .collect();
    let digits: Vec<&str> = styles.split(' ').collect();
    ctx.print(
        format!("{phonemes}\n{styles}"),
        json!({
            "phonemes": tok.symbols(&seq),
            "styles": digits,
            "ids": {"phonemes": seq.phoneme_ids, "styles": seq.style_ids, "style_markers": markers},
        }),
    );
    Ok(())
}

fn gen_toy(ctx: &Ctx, a: GenToyArgs) -> CmdResult {
    let seed = ctx.seed.unwrap_or(ctx.settings.train.seed);
    let cfg = ToyConfig {
        mel: ctx.settings.mel.clone(),
        ..ToyConfig::default()
    };
    let records = generate_toy_corpus(a.n, seed, &a.out, &Tokenizer::builtin(), &cfg)?;
    let manifest = a.out.join("manifest.jsonl");
    ctx.print(
        format!("wrote {} utterances to {}", records.len(), manifest.display()),
        json!({"utterances": records.len(), "manifest": manifest, "seed": seed}),
    );
    Ok(())
}

fn extract(ctx: &Ctx, a: ExtractArgs) -> CmdResult {
    let records = read_manifest(&a.manifest)?;
    let (ae, mel) = match &a.ae {
        Some(path) => {
            let (ae, mel) = load_autoencoder(path)?;
            (Some(ae), mel)
        }
        None => (None, ctx.settings.mel.clone()),
    };
    let info = extract_features(&records, &manifest_dir(&a.manifest), &mel, ae.as_ref(), &a.out)?;
    ctx.print(
        format!("wrote {} {} features (dim {}) to {}", info.count, info.kind, info.dim, a.out.display()),
        serde_json::to_value(&info).expect("serializable"),
    );
    Ok(())
}

fn train_ae(ctx: &Ctx, a: TrainAeArgs) -> CmdResult {
    let s = &ctx.settings;
    let records = read_manifest(&a.manifest)?;
    let mels = corpus_mels(&records, &manifest_dir(&a.manifest), &s.mel)?;
    let cfg = AeConfig::mel(s.mel.n_mels, a.latent_dim.unwrap_or(s.ae_latent_dim));
    let train = AeTrainConfig {
        steps: a.steps.unwrap_or(s.ae_steps),
        lr: s.ae_lr,
        seed: ctx.seed.unwrap_or(s.train.seed),
        ..AeTrainConfig::default()
    };
    let (ae, report) = train_autoencoder(&mels, cfg, &train)?;
    save_autoencoder(&ae, &s.mel, &a.out)?;
    let snr = match &a.holdout {
        Some(h) => {
            let held = read_manifest(h)?;
            let mels = corpus_mels(&held, &manifest_dir(h), &s.mel)?;
            let mut per_file = Vec::with_capacity(mels.len());
            for m in &mels {
                per_file.push(snr_db(m, &ae.reconstruct(m)?));
            }
            Some(per_file)
        }
        None => None,
    };
    let mut human = format!(
        "autoencoder R={} latent={} decoder params={} loss {:.5} -> {:.5}, saved to {}",
        ae.ratio(),
        ae.config.latent_dim,
        ae.decoder_param_count(),
        report.initial_loss,
        report.final_loss,
        a.out.display()
    );
    let min_snr = snr.as_ref().map(|v| v.iter().cloned().fold(f64::INFINITY, f64::min));
    if let (Some(v), Some(min)) = (&snr, min_snr) {
        human.push_str(&format!(
            "\nheld-out SNR: min {min:.2} dB, mean {:.2} dB over {} files",
            v.iter().sum::<f64>() / v.len() as f64,
            v.len()
        ));
    }
    ctx.print(
        human,
        json!({
            "ratio": ae.ratio(),
            "latent_dim": ae.config.latent_dim,
            "decoder_params": ae.decoder_param_count(),
            "encoder_params": ae.encoder_param_count(),
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
            "holdout_snr_db": snr,
            "holdout_min_snr_db": min_snr,
        }),
    );
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> CmdResult {
    let tok = Tokenizer::builtin();
    let records = read_manifest(&a.manifest)?;
    let info = FeatureSetInfo::read(&a.features)?;
    let store = FeatureStore::load_dir(&a.features, &records, info.frames_per_step)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(Checkpoint::load(path)?)?;
            if let Some(steps) = a.steps {
                t.config.max_steps = steps;
            }
            t
        }
        None => {
            let mut cfg = ctx.settings.train.clone();
            cfg.feature_kind = info.kind;
            if let Some(steps) = a.steps {
                cfg.max_steps = steps;
            }
            let ae = match (info.kind, &a.ae) {
                (FeatureKind::Latent, Some(path)) => {
                    let (ae, _) = load_autoencoder(path)?;
                    if ae.config.latent_dim != info.dim || ae.ratio() != info.frames_per_step {
                        return Err(Error::Checkpoint(format!(
                            "autoencoder (latent {}, R={}) does not match the cached features (dim {}, R={})",
                            ae.config.latent_dim,
                            ae.ratio(),
                            info.dim,
                            info.frames_per_step
                        ))
                        .into());
                    }
                    Some(ae)
                }
                (FeatureKind::Latent, None) => {
                    return Err(Error::InvalidConfig("latent features need --ae".into()).into());
                }
                (FeatureKind::Mel, _) => None,
            };
            Trainer::new(cfg, info.mel.clone(), &tok, info.dim, ae)?
        }
    };
    let every = (trainer.config.max_steps / 10).max(1);
    let quiet = ctx.json;
    trainer.run(&records, &tok, &store, Some(&a.out), |r| {
        if !quiet && (r.step % every == 0 || r.step == 1) {
            println!(
                "step {:>6}  loss {:.5}  tts {:.5}  dur {:.5}  lr {:.3e}",
                r.step, r.loss_total, r.loss_tts, r.loss_d, r.lr
            );
        }
    })?;
    let last = trainer.history.last().copied();
    let ckpt = a.out.join("model.lsck");
    ctx.print(
        format!("trained to step {}; checkpoint {}", trainer.step, ckpt.display()),
        json!({
            "step": trainer.step,
            "checkpoint": ckpt,
            "loss_history": a.out.join("loss_history.csv"),
            "final_loss": last.map(|r| r.loss_total),
            "parameters": trainer.model.parameter_count(),
        }),
    );
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> CmdResult {
    let tok = Tokenizer::builtin();
    let ck = Checkpoint::load(&a.ckpt)?;
    let synth = Synthesizer::new(&ck, &tok, a.gl_iters.unwrap_or(ctx.settings.gl_iters))?;
    let tokens = synth.tokenize(&a.text, a.lang)?;
    let given: Option<Vec<usize>> = match a.durations.as_str() {
        "predicted" => None,
        "gt" => {
            let path = a
                .manifest
                .as_ref()
                .ok_or_else(|| Failure::input("MissingManifest", "--durations gt needs --manifest"))?;
            let rec = read_manifest(path)?
                .into_iter()
                .find(|r| r.language == a.lang && r.text == a.text)
                .ok_or_else(|| Failure::input("MissingRecord", format!("no {} record with text {:?}", a.lang, a.text)))?;
            Some(rec.durations.ok_or(Error::MissingDurations(rec.id))?)
        }
        list => Some(
            list.split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| Failure::input("BadDurations", format!("cannot parse durations {list:?}")))?,
        ),
    };
    let out = synth.run(&tokens, given.as_deref())?;
    write_wav(&a.out, &out.waveform)?;
    let seconds = out.waveform.seconds();
    let t = out.timings;
    let total_ms = t.acoustic_ms + t.ae_decoder_ms.unwrap_or(0.0) + t.griffin_lim_ms;
    ctx.print(
        format!("T={} frames, {seconds:.3} s audio, synthesis {total_ms:.1} ms -> {}", out.frames, a.out.display()),
        json!({
            "frames": out.frames,
            "seconds": seconds,
            "synthesis_ms": total_ms,
            "acoustic_ms": t.acoustic_ms,
            "ae_decoder_ms": t.ae_decoder_ms,
            "griffin_lim_ms": t.griffin_lim_ms,
            "durations": out.durations.frames(),
            "out": a.out,
        }),
    );
    Ok(())
}

fn export(ctx: &Ctx, a: ExportArgs) -> CmdResult {
    let tok = Tokenizer::builtin();
    let ck = Checkpoint::load(&a.ckpt)?;
    let rows = export_embeddings(&ck.model, &tok, &a.out)?;
    ctx.print(
        format!("wrote {rows} embeddings of dim {} to {}", ck.model.config.embedding_dim, a.out.display()),
        json!({"rows": rows, "dim": ck.model.config.embedding_dim, "out": a.out}),
    );
    Ok(())
}

fn bench_cmd(ctx: &Ctx, a: BenchArgs) -> CmdResult {
    let tok = Tokenizer::builtin();
    let ck = Checkpoint::load(&a.ckpt)?;
    let synth = Synthesizer::new(&ck, &tok, a.gl_iters.unwrap_or(ctx.settings.gl_iters))?;
    let report = bench(&synth, a.seconds, a.repeat)?;
    ctx.print(report.table(), serde_json::to_value(&report).expect("serializable"));
    Ok(())
}

fn settings(cli: &Cli) -> Result<Settings, Failure> {
    let mut s = match cli.preset {
        Preset::Desk => Settings::desk(),
        Preset::Paper => Settings::paper(),
    };
    if let Some(path) = &cli.config {
        s.apply(&read_kv(path)?)?;
    }
    if let Some(seed) = cli.seed {
        s.train.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn run(cli: Cli) -> CmdResult {
    let ctx = Ctx {
        json: cli.json,
        seed: cli.seed,
        settings: settings(&cli)?,
    };
    match cli.command {
        Command::Tokenize(a) => tokenize(&ctx, a),
        Command::GenToy(a) => gen_toy(&ctx, a),
        Command::ExtractFeatures(a) => extract(&ctx, a),
        Command::TrainAe(a) => train_ae(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::ExportEmbeddings(a) => export(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
    }
}

fn fail(f: Failure) -> ExitCode {
    let line = json!({"error": f.kind, "code": f.code, "message": f.message.replace('\n', " ")});
    eprintln!("{line}");
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            return fail(Failure::input("Usage", first.trim_start_matches("error: ")));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}
