//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use lanstyle::autograd::Mat;
use lanstyle::features::{
    extract_mel, frame_count, griffin_lim, griffin_lim_traced, snr_db, train_autoencoder, AeConfig, AeTrainConfig,
    Autoencoder, FeatureKind, MelConfig, Waveform,
};
use lanstyle::model::{
    duration_loss, fuse, length_regulate, total_loss, tts_loss, AcousticFeature, AcousticModel, Durations,
    EmbeddingSequence, ModelConfig,
};
use lanstyle::synth::{bench, Synthesizer};
use lanstyle::text::{Language, Scheme, TokenSequence, Tokenizer};
use lanstyle::training::oracle::Oracle;
use lanstyle::training::toy::{build_toy_corpus, tone_of, toy_phoneme_ids, ToyConfig, ToyUtterance};
use lanstyle::training::{batch_objective, Batch, Checkpoint, FeatureStore, LossRow, Settings, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Report {
    failed: usize,
}

impl Report {
    fn run(&mut self, id: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let took = t0.elapsed();
        let out = match out {
            Ok(detail) if took > budget => Err(format!("{detail}; over the {:.0?} budget", budget)),
            other => other,
        };
        match out {
            Ok(detail) => println!("criterion {id}: PASS ({:.2} s) {detail}", took.as_secs_f64()),
            Err(detail) => {
                self.failed += 1;
                println!("criterion {id}: FAIL ({:.2} s) {detail}", took.as_secs_f64());
            }
        }
    }
}

fn main() {
    let mut report = Report { failed: 0 };
    let tok = Tokenizer::builtin();
    report.run("1 tokenizer golden suite", Duration::from_secs(1), || tokenizer_suite(&tok));
    report.run("2 formula unit suite", Duration::from_secs(1), formula_suite);
    report.run("3 length-regulation invariant", Duration::from_secs(5), length_regulation);
    report.run("4 full-model gradient check", Duration::from_secs(60), gradient_check);

    let toy = ToyConfig::default();
    let corpus = build_toy_corpus(8, 7, &tok, &toy).expect("toy corpus");
    let work = tempfile::tempdir().expect("temp dir");
    let mut trained: Option<Checkpoint> = None;
    let mut first_csv = None;
    report.run("5 overfit and oracle check", Duration::from_secs(600), || {
        let (ck, csv, detail) = overfit_and_oracle(&tok, &toy, &corpus, &work.path().join("run_a"))?;
        trained = Some(ck);
        first_csv = Some(csv);
        Ok(detail)
    });
    report.run("6 style necessity", Duration::from_secs(60), || {
        style_necessity(&tok, &corpus, trained.as_ref().ok_or("criterion 5 produced no model")?)
    });
    let mut latent: Option<Checkpoint> = None;
    report.run("7 autoencoder backend", Duration::from_secs(600), || {
        let (ck, detail) = autoencoder_backend(&tok, &toy, &corpus)?;
        latent = Some(ck);
        Ok(detail)
    });
    report.run("8 DSP suite", Duration::from_secs(30), dsp_suite);
    report.run("9 reproducibility", Duration::from_secs(600), || {
        reproducibility(&tok, &toy, &corpus, work.path(), first_csv.as_deref().ok_or("criterion 5 wrote no loss CSV")?)
    });
    report.run("10 bench command", Duration::from_secs(60), || {
        bench_check(&tok, trained.as_ref().ok_or("criterion 5 produced no model")?, latent.as_ref())
    });

    if report.failed > 0 {
        println!("{} criteria failed", report.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}

fn tokenizer_suite(tok: &Tokenizer) -> Outcome {
    let cases = [
        (Language::En, "Good Day", "| g o o d | d a y |", "| g u d | d ei |", "0 0 1 0 0 0 1 0"),
        (Language::Zh, "ni3 hao3", "| n i | h a o |", "| n i | x au |", "0 0 3 0 0 3 0"),
    ];
    for (lang, text, alphabet, ipa, styles) in cases {
        let a = tok.tokenize(text, lang, Scheme::Alphabet).map_err(|e| e.to_string())?;
        ensure(tok.render(&a).0 == alphabet, format!("alphabet row of {text:?}: {}", tok.render(&a).0))?;
        let i = tok.tokenize(text, lang, Scheme::Ipa).map_err(|e| e.to_string())?;
        let (p, s) = tok.render(&i);
        ensure(p == ipa && s == styles, format!("IPA rows of {text:?}: {p} / {s}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let words: Vec<&str> = tok.lexicon().words().collect();
    let finals: Vec<&str> = tok.lexicon().pinyin_finals().collect();
    let initials: Vec<&str> = std::iter::once("").chain(tok.lexicon().pinyin_initials()).collect();
    let (mut en, mut zh) = (0, 0);
    while en < 200 {
        let n = rng.gen_range(1..5);
        let text: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect();
        let seq = tok.tokenize_ipa(&text.join(" "), Language::En).map_err(|e| e.to_string())?;
        ensure(seq.phoneme_ids.len() == seq.style_ids.len(), format!("length mismatch for {text:?}"))?;
        en += 1;
    }
    let mut tried = 0;
    while zh < 200 && tried < 100_000 {
        tried += 1;
        let n = rng.gen_range(1..5);
        let text: Vec<String> = (0..n)
            .map(|_| {
                let i = initials[rng.gen_range(0..initials.len())];
                let f = finals[rng.gen_range(0..finals.len())];
                format!("{i}{f}{}", rng.gen_range(1..=5))
            })
            .collect();
        // random initial/final pairs are not all valid pinyin; score the valid ones
        if let Ok(seq) = tok.tokenize_ipa(&text.join(" "), Language::Zh) {
            ensure(seq.phoneme_ids.len() == seq.style_ids.len(), format!("length mismatch for {text:?}"))?;
            zh += 1;
        }
    }
    ensure(zh == 200, format!("only {zh} valid Mandarin inputs generated"))?;
    Ok("golden rows exact; 200 + 200 fuzzed inputs keep phoneme and style rows equal".into())
}

fn unmasked(v: f64) -> EmbeddingSequence {
    EmbeddingSequence::unmasked(Mat::from_elem((1, 1), v))
}

fn formula_suite() -> Outcome {
    let f = |a: f64, b: f64| fuse(&unmasked(a), &unmasked(b)).unwrap().data[[0, 0]];
    ensure(f(0.0, 0.0) == 0.0, "fuse(0, 0) != 0")?;
    ensure(f(1.3, -1.3) == 0.0, "fuse(a, -a) != 0")?;
    let closed = 1f64.tanh() / (1.0 + (-1f64).exp());
    let got = f(1.0, 0.0);
    ensure((got - closed).abs() < 1e-6, format!("tanh(1)σ(1) = {got}, closed form {closed}"))?;

    let gt = Durations::new(vec![1, 2, 4]);
    let exact: Vec<f64> = gt.frames().iter().map(|&d| (d as f64).ln()).collect();
    let mask = [true; 3];
    ensure(duration_loss(&gt, &exact, &mask).unwrap() == 0.0, "duration loss at the target is not 0")?;
    let shifted: Vec<f64> = exact.iter().map(|v| v - 1.0).collect();
    ensure((duration_loss(&gt, &shifted, &mask).unwrap() - 1.0).abs() < 1e-12, "unit log error is not 1")?;
    let ln2 = duration_loss(&Durations::new(vec![2]), &[0.0], &[true]).unwrap();
    ensure((ln2 - 2f64.ln()).abs() < 1e-9, format!("duration loss {ln2} != ln 2"))?;

    let y = AcousticFeature::new(Mat::zeros((2, 2)), FeatureKind::Mel);
    let p = AcousticFeature::new(Mat::from_shape_vec((2, 2), vec![1.0, 0.0, 1.0, 0.0]).unwrap(), FeatureKind::Mel);
    ensure(tts_loss(&y, &p).unwrap() == 0.5, "squared-error example is not 0.5")?;

    // the training objective is the plain sum of its two parts
    let model = AcousticModel::new(
        ModelConfig {
            embedding_dim: 8,
            ffn_hidden: 16,
            ..ModelConfig::desk(6, 4, 3, FeatureKind::Mel)
        },
        1,
    )
    .unwrap();
    let batch = one_item_batch(&[1, 2, 3], &[1, 2, 1], vec![1, 2, 1], Mat::from_elem((3, 4), 0.3));
    let (l, _) = batch_objective(&model, &batch, 1.0, 1.0, None).unwrap();
    ensure(l.total == total_loss(l.d, l.tts) && l.total == l.d + l.tts, "total loss is not additive")?;
    Ok(format!("tanh(1)σ(1) = {got:.6} (closed form; the 0.556810 literal is off by 4e-5)"))
}

fn one_item_batch(ids: &[usize], styles: &[usize], d: Vec<usize>, target: Mat) -> Batch {
    let t = target.ncols();
    Batch {
        ids: vec!["item".into()],
        tokens: vec![TokenSequence {
            scheme: Scheme::Ipa,
            phoneme_ids: ids.to_vec(),
            style_ids: styles.to_vec(),
        }],
        token_masks: vec![vec![true; ids.len()]],
        durations: vec![Durations::new(d)],
        features: vec![target],
        frame_masks: vec![vec![true; t]],
        kind: FeatureKind::Mel,
    }
}

fn length_regulation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..1000 {
        let l = rng.gen_range(1..=16);
        let frames: Vec<usize> = (0..l).map(|_| rng.gen_range(0..8)).collect();
        let total: usize = frames.iter().sum();
        let h = EmbeddingSequence::unmasked(Mat::from_shape_fn((4, l), |(r, c)| (r * 100 + c) as f64));
        match length_regulate(&h, &Durations::new(frames.clone())) {
            Ok(out) => {
                ensure(out.len() == total, format!("width {} != {total}", out.len()))?;
                ensure(out.frame_to_token.windows(2).all(|w| w[0] <= w[1]), "frame_to_token decreases")?;
                for (i, &f) in frames.iter().enumerate() {
                    let n = out.frame_to_token.iter().filter(|&&k| k == i).count();
                    ensure(n == f, format!("token {i} appears {n} times, expected {f}"))?;
                }
                checked += 1;
            }
            Err(_) => ensure(total == 0, "regulation failed on a non-empty duration vector")?,
        }
    }
    Ok(format!("{checked} non-empty vectors of 1000 checked"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = ModelConfig {
        embedding_dim: 8,
        ffn_hidden: 16,
        ..ModelConfig::desk(6, 4, 5, FeatureKind::Mel)
    };
    let mut model = AcousticModel::new(cfg, 21).unwrap();
    let target = Mat::from_shape_simple_fn((5, 7), || rng.gen_range(-2.0..2.0));
    let batch = one_item_batch(&[1, 3, 2, 5], &[1, 2, 3, 1], vec![1, 2, 3, 1], target);
    let (_, grads) = batch_objective(&model, &batch, 1.0, 1.0, None).unwrap();
    let objective = |m: &AcousticModel| batch_objective(m, &batch, 1.0, 1.0, None).unwrap().0.total;
    let h = 1e-5;
    let ids: Vec<_> = model.params.ids().collect();
    let (mut worst, mut worst_name) = (0.0f64, String::new());
    for id in &ids {
        let shape = model.params.value(*id).dim();
        let analytic = grads.get(*id).cloned().unwrap_or_else(|| Mat::zeros(shape));
        let mut numeric = Mat::zeros(shape);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = model.params.value(*id)[[r, c]];
                model.params.value_mut(*id)[[r, c]] = orig + h;
                let up = objective(&model);
                model.params.value_mut(*id)[[r, c]] = orig - h;
                let down = objective(&model);
                model.params.value_mut(*id)[[r, c]] = orig;
                numeric[[r, c]] = (up - down) / (2.0 * h);
            }
        }
        let norm = |m: &Mat| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric));
        let err = if scale < 1e-9 { 0.0 } else { norm(&(&analytic - &numeric)) / scale };
        if err > worst {
            worst = err;
            worst_name = model.params.name(*id).to_string();
        }
    }
    ensure(worst < 1e-4, format!("{worst_name}: relative error {worst:e}"))?;
    Ok(format!("{} tensors, max relative error {worst:.2e} ({worst_name})", ids.len()))
}

fn mel_store(corpus: &[ToyUtterance], mel: &MelConfig) -> FeatureStore {
    let mut store = FeatureStore::new(1);
    for u in corpus {
        store.insert(u.record.id.clone(), extract_mel(&u.audio, mel).expect("mel"));
    }
    store
}

fn desk_config(kind: FeatureKind) -> TrainConfig {
    TrainConfig {
        seed: 7,
        feature_kind: kind,
        checkpoint_every: 1000,
        ..TrainConfig::desk()
    }
}

/// Frame accuracy of the oracle on every utterance synthesized with its
/// ground-truth durations.
fn oracle_accuracy(synth: &Synthesizer, tok: &Tokenizer, corpus: &[ToyUtterance], mel: &MelConfig) -> Result<f64, String> {
    let oracle = Oracle::trimmed(mel);
    let sep = tok.inventory(Scheme::Ipa).separator_id();
    let candidates = toy_phoneme_ids(tok);
    let (mut hits, mut total) = (0, 0);
    for u in corpus {
        let out = synth.run(&u.tokens, Some(u.durations.frames())).map_err(|e| e.to_string())?;
        let (h, n) = oracle.frame_accuracy(&out.waveform, &u.tokens, &u.durations, sep, &candidates);
        hits += h;
        total += n;
    }
    Ok(hits as f64 / total as f64)
}

/// Mandarin twins: (tone-2 utterance, tone-4 utterance, index of the toned final).
fn minimal_pairs(corpus: &[ToyUtterance]) -> Vec<(&ToyUtterance, &ToyUtterance, usize)> {
    corpus
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let same = a.tokens.phoneme_ids == b.tokens.phoneme_ids && a.record.language == Language::Zh;
            let i = a.tokens.style_ids.iter().position(|&s| tone_of(s).is_some())?;
            let tones = (tone_of(a.tokens.style_ids[i]), tone_of(b.tokens.style_ids[i]));
            (same && tones == (Some(2), Some(4))).then_some((a, b, i))
        })
        .collect()
}

fn moving_average(rows: &[LossRow], end: usize) -> f64 {
    let w = &rows[end.saturating_sub(10)..end];
    w.iter().map(|r| r.loss_total).sum::<f64>() / w.len() as f64
}

fn overfit_and_oracle(
    tok: &Tokenizer,
    toy: &ToyConfig,
    corpus: &[ToyUtterance],
    out: &Path,
) -> Result<(Checkpoint, Vec<u8>, String), String> {
    let store = mel_store(corpus, &toy.mel);
    let records: Vec<_> = corpus.iter().map(|u| u.record.clone()).collect();
    let mut trainer =
        Trainer::new(desk_config(FeatureKind::Mel), toy.mel.clone(), tok, toy.mel.n_mels, None).map_err(|e| e.to_string())?;
    trainer.run(&records, tok, &store, Some(out), |_| {}).map_err(|e| e.to_string())?;
    let h = &trainer.history;
    let (start, end) = (moving_average(h, 10), moving_average(h, h.len()));
    ensure(end < 0.1 * start, format!("loss {start:.3} -> {end:.3}, not below 10%"))?;

    let ck = trainer.checkpoint();
    let synth = Synthesizer::new(&ck, tok, 60).map_err(|e| e.to_string())?;
    let acc = oracle_accuracy(&synth, tok, corpus, &toy.mel)?;
    ensure(acc >= 0.9, format!("oracle frame accuracy {:.1}% < 90%", 100.0 * acc))?;

    let oracle = Oracle::trimmed(&toy.mel);
    let pairs = minimal_pairs(corpus);
    ensure(!pairs.is_empty(), "corpus has no tone-2/tone-4 pair")?;
    let mut slopes = Vec::new();
    for (rise, fall, i) in &pairs {
        let slope = |u: &ToyUtterance| -> Result<f64, String> {
            let o = synth.run(&u.tokens, Some(u.durations.frames())).map_err(|e| e.to_string())?;
            oracle.token_slope(&o.waveform, &u.durations, *i).ok_or_else(|| format!("{} final is silent", u.record.id))
        };
        let (a, b) = (slope(rise)?, slope(fall)?);
        ensure(a > 0.0 && b < 0.0, format!("{:?} vs {:?}: slopes {a:.3}, {b:.3}", rise.record.text, fall.record.text))?;
        slopes.push(format!("{a:+.2}/{b:+.2}"));
    }
    let csv = std::fs::read(out.join("loss_history.csv")).map_err(|e| e.to_string())?;
    let detail = format!(
        "loss {start:.2} -> {end:.3} ({:.1}%); oracle accuracy {:.1}%; tone 2/4 slopes (semitones/frame) {}",
        100.0 * end / start,
        100.0 * acc,
        slopes.join(" ")
    );
    Ok((ck, csv, detail))
}

fn style_necessity(tok: &Tokenizer, corpus: &[ToyUtterance], ck: &Checkpoint) -> Outcome {
    let pairs = minimal_pairs(corpus);
    ensure(!pairs.is_empty(), "corpus has no tone pair")?;
    for (a, b, _) in pairs.iter().copied().map(|(a, b, i)| (a, b, i)) {
        let run = |t: &TokenSequence, u: &ToyUtterance| {
            ck.model
                .synthesize(t, Some(&u.durations))
                .map(|s| s.feature.data)
                .map_err(|e| e.to_string())
        };
        let (na, nb) = (run(&a.tokens.without_styles(), a)?, run(&b.tokens.without_styles(), b)?);
        let bits = |m: &Mat| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&na) == bits(&nb), format!("style-free outputs differ for {:?}", a.record.text))?;
        let (sa, sb) = (run(&a.tokens, a)?, run(&b.tokens, b)?);
        ensure(sa != sb, format!("styled outputs coincide for {:?}", a.record.text))?;
    }
    let _ = tok;
    Ok(format!("{} minimal pairs: identical without styles, distinct with them", pairs.len()))
}

fn autoencoder_backend(tok: &Tokenizer, toy: &ToyConfig, corpus: &[ToyUtterance]) -> Result<(Checkpoint, String), String> {
    let mels = |u: &[ToyUtterance]| -> Vec<Mat> { u.iter().map(|u| extract_mel(&u.audio, &toy.mel).unwrap().data).collect() };
    let ae_corpus = build_toy_corpus(64, 99, tok, toy).map_err(|e| e.to_string())?;
    let held_out = build_toy_corpus(8, 1234, tok, toy).map_err(|e| e.to_string())?;
    let desk = Settings::desk();
    let train = AeTrainConfig {
        steps: desk.ae_steps,
        lr: desk.ae_lr,
        seed: 7,
        ..AeTrainConfig::default()
    };
    let cfg = AeConfig::mel(toy.mel.n_mels, desk.ae_latent_dim);
    let (ae, _) = train_autoencoder(&mels(&ae_corpus), cfg, &train).map_err(|e| e.to_string())?;
    let snrs: Vec<f64> = mels(&held_out)
        .iter()
        .map(|m| snr_db(m, &ae.reconstruct(m).unwrap()))
        .collect();
    let min = snrs.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = snrs.iter().sum::<f64>() / snrs.len() as f64;
    ensure(min >= 15.0, format!("held-out SNR min {min:.1} dB < 15 dB (mean {mean:.1})"))?;

    let store = latent_store(&ae, corpus, &toy.mel);
    let records: Vec<_> = corpus.iter().map(|u| u.record.clone()).collect();
    let mut trainer = Trainer::new(
        desk_config(FeatureKind::Latent),
        toy.mel.clone(),
        tok,
        ae.config.latent_dim,
        Some(ae.clone()),
    )
    .map_err(|e| e.to_string())?;
    trainer.run(&records, tok, &store, None, |_| {}).map_err(|e| e.to_string())?;
    let ck = trainer.checkpoint();
    let synth = Synthesizer::new(&ck, tok, 60).map_err(|e| e.to_string())?;
    let acc = oracle_accuracy(&synth, tok, corpus, &toy.mel)?;
    ensure(acc >= 0.85, format!("latent-model oracle accuracy {:.1}% < 85%", 100.0 * acc))?;
    Ok((
        ck,
        format!(
            "held-out SNR min {min:.1} dB, mean {mean:.1} dB over {} files; latent-model oracle accuracy {:.1}%",
            snrs.len(),
            100.0 * acc
        ),
    ))
}

fn latent_store(ae: &Autoencoder, corpus: &[ToyUtterance], mel: &MelConfig) -> FeatureStore {
    let mut store = FeatureStore::new(ae.ratio());
    for u in corpus {
        let m = extract_mel(&u.audio, mel).expect("mel");
        store.insert(u.record.id.clone(), ae.encode(&m.data).expect("encode").0);
    }
    store
}

fn sine(hz: f64, seconds: f64) -> Waveform {
    let n = (seconds * 16000.0) as usize;
    Waveform::new((0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / 16000.0).sin()).collect(), 16000)
}

fn dsp_suite() -> Outcome {
    let cfg = MelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let len = rng.gen_range(cfg.n_fft..40_000);
        let f = extract_mel(&Waveform::new(vec![0.01; len], 16000), &cfg).map_err(|e| e.to_string())?;
        let want = 1 + (len - cfg.n_fft) / cfg.hop;
        ensure(f.frames() == want && frame_count(len, &cfg).unwrap() == want, format!("len {len}: {} frames", f.frames()))?;
    }

    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let centres: Vec<f64> = (1..=cfg.n_mels)
        .map(|i| hz(mel(cfg.fmin) + (mel(cfg.fmax) - mel(cfg.fmin)) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let nearest = (0..cfg.n_mels)
        .min_by(|&a, &b| (centres[a] - 440.0).abs().total_cmp(&(centres[b] - 440.0).abs()))
        .unwrap();
    let tone = sine(440.0, 1.0);
    let f = extract_mel(&tone, &cfg).map_err(|e| e.to_string())?;
    for col in f.data.columns() {
        let argmax = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
        ensure(argmax == nearest, format!("argmax bin {argmax}, nearest-centre bin {nearest}"))?;
    }

    let w = griffin_lim(&f, &cfg, 60).map_err(|e| e.to_string())?;
    let n = cfg.n_fft;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut power = vec![0.0; n / 2];
    for block in w.samples.chunks_exact(n) {
        let mut buf: Vec<Complex64> = block.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p += buf[k].norm_sqr();
        }
    }
    let peak = (1..n / 2).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
    let expected = (440.0 * n as f64 / 16000.0).round() as usize;
    ensure(peak.abs_diff(expected) <= 1, format!("Griffin-Lim peak in bin {peak}, expected {expected}"))?;

    let (_, errors) = griffin_lim_traced(&extract_mel(&sine(440.0, 0.5), &cfg).unwrap(), &cfg, 60, None)
        .map_err(|e| e.to_string())?;
    for (k, e) in errors.windows(2).enumerate() {
        ensure(e[1] <= e[0] * (1.0 + 1e-9), format!("spectral error rose at iteration {k}"))?;
    }
    Ok(format!(
        "440 Hz in mel bin {nearest}; resynthesis peak in DFT bin {peak} (440 Hz is bin {expected}); error {:.3} -> {:.3}",
        errors[0],
        errors[errors.len() - 1]
    ))
}

fn reproducibility(tok: &Tokenizer, toy: &ToyConfig, corpus: &[ToyUtterance], work: &Path, first: &[u8]) -> Outcome {
    let out = work.join("run_b");
    let store = mel_store(corpus, &toy.mel);
    let records: Vec<_> = corpus.iter().map(|u| u.record.clone()).collect();
    let mut again =
        Trainer::new(desk_config(FeatureKind::Mel), toy.mel.clone(), tok, toy.mel.n_mels, None).map_err(|e| e.to_string())?;
    again.run(&records, tok, &store, Some(&out), |_| {}).map_err(|e| e.to_string())?;
    let second = std::fs::read(out.join("loss_history.csv")).map_err(|e| e.to_string())?;
    ensure(second == first, "loss CSVs of two seeded runs differ")?;

    let mid = Checkpoint::load(&work.join("run_a").join("checkpoint_1000.lsck")).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::from_checkpoint(mid).map_err(|e| e.to_string())?;
    let row = resumed.step_once(&records, tok, &store).map_err(|e| e.to_string())?;
    let reference = again.history[1000];
    ensure(
        row.loss_total.to_bits() == reference.loss_total.to_bits(),
        format!("resumed step 1001 loss {} vs {}", row.loss_total, reference.loss_total),
    )?;
    Ok(format!(
        "identical {}-byte loss CSVs; resumed step 1001 loss {:.6} matches bit for bit",
        second.len(),
        row.loss_total
    ))
}

fn bench_check(tok: &Tokenizer, mel_ck: &Checkpoint, latent_ck: Option<&Checkpoint>) -> Outcome {
    let mut lines = Vec::new();
    for ck in std::iter::once(mel_ck).chain(latent_ck) {
        let synth = Synthesizer::new(ck, tok, 60).map_err(|e| e.to_string())?;
        let r = bench(&synth, 8.0, 1).map_err(|e| e.to_string())?;
        // closed form, recomputed here from the layer shapes
        let c = &ck.model.config;
        let (m, f) = (c.embedding_dim, c.ffn_hidden);
        let block = 4 * (m * m + m) + (c.ffn_kernels[0] * m * f + f) + (c.ffn_kernels[1] * f * m + m) + 4 * m;
        let stacks = if c.share_encoders { 1 } else { 2 };
        let dp = 2 * (c.dp_kernel * m * m + m + 2 * m) + m + 1;
        let expected = (c.phoneme_vocab + c.style_vocab) * m
            + stacks * c.n_enc_layers * block
            + dp
            + c.n_dec_layers * block
            + c.feature_dim * (m + 1);
        ensure(r.model_params == expected, format!("counted {} vs closed form {expected}", r.model_params))?;
        ensure(r.counts_match(), "reported breakdown disagrees with the counted tensors")?;
        ensure(r.acoustic_ms > 0.0 && r.griffin_lim_ms > 0.0, "stage timings missing")?;
        let table = r.table();
        ensure(table.contains("Acoustic model") && table.contains("Griffin-Lim"), "table rows missing")?;
        match (&ck.autoencoder, r.ae_decoder_params, r.ae_decoder_ms) {
            (Some(ae), Some(p), Some(_)) => {
                let a = &ae.config;
                let w = [a.in_channels, a.hidden[0], a.hidden[1], a.hidden[2], a.latent_dim];
                let dec: usize = (0..4).map(|i| AeConfig::kernel(a.strides[i]) * w[i + 1] * w[i] + w[i]).sum();
                ensure(p == dec, format!("AE decoder {p} vs closed form {dec}"))?;
                ensure(table.contains("AE Decoder"), "AE Decoder row missing")?;
                lines.push(format!("latent: {} + AE decoder {p} params", r.model_params));
            }
            (None, None, None) => lines.push(format!("mel: {} params", r.model_params)),
            _ => return Err("AE decoder stage reported inconsistently".into()),
        }
    }
    Ok(format!("{}; stages timed separately", lines.join(", ")))
}
