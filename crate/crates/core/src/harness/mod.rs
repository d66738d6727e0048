//! Experiment orchestration: data preparation, per-scheme training, SNR
//! sweeps over fading draws, result tables and plots.

mod config;
mod plot;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{CorpusSource, ExperimentConfig, Scheme};
pub use plot::{plot_scores, PlotKind};

use crate::autodiff::Tape;
use crate::channel::{ChannelConfig, ChannelRealization, Receiver};
use crate::corpus::{encode_sentence, load_corpus, normalize, SentenceBatch, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{bleu, sbleu, NgramWeights};
use crate::model::{
    bind, channel_decode, channel_encode, receive, semantic_decode_infer, semantic_decode_train, semantic_encode,
    Collection, ModelConfig, ParameterBundle,
};
use crate::training::{
    derive_seed, secrecy_proxy, train_integrated, train_phase1, train_phase2, write_loss_csv, LossRecord, TrainConfig,
};

/// Tokenized train and test splits with their vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub train: Vec<TokenSequence>,
    pub test: Vec<TokenSequence>,
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (train, test) = match &config.corpus {
        CorpusSource::Synthetic { train, test } => synthetic::synthetic_corpus(
            *train,
            *test,
            config.min_words,
            config.max_words,
            derive_seed(config.seed, "corpus"),
        )?,
        CorpusSource::Files { train, test } => (
            load_corpus(train, config.min_words, config.max_words)?,
            load_corpus(test, config.min_words, config.max_words)?,
        ),
    };
    let vocab = Vocabulary::build(&train, config.max_vocab)?;
    let slots = config.model.max_len;
    let encode = |s: &[String]| s.iter().map(|t| encode_sentence(t, &vocab, slots)).collect::<Vec<_>>();
    Ok(PreparedData {
        train: encode(&train),
        test: encode(&test),
        vocab,
    })
}

/// The model configuration with the vocabulary size filled in.
pub fn resolved_model(config: &ExperimentConfig, data: &PreparedData) -> ModelConfig {
    ModelConfig {
        vocab_size: data.vocab.len(),
        ..config.model.clone()
    }
}

/// The training configuration with its seed derived from the master seed.
pub fn resolved_training(config: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(config.seed, "training"),
        ..config.training.clone()
    }
}

/// Bundles after training plus each scheme's loss log.
#[derive(Debug, Clone)]
pub struct TrainedSchemes {
    /// The shared reliability-only result, which is also the eavesdropper
    /// bootstrap for the integrated scheme.
    pub phase1: ParameterBundle,
    pub bundles: BTreeMap<Scheme, ParameterBundle>,
    pub losses: BTreeMap<Scheme, Vec<LossRecord>>,
}

/// Trains every requested scheme. All schemes share one reliability run;
/// the integrated scheme restarts from the same initialization.
pub fn train_schemes(config: &ExperimentConfig, data: &PreparedData) -> Result<TrainedSchemes> {
    let model = resolved_model(config, data);
    let training = resolved_training(config);
    let init_seed = derive_seed(config.seed, "init");
    let channel = &config.channel;

    let mut phase1 = ParameterBundle::init(&model, init_seed)?;
    let phase1_log = train_phase1(&mut phase1, &data.train, channel, &training)?;
    let mut losses = BTreeMap::new();
    let mut bundles = BTreeMap::new();
    for &scheme in &config.schemes {
        match scheme {
            Scheme::NoIi => {
                losses.insert(scheme, phase1_log.clone());
                bundles.insert(scheme, phase1.clone());
            }
            Scheme::Deepssc => {
                let mut bundle = phase1.clone();
                let log = train_phase2(&mut bundle, &data.train, channel, &training)?;
                losses.insert(scheme, phase1_log.iter().chain(&log).cloned().collect());
                bundles.insert(scheme, bundle);
            }
            Scheme::Integrated => {
                let mut bundle = ParameterBundle::init(&model, init_seed)?;
                let log = train_integrated(&mut bundle, &phase1, &data.train, channel, &training)?;
                losses.insert(scheme, log);
                bundles.insert(scheme, bundle);
            }
        }
    }
    Ok(TrainedSchemes {
        phase1,
        bundles,
        losses,
    })
}

/// Mean scores of one scheme at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub bleu1_bob: f64,
    pub bleu3_bob: f64,
    pub bleu1_eve: f64,
    pub bleu3_eve: f64,
    pub sbleu1: f64,
    pub sbleu3: f64,
    pub secrecy_proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, scheme: Scheme, snr_db: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.snr_db == snr_db)
    }

    pub fn scheme_rows(&self, scheme: Scheme) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.scheme == scheme).collect()
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        let mut s: Vec<Scheme> = self.rows.iter().map(|r| r.scheme).collect();
        s.sort();
        s.dedup();
        s
    }

    fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.snr_db.total_cmp(&b.snr_db)));
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let rows = csv::Reader::from_reader(file)
            .deserialize()
            .collect::<std::result::Result<Vec<SweepRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Evaluation budget for one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub draws: usize,
    pub batch: usize,
    pub seed: u64,
}

impl EvalSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            draws: config.eval_draws,
            batch: config.eval_batch,
            seed: derive_seed(config.seed, "eval"),
        }
    }
}

/// Greedy transmissions of the test split at one SNR.
///
/// Draw `k` sends test sentences `k * batch ..` (wrapping) through one
/// fading realization. The random stream depends only on `settings.seed`,
/// so every scheme and SNR sees the same fading and noise shapes.
pub fn evaluate(
    bundle: &ParameterBundle,
    test: &[TokenSequence],
    channel: &ChannelConfig,
    snr_db: f64,
    settings: EvalSettings,
) -> Result<SweepRow> {
    if test.is_empty() {
        return Err(Error::Empty("evaluation over an empty test split".into()));
    }
    if settings.draws == 0 || settings.batch == 0 {
        return Err(Error::Config("evaluation needs positive draws and batch".into()));
    }
    let config = &bundle.config;
    let uni = NgramWeights::unigram();
    let tri = NgramWeights::trigram();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut sums = [0.0f64; 6];
    let mut proxy = 0.0;
    let mut sentences = 0usize;
    for draw in 0..settings.draws {
        let picked: Vec<&TokenSequence> = (0..settings.batch)
            .map(|i| &test[(draw * settings.batch + i) % test.len()])
            .collect();
        let batch = SentenceBatch::from_sequences(&picked)?;
        let realization = ChannelRealization::draw(channel, snr_db, &mut rng);

        let mut tape = Tape::new();
        let alpha = bind(&mut tape, bundle.set(Collection::Alpha), false);
        let beta = bind(&mut tape, bundle.set(Collection::Beta), false);
        let m = semantic_encode(&mut tape, config, &alpha, &batch)?;
        let x = channel_encode(&mut tape, &beta, m);
        let mut decoded = Vec::with_capacity(2);
        let mut ce = Vec::with_capacity(2);
        let received: Vec<_> = [Receiver::Bob, Receiver::Eve]
            .into_iter()
            .map(|r| {
                let h = realization.fading(r);
                receive(&mut tape, x, batch.batch_size(), h, realization.power, realization.noise, &mut rng).map(|y| (r, y))
            })
            .collect::<Result<_>>()?;
        let targets = batch.next_token_targets();
        for (r, y) in received {
            let (chi, delta) = match r {
                Receiver::Bob => (Collection::ChiBob, Collection::DeltaBob),
                Receiver::Eve => (Collection::ChiEve, Collection::DeltaEve),
            };
            let chi = bind(&mut tape, bundle.set(chi), false);
            let delta_set = bundle.set(delta);
            let delta = bind(&mut tape, delta_set, false);
            let mhat = channel_decode(&mut tape, &chi, y);
            let logits = semantic_decode_train(&mut tape, config, &delta, mhat, &batch)?;
            let loss = tape.cross_entropy(logits, &targets)?;
            ce.push(tape.scalar(loss));
            decoded.push(semantic_decode_infer(config, delta_set, tape.value(mhat), batch.batch_size(), config.max_len)?);
        }
        proxy += secrecy_proxy(ce[0], ce[1]);

        for (row, seq) in picked.iter().enumerate() {
            let s = seq.word_ids();
            let b = decoded[0].sequence(row).word_ids();
            let e = decoded[1].sequence(row).word_ids();
            let scores = [
                bleu(&s, &b, &uni).score,
                bleu(&s, &b, &tri).score,
                bleu(&s, &e, &uni).score,
                bleu(&s, &e, &tri).score,
                sbleu(&s, &b, &e, &uni).score,
                sbleu(&s, &b, &e, &tri).score,
            ];
            for (acc, v) in sums.iter_mut().zip(scores) {
                *acc += v;
            }
            sentences += 1;
        }
    }
    let n = sentences as f64;
    Ok(SweepRow {
        scheme: Scheme::NoIi,
        snr_db,
        bleu1_bob: sums[0] / n,
        bleu3_bob: sums[1] / n,
        bleu1_eve: sums[2] / n,
        bleu3_eve: sums[3] / n,
        sbleu1: sums[4] / n,
        sbleu3: sums[5] / n,
        secrecy_proxy: proxy / settings.draws as f64,
    })
}

/// Scores every trained scheme at every sweep SNR.
pub fn sweep(config: &ExperimentConfig, data: &PreparedData, trained: &TrainedSchemes) -> Result<SweepResult> {
    let settings = EvalSettings::from_config(config);
    let mut result = SweepResult::default();
    for (&scheme, bundle) in &trained.bundles {
        for &snr in &config.snr_sweep {
            let row = evaluate(bundle, &data.test, &config.channel, snr, settings)?;
            result.rows.push(SweepRow { scheme, ..row });
        }
    }
    result.sort();
    Ok(result)
}

/// Prepares data, trains every scheme, writes checkpoints and loss logs
/// into the output directory and returns the sweep table.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let data = prepare_data(config)?;
    let trained = train_schemes(config, &data)?;
    save_training_artifacts(&config.output_dir, &data, &trained)?;
    sweep(config, &data, &trained)
}

/// Writes the vocabulary, one checkpoint per scheme plus the shared
/// reliability checkpoint, and one loss log per scheme.
pub fn save_training_artifacts(dir: &Path, data: &PreparedData, trained: &TrainedSchemes) -> Result<()> {
    let ckpt = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    data.vocab.save(dir.join("vocab.tsv"))?;
    trained.phase1.save_checkpoint(ckpt.join("phase1.safetensors"))?;
    for (scheme, bundle) in &trained.bundles {
        bundle.save_checkpoint(ckpt.join(format!("{scheme}.safetensors")))?;
    }
    for (scheme, log) in &trained.losses {
        write_loss_csv(dir.join(format!("losses_{scheme}.csv")), log)?;
    }
    Ok(())
}

/// Files written by [`emit_outputs`].
pub const OUTPUT_FILES: [&str; 5] = ["results.csv", "results.json", "bleu1.png", "bleu3.png", "sbleu.png"];

/// Writes the result table as CSV and JSON plus three score-vs-SNR plots.
pub fn emit_outputs(result: &SweepResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(Error::Empty("no sweep rows to emit".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths: Vec<PathBuf> = OUTPUT_FILES.iter().map(|f| dir.join(f)).collect();
    result.write_csv(&paths[0])?;
    result.write_json(&paths[1])?;
    plot_scores(result, PlotKind::Bleu1).save(&paths[2])?;
    plot_scores(result, PlotKind::Bleu3).save(&paths[3])?;
    plot_scores(result, PlotKind::Sbleu).save(&paths[4])?;
    Ok(paths)
}

/// One line of `score` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub sentence_id: usize,
    pub bleu_1: f64,
    pub bleu_3: f64,
    pub sbleu_1: f64,
    pub sbleu_3: f64,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(normalize).collect())
}

/// Line-aligned sentence scores of Bob's (and optionally Eve's) recoveries
/// against the source file. A missing Eve file scores as if Eve heard nothing.
pub fn score_files(src: &Path, bob: &Path, eve: Option<&Path>) -> Result<Vec<SentenceScore>> {
    let src = read_lines(src)?;
    let bob = read_lines(bob)?;
    let eve = match eve {
        Some(p) => read_lines(p)?,
        None => vec![String::new(); src.len()],
    };
    if src.len() != bob.len() || src.len() != eve.len() {
        return Err(Error::Shape(format!(
            "line counts differ: source {}, bob {}, eve {}",
            src.len(),
            bob.len(),
            eve.len()
        )));
    }
    let uni = NgramWeights::unigram();
    let tri = NgramWeights::trigram();
    Ok(src
        .iter()
        .zip(&bob)
        .zip(&eve)
        .enumerate()
        .map(|(i, ((s, b), e))| {
            let s: Vec<&str> = s.split_whitespace().collect();
            let b: Vec<&str> = b.split_whitespace().collect();
            let e: Vec<&str> = e.split_whitespace().collect();
            SentenceScore {
                sentence_id: i,
                bleu_1: bleu(&s, &b, &uni).score,
                bleu_3: bleu(&s, &b, &tri).score,
                sbleu_1: sbleu(&s, &b, &e, &uni).score,
                sbleu_3: sbleu(&s, &b, &e, &tri).score,
            }
        })
        .collect())
}
