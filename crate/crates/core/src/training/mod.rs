//! Losses, optimizers and the training procedures: two-stage reliability
//! training, adversarial secrecy training against a frozen eavesdropper, and
//! the single-phase weighted-loss baseline.

pub mod bound;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::log_softmax_at;
use crate::autodiff::{Matrix, Tape, Var};
use crate::channel::{ChannelConfig, ChannelRealization, Receiver};
use crate::corpus::{batch_iterator, SentenceBatch, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{
    bind, channel_decode, channel_encode, receive, semantic_decode_train, semantic_encode, BoundSet, Collection,
    ParameterBundle,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Overrides `learning_rate` for the secrecy phase.
    pub phase2_learning_rate: Option<f64>,
    pub batch_size: usize,
    pub epochs_stage_a: usize,
    pub epochs_stage_b: usize,
    pub epochs_phase2: usize,
    /// Defaults to `epochs_stage_a + epochs_phase2` when unset.
    pub epochs_integrated: Option<usize>,
    /// Per-batch SNR is drawn uniformly in dB from this closed range.
    pub snr_train_db: (f64, f64),
    pub w1: f64,
    pub w2: f64,
    /// Weight on Eve's cross-entropy in the secrecy phase.
    pub eve_weight: f64,
    pub clamp: bool,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            phase2_learning_rate: None,
            batch_size: 128,
            epochs_stage_a: 20,
            epochs_stage_b: 10,
            epochs_phase2: 10,
            epochs_integrated: None,
            snr_train_db: (0.0, 18.0),
            w1: 1.0,
            w2: 1.0,
            eve_weight: 1.0,
            clamp: false,
            optimizer: OptimizerKind::Sgd,
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr_ok = |v: f64| v > 0.0 && v.is_finite();
        if !lr_ok(self.learning_rate) || !self.phase2_learning_rate.is_none_or(lr_ok) {
            return Err(Error::Config("learning rates must be positive and finite".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be positive".into()));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(Error::Config(format!("integrated weights must be non-negative, got {} and {}", self.w1, self.w2)));
        }
        if !(self.eve_weight >= 0.0) {
            return Err(Error::Config("training.eve_weight must be non-negative".into()));
        }
        let (lo, hi) = self.snr_train_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("training SNR range [{lo}, {hi}] is empty")));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("training.grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn integrated_epochs(&self) -> usize {
        self.epochs_integrated.unwrap_or(self.epochs_stage_a + self.epochs_phase2)
    }
}

/// One logged optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub phase: String,
    pub step: usize,
    pub ce_bob: f64,
    pub ce_eve: f64,
    pub l_ssc: f64,
    pub secrecy_proxy: f64,
    pub snr_db: f64,
}

impl LossRecord {
    pub fn new(phase: &str, step: usize, ce_bob: f64, ce_eve: f64, snr_db: f64) -> Self {
        Self {
            phase: phase.to_string(),
            step,
            ce_bob,
            ce_eve,
            l_ssc: ssc_loss(ce_bob, ce_eve, false),
            secrecy_proxy: secrecy_proxy(ce_bob, ce_eve),
            snr_db,
        }
    }
}

pub fn write_loss_csv(path: impl AsRef<Path>, records: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean `-log softmax(logits)[target]` over the non-pad next-token slots.
pub fn cross_entropy_loss(logits: &Matrix, targets: &SentenceBatch) -> Result<f64> {
    let t = targets.next_token_targets();
    if logits.nrows() != t.len() {
        return Err(Error::Shape(format!("{} logit rows for {} target slots", logits.nrows(), t.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, target) in t.iter().enumerate() {
        if let Some(id) = *target {
            if id >= logits.ncols() {
                return Err(Error::Shape(format!("target id {id} outside {} classes", logits.ncols())));
            }
            total -= log_softmax_at(logits, row, id);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("cross-entropy over an all-pad batch".into()));
    }
    Ok(total / count as f64)
}

/// `ce_bob - ce_eve`, or its non-positive part when `clamp` is set.
pub fn ssc_loss(ce_bob: f64, ce_eve: f64, clamp: bool) -> f64 {
    let l = ce_bob - ce_eve;
    if clamp {
        l.min(0.0)
    } else {
        l
    }
}

pub fn integrated_loss(ce_bob: f64, ce_eve: f64, w1: f64, w2: f64) -> f64 {
    (w1 + w2) * ce_bob - w2 * ce_eve
}

pub fn secrecy_proxy(ce_bob: f64, ce_eve: f64) -> f64 {
    (ce_eve - ce_bob).max(0.0)
}

/// What a phase minimizes, as a function of the two cross-entropies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Bob,
    Eve,
    Ssc { eve_weight: f64, clamp: bool },
    Integrated { w1: f64, w2: f64 },
}

impl Objective {
    pub fn value(&self, ce_bob: f64, ce_eve: f64) -> f64 {
        let (a, b) = self.weights(ce_bob, ce_eve);
        match *self {
            Objective::Ssc { eve_weight, clamp: true } => (ce_bob - eve_weight * ce_eve).min(0.0),
            _ => a * ce_bob + b * ce_eve,
        }
    }

    /// Linear weights on `(ce_bob, ce_eve)` whose gradient matches the
    /// objective at the given point.
    pub fn weights(&self, ce_bob: f64, ce_eve: f64) -> (f64, f64) {
        match *self {
            Objective::Bob => (1.0, 0.0),
            Objective::Eve => (0.0, 1.0),
            Objective::Ssc { eve_weight, clamp } => {
                if clamp && ce_bob - eve_weight * ce_eve >= 0.0 {
                    (0.0, 0.0)
                } else {
                    (1.0, -eve_weight)
                }
            }
            Objective::Integrated { w1, w2 } => (w1 + w2, -w2),
        }
    }
}

/// Gradients keyed by collection and parameter name.
pub type GradientMap = BTreeMap<Collection, BTreeMap<String, Matrix>>;

/// Cross-entropies of one batch and the gradient of the objective with
/// respect to every unfrozen collection.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub ce_bob: f64,
    pub ce_eve: f64,
    pub loss: f64,
    pub grads: GradientMap,
}

/// Runs both receivers on one broadcast. Bob's noise is drawn before Eve's.
/// With `track` unset no gradients are formed.
pub fn joint_pass<R: Rng + ?Sized>(
    bundle: &ParameterBundle,
    batch: &SentenceBatch,
    realization: &ChannelRealization,
    objective: Objective,
    track: bool,
    rng: &mut R,
) -> Result<StepOutput> {
    realization.validate()?;
    let config = &bundle.config;
    let mut tape = Tape::new();
    let bound: Vec<(Collection, BoundSet)> = Collection::ALL
        .iter()
        .map(|&c| (c, bind(&mut tape, bundle.set(c), track && !bundle.is_frozen(c))))
        .collect();
    let get = |c: Collection| &bound.iter().find(|(k, _)| *k == c).expect("all collections bound").1;

    let m = semantic_encode(&mut tape, config, get(Collection::Alpha), batch)?;
    let x = channel_encode(&mut tape, get(Collection::Beta), m);
    let b = batch.batch_size();
    let (p, n) = (realization.power, realization.noise);
    let y_bob = receive(&mut tape, x, b, realization.fading(Receiver::Bob), p, n, rng)?;
    let y_eve = receive(&mut tape, x, b, realization.fading(Receiver::Eve), p, n, rng)?;
    let targets = batch.next_token_targets();
    let branch = |tape: &mut Tape, y: Var, chi: Collection, delta: Collection| -> Result<Var> {
        let mhat = channel_decode(tape, get(chi), y);
        let logits = semantic_decode_train(tape, config, get(delta), mhat, batch)?;
        tape.cross_entropy(logits, &targets)
    };
    let ce_bob = branch(&mut tape, y_bob, Collection::ChiBob, Collection::DeltaBob)?;
    let ce_eve = branch(&mut tape, y_eve, Collection::ChiEve, Collection::DeltaEve)?;
    let (vb, ve) = (tape.scalar(ce_bob), tape.scalar(ce_eve));

    let mut grads = GradientMap::new();
    let (wb, we) = objective.weights(vb, ve);
    let terms: Vec<(Var, f64)> = [(ce_bob, wb), (ce_eve, we)].into_iter().filter(|t| t.1 != 0.0).collect();
    if track && !terms.is_empty() {
        let loss = tape.weighted_sum(&terms);
        let mut g = tape.backward(loss);
        for (c, set) in &bound {
            if bundle.is_frozen(*c) {
                continue;
            }
            let entry: BTreeMap<String, Matrix> = set
                .iter()
                .filter_map(|(name, v)| g.take(v).map(|m| (name.to_string(), m)))
                .collect();
            if !entry.is_empty() {
                grads.insert(*c, entry);
            }
        }
    }
    Ok(StepOutput {
        ce_bob: vb,
        ce_eve: ve,
        loss: objective.value(vb, ve),
        grads,
    })
}

fn check_shapes(bundle: &ParameterBundle, grads: &GradientMap) -> Result<()> {
    for (c, set) in grads {
        let params = bundle.set(*c);
        for (name, g) in set {
            let p = params
                .tensors
                .get(name)
                .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter {}/{name}", c.name())))?;
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for {}/{name} of shape {:?}",
                    g.dim(),
                    c.name(),
                    p.dim()
                )));
            }
        }
    }
    Ok(())
}

/// Plain gradient descent `theta -= eta * g` on unfrozen collections.
pub fn optimizer_step(bundle: &mut ParameterBundle, grads: &GradientMap, eta: f64) -> Result<()> {
    check_shapes(bundle, grads)?;
    for (c, set) in grads {
        if bundle.is_frozen(*c) {
            continue;
        }
        let params = bundle.set_mut(*c);
        for (name, g) in set {
            let p = params.tensors.get_mut(name).expect("shape-checked");
            p.scaled_add(-eta, g);
        }
    }
    Ok(())
}

fn global_norm(grads: &GradientMap) -> f64 {
    grads
        .values()
        .flat_map(|s| s.values())
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.98;
const ADAM_EPS: f64 = 1e-9;

/// Stateful optimizer wrapping [`optimizer_step`] or Adam.
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    clip: Option<f64>,
    steps: i32,
    moments: BTreeMap<(Collection, String), (Matrix, Matrix)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, clip: Option<f64>) -> Self {
        Self {
            kind,
            learning_rate,
            clip,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, bundle: &mut ParameterBundle, mut grads: GradientMap) -> Result<()> {
        check_shapes(bundle, &grads)?;
        if let Some(limit) = self.clip {
            let norm = global_norm(&grads);
            if norm > limit {
                let scale = limit / norm;
                grads.values_mut().flat_map(|s| s.values_mut()).for_each(|g| *g *= scale);
            }
        }
        match self.kind {
            OptimizerKind::Sgd => optimizer_step(bundle, &grads, self.learning_rate),
            OptimizerKind::Adam => {
                self.steps += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                let step = self.learning_rate * c2.sqrt() / c1;
                for (c, set) in grads {
                    if bundle.is_frozen(c) {
                        continue;
                    }
                    let params = bundle.set_mut(c);
                    for (name, g) in set {
                        let p = params.tensors.get_mut(&name).expect("shape-checked");
                        let (m, v) = self
                            .moments
                            .entry((c, name))
                            .or_insert_with(|| (Matrix::zeros(g.dim()), Matrix::zeros(g.dim())));
                        m.zip_mut_with(&g, |mi, &gi| *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi);
                        v.zip_mut_with(&g, |vi, &gi| *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi);
                        ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|pi, &mi, &vi| {
                            *pi -= step * mi / (vi.sqrt() + ADAM_EPS);
                        });
                    }
                }
                Ok(())
            }
        }
    }
}

/// Stable 64-bit seed for a named stream under a master seed.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One optimization phase: objective, budget and random stream.
#[derive(Debug, Clone)]
pub struct PhaseSpec {
    pub label: String,
    pub objective: Objective,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Name of the random stream; equal names replay equal batches and draws.
    pub stream: String,
}

fn draw_snr<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

/// Runs one phase on whatever collections are currently unfrozen.
pub fn train_phase(
    bundle: &mut ParameterBundle,
    data: &[TokenSequence],
    channel: &ChannelConfig,
    config: &TrainConfig,
    spec: &PhaseSpec,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    channel.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("{}/channel", spec.stream)));
    let mut opt = Optimizer::new(config.optimizer, spec.learning_rate, config.grad_clip);
    let mut records = Vec::new();
    let mut step = 0;
    for epoch in 0..spec.epochs {
        let seed = derive_seed(config.seed, &format!("{}/epoch{epoch}", spec.stream));
        for batch in batch_iterator(data, config.batch_size, seed)? {
            let snr = draw_snr(config.snr_train_db, &mut rng);
            let realization = ChannelRealization::draw(channel, snr, &mut rng);
            let out = joint_pass(bundle, &batch, &realization, spec.objective, true, &mut rng)?;
            if !(out.ce_bob.is_finite() && out.ce_eve.is_finite()) {
                return Err(Error::Divergence {
                    phase: spec.label.clone(),
                    step,
                    detail: format!("ce_bob = {}, ce_eve = {}", out.ce_bob, out.ce_eve),
                });
            }
            records.push(LossRecord::new(&spec.label, step, out.ce_bob, out.ce_eve, snr));
            opt.apply(bundle, out.grads)?;
            step += 1;
        }
    }
    Ok(records)
}

const BOB_SIDE: [Collection; 4] = [Collection::Alpha, Collection::Beta, Collection::ChiBob, Collection::DeltaBob];
const EVE_SIDE: [Collection; 2] = [Collection::ChiEve, Collection::DeltaEve];

/// Reliability stage: trains the transmitter and Bob's decoders on `ce_bob`.
pub fn train_stage_a(
    bundle: &mut ParameterBundle,
    data: &[TokenSequence],
    channel: &ChannelConfig,
    config: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    bundle.freeze_only(&EVE_SIDE);
    let spec = PhaseSpec {
        label: "stage_a".into(),
        objective: Objective::Bob,
        epochs: config.epochs_stage_a,
        learning_rate: config.learning_rate,
        stream: "stage_a".into(),
    };
    train_phase(bundle, data, channel, config, &spec)
}

/// Eavesdropper stage: starts Eve from Bob's decoders and fine-tunes them
/// through Eve's channel with the transmitter frozen.
pub fn train_stage_b(
    bundle: &mut ParameterBundle,
    data: &[TokenSequence],
    channel: &ChannelConfig,
    config: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    bundle.freeze_only(&[]);
    bundle.copy_collection(Collection::ChiBob, Collection::ChiEve)?;
    bundle.copy_collection(Collection::DeltaBob, Collection::DeltaEve)?;
    bundle.freeze_only(&BOB_SIDE);
    let spec = PhaseSpec {
        label: "stage_b".into(),
        objective: Objective::Eve,
        epochs: config.epochs_stage_b,
        learning_rate: config.learning_rate,
        stream: "stage_b".into(),
    };
    train_phase(bundle, data, channel, config, &spec)
}

/// Both reliability stages in order.
pub fn train_phase1(
    bundle: &mut ParameterBundle,
    data: &[TokenSequence],
    channel: &ChannelConfig,
    config: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    let mut records = train_stage_a(bundle, data, channel, config)?;
    records.extend(train_stage_b(bundle, data, channel, config)?);
    Ok(records)
}

/// Secrecy phase: Eve's decoders frozen, the rest minimizes the secrecy loss.
pub fn train_phase2(
    bundle: &mut ParameterBundle,
    data: &[TokenSequence],
    channel: &ChannelConfig,
    config: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    bundle.freeze_only(&EVE_SIDE);
    let spec = PhaseSpec {
        label: "phase2".into(),
        objective: Objective::Ssc {
            eve_weight: config.eve_weight,
            clamp: config.clamp,
        },
        epochs: config.epochs_phase2,
        learning_rate: config.phase2_learning_rate.unwrap_or(config.learning_rate),
        stream: "phase2".into(),
    };
    train_phase(bundle, data, channel, config, &spec)
}

/// Single-phase weighted-loss baseline. Eve's decoders are taken from
/// `eve_source` and kept frozen; the rest trains on the same stream as the
/// reliability stage, so `w2 = 0` replays that stage exactly.
pub fn train_integrated(
    bundle: &mut ParameterBundle,
    eve_source: &ParameterBundle,
    data: &[TokenSequence],
    channel: &ChannelConfig,
    config: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    bundle.freeze_only(&[]);
    bundle.load_collection_from(eve_source, Collection::ChiEve, Collection::ChiEve)?;
    bundle.load_collection_from(eve_source, Collection::DeltaEve, Collection::DeltaEve)?;
    bundle.freeze_only(&EVE_SIDE);
    let spec = PhaseSpec {
        label: "integrated".into(),
        objective: Objective::Integrated {
            w1: config.w1,
            w2: config.w2,
        },
        epochs: config.integrated_epochs(),
        learning_rate: config.learning_rate,
        stream: "stage_a".into(),
    };
    train_phase(bundle, data, channel, config, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_sentence, Vocabulary};
    use crate::model::ModelConfig;
    use ndarray::Array2;

    fn tiny_data() -> Vec<TokenSequence> {
        let words = ["a b c", "d e f g", "h a", "b c d e", "f g h", "a c e g", "b d", "h g f e"];
        let vocab = Vocabulary::build(&words, 12).unwrap();
        words.iter().map(|w| encode_sentence(w, &vocab, 6)).collect()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 4,
            epochs_stage_a: 2,
            epochs_stage_b: 1,
            epochs_phase2: 1,
            snr_train_db: (6.0, 12.0),
            optimizer: OptimizerKind::Adam,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn closed_form_losses() {
        assert_eq!(ssc_loss(2.0, 2.0, false), 0.0);
        assert_eq!(ssc_loss(1.0, 3.0, false), -ssc_loss(3.0, 1.0, false));
        assert_eq!(ssc_loss(1.0, 3.0, true), -2.0);
        assert_eq!(ssc_loss(3.0, 1.0, true), 0.0);
        assert_eq!(integrated_loss(1.5, 4.0, 1.0, 1.0), 2.0 * 1.5 - 4.0);
        assert_eq!(integrated_loss(1.5, 4.0, 0.0, 1.0), ssc_loss(1.5, 4.0, false));
        assert_eq!(integrated_loss(1.5, 4.0, 1.0, 0.0), 1.5);
        assert_eq!(secrecy_proxy(2.0, 1.0), 0.0);
        assert_eq!(secrecy_proxy(1.0, 4.0), 3.0);
    }

    #[test]
    fn objective_values_match_losses() {
        let (b, e) = (1.25, 2.5);
        assert_eq!(Objective::Ssc { eve_weight: 1.0, clamp: false }.value(b, e), ssc_loss(b, e, false));
        assert_eq!(Objective::Ssc { eve_weight: 1.0, clamp: true }.value(e, b), ssc_loss(e, b, true));
        assert_eq!(Objective::Ssc { eve_weight: 1.0, clamp: true }.weights(e, b), (0.0, 0.0));
        assert_eq!(Objective::Integrated { w1: 1.0, w2: 1.0 }.value(b, e), integrated_loss(b, e, 1.0, 1.0));
    }

    #[test]
    fn cross_entropy_oracles() {
        let vocab = Vocabulary::build(&["a b c d e f g h"], 12).unwrap();
        let seq = encode_sentence("a b c", &vocab, 6);
        let batch = SentenceBatch::from_sequences(&[&seq]).unwrap();
        let uniform = Array2::zeros((6, 12));
        assert!((cross_entropy_loss(&uniform, &batch).unwrap() - 12f64.ln()).abs() < 1e-12);
        let mut sharp = Array2::from_elem((6, 12), -1e4);
        for (row, t) in batch.next_token_targets().iter().enumerate() {
            if let Some(t) = t {
                sharp[[row, *t]] = 0.0;
            }
        }
        assert!(cross_entropy_loss(&sharp, &batch).unwrap().abs() < 1e-12);
        let hollow = SentenceBatch {
            ids: Array2::zeros((1, 6)),
        };
        assert!(cross_entropy_loss(&uniform, &hollow).is_err());
    }

    #[test]
    fn sgd_step_rules() {
        let mut bundle = ParameterBundle::init(&ModelConfig::miniature(), 0).unwrap();
        let before = bundle.clone();
        let mut grads = GradientMap::new();
        let zero = bundle.set(Collection::Beta).get("dense1.b").clone() * 0.0;
        grads.entry(Collection::Beta).or_default().insert("dense1.b".into(), zero);
        optimizer_step(&mut bundle, &grads, 0.1).unwrap();
        assert_eq!(bundle.set(Collection::Beta), before.set(Collection::Beta));

        let mut g = bundle.set(Collection::Beta).get("dense1.b").clone();
        g.fill(0.0);
        g[[0, 0]] = 2.0;
        grads.get_mut(&Collection::Beta).unwrap().insert("dense1.b".into(), g.clone());
        optimizer_step(&mut bundle, &grads, 0.1).unwrap();
        let moved = bundle.set(Collection::Beta).get("dense1.b")[[0, 0]];
        assert!((moved - (before.set(Collection::Beta).get("dense1.b")[[0, 0]] - 0.2)).abs() < 1e-15);

        bundle.set_frozen(Collection::Beta, true);
        let snapshot = bundle.clone();
        optimizer_step(&mut bundle, &grads, 0.1).unwrap();
        assert_eq!(bundle.set(Collection::Beta), snapshot.set(Collection::Beta));

        grads.get_mut(&Collection::Beta).unwrap().insert("dense1.b".into(), Array2::zeros((3, 3)));
        assert!(optimizer_step(&mut bundle, &grads, 0.1).is_err());
    }

    #[test]
    fn phases_respect_freezes_and_log_identities() {
        let data = tiny_data();
        let cfg = tiny_config();
        let channel = ChannelConfig::default();
        let mut bundle = ParameterBundle::init(&ModelConfig::miniature(), 1).unwrap();
        let init = bundle.clone();
        let a = train_stage_a(&mut bundle, &data, &channel, &cfg).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(bundle.set(Collection::ChiEve).tensors, init.set(Collection::ChiEve).tensors);
        assert_ne!(bundle.set(Collection::Alpha).tensors, init.set(Collection::Alpha).tensors);

        let after_a = bundle.clone();
        let b = train_stage_b(&mut bundle, &data, &channel, &cfg).unwrap();
        for c in BOB_SIDE {
            assert_eq!(bundle.set(c).tensors, after_a.set(c).tensors, "{}", c.name());
        }
        assert_ne!(bundle.set(Collection::DeltaEve).tensors, after_a.set(Collection::DeltaBob).tensors);

        let after_b = bundle.clone();
        let c = train_phase2(&mut bundle, &data, &channel, &cfg).unwrap();
        for col in EVE_SIDE {
            assert_eq!(bundle.set(col).tensors, after_b.set(col).tensors);
        }
        for r in a.iter().chain(&b).chain(&c) {
            assert_eq!(r.l_ssc, r.ce_bob - r.ce_eve);
            assert!(r.secrecy_proxy >= 0.0);
            assert!((6.0..=12.0).contains(&r.snr_db));
        }
    }

    #[test]
    fn training_is_reproducible() {
        let data = tiny_data();
        let cfg = tiny_config();
        let channel = ChannelConfig::default();
        let run = || {
            let mut bundle = ParameterBundle::init(&ModelConfig::miniature(), 1).unwrap();
            let r = train_phase1(&mut bundle, &data, &channel, &cfg).unwrap();
            (bundle, r)
        };
        let (b1, r1) = run();
        let (b2, r2) = run();
        assert_eq!(r1, r2);
        for c in Collection::ALL {
            assert_eq!(b1.set(c).tensors, b2.set(c).tensors);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = tiny_data();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            optimizer: OptimizerKind::Sgd,
            epochs_stage_a: 3,
            ..tiny_config()
        };
        let mut bundle = ParameterBundle::init(&ModelConfig::miniature(), 1).unwrap();
        let err = train_stage_a(&mut bundle, &data, &ChannelConfig::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { w2: -1.0, ..TrainConfig::default() },
            TrainConfig { snr_train_db: (10.0, 0.0), ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert_eq!(TrainConfig::default().integrated_epochs(), 30);
    }

    #[test]
    fn seeds_split_streams() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(5, "x"), derive_seed(5, "x"));
    }
}
