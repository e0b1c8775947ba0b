//! Self-supervised training loop, evaluation and the reporting metrics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use crate::autograd::Graph;
use crate::data::AvClip;
use crate::error::{Error, Result};
use crate::model::{AttentionMap, Mode, Prediction, SyncModel, Variant};
use crate::params::Adam;
use crate::rng::Rng;

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,attn_mass,seconds";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Evaluate every this many epochs (the final epoch is always evaluated).
    pub eval_every: usize,
    /// Where `metrics.csv` is written, if anywhere.
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 80,
            epochs: 300,
            lr: 1e-3,
            seed: 0,
            eval_every: 10,
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        Adam::new(self.lr)?;
        Ok(())
    }
}

/// One evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Sync-class scores of the positive test clips.
    pub sync_scores: Vec<f64>,
    /// Sync-class scores of the negative test clips.
    pub unsync_scores: Vec<f64>,
    /// Mean attention mass on discriminative test blocks (attention variants).
    pub attn_mass: Option<f64>,
    pub seconds: f64,
}

impl Metrics {
    pub fn csv_row(&self) -> String {
        let mass = self.attn_mass.map(|m| m.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch, self.train_loss, self.train_acc, self.test_acc, mass, self.seconds
        )
    }
}

/// Anything that maps a clip to two logits.
pub trait Classifier {
    fn predict(&self, clip: &AvClip) -> Result<Prediction>;
}

impl Classifier for SyncModel {
    fn predict(&self, clip: &AvClip) -> Result<Prediction> {
        SyncModel::predict(self, clip)
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Sync-class probability per clip, in dataset order.
    pub scores: Vec<f64>,
    pub predicted: Vec<usize>,
    pub attention: Vec<Option<AttentionMap>>,
}

impl Evaluation {
    /// Scores split by true label: (sync positives, un-sync negatives).
    pub fn scores_by_label(&self, clips: &[AvClip]) -> (Vec<f64>, Vec<f64>) {
        let mut sync = Vec::new();
        let mut unsync = Vec::new();
        for (s, c) in self.scores.iter().zip(clips) {
            if c.label == 1 {
                sync.push(*s);
            } else {
                unsync.push(*s);
            }
        }
        (sync, unsync)
    }

    /// Attention maps paired with their clips' discriminativity flags.
    pub fn alignment(&self, clips: &[AvClip]) -> Result<Alignment> {
        let maps: Vec<&AttentionMap> = self.attention.iter().flatten().collect();
        if maps.len() != clips.len() {
            return Err(Error::UndefinedMetric(
                "model produced no attention maps".into(),
            ));
        }
        let flags: Vec<&[bool]> = clips.iter().map(|c| c.block_discriminative.as_slice()).collect();
        attention_alignment(&maps, &flags)
    }
}

/// Eval-mode accuracy and sync scores. The predicted class is the argmax of
/// the logits with ties going to class 0.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, clips: &[AvClip]) -> Result<Evaluation> {
    if clips.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let mut correct = 0;
    let mut scores = Vec::with_capacity(clips.len());
    let mut predicted = Vec::with_capacity(clips.len());
    let mut attention = Vec::with_capacity(clips.len());
    for clip in clips {
        let p = model.predict(clip)?;
        let class = p.class();
        if class == clip.label as usize {
            correct += 1;
        }
        scores.push(p.sync_score());
        predicted.push(class);
        attention.push(p.attention);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / clips.len() as f64,
        scores,
        predicted,
        attention,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub mean_loss: f64,
    pub correct: usize,
    pub size: usize,
}

/// Optimizer state plus the generator that drives dropout and shuffling.
pub struct Trainer {
    adam: Adam,
    rng: Rng,
    steps: usize,
}

impl Trainer {
    pub fn new(lr: f64, seed: u64) -> Result<Self> {
        Ok(Trainer {
            adam: Adam::new(lr)?,
            rng: Rng::new(seed),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    /// Mean cross-entropy over `batch`, one backward pass, one Adam step.
    /// The loss of each clip is checked before any parameter changes.
    pub fn step(&mut self, model: &mut SyncModel, batch: &[&AvClip]) -> Result<BatchStats> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        model.store_mut().zero_grads();
        let mut total = 0.0;
        let mut correct = 0;
        for clip in batch {
            let mut g = Graph::new();
            let (loss, out) = model.clip_loss(&mut g, clip, &mut Mode::Train(&mut self.rng))?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                // epoch and batch are filled in by the caller that knows them
                return Err(Error::NonFiniteLoss { epoch: 0, batch: 0, loss: value });
            }
            let z = g.value(out.logits).data();
            if usize::from(z[1] > z[0]) == clip.label as usize {
                correct += 1;
            }
            total += value;
            let scaled = g.scale(loss, scale);
            g.backward(scaled, model.store_mut())?;
        }
        self.adam.step(model.store_mut());
        self.steps += 1;
        Ok(BatchStats {
            mean_loss: total * scale,
            correct,
            size: batch.len(),
        })
    }

    /// One pass over `clips` in a seed-determined order. Returns the mean
    /// loss and the train-mode accuracy over the epoch.
    pub fn epoch(
        &mut self,
        model: &mut SyncModel,
        clips: &[AvClip],
        batch_size: usize,
        epoch: usize,
    ) -> Result<(f64, f64)> {
        let mut order: Vec<usize> = (0..clips.len()).collect();
        self.rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&AvClip> = chunk.iter().map(|&i| &clips[i]).collect();
            let stats = self.step(model, &batch).map_err(|e| match e {
                Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    loss,
                },
                other => other,
            })?;
            loss_sum += stats.mean_loss * stats.size as f64;
            correct += stats.correct;
        }
        Ok((
            loss_sum / clips.len() as f64,
            correct as f64 / clips.len() as f64,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct History {
    pub records: Vec<Metrics>,
    pub steps: usize,
}

impl History {
    pub fn last(&self) -> &Metrics {
        self.records.last().expect("training records at least one evaluation")
    }
}

fn variant_has_attention(v: Variant) -> bool {
    v != Variant::Uniform
}

/// Trains `model` in place. Metrics are appended to
/// `<output_dir>/metrics.csv` and flushed after every evaluation.
pub fn train(
    model: &mut SyncModel,
    train_set: &[AvClip],
    test_set: &[AvClip],
    config: &TrainConfig,
) -> Result<History> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Config("train and test sets must be nonempty".into()));
    }
    if config.batch_size > train_set.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training clips",
            config.batch_size,
            train_set.len()
        )));
    }
    let mut csv = match &config.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
            writeln!(w, "{METRICS_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };

    let start = Instant::now();
    let mut trainer = Trainer::new(config.lr, config.seed)?;
    let mut records = Vec::new();
    for epoch in 1..=config.epochs {
        let (train_loss, _) = trainer.epoch(model, train_set, config.batch_size, epoch)?;
        if epoch % config.eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let train_eval = evaluate(model, train_set)?;
        let test_eval = evaluate(model, test_set)?;
        let (sync_scores, unsync_scores) = test_eval.scores_by_label(test_set);
        let attn_mass = if variant_has_attention(model.variant()) {
            test_eval.alignment(test_set).ok().map(|a| a.mass)
        } else {
            None
        };
        let m = Metrics {
            epoch,
            train_loss,
            train_acc: train_eval.accuracy,
            test_acc: test_eval.accuracy,
            sync_scores,
            unsync_scores,
            attn_mass,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "{} epoch {epoch}: loss {:.4} train {:.3} test {:.3}",
            model.variant(),
            m.train_loss,
            m.train_acc,
            m.test_acc
        );
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", m.csv_row())?;
            w.flush()?;
        }
        records.push(m);
    }
    Ok(History {
        records,
        steps: trainer.steps(),
    })
}

/// Final-epoch outcome of one training run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub mean_sync_score: f64,
    pub mean_unsync_score: f64,
    /// Attention alignment on the test set (attention variants only, and
    /// only when some test clip has a discriminative block).
    pub alignment: Option<Alignment>,
    pub seconds: f64,
}

impl RunSummary {
    /// Mean sync-class score of positives minus that of negatives.
    pub fn score_separation(&self) -> f64 {
        self.mean_sync_score - self.mean_unsync_score
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Trains a fresh `variant` model (initialized from `config.seed`) and
/// evaluates it once at the end.
pub fn train_and_evaluate(
    variant: Variant,
    fusion: &crate::model::FusionConfig,
    train_set: &[AvClip],
    test_set: &[AvClip],
    config: &TrainConfig,
) -> Result<(SyncModel, RunSummary)> {
    let start = Instant::now();
    let mut model = SyncModel::new(variant, fusion.clone(), config.seed)?;
    let config = TrainConfig {
        eval_every: config.epochs,
        ..config.clone()
    };
    let history = train(&mut model, train_set, test_set, &config)?;
    let last = history.last();
    let ev = evaluate(&model, test_set)?;
    // undefined when no test clip has an event (e.g. p_event = 0)
    let alignment = if variant_has_attention(variant) {
        match ev.alignment(test_set) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let summary = RunSummary {
        variant,
        seed: config.seed,
        test_acc: last.test_acc,
        train_loss: last.train_loss,
        mean_sync_score: mean(&last.sync_scores),
        mean_unsync_score: mean(&last.unsync_scores),
        alignment,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, summary))
}

/// Median of a nonempty list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "median of an empty list");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramRow {
    pub low: f64,
    pub high: f64,
    pub sync: usize,
    pub unsync: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    pub rows: Vec<HistogramRow>,
}

impl ScoreHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count_sync,count_unsync\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.low, r.high, r.sync, r.unsync));
        }
        s
    }

    pub fn total(&self) -> (usize, usize) {
        self.rows
            .iter()
            .fold((0, 0), |(a, b), r| (a + r.sync, b + r.unsync))
    }
}

/// Bin index for a score in `[0, 1]`: bins are `[i/bins, (i+1)/bins)` with
/// the last bin closed on the right.
fn bin_of(score: f64, bins: usize) -> usize {
    let low = |i: usize| i as f64 / bins as f64;
    let mut i = ((score * bins as f64).floor() as usize).min(bins - 1);
    while i > 0 && score < low(i) {
        i -= 1;
    }
    while i + 1 < bins && score >= low(i + 1) {
        i += 1;
    }
    i
}

/// Side-by-side histograms of sync-class scores for sync and un-sync clips.
pub fn score_histogram(sync: &[f64], unsync: &[f64], bins: usize) -> Result<ScoreHistogram> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    if let Some(s) = sync.iter().chain(unsync).find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Contract(format!("score {s} outside [0, 1]")));
    }
    let mut rows: Vec<HistogramRow> = (0..bins)
        .map(|i| HistogramRow {
            low: i as f64 / bins as f64,
            high: (i + 1) as f64 / bins as f64,
            sync: 0,
            unsync: 0,
        })
        .collect();
    for &s in sync {
        rows[bin_of(s, bins)].sync += 1;
    }
    for &s in unsync {
        rows[bin_of(s, bins)].unsync += 1;
    }
    Ok(ScoreHistogram { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// Mean attention mass on discriminative blocks.
    pub mass: f64,
    /// Mean fraction of discriminative blocks, the mass uniform weights give.
    pub uniform_reference: f64,
    /// Clips with at least one discriminative block (the ones averaged).
    pub clips: usize,
}

/// Attention mass on discriminative blocks, averaged over the clips that
/// contain at least one. Spatio-temporal maps are first summed per block.
pub fn attention_alignment(maps: &[&AttentionMap], discriminative: &[&[bool]]) -> Result<Alignment> {
    if maps.len() != discriminative.len() {
        return Err(Error::dim(format!(
            "{} attention maps but {} discriminativity vectors",
            maps.len(),
            discriminative.len()
        )));
    }
    let mut mass = 0.0;
    let mut reference = 0.0;
    let mut clips = 0;
    for (map, flags) in maps.iter().zip(discriminative) {
        let per_block = map.block_mass();
        if per_block.len() != flags.len() {
            return Err(Error::dim(format!(
                "attention over {} blocks but {} flags",
                per_block.len(),
                flags.len()
            )));
        }
        let hits = flags.iter().filter(|&&f| f).count();
        if hits == 0 {
            continue;
        }
        clips += 1;
        mass += per_block
            .iter()
            .zip(flags.iter())
            .filter(|(_, &f)| f)
            .map(|(w, _)| w)
            .sum::<f64>();
        reference += hits as f64 / flags.len() as f64;
    }
    if clips == 0 {
        return Err(Error::UndefinedMetric(
            "no clip has a discriminative block".into(),
        ));
    }
    Ok(Alignment {
        mass: mass / clips as f64,
        uniform_reference: reference / clips as f64,
        clips,
    })
}

/// Writes a score histogram CSV, creating parent directories.
pub fn write_histogram(path: &Path, hist: &ScoreHistogram) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, hist.to_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionKind;
    use crate::tensor::Tensor;

    struct Oracle;
    impl Classifier for Oracle {
        fn predict(&self, clip: &AvClip) -> Result<Prediction> {
            let z = if clip.label == 1 { [0.0, 5.0] } else { [5.0, 0.0] };
            Ok(Prediction { logits: z, attention: None })
        }
    }

    struct Constant;
    impl Classifier for Constant {
        fn predict(&self, _: &AvClip) -> Result<Prediction> {
            Ok(Prediction { logits: [1.0, 1.0], attention: None })
        }
    }

    fn dummy_clips(n: usize) -> Vec<AvClip> {
        (0..n)
            .map(|i| AvClip {
                visual: Tensor::zeros(&[8, 1, 1, 1]),
                audio: Tensor::zeros(&[8, 1]),
                label: (i % 2) as u8,
                shift_blocks: if i % 2 == 0 { 3 } else { 0 },
                block_discriminative: vec![false],
            })
            .collect()
    }

    #[test]
    fn oracle_and_constant_accuracy() {
        let clips = dummy_clips(10);
        assert_eq!(evaluate(&Oracle, &clips).unwrap().accuracy, 1.0);
        let e = evaluate(&Constant, &clips).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert!(e.predicted.iter().all(|&c| c == 0));
        assert!(matches!(evaluate(&Oracle, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn histogram_boundaries_and_conservation() {
        let h = score_histogram(&[1.0, 1.0], &[0.0], 4).unwrap();
        assert_eq!(h.rows[3].sync, 2);
        assert_eq!(h.rows[0].unsync, 1);
        assert_eq!(h.total(), (2, 1));
        assert!(score_histogram(&[1.2], &[], 4).is_err());
        assert!(score_histogram(&[0.5], &[], 1).is_err());
    }

    #[test]
    fn histogram_even_grid() {
        let scores: Vec<f64> = (0..100).map(|k| k as f64 / 100.0).collect();
        // counting oracle: k/100 lies in bin floor(k/10)
        let mut expect = [0usize; 10];
        for k in 0..100 {
            expect[k / 10] += 1;
        }
        let h = score_histogram(&scores, &scores, 10).unwrap();
        for (row, e) in h.rows.iter().zip(expect) {
            assert_eq!(row.sync, e);
            assert_eq!(row.sync, 10);
            assert_eq!(row.unsync, 10);
        }
        let csv = h.to_csv();
        assert!(csv.starts_with("bin_low,bin_high,count_sync,count_unsync\n0,0.1,10,10\n"));
    }

    fn temporal_map(w: &[f64]) -> AttentionMap {
        AttentionMap {
            kind: AttentionKind::Temporal,
            weights: Tensor::vector(w).unwrap(),
            confidences: Tensor::zeros(&[w.len()]),
        }
    }

    #[test]
    fn alignment_cases() {
        let flags = [true, false, true, false, false];
        let uniform = temporal_map(&[0.2; 5]);
        let a = attention_alignment(&[&uniform], &[&flags]).unwrap();
        assert!((a.mass - 0.4).abs() < 1e-12);
        assert!((a.uniform_reference - 0.4).abs() < 1e-12);

        let hot = temporal_map(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        let a = attention_alignment(&[&hot], &[&flags]).unwrap();
        assert_eq!(a.mass, 1.0);

        let none = [false; 5];
        assert!(matches!(
            attention_alignment(&[&hot], &[&none]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn alignment_reduces_spatiotemporal_maps() {
        let w: Vec<f64> = vec![1.0 / 8.0; 8];
        let map = AttentionMap {
            kind: AttentionKind::SpatioTemporal,
            weights: Tensor::new(&[2, 1, 2, 2], w).unwrap(),
            confidences: Tensor::zeros(&[2, 1, 2, 2]),
        };
        let a = attention_alignment(&[&map], &[&[false, true]]).unwrap();
        assert!((a.mass - 0.5).abs() < 1e-12);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { lr: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
