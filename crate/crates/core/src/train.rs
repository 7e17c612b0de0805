//! Adversarial proxy-classification training.
//!
//! Each step draws a balanced batch (category uniformly, then a dataset of
//! that category uniformly), generates the clouds on the fly from seeds
//! derived from the run seed and the global step, and applies one combined
//! classifier + adversary update. Clouds of a batch are processed in parallel
//! and their gradients summed in batch order, so results do not depend on the
//! thread count.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::cloud::{Category, PointCloud};
use crate::error::{Error, Result};
use crate::net::{
    Adam, AdamConfig, Checkpoint, Geometry, Init, Labels, LrSchedule, MetricModel, ModelConfig,
};
use crate::pcgen::DatasetSuite;
use crate::rng::{derive_seed, rng_from_seed};

const STREAM_TRAIN: u64 = 0;
const STREAM_HELD_OUT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_BATCH: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub suite: DatasetSuite,
    pub model: ModelConfig,
    pub batch_size: usize,
    pub steps: u64,
    /// Data, dropout and held-out streams are all derived from this seed.
    pub seed: u64,
    pub init_seed: u64,
    pub init: Init,
    /// Evaluate on the held-out set every this many steps (0 = only at the end).
    pub eval_every: u64,
    /// Held-out clouds per dataset.
    pub eval_per_dataset: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            suite: DatasetSuite::default(),
            model: ModelConfig::default(),
            batch_size: 8,
            steps: 6000,
            seed: 0,
            init_seed: 1,
            init: Init::Symmetric,
            eval_every: 0,
            eval_per_dataset: 50,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn lambda(&self) -> f64 {
        self.model.lambda
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.model.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.suite.validate()?;
        self.model.validate()?;
        if self.model.datasets != self.suite.len() {
            return Err(Error::param(format!(
                "adversary has {} outputs but the suite has {} datasets",
                self.model.datasets,
                self.suite.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be >= 1"));
        }
        Ok(())
    }

    /// Loss weights and labels of a cloud from dataset `id`.
    pub fn labels(&self, id: usize) -> Result<Labels> {
        let d = self.suite.get(id)?;
        Ok(Labels {
            category: d.category.index(),
            dataset: id,
            classifier_weight: 1.0,
            adversary_weight: if d.category == Category::Real { 1.0 } else { 0.0 },
        })
    }

    /// Dataset ids of the batch of `step` (0-based).
    pub fn batch_datasets(&self, step: u64) -> Vec<usize> {
        let mut rng = rng_from_seed(derive_seed(derive_seed(self.seed, STREAM_BATCH), step));
        (0..self.batch_size)
            .map(|_| {
                let cat = Category::ALL[rng.gen_range(0..Category::ALL.len())];
                let ids = self.suite.ids_in(cat);
                ids[rng.gen_range(0..ids.len())]
            })
            .collect()
    }

    /// Global sample index of batch slot `slot` at `step`.
    fn sample_index(&self, step: u64, slot: usize) -> u64 {
        step * self.batch_size as u64 + slot as u64
    }

    /// Seed of the training stream; distinct from the held-out stream.
    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_TRAIN)
    }

    pub fn held_out_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_HELD_OUT)
    }
}

/// A cloud with its ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub cloud: PointCloud,
    pub dataset: usize,
}

/// Precomputed geometry of a labelled cloud.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub geometry: Geometry,
    pub labels: Labels,
}

fn prepare(cfg: &TrainConfig, ex: &Example) -> Result<Prepared> {
    let labels = cfg.labels(ex.dataset)?;
    if let Some(c) = ex.cloud.provenance.category {
        if c.index() != labels.category {
            return Err(Error::param(format!(
                "cloud tagged {c} but dataset {} is {}",
                ex.dataset,
                Category::from_index(labels.category).unwrap()
            )));
        }
    }
    Ok(Prepared {
        geometry: Geometry::build(&ex.cloud.points, &cfg.model)?,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    /// 1-based optimizer step.
    pub step: u64,
    /// Batch mean of the classifier loss.
    pub classifier: f64,
    /// Batch mean of the (filtered) adversary loss.
    pub adversary: f64,
}

/// One combined update on a prepared batch.
///
/// `dropout_seeds` holds one seed per cloud; `None` disables dropout.
pub fn train_step(
    model: &mut MetricModel<f32>,
    optimizer: &mut Adam<f32>,
    batch: &[Prepared],
    dropout_seeds: Option<&[u64]>,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let scale = 1.0 / batch.len() as f32;
    let shared: &MetricModel<f32> = model;
    let parts: Vec<Result<(MetricModel<f32>, f64, f64)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut g = shared.zeros_like();
            let seed = dropout_seeds.map(|s| s[i]);
            let l = shared.accumulate_gradients(&p.geometry, &p.labels, seed, &mut g, scale)?;
            Ok((g, l.classifier as f64, l.adversary as f64))
        })
        .collect();
    let mut total: Option<MetricModel<f32>> = None;
    let (mut lc, mut la) = (0.0, 0.0);
    for part in parts {
        let (g, c, a) = part?;
        lc += c;
        la += a;
        match &mut total {
            None => total = Some(g),
            Some(t) => t.add_scaled(&g, 1.0),
        }
    }
    optimizer.step(model, total.as_ref().unwrap());
    let n = batch.len() as f64;
    Ok(StepLosses {
        step: optimizer.state.step,
        classifier: lc / n,
        adversary: la / n,
    })
}

/// Row = truth, column = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..self.classes).map(|i| self.get(i, i)).sum::<u64>() as f64 / total as f64)
    }

    /// `truth,pred_0,…` header followed by one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("truth");
        for n in names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for t in 0..self.classes {
            s.push_str(&names[t]);
            for p in 0..self.classes {
                let _ = write!(s, ",{}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }
}

/// Held-out evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub step: u64,
    pub clouds: usize,
    pub acc_c: f64,
    /// `None` when the set has no Real-category clouds.
    pub acc_a: Option<f64>,
    pub confusion_c: Confusion,
    /// Over Real-category clouds only.
    pub confusion_a: Confusion,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<StepLosses>,
    pub evaluations: Vec<Evaluation>,
}

impl TrainReport {
    pub fn last_evaluation(&self) -> Option<&Evaluation> {
        self.evaluations.last()
    }

    /// `step,loss_c,loss_a,acc_c,acc_a`; accuracy columns are empty on steps
    /// without an evaluation.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("step,loss_c,loss_a,acc_c,acc_a\n");
        let mut evals = self.evaluations.iter().peekable();
        for l in &self.losses {
            let _ = write!(s, "{},{:.6},{:.6}", l.step, l.classifier, l.adversary);
            match evals.peek() {
                Some(e) if e.step == l.step => {
                    let _ = write!(s, ",{:.6},{}", e.acc_c, fmt_opt(e.acc_a));
                    evals.next();
                }
                _ => s.push_str(",,"),
            }
            s.push('\n');
        }
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Labelled held-out clouds with precomputed geometry.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub items: Vec<Prepared>,
}

impl EvalSet {
    /// `per_dataset` clouds of every dataset, drawn from the held-out stream.
    pub fn generate(cfg: &TrainConfig, per_dataset: usize) -> Result<Self> {
        let seed = cfg.held_out_seed();
        let jobs: Vec<(usize, u64)> = (0..cfg.suite.len())
            .flat_map(|id| (0..per_dataset as u64).map(move |i| (id, i)))
            .collect();
        let items = jobs
            .par_iter()
            .map(|&(id, i)| {
                let cloud = cfg.suite.generate(id, seed, i)?;
                prepare(cfg, &Example { cloud, dataset: id })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items })
    }

    pub fn from_examples(cfg: &TrainConfig, examples: &[Example]) -> Result<Self> {
        let items = examples
            .par_iter()
            .map(|ex| prepare(cfg, ex))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Dropout-free evaluation.
///
/// The predicted category of a cloud is the argmax of its scene score (mean
/// query probability). The predicted dataset is the majority of per-query
/// adversary argmaxes (lowest id on ties), scored on Real clouds only.
pub fn evaluate(model: &MetricModel<f32>, set: &EvalSet, step: u64) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let uc = model.classifier.units();
    let ua = model.adversary.units();
    let preds: Vec<(usize, usize)> = set
        .items
        .par_iter()
        .map(|p| {
            let inf = model.infer(&p.geometry);
            let rows = p.geometry.q2();
            let mut scene = vec![0.0f64; uc];
            for row in inf.classifier.chunks_exact(uc) {
                for (s, v) in scene.iter_mut().zip(row) {
                    *s += *v as f64;
                }
            }
            let mut best_c = 0;
            for c in 1..uc {
                if scene[c] > scene[best_c] {
                    best_c = c;
                }
            }
            let mut votes = vec![0usize; ua];
            for row in inf.adversary.chunks_exact(ua) {
                votes[argmax(row)] += 1;
            }
            let mut best_a = 0;
            for a in 1..ua {
                if votes[a] > votes[best_a] {
                    best_a = a;
                }
            }
            debug_assert_eq!(votes.iter().sum::<usize>(), rows);
            (best_c, best_a)
        })
        .collect();
    let mut confusion_c = Confusion::new(uc);
    let mut confusion_a = Confusion::new(ua);
    for (p, (c, a)) in set.items.iter().zip(preds) {
        confusion_c.add(p.labels.category, c);
        if p.labels.category == Category::Real.index() {
            confusion_a.add(p.labels.dataset, a);
        }
    }
    Ok(Evaluation {
        step,
        clouds: set.len(),
        acc_c: confusion_c.accuracy().unwrap_or(0.0),
        acc_a: confusion_a.accuracy(),
        confusion_c,
        confusion_a,
    })
}

/// Model, optimizer and log of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: MetricModel<f32>,
    pub optimizer: Adam<f32>,
    pub report: TrainReport,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = MetricModel::new(config.model.clone(), config.init_seed, config.init)?;
        let mut optimizer = Adam::new(&model, config.schedule.clone());
        optimizer.config = config.adam;
        Ok(Self {
            config,
            model,
            optimizer,
            report: TrainReport::default(),
        })
    }

    /// Resume from a checkpoint; the model configuration of the checkpoint
    /// wins over `config.model`.
    pub fn from_checkpoint(mut config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        config.model = ck.model.config.clone();
        config.validate()?;
        let mut optimizer = Adam::new(&ck.model, config.schedule.clone());
        optimizer.config = config.adam;
        if let Some(state) = ck.optimizer {
            optimizer = optimizer.with_state(state);
        }
        Ok(Self {
            config,
            model: ck.model,
            optimizer,
            report: TrainReport::default(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.optimizer.state.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.model.clone(), Some(self.optimizer.state.clone()))
    }

    fn due_for_eval(&self, step: u64) -> bool {
        step == self.config.steps
            || (self.config.eval_every > 0 && step.is_multiple_of(self.config.eval_every))
    }

    /// Train until `config.steps`, evaluating on `eval` at the configured
    /// cadence and after the last step.
    pub fn run(&mut self, eval: Option<&EvalSet>) -> Result<&TrainReport> {
        run_lockstep(std::slice::from_mut(self), eval)?;
        Ok(&self.report)
    }
}

/// The batch of 0-based `step`: prepared clouds plus per-cloud dropout seeds.
pub fn make_batch(cfg: &TrainConfig, step: u64) -> Result<(Vec<Prepared>, Vec<u64>)> {
    let ids = cfg.batch_datasets(step);
    let train_seed = cfg.train_seed();
    let drop_seed = derive_seed(cfg.seed, STREAM_DROPOUT);
    let prepared = ids
        .par_iter()
        .enumerate()
        .map(|(slot, &id)| {
            let cloud = cfg.suite.generate(id, train_seed, cfg.sample_index(step, slot))?;
            prepare(cfg, &Example { cloud, dataset: id })
        })
        .collect::<Result<Vec<_>>>()?;
    let seeds = (0..ids.len())
        .map(|slot| derive_seed(drop_seed, cfg.sample_index(step, slot)))
        .collect();
    Ok((prepared, seeds))
}

/// Advance several trainers that share everything but the model
/// configuration's λ through the same batches. Each trainer ends exactly
/// where an independent run would; the batches are built once.
pub fn run_lockstep(trainers: &mut [Trainer], eval: Option<&EvalSet>) -> Result<()> {
    let Some(first) = trainers.first() else {
        return Ok(());
    };
    let data_cfg = first.config.clone();
    for t in trainers.iter() {
        let mut a = t.config.clone();
        a.model.lambda = data_cfg.model.lambda;
        if a != data_cfg || t.step_count() != first.step_count() {
            return Err(Error::param("lockstep trainers must differ only in lambda"));
        }
    }
    let start = first.step_count();
    for step in start..data_cfg.steps {
        let (batch, seeds) = make_batch(&data_cfg, step)?;
        for t in trainers.iter_mut() {
            let losses = train_step(&mut t.model, &mut t.optimizer, &batch, Some(&seeds))?;
            t.report.losses.push(losses);
            if let Some(set) = eval {
                if t.due_for_eval(losses.step) {
                    let e = evaluate(&t.model, set, losses.step)?;
                    t.report.evaluations.push(e);
                }
            }
        }
        log::debug!("step {} of {}", step + 1, data_cfg.steps);
    }
    Ok(())
}

/// One row of a λ sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub acc_c: f64,
    pub acc_a: Option<f64>,
}

/// Train one model per λ (same seeds and data) and evaluate each on `eval`.
pub fn lambda_sweep(
    config: &TrainConfig,
    lambdas: &[f64],
    eval: &EvalSet,
) -> Result<(Vec<SweepRow>, Vec<Trainer>)> {
    if lambdas.len() < 2 {
        return Err(Error::param("a lambda sweep needs at least two values"));
    }
    let mut trainers = lambdas
        .iter()
        .map(|&l| Trainer::new(config.clone().with_lambda(l)))
        .collect::<Result<Vec<_>>>()?;
    run_lockstep(&mut trainers, Some(eval))?;
    let mut rows = Vec::with_capacity(trainers.len());
    for t in &trainers {
        let e = match t.report.last_evaluation() {
            Some(e) if e.step == t.step_count() => e.clone(),
            _ => evaluate(&t.model, eval, t.step_count())?,
        };
        rows.push(SweepRow {
            lambda: t.lambda(),
            acc_c: e.acc_c,
            acc_a: e.acc_a,
        });
    }
    Ok((rows, trainers))
}

impl Trainer {
    pub fn lambda(&self) -> f64 {
        self.model.config.lambda
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda,acc_c,acc_a\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{}", r.lambda, r.acc_c, fmt_opt(r.acc_a));
    }
    s
}

/// Chance level of the adversary once the feature extractor carries only
/// category information: `U_C / U_A` for an unfiltered adversary, `1 / n_real`
/// when the adversary sees Real-category samples only.
pub fn adversary_lower_bound(
    categories: usize,
    datasets: usize,
    filtered: bool,
    n_real: usize,
) -> Result<f64> {
    if categories == 0 || datasets == 0 || (filtered && n_real == 0) {
        return Err(Error::param("lower bound needs non-zero class counts"));
    }
    if datasets < categories {
        return Err(Error::param(
            "there must be at least as many datasets as categories",
        ));
    }
    Ok(if filtered {
        1.0 / n_real as f64
    } else {
        categories as f64 / datasets as f64
    })
}

/// Write `metrics.csv`, `confusion_category.csv` and `confusion_dataset.csv`
/// (from the last evaluation, if any) into `dir`.
pub fn write_report(report: &TrainReport, suite: &DatasetSuite, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::File::create(dir.join("metrics.csv"))?.write_all(report.metrics_csv().as_bytes())?;
    if let Some(e) = report.last_evaluation() {
        let cats: Vec<String> = Category::ALL.iter().map(|c| c.name().to_string()).collect();
        std::fs::write(dir.join("confusion_category.csv"), e.confusion_c.to_csv(&cats))?;
        let names: Vec<String> = suite.datasets.iter().map(|d| d.name.clone()).collect();
        std::fs::write(dir.join("confusion_dataset.csv"), e.confusion_a.to_csv(&names))?;
    }
    Ok(())
}
