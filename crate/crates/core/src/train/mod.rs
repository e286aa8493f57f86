//! Optimisation: Adam, the plateau schedule, the epoch loop over trials,
//! and evaluation.
//!
//! Single-graph datasets train full-batch: one forward over the whole
//! graph per epoch with the loss masked to the training rows. Multi-graph
//! corpora are split by graph and trained in shuffled minibatches of
//! block-diagonally batched graphs. The model after the last epoch is
//! returned; [`Report::BestVal`] only changes which test score is
//! reported.

mod adam;
mod metrics;
mod schedule;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use metrics::{
    accuracy, count, cross_entropy_sum, f1_binary, mean_std, Counts, EpochRow, Metric, MetricsLog,
    Summary, METRICS_HEADER, SUMMARY_HEADER,
};
pub use schedule::ReduceOnPlateau;

use crate::autodiff::{Tape, Tensor};
use crate::config::{Report, Schedule, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Dataset, Graph, Labels, Task};
use crate::model::{stream_rng, Model, ModelConfig, ModelInput, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One forward unit: model input, a target per output row, and the rows
/// that count.
#[derive(Clone, Debug)]
struct Unit {
    input: ModelInput<f32>,
    targets: Arc<[u32]>,
    rows: Arc<[u32]>,
}

fn targets_of(g: &Graph) -> Result<Arc<[u32]>> {
    match g.labels() {
        Labels::None => Err(Error::Graph("training needs labels".into())),
        labels => Ok(labels.classes().into()),
    }
}

#[derive(Clone, Debug)]
enum Layout {
    /// One graph; splits select output rows.
    Single { input: ModelInput<f32>, targets: Arc<[u32]>, splits: [Arc<[u32]>; 3] },
    /// Many graphs; splits select graphs.
    Multi { graphs: Vec<Graph>, splits: [Vec<u32>; 3], eval: [Vec<Unit>; 2], batch_size: usize },
}

/// A dataset prepared for training and evaluation.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub name: String,
    pub task: Task,
    pub feat_dim: usize,
    pub num_classes: usize,
    layout: Layout,
}

impl TaskData {
    /// `batch_size` applies to multi-graph data only.
    pub fn new(ds: &Dataset, batch_size: usize) -> Result<Self> {
        let s = &ds.splits;
        for (what, v) in [("train split", &s.train), ("validation split", &s.val), ("test split", &s.test)] {
            if v.is_empty() {
                return Err(Error::Empty(what));
            }
        }
        let layout = if ds.is_multi_graph() || ds.task() == Task::Graph {
            let eval = [&s.val, &s.test].map(|ids| {
                ids.chunks(batch_size.max(1))
                    .map(|chunk| batch_unit(&ds.graphs, chunk))
                    .collect::<Result<Vec<_>>>()
            });
            let [val, test] = eval;
            Layout::Multi {
                graphs: ds.graphs.clone(),
                splits: [s.train.clone(), s.val.clone(), s.test.clone()],
                eval: [val?, test?],
                batch_size: batch_size.max(1),
            }
        } else {
            let g = &ds.graphs[0];
            Layout::Single {
                input: ModelInput::from_graph(g),
                targets: targets_of(g)?,
                splits: [s.train.as_slice().into(), s.val.as_slice().into(), s.test.as_slice().into()],
            }
        };
        Ok(Self {
            name: ds.name.clone(),
            task: ds.task(),
            feat_dim: ds.feat_dim(),
            num_classes: ds.num_classes(),
            layout,
        })
    }

    pub fn metric(&self) -> Metric {
        if self.task == Task::Edge {
            Metric::F1Binary
        } else {
            Metric::Accuracy
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        let k = split as usize;
        match &self.layout {
            Layout::Single { splits, .. } => splits[k].len(),
            Layout::Multi { splits, .. } => splits[k].len(),
        }
    }

    /// The whole graph of a single-graph dataset.
    pub fn single_input(&self) -> Option<&ModelInput<f32>> {
        match &self.layout {
            Layout::Single { input, .. } => Some(input),
            Layout::Multi { .. } => None,
        }
    }

    /// Per-row targets of a single-graph dataset.
    pub fn single_targets(&self) -> Option<&[u32]> {
        match &self.layout {
            Layout::Single { targets, .. } => Some(targets),
            Layout::Multi { .. } => None,
        }
    }
}

fn batch_unit(graphs: &[Graph], ids: &[u32]) -> Result<Unit> {
    let members: Vec<Graph> = ids.iter().map(|&i| graphs[i as usize].clone()).collect();
    let b = batch_graphs(&members)?;
    let targets = targets_of(b.graph())?;
    let rows: Arc<[u32]> = (0..targets.len() as u32).collect();
    Ok(Unit {
        input: ModelInput::from_batch(&b),
        targets,
        rows,
    })
}

/// Loss sum and tallies of one split.
#[derive(Clone, Copy, Debug, Default)]
struct SplitEval {
    loss_sum: f64,
    counts: Counts,
}

impl SplitEval {
    fn loss(&self) -> f64 {
        self.loss_sum / self.counts.total as f64
    }
}

fn eval_rows(scores: &Tensor<f32>, targets: &[u32], rows: &[u32]) -> Result<SplitEval> {
    Ok(SplitEval {
        loss_sum: cross_entropy_sum(scores, targets, rows),
        counts: count(scores, targets, rows)?,
    })
}

fn eval_units(model: &Model<f32>, units: &[Unit]) -> Result<SplitEval> {
    let mut out = SplitEval::default();
    for u in units {
        let p = model.predict(&u.input)?;
        let e = eval_rows(&p.logits, &u.targets, &u.rows)?;
        out.loss_sum += e.loss_sum;
        out.counts.merge(&e.counts);
    }
    Ok(out)
}

/// Validation and test evaluation of `model`.
fn eval_val_test(model: &Model<f32>, data: &TaskData) -> Result<[SplitEval; 2]> {
    match &data.layout {
        Layout::Single { input, targets, splits } => {
            let p = model.predict(input)?;
            Ok([
                eval_rows(&p.logits, targets, &splits[1])?,
                eval_rows(&p.logits, targets, &splits[2])?,
            ])
        }
        Layout::Multi { eval, .. } => Ok([eval_units(model, &eval[0])?, eval_units(model, &eval[1])?]),
    }
}

/// Metric of `model` on one split, without dropout.
pub fn evaluate(model: &Model<f32>, data: &TaskData, split: Split, metric: Metric) -> Result<f64> {
    let k = split as usize;
    let counts = match &data.layout {
        Layout::Single { input, targets, splits } => {
            let p = model.predict(input)?;
            count(&p.logits, targets, &splits[k])?
        }
        Layout::Multi {
            graphs,
            splits,
            batch_size,
            ..
        } => {
            if splits[k].is_empty() {
                return Err(Error::Empty("evaluation split"));
            }
            let units = splits[k]
                .chunks(*batch_size)
                .map(|c| batch_unit(graphs, c))
                .collect::<Result<Vec<_>>>()?;
            eval_units(model, &units)?.counts
        }
    };
    Ok(counts.metric(metric))
}

/// Outcome of one seed.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub seed: u64,
    pub model: Model<f32>,
    pub log: MetricsLog,
    /// Test metric selected by the report rule.
    pub test_metric: f64,
    pub epochs: usize,
}

/// Forward, backward, and one Adam step on `unit`; returns the loss and
/// training tallies measured on that forward pass.
fn train_step(
    model: &mut Model<f32>,
    unit: &Unit,
    adam: &mut AdamState<f32>,
    lr: f64,
    cfg: &TrainConfig,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<SplitEval> {
    let mut tape = Tape::new();
    let vars = model.record(&mut tape);
    let f = model.forward(&mut tape, &vars, &unit.input, Some(dropout_rng))?;
    let loss = tape.cross_entropy_with_logits(f.logits, unit.targets.clone(), unit.rows.clone())?;
    let loss_value = tape.value(loss).item() as f64;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let counts = count(tape.value(f.logits), &unit.targets, &unit.rows)?;
    let mut grads = tape.backward(loss)?;
    let mut grads: Vec<Tensor<f32>> = vars.all.iter().map(|&v| grads.take(v)).collect();
    if let Some(c) = cfg.grad_clip {
        clip_global_norm(&mut grads, c);
    }
    let adam_cfg = AdamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: cfg.weight_decay,
    };
    adam_step(&mut model.params_mut(), &grads, adam, lr, &adam_cfg)?;
    Ok(SplitEval {
        loss_sum: loss_value * unit.rows.len() as f64,
        counts,
    })
}

/// Trains one seed for the configured number of epochs.
pub fn train_trial(data: &TaskData, model_cfg: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<TrialResult> {
    check_compatible(data, model_cfg)?;
    let mut model = Model::<f32>::init_uniform(model_cfg.clone(), seed)?;
    let mut adam = AdamState::new(model.params().into_iter().map(|(_, t)| t));
    let mut dropout_rng = stream_rng(seed, Stream::Dropout);
    let mut shuffle_rng = stream_rng(seed, Stream::Shuffle);
    let mut plateau = match cfg.schedule {
        Schedule::Plateau { factor, patience } => Some(ReduceOnPlateau::new(cfg.lr, factor, patience, cfg.min_lr)),
        Schedule::None => None,
    };
    let mut lr = cfg.lr;
    let mut log = MetricsLog::default();
    let mut best: Option<(f64, f64)> = None;

    let full_batch = match &data.layout {
        Layout::Single { input, targets, splits } => Some(Unit {
            input: input.clone(),
            targets: targets.clone(),
            rows: splits[0].clone(),
        }),
        Layout::Multi { .. } => None,
    };

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let fail = |e: Error| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("seed {seed}, epoch {epoch}: {what}")),
            other => other,
        };
        let train = match (&full_batch, &data.layout) {
            (Some(unit), _) => train_step(&mut model, unit, &mut adam, lr, cfg, &mut dropout_rng).map_err(fail)?,
            (None, Layout::Multi { graphs, splits, .. }) => {
                let mut order = splits[0].clone();
                order.shuffle(&mut shuffle_rng);
                let mut acc = SplitEval::default();
                for chunk in order.chunks(cfg.batch_size) {
                    let unit = batch_unit(graphs, chunk)?;
                    let e = train_step(&mut model, &unit, &mut adam, lr, cfg, &mut dropout_rng).map_err(fail)?;
                    acc.loss_sum += e.loss_sum;
                    acc.counts.merge(&e.counts);
                }
                acc
            }
            (None, Layout::Single { .. }) => unreachable!(),
        };

        if epoch % cfg.eval_every != 0 && epoch != cfg.epochs {
            continue;
        }
        let [val, test] = eval_val_test(&model, data)?;
        let metric = data.metric();
        let row = EpochRow {
            epoch,
            train_loss: train.loss(),
            train_acc: train.counts.metric(metric),
            val_loss: val.loss(),
            val_acc: val.counts.metric(metric),
            test_acc: test.counts.metric(metric),
            lr,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        if best.is_none_or(|(v, _)| row.val_acc > v) {
            best = Some((row.val_acc, row.test_acc));
        }
        if let Some(p) = plateau.as_mut() {
            lr = p.step(row.val_loss);
        }
        log.rows.push(row);
    }

    let final_test = log.rows.last().map_or(f64::NAN, |r| r.test_acc);
    let test_metric = match cfg.report {
        Report::Final => final_test,
        Report::BestVal => best.map_or(final_test, |b| b.1),
    };
    Ok(TrialResult {
        seed,
        model,
        log,
        test_metric,
        epochs: cfg.epochs,
    })
}

/// Errors unless `cfg` fits the feature width, class count, and task of
/// `data`.
pub fn check_compatible(data: &TaskData, cfg: &ModelConfig) -> Result<()> {
    if cfg.in_dim != data.feat_dim {
        return Err(Error::Config(format!(
            "model expects {} input features, dataset has {}",
            cfg.in_dim, data.feat_dim
        )));
    }
    if cfg.num_classes != data.num_classes || cfg.task != data.task {
        return Err(Error::Config(format!(
            "model is a {}-class {} model, dataset is a {}-class {} task",
            cfg.num_classes, cfg.task, data.num_classes, data.task
        )));
    }
    Ok(())
}

/// Runs every seed, `parallel` at a time. Results are in seed order and
/// do not depend on `parallel`.
pub fn fit(data: &TaskData, model_cfg: &ModelConfig, cfg: &TrainConfig, parallel: usize) -> Vec<Result<TrialResult>> {
    let n = cfg.seeds.len();
    let workers = parallel.clamp(1, n.max(1));
    if workers == 1 {
        return cfg.seeds.iter().map(|&s| train_trial(data, model_cfg, cfg, s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TrialResult>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let r = train_trial(data, model_cfg, cfg, cfg.seeds[k]);
                slots.lock().expect("no trial panicked while holding the lock")[k] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("all workers joined")
        .into_iter()
        .map(|r| r.expect("every trial index was claimed"))
        .collect()
}
