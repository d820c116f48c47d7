//! Episode sampling, the episodic loss, training and evaluation.
//!
//! Training consumes one continuous random stream; every validation round
//! and every test episode derives its own stream from the master seed, so
//! evaluation sets never depend on how much training randomness was used.

use crate::autodiff::{Graph, NodeId};
use crate::data::Dataset;
use crate::error::{Result, TarnError};
use crate::matrix::Matrix;
use crate::model::{Mode, TarnModel};
use crate::optim::{clip_global_norm, LrSchedule, Optimizer, OptimizerKind};
use crate::params::ParamSet;
use crate::relation::{aggregate_and_predict, RelationScores};
use crate::rng::{stream_rng, Stream};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Episode shape: `way`-way `shot`-shot with `queries` query items (the
/// query batch size in ZSL).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub mode: Mode,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(TarnError::Config("episodes need at least 2 classes".into()));
        }
        if self.shot < 1 || self.queries < 1 {
            return Err(TarnError::Config("shot and queries must be >= 1".into()));
        }
        if self.mode == Mode::Zsl && self.shot != 1 {
            return Err(TarnError::Config(
                "zero-shot episodes have exactly one semantic vector per class".into(),
            ));
        }
        Ok(())
    }
}

/// One query item: a dataset video index and its position in the episode's
/// class list.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeQuery {
    pub video: usize,
    pub class_pos: usize,
}

/// A sampled episode. `support[c]` holds the K support video indices of
/// class `classes[c]` (empty in ZSL, where the support is semantic).
#[derive(Debug, Clone)]
pub struct Episode {
    pub classes: Vec<u32>,
    pub support: Vec<Vec<usize>>,
    pub queries: Vec<EpisodeQuery>,
}

/// Samples an episode from `pool` (the allowed class ids). Support examples
/// are drawn without replacement and the query never appears in its own
/// class's support set.
pub fn sample_episode(
    dataset: &Dataset,
    pool: &[u32],
    spec: &EpisodeSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    spec.validate()?;
    if pool.len() < spec.way {
        return Err(TarnError::Data(format!(
            "episode needs {} classes but the pool has {}",
            spec.way,
            pool.len()
        )));
    }
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    let classes: Vec<u32> = shuffled[..spec.way].to_vec();

    let mut support = Vec::with_capacity(spec.way);
    let mut remainders: Vec<Vec<usize>> = Vec::with_capacity(spec.way);
    for &c in &classes {
        let examples = dataset.examples_of(c);
        let needed = match spec.mode {
            Mode::Fsl => spec.shot + 1,
            Mode::Zsl => 1,
        };
        if examples.len() < needed {
            return Err(TarnError::Data(format!(
                "class {c} has {} examples, needs at least {needed}",
                examples.len()
            )));
        }
        match spec.mode {
            Mode::Fsl => {
                let mut idxs = examples.to_vec();
                idxs.shuffle(rng);
                support.push(idxs[..spec.shot].to_vec());
                remainders.push(idxs[spec.shot..].to_vec());
            }
            Mode::Zsl => {
                if dataset.semantic(c).is_none() {
                    return Err(TarnError::Data(format!(
                        "class {c} has no semantic vector"
                    )));
                }
                support.push(Vec::new());
                remainders.push(examples.to_vec());
            }
        }
    }

    let mut queries = Vec::with_capacity(spec.queries);
    for _ in 0..spec.queries {
        let class_pos = rng.random_range(0..spec.way);
        let candidates = &remainders[class_pos];
        let video = candidates[rng.random_range(0..candidates.len())];
        queries.push(EpisodeQuery { video, class_pos });
    }
    Ok(Episode {
        classes,
        support,
        queries,
    })
}

// ---- episodic loss ----------------------------------------------------------------

/// Binary cross-entropy over all (class, shot) pairs of one query:
/// `L = -(1/KC) sum_kc [t ln q + (1 - t) ln(1 - q)]` with
/// `q = sigmoid(raw)`, `t = 1` on the true class row. Logs are clamped at
/// 1e-12.
pub fn episode_loss_node(g: &mut Graph, raw: NodeId, true_class: usize) -> Result<NodeId> {
    let (c, k) = g.shape(raw);
    if true_class >= c {
        return Err(TarnError::Contract(format!(
            "true class {true_class} out of range for {c} classes"
        )));
    }
    let mut target = Matrix::zeros(c, k);
    for j in 0..k {
        target.set(true_class, j, 1.0);
    }
    let t = g.constant(target.clone());
    let not_t = g.constant(target.map(|v| 1.0 - v));
    let ones = g.constant(Matrix::ones(c, k));

    let q = g.sigmoid(raw);
    let ln_q = g.ln_clamped(q);
    let hit = g.mul(t, ln_q)?;
    let q_comp = g.sub(ones, q)?;
    let ln_comp = g.ln_clamped(q_comp);
    let miss = g.mul(not_t, ln_comp)?;
    let sum_terms = g.add(hit, miss)?;
    let total = g.sum(sum_terms);
    Ok(g.scale(total, -1.0 / (c as f64 * k as f64)))
}

/// Value-level wrapper over [`episode_loss_node`] for a raw score matrix.
pub fn episode_loss(raw: &Matrix, true_class: usize) -> Result<f64> {
    let mut g = Graph::new();
    let node = g.constant(raw.clone());
    let loss = episode_loss_node(&mut g, node, true_class)?;
    Ok(g.value(loss).item())
}

// ---- training ------------------------------------------------------------------------

/// Optimizer, schedule, episode counts and master seed for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub train_episodes: u64,
    pub val_episodes: u64,
    pub test_episodes: u64,
    /// Validate (and checkpoint on improvement) every this many episodes;
    /// 0 disables validation.
    pub val_every: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// Few-shot protocol defaults: SGD momentum 0.9, 1e-3 for the first 10k
    /// episodes then 1e-4, 20k/500/1000 episodes, validation every 500.
    pub fn fsl_defaults(seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::sgd_momentum_default(),
            lr_schedule: LrSchedule(vec![
                crate::optim::LrStage { until: 10_000, lr: 1e-3 },
                crate::optim::LrStage { until: 20_000, lr: 1e-4 },
            ]),
            grad_clip: None,
            train_episodes: 20_000,
            val_episodes: 500,
            test_episodes: 1_000,
            val_every: 500,
            seed,
        }
    }

    /// Zero-shot protocol defaults: Adam at 1e-4 with global-norm clipping
    /// at 0.5, 3k training episodes, 100 test episodes, validation every 50.
    pub fn zsl_defaults(seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::adam_default(),
            lr_schedule: LrSchedule::constant(1e-4),
            grad_clip: Some(0.5),
            train_episodes: 3_000,
            val_episodes: 100,
            test_episodes: 100,
            val_every: 50,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr_schedule.validate()?;
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(TarnError::Config("grad_clip must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub episode: u64,
    pub loss: f64,
    pub lr: f64,
    pub val_accuracy: Option<f64>,
}

/// Outcome of a training run. `best_params` is the highest-validation
/// checkpoint (final parameters when validation is disabled).
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub log: Vec<LogRow>,
    pub best_params: ParamSet,
    pub best_val_accuracy: Option<f64>,
}

/// Forward/backward for one episode; returns the loss value and gradients
/// aligned with the model's parameters.
pub fn episode_step(
    model: &TarnModel,
    dataset: &Dataset,
    ep: &Episode,
) -> Result<(f64, Vec<Matrix>)> {
    let mut g = Graph::new();
    let (bound, bm) = model.bind(&mut g);
    let mut query_losses = Vec::with_capacity(ep.queries.len());
    match model.cfg.mode {
        Mode::Fsl => {
            let support: Vec<Vec<&Matrix>> = ep
                .support
                .iter()
                .map(|shots| shots.iter().map(|&i| &dataset.video(i).features).collect())
                .collect();
            let embs = model.embed_supports(&mut g, &bm, &support)?;
            for q in &ep.queries {
                let raw =
                    model.fsl_query_scores(&mut g, &bm, &embs, &dataset.video(q.video).features)?;
                query_losses.push(episode_loss_node(&mut g, raw, q.class_pos)?);
            }
        }
        Mode::Zsl => {
            let sems: Vec<&Matrix> = ep
                .classes
                .iter()
                .map(|&c| {
                    dataset
                        .semantic(c)
                        .ok_or_else(|| TarnError::Data(format!("class {c} has no semantic vector")))
                })
                .collect::<Result<_>>()?;
            let sem_nodes = model.embed_semantics(&mut g, &bm, &sems)?;
            for q in &ep.queries {
                let raw =
                    model.zsl_query_scores(&mut g, &bm, &sem_nodes, &dataset.video(q.video).features)?;
                query_losses.push(episode_loss_node(&mut g, raw, q.class_pos)?);
            }
        }
    }
    let mut loss = query_losses[0];
    for &l in &query_losses[1..] {
        loss = g.add(loss, l)?;
    }
    if query_losses.len() > 1 {
        loss = g.scale(loss, 1.0 / query_losses.len() as f64);
    }
    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Ok((loss_value, Vec::new()));
    }
    g.backward(loss)?;
    let grads = bound.iter().map(|&id| g.grad_or_zeros(id)).collect();
    Ok((loss_value, grads))
}

/// Episodic training with per-episode updates, optional global-norm clipping
/// and best-on-validation checkpointing.
pub fn train(
    model: &mut TarnModel,
    dataset: &Dataset,
    train_classes: &[u32],
    spec: &EpisodeSpec,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    spec.validate()?;
    if spec.mode != model.cfg.mode {
        return Err(TarnError::Config(
            "episode spec mode does not match the model mode".into(),
        ));
    }
    let mut opt = Optimizer::new(cfg.optimizer, &model.params);
    let mut rng = stream_rng(cfg.seed, Stream::Train, 0);
    let mut log = Vec::with_capacity(cfg.train_episodes as usize);
    let mut best: Option<(f64, ParamSet)> = None;

    for e in 1..=cfg.train_episodes {
        let ep = sample_episode(dataset, train_classes, spec, &mut rng)?;
        let (loss_value, mut grads) = episode_step(model, dataset, &ep)?;
        if !loss_value.is_finite() {
            return Err(TarnError::Numeric(format!(
                "non-finite loss at training episode {e}"
            )));
        }
        if let Some(clip) = cfg.grad_clip {
            clip_global_norm(&mut grads, clip);
        }
        let lr = cfg.lr_schedule.lr_at(e);
        opt.step(&mut model.params, &grads, lr)?;

        let mut row = LogRow {
            episode: e,
            loss: loss_value,
            lr,
            val_accuracy: None,
        };
        if cfg.val_every > 0 && e % cfg.val_every == 0 && cfg.val_episodes > 0 {
            let round = e / cfg.val_every;
            let res = evaluate_stream(
                model,
                dataset,
                train_classes,
                spec,
                cfg.val_episodes,
                cfg.seed,
                Stream::Val,
                round << 32,
                1,
            )?;
            row.val_accuracy = Some(res.accuracy);
            if best.as_ref().is_none_or(|(b, _)| res.accuracy > *b) {
                best = Some((res.accuracy, model.params.clone()));
            }
        }
        log.push(row);
    }

    let (best_val_accuracy, best_params) = match best {
        Some((a, p)) => (Some(a), p),
        None => (None, model.params.clone()),
    };
    Ok(TrainResult {
        log,
        best_params,
        best_val_accuracy,
    })
}

// ---- evaluation ----------------------------------------------------------------------

/// One query's outcome. `true_class` and `predicted` are positions in the
/// episode's class list; `class_probs` follows the same order.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub episode: u64,
    pub query_id: String,
    pub true_class: usize,
    pub predicted: usize,
    pub support_per_class: usize,
    pub class_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub accuracy: f64,
    pub n_queries: usize,
    pub records: Vec<EvalRecord>,
}

/// Scores every query of one episode against frozen parameters.
pub fn score_episode(
    model: &TarnModel,
    dataset: &Dataset,
    ep: &Episode,
) -> Result<Vec<RelationScores>> {
    let mut g = Graph::new();
    let (_, bm) = model.bind(&mut g);
    let mut out = Vec::with_capacity(ep.queries.len());
    match model.cfg.mode {
        Mode::Fsl => {
            let support: Vec<Vec<&Matrix>> = ep
                .support
                .iter()
                .map(|shots| shots.iter().map(|&i| &dataset.video(i).features).collect())
                .collect();
            let embs = model.embed_supports(&mut g, &bm, &support)?;
            for q in &ep.queries {
                let raw =
                    model.fsl_query_scores(&mut g, &bm, &embs, &dataset.video(q.video).features)?;
                out.push(aggregate_and_predict(g.value(raw))?);
            }
        }
        Mode::Zsl => {
            let sems: Vec<&Matrix> = ep
                .classes
                .iter()
                .map(|&c| {
                    dataset
                        .semantic(c)
                        .ok_or_else(|| TarnError::Data(format!("class {c} has no semantic vector")))
                })
                .collect::<Result<_>>()?;
            let sem_nodes = model.embed_semantics(&mut g, &bm, &sems)?;
            for q in &ep.queries {
                let raw =
                    model.zsl_query_scores(&mut g, &bm, &sem_nodes, &dataset.video(q.video).features)?;
                out.push(aggregate_and_predict(g.value(raw))?);
            }
        }
    }
    Ok(out)
}

/// Evaluates over `n_episodes` test episodes; each episode derives its own
/// random stream so results are independent of evaluation order and thread
/// count.
pub fn evaluate(
    model: &TarnModel,
    dataset: &Dataset,
    pool: &[u32],
    spec: &EpisodeSpec,
    n_episodes: u64,
    seed: u64,
    threads: usize,
) -> Result<EvalResult> {
    evaluate_stream(
        model, dataset, pool, spec, n_episodes, seed, Stream::Test, 0, threads,
    )
}

#[allow(clippy::too_many_arguments)]
fn evaluate_stream(
    model: &TarnModel,
    dataset: &Dataset,
    pool: &[u32],
    spec: &EpisodeSpec,
    n_episodes: u64,
    seed: u64,
    stream: Stream,
    substream_base: u64,
    threads: usize,
) -> Result<EvalResult> {
    spec.validate()?;
    if spec.mode != model.cfg.mode {
        return Err(TarnError::Config(
            "episode spec mode does not match the model mode".into(),
        ));
    }
    let run_episode = |idx: u64| -> Result<Vec<EvalRecord>> {
        let mut rng = stream_rng(seed, stream, substream_base + idx);
        let ep = sample_episode(dataset, pool, spec, &mut rng)?;
        let scores = score_episode(model, dataset, &ep)?;
        Ok(ep
            .queries
            .iter()
            .zip(scores)
            .map(|(q, rs)| EvalRecord {
                episode: idx,
                query_id: dataset.video(q.video).video_id.clone(),
                true_class: q.class_pos,
                predicted: rs.predicted,
                support_per_class: ep.support[q.class_pos].len(),
                class_probs: rs.class_probs,
            })
            .collect())
    };

    let mut per_episode: Vec<Vec<EvalRecord>> = Vec::with_capacity(n_episodes as usize);
    if threads <= 1 {
        for idx in 0..n_episodes {
            per_episode.push(run_episode(idx)?);
        }
    } else {
        let results: Vec<Result<Vec<(u64, Vec<EvalRecord>)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let run_episode = &run_episode;
                    scope.spawn(move || {
                        let mut chunk = Vec::new();
                        let mut idx = t as u64;
                        while idx < n_episodes {
                            chunk.push((idx, run_episode(idx)?));
                            idx += threads as u64;
                        }
                        Ok(chunk)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut merged: Vec<(u64, Vec<EvalRecord>)> = Vec::with_capacity(n_episodes as usize);
        for r in results {
            merged.extend(r?);
        }
        merged.sort_by_key(|(idx, _)| *idx);
        per_episode = merged.into_iter().map(|(_, recs)| recs).collect();
    }

    let records: Vec<EvalRecord> = per_episode.into_iter().flatten().collect();
    let n_queries = records.len();
    let correct = records
        .iter()
        .filter(|r| r.predicted == r.true_class)
        .count();
    Ok(EvalResult {
        accuracy: correct as f64 / n_queries.max(1) as f64,
        n_queries,
        records,
    })
}

/// Half-width of the 95% normal-approximation interval for a binomial rate.
pub fn binomial_half_width_95(accuracy: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.96 * (accuracy * (1.0 - accuracy) / n as f64).sqrt()
}

// ---- CSV export -----------------------------------------------------------------------

/// Training log as CSV; the `val_accuracy` column is empty between
/// validation rounds.
pub fn train_log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("episode,loss,lr,val_accuracy\n");
    for r in rows {
        let val = r
            .val_accuracy
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.episode, r.loss, r.lr, val));
    }
    out
}

/// Evaluation records as CSV with one probability column per episode class.
pub fn eval_records_csv(records: &[EvalRecord], way: usize) -> String {
    let mut out = String::from("episode,query_id,true_class,predicted,support_per_class");
    for c in 0..way {
        out.push_str(&format!(",prob_{c}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.episode, r.query_id, r.true_class, r.predicted, r.support_per_class
        ));
        for p in &r.class_probs {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}
