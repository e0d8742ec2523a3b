//! Minibatch Adam training on the combined objective.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{total_loss_graph, Batch, LossWeights, ObjectiveError, DEFAULT_T_EPS};
use crate::autodiff::{adam_step, Binder, Graph, OptimState, Params};
use crate::moldata::MoleculePair;
use crate::scorenets::{init_params, ModelConfig};
use crate::sde::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Anneal the learning rate to zero along a half cosine over the run.
    pub cosine_decay: bool,
    pub weights: LossWeights,
    pub mask_ratio: f64,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub t_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 3e-3,
            cosine_decay: true,
            weights: LossWeights::default(),
            mask_ratio: 0.0,
            max_steps: 0,
            t_eps: DEFAULT_T_EPS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.batch_size == 0 {
            return Err(ObjectiveError::Config(
                "train.batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ObjectiveError::Config("train.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(ObjectiveError::Config(
                "train.mask_ratio must lie in [0, 1)".into(),
            ));
        }
        if !(self.t_eps > 0.0 && self.t_eps < 1.0) {
            return Err(ObjectiveError::Config(
                "train.t_eps must lie in (0, 1)".into(),
            ));
        }
        LossWeights::new(
            self.weights.contrastive,
            self.weights.geom,
            self.weights.topo,
        )?;
        if self.weights.contrastive > 0.0 && self.batch_size < 2 {
            return Err(ObjectiveError::Config(
                "train.batch_size must be at least 2 when the contrastive weight is positive"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Mean component losses over one epoch's steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub contrastive: f64,
    pub geom: f64,
    pub topo: f64,
}

pub struct TrainOutcome {
    pub params: Params,
    pub history: Vec<EpochLoss>,
    pub steps: usize,
}

/// Minibatches of one epoch. A trailing single molecule joins the previous
/// batch so every batch can form contrastive negatives.
fn epoch_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Trains from the seeded initialization. `on_epoch` sees each finished epoch.
pub fn train(
    corpus: &[MoleculePair],
    model: &ModelConfig,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome, ObjectiveError> {
    cfg.validate()?;
    model.validate()?;
    if corpus.is_empty() {
        return Err(ObjectiveError::EmptyCorpus);
    }
    if cfg.weights.contrastive > 0.0 && corpus.len() < 2 {
        return Err(ObjectiveError::BatchTooSmall(corpus.len()));
    }
    let mut params = init_params(model, cfg.seed);
    let mut state = OptimState::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let per_epoch = epoch_batches(&order, cfg.batch_size).len();
    let mut planned = cfg.epochs * per_epoch;
    if cfg.max_steps > 0 {
        planned = planned.min(cfg.max_steps);
    }
    let mut history = Vec::new();
    let mut steps = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = EpochLoss {
            epoch,
            ..EpochLoss::default()
        };
        let mut count = 0usize;
        for idx in epoch_batches(&order, cfg.batch_size) {
            if cfg.max_steps > 0 && steps >= cfg.max_steps {
                break;
            }
            let batch = Batch::new(
                idx.iter().map(|&i| &corpus[i]).collect(),
                cfg.mask_ratio,
                &mut rng,
            )?;
            let seed = rng.next_u64();
            let mut g = Graph::new();
            let mut b = Binder::new(&params);
            let vars = total_loss_graph(
                &mut g,
                &mut b,
                model,
                sched,
                &batch,
                &cfg.weights,
                cfg.t_eps,
                seed,
            )?;
            let v = vars.values(&g);
            if !v.total.is_finite() {
                return Err(ObjectiveError::NonFiniteLoss {
                    epoch,
                    step: steps,
                    value: v.total,
                });
            }
            let grads = g.backward(vars.total)?.into_named();
            drop(b);
            if cfg.cosine_decay {
                let frac = steps as f64 / planned.max(1) as f64;
                state.lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * frac).cos());
            }
            adam_step(&mut params, &grads, &mut state)?;
            steps += 1;
            count += 1;
            sums.total += v.total;
            sums.contrastive += v.contrastive;
            sums.geom += v.geom;
            sums.topo += v.topo;
        }
        if count > 0 {
            let c = count as f64;
            sums.total /= c;
            sums.contrastive /= c;
            sums.geom /= c;
            sums.topo /= c;
            on_epoch(&sums);
            history.push(sums);
        }
        if cfg.max_steps > 0 && steps >= cfg.max_steps {
            break 'epochs;
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        steps,
    })
}

/// Loss curve as CSV with a header row.
pub fn loss_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,loss_total,loss_contrastive,loss_2d3d,loss_3d2d\n");
    for e in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.total, e.contrastive, e.geom, e.topo
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_joins_previous_batch() {
        let order: Vec<usize> = (0..7).collect();
        assert_eq!(
            epoch_batches(&order, 3),
            vec![vec![0, 1, 2], vec![3, 4, 5, 6]]
        );
        assert_eq!(epoch_batches(&order[..1], 3), vec![vec![0]]);
        assert_eq!(epoch_batches(&order[..6], 3).len(), 2);
    }

    #[test]
    fn csv_header() {
        let s = loss_csv(&[EpochLoss {
            epoch: 0,
            total: 1.5,
            contrastive: 0.5,
            geom: 0.25,
            topo: 0.75,
        }]);
        assert_eq!(
            s,
            "epoch,loss_total,loss_contrastive,loss_2d3d,loss_3d2d\n0,1.5,0.5,0.25,0.75\n"
        );
    }
}
