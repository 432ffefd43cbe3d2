use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{make_batch, Batch, FeatureStore};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::manifest::UtteranceRecord;
use crate::autograd::{Gradients, Graph};
use crate::error::{Error, Result};
use crate::features::{Autoencoder, MelConfig};
use crate::model::adapter::duration_loss_graph;
use crate::model::decoder::tts_loss_graph;
use crate::model::{AcousticModel, Dropout};
use crate::optim::{lr_schedule, Adam};
use crate::text::Tokenizer;

/// One line of the loss history CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_tts: f64,
    pub loss_d: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub total: f64,
    pub tts: f64,
    pub d: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a counter.
pub fn mix_seed(seed: u64, k: u64) -> u64 {
    splitmix(seed ^ splitmix(k))
}

/// Weighted batch objective and its gradient. Both losses are means over the
/// unmasked elements of the whole batch. Dropout is active when
/// `dropout_seed` is given.
pub fn batch_objective(
    model: &AcousticModel,
    batch: &Batch,
    weight_tts: f64,
    weight_d: f64,
    dropout_seed: Option<u64>,
) -> Result<(BatchLosses, Gradients)> {
    let n_tts: usize = (0..batch.len()).map(|i| batch.frames(i)).sum::<usize>() * model.config.feature_dim;
    let n_d: usize = batch.token_masks.iter().flatten().filter(|&&m| m).count();
    if n_tts == 0 || n_d == 0 {
        return Err(Error::EmptyOutput);
    }
    let (k_tts, k_d) = (weight_tts / n_tts as f64, weight_d / n_d as f64);
    let mut grads = Gradients::default();
    let (mut sum_tts, mut sum_d) = (0.0, 0.0);
    for i in 0..batch.len() {
        let mut g = Graph::new();
        let mut dropout = dropout_seed.map(|s| Dropout::new(model.config.dropout, mix_seed(s, i as u64)));
        let out = model.forward_train(&mut g, &batch.tokens[i], &batch.durations[i], &mut dropout)?;
        let frames = batch.frames(i);
        let target = batch.features[i].slice(ndarray::s![.., ..frames]).to_owned();
        let (l_tts, _) = tts_loss_graph(&mut g, out.prediction, Arc::new(target), vec![true; frames]);
        let (l_d, _) = duration_loss_graph(&mut g, out.log_durations, &batch.durations[i], &batch.token_masks[i])?;
        sum_tts += g.scalar(l_tts);
        sum_d += g.scalar(l_d);
        let a = g.scale(l_tts, k_tts);
        let b = g.scale(l_d, k_d);
        let objective = g.add(a, b);
        grads.accumulate(g.backward(objective, model.params.len()));
    }
    let (tts, d) = (sum_tts / n_tts as f64, sum_d / n_d as f64);
    Ok((
        BatchLosses {
            total: weight_tts * tts + weight_d * d,
            tts,
            d,
        },
        grads,
    ))
}

/// Record indices used at `step` (1-based): each epoch walks a fresh seeded
/// permutation in chunks of `batch_size`.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: usize) -> Vec<usize> {
    let b = batch_size.clamp(1, n.max(1));
    let per_epoch = n.div_ceil(b);
    let (epoch, j) = ((step - 1) / per_epoch, (step - 1) % per_epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64)));
    perm[j * b..((j + 1) * b).min(n)].to_vec()
}

/// Optimization state for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub mel: MelConfig,
    pub model: AcousticModel,
    pub adam: Adam,
    pub step: usize,
    pub history: Vec<LossRow>,
    pub autoencoder: Option<Autoencoder>,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        mel: MelConfig,
        tokenizer: &Tokenizer,
        feature_dim: usize,
        autoencoder: Option<Autoencoder>,
    ) -> Result<Self> {
        config.validate()?;
        let model_cfg = config.model_config(
            tokenizer.inventory(config.scheme).len(),
            tokenizer.styles().len(),
            feature_dim,
        );
        let model = AcousticModel::new(model_cfg, config.seed)?;
        let adam = Adam::new(config.adam(), &model.params);
        Ok(Self {
            config,
            mel,
            model,
            adam,
            step: 0,
            history: Vec::new(),
            autoencoder,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config = ck
            .train
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training configuration".into()))?;
        let adam = ck
            .adam
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        Ok(Self {
            config,
            mel: ck.mel,
            model: ck.model,
            adam,
            step: ck.step,
            history: ck.history,
            autoencoder: ck.autoencoder,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            mel: self.mel.clone(),
            train: Some(self.config.clone()),
            step: self.step,
            adam: Some(self.adam.clone()),
            history: self.history.clone(),
            autoencoder: self.autoencoder.clone(),
        }
    }

    /// Runs one optimization step and records its losses.
    pub fn step_once(&mut self, records: &[UtteranceRecord], tokenizer: &Tokenizer, store: &FeatureStore) -> Result<LossRow> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let step = self.step + 1;
        let idx = batch_indices(records.len(), self.config.batch_size, self.config.seed, step);
        let chosen: Vec<UtteranceRecord> = idx.iter().map(|&i| records[i].clone()).collect();
        let batch = make_batch(&chosen, tokenizer, self.config.scheme, store)?;
        if batch.kind != self.model.config.feature_kind {
            return Err(Error::KindMismatch {
                expected: self.model.config.feature_kind.to_string(),
                got: batch.kind.to_string(),
            });
        }
        let seed = mix_seed(self.config.seed, step as u64);
        let (losses, grads) = batch_objective(
            &self.model,
            &batch,
            self.config.loss_weight_tts,
            self.config.loss_weight_d,
            Some(seed),
        )?;
        if !losses.total.is_finite() {
            return Err(Error::NaNLoss(step));
        }
        let lr = lr_schedule(step, self.config.base_lr, self.config.warmup_steps);
        self.adam.step(&mut self.model.params, &grads, lr, 1.0);
        self.step = step;
        let row = LossRow {
            step,
            loss_total: losses.total,
            loss_tts: losses.tts,
            loss_d: losses.d,
            lr,
        };
        self.history.push(row);
        Ok(row)
    }

    /// Trains until `config.max_steps`. With an output directory, writes
    /// periodic checkpoints, `model.lsck` and `loss_history.csv`; the history
    /// is also written when training aborts.
    pub fn run(
        &mut self,
        records: &[UtteranceRecord],
        tokenizer: &Tokenizer,
        store: &FeatureStore,
        out_dir: Option<&Path>,
        mut on_step: impl FnMut(&LossRow),
    ) -> Result<()> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.step < self.config.max_steps {
            let row = match self.step_once(records, tokenizer, store) {
                Ok(row) => row,
                Err(e) => {
                    if let Some(dir) = out_dir {
                        write_loss_csv(&dir.join("loss_history.csv"), &self.history)?;
                    }
                    return Err(e);
                }
            };
            on_step(&row);
            let every = self.config.checkpoint_every;
            if let Some(dir) = out_dir {
                if every > 0 && self.step % every == 0 && self.step < self.config.max_steps {
                    self.checkpoint().save(&dir.join(format!("checkpoint_{}.lsck", self.step)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join("model.lsck"))?;
            write_loss_csv(&dir.join("loss_history.csv"), &self.history)?;
        }
        Ok(())
    }
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Checkpoint(format!("{other:?}")),
    })?;
    if rows.is_empty() {
        w.write_record(["step", "loss_total", "loss_tts", "loss_d", "lr"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Checkpoint(format!("{other:?}")),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch_once() {
        for (n, b) in [(8usize, 32usize), (10, 3), (7, 7)] {
            let per_epoch = n.div_ceil(b.min(n));
            for epoch in 0..3 {
                let mut seen: Vec<usize> = (1..=per_epoch)
                    .flat_map(|j| batch_indices(n, b, 5, epoch * per_epoch + j))
                    .collect();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
        assert_eq!(batch_indices(10, 3, 5, 4), batch_indices(10, 3, 5, 4));
    }

    #[test]
    fn loss_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let rows = vec![
            LossRow {
                step: 1,
                loss_total: 0.1 + 0.2,
                loss_tts: 1.0 / 3.0,
                loss_d: 2e-17,
                lr: 3.9528e-6,
            },
            LossRow {
                step: 2,
                loss_total: 1.0,
                loss_tts: 0.5,
                loss_d: 0.5,
                lr: 1.0,
            },
        ];
        write_loss_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,loss_total,loss_tts,loss_d,lr\n"));
        assert_eq!(read_loss_csv(&path).unwrap(), rows);
    }
}
