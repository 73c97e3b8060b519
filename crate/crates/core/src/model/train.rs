use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AmssNet, ModelError, ParamStore, Prepared, Tensor};
use crate::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (T::one() - b1) * gd[i];
                vd[i] = b2 * vd[i] + (T::one() - b2) * gd[i] * gd[i];
                let mh = md[i] / c1;
                let vh = vd[i] / c2;
                pd[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Examples per step; `None` uses the whole set.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// On a non-finite loss, restore the initial parameters, halve the
    /// learning rate and start over instead of failing.
    pub halve_and_restart: bool,
    pub max_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            lr: 1e-3,
            batch_size: None,
            seed: 0,
            halve_and_restart: false,
            max_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch loss before each update.
    pub losses: Vec<f64>,
    /// Whole-set loss after the last update.
    pub final_loss: f64,
    pub restarts: usize,
    pub final_lr: f64,
}

/// Mean loss and summed-then-averaged gradients over `batch`, accumulated in
/// batch order regardless of thread scheduling.
fn batch_grads<T: Scalar>(
    net: &AmssNet<T>,
    data: &[Prepared<T>],
    batch: &[usize],
) -> Result<(f64, Vec<Tensor<T>>), ModelError> {
    let per: Vec<(T, Vec<Tensor<T>>)> = batch
        .par_iter()
        .map(|&i| net.loss_and_grads(&data[i]))
        .collect::<Result<_, _>>()?;
    let n = T::from_usize_lossy(batch.len());
    let mut iter = per.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            a.axpy(T::one(), b);
        }
    }
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok(((loss / n).as_f64(), grads))
}

/// Mean spectrogram loss over `data`.
pub fn dataset_loss<T: Scalar>(net: &AmssNet<T>, data: &[Prepared<T>]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let losses: Vec<T> = data.par_iter().map(|ex| net.loss(ex)).collect::<Result<_, _>>()?;
    Ok(losses.iter().map(|l| l.as_f64()).sum::<f64>() / data.len() as f64)
}

/// Minimises the spectrogram L2 loss with Adam.
pub fn train_micro<T: Scalar>(
    net: &mut AmssNet<T>,
    data: &[Prepared<T>],
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let initial = net.params().clone();
    let mut lr = cfg.lr;
    let mut restarts = 0;
    'restart: loop {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(net.params(), lr);
        let mut losses = Vec::with_capacity(cfg.steps);
        for step in 0..cfg.steps {
            let batch: Vec<usize> = match cfg.batch_size {
                Some(b) if b < data.len() => {
                    let mut idx = sample(&mut rng, data.len(), b.max(1)).into_vec();
                    idx.sort_unstable();
                    idx
                }
                _ => (0..data.len()).collect(),
            };
            let (loss, grads) = batch_grads(net, data, &batch)?;
            let finite = loss.is_finite() && grads.iter().all(Tensor::all_finite);
            if !finite {
                if cfg.halve_and_restart && restarts < cfg.max_restarts {
                    restarts += 1;
                    lr /= 2.0;
                    *net.params_mut() = initial.clone();
                    continue 'restart;
                }
                return Err(ModelError::NonFiniteLoss { step });
            }
            losses.push(loss);
            adam.step(net.params_mut(), &grads);
        }
        let final_loss = dataset_loss(net, data)?;
        if !final_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: cfg.steps });
        }
        return Ok(TrainReport {
            losses,
            final_loss,
            restarts,
            final_lr: lr,
        });
    }
}
