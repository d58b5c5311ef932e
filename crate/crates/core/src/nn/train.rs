use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::optim::{Optimizer, TrainingConfig};
use super::real::Real;
use crate::error::{Error, Result};

/// Flat, equally sized inputs with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    sample_len: usize,
    inputs: Vec<T>,
    labels: Vec<u8>,
}

impl<T: Real> Dataset<T> {
    pub fn new(sample_len: usize) -> Self {
        Dataset {
            sample_len,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f64], label: u8) -> Result<()> {
        if input.len() != self.sample_len {
            return Err(Error::Shape(format!(
                "sample of {} values, expected {}",
                input.len(),
                self.sample_len
            )));
        }
        self.inputs.extend(input.iter().map(|&v| T::lit(v)));
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_len
    }

    pub fn inputs(&self) -> &[T] {
        &self.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[T] {
        &self.inputs[i * self.sample_len..(i + 1) * self.sample_len]
    }

    fn gather(&self, idx: &[usize], inputs: &mut Vec<T>, labels: &mut Vec<u8>) {
        inputs.clear();
        labels.clear();
        for &i in idx {
            inputs.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Sample-weighted mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Runs `config.epochs` passes over seeded-shuffled minibatches, keeping the
/// final partial batch.
pub fn train<T: Real>(net: &mut Network<T>, data: &Dataset<T>, config: &TrainingConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if data.sample_len() != net.input_len() {
        return Err(Error::Shape(format!(
            "training samples have {} values, network expects {}",
            data.sample_len(),
            net.input_len()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let positives = data.labels().iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::Degenerate("training split contains a single class".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::for_config(net.params(), config, net.spec().head);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            data.gather(chunk, &mut inputs, &mut labels);
            let (loss, grads) = net.backward(&inputs, &labels)?;
            opt.step(net.params_mut(), &grads);
            total += loss * chunk.len() as f64;
        }
        loss_trace.push(total / data.len() as f64);
    }
    Ok(TrainReport { loss_trace })
}

/// Predicted labels for every sample, evaluated in chunks.
pub fn predict_all<T: Real>(net: &Network<T>, data: &Dataset<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len());
    let chunk = 64 * data.sample_len();
    for batch in data.inputs().chunks(chunk.max(1)) {
        out.extend(net.predict(batch)?);
    }
    Ok(out)
}
