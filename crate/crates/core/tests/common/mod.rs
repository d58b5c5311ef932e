#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use metaimage::embedding::{kl_divergence, kl_gradient, pairwise_affinities};
use metaimage::eval::{FoldEvent, FoldObserver, FoldPlan, SampleSource};
use metaimage::ingest::{AbundanceTable, TaxonomyString};
use metaimage::nn::{Head, Network, NetworkSpec, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over all
/// parameters, with central differences of step `h`.
pub fn max_param_gradient_error(spec: &NetworkSpec, batch: usize, seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::build(spec, seed).unwrap();
    // nudge biases off zero so every layer has a non-trivial gradient
    for (t, p) in net.params_mut().iter_mut().enumerate() {
        if t % 2 == 1 {
            p.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let x: Vec<f64> = (0..batch * spec.input.len()).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<u8> = (0..batch).map(|i| (i % 2) as u8).collect();
    let (_, grads) = net.backward(&x, &labels).unwrap();
    let loss_at = |net: &Network<f64>| net.backward(&x, &labels).unwrap().0;
    let mut worst: f64 = 0.0;
    for t in 0..grads.len() {
        for k in 0..grads[t].len() {
            let w = net.params()[t][k];
            net.params_mut()[t][k] = w + h;
            let up = loss_at(&net);
            net.params_mut()[t][k] = w - h;
            let down = loss_at(&net);
            net.params_mut()[t][k] = w;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[t][k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

/// Same relative error for the KL gradient of ten random points in 5-D.
pub fn tsne_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
    let p = pairwise_affinities(&pts, 4.0).unwrap();
    let mut y: Vec<[f64; 2]> = (0..10)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let g = kl_gradient(&p, &y);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for c in 0..2 {
            let v = y[i][c];
            y[i][c] = v + h;
            let up = kl_divergence(&p, &y);
            y[i][c] = v - h;
            let down = kl_divergence(&p, &y);
            y[i][c] = v;
            let numeric = (up - down) / (2.0 * h);
            let denom = g[i][c].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((g[i][c] - numeric).abs() / denom);
        }
    }
    worst
}

pub fn gradient_specs() -> Vec<(&'static str, NetworkSpec)> {
    vec![
        (
            "conv2d:2:3 3x8x8",
            NetworkSpec::new("conv2d:2:3".parse().unwrap(), Head::TwoNode, Shape::new(3, 8, 8)),
        ),
        (
            "conv1d:2:3 1x1x12",
            NetworkSpec::new("conv1d:2:3".parse().unwrap(), Head::TwoNode, Shape::new(1, 1, 12)),
        ),
        (
            "fc 3x8x8",
            NetworkSpec::new("fc".parse().unwrap(), Head::TwoNode, Shape::new(3, 8, 8)),
        ),
        (
            "conv2d:2:3 3x8x8 one-node",
            NetworkSpec::new("conv2d:2:3".parse().unwrap(), Head::OneNode, Shape::new(3, 8, 8)),
        ),
    ]
}

/// `n` samples over `d` species; positives carry extra mass on the first two.
pub fn toy_table(n: usize, d: usize) -> AbundanceTable {
    let taxa: Vec<TaxonomyString> = (0..d)
        .map(|j| TaxonomyString::new(format!("k__B|p__P{}|s__S{j:03}", j % 3)).unwrap())
        .collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let mut values = Vec::with_capacity(n * d);
    for (i, &y) in labels.iter().enumerate() {
        let mut row: Vec<f64> = (0..d).map(|j| (1 + (i * 7 + j * 3) % 11) as f64).collect();
        if y == 1 {
            row[0] += 40.0;
            row[1] += 40.0;
        }
        let s: f64 = row.iter().sum();
        values.extend(row.into_iter().map(|v| v / s));
    }
    let samples = (0..n).map(|i| format!("s{i}")).collect();
    AbundanceTable::new(samples, taxa, values, labels)
        .unwrap()
        .sort_phylogenetically()
}

/// Wraps a table and records which sample rows are read in which phase.
pub struct TrackingSource<'a> {
    pub inner: &'a AbundanceTable,
    /// (fold, sample, phase) for every `row` call.
    pub reads: Mutex<Vec<(usize, usize, Phase)>>,
    current_fold: AtomicUsize,
    phase: Mutex<Phase>,
    pub map_builds: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Fitting,
    Training,
    Testing,
}

impl<'a> TrackingSource<'a> {
    pub fn new(inner: &'a AbundanceTable) -> Self {
        TrackingSource {
            inner,
            reads: Mutex::new(Vec::new()),
            current_fold: AtomicUsize::new(usize::MAX),
            phase: Mutex::new(Phase::Idle),
            map_builds: AtomicUsize::new(0),
        }
    }

    /// Reads of test-split samples that happened before the fold's network was trained.
    pub fn early_test_reads(&self, plan: &FoldPlan) -> Vec<(usize, usize, Phase)> {
        self.reads
            .lock()
            .unwrap()
            .iter()
            .copied()
            .filter(|&(fold, sample, phase)| phase != Phase::Testing && plan.fold_of(sample) == fold)
            .collect()
    }

    pub fn phase_reads(&self, phase: Phase) -> usize {
        self.reads.lock().unwrap().iter().filter(|r| r.2 == phase).count()
    }
}

impl SampleSource for TrackingSource<'_> {
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    fn taxa(&self) -> &[TaxonomyString] {
        self.inner.taxa()
    }

    fn labels(&self) -> &[u8] {
        self.inner.labels()
    }

    fn row(&self, sample: usize) -> &[f64] {
        let fold = self.current_fold.load(Ordering::SeqCst);
        let phase = *self.phase.lock().unwrap();
        self.reads.lock().unwrap().push((fold, sample, phase));
        self.inner.row(sample)
    }
}

impl FoldObserver for TrackingSource<'_> {
    fn on_event(&self, _repeat: usize, fold: usize, event: FoldEvent) {
        let next = match event {
            FoldEvent::Started => {
                self.current_fold.store(fold, Ordering::SeqCst);
                Phase::Fitting
            }
            FoldEvent::MapBuilt => {
                self.map_builds.fetch_add(1, Ordering::SeqCst);
                Phase::Fitting
            }
            FoldEvent::RepresentationFitted => Phase::Training,
            FoldEvent::TrainingFinished => Phase::Testing,
            FoldEvent::Finished { .. } => Phase::Idle,
        };
        *self.phase.lock().unwrap() = next;
    }
}
