//! Exact t-SNE over species and per-sample rasterization of the resulting map.
//!
//! Each species is a point whose coordinates are its abundances across the
//! training samples. The 2-D layout is fitted once per training split and the
//! same map is reused to draw both training and test images.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::error::{Error, Result};
use crate::fillup::Background;
use crate::image::ImageTensor;
use crate::ingest::{FeatureKind, FeatureMatrix, TaxonomyString};

/// Tolerance on `2^H` during the bandwidth search.
pub const PERPLEXITY_TOL: f64 = 1e-5;
pub const MAX_BANDWIDTH_STEPS: usize = 50;
const INIT_SCALE: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_epochs: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_epoch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 10.0,
            epochs: 500,
            learning_rate: 200.0,
            early_exaggeration: 4.0,
            exaggeration_epochs: 100,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch_epoch: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        check_perplexity(self.perplexity, n_points, false)?;
        if self.exaggeration_epochs > self.epochs {
            return Err(Error::Config(format!(
                "exaggeration epochs {} exceed total epochs {}",
                self.exaggeration_epochs, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("t-SNE learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// `n - 1` is the uniform limit; `inclusive` admits it.
fn check_perplexity(perplexity: f64, n: usize, inclusive: bool) -> Result<()> {
    if n < 3 {
        return Err(Error::Config(format!("t-SNE needs at least 3 points, got {n}")));
    }
    let top = (n - 1) as f64;
    let below = if inclusive { perplexity <= top } else { perplexity < top };
    if !(perplexity > 1.0 && below) {
        let close = if inclusive { ']' } else { ')' };
        return Err(Error::Config(format!(
            "perplexity {perplexity} must lie in (1, {}{close}",
            n - 1
        )));
    }
    Ok(())
}

/// High-dimensional affinities.
#[derive(Debug, Clone)]
pub struct Affinities {
    n: usize,
    /// Row-normalised conditionals `P(j|i)`, row-major.
    conditional: Vec<f64>,
    /// Symmetrised joint probabilities, row-major; sums to 1.
    joint: Vec<f64>,
}

impl Affinities {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    pub fn conditional_row(&self, i: usize) -> &[f64] {
        &self.conditional[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.joint[i * self.n + j]
    }
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional row for precision `beta`; returns the row's perplexity `exp(H)`.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&dj, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = dj - dmin;
        let v = (-beta * shifted).exp();
        *o = v;
        sum += v;
        weighted += shifted * v;
    }
    out.iter_mut().for_each(|v| *v /= sum);
    // entropy in nats of the normalised row
    let h = sum.ln() + beta * weighted / sum;
    h.exp()
}

/// Gaussian affinities with per-point bandwidths matched to `perplexity`.
pub fn pairwise_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = points.len();
    check_perplexity(perplexity, n, true)?;
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have differing dimensions".into()));
    }
    let dist = squared_distances(points);
    if dist.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all t-SNE input points are identical".into()));
    }

    let mut conditional = vec![0.0; n * n];
    for i in 0..n {
        let drow = &dist[i * n..(i + 1) * n];
        let prow = &mut conditional[i * n..(i + 1) * n];
        let spread: f64 = drow.iter().sum::<f64>() / (n - 1) as f64;
        let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        let (mut beta_lo, mut beta_hi) = (0.0_f64, f64::INFINITY);
        for step in 0..MAX_BANDWIDTH_STEPS {
            let perp = conditional_row(drow, i, beta, prow);
            let diff = perp - perplexity;
            if diff.abs() < PERPLEXITY_TOL || step + 1 == MAX_BANDWIDTH_STEPS {
                break;
            }
            if diff > 0.0 {
                // too flat: sharpen
                beta_lo = beta;
                beta = if beta_hi.is_finite() {
                    0.5 * (beta + beta_hi)
                } else {
                    beta * 2.0
                };
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta + beta_lo);
            }
        }
    }

    let mut joint = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / denom;
        }
    }
    Ok(Affinities { n, conditional, joint })
}

/// `exp(H)` of a probability row.
pub fn row_perplexity(row: &[f64]) -> f64 {
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.exp()
}

fn student_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    (num, z)
}

/// KL(P || Q) for embedding `y`.
pub fn kl_divergence(p: &Affinities, y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let (num, z) = student_kernel(y);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.p(i, j);
            if i != j && pij > 0.0 {
                kl += pij * (pij / (num[i * n + j] / z)).ln();
            }
        }
    }
    kl
}

/// Analytic gradient of KL(P || Q) with respect to every coordinate.
pub fn kl_gradient(p: &Affinities, y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let (num, z) = student_kernel(y);
    gradient_from_kernel(p, 1.0, y, &num, z)
}

fn gradient_from_kernel(p: &Affinities, exaggeration: f64, y: &[[f64; 2]], num: &[f64], z: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        let mut g = [0.0; 2];
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = num[i * n + j];
            let mult = (exaggeration * p.p(i, j) - k / z) * k;
            g[0] += mult * (y[i][0] - y[j][0]);
            g[1] += mult * (y[i][1] - y[j][1]);
        }
        grad[i] = [4.0 * g[0], 4.0 * g[1]];
    }
    grad
}

#[derive(Debug, Clone)]
pub struct TsneFit {
    pub coords: Vec<[f64; 2]>,
    /// KL(P || Q) after each epoch, measured against the unexaggerated P.
    pub kl_trace: Vec<f64>,
}

/// Gradient descent on KL(P || Q) with a Student-t kernel, momentum, early
/// exaggeration and per-coordinate adaptive gains.
pub fn fit_tsne(points: &[Vec<f64>], config: &TsneConfig) -> Result<TsneFit> {
    config.validate(points.len())?;
    let p = pairwise_affinities(points, config.perplexity)?;
    Ok(optimize(&p, config))
}

fn optimize(p: &Affinities, config: &TsneConfig) -> TsneFit {
    let n = p.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [a * INIT_SCALE, b * INIT_SCALE]
        })
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let exaggeration = if epoch < config.exaggeration_epochs {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if epoch < config.momentum_switch_epoch {
            config.momentum_initial
        } else {
            config.momentum_final
        };
        let (num, z) = student_kernel(&y);
        let grad = gradient_from_kernel(p, exaggeration, &y, &num, z);
        for i in 0..n {
            for c in 0..2 {
                let g = grad[i][c];
                gains[i][c] = if (g > 0.0) != (update[i][c] > 0.0) {
                    gains[i][c] + 0.2
                } else {
                    (gains[i][c] * 0.8).max(MIN_GAIN)
                };
                update[i][c] = momentum * update[i][c] - config.learning_rate * gains[i][c] * g;
                y[i][c] += update[i][c];
            }
        }
        let mean = y.iter().fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        let mean = [mean[0] / n as f64, mean[1] / n as f64];
        for v in y.iter_mut() {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
        kl_trace.push(kl_divergence(p, &y));
    }
    TsneFit { coords: y, kl_trace }
}

/// A species layout fitted on one training split, rasterized to `target x target`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    taxa: Vec<TaxonomyString>,
    coords: Vec<[f64; 2]>,
    pixels: Vec<(usize, usize)>,
    bounds: [f64; 4],
    target: usize,
}

impl GlobalMap {
    pub fn from_coords(taxa: Vec<TaxonomyString>, coords: Vec<[f64; 2]>, target: usize) -> Result<Self> {
        if taxa.len() != coords.len() {
            return Err(Error::Shape(format!(
                "{} taxa for {} coordinates",
                taxa.len(),
                coords.len()
            )));
        }
        if target == 0 {
            return Err(Error::Config("map raster size must be positive".into()));
        }
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &coords {
            min_x = min_x.min(c[0]);
            max_x = max_x.max(c[0]);
            min_y = min_y.min(c[1]);
            max_y = max_y.max(c[1]);
        }
        let span = (target - 1) as f64;
        let scale = |v: f64, lo: f64, hi: f64| -> usize {
            if hi > lo {
                ((v - lo) / (hi - lo) * span).round() as usize
            } else {
                (span / 2.0).round() as usize
            }
        };
        let pixels = coords
            .iter()
            .map(|c| (scale(c[1], min_y, max_y), scale(c[0], min_x, max_x)))
            .collect();
        Ok(GlobalMap {
            taxa,
            coords,
            pixels,
            bounds: [min_x, max_x, min_y, max_y],
            target,
        })
    }

    pub fn taxa(&self) -> &[TaxonomyString] {
        &self.taxa
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// `(row, col)` of feature `i`; rows follow the y axis.
    pub fn pixel_of(&self, feature: usize) -> (usize, usize) {
        self.pixels[feature]
    }

    /// `[min_x, max_x, min_y, max_y]`
    pub fn bounds(&self) -> [f64; 4] {
        self.bounds
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn len(&self) -> usize {
        self.taxa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taxa.is_empty()
    }

    /// Lines of `taxon<TAB>x<TAB>y<TAB>pixel_row<TAB>pixel_col`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ((t, c), (r, col)) in self.taxa.iter().zip(&self.coords).zip(&self.pixels) {
            writeln!(w, "{t}\t{}\t{}\t{r}\t{col}", c[0], c[1])?;
        }
        Ok(())
    }
}

/// Fits the species map on a training split. Only training rows may be passed.
pub fn build_global_map(train: &FeatureMatrix, config: &TsneConfig, target: usize) -> Result<GlobalMap> {
    let d = train.n_features();
    if d < 3 {
        return Err(Error::Config(format!("t-SNE map needs at least 3 features, got {d}")));
    }
    if target < 8 {
        return Err(Error::Config(format!("t-SNE raster size {target} is below 8")));
    }
    if train.n_samples == 0 {
        return Err(Error::Config("t-SNE map needs at least one training sample".into()));
    }
    let points: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..train.n_samples).map(|i| train.row(i)[j]).collect())
        .collect();
    let fit = fit_tsne(&points, config)?;
    GlobalMap::from_coords(train.taxa.clone(), fit.coords, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneOptions {
    pub target: usize,
    /// Side of the square stamp drawn for each present species.
    pub point_size: usize,
    pub background: Background,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions {
            target: 64,
            point_size: 1,
            background: Background::White,
        }
    }
}

/// Per-sample t-SNE image with single-pixel points and a white background.
pub fn render_tsne(
    sample: &[f64],
    map: &GlobalMap,
    scheme: &BinningScheme,
    kind: FeatureKind,
    target: usize,
) -> Result<ImageTensor> {
    let opts = TsneOptions {
        target,
        ..Default::default()
    };
    render_tsne_with(sample, map, scheme, kind, &opts)
}

/// Present species are painted at their map pixel. Where several land on the
/// same pixel the highest bin wins, ties going to the lower feature index.
pub fn render_tsne_with(
    sample: &[f64],
    map: &GlobalMap,
    scheme: &BinningScheme,
    kind: FeatureKind,
    opts: &TsneOptions,
) -> Result<ImageTensor> {
    let target = opts.target;
    if map.target() != target {
        return Err(Error::Config(format!(
            "map raster is {0}x{0} but target is {target}x{target}",
            map.target()
        )));
    }
    if sample.len() != map.len() {
        return Err(Error::Shape(format!(
            "sample has {} features, map has {}",
            sample.len(),
            map.len()
        )));
    }
    let size = opts.point_size.max(1);
    let before = (size - 1) / 2;
    let mut img = ImageTensor::white(target, target);
    let mut owner: Vec<Option<(Option<usize>, usize)>> = vec![None; target * target];
    for (i, &v) in sample.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        let rank = scheme.bin_index(v);
        let color = scheme.color_of(v, kind);
        let (pr, pc) = map.pixel_of(i);
        let span = |p: usize| {
            let start = p as isize - before as isize;
            let end = (start + size as isize).min(target as isize);
            start.max(0) as usize..end.max(0) as usize
        };
        for r in span(pr) {
            for c in span(pc) {
                let slot = &mut owner[r * target + c];
                let wins = match slot {
                    None => true,
                    Some((held, _)) => rank > *held,
                };
                if wins {
                    *slot = Some((rank, i));
                    img.set_pixel(r, c, color);
                }
            }
        }
    }
    if opts.background == Background::Zero {
        img.invert();
    }
    Ok(img)
}
