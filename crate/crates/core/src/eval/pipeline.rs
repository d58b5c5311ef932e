use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::folds::{accuracy, make_folds, FoldPlan, DEFAULT_FOLDS};
use super::report::CvReport;
use crate::binning::{BinningConfig, BinningScheme};
use crate::embedding::{build_global_map, render_tsne_with, GlobalMap, TsneConfig, TsneOptions};
use crate::error::{Error, Result};
use crate::fillup::{render_fillup_with, render_raw_1d, FillupOptions};
use crate::ingest::{AbundanceTable, FeatureKind, FeatureMatrix, FeatureOrder, TaxonomyString};
use crate::nn::{
    predict_all, train, Architecture, ConvDim, Dataset, Head, Network, NetworkSpec, Shape, TrainingConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Representation {
    Raw1d,
    FillupAbd,
    FillupPre,
    TsneAbd,
    TsnePre,
}

impl Representation {
    pub const ALL: [Representation; 5] = [
        Representation::Raw1d,
        Representation::FillupAbd,
        Representation::FillupPre,
        Representation::TsneAbd,
        Representation::TsnePre,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Raw1d => "raw-1d",
            Representation::FillupAbd => "fillup-abd",
            Representation::FillupPre => "fillup-pre",
            Representation::TsneAbd => "tsne-abd",
            Representation::TsnePre => "tsne-pre",
        }
    }

    pub fn kind(self) -> FeatureKind {
        match self {
            Representation::FillupPre | Representation::TsnePre => FeatureKind::Presence,
            _ => FeatureKind::Abundance,
        }
    }

    pub fn is_image(self) -> bool {
        self != Representation::Raw1d
    }

    pub fn is_tsne(self) -> bool {
        matches!(self, Representation::TsneAbd | Representation::TsnePre)
    }

    /// The convolution kind used for this representation in the CNN column of the comparison row.
    pub fn conv_dim(self) -> ConvDim {
        if self.is_image() {
            ConvDim::Conv2d
        } else {
            ConvDim::Conv1d
        }
    }

    pub fn check_compatible(self, arch: &Architecture) -> Result<()> {
        if arch.conv_dim == ConvDim::None || arch.conv_dim == self.conv_dim() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "representation {self} cannot be used with architecture {arch}"
            )))
        }
    }

    pub fn input_shape(self, n_features: usize, settings: &EvalSettings) -> Shape {
        match self {
            Representation::Raw1d => Shape::new(1, 1, n_features),
            Representation::FillupAbd | Representation::FillupPre => {
                Shape::new(3, settings.fillup.target, settings.fillup.target)
            }
            Representation::TsneAbd | Representation::TsnePre => {
                Shape::new(3, settings.tsne_render.target, settings.tsne_render.target)
            }
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Representation::ALL
            .into_iter()
            .find(|r| r.as_str() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown representation {s:?} (expected raw-1d, fillup-abd, fillup-pre, tsne-abd or tsne-pre)"
                ))
            })
    }
}

impl Serialize for Representation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Representation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a cell needs besides the data, the representation and the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub dataset: String,
    pub binning: BinningConfig,
    pub fillup: FillupOptions,
    pub tsne: TsneConfig,
    pub tsne_render: TsneOptions,
    pub head: Head,
    pub fc_hidden: Option<usize>,
    pub training: TrainingConfig,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Worker threads for folds; 0 uses the global rayon pool.
    pub jobs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            dataset: "dataset".into(),
            binning: BinningConfig::default(),
            fillup: FillupOptions::default(),
            tsne: TsneConfig::default(),
            tsne_render: TsneOptions::default(),
            head: Head::TwoNode,
            fc_hidden: None,
            training: TrainingConfig::default(),
            folds: DEFAULT_FOLDS,
            repeats: 1,
            seed: 0,
            jobs: 1,
        }
    }
}

impl EvalSettings {
    pub fn network_spec(&self, repr: Representation, arch: Architecture, n_features: usize) -> NetworkSpec {
        NetworkSpec {
            arch,
            head: self.head,
            input: repr.input_shape(n_features, self),
            fc_hidden: self.fc_hidden,
        }
    }

    /// Fold plan seeds, one per repeat.
    pub fn plan_seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }
}

/// Read access to the samples of a dataset. Pipeline code reads sample values
/// only through `row`, which lets tests observe what is touched and when.
pub trait SampleSource: Sync {
    fn n_samples(&self) -> usize;
    fn taxa(&self) -> &[TaxonomyString];
    fn labels(&self) -> &[u8];
    /// Relative abundances of one sample, in feature order.
    fn row(&self, sample: usize) -> &[f64];

    fn n_features(&self) -> usize {
        self.taxa().len()
    }
}

impl SampleSource for AbundanceTable {
    fn n_samples(&self) -> usize {
        AbundanceTable::n_samples(self)
    }

    fn taxa(&self) -> &[TaxonomyString] {
        AbundanceTable::taxa(self)
    }

    fn labels(&self) -> &[u8] {
        AbundanceTable::labels(self)
    }

    fn row(&self, sample: usize) -> &[f64] {
        AbundanceTable::row(self, sample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FoldEvent {
    Started,
    MapBuilt,
    /// Binning (and the map, for t-SNE) are fixed; training images follow.
    RepresentationFitted,
    TrainingFinished,
    Finished {
        accuracy: f64,
    },
}

pub trait FoldObserver: Sync {
    fn on_event(&self, repeat: usize, fold: usize, event: FoldEvent);
}

/// Logs fold progress at debug level.
pub struct LogObserver;

impl FoldObserver for LogObserver {
    fn on_event(&self, repeat: usize, fold: usize, event: FoldEvent) {
        match event {
            FoldEvent::Finished { accuracy } => {
                log::debug!("repeat {repeat} fold {fold}: accuracy {accuracy:.4}")
            }
            other => log::trace!("repeat {repeat} fold {fold}: {other:?}"),
        }
    }
}

/// splitmix64 over `base` and each tag.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z.wrapping_add(t).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// A representation after fitting on one training split.
pub enum Fitted {
    Raw,
    Fillup {
        scheme: BinningScheme,
        kind: FeatureKind,
        opts: FillupOptions,
    },
    Tsne {
        scheme: BinningScheme,
        kind: FeatureKind,
        map: GlobalMap,
        opts: TsneOptions,
    },
}

impl Fitted {
    pub fn render(&self, sample: &[f64]) -> Result<Vec<f64>> {
        match self {
            Fitted::Raw => Ok(render_raw_1d(sample)),
            Fitted::Fillup { scheme, kind, opts } => Ok(render_fillup_with(sample, scheme, *kind, opts)?.into_data()),
            Fitted::Tsne {
                scheme,
                kind,
                map,
                opts,
            } => Ok(render_tsne_with(sample, map, scheme, *kind, opts)?.into_data()),
        }
    }
}

/// Abundance matrix of the listed samples.
pub fn gather_matrix(source: &dyn SampleSource, samples: &[usize]) -> FeatureMatrix {
    let mut values = Vec::with_capacity(samples.len() * source.n_features());
    for &i in samples {
        values.extend_from_slice(source.row(i));
    }
    FeatureMatrix {
        kind: FeatureKind::Abundance,
        order: FeatureOrder::Input,
        n_samples: samples.len(),
        taxa: source.taxa().to_vec(),
        values,
    }
}

/// Fits binning and, for t-SNE, the species map on the training samples only.
pub fn fit_representation(
    source: &dyn SampleSource,
    repr: Representation,
    train_idx: &[usize],
    settings: &EvalSettings,
    tsne_seed: u64,
) -> Result<Fitted> {
    if !repr.is_image() {
        return Ok(Fitted::Raw);
    }
    let train = gather_matrix(source, train_idx);
    let scheme = settings.binning.fit(train.values.iter().copied())?;
    let kind = repr.kind();
    if repr.is_tsne() {
        let config = TsneConfig {
            seed: tsne_seed,
            ..settings.tsne.clone()
        };
        let map = build_global_map(&train, &config, settings.tsne_render.target)?;
        Ok(Fitted::Tsne {
            scheme,
            kind,
            map,
            opts: settings.tsne_render.clone(),
        })
    } else {
        Ok(Fitted::Fillup {
            scheme,
            kind,
            opts: settings.fillup.clone(),
        })
    }
}

fn render_split(
    source: &dyn SampleSource,
    fitted: &Fitted,
    samples: &[usize],
    sample_len: usize,
) -> Result<Dataset<f32>> {
    let mut data = Dataset::new(sample_len);
    for &i in samples {
        data.push(&fitted.render(source.row(i))?, source.labels()[i])?;
    }
    Ok(data)
}

/// One fold: fit on training rows, train, then render and score the test rows.
#[allow(clippy::too_many_arguments)]
pub fn run_fold(
    source: &dyn SampleSource,
    repr: Representation,
    arch: Architecture,
    settings: &EvalSettings,
    plan: &FoldPlan,
    repeat: usize,
    fold: usize,
    observer: &dyn FoldObserver,
) -> Result<f64> {
    observer.on_event(repeat, fold, FoldEvent::Started);
    let (train_idx, test_idx) = plan.split(fold);
    let tags = [repeat as u64, fold as u64];
    let fitted = fit_representation(
        source,
        repr,
        &train_idx,
        settings,
        derive_seed(settings.seed ^ settings.tsne.seed, &tags),
    )?;
    if repr.is_tsne() {
        observer.on_event(repeat, fold, FoldEvent::MapBuilt);
    }
    observer.on_event(repeat, fold, FoldEvent::RepresentationFitted);

    let spec = settings.network_spec(repr, arch, source.n_features());
    let mut net = Network::<f32>::build(&spec, derive_seed(settings.seed, &[tags[0], tags[1], 1]))?;
    let train_data = render_split(source, &fitted, &train_idx, spec.input.len())?;
    let config = TrainingConfig {
        seed: derive_seed(settings.seed ^ settings.training.seed, &[tags[0], tags[1], 2]),
        ..settings.training.clone()
    };
    train(&mut net, &train_data, &config)?;
    drop(train_data);
    observer.on_event(repeat, fold, FoldEvent::TrainingFinished);

    let test_data = render_split(source, &fitted, &test_idx, spec.input.len())?;
    let acc = accuracy(&predict_all(&net, &test_data)?, test_data.labels())?;
    observer.on_event(repeat, fold, FoldEvent::Finished { accuracy: acc });
    Ok(acc)
}

fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Cross-validates one cell over pre-computed fold plans (one per repeat).
pub fn run_cell_with_plans(
    source: &dyn SampleSource,
    repr: Representation,
    arch: Architecture,
    settings: &EvalSettings,
    plans: &[FoldPlan],
    observer: &dyn FoldObserver,
) -> Result<CvReport> {
    repr.check_compatible(&arch)?;
    arch.validate()?;
    settings.network_spec(repr, arch, source.n_features()).conv_trace()?;
    let k = plans
        .first()
        .map(FoldPlan::k)
        .ok_or_else(|| Error::Config("no fold plans".into()))?;
    let jobs: Vec<(usize, usize)> = (0..plans.len()).flat_map(|r| (0..k).map(move |f| (r, f))).collect();
    let results: Vec<Result<f64>> = with_pool(settings.jobs, || {
        jobs.par_iter()
            .map(|&(r, f)| {
                run_fold(source, repr, arch, settings, &plans[r], r, f, observer).map_err(|e| Error::Fold {
                    fold: f,
                    source: Box::new(e),
                })
            })
            .collect()
    })?;
    let mut fold_acc = vec![0.0; k];
    for (&(_, f), res) in jobs.iter().zip(results) {
        fold_acc[f] += res?;
    }
    fold_acc.iter_mut().for_each(|a| *a /= plans.len() as f64);
    Ok(CvReport::new(&settings.dataset, repr, arch, fold_acc, settings.seed))
}

pub fn fold_plans(labels: &[u8], settings: &EvalSettings) -> Result<Vec<FoldPlan>> {
    if settings.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    settings
        .plan_seeds()
        .into_iter()
        .map(|s| make_folds(labels, settings.folds, s))
        .collect()
}

pub fn run_cell(
    source: &dyn SampleSource,
    repr: Representation,
    arch: Architecture,
    settings: &EvalSettings,
) -> Result<CvReport> {
    let plans = fold_plans(source.labels(), settings)?;
    run_cell_with_plans(source, repr, arch, settings, &plans, &LogObserver)
}

/// A (representation, architecture) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub representation: Representation,
    pub arch: Architecture,
}

impl Cell {
    pub fn new(representation: Representation, arch: Architecture) -> Self {
        Cell { representation, arch }
    }
}

/// The fully-connected and CNN cells of every representation: raw data uses
/// two 1-D conv layers, images five 2-D conv layers, all 20 filters wide.
pub fn comparison_row() -> Vec<Cell> {
    let mut cells = Vec::new();
    for repr in Representation::ALL {
        cells.push(Cell::new(repr, Architecture::FC));
        let depth = if repr.is_image() { 5 } else { 2 };
        cells.push(Cell::new(
            repr,
            Architecture {
                conv_dim: repr.conv_dim(),
                depth,
                width: 20,
            },
        ));
    }
    cells
}

/// Runs every cell on the same fold plans.
pub fn run_table(
    source: &dyn SampleSource,
    cells: &[Cell],
    settings: &EvalSettings,
    observer: &dyn FoldObserver,
) -> Result<Vec<CvReport>> {
    if cells.is_empty() {
        return Err(Error::Config("no cells to evaluate".into()));
    }
    for c in cells {
        c.representation.check_compatible(&c.arch)?;
        c.arch.validate()?;
    }
    let plans = fold_plans(source.labels(), settings)?;
    cells
        .iter()
        .map(|c| {
            log::info!("{}: {} {}", settings.dataset, c.representation, c.arch);
            run_cell_with_plans(source, c.representation, c.arch, settings, &plans, observer)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Counter(Mutex<Vec<(usize, usize, FoldEvent)>>);

    impl FoldObserver for Counter {
        fn on_event(&self, repeat: usize, fold: usize, event: FoldEvent) {
            self.0.lock().unwrap().push((repeat, fold, event));
        }
    }

    fn toy_table(n: usize, d: usize) -> AbundanceTable {
        let taxa: Vec<TaxonomyString> = (0..d)
            .map(|j| TaxonomyString::new(format!("k__B|p__P|s__S{j:03}")).unwrap())
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
        AbundanceTable::new(samples, taxa, values, labels).unwrap()
    }

    fn quick_settings() -> EvalSettings {
        EvalSettings {
            folds: 3,
            training: TrainingConfig {
                epochs: 5,
                ..Default::default()
            },
            tsne: TsneConfig {
                perplexity: 3.0,
                epochs: 60,
                exaggeration_epochs: 20,
                momentum_switch_epoch: 30,
                ..Default::default()
            },
            tsne_render: TsneOptions {
                target: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn representation_strings() {
        for r in Representation::ALL {
            assert_eq!(r.as_str().parse::<Representation>().unwrap(), r);
        }
        assert_eq!(
            "FILLUP_ABD".parse::<Representation>().unwrap(),
            Representation::FillupAbd
        );
        assert!("fillup".parse::<Representation>().is_err());
    }

    #[test]
    fn raw_with_conv2d_is_rejected() {
        let t = toy_table(12, 9);
        let arch: Architecture = "conv2d:1:2".parse().unwrap();
        let err = run_cell(&t, Representation::Raw1d, arch, &quick_settings());
        assert!(matches!(err, Err(Error::Config(_))));
        let arch: Architecture = "conv1d:1:2".parse().unwrap();
        assert!(run_cell(&t, Representation::FillupAbd, arch, &quick_settings()).is_err());
    }

    #[test]
    fn comparison_row_has_ten_cells() {
        let row = comparison_row();
        assert_eq!(row.len(), 10);
        for c in &row {
            c.representation.check_compatible(&c.arch).unwrap();
        }
        assert!(row.contains(&Cell::new(Representation::Raw1d, "conv1d:2:20".parse().unwrap())));
        assert!(row.contains(&Cell::new(Representation::TsnePre, "conv2d:5:20".parse().unwrap())));
    }

    #[test]
    fn tsne_cell_builds_one_map_per_fold() {
        let t = toy_table(12, 9);
        let obs = Counter(Mutex::new(Vec::new()));
        let s = quick_settings();
        let plans = fold_plans(t.labels(), &s).unwrap();
        let report = run_cell_with_plans(
            &t,
            Representation::TsneAbd,
            "conv2d:1:2".parse().unwrap(),
            &s,
            &plans,
            &obs,
        )
        .unwrap();
        let events = obs.0.into_inner().unwrap();
        let maps = events.iter().filter(|e| e.2 == FoldEvent::MapBuilt).count();
        assert_eq!(maps, 3);
        assert_eq!(report.fold_acc.len(), 3);
    }

    #[test]
    fn table_is_reproducible() {
        let t = toy_table(12, 9);
        let cells = [
            Cell::new(Representation::Raw1d, Architecture::FC),
            Cell::new(Representation::FillupPre, "conv2d:1:2".parse().unwrap()),
        ];
        let s = EvalSettings {
            fillup: FillupOptions {
                target: 3,
                ..Default::default()
            },
            ..quick_settings()
        };
        let a = run_table(&t, &cells, &s, &LogObserver).unwrap();
        let b = run_table(&t, &cells, &s, &LogObserver).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(run_table(&t, &[], &s, &LogObserver).is_err());
    }

    #[test]
    fn repeats_average_by_fold_position() {
        let t = toy_table(12, 9);
        let s = EvalSettings {
            repeats: 2,
            ..quick_settings()
        };
        let plans = fold_plans(t.labels(), &s).unwrap();
        assert_eq!(plans.len(), 2);
        assert_ne!(plans[0], plans[1]);
        let r = run_cell_with_plans(&t, Representation::Raw1d, Architecture::FC, &s, &plans, &LogObserver).unwrap();
        let single = |p: usize| {
            (0..3)
                .map(|f| {
                    run_fold(
                        &t,
                        Representation::Raw1d,
                        Architecture::FC,
                        &s,
                        &plans[p],
                        p,
                        f,
                        &LogObserver,
                    )
                    .unwrap()
                })
                .collect::<Vec<_>>()
        };
        let (a, b) = (single(0), single(1));
        for f in 0..3 {
            assert!((r.fold_acc[f] - (a[f] + b[f]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn seeds_differ_by_tag() {
        assert_ne!(derive_seed(0, &[0, 1]), derive_seed(0, &[1, 0]));
        assert_eq!(derive_seed(5, &[2]), derive_seed(5, &[2]));
    }
}
