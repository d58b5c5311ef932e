//! Labelled toy abundance tables with a known set of class-dependent species.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AbundanceTable, TaxonomyString};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_informative: usize,
    /// Multiplier applied to informative species in positive samples.
    pub fold_change: f64,
    /// Standard deviation of the per-entry log-normal noise (natural log).
    pub noise: f64,
    /// Chance that a non-informative species is absent from a sample.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_samples: 200,
            n_features: 100,
            n_informative: 10,
            fold_change: 20.0,
            noise: 0.5,
            dropout: 0.2,
            seed: 0,
        }
    }
}

pub struct SyntheticData {
    pub table: AbundanceTable,
    /// Feature indices whose abundance depends on the label.
    pub informative: Vec<usize>,
}

/// Taxonomy of feature `j`, already in phylogenetic order.
pub fn synthetic_taxon(j: usize) -> TaxonomyString {
    TaxonomyString::new(format!(
        "k__Bacteria|p__Phylum{}|c__Class{}|o__Order{}|f__Family{}|g__Genus{:03}|s__Genus{:03}_species{:03}",
        j / 40,
        j / 20,
        j / 10,
        j / 5,
        j / 2,
        j / 2,
        j
    ))
    .expect("generated taxonomy is non-empty")
}

/// Half the samples are positive. Informative species are spread evenly over
/// the feature order; every row is normalised to sum to 1.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    let SyntheticConfig {
        n_samples: n,
        n_features: d,
        n_informative: m,
        ..
    } = *config;
    if n < 4 || d < 3 || m == 0 || m > d {
        return Err(Error::Config(format!(
            "synthetic data needs >= 4 samples, >= 3 features and 1..=d informative ones (got {n}, {d}, {m})"
        )));
    }
    if !(config.fold_change > 0.0 && config.noise >= 0.0 && (0.0..1.0).contains(&config.dropout)) {
        return Err(Error::Config("invalid synthetic noise parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = LogNormal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
    let informative: Vec<usize> = (0..m).map(|i| i * d / m + (d / m) / 2).collect();
    let mut is_informative = vec![false; d];
    for &j in &informative {
        is_informative[j] = true;
    }
    // informative species stay minor so the shift survives normalisation
    let base: Vec<f64> = is_informative
        .iter()
        .map(|&inf| {
            let range = if inf { -4.0..-3.0 } else { -5.0..-1.0 };
            10f64.powf(rng.random_range(range))
        })
        .collect();

    let labels: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    let mut values = Vec::with_capacity(n * d);
    for &y in &labels {
        let mut row: Vec<f64> = (0..d)
            .map(|j| {
                if !is_informative[j] && rng.random::<f64>() < config.dropout {
                    return 0.0;
                }
                let shift = if is_informative[j] && y == 1 {
                    config.fold_change
                } else {
                    1.0
                };
                base[j] * shift * noise.sample(&mut rng)
            })
            .collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        values.extend(row);
    }
    let samples = (0..n).map(|i| format!("synth{i:04}")).collect();
    let taxa = (0..d).map(synthetic_taxon).collect();
    let table = AbundanceTable::new(samples, taxa, values, labels)?;
    Ok(SyntheticData { table, informative })
}
