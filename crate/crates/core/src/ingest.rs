//! Abundance table ingestion.
//!
//! The abundance file follows the merged MetaPhlAn2 layout: tab-separated,
//! one taxon per row, one sample per column, with a header row naming the
//! samples. Labels live in a separate two-column file. Tables are transposed
//! on load so that rows are samples and columns are taxa.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a parsed sample's total abundance from 1.
pub const ROW_SUM_TOLERANCE: f64 = 0.02;

/// Pipe-delimited taxonomic rank chain ending (at least) in a species segment.
///
/// Ordering is plain byte-wise lexicographic order of the raw string, which is
/// the phylogenetic sort key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaxonomyString(String);

impl TaxonomyString {
    pub fn new(raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        if raw.trim().is_empty() {
            return Err(Error::Config("empty taxonomy string".into()));
        }
        Ok(TaxonomyString(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('|').map(str::trim)
    }

    /// True for rows that resolve to a species and stop there (no strain rank).
    pub fn is_species_level(&self) -> bool {
        let mut species = false;
        for seg in self.segments() {
            if seg.starts_with("t__") {
                return false;
            }
            if seg.starts_with("s__") {
                species = true;
            }
        }
        species
    }

    /// The species segment, if any.
    pub fn species(&self) -> Option<&str> {
        self.segments().find(|s| s.starts_with("s__"))
    }
}

impl fmt::Display for TaxonomyString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// N samples by d taxa of relative abundances, with binary disease labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceTable {
    samples: Vec<String>,
    taxa: Vec<TaxonomyString>,
    /// Row-major, `samples.len() * taxa.len()`.
    values: Vec<f64>,
    labels: Vec<u8>,
}

impl AbundanceTable {
    pub fn new(samples: Vec<String>, taxa: Vec<TaxonomyString>, values: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let (n, d) = (samples.len(), taxa.len());
        if values.len() != n * d {
            return Err(Error::Shape(format!(
                "{} values for {n} samples x {d} taxa",
                values.len()
            )));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Config(format!("label {l} is not binary")));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("abundance {v} outside [0, 1]")));
        }
        let mut seen = HashSet::with_capacity(d);
        for t in &taxa {
            if !seen.insert(t) {
                return Err(Error::Config(format!("duplicate taxon `{t}`")));
            }
        }
        Ok(AbundanceTable {
            samples,
            taxa,
            values,
            labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_features(&self) -> usize {
        self.taxa.len()
    }

    pub fn samples(&self) -> &[String] {
        &self.samples
    }

    pub fn taxa(&self) -> &[TaxonomyString] {
        &self.taxa
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[sample * d..(sample + 1) * d]
    }

    pub fn sample_index(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s == id)
    }

    /// Samples whose total abundance deviates from 1 by more than the tolerance.
    pub fn off_sum_samples(&self) -> Vec<(usize, f64)> {
        (0..self.n_samples())
            .filter_map(|i| {
                let s: f64 = self.row(i).iter().sum();
                ((s - 1.0).abs() > ROW_SUM_TOLERANCE).then_some((i, s))
            })
            .collect()
    }

    /// Permutes columns into ascending taxonomy-string order (stable).
    pub fn sort_phylogenetically(&self) -> AbundanceTable {
        let mut order: Vec<usize> = (0..self.n_features()).collect();
        order.sort_by(|&a, &b| self.taxa[a].cmp(&self.taxa[b]));
        self.select_features(&order)
    }

    pub fn is_phylogenetically_sorted(&self) -> bool {
        self.taxa.windows(2).all(|w| w[0] <= w[1])
    }

    fn select_features(&self, order: &[usize]) -> AbundanceTable {
        let taxa = order.iter().map(|&j| self.taxa[j].clone()).collect();
        let mut values = Vec::with_capacity(self.n_samples() * order.len());
        for i in 0..self.n_samples() {
            let row = self.row(i);
            values.extend(order.iter().map(|&j| row[j]));
        }
        AbundanceTable {
            samples: self.samples.clone(),
            taxa,
            values,
            labels: self.labels.clone(),
        }
    }

    /// Abundance features in the current column order.
    pub fn to_abundance(&self) -> FeatureMatrix {
        FeatureMatrix {
            kind: FeatureKind::Abundance,
            order: self.feature_order(),
            n_samples: self.n_samples(),
            taxa: self.taxa.clone(),
            values: self.values.clone(),
        }
    }

    /// 1 where the abundance is strictly positive, else 0.
    pub fn to_presence(&self) -> FeatureMatrix {
        FeatureMatrix {
            kind: FeatureKind::Presence,
            order: self.feature_order(),
            n_samples: self.n_samples(),
            taxa: self.taxa.clone(),
            values: self.values.iter().map(|&v| presence(v)).collect(),
        }
    }

    fn feature_order(&self) -> FeatureOrder {
        if self.is_phylogenetically_sorted() {
            FeatureOrder::Phylogenetic
        } else {
            FeatureOrder::Input
        }
    }

    /// Writes the table in the taxa-as-rows layout accepted by the parser.
    pub fn write_abundance<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "taxonomy")?;
        for s in &self.samples {
            write!(w, "\t{s}")?;
        }
        writeln!(w)?;
        for (j, taxon) in self.taxa.iter().enumerate() {
            write!(w, "{taxon}")?;
            for i in 0..self.n_samples() {
                write!(w, "\t{}", self.row(i)[j])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_labels<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (s, l) in self.samples.iter().zip(&self.labels) {
            writeln!(w, "{s}\t{l}")?;
        }
        Ok(())
    }
}

#[inline]
pub fn presence(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "ABD")]
    Abundance,
    #[serde(rename = "PRE")]
    Presence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureOrder {
    #[serde(rename = "PLG")]
    Phylogenetic,
    Input,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub order: FeatureOrder,
    pub n_samples: usize,
    pub taxa: Vec<TaxonomyString>,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_features(&self) -> usize {
        self.taxa.len()
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[sample * d..(sample + 1) * d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Keep only rows with a species segment and without a strain segment.
    pub species_only: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { species_only: true }
    }
}

pub fn parse_abundance_table(path: &Path, labels_path: &Path) -> Result<AbundanceTable> {
    parse_abundance_table_with(path, labels_path, ParseOptions::default())
}

pub fn parse_abundance_table_with(path: &Path, labels_path: &Path, opts: ParseOptions) -> Result<AbundanceTable> {
    let abd = File::open(path).map_err(|e| Error::io(path, e))?;
    let lab = File::open(labels_path).map_err(|e| Error::io(labels_path, e))?;
    read_abundance_table(abd, path, lab, labels_path, opts)
}

/// Reader-based core of [`parse_abundance_table`]; paths are used for messages only.
pub fn read_abundance_table<A: Read, L: Read>(
    abundance: A,
    abundance_name: &Path,
    labels: L,
    labels_name: &Path,
    opts: ParseOptions,
) -> Result<AbundanceTable> {
    let label_map = read_labels(labels, labels_name)?;

    let mut lines = BufReader::new(abundance).lines().enumerate();
    let mut header: Option<(usize, Vec<String>)> = None;
    for (idx, line) in lines.by_ref() {
        let line = line.map_err(|e| Error::io(abundance_name, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        header = Some((idx + 1, line.split('\t').map(|s| s.trim().to_string()).collect()));
        break;
    }
    let (header_line, header) = header.ok_or_else(|| Error::parse(abundance_name, 1, "missing header row"))?;
    if header.len() < 2 {
        return Err(Error::parse(
            abundance_name,
            header_line,
            "header must name at least one sample",
        ));
    }
    let samples: Vec<String> = header[1..].to_vec();
    let n = samples.len();
    let mut seen = HashSet::with_capacity(n);
    for s in &samples {
        if !seen.insert(s.as_str()) {
            return Err(Error::parse(
                abundance_name,
                header_line,
                format!("duplicate sample `{s}`"),
            ));
        }
    }
    let labels = samples
        .iter()
        .map(|s| label_map.get(s).copied().ok_or_else(|| Error::MissingLabel(s.clone())))
        .collect::<Result<Vec<u8>>>()?;

    // taxa-as-rows while reading
    let mut taxa = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut taxon_lines = HashMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(abundance_name, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != n + 1 {
            return Err(Error::parse(
                abundance_name,
                lineno,
                format!("expected {} columns, found {}", n + 1, fields.len()),
            ));
        }
        let taxon =
            TaxonomyString::new(fields[0].trim()).map_err(|e| Error::parse(abundance_name, lineno, e.to_string()))?;
        if opts.species_only && !taxon.is_species_level() {
            continue;
        }
        if let Some(prev) = taxon_lines.insert(taxon.clone(), lineno) {
            return Err(Error::parse(
                abundance_name,
                lineno,
                format!("taxon `{taxon}` already defined on line {prev}"),
            ));
        }
        let mut col = Vec::with_capacity(n);
        for (k, cell) in fields[1..].iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::parse(
                    abundance_name,
                    lineno,
                    format!("non-numeric value `{cell}` for sample `{}`", samples[k]),
                )
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::parse(
                    abundance_name,
                    lineno,
                    format!("invalid abundance `{cell}` for sample `{}`", samples[k]),
                ));
            }
            col.push(v);
        }
        taxa.push(taxon);
        columns.push(col);
    }
    if taxa.is_empty() {
        return Err(Error::parse(abundance_name, header_line, "no taxa rows"));
    }

    let d = taxa.len();
    let mut values = vec![0.0; n * d];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            values[i * d + j] = v;
        }
    }
    for i in 0..n {
        let row = &mut values[i * d..(i + 1) * d];
        let sum: f64 = row.iter().sum();
        // MetaPhlAn reports percentages; anything well above 1 is on that scale.
        if sum > 1.5 {
            row.iter_mut().for_each(|v| *v /= 100.0);
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            log::warn!(
                "{}: sample `{}` abundances sum to {sum:.4}",
                abundance_name.display(),
                samples[i]
            );
        }
        if let Some(v) = row.iter().find(|&&v| v > 1.0) {
            return Err(Error::parse(
                abundance_name,
                header_line,
                format!("sample `{}` has abundance {v} > 1 after scaling", samples[i]),
            ));
        }
    }

    AbundanceTable::new(samples, taxa, values, labels)
}

fn read_labels<R: Read>(reader: R, name: &Path) -> Result<HashMap<String, u8>> {
    let mut map = HashMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                name,
                lineno,
                format!("expected 2 columns, found {}", fields.len()),
            ));
        }
        let label = match fields[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(name, lineno, format!("label `{other}` is not 0 or 1"))),
        };
        map.insert(fields[0].trim().to_string(), label);
    }
    Ok(map)
}

/// Writes `table` as an abundance file plus labels file under `dir`.
pub fn write_table_files(table: &AbundanceTable, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let abd = dir.join(format!("{stem}.tsv"));
    let lab = dir.join(format!("{stem}.labels.tsv"));
    let f = File::create(&abd).map_err(|e| Error::io(&abd, e))?;
    table
        .write_abundance(std::io::BufWriter::new(f))
        .map_err(|e| Error::io(&abd, e))?;
    let f = File::create(&lab).map_err(|e| Error::io(&lab, e))?;
    table
        .write_labels(std::io::BufWriter::new(f))
        .map_err(|e| Error::io(&lab, e))?;
    Ok((abd, lab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn read(abd: &str, labels: &str) -> Result<AbundanceTable> {
        read_abundance_table(
            abd.as_bytes(),
            Path::new("abd.tsv"),
            labels.as_bytes(),
            Path::new("labels.tsv"),
            ParseOptions::default(),
        )
    }

    fn taxa(names: &[&str]) -> Vec<TaxonomyString> {
        names.iter().map(|n| TaxonomyString::new(*n).unwrap()).collect()
    }

    const SMALL: &str = "taxonomy\tA\tB\n\
        k__B|p__F|s__x\t0.5\t0.2\n\
        k__B|p__F|s__y\t0.25\t0.8\n\
        k__B|p__G|s__z\t0.25\t0\n";

    #[test]
    fn parses_minimal_table() {
        let t = read(SMALL, "A\t1\nB\t0\n").unwrap();
        assert_eq!(t.n_samples(), 2);
        assert_eq!(t.n_features(), 3);
        assert_eq!(t.row(0), &[0.5, 0.25, 0.25]);
        assert_eq!(t.row(1), &[0.2, 0.8, 0.0]);
        assert_eq!(t.labels(), &[1, 0]);
    }

    #[test]
    fn percentages_are_rescaled() {
        let abd = "taxonomy\tA\tB\nk__B|s__x\t40\t0.3\nk__B|s__y\t60\t0.7\n";
        let t = read(abd, "A\t0\nB\t1\n").unwrap();
        let s: f64 = t.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(t.row(0), &[0.4, 0.6]);
        assert_eq!(t.row(1), &[0.3, 0.7]);
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let abd = "taxonomy\tA\tB\nk__B|s__x\t0.5\t0.5\nk__B|s__y\t0.5\n";
        match read(abd, "A\t0\nB\t1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_parse_error() {
        let abd = "taxonomy\tA\nk__B|s__x\tabc\n";
        assert!(matches!(read(abd, "A\t0\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_label_names_sample() {
        match read(SMALL, "A\t1\n") {
            Err(Error::MissingLabel(s)) => assert_eq!(s, "B"),
            other => panic!("expected missing label, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_value_rejected() {
        assert!(matches!(read(SMALL, "A\t1\nB\t2\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn non_species_rows_dropped_by_default() {
        let abd = "taxonomy\tA\n\
            k__Bacteria\t100\n\
            k__Bacteria|p__F\t100\n\
            k__Bacteria|p__F|s__x\t70\n\
            k__Bacteria|p__F|s__x|t__1\t70\n\
            k__Bacteria|p__F|s__y\t30\n";
        let t = read(abd, "A\t0\n").unwrap();
        assert_eq!(t.taxa(), &taxa(&["k__Bacteria|p__F|s__x", "k__Bacteria|p__F|s__y"])[..]);
        assert_eq!(t.row(0), &[0.7, 0.3]);

        let all = read_abundance_table(
            abd.as_bytes(),
            Path::new("a"),
            "A\t0\n".as_bytes(),
            Path::new("l"),
            ParseOptions { species_only: false },
        )
        .unwrap();
        assert_eq!(all.n_features(), 5);
    }

    #[test]
    fn duplicate_taxon_rejected() {
        let abd = "taxonomy\tA\nk__B|s__x\t0.5\nk__B|s__x\t0.5\n";
        assert!(matches!(read(abd, "A\t0\n"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn two_element_sort() {
        let t = AbundanceTable::new(
            vec!["a".into()],
            taxa(&["k__B|p__Z|s__x", "k__A|p__Y|s__y"]),
            vec![0.9, 0.1],
            vec![0],
        )
        .unwrap();
        let s = t.sort_phylogenetically();
        assert_eq!(s.taxa(), &taxa(&["k__A|p__Y|s__y", "k__B|p__Z|s__x"])[..]);
        assert_eq!(s.row(0), &[0.1, 0.9]);
        assert_eq!(s.to_abundance().order, FeatureOrder::Phylogenetic);
        assert_eq!(t.to_abundance().order, FeatureOrder::Input);
    }

    #[test]
    fn sorted_input_is_identity() {
        let t = AbundanceTable::new(
            vec!["a".into()],
            taxa(&["k__A|s__a", "k__A|s__b", "k__B|s__a"]),
            vec![0.2, 0.3, 0.5],
            vec![1],
        )
        .unwrap();
        assert_eq!(t.sort_phylogenetically(), t);
    }

    #[test]
    fn presence_thresholds_at_zero() {
        let t = AbundanceTable::new(
            vec!["a".into(), "b".into()],
            taxa(&["k__A|s__a", "k__A|s__b", "k__B|s__a"]),
            vec![0.0, 0.3, 0.7, 0.0, 0.0, 0.0],
            vec![1, 0],
        )
        .unwrap();
        let p = t.to_presence();
        assert_eq!(p.kind, FeatureKind::Presence);
        assert_eq!(p.row(0), &[0.0, 1.0, 1.0]);
        assert_eq!(p.row(1), &[0.0, 0.0, 0.0]);
    }

    prop_compose! {
        fn arb_table()(n in 1usize..6, d in 1usize..8)
            (names in proptest::collection::hash_set("[a-z]{1,6}", d),
             raw in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], n * d),
             labels in proptest::collection::vec(0u8..2, n))
            -> AbundanceTable
        {
            let d = names.len();
            let n = labels.len();
            let taxa: Vec<TaxonomyString> = names
                .into_iter()
                .map(|s| TaxonomyString::new(format!("k__Bacteria|p__{}|s__{s}", s.len())).unwrap())
                .collect();
            let mut values = raw[..n * d].to_vec();
            for row in values.chunks_mut(d) {
                let s: f64 = row.iter().sum();
                if s > 0.0 { row.iter_mut().for_each(|v| *v /= s); }
            }
            let samples = (0..n).map(|i| format!("S{i}")).collect();
            AbundanceTable::new(samples, taxa, values, labels).unwrap()
        }
    }

    proptest! {
        #[test]
        fn sort_is_idempotent_and_matches_oracle(t in arb_table()) {
            let once = t.sort_phylogenetically();
            prop_assert_eq!(once.sort_phylogenetically(), once.clone());
            let mut oracle: Vec<String> = t.taxa().iter().map(|x| x.as_str().to_string()).collect();
            oracle.sort();
            let got: Vec<String> = once.taxa().iter().map(|x| x.as_str().to_string()).collect();
            prop_assert_eq!(got, oracle);
        }

        #[test]
        fn presence_commutes_with_sort(t in arb_table()) {
            let a = t.sort_phylogenetically().to_presence();
            let mut b = t.to_presence();
            // sort the presence matrix columns by the same key
            let mut order: Vec<usize> = (0..b.n_features()).collect();
            order.sort_by(|&x, &y| b.taxa[x].cmp(&b.taxa[y]));
            let d = b.n_features();
            let vals: Vec<f64> = (0..b.n_samples)
                .flat_map(|i| order.iter().map(move |&j| i * d + j))
                .map(|k| b.values[k])
                .collect();
            b.values = vals;
            b.taxa = order.iter().map(|&j| b.taxa[j].clone()).collect();
            prop_assert_eq!(a.values, b.values);
            prop_assert_eq!(a.taxa, b.taxa);
        }

        #[test]
        fn presence_row_sums_count_positive(t in arb_table()) {
            let p = t.to_presence();
            for i in 0..t.n_samples() {
                let count = t.row(i).iter().filter(|&&v| v > 0.0).count();
                prop_assert_eq!(p.row(i).iter().sum::<f64>(), count as f64);
            }
        }

        #[test]
        fn write_then_parse_round_trips(t in arb_table()) {
            let mut abd = Vec::new();
            let mut lab = Vec::new();
            t.write_abundance(&mut abd).unwrap();
            t.write_labels(&mut lab).unwrap();
            let back = read_abundance_table(
                abd.as_slice(), Path::new("a"), lab.as_slice(), Path::new("l"), ParseOptions::default(),
            ).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
