use std::io::Write;

use serde::{Deserialize, Serialize};

use super::pipeline::Representation;
use crate::error::{Error, Result};
use crate::nn::Architecture;

/// Cross-validated accuracy of one (dataset, representation, architecture) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: String,
    pub representation: Representation,
    pub arch: Architecture,
    pub fold_acc: Vec<f64>,
    pub mean_acc: f64,
    /// Population standard deviation of `fold_acc`.
    pub std_acc: f64,
    pub seed: u64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

impl CvReport {
    pub fn new(
        dataset: &str,
        representation: Representation,
        arch: Architecture,
        fold_acc: Vec<f64>,
        seed: u64,
    ) -> Self {
        CvReport {
            dataset: dataset.to_string(),
            representation,
            arch,
            mean_acc: mean(&fold_acc),
            std_acc: population_std(&fold_acc),
            fold_acc,
            seed,
        }
    }

    /// Resume key of a grid row.
    pub fn key(&self) -> (String, Representation, Architecture, u64) {
        (self.dataset.clone(), self.representation, self.arch, self.seed)
    }

    pub fn csv_row(&self) -> String {
        let mut fields = vec![
            self.dataset.clone(),
            self.representation.to_string(),
            self.arch.to_string(),
        ];
        fields.extend(self.fold_acc.iter().map(f64::to_string));
        fields.push(self.mean_acc.to_string());
        fields.push(self.std_acc.to_string());
        fields.push(self.seed.to_string());
        fields.join(",")
    }

    pub fn parse_csv_row(line: &str, folds: usize) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != folds + 6 {
            return Err(Error::Config(format!(
                "results row has {} fields, expected {}",
                fields.len(),
                folds + 6
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad accuracy {s:?} in results row")))
        };
        let fold_acc = fields[3..3 + folds]
            .iter()
            .map(|s| num(s))
            .collect::<Result<Vec<_>>>()?;
        let seed = fields[folds + 5]
            .parse()
            .map_err(|_| Error::Config(format!("bad seed {:?} in results row", fields[folds + 5])))?;
        Ok(CvReport {
            dataset: fields[0].to_string(),
            representation: fields[1].parse()?,
            arch: fields[2].parse()?,
            fold_acc,
            mean_acc: num(fields[folds + 3])?,
            std_acc: num(fields[folds + 4])?,
            seed,
        })
    }
}

pub fn csv_header(folds: usize) -> String {
    let mut h = vec!["dataset".to_string(), "representation".into(), "arch".into()];
    h.extend((0..folds).map(|i| format!("fold{i}")));
    h.extend(["mean".into(), "std".into(), "seed".into()]);
    h.join(",")
}

pub fn write_csv<W: Write>(reports: &[CvReport], folds: usize, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", csv_header(folds))?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_json<W: Write>(reports: &[CvReport], mut w: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut w, reports)?;
    writeln!(w)
}

/// Reads a results file written by `write_csv` or appended to by the grid runner.
pub fn read_csv(text: &str, folds: usize) -> Result<Vec<CvReport>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(h) if h.trim_end() == csv_header(folds) => {}
        Some(h) => {
            return Err(Error::Config(format!(
                "results header {h:?} does not match {folds} folds"
            )))
        }
    }
    lines.map(|l| CvReport::parse_csv_row(l, folds)).collect()
}

/// `mean ± std` line for the console summary.
pub fn summary_line(r: &CvReport) -> String {
    format!(
        "{:<12} {:<11} {:<12} ACC {:.3} ± {:.3}",
        r.dataset, r.representation, r.arch, r.mean_acc, r.std_acc
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(acc: Vec<f64>) -> CvReport {
        CvReport::new("cir", Representation::TsnePre, "conv2d:5:20".parse().unwrap(), acc, 7)
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            csv_header(10),
            "dataset,representation,arch,fold0,fold1,fold2,fold3,fold4,fold5,fold6,fold7,fold8,fold9,mean,std,seed"
        );
    }

    #[test]
    fn std_is_population() {
        let r = report(vec![1.0, 0.0]);
        assert_eq!(r.mean_acc, 0.5);
        assert_eq!(r.std_acc, 0.5);
    }

    #[test]
    fn read_rejects_other_fold_count() {
        let mut buf = Vec::new();
        write_csv(&[report(vec![0.5; 10])], 10, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(read_csv(&text, 5).is_err());
        assert_eq!(read_csv("", 10).unwrap(), vec![]);
    }

    proptest! {
        #[test]
        fn csv_round_trip(acc in proptest::collection::vec(0.0f64..=1.0, 10)) {
            let r = report(acc.clone());
            // mean and spread recomputed from the folds match the stored values
            let m = acc.iter().sum::<f64>() / 10.0;
            prop_assert!((r.mean_acc - m).abs() < 1e-12);
            let v = acc.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 10.0;
            prop_assert!((r.std_acc - v.sqrt()).abs() < 1e-12);
            let mut buf = Vec::new();
            write_csv(std::slice::from_ref(&r), 10, &mut buf).unwrap();
            let back = read_csv(std::str::from_utf8(&buf).unwrap(), 10).unwrap();
            prop_assert_eq!(back, vec![r]);
        }
    }
}
