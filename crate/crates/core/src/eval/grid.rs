use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use super::pipeline::{
    fold_plans, run_cell_with_plans, Cell, EvalSettings, FoldObserver, Representation, SampleSource,
};
use super::report::{csv_header, read_csv, CvReport};
use crate::error::{Error, Result};
use crate::nn::Architecture;

/// The 100 convolutional architectures for `repr` followed by the FC baseline.
pub fn grid_cells(repr: Representation) -> Vec<Cell> {
    Architecture::grid(repr.conv_dim())
        .into_iter()
        .map(|a| Cell::new(repr, a))
        .collect()
}

/// Runs `cells`, appending each finished row to `results` and skipping rows
/// already present there for the same dataset and seed.
pub fn run_grid(
    source: &dyn SampleSource,
    cells: &[Cell],
    settings: &EvalSettings,
    results: &Path,
    observer: &dyn FoldObserver,
) -> Result<Vec<CvReport>> {
    if cells.is_empty() {
        return Err(Error::Config("no cells to evaluate".into()));
    }
    let done: HashMap<_, CvReport> = if results.exists() {
        let text = fs::read_to_string(results).map_err(|e| Error::io(results, e))?;
        read_csv(&text, settings.folds)?
            .into_iter()
            .map(|r| (r.key(), r))
            .collect()
    } else {
        fs::write(results, format!("{}\n", csv_header(settings.folds))).map_err(|e| Error::io(results, e))?;
        HashMap::new()
    };
    if !done.is_empty() {
        log::info!("resuming: {} rows already in {}", done.len(), results.display());
    }

    let plans = fold_plans(source.labels(), settings)?;
    let mut out = Vec::with_capacity(cells.len());
    for c in cells {
        let key = (settings.dataset.clone(), c.representation, c.arch, settings.seed);
        if let Some(r) = done.get(&key) {
            out.push(r.clone());
            continue;
        }
        log::info!("{}: {} {}", settings.dataset, c.representation, c.arch);
        let report = run_cell_with_plans(source, c.representation, c.arch, settings, &plans, observer)?;
        let mut f = OpenOptions::new()
            .append(true)
            .open(results)
            .map_err(|e| Error::io(results, e))?;
        writeln!(f, "{}", report.csv_row()).map_err(|e| Error::io(results, e))?;
        f.sync_data().map_err(|e| Error::io(results, e))?;
        out.push(report);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_101_cells() {
        let cells = grid_cells(Representation::FillupAbd);
        assert_eq!(cells.len(), 101);
        assert_eq!(cells[100].arch, Architecture::FC);
        assert!(cells[..100].iter().all(|c| c.arch.depth >= 1));
        let raw = grid_cells(Representation::Raw1d);
        assert!(raw[..100]
            .iter()
            .all(|c| c.representation.check_compatible(&c.arch).is_ok()));
    }
}
