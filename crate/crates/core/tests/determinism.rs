mod common;

use std::fs;

use metaimage::cli::run;
use metaimage::ingest::write_table_files;

#[test]
fn repeated_eval_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (abd, labels) = write_table_files(&common::toy_table(24, 16), tmp.path(), "toy").unwrap();
    let eval = |out: &str, jobs: &str| {
        run([
            "metaimage",
            "eval",
            "--abundance",
            abd.to_str().unwrap(),
            "--labels",
            labels.to_str().unwrap(),
            "--representation",
            "tsne-abd",
            "--arch",
            "conv2d:2:4",
            "--eval.folds=4",
            "--eval.repeats=2",
            "--training.epochs=3",
            "--tsne.perplexity=4",
            "--tsne.epochs=100",
            "--tsne.target=16",
            "--seed",
            "11",
            "--jobs",
            jobs,
            "--out",
            out,
        ])
    };
    let dirs: Vec<_> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    assert_eq!(eval(dirs[0].to_str().unwrap(), "2"), 0);
    assert_eq!(eval(dirs[1].to_str().unwrap(), "2"), 0);
    assert_eq!(eval(dirs[2].to_str().unwrap(), "1"), 0);
    for name in ["results.csv", "results.json"] {
        let first = fs::read(dirs[0].join(name)).unwrap();
        assert_eq!(first, fs::read(dirs[1].join(name)).unwrap(), "{name}");
        // the worker count does not change the numbers
        assert_eq!(first, fs::read(dirs[2].join(name)).unwrap(), "{name}");
    }
}
