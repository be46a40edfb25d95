//! The whole experiment grid through the command-line surface, at reduced
//! size: generate data, train all four variants, fit per-budget schedules,
//! adapt-evaluate each table cell, and render the comparison table.
//!
//! ```bash
//! cargo run --example full_pipeline
//! ```

use metasat::cli;

fn run(args: &[&str]) {
    let mut argv = vec!["metasat"];
    argv.extend_from_slice(args);
    if let Err(e) = cli::run(argv) {
        eprintln!("step failed: {e}");
        std::process::exit(1);
    }
}

fn main() {
    let dir = std::env::temp_dir().join("metasat_full_pipeline_example");
    std::fs::create_dir_all(&dir).unwrap();
    let p = |name: &str| dir.join(name).display().to_string();
    let seed = "0";
    // reduced sizes so the walk-through finishes in well under a minute
    let small: Vec<String> = [
        "n_speakers=12",
        "frames_per_speaker=2400",
        "feature_dim=10",
        "n_classes=6",
        "segment_frames=10",
        "hidden=12,12",
        "iterations=10",
        "batches_per_iter=40",
        "maml_iterations=5",
        "maml_batches_per_iter=2",
        "train_budget_frames=300",
        "maml_val_episodes=3",
        "fit_iterations=10",
        "budgets=300,600,1200",
    ]
    .iter()
    .flat_map(|kv| ["--set".to_string(), kv.to_string()])
    .collect();
    let small: Vec<&str> = small.iter().map(String::as_str).collect();

    let step = |name: &str, args: &[&str]| {
        println!("==> {name}");
        let mut full: Vec<&str> = args.to_vec();
        full.extend_from_slice(&small);
        full.extend_from_slice(&["--seed", seed, "--overwrite"]);
        run(&full);
    };

    step("generate-data", &["generate-data", "--out", &p("corpus.bin")]);
    step(
        "train baseline",
        &["train", "--variant", "baseline", "--corpus", &p("corpus.bin"), "--out", &p("baseline.ckpt")],
    );
    step(
        "train warm start (half budget)",
        &["train", "--variant", "baseline", "--set", "iterations=5", "--corpus", &p("corpus.bin"), "--out", &p("warm.ckpt")],
    );
    println!("==> train labeller (separate seed)");
    let corpus_path = p("corpus.bin");
    let labeller_path = p("labeller.ckpt");
    let mut labeller: Vec<&str> = vec![
        "train", "--variant", "baseline", "--corpus", &corpus_path, "--out", &labeller_path,
    ];
    labeller.extend_from_slice(&small);
    labeller.extend_from_slice(&["--seed", "7777", "--overwrite"]);
    run(&labeller);
    step(
        "train sat-lhuc",
        &["train", "--variant", "sat-lhuc", "--corpus", &p("corpus.bin"), "--out", &p("sat-lhuc.ckpt")],
    );
    step(
        "train maml-lhuc",
        &["train", "--variant", "maml-lhuc", "--warm-start", &p("warm.ckpt"), "--corpus", &p("corpus.bin"), "--out", &p("maml-lhuc.ckpt")],
    );
    step(
        "train maml-all",
        &["train", "--variant", "maml-all", "--warm-start", &p("warm.ckpt"), "--corpus", &p("corpus.bin"), "--out", &p("maml-all.ckpt")],
    );

    for (column, ckpt, subset) in [
        ("baseline-lhuc", "baseline.ckpt", "lhuc"),
        ("baseline-all", "baseline.ckpt", "all"),
        ("sat-lhuc", "sat-lhuc.ckpt", "lhuc"),
        ("maml-lhuc", "maml-lhuc.ckpt", "lhuc"),
        ("maml-all", "maml-all.ckpt", "all"),
    ] {
        for budget in ["300", "600", "1200"] {
            step(
                &format!("fit schedule {column} @ {budget}"),
                &[
                    "fit-schedule",
                    "--checkpoint", &p(ckpt),
                    "--corpus", &p("corpus.bin"),
                    "--subset", subset,
                    "--budget", budget,
                    "--out", &p(&format!("{column}_{budget}.sched")),
                ],
            );
        }
    }

    step(
        "adapt-eval",
        &[
            "adapt-eval",
            "--corpus", &p("corpus.bin"),
            "--ckpt-dir", &dir.display().to_string(),
            "--sched-dir", &dir.display().to_string(),
            "--out", &p("results.csv"),
        ],
    );
    println!("==> report");
    run(&["report", &p("results.csv")]);
    println!("artifacts left in {}", dir.display());
}
