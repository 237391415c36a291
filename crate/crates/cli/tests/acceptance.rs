//! CLI release gate (check 09): the full pipeline is byte-for-byte
//! reproducible for a fixed config file and seed on one thread.

use std::fs;
use std::process::Command;

#[test]
fn pipeline_reports_are_byte_identical_across_runs() {
    let bin = env!("CARGO_BIN_EXE_modeshare");
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");

    let synth = Command::new(bin)
        .args(["synth", "--out-dir"])
        .arg(&data)
        .args(["--n-zones", "8", "--nodes-per-zone", "6", "--seed", "11"])
        .output()
        .unwrap();
    assert!(
        synth.status.success(),
        "synth failed: {}",
        String::from_utf8_lossy(&synth.stderr)
    );

    let cfg_path = tmp.path().join("run.conf");
    let cfg = format!(
        "edges = {d}/edges.csv\n\
         zones = {d}/zones.csv\n\
         features = {d}/features.csv\n\
         shares = {d}/shares.csv\n\
         seed = 11\n\
         dim = 4\n\
         epochs = 3\n\
         walk_length = 10\n\
         walks_per_node = 4\n\
         window = 3\n\
         forest_trees = 10\n\
         forest_depths = 3\n\
         boost_rounds = 10\n\
         boost_shrinkage = 0.1\n\
         boost_depth = 3\n\
         kmeans_k = 3\n",
        d = data.display()
    );
    fs::write(&cfg_path, cfg).unwrap();

    let mut outs = Vec::new();
    for run in ["out1", "out2"] {
        let dir = tmp.path().join(run);
        let st = Command::new(bin)
            .arg("pipeline")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out-dir")
            .arg(&dir)
            .args(["--threads", "1"])
            .output()
            .unwrap();
        assert!(
            st.status.success(),
            "pipeline failed: {}",
            String::from_utf8_lossy(&st.stderr)
        );
        outs.push(dir);
    }

    let report1 = fs::read(outs[0].join("report.csv")).unwrap();
    let report2 = fs::read(outs[1].join("report.csv")).unwrap();
    assert!(!report1.is_empty());
    assert_eq!(report1, report2, "report.csv differs between identical runs");
    // The remaining data products must replay exactly too; only the run
    // manifest carries timings and may differ.
    for name in [
        "clusters.csv",
        "correlation.csv",
        "quantiles.csv",
        "zone_embedding.txt",
        "selected_features.txt",
    ] {
        assert_eq!(
            fs::read(outs[0].join(name)).unwrap(),
            fs::read(outs[1].join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
    println!("acceptance 09 deterministic-cli-pipeline: pass (report.csv byte-identical across reruns)");
}
