//! End-to-end checks of the `attrib` binary: pipeline subcommands,
//! manifest reproducibility, report re-rendering, and exit codes.

use std::path::Path;
use std::process::Command;

fn attrib(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_attrib"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn manifest_without_timestamp(dir: &Path) -> serde_json::Value {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn train_runs_are_reproducible_and_manifests_match() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for out in [a.path(), b.path()] {
        let output = attrib(&[
            "train",
            "--out",
            out.to_str().unwrap(),
            "--synth.train_n",
            "60",
            "--synth.val_n",
            "15",
            "--synth.test_n",
            "15",
            "--synth.dim",
            "16",
            "--train.epochs",
            "3",
            "--model.proj_dim",
            "8",
            "--adam.lr",
            "0.01",
        ]);
        assert!(output.status.success(), "{output:?}");
    }
    // Identical manifests except timestamps.
    assert_eq!(
        manifest_without_timestamp(a.path()),
        manifest_without_timestamp(b.path())
    );
    // Identical histories (modulo the embedded output paths) and
    // byte-identical checkpoints.
    let strip_paths = |dir: &Path| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.join("history.json")).unwrap(),
        )
        .unwrap();
        for r in v["records"].as_array_mut().unwrap() {
            r.as_object_mut().unwrap().remove("checkpoint_path");
        }
        v
    };
    assert_eq!(strip_paths(a.path()), strip_paths(b.path()));
    let ca = std::fs::read(a.path().join("checkpoints/epoch_3.json")).unwrap();
    let cb = std::fs::read(b.path().join("checkpoints/epoch_3.json")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn ingest_filter_split_pipeline_on_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("raw.jsonl");
    // Three domains, embeddings with controlled similarity to the
    // reference, enough documents to split 2/1/1.
    let mut lines = Vec::new();
    for (d, domain) in ["P", "R", "O"].iter().enumerate() {
        for i in 0..8 {
            let sim = 0.1 + 0.1 * i as f64; // 0.1 .. 0.8, mean 0.45
            let e = format!("[{}, {}]", sim, (1.0 - sim * sim).sqrt());
            lines.push(format!(
                r#"{{"id":"{domain}{i}","text":"t{d}{i}","embedding":{e},"reference_embedding":[1.0,0.0],"model_label":"m{}","domain":"{domain}"}}"#,
                i % 2
            ));
        }
    }
    std::fs::write(&data, lines.join("\n")).unwrap();

    let out1 = tempfile::tempdir().unwrap();
    let output = attrib(&[
        "ingest",
        "--out",
        out1.path().to_str().unwrap(),
        "--data.kind",
        "jsonl",
        "--data.path",
        data.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    assert!(out1.path().join("dataset.jsonl").exists());

    let out2 = tempfile::tempdir().unwrap();
    let output = attrib(&[
        "filter",
        "--out",
        out2.path().to_str().unwrap(),
        "--data.kind",
        "jsonl",
        "--data.path",
        data.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let filtered = std::fs::read_to_string(out2.path().join("filtered.jsonl")).unwrap();
    // Similarities strictly above the mean 0.45: 0.5..0.8 -> 4 of 8 per domain.
    assert_eq!(filtered.lines().count(), 12);

    let out3 = tempfile::tempdir().unwrap();
    let output = attrib(&[
        "split",
        "--out",
        out3.path().to_str().unwrap(),
        "--data.kind",
        "jsonl",
        "--data.path",
        filtered_path_str(&out2).as_str(),
        "--split.train_n",
        "2",
        "--split.val_n",
        "1",
        "--split.test_n",
        "1",
        "--split.seed",
        "11",
    ]);
    assert!(output.status.success(), "{output:?}");
    let split = std::fs::read_to_string(out3.path().join("split.jsonl")).unwrap();
    assert_eq!(split.matches("\"split\":\"train\"").count(), 6);
    assert_eq!(split.matches("\"split\":\"val\"").count(), 3);
    assert_eq!(split.matches("\"split\":\"test\"").count(), 3);
}

fn filtered_path_str(dir: &tempfile::TempDir) -> String {
    dir.path().join("filtered.jsonl").to_string_lossy().into_owned()
}

#[test]
fn eval_report_round_trip_and_rerender() {
    let out = tempfile::tempdir().unwrap();
    let output = attrib(&[
        "eval",
        "--out",
        out.path().to_str().unwrap(),
        "--synth.train_n",
        "45",
        "--synth.val_n",
        "12",
        "--synth.test_n",
        "12",
        "--synth.dim",
        "12",
        "--eval.settings",
        "P+R->O",
        "--eval.seeds",
        "1",
        "--eval.modes",
        "full",
        "--train.epochs",
        "2",
        "--model.proj_dim",
        "6",
    ]);
    assert!(output.status.success(), "{output:?}");
    for file in ["reports.json", "reports.txt", "reports.csv", "manifest.json"] {
        assert!(out.path().join(file).exists(), "missing {file}");
    }
    let csv = std::fs::read_to_string(out.path().join("reports.csv")).unwrap();
    assert!(csv.starts_with("setting,mode,seed,split,domain,accuracy,act_diff,imp"));

    // Re-render the saved reports as JSON and compare content.
    let rerender = attrib(&[
        "report",
        "--out",
        out.path().to_str().unwrap(),
        "--report.format",
        "json",
    ]);
    assert!(rerender.status.success());
    let stdout = String::from_utf8(rerender.stdout).unwrap();
    let reparsed: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let original: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("reports.json")).unwrap())
            .unwrap();
    assert_eq!(reparsed, original["reports"]);
}

#[test]
fn sweep_emits_ranked_rows_with_shared_seed() {
    let out = tempfile::tempdir().unwrap();
    let output = attrib(&[
        "sweep",
        "--out",
        out.path().to_str().unwrap(),
        "--synth.train_n",
        "45",
        "--synth.val_n",
        "12",
        "--synth.test_n",
        "12",
        "--synth.dim",
        "12",
        "--sweep.grid",
        "0.2,0.7",
        "--train.epochs",
        "2",
        "--model.proj_dim",
        "6",
    ]);
    assert!(output.status.success(), "{output:?}");
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("sweep.json")).unwrap())
            .unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["seed"], rows[1]["seed"]);
    assert_eq!(rows[0]["pool_hash"], rows[1]["pool_hash"]);
    assert!(rows[0]["val_accuracy"].as_f64() >= rows[1]["val_accuracy"].as_f64());
}

#[test]
fn project_writes_svg_and_csv() {
    let out = tempfile::tempdir().unwrap();
    let output = attrib(&[
        "project",
        "--out",
        out.path().to_str().unwrap(),
        "--synth.train_n",
        "30",
        "--synth.val_n",
        "9",
        "--synth.test_n",
        "9",
        "--synth.dim",
        "12",
        "--train.epochs",
        "2",
        "--model.proj_dim",
        "6",
        "--project.per_domain",
        "16",
        "--tsne.perplexity",
        "5",
        "--tsne.iterations",
        "300",
    ]);
    assert!(output.status.success(), "{output:?}");
    let svg = std::fs::read_to_string(out.path().join("scatter.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("legend-class").count(), 3);
    assert_eq!(svg.matches("legend-domain").count(), 3);
    let csv = std::fs::read_to_string(out.path().join("scatter.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x,y,model_label,domain");
    assert_eq!(csv.lines().count(), 1 + 48);
}

#[test]
fn config_file_applies_under_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.conf");
    std::fs::write(
        &config_path,
        "# run config\nloss.tau = 0.7\ntrain.epochs = 2\nsynth.train_n = 30\nsynth.val_n = 9\nsynth.test_n = 9\nsynth.dim = 12\nmodel.proj_dim = 6\n",
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let output = attrib(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--loss.tau",
        "0.2",
    ]);
    assert!(output.status.success(), "{output:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap())
            .unwrap();
    // Flag overrides the file; the file overrides the default.
    assert_eq!(manifest["config"]["loss.tau"], "0.2");
    assert_eq!(manifest["config"]["train.epochs"], "2");
}

#[test]
fn exit_codes_follow_error_classes() {
    // No arguments: usage, exit 1.
    let output = attrib(&[]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("usage"));

    // Unknown subcommand: exit 1.
    assert_eq!(attrib(&["frobnicate"]).status.code(), Some(1));

    // Unknown config key: exit 1.
    let out = tempfile::tempdir().unwrap();
    let output = attrib(&["train", "--out", out.path().to_str().unwrap(), "--loss.tua", "1"]);
    assert_eq!(output.status.code(), Some(1));

    // Validation error: exit 1.
    let output = attrib(&["train", "--out", out.path().to_str().unwrap(), "--loss.tau", "-1"]);
    assert_eq!(output.status.code(), Some(1));

    // Runtime failure (missing input file): exit 2.
    let output = attrib(&[
        "ingest",
        "--out",
        out.path().to_str().unwrap(),
        "--data.kind",
        "jsonl",
        "--data.path",
        "/definitely/not/here.jsonl",
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn probe_runs_against_local_stub() {
    use std::io::{BufRead, BufReader, Read, Write};
    // Scripted stub answering "vicuna" for every query.
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let body = r#"{"choices":[{"message":{"content":"vicuna"}}]}"#;
    let server = std::thread::spawn(move || {
        for _ in 0..4 {
            let (mut conn, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(conn.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut content_length = 0usize;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if header.trim().is_empty() {
                    break;
                }
                if let Some(v) = header.to_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut payload = vec![0u8; content_length];
            reader.read_exact(&mut payload).unwrap();
            conn.write_all(
                format!(
                    "HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .as_bytes(),
            )
            .unwrap();
        }
    });

    // Text dataset: probing needs document text, not embeddings.
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("texts.jsonl");
    let mut lines = Vec::new();
    for domain in ["P", "R", "O"] {
        for i in 0..12 {
            let label = ["chatgpt", "llama2", "vicuna"][i % 3];
            lines.push(format!(
                r#"{{"id":"{domain}{i}","text":"sample {domain} {i}","model_label":"{label}","domain":"{domain}"}}"#
            ));
        }
    }
    std::fs::write(&data, lines.join("\n")).unwrap();

    let out = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_attrib"))
        .env("CLI_PROBE_TOKEN", "token")
        .args([
            "probe",
            "--out",
            out.path().to_str().unwrap(),
            "--data.kind",
            "jsonl",
            "--data.path",
            data.to_str().unwrap(),
            "--split.train_n",
            "6",
            "--split.val_n",
            "2",
            "--split.test_n",
            "4",
            "--probe.endpoint",
            &url,
            "--probe.token_env",
            "CLI_PROBE_TOKEN",
            "--probe.max_queries",
            "4",
            "--probe.concurrency",
            "1",
        ])
        .output()
        .expect("probe run");
    assert!(output.status.success(), "{output:?}");
    server.join().unwrap();

    let results = std::fs::read_to_string(out.path().join("probe_results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 4);
    for line in results.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["predicted"], "vicuna");
    }
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.path().join("probe_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["queries"], 4);
    assert!(summary["accuracy"].as_f64().is_some());
}
