//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `--nocapture` to see them).

use std::time::{Duration, Instant};

use attrib_core::data::{select_domains, Document, DomainSetting, Split};
use attrib_core::encoder::{encode_batch, encoder_backward, init_encoder_params, EncoderConfig, EncoderParams};
use attrib_core::evaluator::{actual_difference, improvement_percentage};
use attrib_core::loss::{combined_loss, cross_entropy, supervised_contrastive, supervised_contrastive_oracle, InnerScale, LossConfig};
use attrib_core::mat::Mat;
use attrib_core::model::{forward, init_params, model_backward, ClassifierParams, ProjectionParams};
use attrib_core::optimizer::AdamConfig;
use attrib_core::projection::{conditional_affinities, joint_affinities, silhouette_2d, tsne_embed, TsneConfig};
use attrib_core::rng::SplitMix64;
use attrib_core::synth::{generate, SynthConfig};
use attrib_core::trainer::{accuracy, select_checkpoint, train, TrainConfig, TrainedModel};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn text_doc(id: usize, label: usize, rng: &mut SplitMix64) -> Document {
    let len = 3 + rng.next_below(10) as usize;
    let text: String = (0..len)
        .map(|_| (b'a' + rng.next_below(6) as u8) as char)
        .collect();
    Document {
        id: format!("doc{id}"),
        text: Some(text),
        embedding: None,
        reference_embedding: None,
        model_label: label,
        domain: 0,
        split: Split::Train,
    }
}

/// Full-pipeline loss: text -> hashed encoder -> projection -> classifier
/// -> cross-entropy + weighted contrastive term.
fn pipeline_loss(
    docs: &[Document],
    labels: &[usize],
    encoder_config: &EncoderConfig,
    encoder_params: &EncoderParams,
    proj: &ProjectionParams,
    clf: &ClassifierParams,
    loss_config: &LossConfig,
) -> f64 {
    let encoded = encode_batch(docs, encoder_config, encoder_params).unwrap();
    let trace = forward(&encoded.features, proj, clf).unwrap();
    combined_loss(&trace.logits, &trace.z, labels, loss_config)
        .unwrap()
        .total
}

#[test]
fn acceptance_01_gradient_correctness() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACC01);
    let step = 1e-5;
    let mut checked = 0usize;
    for instance in 0..50 {
        let n = 2 + rng.next_below(7) as usize; // 2..=8
        let h = 2 + rng.next_below(15) as usize; // 2..=16
        let dz = 2 + rng.next_below(7) as usize; // 2..=8
        let c = 2 + rng.next_below(3) as usize; // 2..=4
        let b = 4 + rng.next_below(13) as usize; // 4..=16 hash buckets

        let encoder_config = EncoderConfig::hashed(h, b, 1, 2);
        let encoder_params = init_encoder_params(&encoder_config, instance as u64).unwrap();
        let (mut proj, mut clf) = init_params(instance as u64 + 1, h, dz, c).unwrap();
        // Perturb the affine layer-norm so its gradients are non-trivial.
        for (i, g) in proj.ln_gain.iter_mut().enumerate() {
            *g = 1.0 + 0.05 * i as f64;
        }
        for v in clf.c.iter_mut() {
            *v = rng.uniform(-0.2, 0.2);
        }
        let docs: Vec<Document> = (0..n)
            .map(|i| text_doc(i, rng.next_below(c as u64) as usize, &mut rng))
            .collect();
        let labels: Vec<usize> = docs.iter().map(|d| d.model_label).collect();
        let loss_config = LossConfig {
            tau: 0.2,
            scl_weight: if instance % 5 == 0 { 0.0 } else { 1.0 },
            normalize_z: instance % 3 != 0,
            inner_scale: InnerScale::Positives,
        };

        // Analytic gradients through the whole stack.
        let encoded = encode_batch(&docs, &encoder_config, &encoder_params).unwrap();
        let trace = forward(&encoded.features, &proj, &clf).unwrap();
        let losses = combined_loss(&trace.logits, &trace.z, &labels, &loss_config).unwrap();
        let grads = model_backward(&trace, &proj, &clf, &losses.dlogits, &losses.dz).unwrap();
        let table_grad = encoder_backward(&encoded.ngram_buckets, &grads.dh, &encoder_config).unwrap();

        let loss_at = |proj: &ProjectionParams,
                       clf: &ClassifierParams,
                       enc: &EncoderParams| {
            pipeline_loss(&docs, &labels, &encoder_config, enc, proj, clf, &loss_config)
        };

        let mut check = |analytic: f64, num: f64, what: &str| {
            let err = rel_err(analytic, num);
            assert!(
                err < 1e-4,
                "instance {instance} {what}: analytic {analytic} vs fd {num} (rel {err})"
            );
            checked += 1;
        };

        // Projection weight, biases, layer-norm affine.
        for i in 0..proj.w.rows() {
            for j in 0..proj.w.cols() {
                let mut pp = proj.clone();
                pp.w.set(i, j, proj.w.get(i, j) + step);
                let mut pm = proj.clone();
                pm.w.set(i, j, proj.w.get(i, j) - step);
                let num = (loss_at(&pp, &clf, &encoder_params)
                    - loss_at(&pm, &clf, &encoder_params))
                    / (2.0 * step);
                check(grads.dw.get(i, j), num, "dW");
            }
        }
        for j in 0..dz {
            for (field, analytic) in [(0, grads.db[j]), (1, grads.dln_gain[j]), (2, grads.dln_bias[j])] {
                let mut pp = proj.clone();
                let mut pm = proj.clone();
                match field {
                    0 => {
                        pp.b[j] += step;
                        pm.b[j] -= step;
                    }
                    1 => {
                        pp.ln_gain[j] += step;
                        pm.ln_gain[j] -= step;
                    }
                    _ => {
                        pp.ln_bias[j] += step;
                        pm.ln_bias[j] -= step;
                    }
                }
                let num = (loss_at(&pp, &clf, &encoder_params)
                    - loss_at(&pm, &clf, &encoder_params))
                    / (2.0 * step);
                check(analytic, num, "proj vector param");
            }
        }
        // Classifier.
        for i in 0..clf.v.rows() {
            for j in 0..clf.v.cols() {
                let mut cp = clf.clone();
                cp.v.set(i, j, clf.v.get(i, j) + step);
                let mut cm = clf.clone();
                cm.v.set(i, j, clf.v.get(i, j) - step);
                let num = (loss_at(&proj, &cp, &encoder_params)
                    - loss_at(&proj, &cm, &encoder_params))
                    / (2.0 * step);
                check(grads.dv.get(i, j), num, "dV");
            }
        }
        for j in 0..c {
            let mut cp = clf.clone();
            cp.c[j] += step;
            let mut cm = clf.clone();
            cm.c[j] -= step;
            let num = (loss_at(&proj, &cp, &encoder_params)
                - loss_at(&proj, &cm, &encoder_params))
                / (2.0 * step);
            check(grads.dc[j], num, "dc");
        }
        // Toy encoder table.
        let table = encoder_params.table().unwrap();
        for i in 0..table.rows() {
            for j in 0..table.cols() {
                let mut tp = table.clone();
                tp.set(i, j, table.get(i, j) + step);
                let mut tm = table.clone();
                tm.set(i, j, table.get(i, j) - step);
                let num = (loss_at(&proj, &clf, &EncoderParams::Hashed { table: tp })
                    - loss_at(&proj, &clf, &EncoderParams::Hashed { table: tm }))
                    / (2.0 * step);
                check(table_grad.get(i, j), num, "encoder table");
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(30),
        "gradient check took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 1 gradient correctness: PASS ({checked} coordinates over 50 instances, {elapsed:?})"
    );
}

#[test]
fn acceptance_02_scl_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACC02);
    for case in 0..100 {
        let n = 2 + rng.next_below(11) as usize; // 2..=12
        let d = 1 + rng.next_below(6) as usize;
        let classes = 1 + rng.next_below(4) as usize;
        let z = Mat::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng.uniform(-1.5, 1.5)).collect(),
        );
        // Force singleton-class anchors into some batches.
        let mut labels: Vec<usize> = (0..n)
            .map(|_| rng.next_below(classes as u64) as usize)
            .collect();
        if case % 4 == 0 {
            labels[0] = classes; // unique class for anchor 0
        }
        let config = LossConfig {
            tau: [0.1, 0.2, 1.0][case % 3],
            scl_weight: 1.0,
            normalize_z: case % 2 == 0,
            inner_scale: if case % 7 == 0 {
                InnerScale::BatchSize
            } else {
                InnerScale::Positives
            },
        };
        let (fast, _) = supervised_contrastive(&z, &labels, &config).unwrap();
        let slow = supervised_contrastive_oracle(&z, &labels, &config).unwrap();
        assert!(
            (fast - slow).abs() < 1e-10,
            "case {case}: vectorized {fast} vs oracle {slow}"
        );
    }
    // The N=3 hand case.
    let z = Mat::from_vec(3, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let config = LossConfig {
        tau: 1.0,
        scl_weight: 1.0,
        normalize_z: false,
        inner_scale: InnerScale::Positives,
    };
    let (loss, _) = supervised_contrastive(&z, &[0, 0, 1], &config).unwrap();
    assert!((loss - 0.6265233750364457).abs() < 1e-9, "hand case {loss}");
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5));
    println!("ACCEPTANCE 2 SCL oracle equivalence: PASS (100 instances + hand case, {elapsed:?})");
}

#[test]
fn acceptance_03_trivial_zero_cases() {
    let z = Mat::from_vec(2, 3, vec![0.6, -0.8, 0.0, 0.6, -0.8, 0.0]);
    let config = LossConfig {
        tau: 1.0,
        scl_weight: 1.0,
        normalize_z: true,
        inner_scale: InnerScale::Positives,
    };
    let (scl, _) = supervised_contrastive(&z, &[1, 1], &config).unwrap();
    assert!(scl.abs() < 1e-12, "identical pair SCL {scl}");

    for classes in [2usize, 3, 7] {
        let logits = Mat::zeros(5, classes);
        let labels = vec![classes - 1; 5];
        let (ce, _) = cross_entropy(&logits, &labels).unwrap();
        assert!(
            (ce - (classes as f64).ln()).abs() < 1e-12,
            "uniform logits CE {ce} vs ln {classes}"
        );
    }
    println!("ACCEPTANCE 3 trivial zero cases: PASS");
}

#[test]
fn acceptance_04_metric_reproduction() {
    let started = Instant::now();
    // (acc_tar, acc_bert, printed act_diff, printed imp%) reference
    // cells; act_diff within 0.01 and imp within 0.02 of the printed
    // values (printed numbers were rounded before the division).
    let cells = [
        (59.70, 54.14, 5.56, 10.26),
        (38.85, 26.75, 12.10, 45.23),
        (55.34, 53.69, 1.65, 3.07),
        // Further sampled cells.
        (54.52, 51.42, 3.10, 6.02),
        (58.34, 56.47, 1.87, 3.31),
        (71.25, 70.55, 0.70, 0.99),
        (46.71, 42.46, 4.25, 10.00),
        (70.78, 68.93, 1.85, 2.68),
        (69.34, 65.70, 3.64, 5.54),
        (57.52, 51.32, 6.20, 12.08),
        (72.61, 69.93, 2.68, 3.83),
    ];
    for (tar, bert, act, imp) in cells {
        let a = actual_difference(tar, bert);
        assert!(
            (a - act).abs() <= 0.01 + 1e-12,
            "act_diff({tar},{bert}) = {a}, printed {act}"
        );
        let i = improvement_percentage(tar, bert).unwrap();
        assert!(
            (i - imp).abs() <= 0.02 + 1e-12,
            "imp({tar},{bert}) = {i}, printed {imp}"
        );
        // Cross-identity between the two metrics.
        assert!((i * bert / 100.0 - a).abs() < 1e-12);
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1));
    println!(
        "ACCEPTANCE 4 metric reproduction: PASS ({} cells, {elapsed:?})",
        cells.len()
    );
}

#[test]
fn acceptance_05_synthetic_domain_generalization() {
    let started = Instant::now();
    // Default benchmark data; the flip-designated domain (O) is the
    // held-out target, trained on P and R.
    let dataset = generate(&SynthConfig::default()).unwrap();
    let setting = DomainSetting::new([0, 1], [2]);
    let pools = select_domains(&dataset, &setting).unwrap();
    let encoder = EncoderConfig::external(32);

    let train_config = |scl_weight: f64, seed: u64| TrainConfig {
        epochs: 10,
        batch_size: 32,
        seed,
        loss: LossConfig {
            tau: 0.2,
            scl_weight,
            ..LossConfig::default()
        },
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        proj_dim: 8,
        ..TrainConfig::default()
    };

    let ood = |scl_weight: f64| -> Vec<f64> {
        (1..=10u64)
            .map(|seed| {
                let config = train_config(scl_weight, seed);
                let output = train(&pools, &encoder, &config, dataset.class_count(), None).unwrap();
                let epoch = select_checkpoint(&output.history).unwrap();
                let model = TrainedModel {
                    encoder_config: encoder.clone(),
                    state: output.checkpoints[epoch - 1].model.clone(),
                };
                accuracy(&model, &pools.target_test[&2]).unwrap()
            })
            .collect()
    };

    let ce_only = ood(0.0);
    let with_scl = ood(1.0);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ce_mean = mean(&ce_only);
    let scl_mean = mean(&with_scl);
    let gap = scl_mean - ce_mean;

    // Hard criterion: the contrastive term buys at least 5 points of
    // out-of-domain accuracy on average.
    assert!(
        gap >= 5.0,
        "OOD gap {gap:.2} < 5 (CE {ce_mean:.2}, CE+SCL {scl_mean:.2})"
    );
    // Level thresholds pinned from the first run of this benchmark
    // (measured CE 49.7, CE+SCL 61.7).
    assert!(scl_mean >= 58.0, "CE+SCL mean OOD {scl_mean:.2} < 58");
    assert!(ce_mean <= 56.0, "CE-only mean OOD {ce_mean:.2} > 56");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(180), "took {elapsed:?}");
    println!(
        "ACCEPTANCE 5 synthetic domain generalization: PASS (CE {ce_mean:.2}%, CE+SCL {scl_mean:.2}%, gap {gap:+.2} pp, {elapsed:?})"
    );
}

#[test]
fn acceptance_06_training_determinism() {
    let dataset = generate(&SynthConfig {
        counts: attrib_core::data::SplitCounts {
            train_n: 60,
            val_n: 15,
            test_n: 15,
        },
        dim: 16,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let pools = select_domains(&dataset, &DomainSetting::new([0, 1], [2])).unwrap();
    let encoder = EncoderConfig::external(16);
    let config = TrainConfig {
        epochs: 4,
        batch_size: 16,
        seed: 12345,
        adam: AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
        proj_dim: 8,
        ..TrainConfig::default()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = train(&pools, &encoder, &config, 3, Some(dir_a.path())).unwrap();
    let b = train(&pools, &encoder, &config, 3, Some(dir_b.path())).unwrap();
    for (ra, rb) in a.history.records.iter().zip(&b.history.records) {
        assert_eq!(ra.mean_loss.to_bits(), rb.mean_loss.to_bits());
        assert_eq!(ra.mean_ce.to_bits(), rb.mean_ce.to_bits());
        assert_eq!(ra.mean_scl.to_bits(), rb.mean_scl.to_bits());
    }
    // Final checkpoints identical on disk, byte for byte.
    let file_a = std::fs::read(dir_a.path().join("epoch_4.json")).unwrap();
    let file_b = std::fs::read(dir_b.path().join("epoch_4.json")).unwrap();
    assert_eq!(file_a, file_b);
    println!("ACCEPTANCE 6 training determinism: PASS (bitwise-identical losses and checkpoints)");
}

#[test]
fn acceptance_07_protocol_shape() {
    // Default `eval` on the bundled synthetic data, via the CLI binary.
    let out = tempfile::tempdir().unwrap();
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_attrib"))
        .args([
            "eval",
            "--out",
            out.path().to_str().unwrap(),
            // Keep the default protocol but shrink the data so the suite
            // stays fast; the report structure is what is under test.
            "--synth.train_n",
            "120",
            "--synth.val_n",
            "40",
            "--synth.test_n",
            "40",
        ])
        .output()
        .expect("eval run");
    assert!(status.status.success(), "eval failed: {status:?}");

    let text = std::fs::read_to_string(out.path().join("reports.json")).unwrap();
    let file: serde_json::Value = serde_json::from_str(&text).unwrap();
    let reports = file["reports"].as_array().unwrap();
    // 7 blocks per mode: 6 transfers + the upper bound.
    for mode in ["full", "probing"] {
        let of_mode: Vec<_> = reports
            .iter()
            .filter(|r| r["mode"] == mode)
            .collect();
        assert_eq!(of_mode.len(), 7, "expected 7 {mode} reports");
        let upper: Vec<_> = of_mode
            .iter()
            .filter(|r| r["setting"]["targets"].as_array().unwrap().is_empty())
            .collect();
        assert_eq!(upper.len(), 1);
        for r in &of_mode {
            // Three-row structure: accuracy plus act_diff plus imp.
            assert!(!r["act_diff"].is_null(), "missing act_diff row");
            assert!(!r["imp"].is_null(), "missing imp row");
            let per_target = r["accuracy"]["per_target"].as_object().unwrap();
            let ood = &r["accuracy"]["ood_avg"];
            if per_target.is_empty() {
                assert!(ood.is_null());
            } else {
                let mean: f64 = per_target.values().map(|v| v.as_f64().unwrap()).sum::<f64>()
                    / per_target.len() as f64;
                assert!((ood.as_f64().unwrap() - mean).abs() < 1e-9);
            }
        }
    }
    // The text rendering shows the three-row blocks.
    let table = std::fs::read_to_string(out.path().join("reports.txt")).unwrap();
    assert_eq!(table.matches("act_diff").count(), 14);
    assert_eq!(table.matches("imp%").count(), 14);
    println!("ACCEPTANCE 7 protocol shape: PASS (7 blocks per mode, consistent OOD averages)");
}

#[test]
fn acceptance_08_tsne_properties() {
    // Two separated Gaussian clusters.
    let mut rng = SplitMix64::new(77);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        let center = if c == 0 { -4.0 } else { 4.0 };
        for _ in 0..50 {
            rows.push((0..5).map(|_| center + rng.next_gaussian() * 0.5).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    let x = Mat::from_rows(&rows);

    // Affinity rows hit the perplexity target in log space.
    let mut distances = Mat::zeros(100, 100);
    for i in 0..100 {
        for j in 0..100 {
            let d: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            distances.set(i, j, d);
        }
    }
    let perplexity = 20.0;
    let (conditional, entropies) = conditional_affinities(&distances, perplexity);
    for (i, h) in entropies.iter().enumerate() {
        assert!(
            (h - perplexity.ln()).abs() < 1e-4,
            "row {i} entropy {h} vs target {}",
            perplexity.ln()
        );
    }
    let p = joint_affinities(&conditional);
    let sum: f64 = p.data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-9);

    // KL divergence non-increasing over post-exaggeration 50-iteration
    // windows; stable-regime step size for a 100-point input.
    let config = TsneConfig {
        perplexity,
        seed: 5,
        learning_rate: 50.0,
        ..TsneConfig::default()
    };
    let emb = tsne_embed(&x, &config).unwrap();
    let post: Vec<(usize, f64)> = emb
        .kl_history
        .iter()
        .cloned()
        .filter(|(it, _)| *it >= 250)
        .collect();
    let mut windows = 0;
    for i in 0..post.len() {
        if i + 50 < post.len() {
            let (_, a) = post[i];
            let (_, b) = post[i + 50];
            assert!(b <= a + 1e-6, "KL rose over a 50-iteration window: {a} -> {b}");
            windows += 1;
        }
    }
    assert!(windows > 100);

    // Cluster-label silhouette in the embedding.
    let score = silhouette_2d(&emb.coords, &labels);
    assert!(score > 0.5, "silhouette {score}");
    println!(
        "ACCEPTANCE 8 t-SNE properties: PASS (perplexity matched, {windows} monotone windows, silhouette {score:.3})"
    );
}

#[test]
fn acceptance_09_probe_harness() {
    use attrib_core::probe::{build_icl_prompt, parse_attribution, IclExemplar, ProbeConfig};

    // Prompt snapshot is byte-stable.
    let exemplars = vec![
        IclExemplar {
            text: "alpha".into(),
            model_label: "chatgpt".into(),
        },
        IclExemplar {
            text: "beta".into(),
            model_label: "llama2".into(),
        },
        IclExemplar {
            text: "gamma".into(),
            model_label: "vicuna".into(),
        },
    ];
    let labels: Vec<String> = ["chatgpt", "llama2", "vicuna"].map(String::from).to_vec();
    let a = build_icl_prompt(&exemplars, "mystery", &labels).unwrap();
    let b = build_icl_prompt(&exemplars, "mystery", &labels).unwrap();
    assert_eq!(a, b);
    assert!(a.ends_with("Source:"));
    assert!(!a.contains("Source: unknown"));

    // Parsing contracts.
    let config = ProbeConfig::default();
    assert_eq!(parse_attribution("Definitely Vicuna.", &config), "vicuna");
    assert_eq!(
        parse_attribution("Could be ChatGPT or Llama2", &config),
        "chatgpt"
    );
    assert_eq!(parse_attribution("no idea", &config), "unknown");

    // Retry + confusion bookkeeping against a scripted local stub. The
    // stub lives in the probe module's test support; spin a tiny inline
    // one here instead so the acceptance suite stays self-contained.
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let responses: Vec<(u16, String)> = vec![
        (500, "{\"err\":1}".into()),
        (500, "{\"err\":2}".into()),
        (
            200,
            serde_json::json!({"choices":[{"message":{"content":"llama2"}}]}).to_string(),
        ),
    ];
    let server = std::thread::spawn(move || {
        for (status, body) in responses {
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
            let response = format!(
                "HTTP/1.1 {status} X\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            conn.write_all(response.as_bytes()).unwrap();
        }
    });
    std::env::set_var("ACCEPT_PROBE_TOKEN", "token");
    let config = ProbeConfig {
        endpoint: url,
        token_env: "ACCEPT_PROBE_TOKEN".into(),
        backoff_ms: 5,
        ..ProbeConfig::default()
    };
    let (raw, attempts) =
        attrib_core::probe::query_chat_endpoint(&config, "who?").unwrap();
    assert_eq!(raw, "llama2");
    assert_eq!(attempts, 3, "expected success on the third attempt");
    server.join().unwrap();

    println!("ACCEPTANCE 9 probe harness: PASS (snapshot, retry x3, parsing)");
}
