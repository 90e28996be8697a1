//! End-to-end training, resume, evaluation and export behaviour.

mod common;

use std::fs;
use std::path::Path;

use common::small_corpus;
use prodisc_core::data::{generate_synthetic, write_corpus, Corpus, SynthConfig};
use prodisc_core::evalkit::{dump_features, enhanced_features, evaluate, EvalOptions};
use prodisc_core::model::{read_checkpoint, Checkpoint};
use prodisc_core::trainer::{resume, train, train_in_memory, Ablation, LogRecord, TrainConfig};
use prodisc_core::{Error, FormatError};

fn config(corpus: &Path, out: &Path, ablation: Ablation, epochs: u32) -> TrainConfig {
    TrainConfig {
        k: 3,
        h: 16,
        batch_size: 8,
        epochs,
        seed: 5,
        ablation,
        corpus_dir: Some(corpus.to_path_buf()),
        out_dir: Some(out.to_path_buf()),
        ..TrainConfig::default()
    }
}

fn small_corpus_on_disk(dir: &Path) -> Corpus {
    write_corpus(&small_corpus(1), dir.join("corpus")).unwrap()
}

fn log_records(out: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(out.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn identical_runs_give_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus_on_disk(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    train(&config(&corpus.root, &a, Ablation::Full, 4)).unwrap();
    train(&config(&corpus.root, &b, Ablation::Full, 4)).unwrap();
    assert_eq!(
        fs::read(a.join("checkpoint.pdvh")).unwrap(),
        fs::read(b.join("checkpoint.pdvh")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("train_log.jsonl")).unwrap(),
        fs::read(b.join("train_log.jsonl")).unwrap()
    );
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus_on_disk(tmp.path());
    let straight = tmp.path().join("straight");
    let split = tmp.path().join("split");
    train(&config(&corpus.root, &straight, Ablation::Full, 20)).unwrap();
    train(&config(&corpus.root, &split, Ablation::Full, 10)).unwrap();
    resume(split.join("checkpoint.pdvh"), &config(&corpus.root, &split, Ablation::Full, 20)).unwrap();
    assert_eq!(
        fs::read(straight.join("checkpoint.pdvh")).unwrap(),
        fs::read(split.join("checkpoint.pdvh")).unwrap()
    );
    assert_eq!(
        fs::read(straight.join("train_log.jsonl")).unwrap(),
        fs::read(split.join("train_log.jsonl")).unwrap()
    );
}

#[test]
fn resume_rejects_mismatched_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus_on_disk(tmp.path());
    let out = tmp.path().join("run");
    train(&config(&corpus.root, &out, Ablation::Full, 1)).unwrap();

    let other = generate_synthetic(&SynthConfig {
        d: 8,
        train_bags_per_class: 2,
        test_bags_per_class: 1,
        t_min: 4,
        t_max: 6,
        ..SynthConfig::default()
    })
    .unwrap();
    let other = write_corpus(&other, tmp.path().join("other")).unwrap();
    let err = resume(out.join("checkpoint.pdvh"), &config(&other.root, &out, Ablation::Full, 2)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. } | Error::Config(_)), "{err}");
}

#[test]
fn corrupted_checkpoint_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus_on_disk(tmp.path());
    let out = tmp.path().join("run");
    train(&config(&corpus.root, &out, Ablation::Full, 1)).unwrap();
    let path = out.join("checkpoint.pdvh");
    let clean = fs::read(&path).unwrap();
    assert_eq!(Checkpoint::decode(&clean).unwrap().encode().unwrap(), clean);

    let bad = tmp.path().join("bad.pdvh");
    for pos in [40, clean.len() / 2, clean.len() - 5] {
        let mut bytes = clean.clone();
        bytes[pos] ^= 0x20;
        fs::write(&bad, &bytes).unwrap();
        let err = read_checkpoint(&bad).unwrap_err();
        assert!(
            matches!(err, Error::Format { source: FormatError::Crc { .. }, .. }),
            "byte {pos}: {err}"
        );
    }
    // Header damage can surface as a size or magic error instead, but every
    // single-bit flip anywhere in the file must be rejected.
    for pos in 0..clean.len() {
        for bit in [0x01, 0x80] {
            let mut bytes = clean.clone();
            bytes[pos] ^= bit;
            assert!(Checkpoint::decode(&bytes).is_err(), "flip at byte {pos} went unnoticed");
        }
    }
}

#[test]
fn baseline_logs_no_contrastive_term() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus_on_disk(tmp.path());
    let out = tmp.path().join("run");
    train(&config(&corpus.root, &out, Ablation::Baseline, 3)).unwrap();
    let records = log_records(&out);
    assert!(!records.is_empty());
    for r in records {
        assert_eq!(r["l_pide"].as_f64().unwrap(), 0.0);
        assert_eq!(r["l_total"].as_f64().unwrap(), r["l_mil"].as_f64().unwrap());
    }
}

#[test]
fn loss_decreases_over_training() {
    let corpus = small_corpus(2);
    let cfg = TrainConfig {
        k: 3,
        h: 16,
        batch_size: 8,
        epochs: 30,
        ..TrainConfig::default()
    };
    let outcome = train_in_memory(&cfg, &corpus.train, &corpus.test, None).unwrap();
    let totals: Vec<f64> = outcome.epochs.iter().map(|e| e.l_total).collect();
    let first: f64 = totals[..5].iter().sum::<f64>() / 5.0;
    let last: f64 = totals[totals.len() - 5..].iter().sum::<f64>() / 5.0;
    assert!(last < first, "first {first} last {last}");
}

#[test]
fn null_corpus_is_not_separable() {
    let corpus = generate_synthetic(&SynthConfig {
        d: 16,
        delta: 0.0,
        train_bags_per_class: 40,
        test_bags_per_class: 50,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let frames: usize = corpus.test.iter().map(|b| b.len()).sum();
    assert!(frames >= 5000);
    let cfg = TrainConfig {
        k: 3,
        h: 16,
        epochs: 10,
        ..TrainConfig::default()
    };
    let outcome = train_in_memory(&cfg, &corpus.train, &corpus.test, None).unwrap();
    let auc = outcome.test_auc.unwrap();
    assert!((0.4..=0.6).contains(&auc), "null AUC {auc}");
}

#[test]
fn evaluation_is_deterministic_and_exports_consistent_features() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus_on_disk(tmp.path());
    let out = tmp.path().join("run");
    train(&config(&corpus.root, &out, Ablation::Full, 2)).unwrap();
    let ckpt = out.join("checkpoint.pdvh");
    let test = corpus.load(&corpus.split("test")).unwrap();
    let opts = EvalOptions { use_pil: true, ..EvalOptions::default() };

    let e1 = tmp.path().join("e1");
    let e2 = tmp.path().join("e2");
    let r1 = evaluate(&ckpt, &corpus, &test, 0.1, &opts, Some(&e1)).unwrap();
    evaluate(&ckpt, &corpus, &test, 0.1, &opts, Some(&e2)).unwrap();
    assert_eq!(fs::read(e1.join("report.json")).unwrap(), fs::read(e2.join("report.json")).unwrap());
    let first = &test[0];
    let csv = fs::read_to_string(e1.join("scores").join(format!("{}.csv", first.id))).unwrap();
    assert_eq!(csv.lines().count(), first.len() + 1);
    assert!((0.0..=1.0).contains(&r1.auc));

    let params = read_checkpoint(&ckpt).unwrap().params;
    let mut buf = Vec::new();
    let rows = dump_features(&params, &test, true, &mut buf).unwrap();
    assert_eq!(rows, test.iter().map(|b| b.len()).sum::<usize>());
    let text = String::from_utf8(buf).unwrap();
    let in_memory = enhanced_features(&params, &test, true).unwrap();
    for (line, (bag_i, i)) in text
        .lines()
        .skip(1)
        .zip(test.iter().enumerate().flat_map(|(b, bag)| (0..bag.len()).map(move |i| (b, i))))
    {
        let parsed: Vec<f32> = line.split(',').skip(3).map(|v| v.parse::<f64>().unwrap() as f32).collect();
        assert_eq!(parsed.as_slice(), in_memory[bag_i].row(i));
    }

    let mut base = Vec::new();
    dump_features(&params, &test, false, &mut base).unwrap();
    for (line, (bag_i, i)) in String::from_utf8(base)
        .unwrap()
        .lines()
        .skip(1)
        .zip(test.iter().enumerate().flat_map(|(b, bag)| (0..bag.len()).map(move |i| (b, i))))
    {
        let parsed: Vec<f32> = line.split(',').skip(3).map(|v| v.parse::<f64>().unwrap() as f32).collect();
        assert_eq!(parsed.as_slice(), test[bag_i].features().row(i));
    }
}

#[test]
fn step_records_carry_lambda() {
    let corpus = small_corpus(3);
    let cfg = TrainConfig {
        k: 3,
        h: 16,
        batch_size: 8,
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut trainer = prodisc_core::trainer::Trainer::new(&cfg, &corpus.train).unwrap();
    let mut steps = 0;
    trainer
        .run_epoch(|rec| {
            if let LogRecord::Step { lambda, .. } = rec {
                assert_eq!(*lambda, 5.0);
                steps += 1;
            }
            Ok(())
        })
        .unwrap();
    assert_eq!(steps, corpus.train.len().div_ceil(8));
}
