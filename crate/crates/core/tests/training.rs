use plam::attention::HeadKind;
use plam::harness::checkpoint::Checkpoint;
use plam::harness::config::RunConfig;
use plam::harness::corpus::{prepare, Dataset, Split};
use plam::harness::eval::{evaluate, explain, oracle_scores, report};
use plam::harness::synth::{synth_generate, SynthConfig};
use plam::harness::train::{label_vectors, pretrain_embeddings, train, TrainOutcome};
use plam::metrics::group_split_sfz;
use plam::tensor::Tensor;

fn tiny_config(head: HeadKind) -> RunConfig {
    RunConfig {
        l_r: 20,
        d_e: 8,
        d_c: 8,
        d_t: 8,
        m: vec![3],
        batch_size: 8,
        max_epochs: 6,
        patience: 6,
        emb_epochs: 1,
        head,
        seed: 3,
        ..RunConfig::default()
    }
}

fn tiny_data(zero_shot_fraction: f64) -> Dataset {
    let (docs, catalog) = synth_generate(&SynthConfig {
        n_labels: 10,
        depth: 2,
        branching: 4,
        n_docs: 60,
        doc_len: 30,
        vocab_size: 120,
        zero_shot_fraction,
        seed: 9,
    })
    .unwrap();
    prepare(&docs, catalog, &tiny_config(HeadKind::Pseudo)).unwrap()
}

fn run(cfg: &RunConfig, ds: &Dataset) -> (TrainOutcome, Vec<u8>) {
    let table = pretrain_embeddings(cfg, ds).unwrap();
    let v = label_vectors(cfg, ds, &table).unwrap();
    let mut log = Vec::new();
    let out = train(cfg, ds, Some(&table), v, &mut log).unwrap();
    (out, log)
}

#[test]
fn same_seed_gives_identical_logs_and_checkpoints() {
    let ds = tiny_data(0.0);
    let cfg = tiny_config(HeadKind::Pseudo);
    let (a, log_a) = run(&cfg, &ds);
    let (b, log_b) = run(&cfg, &ds);
    assert_eq!(log_a, log_b);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let header = String::from_utf8(log_a).unwrap();
    assert!(header.lines().next().unwrap().contains("\"patience_unit\":\"epochs\""));
    assert_eq!(header.lines().count(), a.epochs.len() + 1);
}

#[test]
fn zero_patience_stops_after_first_non_improving_epoch() {
    let ds = tiny_data(0.0);
    let cfg = RunConfig {
        patience: 0,
        max_epochs: 30,
        ..tiny_config(HeadKind::Labelwise)
    };
    let (out, _) = run(&cfg, &ds);
    let last = out.epochs.last().unwrap();
    assert!(!last.improved || out.epochs.len() == 30);
    assert!(out.epochs[..out.epochs.len() - 1].iter().all(|e| e.improved));
}

#[test]
fn kept_checkpoint_is_never_worse_than_an_earlier_epoch() {
    let ds = tiny_data(0.0);
    for head in [HeadKind::Pseudo, HeadKind::Labelwise] {
        let (out, _) = run(&tiny_config(head), &ds);
        let best = out
            .epochs
            .iter()
            .map(|e| e.valid_micro_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.checkpoint.best_metric, best);
        let first_best = out.epochs.iter().find(|e| e.valid_micro_f1 == best).unwrap();
        assert_eq!(out.checkpoint.epoch, first_best.epoch as u64);
        let again = evaluate(&out.checkpoint.model, &ds, Split::Valid, 0.5).unwrap();
        assert_eq!(again.micro_f1, best);
    }
}

#[test]
fn checkpoint_round_trip_preserves_metrics() {
    let ds = tiny_data(0.2);
    let (out, _) = run(&tiny_config(HeadKind::Pseudo), &ds);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let before = evaluate(&out.checkpoint.model, &ds, Split::Test, 0.5).unwrap();
    let after = evaluate(&loaded.model, &ds, Split::Test, 0.5).unwrap();
    assert_eq!(before, after);
    assert_eq!(
        serde_json::to_string(&before).unwrap(),
        serde_json::to_string(&after).unwrap()
    );
}

#[test]
fn oracle_scores_give_perfect_micro_f1() {
    let ds = tiny_data(0.2);
    let docs = ds.split(Split::Test);
    let rep = report(&ds, Split::Test, &oracle_scores(docs, ds.catalog.len()), 0.5).unwrap();
    assert_eq!(rep.micro_f1, 1.0);
    assert_eq!(rep.aupr, Some(1.0));
    assert_eq!(rep.recall_at_k["5"], Some(1.0));
}

#[test]
fn zero_shot_labels_form_group_z_only_when_requested() {
    let without = tiny_data(0.0);
    let g = group_split_sfz(&without.catalog.train_counts(), &without.test_label_mask());
    assert!(g.z.is_empty());
    let with = tiny_data(0.2);
    let g = group_split_sfz(&with.catalog.train_counts(), &with.test_label_mask());
    assert!(!g.z.is_empty());
    for &l in &g.z {
        assert!(with.train.iter().all(|d| !d.labels.contains(&l)));
    }
}

#[test]
fn explanations_are_distributions_over_real_positions() {
    let ds = tiny_data(0.0);
    let (out, _) = run(&tiny_config(HeadKind::Pseudo), &ds);
    let ids: Vec<String> = ds.test.iter().take(3).map(|d| d.id.clone()).collect();
    let records = explain(&out.checkpoint.model, &ds, &ids, None, 0.5, 4).unwrap();
    assert!(!records.is_empty());
    for r in &records {
        let doc = ds.test.iter().find(|d| d.id == r.doc).unwrap();
        assert!((r.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (p, w) in r.gamma.iter().enumerate() {
            if !doc.mask[p] {
                assert_eq!(*w, 0.0);
            }
        }
        assert!(r.top_words.len() <= 4);
    }
    let err = explain(&out.checkpoint.model, &ds, &["nope".into()], None, 0.5, 4);
    assert!(err.is_err());
}

#[test]
fn empty_validation_split_is_an_input_error() {
    let mut ds = tiny_data(0.0);
    ds.valid.clear();
    let cfg = tiny_config(HeadKind::Pseudo);
    let v = Tensor::zeros(&[ds.catalog.len(), cfg.d_t]);
    let err = train(&cfg, &ds, None, v, &mut Vec::new()).unwrap_err();
    assert!(matches!(err, plam::Error::Input(_)));
}
