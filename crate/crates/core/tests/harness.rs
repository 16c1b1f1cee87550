//! Pipeline plumbing on a deliberately tiny experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use sha2::{Digest, Sha256};
use spoofkit::harness::{self, ExperimentConfig, Layout, PLAIN};
use spoofkit::Error;

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.output_dir = dir.to_path_buf();
    cfg.corpus.speakers = 4;
    cfg.corpus.phrases = 1;
    cfg.corpus.sessions = 6;
    cfg.corpus.syllables = 2;
    cfg.split.train_speakers = 2;
    cfg.split.enroll_sessions = 2;
    cfg.cqcc_gmm.features.cqt.bins_per_octave = 12;
    cfg.cqcc_gmm.features.cqt.octaves = 5;
    cfg.cqcc_gmm.em.components = 2;
    cfg.cqcc_gmm.em.max_iters = 3;
    cfg.lcnn.epochs = 1;
    cfg.asv.ubm.components = 2;
    cfg.asv.ubm.max_iters = 3;
    cfg.segan.epochs = 1;
    cfg.segan.max_batches_per_epoch = Some(2);
    cfg.segan.channels = vec![2, 2, 4, 4, 4, 8];
    cfg.validate().unwrap();
    cfg
}

fn tree_digest(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let d = Sha256::digest(std::fs::read(&p).unwrap());
                let hex: String = d.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn simulated_corpus_is_reproducible_and_split_in_halves() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = harness::cmd_simulate_corpus(&tiny(a.path())).unwrap();
    let sb = harness::cmd_simulate_corpus(&tiny(b.path())).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(sa.genuine, sa.stolen);
    assert_eq!(sa.genuine + sa.stolen, 4 * 6);
    assert_eq!(sa.replayed, 2 * sa.stolen);
    let da = tree_digest(a.path());
    assert!(!da.is_empty());
    assert_eq!(da, tree_digest(b.path()));

    let lay = Layout::new(&tiny(a.path()));
    let g = harness::read_manifest(lay.manifest("genuine")).unwrap();
    let s = harness::read_manifest(lay.manifest("stolen")).unwrap();
    for r in &g.rows {
        assert!(s.get(&r.utterance_id).is_none());
    }
    // a rerun in place leaves every file unchanged
    harness::cmd_simulate_corpus(&tiny(a.path())).unwrap();
    assert_eq!(tree_digest(a.path()), da);
}

#[test]
fn full_pipeline_on_a_tiny_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let lay = Layout::new(&cfg);
    harness::cmd_simulate_corpus(&cfg).unwrap();

    let missing = harness::cmd_attack(&cfg, true).unwrap_err();
    assert!(matches!(missing, Error::Data(_)));
    assert_eq!(missing.exit_code(), 3);

    // conventional attack reproduces the simulated replay set bit for bit
    let stolen = harness::read_manifest(lay.manifest("stolen")).unwrap().len();
    assert_eq!(harness::cmd_attack(&cfg, false).unwrap(), stolen * cfg.channels.len());
    for ch in &cfg.channels {
        let plain = harness::read_manifest(lay.attack_manifest(PLAIN, &ch.name)).unwrap();
        let replay = harness::read_manifest(lay.replay_manifest(&ch.name)).unwrap();
        assert_eq!(plain.len(), replay.len());
        for r in &plain.rows {
            let q = replay.get(&r.utterance_id).unwrap();
            assert!(std::fs::read(&r.path).unwrap() == std::fs::read(&q.path).unwrap(), "{}", r.utterance_id);
        }
    }

    harness::cmd_train_cm(&cfg).unwrap();
    harness::cmd_train_asv(&cfg).unwrap();
    harness::cmd_train_segan(&cfg).unwrap();
    let n = harness::cmd_attack(&cfg, true).unwrap();
    assert_eq!(n, stolen * cfg.channels.len() * cfg.enhancers.len());
    harness::cmd_score(&cfg).unwrap();
    let report = harness::cmd_evaluate(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2 * 3);
    for r in &report.rows {
        assert_eq!(r.eer.len(), cfg.channels.len());
        assert!((r.eer_average - (r.eer[0] + r.eer[1]) / 2.0).abs() < 1e-12);
        assert!(r.eer.iter().all(|e| (0.0..=1.0).contains(e)));
    }
    assert_eq!(report.ttests.len(), 2 * 2 * 3);
    let text = harness::cmd_report(&cfg).unwrap();
    assert_eq!(text, harness::render(&report));
    let csv = std::fs::read_to_string(lay.report_dir().join("summary.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with(",Average"));

    // every stage is rerun-safe
    let before = tree_digest(dir.path());
    harness::run_all(&cfg).unwrap();
    let after = tree_digest(dir.path());
    assert_eq!(before, after);

    // identical enhanced and plain scores give p = 1; a perfect CM gives EER 0
    let path = lay.cm_scores(harness::CmKind::CqccGmm);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut scores: BTreeMap<String, f64> = text
        .lines()
        .map(|l| {
            let (id, s) = l.split_once('\t').unwrap();
            (id.to_string(), s.parse().unwrap())
        })
        .collect();
    let value = |key: &str| -1.0 - (key.bytes().map(usize::from).sum::<usize>() % 7) as f64;
    for (id, s) in scores.iter_mut() {
        let parts: Vec<&str> = id.split('@').collect();
        *s = match parts.as_slice() {
            [_] => 1.0,
            [b, c] | [b, _, c] => value(&format!("{b}@{c}")),
            _ => unreachable!(),
        };
    }
    let body: String = scores.iter().map(|(id, s)| format!("{id}\t{s:e}\n")).collect();
    std::fs::write(&path, body).unwrap();
    let r = harness::cmd_evaluate(&cfg).unwrap();
    for t in r.ttests.iter().filter(|t| t.cm == "cqcc_gmm") {
        assert_eq!((t.t, t.p), (0.0, 1.0));
    }
    for row in r.rows.iter().filter(|x| x.cm == "cqcc_gmm") {
        assert!(row.eer.iter().all(|e| *e == 0.0));
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_spoofkit"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    let cfg = tiny(&dir.path().join("run"));
    std::fs::write(&good, cfg.to_toml_string().unwrap()).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, format!("typo_key = 1\n{}", cfg.to_toml_string().unwrap())).unwrap();

    assert_eq!(cli(&["train-cm", "-c", bad.to_str().unwrap()]).status.code(), Some(2));
    // no corpus yet
    assert_eq!(cli(&["train-cm", "-c", good.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(cli(&["simulate-corpus", "-c", good.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(cli(&["no-such-verb"]).status.code(), Some(2));
    let out = cli(&["print-config"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), harness::DESK_CONFIG);

    assert_eq!(cli(&["train-cm", "-c", good.to_str().unwrap()]).status.code(), Some(0));
    let lay = Layout::new(&cfg);
    let scores = dir.path().join("scores.tsv");
    let out = cli(&[
        "cm",
        "score",
        "--kind",
        "cqcc-gmm",
        "--model",
        lay.cm_model(harness::CmKind::CqccGmm).to_str().unwrap(),
        "--manifest",
        lay.manifest("genuine").to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&scores).unwrap();
    let g = harness::read_manifest(lay.manifest("genuine")).unwrap();
    assert_eq!(text.lines().count(), g.len());
    assert!(text.lines().all(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap().is_finite()));
}
