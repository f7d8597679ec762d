use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use dpaug_core::augment::run_pipeline;
use dpaug_core::config::{ResolvedConfig, RunConfig};
use dpaug_core::corpus::{set_private_access_hook, Origin};
use dpaug_core::fixture::{generate, Fixture, FixtureSpec};
use dpaug_core::model::TrainConfig;
use dpaug_core::rundir::*;
use dpaug_core::source::{FileSource, DEFAULT_TEMPLATE};

fn small_fixture() -> Fixture {
    generate(&FixtureSpec {
        classes: 4,
        private_per_class: 40,
        test_per_class: 10,
        public_per_class: 500,
        public_test: 40,
        ..FixtureSpec::default()
    })
    .unwrap()
}

fn config(data: &Path, out: &Path) -> RunConfig {
    RunConfig {
        teachers: 5,
        queries: 100,
        n_aug: 60,
        model: TrainConfig {
            dim: 1 << 14,
            epochs: 8,
            ..TrainConfig::default()
        },
        paths: dpaug_core::config::Paths {
            private: Some(data.join("private.jsonl")),
            public: Some(data.join("public.jsonl")),
            vocab: Some(data.join("vocab.json")),
            out: out.to_path_buf(),
        },
        ..RunConfig::default()
    }
}

fn resolved(data: &Path, out: &Path) -> ResolvedConfig {
    config(data, out).resolve().unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_fixture().save(&data).unwrap();
    let a = run_all(&resolved(&data, &tmp.path().join("a")), &RunDir::new(tmp.path().join("a"))).unwrap();
    let b = run_all(&resolved(&data, &tmp.path().join("b")), &RunDir::new(tmp.path().join("b"))).unwrap();
    assert_eq!(a.digests, b.digests);
    assert_eq!(a.digests.len(), DIGESTED.len());
    let read = |d: &str| std::fs::read(tmp.path().join(d).join(AUGMENTED)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(a.augmented_records, 60);
}

#[test]
fn stages_match_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_fixture().save(&data).unwrap();
    let whole = run_all(&resolved(&data, &tmp.path().join("whole")), &RunDir::new(tmp.path().join("whole"))).unwrap();

    let cfg = resolved(&data, &tmp.path().join("staged"));
    let run = RunDir::new(tmp.path().join("staged"));
    stage_ingest(&cfg, &run).unwrap();
    stage_partition(&cfg, &run).unwrap();
    stage_train_teachers(&cfg, &run).unwrap();
    stage_distill(&cfg, &run).unwrap();
    stage_tutor(&cfg, &run).unwrap();
    stage_generate(&cfg, &run).unwrap();
    let staged = stage_select(&cfg, &run).unwrap();
    assert_eq!(whole.digests, staged.digests);

    // Spending stages refuse to run twice in one directory.
    assert!(stage_distill(&cfg, &run).is_err());
    assert!(stage_tutor(&cfg, &run).is_err());
}

#[test]
fn account_composes_mechanisms() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_fixture().save(&data).unwrap();
    let run = RunDir::new(tmp.path().join("r"));
    let manifest = run_all(&resolved(&data, run.root()), &run).unwrap();
    let report = account(&run, None).unwrap();
    let budgets = report.mechanism_budgets();
    assert_eq!(budgets.len(), 2);
    let total = dpaug_core::dp::compose_basic(&budgets).unwrap();
    assert_eq!(report.total, total);
    assert_eq!(manifest.total, total);
    // The KD target was ε = 4 over all queries, the tutor ε = 0.4.
    assert!((budgets[0].epsilon - 4.0).abs() < 1e-6);
    assert!((budgets[1].epsilon - 0.4).abs() < 1e-6);
}

#[test]
fn scoring_volume_does_not_change_the_ledger() {
    let f = small_fixture();
    let base = config(Path::new("/unused"), Path::new("/unused"));
    let run = |oversample: usize| {
        let cfg = RunConfig { oversample, ..base.clone() }.resolve().unwrap();
        let mut src = FileSource::new(f.public.clone()).unwrap();
        run_pipeline(&cfg, f.private.clone(), &f.vocab, &mut src, DEFAULT_TEMPLATE).unwrap()
    };
    let few = run(1);
    let many = run(10);
    assert!(many.candidates.len() >= 9 * few.candidates.len());
    assert_eq!(few.ledger, many.ledger);
    assert_eq!(few.budget.total, many.budget.total);
    for out in [&few, &many] {
        assert!(out.dataset.records.iter().all(|r| r.origin() == Origin::Synthetic));
        let mut per_class = vec![0; f.vocab.len()];
        out.dataset.records.iter().for_each(|r| per_class[r.label().index] += 1);
        assert_eq!(per_class, out.quota.counts);
    }
}

#[test]
fn more_queries_cost_more_at_fixed_sigma() {
    let f = small_fixture();
    let eps = |queries: usize| {
        let mut cfg = config(Path::new("/unused"), Path::new("/unused"));
        cfg.queries = queries;
        cfg.kd = dpaug_core::config::MechanismTarget::sigma(6.0);
        let cfg = cfg.resolve().unwrap();
        let mut src = FileSource::new(f.public.clone()).unwrap();
        run_pipeline(&cfg, f.private.clone(), &f.vocab, &mut src, DEFAULT_TEMPLATE)
            .unwrap()
            .budget
            .events[0]
            .budget
            .epsilon
    };
    assert!(eps(200) > eps(100));
}

#[test]
fn later_stages_never_open_the_private_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_fixture().save(&data).unwrap();
    let cfg = resolved(&data, &tmp.path().join("r"));
    let run = RunDir::new(tmp.path().join("r"));

    let opened = Arc::new(AtomicUsize::new(0));
    let stage = Arc::new(Mutex::new(String::new()));
    let (o, s) = (opened.clone(), stage.clone());
    let root = run.root().to_path_buf();
    set_private_access_hook(move |p| {
        // Other tests in this binary share the hook; only count this run.
        if p.starts_with(&root) || p.starts_with(root.parent().unwrap().join("data")) {
            o.fetch_add(1, Ordering::SeqCst);
            eprintln!("private corpus opened during {}", s.lock().unwrap());
        }
    });
    let mut counts = Vec::new();
    let mut step = |name: &str, f: &dyn Fn() -> dpaug_core::Result<()>| {
        *stage.lock().unwrap() = name.to_string();
        let before = opened.load(Ordering::SeqCst);
        f().unwrap();
        counts.push((name.to_string(), opened.load(Ordering::SeqCst) - before));
    };
    step("ingest", &|| stage_ingest(&cfg, &run).map(drop));
    step("partition", &|| stage_partition(&cfg, &run).map(drop));
    step("train-teachers", &|| stage_train_teachers(&cfg, &run).map(drop));
    step("distill", &|| stage_distill(&cfg, &run).map(drop));
    step("tutor", &|| stage_tutor(&cfg, &run).map(drop));
    step("generate", &|| stage_generate(&cfg, &run).map(drop));
    step("select", &|| stage_select(&cfg, &run).map(drop));
    step("account", &|| account(&run, None).map(drop));
    let get = |n: &str| counts.iter().find(|(k, _)| k == n).unwrap().1;
    for quiet in ["distill", "generate", "select", "account"] {
        assert_eq!(get(quiet), 0, "{quiet} opened the private corpus");
    }
    for reader in ["ingest", "train-teachers", "tutor"] {
        assert_eq!(get(reader), 1, "{reader}");
    }
}
