use std::fs;
use std::path::Path;

use overture::corpus::{ChunkSet, Provenance, VocabId};
use overture::exp::runner::{DirLock, DONE, LOCK, METRICS, SNAPSHOT};
use overture::exp::{collect_rows, Condition, Manifest, PhaseSpec, Registry, Runner};
use overture::model::Checkpoint;
use overture::nn::Rng;
use overture::par::Execution;
use overture::synth::{gen_corpus, GenConfig};
use overture::train::{StopRule, TrainConfig};
use overture::{Error, CHUNK_LEN};

fn words(n: usize, v: usize, seed: u64) -> ChunkSet {
    let mut rng = Rng::new(seed, "words");
    let data = (0..n * CHUNK_LEN).map(|_| rng.below(v as u64) as u32).collect();
    ChunkSet::from_rows(data, VocabId::WordLevel, v, Provenance { source: "test".into(), seed }).unwrap()
}

fn registry(dir: &Path) -> Registry {
    let reg = Registry::new(dir.join("data"));
    fs::create_dir_all(&reg.root).unwrap();
    let music = gen_corpus(&Rng::new(1, "m"), &GenConfig::default(), 6, Execution::Sequential).unwrap();
    reg.put_whole("synth-tiny", &music).unwrap();
    reg.put("prose", &words(3, 64, 2), &words(1, 64, 3)).unwrap();
    reg.put("poetry", &words(2, 64, 4), &words(1, 64, 5)).unwrap();
    reg
}

fn manifest() -> Manifest {
    let fixed = |e| StopRule::FixedEpochs { epochs: e };
    Manifest {
        name: "tiny".into(),
        train: TrainConfig {
            micro_batch: 2,
            accum: 1,
            warmup_steps: 2,
            ..TrainConfig::default()
        },
        val_fraction: 0.34,
        conditions: vec![
            Condition {
                name: "pipe".into(),
                label: "pipeline".into(),
                d_model: 16,
                phases: vec![
                    PhaseSpec::music("synth-tiny", StopRule::EarlyStop { patience: 1, max_epochs: 2 }),
                    PhaseSpec::language("poetry", "poetry", fixed(1)),
                    PhaseSpec::language("prose", "prose", fixed(2)),
                ],
                seeds: vec![7, 8],
            },
            Condition {
                name: "rand".into(),
                label: "random".into(),
                d_model: 16,
                phases: vec![PhaseSpec::language("prose", "prose", fixed(2))],
                seeds: vec![7],
            },
        ],
    }
}

#[test]
fn pipeline_runs_resumes_and_records_lineage() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest();
    let runner = Runner::new(tmp.path().join("out"), registry(tmp.path()), &m);
    let pipe = m.condition("pipe").unwrap();
    let first = runner.run_all(pipe).unwrap();
    assert_eq!(first.len(), 2);
    assert_eq!(first[0].phases.len(), 3);
    assert_eq!(first[0].phases[2].epochs, 2);

    // the music phase is trained once for both seeds
    let shared = tmp.path().join("out/shared");
    assert_eq!(fs::read_dir(&shared).unwrap().count(), 1);
    assert_eq!(first[0].phases[0], first[1].phases[0]);
    assert_eq!(first[0].phases[0].output, "best");
    assert_ne!(first[0].phases[2].output_sha256, first[1].phases[2].output_sha256);

    let dir = runner.run_dir("pipe", 7);
    for f in [DONE, SNAPSHOT, METRICS, "summary.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert!(!dir.join(LOCK).exists());

    // prose checkpoint: music -> transfer -> poetry -> prose
    let ck = Checkpoint::load(&dir.join("2-prose/ckpt/final.ckpt")).unwrap();
    let phases: Vec<&str> = ck.meta.lineage.iter().map(|l| l.phase.as_str()).collect();
    assert_eq!(phases, ["music", "transfer", "poetry"]);
    assert_eq!(ck.meta.lineage[0].sha256, first[0].phases[0].output_sha256);
    assert_eq!(ck.meta.lineage[2].sha256, first[0].phases[1].output_sha256);

    // a finished run is not retrained
    let stamp = fs::metadata(dir.join("2-prose/ckpt/final.ckpt")).unwrap().modified().unwrap();
    let again = runner.run_all(pipe).unwrap();
    assert_eq!(again, first);
    assert_eq!(fs::metadata(dir.join("2-prose/ckpt/final.ckpt")).unwrap().modified().unwrap(), stamp);

    // an interrupted run restarts only its unfinished phase
    fs::remove_file(dir.join(DONE)).unwrap();
    fs::remove_file(dir.join("2-prose").join(DONE)).unwrap();
    fs::write(dir.join("2-prose").join(METRICS), "garbage\n").unwrap();
    let resumed = runner.run(pipe, 7).unwrap();
    assert_eq!(resumed, first[0]);
    assert!(!fs::read(dir.join(METRICS)).unwrap().is_empty());

    // a different mode gives the same numbers
    let seq = Runner::new(tmp.path().join("seq"), registry(tmp.path()), &m).with_exec(Execution::Sequential);
    let s = seq.run(pipe, 7).unwrap();
    assert_eq!(s.phases[2].output_sha256, first[0].phases[2].output_sha256);

    runner.run_all(m.condition("rand").unwrap()).unwrap();
    let rows = collect_rows(&tmp.path().join("out")).unwrap();
    // two prose epochs + one poetry epoch per pipe seed, two for rand; no music rows
    assert_eq!(rows.len(), 2 * 3 + 2);
    assert!(rows.iter().all(|r| r.phase != "music"));
    assert_eq!(rows[0].condition, "pipe");
}

#[test]
fn config_change_and_locks_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest();
    let reg = registry(tmp.path());
    let runner = Runner::new(tmp.path().join("out"), reg.clone(), &m);
    let rand = m.condition("rand").unwrap();

    let dir = runner.run_dir("rand", 7);
    let lock = DirLock::acquire(&dir).unwrap();
    assert!(matches!(runner.run(rand, 7), Err(Error::Locked(_))));
    assert!(matches!(DirLock::acquire(&dir), Err(Error::Locked(_))));
    drop(lock);

    // a lock left by a process that no longer exists is taken over
    std::fs::write(dir.join(LOCK), "4194304999").unwrap();
    drop(DirLock::acquire(&dir).unwrap());

    runner.run(rand, 7).unwrap();
    fs::remove_file(dir.join(DONE)).unwrap();
    let mut other = m.clone();
    other.train.peak_lr = 5e-4;
    let changed = Runner::new(tmp.path().join("out"), reg, &other);
    assert!(matches!(changed.run(rand, 7), Err(Error::Config(_))));
}

#[test]
fn missing_data_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest();
    let reg = Registry::new(tmp.path().join("empty"));
    let runner = Runner::new(tmp.path().join("out"), reg.clone(), &m);
    match runner.run(m.condition("rand").unwrap(), 7) {
        Err(Error::MissingArtifact(p)) => assert!(p.ends_with("prose.train.chunks")),
        other => panic!("{other:?}"),
    }
    // the failed attempt leaves no lock behind
    assert!(!runner.run_dir("rand", 7).join(LOCK).exists());
    assert!(matches!(collect_rows(&tmp.path().join("nowhere")), Err(Error::MissingArtifact(_))));
}
