use std::path::Path;
use std::process::{Command, Output};

use pfe_core::io::write_embeddings;
use pfe_core::GaussianEmbedding;

fn pfe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfe"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PFE_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn one(dir: &Path, name: &str, label: &str, mu: f64, var: f64) {
    let e = GaussianEmbedding::new(vec![mu], vec![var]).unwrap().with_label(label);
    write_embeddings(dir.join(name), &[e]).unwrap();
}

#[test]
fn score_prints_the_worked_pair() {
    let dir = tempfile::tempdir().unwrap();
    one(dir.path(), "a.pfe", "s", 0.0, 1.0);
    one(dir.path(), "b.pfe", "s", 2.0, 1.0);
    let o = pfe(&["score", "--metric", "mls", "a.pfe", "b.pfe"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "-2.265512\n");
}

#[test]
fn fuse_precision_sum_of_two_members() {
    let dir = tempfile::tempdir().unwrap();
    let members = [
        GaussianEmbedding::new(vec![0.0], vec![1.0]).unwrap().with_label("s"),
        GaussianEmbedding::new(vec![2.0], vec![3.0]).unwrap().with_label("s"),
    ];
    write_embeddings(dir.path().join("m.pfe"), &members).unwrap();
    let o = pfe(&["fuse", "--mode", "precision-sum", "m.pfe", "--out", "f.pfe"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "s\t0.500000\t0.750000\n");
    let back = pfe_core::io::read_embeddings(dir.path().join("f.pfe")).unwrap();
    assert_eq!((back[0].mu()[0], back[0].sigma_sq()[0]), (0.5, 0.75));
}

#[test]
fn usage_errors_exit_one_and_data_errors_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = pfe(&[], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(pfe(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(pfe(&["score", "--bogus", "a", "b"], dir.path()).status.code(), Some(1));

    std::fs::write(dir.path().join("bad.pfe"), b"nope").unwrap();
    let o = pfe(&["score", "bad.pfe", "bad.pfe"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte 0"));
    assert_eq!(pfe(&["score", "missing.pfe", "missing.pfe"], dir.path()).status.code(), Some(2));
}

#[test]
fn seeded_pipeline_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "subjects_per_batch = 6\nimages_per_subject = 3\nidentities = 12\n").unwrap();
    let small = ["--config", "run.cfg", "--samples-per-identity", "6", "--dim", "4", "--seed", "3"];
    let run = |tag: &str| {
        let head = format!("h{tag}.pfeh");
        let log = format!("l{tag}.csv");
        let corpus = format!("c{tag}.pfe");
        let mut args = vec!["train-head", "--steps", "30", "--out", &head, "--log", &log];
        args.extend(small);
        let t = pfe(&args, dir.path());
        assert_eq!(t.status.code(), Some(0), "{}", String::from_utf8_lossy(&t.stderr));

        let mut args = vec!["synth", "--out", &corpus, "--head", &head, "--mixed"];
        args.extend(small);
        assert_eq!(pfe(&args, dir.path()).status.code(), Some(0));

        let mut args = vec!["sweep", "--scorer", "mls", "--head", &head, "--levels", "1,0.5,0"];
        args.extend(small);
        let sweep = pfe(&args, dir.path());
        assert_eq!(sweep.status.code(), Some(0), "{}", String::from_utf8_lossy(&sweep.stderr));

        let verify = pfe(&["eval-verify", &corpus, "--far", "0.01,0.1", "--csv"], dir.path());
        let filter = pfe(&["filter-curve", &corpus, "--far", "0.1"], dir.path());
        let ident = pfe(&["eval-identify", "--gallery", &corpus, "--probes", &corpus, "--csv"], dir.path());
        for o in [&verify, &filter, &ident] {
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        }
        let bytes = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
        (
            bytes(&head),
            bytes(&log),
            bytes(&corpus),
            [stdout(&t), stdout(&sweep), stdout(&verify), stdout(&filter), stdout(&ident)],
        )
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    // the head path is part of the train-head report
    assert_eq!(a.3[1..], b.3[1..]);
    assert!(a.3[1].starts_with("level,scorer,genuine_mean"));
    assert!(a.3[3].starts_with("filter_out_rate,tar\n0,"));
    assert!(a.3[4].contains("rank,1,1.000000"));
}

#[test]
fn sweep_with_mls_needs_a_head() {
    let dir = tempfile::tempdir().unwrap();
    let o = pfe(&["sweep", "--scorer", "mls", "--identities", "5", "--samples-per-identity", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
