use std::path::Path;

use capvae::oracle::{DiscreteWorld, Encoder};
use capvae::probe::write_pairs;
use capvae::synth::{ToyGrammar, AGREEMENT_SUBCATEGORIES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("capvae").chain(args.iter().copied());
    let code = capvae_cli::run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn last_line(s: &str) -> &str {
    s.lines().last().unwrap_or("")
}

fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// Small corpus, pairs file and a config for a model that trains in a second.
fn fixture(dir: &Path) {
    let g = ToyGrammar::new(12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    write_lines(&dir.join("train.txt"), &g.sentences(200, &mut rng));
    write_lines(&dir.join("dev.txt"), &g.sentences(30, &mut rng));
    write_lines(&dir.join("test.txt"), &g.sentences(30, &mut rng));
    let pairs: Vec<_> = AGREEMENT_SUBCATEGORIES
        .iter()
        .flat_map(|s| {
            [
                g.minimal_pair(s, &mut rng).unwrap(),
                g.minimal_pair(s, &mut rng).unwrap(),
            ]
        })
        .collect();
    write_pairs(dir.join("pairs.tsv"), &pairs).unwrap();
    std::fs::write(
        dir.join("tiny.cfg"),
        "# tiny model for tests\n[data]\ntrain = train.txt\ndev = dev.txt\ntest = test.txt\npairs = pairs.tsv\nmax_tokens = 12\n\
         [train]\nemb_dim = 8\nhidden = 12\nlatent_dim = 3\nepochs = 2\nc_target = 2\n[fce]\nsynthetic_size = 40\nrepeats = 2\n[output]\ndir = out\n",
    )
    .unwrap();
}

#[test]
fn pipeline_end_to_end_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture(dir);
    let cfg = dir.join("tiny.cfg");
    let cfg = cfg.to_str().unwrap();
    let out = dir.join("out");

    let r = run(&["train", "--config", cfg, "--seed", "11"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("epoch   2"));
    let ckpt_bytes = std::fs::read(out.join("model.ckpt")).unwrap();
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# schema: trace v1\n"));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11 (given)"));
    assert!(manifest.contains("created_unix = "));

    let again = dir.join("again");
    let r = run(&[
        "train",
        "--config",
        cfg,
        "--seed",
        "11",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(std::fs::read(again.join("model.ckpt")).unwrap(), ckpt_bytes);
    assert_eq!(std::fs::read_to_string(again.join("trace.csv")).unwrap(), trace);

    let ckpt = out.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    for args in [
        vec!["reconstruct", "--checkpoint", ckpt],
        vec![
            "generate",
            "--checkpoint",
            ckpt,
            "--n",
            "7",
            "--policy",
            "nucleus:0.9",
        ],
        vec!["metrics", "--checkpoint", ckpt],
        vec!["probe", "--checkpoint", ckpt],
        vec![
            "homotopy",
            "--checkpoint",
            ckpt,
            "--from",
            "the dog runs",
            "--to",
            "a cat sleeps",
        ],
        vec!["fce", "--checkpoint", ckpt, "--epochs", "1"],
    ] {
        let mut full = args.clone();
        full.extend(["--config", cfg, "--seed", "5"]);
        let first = run(&full);
        assert_eq!(first.code, 0, "{args:?}: {}", first.stderr);
        let report = first
            .stdout
            .lines()
            .filter_map(|l| l.strip_prefix("wrote "))
            .next()
            .unwrap()
            .to_string();
        let bytes = std::fs::read(&report).unwrap();
        let second = run(&full);
        assert_eq!(second.code, 0);
        assert_eq!(
            std::fs::read(&report).unwrap(),
            bytes,
            "{args:?} not reproducible"
        );
    }
    let generated = std::fs::read_to_string(out.join("generated.txt")).unwrap();
    assert_eq!(generated.lines().count(), 7);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# schema: metrics v1\ncorpus,C,D,R,"));
    let probe = std::fs::read_to_string(out.join("probe.csv")).unwrap();
    assert_eq!(probe.lines().count(), 2 + AGREEMENT_SUBCATEGORIES.len());
    let homotopy = std::fs::read_to_string(out.join("homotopy.txt")).unwrap();
    assert_eq!(homotopy.lines().count(), 7);
}

#[test]
fn oracle_on_two_gaussians() {
    let tmp = tempfile::tempdir().unwrap();
    let world = DiscreteWorld::uniform(vec![
        Encoder {
            mu: vec![3.0],
            var: vec![1.0],
        },
        Encoder {
            mu: vec![-3.0],
            var: vec![1.0],
        },
    ])
    .unwrap();
    let path = tmp.path().join("two_gaussians.world");
    world.write(&path).unwrap();
    let out = tmp.path().join("o");
    let r = run(&[
        "oracle",
        "--world",
        path.to_str().unwrap(),
        "--samples",
        "20000",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("H=0.693147"));
    let csv = std::fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(csv.starts_with("# schema: bounds v1\n"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["train", "--epochs", "many"],
        vec!["train", "--config", cfg.to_str().unwrap(), "--out", out],
        vec!["metrics", "--out", out, "--seed", "1"],
        vec!["generate", "--out", out, "--policy", "nucleus:1.5"],
    ] {
        let r = run(&args);
        assert_eq!(r.code, 2, "{args:?}: {}", r.stderr);
        let line = last_line(&r.stderr);
        assert!(line.starts_with("error: kind=usage msg="), "{args:?}: {line}");
    }
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let missing = tmp.path().join("missing.ckpt");
    let r = run(&[
        "metrics",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(last_line(&r.stderr).starts_with("error: kind=io msg=loading"));

    let world = tmp.path().join("w.world");
    std::fs::write(&world, "world v1\ndim 1\ninput 0.3 mu 0 var 1\n").unwrap();
    let r = run(&[
        "oracle",
        "--world",
        world.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 1);
    assert!(last_line(&r.stderr).starts_with("error: kind=invalid_argument"));
    assert_eq!(r.stderr.lines().count(), 1);
}

#[test]
fn help_lists_every_subcommand() {
    let r = run(&["--help"]);
    assert_eq!(r.code, 0);
    for cmd in [
        "train",
        "reconstruct",
        "generate",
        "metrics",
        "fce",
        "probe",
        "homotopy",
        "oracle",
    ] {
        assert!(r.stdout.contains(cmd), "{cmd}");
    }
    let r = run(&["train", "--help"]);
    assert!(r.stdout.contains("--seed") && r.stdout.contains("--config"));
}
