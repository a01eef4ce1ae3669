use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(name)
}

fn tnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Scratch {
    dir: TempDir,
}

impl Scratch {
    fn new() -> Scratch {
        Scratch {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn file(&self, name: &str, text: &str) -> String {
        let p = self.dir.path().join(name);
        fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    }
}

const JOIN_INPUT: &str = "R(a, b). T(b, c). R(d, b).\n";

#[test]
fn run_prints_trace_and_output() {
    let s = Scratch::new();
    let input = s.file("in.facts", JOIN_INPUT);
    let cfg = s.file("c.toml", "nodes = 3\ncomm = \"broadcast\"\n");
    let spec = corpus("broadcast-join.spec");
    let o = tnet(&["run", spec.to_str().unwrap(), "--input", &input, "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("quiescence t="), "{text}");
    assert!(text.ends_with("out(*): {Q(a, b, c), Q(d, b, c)}\n"), "{text}");
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let s = Scratch::new();
    let input = s.file("in.facts", JOIN_INPUT);
    let cfg = s.file(
        "c.toml",
        "nodes = 3\nsemantics = \"rsbv(var=2, fifo=false)\"\nseed = 7\n",
    );
    let spec = corpus("broadcast-join.spec");
    let args = ["run", spec.to_str().unwrap(), "--input", &input, "--config", &cfg];
    assert_eq!(tnet(&args).stdout, tnet(&args).stdout);
}

#[test]
fn run_reports_bottom_with_exit_one() {
    let s = Scratch::new();
    let input = s.file("in.facts", "S(a, b).\n");
    let spec = s.file(
        "grow.spec",
        "@db\ndecl S/2.\n@mem\ndecl N/1.\n@out\ndecl O/1.\n\n\
         N_ins(0) <- S(u, v).\nN_ins(w) <- N(v), w = v + 1.\n",
    );
    let o = tnet(&["--max-rounds", "5", "run", &spec, "--input", &input]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).ends_with("out(*): bottom\n"));
}

#[test]
fn analyze_accepts_queries_and_specs() {
    let o = tnet(&["analyze", corpus("closure.dl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "monotone chained hashing coordination-free(rsfd)\n");

    let o = tnet(&[
        "analyze",
        corpus("unchained-filter.spec").to_str().unwrap(),
        "--format",
        "structured",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("monotone=true chained=false"), "{}", stdout(&o));
}

#[test]
fn rewrite_writes_a_parseable_spec() {
    let s = Scratch::new();
    let out = s.dir.path().join("h.spec");
    let o = tnet(&[
        "rewrite",
        corpus("join.dl").to_str().unwrap(),
        "--target",
        "hashing",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let input = s.file("in.facts", JOIN_INPUT);
    let cfg = s.file("c.toml", "nodes = 3\n");
    let o = tnet(&["run", out.to_str().unwrap(), "--input", &input, "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).ends_with("out(*): {Q(a, b, c), Q(d, b, c)}\n"));
}

#[test]
fn rewrite_rejects_unknown_targets() {
    let o = tnet(&["rewrite", corpus("join.dl").to_str().unwrap(), "--target", "gossip"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn consistency_across_communication_modes() {
    let s = Scratch::new();
    let input = s.file("in.facts", "R().\n");
    let spec = corpus("emptiness.spec");
    let a = s.file("a.toml", "nodes = 3\ncomm = \"broadcast\"\n");
    let b = s.file(
        "b.toml",
        "nodes = 3\ncomm = \"broadcast\"\npartition = \"single_node(2)\"\n",
    );
    let o = tnet(&[
        "check-consistency",
        spec.to_str().unwrap(),
        "--input",
        &input,
        "--config",
        &a,
        "--other-config",
        &b,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("consistency verdict=consistent"));
}

#[test]
fn independence_flags_divergent_strategies() {
    let s = Scratch::new();
    let input = s.file("in.facts", "R(a, b). T(a, c). R(d, e). T(d, f).\n");
    let o = tnet(&[
        "check-independence",
        corpus("hashed-join-wrong-keys.spec").to_str().unwrap(),
        "--input",
        &input,
        "--config",
        &s.file("c.toml", "nodes = 3\n"),
        "--dimension",
        "all",
    ]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{text}");
    assert!(text.contains("independence verdict=divergent"));
    assert_eq!(text.matches("witness label=").count(), 2);
}

#[test]
fn coordination_reports_pattern_and_freeness() {
    let s = Scratch::new();
    let input = s.file("in.facts", "R(a, b). T(b, c). R(d, b).\n");
    let cfg = s.file("c.toml", "nodes = 3\ncomm = \"broadcast\"\n");
    let o = tnet(&[
        "coordination",
        corpus("broadcast-join.spec").to_str().unwrap(),
        &input,
        "--config",
        &cfg,
        "--graph",
    ]);
    let text = stdout(&o);
    assert!(text.contains("pattern "), "{text}");
    assert!(text.contains("freeness verdict="), "{text}");
    let free = text.contains("freeness verdict=free");
    assert_eq!(o.status.code(), Some(if free { 0 } else { 1 }));
}

#[test]
fn corpus_entry_passes() {
    let o = tnet(&["--budget", "1", "corpus", "emptiness"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("total passed="));
    assert!(!stdout(&o).contains("result=FAIL"));
}

#[test]
fn usage_and_parse_errors_exit_two() {
    assert_eq!(tnet(&["corpus", "no-such-entry"]).status.code(), Some(2));
    assert_eq!(tnet(&["frobnicate"]).status.code(), Some(2));
    let s = Scratch::new();
    let bad = s.file("bad.facts", "Z(a).\n");
    let o = tnet(&["run", corpus("broadcast-join.spec").to_str().unwrap(), "--input", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("1:1"));
    let broken = s.file("broken.spec", "@db\ndecl R/2\n");
    assert_eq!(tnet(&["analyze", &broken]).status.code(), Some(2));
}

#[test]
fn emptiness_outputs_t_on_empty_input() {
    let s = Scratch::new();
    let empty = s.file("empty.facts", "% no facts\n");
    let cfg = s.file(
        "n3-replicate.cfg",
        "nodes = 3\npartition = \"replicate_all\"\ncomm = \"broadcast\"\n",
    );
    let o = tnet(&[
        "run",
        corpus("emptiness.spec").to_str().unwrap(),
        "--input",
        &empty,
        "--config",
        &cfg,
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).ends_with("out(*): {T()}\n"), "{}", stdout(&o));
}
