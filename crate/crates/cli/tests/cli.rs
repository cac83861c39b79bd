use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 7
scheme = ["price", "rank"]

[train]
epochs = 1

[synth]
n_users = 60
n_items = 300
min_history = 30
max_history = 34
"#;

struct Run {
    _dir: tempfile::TempDir,
    config: PathBuf,
    root: PathBuf,
}

impl Run {
    fn new(config_text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        std::fs::write(&config, config_text).unwrap();
        let root = dir.path().to_owned();
        Run { _dir: dir, config, root }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn steerrank(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_steerrank"))
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(self.out(out))
            .args(args)
            .output()
            .unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert_eq!(code(o), 0, "stderr: {}", stderr(o));
}

fn full_pipeline(run: &Run, out: &str, extra: &[&str]) {
    for stage in ["prepare", "train-retriever", "train-ranker", "eval"] {
        let args: Vec<&str> = extra.iter().copied().chain([stage]).collect();
        assert_ok(&run.steerrank(out, &args));
    }
}

fn read_reports(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["report_learned.json", "report_hard_filter.json", "report_zero_shot.json", "eval_table.tsv", "pair_accuracy.json"]
        .iter()
        .map(|name| (name.to_string(), std::fs::read(dir.join(name)).unwrap()))
        .collect()
}

#[test]
fn invalid_config_exits_2() {
    let run = Run::new("scheme = [\"price\", \"price\"]\n[synth]\n");
    let o = run.steerrank("out", &["prepare"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let run = Run::new("no_such_field = 1\n");
    assert_eq!(code(&run.steerrank("out", &["prepare"])), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_steerrank"))
        .args(["--config", "/nonexistent/run.toml", "prepare"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_upstream_stage_exits_3() {
    let run = Run::new(TINY);
    assert_ok(&run.steerrank("out", &["prepare"]));
    let o = run.steerrank("out", &["eval"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("retriever.json") && stderr(&o).contains("train-retriever"), "{}", stderr(&o));

    assert_ok(&run.steerrank("out", &["train-retriever"]));
    let o = run.steerrank("out", &["eval"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("checkpoint.json") && stderr(&o).contains("train-ranker"), "{}", stderr(&o));
}

#[test]
fn artifacts_from_another_config_exit_3() {
    let run = Run::new(TINY);
    assert_ok(&run.steerrank("out", &["prepare"]));
    let o = run.steerrank("out", &["--seed", "8", "train-retriever"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = run.steerrank("out", &["--set", "retrieval.alpha=0.2", "train-retriever"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn threshold_sweep_writes_one_report_per_threshold() {
    let run = Run::new(TINY);
    full_pipeline(&run, "out", &[]);
    let o = run.steerrank("out", &["sweep", "threshold", "--method", "hard_filter"]);
    assert_ok(&o);
    let dir = run.out("out").join("sweep_threshold");
    let mut json: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    json.sort();
    assert_eq!(json, ["hard_filter_t1.json", "hard_filter_t2.json"]);
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");

    let o = run.steerrank("out", &["sweep", "threshold", "--method", "nonsense"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn reruns_and_thread_counts_give_identical_reports() {
    let run = Run::new(TINY);
    full_pipeline(&run, "a", &["--threads", "1"]);
    full_pipeline(&run, "b", &["--threads", "1"]);
    full_pipeline(&run, "c", &["--threads", "4"]);
    let a = read_reports(&run.out("a"));
    assert_eq!(a, read_reports(&run.out("b")));
    assert_eq!(a, read_reports(&run.out("c")));
}

#[test]
fn synth_output_feeds_back_as_raw_input() {
    let run = Run::new(TINY);
    let o = run.steerrank("raw", &["synth"]);
    assert_ok(&o);
    let items = run.out("raw").join("synth_items.jsonl");
    let interactions = run.out("raw").join("synth_interactions.jsonl");
    assert!(items.is_file() && interactions.is_file());

    let from_files = format!(
        "scheme = [\"price\", \"rank\"]\n[paths]\nitems = {:?}\ninteractions = {:?}\n",
        items.display().to_string(),
        interactions.display().to_string()
    );
    let replay = Run::new(&from_files);
    let o = replay.steerrank("out", &["prepare"]);
    assert_ok(&o);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["users"], 60);
}
