use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn igft(args: &[&str], cwd: &Path) -> Output {
    igft_env(args, cwd, &[])
}

fn igft_env(args: &[&str], cwd: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_igft"));
    cmd.args(args).current_dir(cwd);
    for var in ["IGFT_CHAT_ENDPOINT", "IGFT_CHAT_MODEL", "IGFT_API_TOKEN", "IGFT_EMBED_ENDPOINT", "IGFT_EMBED_TOKEN"] {
        cmd.env_remove(var);
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: &str =
    "[data]\nsynthetic_cases = 4\n[grpo]\nepochs = 4\nsteps_per_epoch = 2\n[train]\ncheckpoint_every = 2\n";

#[test]
fn gen_writes_requested_counts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(igft(&["gen", "-n", "350", "--seed", "3", "--out", "a.jsonl"], d));
    ok(igft(&["gen", "-n", "350", "--seed", "3", "--out", "b.jsonl"], d));
    let a = fs::read_to_string(d.join("a.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 350);
    assert_eq!(a, fs::read_to_string(d.join("b.jsonl")).unwrap());
    ok(igft(&["gen", "-n", "0", "--out", "empty.jsonl"], d));
    assert_eq!(fs::read_to_string(d.join("empty.jsonl")).unwrap(), "");
}

#[test]
fn train_writes_run_layout_and_resume_continues_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), SMALL).unwrap();
    ok(igft(&["train", "-c", "small.toml", "--run-dir", "full"], d));
    let full = d.join("full");
    for f in [
        "config.toml",
        "cases.jsonl",
        "metrics.jsonl",
        "timings.jsonl",
        "checkpoints/epoch-0002.json",
        "checkpoints/epoch-0004.json",
    ] {
        assert!(full.join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(full.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 8);
    assert!(!metrics.contains("wall_ms"));
    assert!(fs::read_to_string(full.join("timings.jsonl")).unwrap().contains("wall_ms"));

    ok(igft(&["train", "--resume", "full/checkpoints/epoch-0002.json", "--run-dir", "resumed"], d));
    let resumed = fs::read_to_string(d.join("resumed/metrics.jsonl")).unwrap();
    let tail: Vec<&str> = metrics.lines().skip(4).collect();
    assert_eq!(resumed.lines().collect::<Vec<_>>(), tail);
    assert!(d.join("resumed/resume.json").exists());

    let snapshot = fs::read_to_string(full.join("config.toml")).unwrap();
    fs::write(d.join("snap.toml"), snapshot).unwrap();
    ok(igft(&["train", "-c", "snap.toml", "--run-dir", "again"], d));
    assert_eq!(fs::read_to_string(d.join("again/metrics.jsonl")).unwrap(), metrics);

    let out = igft(&["train", "-c", "small.toml", "--run-dir", "full"], d);
    assert_eq!(out.status.code(), Some(3), "existing run dir is not overwritten");

    ok(igft(&["train", "-c", "small.toml"], d));
    let runs: Vec<_> = fs::read_dir(d.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
}

#[test]
fn eval_reports_mean_and_std_and_oracle_recall() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), SMALL).unwrap();
    let table = ok(igft(&["eval", "-c", "small.toml", "--policy", "oracle", "--out", "oracle"], d));
    assert!(table.contains("mean ± std"));
    let records = fs::read_to_string(d.join("oracle/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 12);
    for line in records.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["recall"], 1.0);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("oracle/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 3);
    assert_eq!(summary["recall"]["mean"], 1.0);
    assert!(d.join("oracle/summary.txt").exists());
}

#[test]
fn trained_checkpoint_beats_uniform_on_episode_ig() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(igft(&["train", "--run-dir", "run"], d));
    ok(igft(&["eval", "--out", "u"], d));
    ok(igft(&["eval", "--checkpoint", "run/checkpoints/epoch-0030.json", "--out", "t"], d));
    let ig = |p: &str| -> f64 {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(p)).unwrap()).unwrap();
        v["episode_ig"]["mean"].as_f64().unwrap()
    };
    assert!(ig("t/summary.json") > ig("u/summary.json"));
}

#[test]
fn simulate_prints_reward_bookkeeping_and_rejects_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = ok(igft(&["simulate", "--case-id", "syn-0-0002", "--policy", "oracle", "--log", "t.jsonl"], d));
    assert!(text.contains("turn 1") && text.contains("reward: weighted IG"));
    for line in fs::read_to_string(d.join("t.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let total = v["weighted_ig"].as_f64().unwrap()
            + v["lambda"].as_f64().unwrap() * v["quality"]["aggregate"].as_f64().unwrap();
        assert!((total - v["reward"].as_f64().unwrap()).abs() < 1e-12);
    }

    let out = igft(&["simulate", "--case-id", "missing"], d);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("missing") && err.contains("syn-0-0000") && err.contains("syn-0-0019"), "{err}");
}

#[test]
fn report_writes_two_plots_and_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), SMALL).unwrap();
    ok(igft(&["train", "-c", "small.toml", "--run-dir", "run"], d));
    let table = ok(igft(&["report", "--metrics", "run/metrics.jsonl"], d));
    assert!(table.contains("first 4 epochs") && table.contains("last 4 epochs"));
    let mut files: Vec<String> =
        fs::read_dir(d.join("run/report")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, vec!["ig_vs_epoch.svg", "reward_vs_epoch.svg", "summary.md"]);
    assert!(fs::read_to_string(d.join("run/report/ig_vs_epoch.svg")).unwrap().starts_with("<svg"));

    fs::write(d.join("empty.jsonl"), "").unwrap();
    let out = igft(&["report", "--metrics", "empty.jsonl"], d);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no data"));
}

#[test]
fn exit_codes_distinguish_config_io_and_remote_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "epochz = 1\n[grpo]\ntau = -1.0\nlr = 2\n").unwrap();
    let out = igft(&["train", "-c", "bad.toml"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("`epochz`") && err.contains("`grpo.lr`"), "{err}");

    fs::write(d.join("invalid.toml"), "[grpo]\ntau = -1.0\n[eval]\nseeds = []\n").unwrap();
    let out = igft(&["eval", "-c", "invalid.toml"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("grpo:") && err.contains("eval.seeds"), "{err}");

    let out = igft(&["eval", "-c", "nope.toml"], d);
    assert_eq!(out.status.code(), Some(3));
    let out = igft(&["simulate", "--case-id", "x", "--cases", "nope.jsonl"], d);
    assert_eq!(out.status.code(), Some(3));

    let out = igft(&["simulate", "--remote", "--case-id", "syn-0-0000"], d);
    assert_eq!(out.status.code(), Some(2), "remote mode without endpoints is a config error");

    let dead = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1", l.local_addr().unwrap())
    };
    fs::write(d.join("remote.toml"), "[remote.chat]\nmax_retries = 0\n[remote.embed]\nmax_retries = 0\n").unwrap();
    let env = [("IGFT_CHAT_ENDPOINT", dead.as_str()), ("IGFT_CHAT_MODEL", "m"), ("IGFT_EMBED_ENDPOINT", dead.as_str())];
    let out = igft_env(&["simulate", "-c", "remote.toml", "--remote", "--case-id", "syn-0-0000"], d, &env);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

/// Chat and embedding endpoints on one port; replies depend on the prompt.
fn mock_remote() -> String {
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(&mut stream);
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut len = 0;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let reply = if path.ends_with("/embed") {
                    let n = req["texts"].as_array().unwrap().len();
                    serde_json::json!({ "vectors": vec![vec![1.0, 0.5]; n] })
                } else {
                    let prompt = req["messages"][0]["content"].as_str().unwrap();
                    let content = if prompt.starts_with("You are grading") {
                        r#"{"information_gathering": 0.6, "specificity": 0.6, "patient_engagement": 0.6, "clinical_relevance": 0.6, "comprehensiveness": 0.6}"#
                    } else if prompt.starts_with("A doctor is interviewing") {
                        r#"{"relevance": 0.5}"#
                    } else if prompt.starts_with("Split the clinical text") {
                        r#"["Patient reports a headache"]"#
                    } else if prompt.starts_with("Write a concise history") {
                        "Patient reports a headache."
                    } else {
                        "It has been bothering me for a while."
                    };
                    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] })
                };
                let body = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    url
}

#[test]
fn remote_mode_runs_against_compatible_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let url = mock_remote();
    let (chat, embed) = (format!("{url}/chat"), format!("{url}/embed"));
    let env =
        [("IGFT_CHAT_ENDPOINT", chat.as_str()), ("IGFT_CHAT_MODEL", "m"), ("IGFT_EMBED_ENDPOINT", embed.as_str())];
    fs::write(d.join("r.toml"), "[eval]\nseeds = [0]\n[data]\nsynthetic_cases = 1\n[episode]\nmax_turns = 2\n")
        .unwrap();
    let text = ok(igft_env(&["simulate", "-c", "r.toml", "--remote", "--case-id", "syn-0-0000"], d, &env));
    assert!(text.contains("It has been bothering me"));
    assert!(text.contains("-> 0.6000"));
    ok(igft_env(&["eval", "-c", "r.toml", "--remote", "--out", "ev"], d, &env));
    let rec: serde_json::Value =
        serde_json::from_str(fs::read_to_string(d.join("ev/records.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(rec["hpi"], "Patient reports a headache.");
}
