use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use rlforge::agents::{make_agent, save_agent, AgentConfig, DqnConfig};
use rlforge::envs::make_env;
use rlforge::experiments::{preset, ALGORITHMS};
use serde_json::Value;

fn rlforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlforge"))
        .args(args)
        .env("RLFORGE_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A one-unit gridworld DQN whose greedy policy walks right along the top
/// row and then down to the goal: eight steps, return 1.
fn save_fixture_agent(dir: &Path) {
    let env = make_env("gridworld5").unwrap();
    let cfg = AgentConfig::Dqn(DqnConfig {
        hidden: vec![1],
        eval_epsilon: 0.0,
        ..DqnConfig::default()
    });
    let mut agent = make_agent(&cfg, env.spec(), 0).unwrap();
    let mut state = agent.state(false);
    for (_, net) in &mut state.networks {
        let names = net.names().to_vec();
        for (name, t) in names.iter().zip(net.tensors_mut()) {
            let values: &[f64] = match name.as_str() {
                // h = act(10 x - 35) is negative or zero left of the last column.
                "l0.w" => &[10.0, 0.0],
                "l0.b" => &[-35.0],
                // Q = (-10, h - 0.5, -10, 0) over (up, down, left, right).
                "l1.w" => &[0.0, 1.0, 0.0, 0.0],
                "l1.b" => &[-10.0, -0.5, -10.0, 0.0],
                other => panic!("unexpected parameter {other}"),
            };
            t.data_mut().copy_from_slice(values);
        }
    }
    agent.load_state(state).unwrap();
    save_agent(agent.as_ref(), dir, false).unwrap();
}

#[test]
fn train_preset_writes_scores_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = rlforge(&["train", "--preset", "dqn-gridworld", "--seed", "0", "--steps", "2000", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("best eval"), "{}", stdout(&o));
    let scores = std::fs::read_to_string(out.join("scores.txt")).unwrap();
    assert_eq!(scores.lines().count(), 3, "{scores}");
    assert!(out.join("run.json").exists());
    let checkpoints: Vec<_> = std::fs::read_dir(out.join("checkpoints")).unwrap().collect();
    assert!(!checkpoints.is_empty());
}

#[test]
fn train_from_run_json_reproduces_the_score_log() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = rlforge(&["train", "--preset", "dqn-gridworld", "--seed", "4", "--steps", "2000", "--out", path(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rlforge(&["train", "--config", path(&a.join("run.json")), "--out", path(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |d: &Path| std::fs::read(d.join("scores.txt")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn algo_and_env_resolve_to_the_registered_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rainbow");
    let o = rlforge(&["train", "--algo", "rainbow", "--env", "cartpole", "--steps", "300", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("no evaluation phase ran"));
    let run: Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    let agent = &run["config"]["agent"];
    let expected = serde_json::to_value(preset("rainbow-cartpole").unwrap().agent).unwrap();
    assert_eq!(agent, &expected);
    assert_eq!(agent["noisy"], true);
    assert_eq!(agent["dueling"], true);
    assert_eq!(agent["n_step"], 3);
    assert_eq!(agent["distribution"]["kind"], "categorical");
    assert!(agent["prioritized"].is_object());
    assert_eq!(run["config"]["steps"], 300);
}

#[test]
fn unknown_names_are_usage_errors() {
    let o = rlforge(&["train", "--algo", "foo", "--env", "cartpole"]);
    assert_eq!(o.status.code(), Some(2));
    for algo in ALGORITHMS {
        assert!(stderr(&o).contains(algo), "{}", stderr(&o));
    }
    let o = rlforge(&["train", "--algo", "dqn", "--env", "mountaincar"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gridworld5"));
    let o = rlforge(&["train", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dqn-cartpole"));
    let o = rlforge(&["train", "--algo", "dqn"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rlforge(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rlforge(&["fly"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_prints_the_fixture_return() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("fixture");
    save_fixture_agent(&ckpt);
    let o = rlforge(&["eval", "--checkpoint", path(&ckpt), "--episodes", "3", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "mean 1 std 0 over 3 episodes");
    let o = rlforge(&["eval", "--checkpoint", path(&ckpt), "--env", "gridworld5", "--episodes", "1"]);
    assert_eq!(stdout(&o).trim(), "mean 1 std 0 over 1 episodes");
}

#[test]
fn eval_is_deterministic_given_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = rlforge(&["train", "--preset", "dqn-cartpole", "--steps", "1000", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("checkpoints").join("step_1000");
    let args = ["eval", "--checkpoint", path(&ckpt), "--episodes", "5", "--seed", "3"];
    let (a, b) = (rlforge(&args), rlforge(&args));
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).starts_with("mean "));
}

#[test]
fn eval_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rlforge(&["eval", "--checkpoint", path(&tmp.path().join("missing")), "--episodes", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("manifest.json"), "{}", stderr(&o));

    let ckpt = tmp.path().join("fixture");
    save_fixture_agent(&ckpt);
    let o = rlforge(&["eval", "--checkpoint", path(&ckpt), "--episodes", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rlforge(&["eval", "--checkpoint", path(&ckpt), "--env", "cartpole"]);
    assert_eq!(o.status.code(), Some(1));
}

fn http_get(port: u16, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let status = resp.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = resp.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

/// Starts `serve` on a free port and returns the child and its port.
fn spawn_serve(extra: &[&str]) -> (std::process::Child, u16) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_rlforge"))
        .args(["serve", "--port", "0"])
        .args(extra)
        .env("RLFORGE_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let port = line.trim().rsplit(':').next().unwrap().parse().unwrap_or_else(|_| panic!("bad banner {line:?}"));
    (child, port)
}

fn interrupt(child: &mut std::process::Child) -> Option<i32> {
    let st = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(st.success());
    child.wait().unwrap().code()
}

#[test]
fn serve_random_agent_and_stop_on_sigint() {
    let (mut child, port) = spawn_serve(&["--random-agent", "--env", "gridworld5"]);
    let (status, body) = http_get(port, "/api/meta");
    assert_eq!(status, 200);
    let meta: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(meta["env_id"], "gridworld5");
    assert_eq!(meta["agent_kind"], "dqn");
    let (status, body) = http_get(port, "/");
    assert_eq!(status, 200);
    assert!(body.contains("<html"));
    assert_eq!(interrupt(&mut child), Some(0));
}

#[test]
fn serve_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("fixture");
    save_fixture_agent(&ckpt);
    let (mut child, port) = spawn_serve(&["--checkpoint", path(&ckpt)]);
    let (status, body) = http_get(port, "/api/meta");
    assert_eq!(status, 200);
    let meta: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(meta["action_labels"], serde_json::json!(["up", "down", "left", "right"]));
    assert_eq!(interrupt(&mut child), Some(0));

    let (mut child, port) = spawn_serve(&["--random-agent", "--env", "pendulum"]);
    let (_, body) = http_get(port, "/api/meta");
    let meta: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(meta["agent_kind"], "sac");
    assert_eq!(meta["output_kind"], "policy");
    assert_eq!(interrupt(&mut child), Some(0));
}

#[test]
fn serve_errors() {
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = rlforge(&["serve", "--random-agent", "--env", "cartpole", "--port", &port]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = rlforge(&["serve", "--port", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rlforge(&["serve", "--random-agent", "--port", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rlforge(&["serve", "--random-agent", "--env", "cartpole", "--algo", "sac", "--port", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let o = rlforge(&["serve", "--checkpoint", path(tmp.path()), "--port", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn log_level_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |level: &str, dir: &str| {
        Command::new(env!("CARGO_BIN_EXE_rlforge"))
            .args(["train", "--preset", "dqn-gridworld", "--steps", "1000", "--out"])
            .arg(tmp.path().join(dir))
            .env("RLFORGE_LOG", level)
            .output()
            .unwrap()
    };
    let o = run("info", "a");
    assert!(stderr(&o).contains("eval mean"), "{}", stderr(&o));
    let o = run("error", "b");
    assert!(o.status.success());
    assert!(!stderr(&o).contains("eval mean"));
}
