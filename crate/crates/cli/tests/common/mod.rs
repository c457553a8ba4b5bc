#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Runs `vp` with no inherited `VP_*` overrides besides `env`.
pub fn vp_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vp"));
    for (k, _) in std::env::vars() {
        if k.starts_with("VP_") {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).envs(env.iter().copied()).env("RUST_LOG", "warn").output().expect("spawn vp")
}

pub fn vp(args: &[&str]) -> Output {
    vp_env(args, &[])
}

/// Endpoints that refuse connections; `--mock` must never reach them.
pub const DEAD_ENDPOINTS: [(&str, &str); 3] = [
    ("VP_LLM_URL", "http://127.0.0.1:9/v1"),
    ("VP_VIDEO_LLM_URL", "http://127.0.0.1:9/v1"),
    ("VP_EMBED_URL", "http://127.0.0.1:9"),
];

pub fn ok(args: &[&str]) -> Output {
    ok_env(args, &[])
}

pub fn ok_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let out = vp_env(args, env);
    assert!(
        out.status.success(),
        "vp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("error json on stderr");
    serde_json::from_str(line).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// descriptors gen, classifier build, fuse and classify on the synthetic
/// fixture, all under `out`, with every network endpoint pointed at a closed
/// port; returns the bytes of the final metrics.json.
pub fn hermetic_pipeline(out: &Path, workers: usize) -> Vec<u8> {
    let fx = fixtures().join("synthetic");
    let w = workers.to_string();
    let o = s(out);
    let common = ["--mock", "--workers", &w, "--out", o];
    let with = |extra: &[&str]| -> Vec<String> {
        extra.iter().chain(common.iter()).map(|x| x.to_string()).collect()
    };
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok_env(&refs, &DEAD_ENDPOINTS);
    };
    let classes = fx.join("classes.txt");
    let descriptors = out.join("descriptors.json");
    let classifier = out.join("classifier");
    let fused = out.join("fused");
    run(with(&["descriptors", "gen", "--classes", s(&classes)]));
    run(with(&[
        "classifier",
        "build",
        "--classes",
        s(&classes),
        "--descriptors",
        s(&descriptors),
        "--components",
        "base,attributes,description",
    ]));
    run(with(&[
        "fuse",
        "--videos",
        s(&fx.join("videos")),
        "--descriptions",
        s(&fx.join("video_descriptions.jsonl")),
    ]));
    run(with(&[
        "classify",
        "--classifier",
        s(&classifier),
        "--videos",
        s(&fused),
        "--labels",
        s(&fx.join("labels.jsonl")),
    ]));
    std::fs::read(out.join("metrics.json")).unwrap()
}
