use std::path::Path;
use std::process::{Command, Output};

use paraumt_core::pipeline::{exit_code, Manifest, Pipeline, PipelineConfig, Profile, Stage, MANIFEST_FILE};
use paraumt_core::Error;

fn paraumt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paraumt"))
        .args(args)
        .current_dir(dir)
        .env_remove("PARAUMT_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Three-line corpus plus a config whose body is `extra`.
fn tiny(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.txt"), "the cat sat\nthe dog ran\na bird flew\n").unwrap();
    std::fs::write(
        dir.path().join("p.toml"),
        format!("[corpus]\npath = \"c.txt\"\nmin_count = 1\n[clustering]\nk = 2\n{extra}"),
    )
    .unwrap();
    dir
}

#[test]
fn cluster_on_three_lines() {
    let dir = tiny("");
    let o = paraumt(dir.path(), &["cluster", "--config", "p.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let tsv = std::fs::read_to_string(dir.path().join("out/assignments.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    for (i, line) in tsv.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[0], i.to_string());
        assert!(cols[1] == "0" || cols[1] == "1");
    }
}

#[test]
fn unknown_filter_is_a_config_error() {
    let dir = tiny("[filter]\npredicates = [{ name = \"semantic\" }]\n");
    let o = paraumt(dir.path(), &["filter", "--config", "p.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("semantic") && msg.contains("filter.predicates"), "{msg}");
}

#[test]
fn missing_artifact_names_the_stage() {
    let dir = tiny("[eval]\ndata = \"c.txt\"\n");
    for (stage, need) in [("pair", "cluster"), ("distill", "pair"), ("train-surrogate", "filter"), ("eval", "train-surrogate")] {
        let o = paraumt(dir.path(), &[stage, "--config", "p.toml"]);
        assert_eq!(o.status.code(), Some(3), "{stage}: {}", stderr(&o));
        assert!(stderr(&o).contains(&format!("`{need}`")), "{stage}: {}", stderr(&o));
    }
}

#[test]
fn field_path_diagnostics() {
    let cases = [
        ("[umt]\nsteps = \"many\"\n", "umt.steps"),
        ("[pairing]\nstrategy = \"closest\"\n", "pairing.strategy"),
        ("[surrogate]\nbatchsize = 3\n", "surrogate.batchsize"),
        ("[distill]\nsample_fraction = 0.0\n", "distill.sample_fraction"),
        ("[eval]\ndata = \"nope.tsv\"\n", "eval.data"),
        ("[pairing]\nstrategy = \"supervised\"\n", "pairing.dev"),
    ];
    for (body, field) in cases {
        let dir = tiny(body);
        let o = paraumt(dir.path(), &["cluster", "--config", "p.toml"]);
        assert_eq!(o.status.code(), Some(2), "{field}");
        assert!(stderr(&o).contains(field), "{field}: {}", stderr(&o));
    }
    let dir = tiny("");
    std::fs::write(dir.path().join("p.toml"), "[corpus]\npath = \"c.txt\"\n[clustering]\nk = 1\n").unwrap();
    let o = paraumt(dir.path(), &["cluster", "--config", "p.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("clustering.k"));
    let o = paraumt(dir.path(), &["cluster"]);
    assert_eq!(o.status.code(), Some(2));
    let o = paraumt(dir.path(), &["cluster", "--config", "p.toml", "--profile", "huge"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_dir_precedence() {
    let dir = tiny("");
    let run = |args: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_paraumt"));
        c.args(args).current_dir(dir.path()).env_remove("PARAUMT_OUT");
        if let Some(e) = env {
            c.env("PARAUMT_OUT", e);
        }
        assert!(c.output().unwrap().status.success());
    };
    run(&["cluster", "--config", "p.toml"], Some("from_env"));
    run(&["cluster", "--config", "p.toml", "--out", "from_flag"], Some("from_env"));
    assert!(dir.path().join("from_env/assignments.tsv").is_file());
    assert!(dir.path().join("from_flag/assignments.tsv").is_file());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn manifest_records_digests_and_stage_rerun_is_identical() {
    let dir = tiny("");
    let base = dir.path();
    for _ in 0..2 {
        assert!(paraumt(base, &["cluster", "--config", "p.toml"]).status.success());
        assert!(paraumt(base, &["review-report", "--config", "p.toml"]).status.success());
    }
    assert!(paraumt(base, &["cluster", "--config", "p.toml", "--out", "again"]).status.success());
    let load = |d: &str| -> Manifest { serde_json::from_slice(&std::fs::read(base.join(d).join(MANIFEST_FILE)).unwrap()).unwrap() };
    let (a, b) = (load("out"), load("again"));
    let cluster = &a.stages["cluster"];
    for key in ["vocab.txt", "clustering.json", "assignments.tsv", "distances.tsv"] {
        assert_eq!(cluster.outputs[key].len(), 64, "{key}");
        assert_eq!(cluster.outputs[key], b.stages["cluster"].outputs[key]);
    }
    assert!(a.stages.contains_key("review-report"));
    assert_eq!(a.config["clustering"]["k"], 2);
    assert_eq!(a.config["seed"], 0);
    assert!(a.versions.contains_key("paraumt"));
}

#[test]
fn seed_and_profile_flags_reach_the_snapshot() {
    let dir = tiny("");
    let o = paraumt(dir.path(), &["cluster", "--config", "p.toml", "--seed", "9", "--profile", "paper"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Manifest = serde_json::from_slice(&std::fs::read(dir.path().join("out").join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.config["seed"], 9);
    assert_eq!(m.config["profile"], "paper");
    assert_eq!(m.config["clustering"]["k"], 2);
    assert_eq!(m.config["umt"]["lr"], 0.00025);
}

#[test]
fn profiles_carry_paper_defaults() {
    let p = PipelineConfig::paper();
    assert_eq!((p.clustering.k, p.clustering.sweeps), (80, 5));
    assert_eq!(p.surrogate.batch_size, 256);
    assert_eq!(p.metrics.alpha, 0.8);
    assert_eq!(PipelineConfig::desk().profile, Profile::Desk);
}

#[test]
fn library_errors_map_to_exit_codes() {
    let dir = tiny("");
    let cfg = PipelineConfig::load(&dir.path().join("p.toml"), None).unwrap();
    let pipeline = Pipeline::new(cfg).unwrap();
    let e = pipeline.run(Stage::Filter).unwrap_err();
    assert!(matches!(&e, Error::MissingArtifact { stage, .. } if stage == "distill"));
    assert_eq!(exit_code(&e), 3);
    assert_eq!(exit_code(&Error::UnknownFilter("x".into())), 2);
    assert_eq!(exit_code(&Error::MissingModel(1)), 4);
}
