use std::path::Path;
use std::process::{Command, Output};

fn vqalab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqalab"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("typo.toml", "seed = 1\n[defense]\ngrid_samplng = true\n", "grid_samplng"),
        ("budget.toml", "[attack]\nquery_budget = -1\n", "attack.query_budget"),
        ("syntax.toml", "seed = 1\n[attack\n", "line 2"),
    ];
    for (name, text, needle) in cases {
        std::fs::write(dir.path().join(name), text).unwrap();
        let o = vqalab(&["--config", name, "gen"], dir.path());
        assert!(!o.status.success(), "{name}");
        assert!(stderr(&o).contains(needle), "{name}: {}", stderr(&o));
    }
}

#[test]
fn gen_writes_a_readable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[dataset]\ncount = 4\n").unwrap();
    let o = vqalab(&["--preset", "desk", "--config", "c.toml", "--out", "data", "gen"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap();
    assert!(manifest.starts_with("path,mos\n"));
    assert_eq!(manifest.lines().count(), 5);
    let rows = vqa_defense::video::read_manifest(&dir.path().join("data/manifest.csv")).unwrap();
    for (path, mos) in rows {
        let v = vqa_defense::video::read_video_file(&path).unwrap();
        assert_eq!((v.frames(), v.height(), v.width()), (16, 64, 64));
        assert!((1.0..=5.0).contains(&mos));
    }
}

#[test]
fn attack_and_report_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[dataset]\ncount = 6\n[scorer]\nkind = \"analytic\"\n[attack]\nquery_budget = 25\n[experiment]\nsubset = 4\n",
    )
    .unwrap();
    let o = vqalab(&["--preset", "desk", "--config", "c.toml", "--out", "one", "attack", "--index", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.path().join("one/v0002_trace.csv")).unwrap();
    assert!(trace.starts_with("step,score,accepted,linf_so_far\n"));
    assert_eq!(trace.lines().count(), 26);

    let o = vqalab(&["--preset", "desk", "--config", "c.toml", "--out", "run", "eval"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = vqalab(&["--out", "again", "report", "--from", "run/report.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["summary.csv", "per_video.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("run").join(name)).unwrap(),
            std::fs::read(dir.path().join("again").join(name)).unwrap()
        );
    }
}
