//! `--help` output is pinned by golden files in `tests/golden/`; set
//! `UPDATE_GOLDEN=1` to rewrite them after an intentional change.

use std::path::PathBuf;
use std::process::Command;

use agf_cli::Cli;
use clap::CommandFactory;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn help(sub: Option<&str>) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_agf"));
    cmd.args(sub).arg("--help").env_remove("AGF_DATA_DIR").env("COLUMNS", "100");
    let o = cmd.output().unwrap();
    assert!(o.status.success());
    String::from_utf8(o.stdout).unwrap()
}

fn subcommands() -> Vec<String> {
    Cli::command().get_subcommands().map(|s| s.get_name().to_owned()).filter(|n| n != "help").collect()
}

#[test]
fn help_matches_golden_files() {
    let mut stale = Vec::new();
    let mut pages: Vec<(String, String)> = vec![("agf".into(), help(None))];
    for s in subcommands() {
        pages.push((format!("agf-{s}"), help(Some(&s))));
    }
    for (name, text) in pages {
        let path = golden_dir().join(format!("{name}.txt"));
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(golden_dir()).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        if std::fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
            stale.push(name);
        }
    }
    assert!(stale.is_empty(), "help changed for {stale:?}; rerun with UPDATE_GOLDEN=1 if intended");
}

#[test]
fn every_flag_is_documented() {
    let root = Cli::command();
    let globals: Vec<&clap::Arg> = root.get_arguments().collect();
    let top = help(None);
    for sub in root.get_subcommands().filter(|s| s.get_name() != "help") {
        assert!(top.contains(sub.get_name()), "{} missing from top-level help", sub.get_name());
        let text = help(Some(sub.get_name()));
        for arg in sub.get_arguments().chain(globals.iter().copied()) {
            if let Some(long) = arg.get_long() {
                assert!(text.contains(&format!("--{long}")), "agf {} --help lacks --{long}", sub.get_name());
            }
            if arg.is_positional() {
                assert!(text.contains(arg.get_value_names().unwrap()[0].as_str()), "{}", sub.get_name());
            }
            assert!(arg.get_help().is_some() || arg.get_id() == "help" || arg.get_id() == "version", "undocumented {:?} in {}", arg.get_id(), sub.get_name());
        }
    }
}

#[test]
fn top_level_help_lists_all_twelve_commands() {
    assert_eq!(
        subcommands(),
        ["phantom-gen", "folds", "augment", "train-clf", "train-dcgan", "train-acgan", "synth", "evaluate", "experiment", "tsne", "rater-serve", "report"]
    );
}
