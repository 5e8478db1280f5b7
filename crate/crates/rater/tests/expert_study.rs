//! Two-expert fixture logs reproducing a reference expert assessment: 182
//! real and 120 synthetic items; expert 1 classifies 235 correctly (142
//! real, 93 synthetic) and judges realness correctly 189 times; expert 2
//! classifies 209 correctly (126 real, 83 synthetic) with 177 correct
//! realness judgments; they agree on 222 classes, 185 of them correct.
//!
//! The logs are generated here and checked in; set `UPDATE_FIXTURES=1` to
//! rewrite them.

use std::path::PathBuf;

use agf_core::dataset::LesionClass;
use agf_rater::*;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/expert_study")
}

#[derive(Clone, Copy, PartialEq)]
enum Outcome {
    Both,
    OnlyFirst,
    OnlySecond,
    NeitherAgreeing,
    NeitherDisagreeing,
}

/// Items in a fixed order with their class and outcome category.
fn items() -> Vec<(ItemTruth, Outcome)> {
    use Outcome::*;
    let plan = |n_both, n_first, n_second, n_agree, n_disagree| {
        let mut v = Vec::new();
        for (n, o) in [(n_both, Both), (n_first, OnlyFirst), (n_second, OnlySecond), (n_agree, NeitherAgreeing), (n_disagree, NeitherDisagreeing)] {
            v.extend(std::iter::repeat_n(o, n));
        }
        v
    };
    let real = plan(112, 30, 14, 26, 0);
    let synthetic = plan(73, 20, 10, 11, 6);
    // Real classes follow the dataset's 53/64/65 split; synthetic 40 each.
    let real_classes = (0..182).map(|i| if i < 53 { 0 } else if i < 117 { 1 } else { 2 });
    let mut out: Vec<(ItemTruth, Outcome)> = Vec::new();
    // Interleave classes so every outcome category spans classes.
    let mut rc: Vec<usize> = real_classes.collect();
    rc.sort_by_key(|&c| c);
    for (i, o) in real.into_iter().enumerate() {
        let class = LesionClass::ALL[rc[(i * 11) % 182]];
        out.push((ItemTruth { item_id: format!("real-{i:03}"), class, real: true }, o));
    }
    for (i, o) in synthetic.into_iter().enumerate() {
        out.push((ItemTruth { item_id: format!("synth-{i:03}"), class: LesionClass::ALL[i % 3], real: false }, o));
    }
    out
}

fn shift(c: LesionClass, k: usize) -> LesionClass {
    LesionClass::ALL[(c.index() + k) % 3]
}

fn build_log(expert: usize) -> String {
    let items = items();
    let spec = SessionSpec { rater_id: format!("expert-{expert}"), real: 182, synthetic: 120, seed: 0 };
    let truths: Vec<ItemTruth> = items.iter().map(|(t, _)| t.clone()).collect();
    let mut s = Session::new(format!("expert{expert}"), &spec, truths, 1_500_000_000_000).unwrap();
    let mut lines = LogEvent::Created(s.created.clone()).to_line();
    let realness_correct = if expert == 1 { 189 } else { 177 };
    for (pos, (truth, outcome)) in items.iter().enumerate() {
        use Outcome::*;
        let correct = match outcome {
            Both => true,
            OnlyFirst => expert == 1,
            OnlySecond => expert == 2,
            NeitherAgreeing | NeitherDisagreeing => false,
        };
        let class = if correct {
            truth.class
        } else if *outcome == NeitherDisagreeing && expert == 2 {
            shift(truth.class, 2)
        } else {
            shift(truth.class, 1)
        };
        // Expert 1 is right about realness on the first 189 items, expert 2
        // on the last 177.
        let right = if expert == 1 { pos < realness_correct } else { pos >= 302 - realness_correct };
        let is_real = Some(if right { truth.real } else { !truth.real });
        let token = s.next().unwrap().token;
        let r = s.prepare(&token, class, is_real, 1_500_000_000_000 + 1000 * (pos as u64 + 1)).unwrap();
        lines.push_str(&LogEvent::Response(r.clone()).to_line());
        s.accept(r);
    }
    lines
}

#[test]
fn fixture_logs_are_current() {
    for expert in [1, 2] {
        let path = data_dir().join(format!("expert{expert}.jsonl"));
        let want = build_log(expert);
        if std::env::var_os("UPDATE_FIXTURES").is_some() {
            std::fs::create_dir_all(data_dir()).unwrap();
            std::fs::write(&path, &want).unwrap();
        }
        let have = std::fs::read_to_string(&path).expect("fixture present (UPDATE_FIXTURES=1 regenerates)");
        assert_eq!(have, want, "{} is stale", path.display());
    }
}

fn load(expert: usize) -> (Created, Vec<Response>) {
    replay(&std::fs::read(data_dir().join(format!("expert{expert}.jsonl"))).unwrap()).unwrap()
}

fn pct(s: &Score) -> f64 {
    s.accuracy.unwrap() * 100.0
}

#[test]
fn expert_reports_reproduce_the_reference_scores() {
    let (c1, r1) = load(1);
    let e1 = session_report(&c1, &r1).unwrap();
    assert_eq!((e1.classification.total.correct, e1.classification.total.answered), (235, 302));
    assert_eq!((e1.classification.real.correct, e1.classification.real.answered), (142, 182));
    assert_eq!((e1.classification.synthetic.correct, e1.classification.synthetic.answered), (93, 120));
    assert_eq!(e1.real_vs_fake.unwrap().correct, 189);
    assert!((pct(&e1.classification.real) - 78.0).abs() < 0.05);
    assert!((pct(&e1.classification.synthetic) - 77.5).abs() < 0.05);
    assert!((pct(&e1.classification.total) - 77.8).abs() < 0.05);

    let (c2, r2) = load(2);
    let e2 = session_report(&c2, &r2).unwrap();
    assert_eq!((e2.classification.total.correct, e2.classification.total.answered), (209, 302));
    assert_eq!((e2.classification.real.correct, e2.classification.synthetic.correct), (126, 83));
    assert_eq!(e2.real_vs_fake.unwrap().correct, 177);
    assert!((pct(&e2.real_vs_fake.unwrap()) - 58.6).abs() < 0.05);
    for s in [e2.classification.real, e2.classification.synthetic, e2.classification.total] {
        assert!((pct(&s) - 69.2).abs() < 0.05);
    }

    let a = agreement((&c1, &r1), (&c2, &r2)).unwrap();
    assert_eq!((a.agreed, a.co_answered, a.both_correct), (222, 302, 185));
    assert!((a.agreement * 100.0 - 73.5).abs() < 0.05);
}

#[test]
fn identical_sessions_agree_fully() {
    let (c, r) = load(1);
    let a = agreement((&c, &r), (&c, &r)).unwrap();
    assert_eq!(a.agreement, 1.0);
    assert_eq!(a.co_answered, 302);
}
