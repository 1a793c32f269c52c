//! Acceptance checks. Each criterion prints one PASS/FAIL line; the binary exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use claimaudit::dataset::{
    Annotation, Claim, Dimension, Gender, LlmCondition, PromptVariant, Rater, Rating,
    StatisticKind, Topic, Veracity, WorkerProfile,
};
use claimaudit::ingest::{write_dataset, DatasetBundle};
use claimaudit::report::{run_audit, AuditConfig, LlmSource, REPORT_JSON, REPORT_TEXT};
use claimaudit::stats::{
    claim_divergence, exact_enumeration_oracle, rq1_bootstrap, rq2_bootstrap, zscore_normalize,
    BootstrapSettings, Cell, GroupedScores, Inequality, NormalizationPolicy, StatsError, TestKind,
    VarianceConvention, DEFAULT_ENUMERATION_BUDGET,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sample_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample")
}

fn sample_config(out: &Path) -> AuditConfig {
    let mut cfg = AuditConfig::from_path(&sample_dir().join("config.toml")).expect("sample config");
    cfg.output.dir = out.to_path_buf();
    cfg
}

fn rating(r: &mut impl Rng) -> Rating {
    Rating::new(r.random_range(1..=6)).unwrap()
}

fn random_annotations(r: &mut impl Rng) -> Vec<Annotation> {
    let claims = r.random_range(1..=8);
    let workers = r.random_range(1..=10);
    let mut out = Vec::new();
    for c in 0..claims {
        for w in 0..workers {
            if r.random_bool(0.7) {
                let gender = if w % 2 == 0 { Gender::Man } else { Gender::Woman };
                out.push(Annotation {
                    claim_id: format!("c{c}"),
                    rater: Rater::Human {
                        worker_id: format!("w{w}"),
                        gender,
                    },
                    dimension: Dimension::GroupHarm,
                    rating: rating(r),
                    harmed_groups: None,
                });
            }
        }
        for &variant in &PromptVariant::ALL {
            for &condition in LlmCondition::ALL {
                for _ in 0..r.random_range(0..=4) {
                    out.push(Annotation {
                        claim_id: format!("c{c}"),
                        rater: Rater::Llm { condition, variant },
                        dimension: Dimension::GroupHarm,
                        rating: rating(r),
                        harmed_groups: None,
                    });
                }
            }
        }
    }
    out
}

fn normalization_invariants() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let policies = [
        NormalizationPolicy::Source,
        NormalizationPolicy::SourcePooledVariants,
        NormalizationPolicy::SourceAndCondition,
    ];
    let (mut groups_checked, mut worst_mean, mut worst_var) = (0usize, 0f64, 0f64);
    for i in 0..1000 {
        let anns = random_annotations(&mut r);
        let g = zscore_normalize(&anns, policies[i % 3]);
        let mut by_group: BTreeMap<&str, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
        for s in &g.scores {
            let e = by_group.entry(s.group_key.as_str()).or_default();
            e.0.push(s.z);
            e.1.push(anns[s.annotation_ref].rating.get());
        }
        for (key, (z, raw)) in by_group {
            if raw.len() < 2 || raw.iter().all(|&x| x == raw[0]) {
                ensure(z.iter().all(|&x| x == 0.0), || format!("degenerate group {key} not zeroed"))?;
                continue;
            }
            let n = z.len() as f64;
            let m = z.iter().sum::<f64>() / n;
            let v = z.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            worst_mean = worst_mean.max(m.abs());
            worst_var = worst_var.max((v - 1.0).abs());
            groups_checked += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(worst_mean < 1e-9, || format!("max |mean| = {worst_mean:e}"))?;
    ensure(worst_var < 1e-9, || format!("max |var - 1| = {worst_var:e}"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{groups_checked} groups in 1000 datasets; max |mean| {worst_mean:.1e}, max |var-1| {worst_var:.1e}; {elapsed:.2?}"
    ))
}

/// Gender-gap statistic written out term by term.
fn straight_line_statistic(hm: &[f64], hw: &[f64], lm: &[f64], lw: &[f64]) -> f64 {
    let avg = |xs: &[f64]| {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        s / xs.len() as f64
    };
    let var_of_union = |a: &[f64], b: &[f64]| {
        let mut all = a.to_vec();
        all.extend_from_slice(b);
        let m = avg(&all);
        let mut ss = 0.0;
        for x in &all {
            ss += (x - m) * (x - m);
        }
        ss / all.len() as f64
    };
    let numerator = (avg(lw) - avg(lm)).abs() - (avg(hw) - avg(hm)).abs();
    numerator / (1.0 + var_of_union(hm, hw) + var_of_union(lm, lw)).sqrt()
}

fn claim_statistic_correctness() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let v = PromptVariant::One;
    let mut worst = 0f64;
    for i in 0..1000 {
        let cell = |r: &mut ChaCha8Rng| -> Vec<f64> {
            (0..r.random_range(1..=6)).map(|_| r.random_range(-3.0..3.0)).collect()
        };
        let (hm, hw, lm, lw) = (cell(&mut r), cell(&mut r), cell(&mut r), cell(&mut r));
        let id = format!("c{i}");
        let g = GroupedScores::from_cells(vec![
            (id.clone(), Topic::Gold, Cell::Human(Gender::Man), hm.clone()),
            (id.clone(), Topic::Gold, Cell::Human(Gender::Woman), hw.clone()),
            (id.clone(), Topic::Gold, Cell::Llm(LlmCondition::ManConditioned, v), lm.clone()),
            (id.clone(), Topic::Gold, Cell::Llm(LlmCondition::WomanConditioned, v), lw.clone()),
        ]);
        let got = claim_divergence(&g, &id, v, VarianceConvention::Population).map_err(|e| e.to_string())?;
        let want = straight_line_statistic(&hm, &hw, &lm, &lw);
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;

    let id = "hand".to_string();
    let g = GroupedScores::from_cells(vec![
        (id.clone(), Topic::Gold, Cell::Human(Gender::Man), vec![0.5, 0.5]),
        (id.clone(), Topic::Gold, Cell::Human(Gender::Woman), vec![-0.5, -0.5]),
        (id.clone(), Topic::Gold, Cell::Llm(LlmCondition::ManConditioned, v), vec![-1.0]),
        (id.clone(), Topic::Gold, Cell::Llm(LlmCondition::WomanConditioned, v), vec![1.0]),
    ]);
    let hand = claim_divergence(&g, &id, v, VarianceConvention::Population).map_err(|e| e.to_string())?;
    ensure((hand - 0.6667).abs() <= 1e-4, || format!("hand example gave {hand}"))?;
    Ok(format!("1000 random claims, max deviation {worst:.1e}; hand example {hand:.4}"))
}

fn random_small_topic(r: &mut ChaCha8Rng) -> GroupedScores {
    let v = PromptVariant::One;
    let claims = r.random_range(1..=2);
    let mut cells = Vec::new();
    for c in 0..claims {
        let id = format!("c{c}");
        let mut push = |cell: Cell, n: usize, r: &mut ChaCha8Rng| {
            let xs = (0..n).map(|_| r.random_range(-2i32..=2) as f64 * 0.5 + r.random_range(-0.1..0.1)).collect();
            cells.push((id.clone(), Topic::Abortion, cell, xs));
        };
        push(Cell::Human(Gender::Man), r.random_range(1..=2), r);
        push(Cell::Human(Gender::Woman), r.random_range(1..=2), r);
        push(Cell::Llm(LlmCondition::ManConditioned, v), r.random_range(1..=2), r);
        push(Cell::Llm(LlmCondition::WomanConditioned, v), r.random_range(1..=2), r);
        push(Cell::Llm(LlmCondition::Base, v), r.random_range(1..=3), r);
    }
    GroupedScores::from_cells(cells)
}

fn bootstrap_matches_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let v = PromptVariant::One;
    let mut instances = 0;
    let mut worst_margin = f64::INFINITY;
    let mut attempts = 0;
    while instances < 24 {
        attempts += 1;
        if attempts > 10_000 {
            return Err("could not generate enough feasible instances".into());
        }
        let g = random_small_topic(&mut r);
        let settings = BootstrapSettings {
            iterations: 10_000,
            seed: r.random(),
            inequality: if instances % 2 == 0 { Inequality::NonStrict } else { Inequality::Strict },
            ..Default::default()
        };
        let exact = |kind| exact_enumeration_oracle(&g, &Topic::Abortion, v, kind, &settings, DEFAULT_ENUMERATION_BUDGET);
        let (e1, e2) = match (exact(TestKind::Rq1), exact(TestKind::Rq2)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(StatsError::BudgetExceeded { .. }), _) | (_, Err(StatsError::BudgetExceeded { .. })) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e.to_string()),
        };
        let b1 = rq1_bootstrap(&g, &Topic::Abortion, v, &settings).map_err(|e| e.to_string())?;
        let b2 = rq2_bootstrap(&g, &Topic::Abortion, v, &settings).map_err(|e| e.to_string())?;
        for (name, t, p) in [("rq1", e1.p_value, b1.p_value), ("rq2", e2.p_value, b2.p_value)] {
            let tol = f64::max(0.02, 3.0 * (t * (1.0 - t) / 10_000.0).sqrt());
            let diff = (p - t).abs();
            ensure(diff <= tol, || {
                format!("instance {instances} {name}: bootstrap {p} vs exact {t} (tolerance {tol})")
            })?;
            worst_margin = worst_margin.min(tol - diff);
        }
        instances += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{instances} instances, both tests within tolerance (smallest slack {worst_margin:.4}); {elapsed:.2?}"
    ))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        run_audit(&sample_config(&dir)).map_err(|e| e.to_string())?;
        reports.push(std::fs::read(dir.join(REPORT_JSON)).map_err(|e| e.to_string())?);
    }
    ensure(reports[0] == reports[1], || "report.json differs between runs".into())?;
    Ok(format!("two sample runs, identical {}-byte reports", reports[0].len()))
}

fn constant_bundle() -> DatasetBundle {
    let workers: Vec<WorkerProfile> = ["m1", "m2", "w1", "w2"]
        .iter()
        .map(|id| WorkerProfile {
            worker_id: id.to_string(),
            gender: if id.starts_with('m') { Gender::Man } else { Gender::Woman },
            age_range: None,
            education: None,
            sexual_orientation: None,
            race: None,
        })
        .collect();
    let topics = [Topic::Abortion, Topic::Sports, Topic::Gold, Topic::Usa];
    let claims: Vec<Claim> = (0..8)
        .map(|i| Claim {
            claim_id: format!("k{i}"),
            text: format!("constant claim {i}"),
            topic: topics[i % topics.len()].clone(),
            veracity: Veracity::False,
            is_gold: false,
            checked_date: None,
        })
        .collect();
    let annotations = claims
        .iter()
        .flat_map(|c| {
            workers.iter().map(|w| Annotation {
                claim_id: c.claim_id.clone(),
                rater: Rater::Human {
                    worker_id: w.worker_id.clone(),
                    gender: w.gender,
                },
                dimension: Dimension::GroupHarm,
                rating: Rating::new(4).unwrap(),
                harmed_groups: None,
            })
        })
        .collect();
    DatasetBundle::new(claims, workers, annotations).expect("valid constant dataset")
}

fn degenerate_data() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    write_dataset(&constant_bundle(), &data).map_err(|e| e.to_string())?;
    let script = tmp.path().join("constant.toml");
    std::fs::write(&script, "default = \"4\"\n").map_err(|e| e.to_string())?;
    let mut cfg = AuditConfig::default();
    cfg.dataset.dir = Some(data);
    cfg.filter.enabled = false;
    cfg.bootstrap.iterations = 2000;
    cfg.bootstrap.inequality = Inequality::NonStrict;
    cfg.provider.mock_script = Some(script);
    cfg.output.dir = tmp.path().join("out");
    let report = run_audit(&cfg).map_err(|e| e.to_string())?.report;
    ensure(report.gender_gap.len() == 8 && report.alignment.len() == 8, || {
        format!("expected 4 topics x 2 variants, got {} / {}", report.gender_gap.len(), report.alignment.len())
    })?;
    for r in report.gender_gap.iter().chain(&report.alignment) {
        ensure(r.value == 0.0 && r.p_value == 1.0, || {
            format!("{} P{} {:?}: value {} p {}", r.topic, r.prompt_variant, r.statistic_kind, r.value, r.p_value)
        })?;
    }
    Ok("every topic and variant: E = 0, D = 0, p = 1".into())
}

fn expected_stars(p: f64) -> &'static str {
    match p {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        _ => "-",
    }
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = run_audit(&sample_config(tmp.path())).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    ensure(outcome.exit_code() == 0, || format!("exit code {}", outcome.exit_code()))?;
    let report = &outcome.report;
    ensure(report.dataset.claims == 10, || format!("{} claims", report.dataset.claims))?;
    let text = std::fs::read_to_string(tmp.path().join(REPORT_TEXT)).map_err(|e| e.to_string())?;
    let header = text
        .lines()
        .find(|l| l.starts_with("Topic") && l.contains("E (Prompt 1)"))
        .ok_or("no gender-gap table header")?;
    ensure(header.contains("E (Prompt 2)") && header.matches("Significance").count() == 2, || {
        format!("unexpected header `{header}`")
    })?;
    ensure(text.contains("Diverse Topics") && text.contains("Other Topics"), || "missing section rows".into())?;
    let topics: Vec<&Topic> = {
        let mut t: Vec<&Topic> = report.gender_gap.iter().map(|r| &r.topic).collect();
        t.dedup();
        t
    };
    ensure(topics.len() == 3, || format!("{} topics in table", topics.len()))?;
    let mut starred = 0;
    for topic in topics {
        let line = text
            .lines()
            .find(|l| l.starts_with(topic.label()) && l.split_whitespace().count() == topic.label().split_whitespace().count() + 4)
            .ok_or_else(|| format!("no table row for {topic}"))?;
        let cells: Vec<&str> = line.split_whitespace().skip(topic.label().split_whitespace().count()).collect();
        for (k, variant) in PromptVariant::ALL.iter().enumerate() {
            let row = report
                .gender_gap
                .iter()
                .find(|r| &r.topic == topic && r.prompt_variant == *variant)
                .ok_or_else(|| format!("no result for {topic} P{variant}"))?;
            ensure(row.statistic_kind == StatisticKind::GenderGap, || "wrong statistic kind".into())?;
            ensure(cells[2 * k] == format!("{:.2}", row.value), || format!("{topic} P{variant} value cell `{}`", cells[2 * k]))?;
            let want = expected_stars(row.p_value);
            ensure(cells[2 * k + 1] == want, || {
                format!("{topic} P{variant}: p {} rendered `{}`, expected `{want}`", row.p_value, cells[2 * k + 1])
            })?;
            if want != "-" {
                starred += 1;
            }
        }
    }
    Ok(format!("10-claim sample in {elapsed:.2?}; 3 topics x 2 prompts, {starred} significant cells, stars match"))
}

/// Runs only when `CLAIMAUDIT_REPRO_DATA` names a directory holding the released
/// human annotations together with archived LLM annotations for both prompts.
fn reproduction() -> Option<Outcome> {
    let dir = std::env::var_os("CLAIMAUDIT_REPRO_DATA")?;
    let run = || -> Outcome {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = AuditConfig::default();
        cfg.dataset.dir = Some(PathBuf::from(&dir));
        cfg.analysis.llm_source = LlmSource::Dataset;
        cfg.output.dir = tmp.path().to_path_buf();
        let report = run_audit(&cfg).map_err(|e| e.to_string())?.report;
        let find = |rows: &[claimaudit::dataset::TopicResult]| {
            rows.iter()
                .find(|r| r.topic == Topic::Abortion && r.prompt_variant == PromptVariant::One)
                .cloned()
                .ok_or("no Abortion / Prompt 1 result")
        };
        let e = find(&report.gender_gap)?;
        let d = find(&report.alignment)?;
        let (mm, mw) = (d.mse_man.unwrap_or(f64::NAN), d.mse_woman.unwrap_or(f64::NAN));
        ensure((e.value - 0.56).abs() <= 0.01, || format!("E = {}", e.value))?;
        ensure((mm - 0.86).abs() <= 0.01 && (mw - 2.16).abs() <= 0.01, || format!("MSE {mm} / {mw}"))?;
        ensure(d.p_value < 0.001, || format!("alignment p = {}", d.p_value))?;
        Ok(format!("E {:.3}, MSE {mm:.3} / {mw:.3}, p {}", e.value, d.p_value))
    };
    Some(run())
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("normalization invariants", normalization_invariants),
        ("claim statistic correctness", claim_statistic_correctness),
        ("bootstrap vs exact enumeration", bootstrap_matches_oracle),
        ("determinism", determinism),
        ("degenerate data", degenerate_data),
        ("end-to-end sample run", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    match reproduction() {
        Some(Ok(detail)) => println!("PASS  published-number reproduction: {detail}"),
        Some(Err(detail)) => {
            failed += 1;
            println!("FAIL  published-number reproduction: {detail}");
        }
        None => println!(
            "SKIP  published-number reproduction: set CLAIMAUDIT_REPRO_DATA to a dataset directory with archived LLM annotations"
        ),
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
