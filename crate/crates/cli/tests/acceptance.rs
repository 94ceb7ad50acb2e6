//! Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use pairnet::commands;
use pairnet::{FeaturesArgs, GenArgs, TrainArgs};
use pairnet_core::datagen::{generate_corpus, split_by_record, SyntheticSpec};
use pairnet_core::eval::{evaluate, train_hierarchical, train_one_vs_all, RecordDecision};
use pairnet_core::features::{
    band, band_power, bba_correct, compute_bba, extract_features, power_spectrum, BandName,
    FeatureLayout, Segment, CANONICAL_BANDS,
};
use pairnet_core::model::{classifier_count, coupling_weight, GroupScores};
use pairnet_core::trainer::{
    forward_select, pocket_train, train_model, train_model_with, Execution, HoldoutSplit,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pattern(q: usize, bits: u64) -> Vec<f64> {
    (0..q * (q - 1) / 2)
        .map(|k| if bits >> k & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}

fn coupling_algebra() -> Check {
    let t = Instant::now();
    for q in 2..=16usize {
        let count = classifier_count(q).map_err(|e| e.to_string())?;
        ensure(count == q * (q - 1) / 2, || format!("q={q}: {count} classifiers"))?;
        for i in 1..=q {
            let mut degree = 0;
            for a in 1..=q {
                for b in a + 1..=q {
                    let w = coupling_weight(i, (a, b), q).map_err(|e| e.to_string())?;
                    let expected = if i == a { 1 } else if i == b { -1 } else { 0 };
                    ensure(w == expected, || format!("q={q} class {i} pair ({a},{b}): {w}"))?;
                    let wa = coupling_weight(a, (a, b), q).unwrap();
                    let wb = coupling_weight(b, (a, b), q).unwrap();
                    ensure(wa == -wb, || format!("q={q} pair ({a},{b}) not antisymmetric"))?;
                    degree += usize::from(w != 0);
                }
            }
            ensure(degree == q - 1, || format!("q={q} class {i} degree {degree}"))?;
        }
    }
    let count16 = classifier_count(16).unwrap();
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.3} s"))?;
    Ok(format!("q = 2..16, {count16} classifiers at q = 16, {secs:.3} s"))
}

/// Plurality of pairwise votes, ties to the lowest class.
fn plurality(q: usize, outputs: &[f64]) -> (usize, Vec<usize>) {
    let mut votes = vec![0usize; q];
    let mut k = 0;
    for i in 0..q {
        for j in i + 1..q {
            votes[if outputs[k] > 0.0 { i } else { j }] += 1;
            k += 1;
        }
    }
    let mut best = 0;
    for c in 1..q {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    (best + 1, votes)
}

fn plurality_equivalence() -> Check {
    let t = Instant::now();
    let mut patterns = 0;
    for q in 2..=4usize {
        for bits in 0..1u64 << (q * (q - 1) / 2) {
            let out = pattern(q, bits);
            let g = GroupScores::from_pair_outputs(q, &out).map_err(|e| e.to_string())?;
            let (winner, votes) = plurality(q, &out);
            ensure(g.winner == winner, || format!("q={q} pattern {bits:b}: {} vs {winner}", g.winner))?;
            for (i, (score, v)) in g.scores.iter().zip(&votes).enumerate() {
                let expected = 2.0 * *v as f64 - (q as f64 - 1.0);
                ensure(*score == expected, || format!("q={q} pattern {bits:b} class {}", i + 1))?;
            }
            patterns += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.3} s"))?;
    Ok(format!("{patterns} patterns, {secs:.3} s"))
}

fn three_class_formulas() -> Check {
    for bits in 0..8u64 {
        let f = pattern(3, bits);
        let (f12, f13, f23) = (f[0], f[1], f[2]);
        let g = GroupScores::from_pair_outputs(3, &f).map_err(|e| e.to_string())?;
        let expected = vec![f12 + f13, -f12 + f23, -f13 - f23];
        ensure(g.scores == expected, || format!("pattern {bits:03b}: {:?} vs {expected:?}", g.scores))?;
    }
    Ok("8 patterns exact".into())
}

fn separable(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let d = rng.random_range(2..=10);
    let n = rng.random_range(20..=200);
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let b: f64 = rng.random_range(-0.5..0.5);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    while pos.len() + neg.len() < n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = (w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() + b) / norm;
        if a > 0.1 {
            pos.push(x);
        } else if a < -0.1 {
            neg.push(x);
        }
    }
    (pos, neg)
}

fn pocket_convergence() -> Check {
    let cfg = TrainConfig::default();
    let mut worst_epochs = 0;
    let mut datasets = 0;
    for seed in 0..20 {
        let (pos, neg) = separable(seed);
        ensure(!pos.is_empty() && !neg.is_empty(), || format!("seed {seed}: one-sided dataset"))?;
        let fit = pocket_train(&pos, &neg, &cfg).map_err(|e| e.to_string())?;
        ensure(fit.train_accuracy == 1.0, || {
            format!("seed {seed}: accuracy {} after {} epochs", fit.train_accuracy, fit.epochs_used)
        })?;
        worst_epochs = worst_epochs.max(fit.epochs_used);
        datasets += 1;
    }
    Ok(format!("{datasets} datasets, at most {worst_epochs} of {} epochs", cfg.epochs))
}

fn gaussian_rows(
    seed: u64,
    n: usize,
    d: usize,
    label_of: impl Fn(&[f64]) -> bool,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if label_of(&x) {
            pos.push(x);
        } else {
            neg.push(x);
        }
    }
    (pos, neg)
}

/// Re-executes one greedy step: score every unused feature added to
/// `chosen`, keep the best, lowest index on ties.
fn greedy_step(split: &HoldoutSplit, chosen: &[usize], cfg: &TrainConfig) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for f in (0..split.n_features()).filter(|f| !chosen.contains(f)) {
        let mut subset = chosen.to_vec();
        subset.push(f);
        subset.sort_unstable();
        let acc = split.score_subset(&subset, cfg).1;
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((f, acc));
        }
    }
    best.expect("at least one candidate")
}

fn selection_oracle() -> Check {
    let mut compared = 0;
    for seed in 0..6u64 {
        let d = 3 + seed as usize;
        let (pos, neg) = gaussian_rows(seed, 120, d, |x| x[0] + 0.7 * x[d - 1] + 0.5 * x[1] > 0.3);
        let cfg = TrainConfig {
            seed,
            selection_patience: 3,
            ..TrainConfig::default()
        };
        let fit = forward_select(&pos, &neg, &cfg).map_err(|e| e.to_string())?;
        let split = HoldoutSplit::new(&pos, &neg, &cfg).map_err(|e| e.to_string())?;
        let mut chosen = Vec::new();
        for step in fit.steps.iter().take(2) {
            let (f, acc) = greedy_step(&split, &chosen, &cfg);
            ensure(step.feature == f && step.validation_accuracy == acc, || {
                format!("d={d}: selected {} ({}), oracle {f} ({acc})", step.feature, step.validation_accuracy)
            })?;
            chosen.push(f);
            compared += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for k in 0..60 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let x = vec![
            rng.sample::<f64, _>(StandardNormal),
            sign * (1.0 + rng.random::<f64>()),
            rng.sample::<f64, _>(StandardNormal),
        ];
        if sign > 0.0 {
            pos.push(x);
        } else {
            neg.push(x);
        }
    }
    let fit = forward_select(&pos, &neg, &TrainConfig::default()).map_err(|e| e.to_string())?;
    ensure(fit.steps[0].feature == 1, || format!("planted: first pick {}", fit.steps[0].feature))?;
    Ok(format!("{compared} greedy steps match, planted feature (index 1) first"))
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn spectral_suite() -> Check {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in [2usize, 3, 17, 256, 999, 1000] {
        for _ in 0..10 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let s = power_spectrum(&x, 100.0).map_err(|e| e.to_string())?;
            let v = variance(&x);
            worst = worst.max((s.total() - v).abs() / v);
        }
    }
    ensure(worst <= 1e-9, || format!("Parseval relative error {worst:e}"))?;

    let tone: Vec<f64> = (0..1000).map(|i| (2.0 * PI * 5.0 * i as f64 / 100.0 + 0.3).sin()).collect();
    let s = power_spectrum(&tone, 100.0).map_err(|e| e.to_string())?;
    let theta = band_power(&s, &band(BandName::Theta)) / s.total();
    ensure(theta > 0.99, || format!("5 Hz tone: theta share {theta}"))?;

    let edges: Vec<(f64, f64)> = CANONICAL_BANDS.iter().map(|b| (b.lo_hz, b.hi_hz)).collect();
    let expected = [(0.0, 1.5), (1.5, 3.5), (3.5, 7.5), (7.5, 13.5), (13.5, 19.5), (19.5, 25.0)];
    ensure(edges == expected, || format!("band edges {edges:?}"))?;
    Ok(format!("Parseval worst {worst:.1e}, theta share {theta:.6}, edges exact"))
}

fn random_channel(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.random_range(0.2..24.0), rng.random_range(0.5..5.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    (0..1000)
        .map(|i| {
            let t = i as f64 / 100.0;
            tones.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>()
                + 0.3 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

fn bba_gain_invariance() -> Check {
    let layout = FeatureLayout::standard(100.0).map_err(|e| e.to_string())?;
    let affected = layout.bba_affected_indices();
    let mut worst_gap = 0.0f64;
    let mut worst_bba = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(70 + seed);
        let channels = [random_channel(&mut rng), random_channel(&mut rng)];
        let corrected = |gain: f64| {
            let seg = Segment {
                record_id: "r".into(),
                segment_index: 0,
                channels: channels.clone().map(|c| c.iter().map(|v| v * gain).collect()),
                artifact: false,
            };
            bba_correct(&extract_features(&seg, &layout)?, &layout)
        };
        let reference = corrected(1.0).map_err(|e| e.to_string())?;
        for gain in [0.1, 1.0, 10.0] {
            let fv = corrected(gain).map_err(|e| e.to_string())?;
            for &i in &affected {
                worst_gap = worst_gap.max((fv.values[i] - reference.values[i]).abs());
            }
            for b in compute_bba(&fv, &layout).map_err(|e| e.to_string())? {
                worst_bba = worst_bba.max(b.abs());
            }
        }
    }
    ensure(worst_gap < 1e-6, || format!("corrected log powers differ by {worst_gap:e}"))?;
    ensure(worst_bba < 1e-12, || format!("BBA of corrected vector {worst_bba:e}"))?;
    Ok(format!("max gap {worst_gap:.1e}, max residual BBA {worst_bba:.1e}"))
}

const ORDERING_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn synthetic_ordering() -> Check {
    let spec = SyntheticSpec::default();
    let (mut pw, mut ova, mut hier, mut pw_rec) = (0.0, 0.0, 0.0, 0.0);
    let mut lines = Vec::new();
    for seed in ORDERING_SEEDS {
        let t = Instant::now();
        let run = || -> pairnet_core::Result<(f64, f64, f64, f64)> {
            let corpus = generate_corpus(&spec, seed)?;
            let ds = split_by_record(corpus.featurize(true)?, corpus.layout()?, 1.0 / 3.0, seed)?;
            let cfg = TrainConfig { seed, ..TrainConfig::default() };
            let p = evaluate(&train_model(&ds, spec.q, &cfg)?, &ds.test)?;
            let o = evaluate(&train_one_vs_all(&ds, spec.q, &cfg)?, &ds.test)?;
            let h = evaluate(&train_hierarchical(&ds, spec.q, &cfg)?, &ds.test)?;
            Ok((p.segment_accuracy, o.segment_accuracy, h.segment_accuracy, p.record_accuracy))
        };
        let (p, o, h, r) = run().map_err(|e| format!("seed {seed}: {e}"))?;
        lines.push(format!(
            "    seed {seed}: pairwise {p:.3} (records {r:.3}), one-vs-all {o:.3}, hierarchical {h:.3} [{:.0} s]",
            t.elapsed().as_secs_f64()
        ));
        pw += p;
        ova += o;
        hier += h;
        pw_rec += r;
    }
    let k = ORDERING_SEEDS.len() as f64;
    let (pw, ova, hier, pw_rec) = (pw / k, ova / k, hier / k, pw_rec / k);
    let summary = format!(
        "mean test segment accuracy pairwise {pw:.3}, one-vs-all {ova:.3}, hierarchical {hier:.3}; \
         pairwise record accuracy {pw_rec:.3}\n{}",
        lines.join("\n")
    );
    let mut broken = Vec::new();
    if pw < ova {
        broken.push("pairwise < one-vs-all");
    }
    if ova < hier {
        broken.push("one-vs-all < hierarchical");
    }
    if pw_rec < pw {
        broken.push("record < segment");
    }
    if broken.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}: {summary}", broken.join(", ")))
    }
}

fn record_probabilities() -> Check {
    let mut got = Vec::new();
    for (hits, winner) in [(92usize, 4usize), (58, 2)] {
        let mut preds = vec![winner; hits];
        preds.extend((0..100 - hits).map(|k| if k % 3 == 0 { 1 } else { 3 }));
        let d = RecordDecision::from_predictions("r", &preds, 4).map_err(|e| e.to_string())?;
        ensure(d.predicted_class == winner, || format!("{hits}/100: predicted {}", d.predicted_class))?;
        let expected = hits as f64 / 100.0;
        ensure(d.probability == expected, || format!("{hits}/100: probability {}", d.probability))?;
        got.push(d.probability);
    }
    ensure(got == [0.92, 0.58], || format!("{got:?}"))?;
    Ok(format!("probabilities {} and {}", got[0], got[1]))
}

fn reproducibility() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let spec = dir.join("spec.txt");
    fs::write(&spec, "q = 4\nrecords_per_class = 3\nsegments_per_record = 8\n").map_err(|e| e.to_string())?;
    let fail = |e: pairnet::Failure| e.to_string();
    commands::gen(&GenArgs { config: Some(spec), seed: Some(9), out: dir.join("g") }).map_err(fail)?;
    commands::features(&FeaturesArgs {
        input: dir.join("g").join(commands::CORPUS_FILE),
        bba_correct: true,
        sample_rate: 100.0,
        out: dir.join("f"),
    })
    .map_err(fail)?;
    let features = dir.join("f").join(commands::FEATURES_FILE);
    let mut models = Vec::new();
    for name in ["ta", "tb"] {
        commands::train(&TrainArgs { input: features.clone(), config: None, seed: Some(21), out: dir.join(name) })
            .map_err(fail)?;
        models.push(fs::read(dir.join(name).join(commands::MODEL_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(models[0] == models[1], || "model files differ between runs".into())?;

    let corpus = generate_corpus(&SyntheticSpec::with_classes(4), 9).map_err(|e| e.to_string())?;
    let ds = split_by_record(
        corpus.featurize(true).map_err(|e| e.to_string())?,
        corpus.layout().map_err(|e| e.to_string())?,
        1.0 / 3.0,
        9,
    )
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig { seed: 21, ..TrainConfig::default() };
    let serial = train_model_with(&ds, 4, &cfg, Execution::Serial).map_err(|e| e.to_string())?;
    let parallel = train_model_with(&ds, 4, &cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    ensure(serial.to_json().unwrap() == parallel.to_json().unwrap(), || {
        "serial and parallel models differ".into()
    })?;
    Ok(format!("{} byte model identical twice; serial == parallel", models[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("coupling algebra", coupling_algebra),
        ("plurality equivalence", plurality_equivalence),
        ("three-class superposition", three_class_formulas),
        ("pocket convergence", pocket_convergence),
        ("selection oracle", selection_oracle),
        ("spectral suite", spectral_suite),
        ("BBA gain invariance", bba_gain_invariance),
        ("synthetic ordering", synthetic_ordering),
        ("record aggregation", record_probabilities),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({secs:.1} s) {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({secs:.1} s) {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
