//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always show; the process
//! exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use segtune_core::maskdata::{Connectivity, LabelMask};
use segtune_core::metrics::{area_metrics, compare_masks, pixel_dice, pixel_jaccard, MetricKind};
use segtune_core::objective::{
    argmax_first, scalarize, table2_weight_sets, EvaluationResult, ObjectiveConfig, TimeSource, Weights,
};
use segtune_core::optimizers::Algorithm;
use segtune_core::paramspace::{ParameterPoint, ParameterSpace, ParameterSpec};
use segtune_core::runner::{synthetic_space, tune_with, ObjectiveSpec, Sample, TuningConfig, TuningJob, WorkflowSpec};
use segtune_core::spatialindex::{join_rects, Rect, SpatialIndex};
use segtune_core::studies::{
    generate_dataset, generate_grouped_dataset, group_scenes, grouped_xval, monte_carlo_splits, StudyConfig,
    WeightSpec,
};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn within(started: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = started.elapsed();
    ensure!(took < limit, "{what} took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs());
    Ok(())
}

/// Random rectangles painted with labels `1..=objects`; later ones overwrite.
fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, objects: u32) -> LabelMask {
    let mut m = LabelMask::zeros(w, h);
    for label in 1..=objects {
        let (rw, rh) = (rng.random_range(2..16), rng.random_range(2..16));
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                m.set(x, y, label);
            }
        }
    }
    m
}

/// `m` moved by `(dx, dy)` with a few extra objects painted on top.
fn perturbed(rng: &mut ChaCha8Rng, m: &LabelMask) -> LabelMask {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let (dx, dy) = (rng.random_range(-3..=3), rng.random_range(-3..=3));
    let mut out = random_mask(rng, m.width(), m.height(), 3);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x - dx, y - dy);
            let inside = (0..w).contains(&sx) && (0..h).contains(&sy);
            if out.get(x as usize, y as usize) == 0 && inside {
                let v = m.get(sx as usize, sy as usize);
                out.set(x as usize, y as usize, if v == 0 { 0 } else { v + 3 });
            }
        }
    }
    out
}

// brute-force oracles, written against pixel loops only

fn oracle_pixel(a: &LabelMask, b: &LabelMask) -> (f64, f64, usize, usize) {
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (pa, pb) = (a.get(x, y) != 0, b.get(x, y) != 0);
            na += pa as usize;
            nb += pb as usize;
            both += (pa && pb) as usize;
        }
    }
    let union = na + nb - both;
    let dice = if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 };
    let jaccard = if union == 0 { 1.0 } else { both as f64 / union as f64 };
    (dice, jaccard, both, union - both)
}

fn labels_of(m: &LabelMask) -> BTreeSet<u32> {
    m.labels().iter().copied().filter(|&l| l != 0).collect()
}

fn area(m: &LabelMask, label: u32) -> usize {
    m.labels().iter().filter(|&&l| l == label).count()
}

/// All-pairs object matcher with no spatial filter.
fn oracle_object_dice(computed: &LabelMask, reference: &LabelMask) -> f64 {
    let (refs, comps) = (labels_of(reference), labels_of(computed));
    if refs.is_empty() {
        return if comps.is_empty() { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for &r in &refs {
        let mut best: Option<(u32, usize)> = None;
        for &c in &comps {
            let mut inter = 0;
            for y in 0..reference.height() {
                for x in 0..reference.width() {
                    inter += (reference.get(x, y) == r && computed.get(x, y) == c) as usize;
                }
            }
            if inter > 0 && best.is_none_or(|(_, b)| inter > b) {
                best = Some((c, inter));
            }
        }
        if let Some((c, inter)) = best {
            total += 2.0 * inter as f64 / (area(reference, r) + area(computed, c)) as f64;
        }
    }
    total / refs.len() as f64
}

fn c1_pixel_metrics() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for i in 0..200 {
        let (na, nb) = (rng.random_range(0..8), rng.random_range(0..8));
        let a = random_mask(&mut rng, 64, 64, na);
        let b = random_mask(&mut rng, 64, 64, nb);
        let (od, oj, oo, on) = oracle_pixel(&a, &b);
        let (d, j) = (pixel_dice(&a, &b).unwrap(), pixel_jaccard(&a, &b).unwrap());
        let (o, n) = area_metrics(&a, &b).unwrap();
        ensure!((d - od).abs() <= 1e-12, "pair {i}: dice {d} vs oracle {od}");
        ensure!((j - oj).abs() <= 1e-12, "pair {i}: jaccard {j} vs oracle {oj}");
        ensure!((o, n) == (oo, on), "pair {i}: areas ({o}, {n}) vs oracle ({oo}, {on})");
        ensure!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-12, "pair {i}: D = 2J/(1+J) fails ({d}, {j})");
    }
    within(started, Duration::from_secs(10), "200 pairs")?;
    Ok(format!("200 pairs match the oracle in {:.2}s", started.elapsed().as_secs_f64()))
}

fn c2_object_dice() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut pairs = 0;
    let mut mean = 0.0;
    while pairs < 100 {
        let (nr, nc) = (rng.random_range(2..14), rng.random_range(2..14));
        let reference = random_mask(&mut rng, 64, 64, nr);
        let computed = if pairs % 2 == 0 { perturbed(&mut rng, &reference) } else { random_mask(&mut rng, 64, 64, nc) };
        // single-valued masks get relabeled by connectivity; keep the labeled case
        if reference.is_binary() || computed.is_binary() {
            continue;
        }
        let got = compare_masks(&computed, &reference, Connectivity::Eight).unwrap().avg_object_dice;
        let want = oracle_object_dice(&computed, &reference);
        ensure!(got == want, "pair {pairs}: indexed {got} vs all-pairs {want}");
        mean += got;
        pairs += 1;
    }
    within(started, Duration::from_secs(30), "100 pairs")?;
    Ok(format!("100 pairs equal exactly (mean object dice {:.3})", mean / 100.0))
}

fn random_rect(rng: &mut ChaCha8Rng) -> Rect {
    let (x, y) = (rng.random_range(0..1000), rng.random_range(0..1000));
    Rect::new(x, y, x + rng.random_range(0..60), y + rng.random_range(0..60))
}

fn c3_spatial_index() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let entries: Vec<(u32, Rect)> = (0..1000).map(|i| (i, random_rect(&mut rng))).collect();
    let index = SpatialIndex::bulk_load(&entries, 8);
    index.check_invariants().map_err(|e| format!("invariants: {e}"))?;
    let mut hits = 0;
    for p in 0..200 {
        let probe = random_rect(&mut rng);
        let got: BTreeSet<u32> = index.query(&probe).into_iter().collect();
        let want: BTreeSet<u32> = entries.iter().filter(|(_, r)| r.intersects(&probe)).map(|(i, _)| *i).collect();
        ensure!(got == want, "probe {p}: {} hits vs {} by brute force", got.len(), want.len());
        hits += got.len();
    }
    let a: Vec<(u32, Rect)> = (0..500).map(|i| (i, random_rect(&mut rng))).collect();
    let b: Vec<(u32, Rect)> = (0..500).map(|i| (i, random_rect(&mut rng))).collect();
    let got: BTreeSet<(u32, u32)> = join_rects(&a, &b).into_iter().collect();
    let mut want = BTreeSet::new();
    for (ia, ra) in &a {
        for (ib, rb) in &b {
            if ra.intersects(rb) {
                want.insert((*ia, *ib));
            }
        }
    }
    ensure!(got == want, "join: {} pairs vs {} nested-loop pairs", got.len(), want.len());
    within(started, Duration::from_secs(5), "index checks")?;
    Ok(format!("{hits} probe hits and {} join pairs exact", got.len()))
}

fn shipped_space(name: &str) -> ParameterSpace {
    let path = format!("{}/../../spaces/{name}", env!("CARGO_MANIFEST_DIR"));
    ParameterSpace::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn c4_cardinality() -> Verdict {
    let c = shipped_space("table1c.json").cardinality().to_string();
    ensure!(c == "95781840", "table1c.json has {c} points");
    let a: u128 = shipped_space("table1a.json").cardinality().to_string().parse().unwrap();
    ensure!((10u128.pow(13)..=10u128.pow(14)).contains(&a), "table1a.json has {a} points");
    Ok(format!("table1c = {c}, table1a = {a}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn c5_convergence() -> Verdict {
    let started = Instant::now();
    // 11 values per dimension; the middle one encodes to u = 0.5, the optimum
    let dims = (0..6).map(|i| ParameterSpec::range(format!("x{i}"), 0.0, 1.0, 0.1)).collect();
    let space = Arc::new(ParameterSpace::new(dims).unwrap());
    let surface = |p: &ParameterPoint| {
        let u = space.encode_unit(p).unwrap();
        let f = 1.0 - u.iter().map(|x| (x - 0.5) * (x - 0.5)).sum::<f64>();
        EvaluationResult {
            point: p.clone(),
            quality: f,
            time_seconds: 0.0,
            time_source: TimeSource::AdapterReported,
            time_score: 1.0,
            scalar: f,
            error: None,
        }
    };
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for alg in [Algorithm::Ga, Algorithm::Nm, Algorithm::Pro, Algorithm::Boa, Algorithm::Random] {
        let bests: Vec<f64> = (0..10)
            .map(|seed| {
                let cfg = TuningConfig::new(alg, 100, seed);
                let out = tune_with(space.clone(), &cfg, None, &mut |_| {}, |pts| pts.iter().map(surface).collect())
                    .unwrap();
                assert!(out.executed <= 100);
                out.best.scalar
            })
            .collect();
        let m = median(bests);
        lines.push(format!("{alg} {m:.4}"));
        if alg != Algorithm::Random && m < 0.95 {
            failures.push(format!("{alg} median {m:.4} < 0.95"));
        }
    }
    let summary = format!("medians: {} (random is the baseline)", lines.join(", "));
    ensure!(failures.is_empty(), "{}; {summary}", failures.join("; "));
    within(started, Duration::from_secs(60), "convergence runs")?;
    Ok(summary)
}

fn synthetic_samples(n: usize, seed: u64, size: usize) -> Vec<Sample> {
    generate_dataset(n, seed, size, size)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| s.to_sample(format!("scene_{i:03}")))
        .collect()
}

fn synthetic_job(samples: Vec<Sample>, weights: Weights, config: TuningConfig) -> TuningJob {
    TuningJob {
        space: Arc::new(synthetic_space()),
        workflow: WorkflowSpec::Synthetic,
        samples,
        objective: ObjectiveSpec::new(weights),
        config,
        default_point: None,
    }
}

fn c6_budget_determinism() -> Verdict {
    let samples = synthetic_samples(3, 66, 48);
    let weights = Weights::new(0.8, 0.2).unwrap();
    let mut executed = Vec::new();
    for alg in Algorithm::TUNERS {
        let run = |workers| {
            let cfg = TuningConfig { workers, ..TuningConfig::new(alg, 100, 17) };
            synthetic_job(samples.clone(), weights, cfg).run().unwrap()
        };
        let (one, four) = (run(1), run(4));
        for out in [&one, &four] {
            ensure!(out.executed <= 100, "{alg}: {} evaluations with budget 100", out.executed);
            ensure!(out.history.len() == out.executed, "{alg}: history {} vs executed {}", out.history.len(), out.executed);
        }
        ensure!(one.best_point == four.best_point, "{alg}: best point differs between 1 and 4 workers");
        ensure!(one.best.scalar.to_bits() == four.best.scalar.to_bits(), "{alg}: best scalar differs");
        ensure!(one.history == four.history, "{alg}: history differs between 1 and 4 workers");
        executed.push(format!("{alg} {}", one.executed));
    }
    Ok(format!("executed: {}; workers 1 and 4 identical", executed.join(", ")))
}

fn c7_end_to_end() -> Verdict {
    let started = Instant::now();
    let samples = synthetic_samples(15, 77, 128);
    let space = synthetic_space();
    let mut miscalibrated = space.default_point().to_named_json(&space);
    miscalibrated["Blur"] = json!(3);
    miscalibrated["Threshold"] = json!(200);
    let mut job = synthetic_job(samples, Weights::new(0.8, 0.2).unwrap(), TuningConfig::new(Algorithm::Ga, 100, 7));
    job.default_point = Some(ParameterPoint::from_named_json(&space, &miscalibrated).unwrap());
    let out = job.run().unwrap();
    let default = out.default.as_ref().unwrap();
    ensure!(out.executed <= 100, "{} evaluations", out.executed);
    let ratio = out.best.quality / default.quality;
    let detail = format!(
        "object dice {:.3} -> {:.3} ({ratio:.2}x), time score {:.3} -> {:.3}",
        default.quality, out.best.quality, default.time_score, out.best.time_score
    );
    ensure!(ratio >= 1.2, "quality improvement below 1.2x: {detail}");
    ensure!(out.best.time_score > default.time_score, "time score did not improve: {detail}");
    within(started, Duration::from_secs(300), "end-to-end run")?;
    Ok(detail)
}

fn c8_scalarization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let objective = ObjectiveConfig::new(Weights::new(1.0, 0.0).unwrap(), 2.0, MetricKind::ObjectDice).unwrap();
    let point = ParameterPoint { values: vec![] };
    for h in 0..300 {
        let n = rng.random_range(1..60);
        // coarse qualities so ties are common
        let history: Vec<EvaluationResult> = (0..n)
            .map(|_| {
                let q = rng.random_range(0..=10) as f64 / 10.0;
                let t = rng.random_range(0.0..3.0);
                objective.evaluate(point.clone(), q, t, TimeSource::Measured).unwrap()
            })
            .collect();
        let by_scalar = argmax_first(history.iter().map(|r| r.scalar));
        let by_quality = argmax_first(history.iter().map(|r| r.quality));
        ensure!(by_scalar == by_quality, "history {h}: argmax {by_scalar:?} vs quality argmax {by_quality:?}");
    }
    for _ in 0..10_000 {
        let wq = rng.random_range(0..=20) as f64 / 20.0;
        let w = Weights::new(wq, 1.0 - wq).unwrap();
        let (q, ts) = (rng.random::<f64>(), rng.random::<f64>());
        let (dq, dt) = (rng.random::<f64>() * 0.5, rng.random::<f64>() * 0.5);
        let base = scalarize(&w, q, ts);
        ensure!(scalarize(&w, q + dq, ts) >= base, "not monotone in quality at {w:?}");
        ensure!(scalarize(&w, q, ts + dt) >= base, "not monotone in time score at {w:?}");
    }
    let sets: Vec<(f64, f64)> = table2_weight_sets().iter().map(|w| (w.quality, w.time)).collect();
    let want = vec![(1.0, 0.0), (0.5, 0.5), (2.0 / 3.0, 1.0 / 3.0), (0.8, 0.2)];
    ensure!(sets == want, "weight sets {sets:?}");
    Ok("argmax, monotonicity and the four weight sets hold".into())
}

fn c9_cross_validation() -> Verdict {
    let splits = monte_carlo_splits(15, 0.2, 10, 99).map_err(|e| e.to_string())?;
    ensure!(splits.len() == 10, "{} splits", splits.len());
    for (i, s) in splits.iter().enumerate() {
        ensure!(s.train.len() == 3 && s.test.len() == 12, "split {i} is {}/{}", s.train.len(), s.test.len());
        let all: BTreeSet<usize> = s.train.iter().chain(&s.test).copied().collect();
        ensure!(all == (0..15).collect(), "split {i} does not partition the 15 scenes");
    }
    ensure!(splits == monte_carlo_splits(15, 0.2, 10, 99).unwrap(), "splits differ for the same seed");

    let scenes = generate_grouped_dataset(5, 10, 31, 48, 48).map_err(|e| e.to_string())?;
    let groups = group_scenes(&scenes);
    let sizes: Vec<(String, usize)> = groups.iter().map(|(g, s)| (g.clone(), s.len())).collect();
    ensure!(sizes.iter().map(|(_, n)| *n).collect::<Vec<_>>() == [5, 10], "group sizes {sizes:?}");
    let mut cfg = StudyConfig::new(vec![Algorithm::Nm], 3, 2, 5);
    cfg.weights = vec![WeightSpec::parse("1,0").unwrap()];
    let report = grouped_xval(Arc::new(synthetic_space()), &WorkflowSpec::Synthetic, &groups, 0.2, &cfg)
        .map_err(|e| e.to_string())?;
    let mut shapes = Vec::new();
    for row in &report.rows {
        let shape: BTreeSet<(usize, usize)> = row
            .runs
            .iter()
            .map(|r| (r.train.as_ref().map_or(0, Vec::len), r.test.as_ref().map_or(0, Vec::len)))
            .collect();
        shapes.push(shape.into_iter().collect::<Vec<_>>());
    }
    ensure!(shapes == [vec![(1, 4)], vec![(2, 8)]], "grouped split shapes {shapes:?}");
    Ok("10 x 3/12 splits, deterministic; groups of 5 and 10 split (1,4) and (2,8)".into())
}

fn c10_service() -> Verdict {
    let state = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let server = common::Server::start(state.path());
    let addr = server.addr;

    let (code, first) = common::http(addr, "POST", "/tasks", Some(&common::slow_request(data.path(), 4)));
    ensure!(code == 202, "first submit returned {code}");
    let (code, second) = common::http(addr, "POST", "/tasks", Some(&common::slow_request(data.path(), 4)));
    ensure!(code == 202, "second submit returned {code}");
    let id = second["id"].as_str().unwrap_or_default().to_string();
    ensure!(!id.is_empty() && first["id"] != second["id"], "ids {first} {second}");

    let seen = common::poll_until_finished(addr, &id);
    ensure!(seen == ["queued", "running", "done"], "observed statuses {seen:?}");
    let (code, result) = common::http(addr, "GET", &format!("/tasks/{id}/result"), None);
    ensure!(code == 200, "result returned {code}");
    let executed = result["executed"].as_u64().unwrap();
    let history = result["history"].as_array().unwrap().len() as u64;
    ensure!(history == executed, "history {history} vs executed {executed}");

    let mut bad = common::slow_request(data.path(), 4);
    bad["weights"] = json!([0.6, 0.6]);
    let (code, _) = common::http(addr, "POST", "/tasks", Some(&bad));
    ensure!(code == 400, "weights summing to 1.2 returned {code}");
    let (code, _) = common::http(addr, "GET", "/tasks/00000000000000000000000000000000", None);
    ensure!(code == 404, "unknown id returned {code}");

    server.kill();
    let server = common::Server::start(state.path());
    let (code, again) = common::http(server.addr, "GET", &format!("/tasks/{id}/result"), None);
    ensure!(code == 200 && again == result, "after restart: {code}");
    Ok(format!("statuses {seen:?}, {executed} runs, result survived a kill and restart"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", c1_pixel_metrics),
        ("object dice index independence", c2_object_dice),
        ("spatial index exactness", c3_spatial_index),
        ("cardinality anchor", c4_cardinality),
        ("optimizer convergence", c5_convergence),
        ("budget and determinism", c6_budget_determinism),
        ("end-to-end improvement", c7_end_to_end),
        ("scalarization properties", c8_scalarization),
        ("cross-validation protocol", c9_cross_validation),
        ("service lifecycle", c10_service),
    ];
    // `cargo test -- --list` and similar harness flags are not supported
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}; {secs:.1}s)", i + 1);
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
