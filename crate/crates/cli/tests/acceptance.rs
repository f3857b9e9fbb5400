//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Pass criterion numbers as arguments to run a subset.
//!
//! The library properties (1, 2, 3, 7, 8, 10) call `bnslim` directly. The
//! table reproductions (4, 5, 6, 9) drive the `bnslim` binary on synthetic
//! data in a temporary directory.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bnslim::augment::{
    adjust_hsv, draw_angle, hsv_to_rgb, make_pipeline, random_shape_resize, rgb_to_hsv, rotate, AugmentConfig,
    HsvComponent, Image, Method, DEFAULT_SCALE_SET,
};
use bnslim::error::FormatError;
use bnslim::eval::{mean_average_precision, BoundingBox};
use bnslim::layers::gradcheck::{gradient_check, random_case, LayerKind, LayerUnderTest};
use bnslim::layers::BnParams;
use bnslim::model::{build_model, decode_model, encode_model, load_model, parse_description, save_model, Layer, ModelGraph};
use bnslim::prune::{apply_prune, collect_scales, compression_ratio, plan_prune, target_removals, PruneMethod};
use bnslim::rng::stream;
use bnslim::Tensor;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_bnslim");

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn(&Path) -> Check,
}

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let work = tempfile::tempdir().expect("temp dir");
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let all = [
        Criterion { id: 1, name: "gradient suite", limit: minutes(1), run: gradients },
        Criterion { id: 2, name: "pruning exactness", limit: minutes(1), run: pruning_exactness },
        Criterion { id: 3, name: "plan correctness", limit: None, run: plan_correctness },
        Criterion { id: 4, name: "model volume ordering", limit: minutes(10), run: volume_ordering },
        Criterion { id: 5, name: "latency and fine-tuned accuracy", limit: minutes(10), run: latency_and_accuracy },
        Criterion { id: 6, name: "sparsity effect", limit: minutes(5), run: sparsity_effect },
        Criterion { id: 7, name: "mAP oracle", limit: None, run: map_oracle },
        Criterion { id: 8, name: "augmentation suite", limit: None, run: augmentation },
        Criterion { id: 9, name: "ablation table", limit: minutes(15), run: ablation },
        Criterion { id: 10, name: "serialization", limit: None, run: serialization },
    ];
    let mut failed = 0;
    for c in all.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| (c.run)(work.path()))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = t.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(d), Some(limit)) if took > limit => Err(format!("{d}; took {took:.0?}, limit {limit:.0?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS {}: {d} [{:.1}s]", c.id, c.name, took.as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL {}: {d} [{:.1}s]", c.id, c.name, took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---- command-line helpers ----

fn bnslim(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("bnslim {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Rows of a CSV file keyed by header name.
fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let head = r.headers().map_err(|e| e.to_string())?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(head.iter().map(String::from).zip(rec.iter().map(String::from)).collect())
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or(f64::NAN)
}

fn file_len(path: PathBuf) -> u64 {
    fs::metadata(path).map(|m| m.len()).unwrap_or(0)
}

/// Toy pipeline directory for `seed`: data, sparse-trained `out/base.slim`
/// and the normal 0.5 prune. Built once and reused by criteria 4 and 5.
fn toy(work: &Path, seed: u64) -> Result<PathBuf, String> {
    let dir = work.join(format!("toy{seed}"));
    if dir.join("out/base-normal-0.5.slim").exists() {
        return Ok(dir);
    }
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let s = seed.to_string();
    bnslim(&dir, &["gen-data", "--out", "data", "--seed", &s, "--model-out", "model.toml"])?;
    bnslim(
        &dir,
        &[
            "sparse-train", "--model", "model.toml", "--data", "data", "--out", "out", "--name", "base", "--seed", &s,
            "--l1", "5e-3", "--epochs", "15", "--batch-size", "16", "--step-decay", "10,0.2",
        ],
    )?;
    bnslim(&dir, &["prune", "--input", "out/base.slim", "--method", "normal", "--ratio", "0.5"])?;
    Ok(dir)
}

// ---- 1 ----

fn gradients(_: &Path) -> Check {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for kind in LayerKind::ALL {
        for seed in 0..20 {
            let (layer, x) = random_case(kind, 1000 + seed);
            let check = gradient_check(&layer, &x, 1e-5).map_err(|e| e.to_string())?;
            ensure(check.within_tolerance, || {
                format!("{kind:?} seed {seed}: relative error {:.2e}", check.max_relative_error)
            })?;
            worst = worst.max(check.max_relative_error);
            cases += 1;
        }
    }
    for seed in 0..20 {
        let (LayerUnderTest::BatchNorm { params, .. }, x) = random_case(LayerKind::BatchNorm, 2000 + seed) else {
            unreachable!()
        };
        let layer = LayerUnderTest::BatchNorm { params, l1: 1e-2 };
        let check = gradient_check(&layer, &x, 1e-5).map_err(|e| e.to_string())?;
        ensure(check.within_tolerance, || format!("penalised batch norm seed {seed}"))?;
        worst = worst.max(check.max_relative_error);
        cases += 1;
    }
    Ok(format!("{cases} cases over {} layer kinds, worst relative error {worst:.2e}", LayerKind::ALL.len()))
}

// ---- 2 ----

fn cbr_net(widths: &[usize], padding: usize, input: usize, rng: &mut ChaCha8Rng) -> ModelGraph {
    let mut text = format!("input = [3, {input}, {input}]\nclasses = 5\nseed = 11\n");
    for w in widths {
        text += &format!("[[layers]]\nkind = \"cbr\"\nout = {w}\npadding = {padding}\n");
    }
    text += "[[layers]]\nkind = \"globalavgpool\"\n[[layers]]\nkind = \"linear\"\nout = 5\n";
    let mut m = build_model(&parse_description(&text).unwrap()).unwrap();
    for layer in &mut m.layers {
        if let Layer::BatchNorm(bn) = layer {
            let c = bn.channels();
            *bn = BnParams {
                scale: (0..c).map(|_| rng.random_range(0.2..1.5)).collect(),
                shift: (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
                running_mean: (0..c).map(|_| rng.random_range(-0.3..0.3)).collect(),
                running_var: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
                ..bn.clone()
            };
        }
    }
    m
}

fn prune_gap(padding: usize, side: usize, shift: impl Fn(usize) -> f32, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = cbr_net(&[8, 8, 8], padding, side, &mut rng);
    let bns: Vec<usize> = m.batchnorm_layers().map(|(i, _)| i).collect();
    for (k, (b, c)) in [(0, 1), (0, 5), (1, 2), (2, 7)].into_iter().enumerate() {
        if let Layer::BatchNorm(bn) = &mut m.layers[bns[b]] {
            bn.scale[c] = 0.0;
            bn.shift[c] = shift(k);
        }
    }
    let plan = plan_prune(&collect_scales(&m).unwrap(), 4.0 / 24.0, PruneMethod::Normal, &m).map_err(|e| e.to_string())?;
    ensure(plan.removed() == 4, || format!("plan removed {} channels", plan.removed()))?;
    let pruned = apply_prune(&m, &plan).map_err(|e| e.to_string())?;
    let mut gap = 0.0f64;
    for _ in 0..100 {
        let x = Tensor::randn(&[1, 3, side, side], 1.0, &mut rng);
        gap = gap.max(m.forward(&x).unwrap().max_abs_diff(&pruned.forward(&x).unwrap()));
    }
    Ok(gap)
}

fn pruning_exactness(_: &Path) -> Check {
    let negative = prune_gap(1, 10, |k| -0.25 * k as f32, 1)?;
    let positive = prune_gap(0, 12, |k| 0.2 + 0.3 * k as f32, 3)?;
    ensure(negative <= 1e-6 && positive <= 1e-6, || {
        format!("max output gap {negative:.2e} (shift <= 0), {positive:.2e} (shift > 0, no padding)")
    })?;
    Ok(format!(
        "100 inputs each, max gap {negative:.2e} (shift <= 0, padded), {positive:.2e} (shift > 0, unpadded)"
    ))
}

// ---- 3 ----

fn random_scaled_model(rng: &mut ChaCha8Rng) -> ModelGraph {
    let mut text = "input = [3, 4, 4]\nclasses = 3\n".to_string();
    for _ in 0..rng.random_range(1..=4) {
        let w = if rng.random_bool(0.4) { rng.random_range(1..8) } else { 8 * rng.random_range(1..=4) };
        text += &format!("[[layers]]\nkind = \"cbr\"\nout = {w}\npadding = 1\n");
    }
    text += "[[layers]]\nkind = \"globalavgpool\"\n[[layers]]\nkind = \"linear\"\nout = 3\n";
    let mut m = build_model(&parse_description(&text).unwrap()).unwrap();
    for layer in &mut m.layers {
        if let Layer::BatchNorm(bn) = layer {
            let c = bn.channels();
            bn.scale = (0..c).map(|_| rng.random_range(-20i32..=20) as f32 / 16.0).collect();
        }
    }
    m
}

/// Stable ascending sort of |scale| in declaration order, first k removed,
/// each emptied layer gets its latest-ranked victim back.
fn sort_oracle(m: &ModelGraph, ratio: f64) -> (Vec<Vec<bool>>, usize) {
    let mut all = vec![];
    let mut keep = vec![];
    for (ord, (_, bn)) in m.batchnorm_layers().enumerate() {
        keep.push(vec![true; bn.channels()]);
        all.extend(bn.scale.iter().enumerate().map(|(c, s)| (s.abs(), ord, c)));
    }
    let k = (ratio * all.len() as f64 + 1e-9).floor() as usize;
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut last = vec![None; keep.len()];
    for &(_, l, c) in &all[..k] {
        keep[l][c] = false;
        last[l] = Some(c);
    }
    let mut restored = 0;
    for (l, mask) in keep.iter_mut().enumerate() {
        if mask.iter().all(|x| !x) {
            mask[last[l].unwrap()] = true;
            restored += 1;
        }
    }
    (keep, restored)
}

fn plan_correctness(_: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut restorations = 0;
    let mut checked_layers = 0;
    for trial in 0..500 {
        let m = random_scaled_model(&mut rng);
        let ratio = if trial % 10 == 0 { 0.99 } else { rng.random_range(0.0..1.0) };
        let scales = collect_scales(&m).unwrap();
        let normal = plan_prune(&scales, ratio, PruneMethod::Normal, &m).map_err(|e| e.to_string())?;
        let (keep, restored) = sort_oracle(&m, ratio);
        let masks: Vec<Vec<bool>> = normal.layers.iter().map(|l| l.keep.clone()).collect();
        ensure(masks == keep, || format!("trial {trial}: normal masks differ from the oracle"))?;
        ensure(normal.removed() == target_removals(ratio, normal.total()) - restored, || {
            format!("trial {trial}: removed {} channels", normal.removed())
        })?;
        restorations += restored;

        let regular = plan_prune(&scales, ratio, PruneMethod::Regular, &m).map_err(|e| e.to_string())?;
        for (l, r) in regular.layers.iter().enumerate() {
            if r.keep.len() >= 8 {
                checked_layers += 1;
                ensure(r.survivors() % 8 == 0, || {
                    format!("trial {trial} layer {l}: {} regular survivors", r.survivors())
                })?;
            }
        }
    }
    Ok(format!(
        "500 normal plans equal the oracle ({restorations} guard restorations); {checked_layers} regular layers of width >= 8 all multiples of 8"
    ))
}

// ---- 4 ----

fn volume_ordering(work: &Path) -> Check {
    let pct = |before: f64, after: f64| (1000.0 * compression_ratio(before, after)).floor() / 10.0;
    let table = (pct(471.6, 329.8), pct(471.6, 242.3));
    ensure(table == (69.9, 51.3), || format!("471.6 -> 329.8 / 242.3 gives {table:?}"))?;

    let dir = toy(work, 0)?;
    for (m, r) in [("normal", "0.3"), ("regular", "0.3"), ("regular", "0.5")] {
        bnslim(&dir, &["prune", "--input", "out/base.slim", "--method", m, "--ratio", r])?;
    }
    let bytes = |stem: &str| file_len(dir.join(format!("out/{stem}.slim")));
    let base = bytes("base");
    let [n3, n5, r3, r5] = ["normal-0.3", "normal-0.5", "regular-0.3", "regular-0.5"].map(|s| bytes(&format!("base-{s}")));
    let summary = format!("baseline {base}, regular {r3}/{r5}, normal {n3}/{n5} bytes at 0.3/0.5");
    ensure(base > r3 && r3 > n3 && base > r5 && r5 > n5, || format!("method ordering broken: {summary}"))?;
    ensure(r3 > r5 && n3 > n5, || format!("not decreasing in ratio: {summary}"))?;

    let report = read_csv(&dir.join("out/base-normal-0.3.csv"))?;
    let reported = num(&report[0], "compressing_ratio");
    let expect = 100.0 * compression_ratio(base as f64, n3 as f64);
    ensure((reported - expect).abs() < 0.006, || format!("report says {reported}, bytes give {expect:.4}"))?;
    Ok(format!("{summary}; 471.6 -> 329.8 / 242.3 gives 69.9% / 51.3%"))
}

// ---- 5 ----

fn latency_and_accuracy(work: &Path) -> Check {
    let mut lines = vec![];
    let mut close = 0;
    for seed in 0..3u64 {
        let dir = toy(work, seed)?;
        let s = seed.to_string();
        bnslim(
            &dir,
            &["finetune", "--input", "out/base-normal-0.5.slim", "--data", "data", "--seed", &s, "--batch-size", "16"],
        )?;
        bnslim(
            &dir,
            &["bench", "--baseline", "out/base.slim", "--models", "out/base-normal-0.5.slim", "--reps", "500", "--warmup", "50", "--out", "bench.csv"],
        )?;
        let bench = read_csv(&dir.join("bench.csv"))?;
        let (lat_base, lat_pruned) = (num(&bench[0], "latency_mean_s"), num(&bench[1], "latency_mean_s"));
        let accuracy = |model: &str| -> Result<f64, String> {
            let csv = dir.join(format!("eval-{model}.csv"));
            bnslim(&dir, &["eval", "--input", &format!("out/{model}.slim"), "--data", "data", "--out", csv.to_str().unwrap()])?;
            Ok(num(&read_csv(&csv)?[0], "accuracy"))
        };
        let (acc_base, acc_ft) = (accuracy("base")?, accuracy("base-normal-0.5-ft")?);
        lines.push(format!(
            "seed {seed}: {:.3} -> {:.3} ms, {acc_base:.2} -> {acc_ft:.2}%",
            1e3 * lat_base,
            1e3 * lat_pruned
        ));
        ensure(lat_pruned < lat_base, || format!("pruned model not faster: {}", lines.join("; ")))?;
        if acc_base - acc_ft <= 3.0 {
            close += 1;
        }
    }
    ensure(close >= 2, || format!("only {close}/3 seeds within 3 points: {}", lines.join("; ")))?;
    Ok(format!("{}; {close}/3 within 3 points", lines.join("; ")))
}

// ---- 6 ----

fn sparsity_effect(work: &Path) -> Check {
    let dir = work.join("sparsity");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    bnslim(&dir, &["gen-data", "--out", "data", "--train", "2000", "--test", "100", "--model-out", "model.toml"])?;
    let common = ["--model", "model.toml", "--data", "data", "--out", "out", "--epochs", "20", "--batch-size", "8", "--lr", "0.1", "--seed", "0"];
    bnslim(&dir, &[&["train", "--name", "plain", "--l1", "0"][..], &common].concat())?;
    bnslim(&dir, &[&["sparse-train", "--name", "sparse", "--l1", "1e-4"][..], &common].concat())?;
    let profile = |name: &str| -> Result<(f32, usize), String> {
        let m = load_model(dir.join(format!("out/{name}.slim"))).map_err(|e| e.to_string())?;
        let mut s: Vec<f32> = m.batchnorm_layers().flat_map(|(_, bn)| bn.scale.iter().map(|v| v.abs())).collect();
        s.sort_by(f32::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Ok((median, s.iter().filter(|&&v| v < 0.01).count()))
    };
    let (med0, low0) = profile("plain")?;
    let (med1, low1) = profile("sparse")?;
    let summary = format!("median |scale| {med0:.3} -> {med1:.3}, channels below 0.01 {low0} -> {low1}");
    ensure(med1 < med0 && low1 > low0, || summary.clone())?;
    Ok(summary)
}

// ---- 7 ----

type Q = Ratio<i128>;

#[derive(Clone, Copy)]
struct IBox {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
    class: usize,
    conf: i64,
}

fn random_ibox(rng: &mut ChaCha8Rng, classes: usize) -> IBox {
    let (x0, y0) = (rng.random_range(0..12), rng.random_range(0..12));
    IBox {
        x0,
        y0,
        x1: x0 + rng.random_range(1..=6),
        y1: y0 + rng.random_range(1..=6),
        class: rng.random_range(0..classes),
        conf: rng.random_range(1..=6),
    }
}

fn exact_iou(a: &IBox, b: &IBox) -> Q {
    let w = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0);
    let h = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0);
    let area = |x: &IBox| (x.x1 - x.x0) * (x.y1 - x.y0);
    Q::new((w * h) as i128, (area(a) + area(b) - w * h) as i128)
}

/// Enumerates the ranked list in rational arithmetic: greedy best-IoU
/// matching, then AP as the sum over recall steps of the best precision at
/// or beyond that step.
fn exact_ap(preds: &[Vec<IBox>], gts: &[Vec<IBox>], class: usize, thr: Q) -> Option<Q> {
    let n_gt = gts.iter().flatten().filter(|g| g.class == class).count();
    if n_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(i64, usize, usize)> = vec![];
    for (img, ps) in preds.iter().enumerate() {
        ranked.extend(ps.iter().enumerate().filter(|(_, p)| p.class == class).map(|(k, p)| (-p.conf, img, k)));
    }
    ranked.sort();
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut curve = vec![];
    let mut tp = 0i128;
    for (k, &(_, img, pos)) in ranked.iter().enumerate() {
        let p = &preds[img][pos];
        let mut best: Option<(usize, Q)> = None;
        for (j, g) in gts[img].iter().enumerate() {
            if g.class != class || used[img][j] {
                continue;
            }
            let o = exact_iou(p, g);
            if o >= thr && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            used[img][j] = true;
            tp += 1;
        }
        curve.push((Q::new(tp, n_gt as i128), Q::new(tp, k as i128 + 1)));
    }
    let mut ap = Q::from_integer(0);
    let mut prev = Q::from_integer(0);
    for k in 0..curve.len() {
        if curve[k].0 > prev {
            ap += (curve[k].0 - prev) * curve[k..].iter().map(|c| c.1).max().unwrap();
            prev = curve[k].0;
        }
    }
    Some(ap)
}

fn map_oracle(_: &Path) -> Check {
    let to_f = |q: Q| *q.numer() as f64 / *q.denom() as f64;
    let as_box = |b: &IBox| {
        BoundingBox::prediction(b.x0 as f32, b.y0 as f32, b.x1 as f32, b.y1 as f32, b.class, b.conf as f32 / 8.0)
    };
    let mut worst = 0.0f64;
    let mut evaluations = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(1..=3);
        let (mut gts, mut preds) = (vec![], vec![]);
        for _ in 0..rng.random_range(1..=4) {
            let g: Vec<IBox> = (0..rng.random_range(0..=5)).map(|_| random_ibox(&mut rng, classes)).collect();
            let mut p = vec![];
            for b in &g {
                let dx = rng.random_range(-1..=1);
                if rng.random_bool(0.8) && b.x0 + dx < b.x1 {
                    p.push(IBox { x0: b.x0 + dx, conf: rng.random_range(1..=6), ..*b });
                }
            }
            while p.len() < 5 && rng.random_bool(0.5) {
                p.push(random_ibox(&mut rng, classes));
            }
            gts.push(g);
            preds.push(p);
        }
        let fp: Vec<Vec<BoundingBox>> = preds.iter().map(|v| v.iter().map(as_box).collect()).collect();
        let fg: Vec<Vec<BoundingBox>> = gts.iter().map(|v| v.iter().map(as_box).collect()).collect();
        for thr in [Q::new(1, 2), Q::new(3, 4), Q::new(1, 10)] {
            let got = mean_average_precision(&fp, &fg, to_f(thr));
            let aps: Vec<(usize, Q)> = (0..classes).filter_map(|c| exact_ap(&preds, &gts, c, thr).map(|a| (c, a))).collect();
            let want = if aps.is_empty() {
                Q::from_integer(0)
            } else {
                aps.iter().map(|a| a.1).sum::<Q>() / Q::from_integer(aps.len() as i128)
            };
            ensure(got.per_class.len() == aps.len(), || format!("seed {seed}: class set differs"))?;
            for (c, ap) in &aps {
                worst = worst.max((got.per_class[c] - to_f(*ap)).abs());
            }
            worst = worst.max((got.map - to_f(want)).abs());
            ensure(worst <= 1e-12, || format!("seed {seed}: evaluator off by {worst:.2e}"))?;
            evaluations += 1;
        }
    }
    Ok(format!("{evaluations} instances over 200 seeds, max deviation from exact {worst:.1e}"))
}

// ---- 8 ----

fn random_image(h: usize, w: usize, rng: &mut impl Rng) -> Image {
    Image::from_rgb(h, w, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn max_diff(a: &Image, b: &Image) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn augmentation(_: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut identity = 0.0f32;
    for _ in 0..50 {
        let img = random_image(7, 9, &mut rng);
        identity = identity.max(max_diff(&rotate(&img, 0.0), &img));
        for c in [HsvComponent::Exposure, HsvComponent::Saturation, HsvComponent::Hue] {
            identity = identity.max(max_diff(&adjust_hsv(&img, c, 1.0).map_err(|e| e.to_string())?, &img));
        }
    }
    ensure(identity <= 1e-6, || format!("identity error {identity:.2e}"))?;

    let img = random_image(64, 64, &mut rng);
    let round_trip = max_diff(&hsv_to_rgb(&rgb_to_hsv(&img)), &img);
    ensure(round_trip <= 1e-5, || format!("HSV round trip error {round_trip:.2e}"))?;

    let cfg = AugmentConfig::default();
    let (mut lo, mut hi) = (f32::MAX, f32::MIN);
    for seed in 0..1000u64 {
        let a = draw_angle(cfg.angle_range_deg, &mut stream(seed, &[0])).map_err(|e| e.to_string())?;
        (lo, hi) = (lo.min(a), hi.max(a));
    }
    ensure(lo >= -5.0 && hi <= 5.0, || format!("angles span [{lo}, {hi}]"))?;
    let tiny = vec![Image::black(2, 3).unwrap()];
    let mut sizes = std::collections::BTreeSet::new();
    for seed in 0..300u64 {
        let (_, side) = random_shape_resize(&tiny, &cfg.scale_set, &mut stream(seed, &[1])).map_err(|e| e.to_string())?;
        sizes.insert(side);
    }
    ensure(sizes.iter().all(|s| DEFAULT_SCALE_SET.contains(s)), || format!("sizes {sizes:?}"))?;

    let batch: Vec<Image> = (0..6).map(|_| random_image(12, 10, &mut rng)).collect();
    let full = AugmentConfig { scale_set: vec![8, 12, 16], seed: 77, ..AugmentConfig::with_methods(&Method::ALL) };
    let a = make_pipeline(full.clone()).map_err(|e| e.to_string())?;
    let b = make_pipeline(full).map_err(|e| e.to_string())?;
    for k in 0..5 {
        ensure(a.apply_batch(&batch, k).unwrap() == b.apply_batch(&batch, k).unwrap(), || {
            format!("pipeline differs on batch {k}")
        })?;
    }
    Ok(format!(
        "identity error {identity:.1e}, round trip {round_trip:.1e}, angles in [{lo:.2}, {hi:.2}], sizes {sizes:?}, pipeline deterministic"
    ))
}

// ---- 9 ----

fn ablation(work: &Path) -> Check {
    const ROWS: [&str; 7] = ["baseline", "shape", "angle", "saturation", "exposure", "hue", "cumulative"];
    let mut wins: BTreeMap<&str, usize> = BTreeMap::new();
    let mut lines = vec![];
    for seed in 0..3u64 {
        let dir = work.join(format!("ablate{seed}"));
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let s = seed.to_string();
        bnslim(
            &dir,
            &[
                "gen-data", "--out", "data", "--seed", &s, "--size", "24", "--train", "120", "--test", "1200",
                "--model-out", "model.toml",
            ],
        )?;
        bnslim(
            &dir,
            &[
                "ablate", "--model", "model.toml", "--data", "data", "--out", "ablation.csv", "--seed", &s, "--epochs",
                "80", "--batch-size", "16", "--step-decay", "53,0.2",
            ],
        )?;
        let rows = read_csv(&dir.join("ablation.csv"))?;
        let names: Vec<&str> = rows.iter().map(|r| r["approach"].as_str()).collect();
        ensure(names == ROWS, || format!("seed {seed}: rows {names:?}"))?;
        let base = num(&rows[0], "accuracy");
        for r in &rows {
            let delta = num(r, "delta");
            ensure((delta - (num(r, "accuracy") - base)).abs() < 1e-9, || format!("seed {seed}: bad delta in {r:?}"))?;
        }
        ensure(rows[0]["delta"] == "+0.00" && rows[0]["cumulative_delta"] == "+0.00", || {
            format!("seed {seed}: baseline row {:?}", rows[0])
        })?;
        ensure(rows[1]["cumulative_delta"] == rows[1]["delta"] && rows[6]["cumulative_delta"] == rows[6]["delta"], || {
            format!("seed {seed}: cumulative column inconsistent")
        })?;
        for r in &rows[1..] {
            if num(r, "delta") > 0.0 {
                *wins.entry(ROWS[ROWS.iter().position(|n| *n == r["approach"]).unwrap()]).or_default() += 1;
            }
        }
        lines.push(format!(
            "seed {seed}: baseline {base:.2}, {}",
            rows[1..].iter().map(|r| format!("{} {}", r["approach"], r["delta"])).collect::<Vec<_>>().join(" ")
        ));
    }
    let always: Vec<&str> = wins.iter().filter(|(_, &n)| n == 3).map(|(k, _)| *k).collect();
    ensure(!always.is_empty(), || format!("no configuration improves on every seed; {}", lines.join("; ")))?;
    Ok(format!("improves on all 3 seeds: {}; {}", always.join(", "), lines.join("; ")))
}

// ---- 10 ----

fn random_model(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.random_range(6..=12);
    let classes = rng.random_range(2..=7);
    let mut text = format!("input = [3, {side}, {side}]\nclasses = {classes}\nseed = {seed}\n");
    for i in 0..rng.random_range(1..=3) {
        let kernel = if rng.random_bool(0.5) { 3 } else { 1 };
        text += &format!("[[layers]]\nkind = \"cbr\"\nout = {}\nkernel = {kernel}\npadding = 1\n", rng.random_range(1..=13));
        if i == 0 && rng.random_bool(0.5) {
            text += "[[layers]]\nkind = \"maxpool\"\nsize = 2\n";
        }
    }
    text += &format!("[[layers]]\nkind = \"globalavgpool\"\n[[layers]]\nkind = \"linear\"\nout = {classes}\n");
    let mut m = build_model(&parse_description(&text).unwrap()).unwrap();
    for p in m.params_mut() {
        p.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    }
    if seed % 2 == 1 {
        let method = if seed % 4 == 1 { PruneMethod::Normal } else { PruneMethod::Regular };
        let plan = plan_prune(&collect_scales(&m).unwrap(), rng.random_range(0.1..0.8), method, &m).unwrap();
        m = apply_prune(&m, &plan).unwrap();
    }
    m
}

fn serialization(work: &Path) -> Check {
    let dir = work.join("models");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut ragged = 0;
    for seed in 0..50 {
        let m = random_model(seed);
        let bytes = encode_model(&m);
        let path = dir.join(format!("m{seed}.slim"));
        save_model(&m, &path).map_err(|e| e.to_string())?;
        let loaded = load_model(&path).map_err(|e| e.to_string())?;
        ensure(loaded == m && encode_model(&loaded) == bytes, || format!("seed {seed}: round trip differs"))?;
        ensure(fs::read(&path).unwrap() == bytes, || format!("seed {seed}: file differs from encoding"))?;
        if seed % 2 == 1 && m.batchnorm_channel_counts().iter().any(|c| c % 8 != 0) {
            ragged += 1;
        }
    }
    ensure(ragged >= 10, || format!("only {ragged} pruned models with irregular widths"))?;

    let bytes = encode_model(&random_model(3));
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    ensure(matches!(decode_model(&bad), Err(FormatError::BadMagic)), || "flipped magic not BadMagic".into())?;
    for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
        ensure(matches!(decode_model(&bytes[..cut]), Err(FormatError::Truncated { .. })), || {
            format!("cut at {cut} not Truncated")
        })?;
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() - 20] ^= 1;
    ensure(matches!(decode_model(&flipped), Err(FormatError::ChecksumMismatch { .. })), || {
        "flipped body bit not ChecksumMismatch".into()
    })?;
    Ok(format!("50 models byte-identical ({ragged} pruned to irregular widths); bad magic, truncation and checksum errors distinct"))
}
