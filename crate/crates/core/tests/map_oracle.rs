//! The evaluator against an exact-arithmetic enumeration of the
//! precision/recall curve on integer-coordinate boxes.

use bnslim::eval::{mean_average_precision, BoundingBox};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

fn exact_iou(a: &IBox, b: &IBox) -> Q {
    let w = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0);
    let h = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0);
    let inter = w * h;
    let area = |x: &IBox| (x.x1 - x.x0) * (x.y1 - x.y0);
    Q::new(inter as i128, (area(a) + area(b) - inter) as i128)
}

fn random_box(rng: &mut ChaCha8Rng, classes: usize) -> IBox {
    let x0 = rng.random_range(0..12);
    let y0 = rng.random_range(0..12);
    IBox {
        x0,
        y0,
        x1: x0 + rng.random_range(1..=6),
        y1: y0 + rng.random_range(1..=6),
        class: rng.random_range(0..classes),
        // Few distinct confidences so ranking ties are common.
        conf: rng.random_range(1..=6),
    }
}

/// Precision at every recall level, then AP as the sum of recall steps
/// times the best precision at or beyond that step.
fn oracle_ap(preds: &[Vec<IBox>], gts: &[Vec<IBox>], class: usize, thr: Q) -> Option<Q> {
    let n_gt = gts.iter().flatten().filter(|g| g.class == class).count();
    if n_gt == 0 {
        return None;
    }
    let mut ranked = vec![];
    for (img, ps) in preds.iter().enumerate() {
        for (pos, p) in ps.iter().enumerate() {
            if p.class == class {
                ranked.push((-p.conf, img, pos));
            }
        }
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
    let mut prev_recall = Q::from_integer(0);
    for k in 0..curve.len() {
        let (recall, _) = curve[k];
        if recall > prev_recall {
            let best = curve[k..].iter().map(|c| c.1).max().unwrap();
            ap += (recall - prev_recall) * best;
            prev_recall = recall;
        }
    }
    Some(ap)
}

fn to_f32(b: &IBox) -> BoundingBox {
    BoundingBox::prediction(b.x0 as f32, b.y0 as f32, b.x1 as f32, b.y1 as f32, b.class, b.conf as f32 / 8.0)
}

#[test]
fn matches_exact_enumeration_on_200_seeds() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(1..=3);
        let images = rng.random_range(1..=4);
        let mut gts = vec![];
        let mut preds = vec![];
        for _ in 0..images {
            let g: Vec<IBox> = (0..rng.random_range(0..=5)).map(|_| random_box(&mut rng, classes)).collect();
            // Predictions are jittered copies of ground truth plus clutter.
            let mut p = vec![];
            for b in &g {
                let dx = rng.random_range(-1..=1);
                if rng.random_bool(0.8) && b.x0 + dx < b.x1 {
                    p.push(IBox {
                        x0: b.x0 + dx,
                        conf: rng.random_range(1..=6),
                        ..*b
                    });
                }
            }
            while p.len() < 5 && rng.random_bool(0.5) {
                p.push(random_box(&mut rng, classes));
            }
            gts.push(g);
            preds.push(p);
        }
        for thr in [Q::new(1, 2), Q::new(3, 4), Q::new(1, 10)] {
            let got = mean_average_precision(
                &preds.iter().map(|v| v.iter().map(to_f32).collect()).collect::<Vec<_>>(),
                &gts.iter().map(|v| v.iter().map(to_f32).collect()).collect::<Vec<_>>(),
                *thr.numer() as f64 / *thr.denom() as f64,
            );
            let aps: Vec<(usize, Q)> = (0..classes)
                .filter_map(|c| oracle_ap(&preds, &gts, c, thr).map(|ap| (c, ap)))
                .collect();
            let want = if aps.is_empty() {
                Q::from_integer(0)
            } else {
                aps.iter().map(|a| a.1).sum::<Q>() / Q::from_integer(aps.len() as i128)
            };
            let as_f64 = |q: Q| *q.numer() as f64 / *q.denom() as f64;
            assert_eq!(got.per_class.len(), aps.len(), "seed {seed}");
            for (c, ap) in &aps {
                assert!((got.per_class[c] - as_f64(*ap)).abs() <= 1e-12, "seed {seed} class {c}");
            }
            assert!((got.map - as_f64(want)).abs() <= 1e-12, "seed {seed}");
        }
    }
}
