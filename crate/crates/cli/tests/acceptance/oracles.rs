use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointseg::cluster::Instance;
use pointseg::heads::chamfer as chamfer_distance;
use pointseg::metrics::{acc_seg, ConfusionMatrix};
use pointseg::scene::{read_label_bin, read_point_bin, write_label_bin, write_point_bin};
use pointseg::Matrix;

use crate::Outcome;

fn random_set(rng: &mut ChaCha8Rng) -> Matrix {
    let n = rng.random_range(1..40);
    let scale = [0.01, 1.0, 100.0][rng.random_range(0..3)];
    Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.random_range(-scale..scale)).collect())
}

// Same reduction order as the implementation: per row a sequential min,
// then a sequential sum divided by the row count, both directions added.
fn brute_chamfer(a: &Matrix, b: &Matrix) -> f64 {
    let directed = |x: &Matrix, y: &Matrix| {
        let mut total = 0.0;
        for i in 0..x.rows() {
            let mut best = f64::INFINITY;
            for j in 0..y.rows() {
                let mut d = 0.0;
                for k in 0..3 {
                    let t = x.get(i, k) - y.get(j, k);
                    d += t * t;
                }
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / x.rows() as f64
    };
    directed(a, b) + directed(b, a)
}

pub fn chamfer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut exact, mut self_zero, mut symmetric) = (0, 0, 0);
    let pairs = 1000;
    for _ in 0..pairs {
        let a = random_set(&mut rng);
        let b = random_set(&mut rng);
        let ab = chamfer_distance(&a, &b).unwrap();
        exact += usize::from(ab.to_bits() == brute_chamfer(&a, &b).to_bits());
        self_zero += usize::from(chamfer_distance(&a, &a).unwrap() == 0.0);
        symmetric += usize::from(ab.to_bits() == chamfer_distance(&b, &a).unwrap().to_bits());
    }
    Outcome {
        pass: exact == pairs && self_zero == pairs && symmetric == pairs,
        detail: format!(
            "{exact}/{pairs} bit-exact vs brute force, {self_zero}/{pairs} chamfer(A,A)=0, {symmetric}/{pairs} symmetric"
        ),
    }
}

struct Triple {
    classes: usize,
    gt: Vec<usize>,
    pred: Vec<usize>,
    instances: Vec<Instance>,
}

fn random_triple(rng: &mut ChaCha8Rng) -> Triple {
    let classes = rng.random_range(2..7);
    let n = rng.random_range(20..300);
    let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let noise = rng.random_range(0.0..0.7);
    let pred: Vec<usize> = gt
        .iter()
        .map(|&g| if rng.random_bool(noise) { rng.random_range(0..classes) } else { g })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut instances = Vec::new();
    let mut rest = &order[..rng.random_range(0..n)];
    while !rest.is_empty() {
        let take = rng.random_range(1..=rest.len().min(25));
        let mut points = rest[..take].to_vec();
        points.sort_unstable();
        instances.push(Instance {
            class_id: gt[points[0]] as u16,
            points,
            voxels: vec![],
        });
        rest = &rest[take..];
    }
    Triple {
        classes,
        gt,
        pred,
        instances,
    }
}

pub fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = Vec::new();
    let triples = 50;
    for k in 0..triples {
        let t = random_triple(&mut rng);
        let m = ConfusionMatrix::from_labels(t.classes, &t.gt, &t.pred).unwrap();
        let mut ious = Vec::new();
        for c in 0..t.classes {
            let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
            for (&g, &p) in t.gt.iter().zip(&t.pred) {
                match (g == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fnn += 1,
                    _ => {}
                }
            }
            if (m.true_positives(c), m.false_positives(c), m.false_negatives(c)) != (tp, fp, fnn) {
                mismatches.push(format!("triple {k} class {c} counts"));
            }
            let denom = tp + fp + fnn;
            let iou = (denom > 0).then(|| tp as f64 / denom as f64);
            if m.iou(c).unwrap() != iou {
                mismatches.push(format!("triple {k} class {c} IoU"));
            }
            ious.extend(iou);
        }
        let miou = ious.iter().sum::<f64>() / ious.len() as f64;
        if m.miou().unwrap() != miou {
            mismatches.push(format!("triple {k} mIoU"));
        }
        for th in [0.5, 0.8] {
            let report = acc_seg(&t.pred, &t.instances, t.classes, th).unwrap();
            for c in 0..t.classes {
                let objects: Vec<&Instance> = t.instances.iter().filter(|i| i.class_id as usize == c).collect();
                let correct = objects
                    .iter()
                    .filter(|o| {
                        let hits = o.points.iter().filter(|&&p| t.pred[p] == c).count();
                        hits as f64 / o.points.len() as f64 >= th
                    })
                    .count();
                let r = &report.classes[c];
                if (r.correct, r.total) != (correct, objects.len()) {
                    mismatches.push(format!("triple {k} class {c} Acc_seg@{th}"));
                }
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: format!(
            "{triples} random triples, TP/FP/FN, IoU, mIoU and Acc_seg at t=0.5 and t=0.8 vs recount: {} mismatches {:?}",
            mismatches.len(),
            mismatches.iter().take(5).collect::<Vec<_>>()
        ),
    }
}

pub fn formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let payloads = 1000;
    let (mut bins, mut labels) = (0, 0);
    for _ in 0..payloads {
        let n = rng.random_range(0..200);
        let mut bin = Vec::with_capacity(n * 16);
        for _ in 0..n * 4 {
            let v = f32::from_bits(rng.random());
            let v = if v.is_finite() { v } else { rng.random_range(-1e6f32..1e6) };
            bin.extend_from_slice(&v.to_le_bytes());
        }
        bins += usize::from(read_point_bin(&bin).map(|c| write_point_bin(&c)).ok() == Some(bin));
        let label: Vec<u8> = (0..n * 4).map(|_| rng.random()).collect();
        labels += usize::from(read_label_bin(&label).map(|l| write_label_bin(&l)).ok() == Some(label));
    }
    let mut rejected = 0;
    let bad_lengths = [1usize, 3, 15, 17, 33];
    for &len in &bad_lengths {
        rejected += usize::from(read_point_bin(&vec![0u8; len]).is_err());
        rejected += usize::from(read_label_bin(&vec![0u8; len]).is_err());
    }
    Outcome {
        pass: bins == payloads && labels == payloads && rejected == 2 * bad_lengths.len(),
        detail: format!(
            ".bin {bins}/{payloads} and .label {labels}/{payloads} bit-exact round trips, {rejected}/{} malformed lengths rejected",
            2 * bad_lengths.len()
        ),
    }
}
