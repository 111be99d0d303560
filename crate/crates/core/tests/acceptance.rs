//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hiercl::augment::build_training_pool;
use hiercl::corpus::{split_sections, Provenance, RelationExample};
use hiercl::encoder::SentenceEncoder;
use hiercl::evaluation::{score_labels, EvalReport};
use hiercl::hierarchy::{are_sisters, Level, SenseHierarchy, SenseLabel, Version};
use hiercl::losses::{
    cross_entropy, cross_entropy_with_grad, hier_contrastive, hier_contrastive_with_grad,
    supcon_reference, ClassifierHead,
};
use hiercl::pairing::{build_pair_selection, PairSelection, Strategy, StrategyName};
use hiercl::synth::generate;
use hiercl::trainer::{
    loss_and_grad, sweep_beta_seeds, train, training_pool, write_jsonl, TrainConfig, Trainer,
};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("pair-selection oracle", pair_selection_oracle),
        ("loss oracle", loss_oracle),
        ("gradient check", gradient_check),
        ("beta = 0 reduction", beta_zero_reduction),
        ("augmentation counting", augmentation_counting),
        ("sister-negative invariant", sister_negative_invariant),
        ("scaled-down effect direction", effect_direction),
        ("metrics oracle", metrics_oracle),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} [{name}]: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({detail}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pdtb3_terminals() -> Vec<SenseLabel> {
    SenseHierarchy::pdtb3().terminals().cloned().collect()
}

fn random_batch(rng: &mut ChaCha8Rng, pool: &[SenseLabel], max: usize) -> Vec<SenseLabel> {
    let n = rng.gen_range(2..=max);
    (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

/// Level-1 and dotted level-2 prefixes read straight off the terminal path.
fn path_parts(terminal: &str) -> (String, String) {
    let parts: Vec<&str> = terminal.split('.').collect();
    (parts[0].to_string(), format!("{}.{}", parts[0], parts[1]))
}

/// Double loop over all (i, j) applying the set predicates by name.
fn brute_force_selection(labels: &[SenseLabel], s: &Strategy) -> PairSelection {
    let n = labels.len();
    let mut sel = PairSelection {
        positives: vec![Vec::new(); n],
        negatives: vec![Vec::new(); n],
        weights: vec![BTreeMap::new(); n],
    };
    for i in 0..n {
        let ti = labels[i].terminal.as_str();
        let (l1i, l2i) = path_parts(ti);
        for j in 0..n {
            if i == j {
                continue;
            }
            let tj = labels[j].terminal.as_str();
            let (l1j, l2j) = path_parts(tj);
            let (pos, neg, w) = match s.name {
                StrategyName::Ours => (ti == tj, l1i == l1j && ti != tj, s.pos_weight),
                StrategyName::Method1 => (ti == tj, l1i != l1j, s.pos_weight),
                StrategyName::Method2 => (ti == tj, l2i != l2j, s.pos_weight),
                StrategyName::Method3 => {
                    let w = if l2i == l2j {
                        s.coarse_pos_weight
                    } else {
                        s.pos_weight
                    };
                    (l1i == l1j, l1i != l1j, w)
                }
                StrategyName::Method4 => {
                    let w = if ti == tj {
                        s.coarse_pos_weight
                    } else {
                        s.pos_weight
                    };
                    (l1i == l1j, l1i != l1j, w)
                }
            };
            if pos {
                sel.positives[i].push(j);
                sel.weights[i].insert(j, w);
            } else if neg {
                sel.negatives[i].push(j);
                sel.weights[i].insert(j, s.neg_weight);
            }
        }
    }
    sel
}

fn pair_selection_oracle() -> Outcome {
    let start = Instant::now();
    let pool = pdtb3_terminals();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pairs = 0usize;
    for b in 0..200 {
        let labels = random_batch(&mut rng, &pool, 64);
        for name in StrategyName::ALL {
            let s = Strategy::preset(name);
            let got = build_pair_selection(&labels, &s);
            let want = brute_force_selection(&labels, &s);
            check(got == want, || {
                format!("batch {b}, strategy {name}: selection differs from brute force")
            })?;
            pairs += got.weights.iter().map(BTreeMap::len).sum::<usize>();
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "200 batches x 5 strategies, {pairs} selected pairs match"
    ))
}

fn random_vectors(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
}

fn direct_cosine(v: &Array2<f64>, i: usize, j: usize) -> f64 {
    let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
    for k in 0..v.ncols() {
        dot += v[[i, k]] * v[[j, k]];
        ni += v[[i, k]] * v[[i, k]];
        nj += v[[j, k]] * v[[j, k]];
    }
    if ni == 0.0 || nj == 0.0 {
        0.0
    } else {
        dot / (ni.sqrt() * nj.sqrt())
    }
}

/// Literal weighted ratio form, no log-sum-exp.
fn direct_hier_loss(v: &Array2<f64>, sel: &PairSelection, tau: f64) -> f64 {
    let mut loss = 0.0;
    for i in 0..v.nrows() {
        let pos = &sel.positives[i];
        if pos.is_empty() {
            continue;
        }
        let term = |k: usize| sel.weights[i][&k] * (direct_cosine(v, i, k) / tau).exp();
        let denom: f64 = pos.iter().chain(&sel.negatives[i]).map(|&k| term(k)).sum();
        let s: f64 = pos.iter().map(|&j| (term(j) / denom).ln()).sum();
        loss -= s / pos.len() as f64;
    }
    loss
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// A few terminals from one or two families, so batches have positives.
fn clustered_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<SenseLabel> {
    let pool = pdtb3_terminals();
    let k = rng.gen_range(2..=6);
    let chosen: Vec<SenseLabel> = pool.choose_multiple(rng, k).cloned().collect();
    (0..n)
        .map(|_| chosen.choose(rng).unwrap().clone())
        .collect()
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let taus = [0.07, 0.1, 0.5, 1.0];
    let mut worst: f64 = 0.0;
    let mut worst_supcon: f64 = 0.0;
    for b in 0..50 {
        let n = rng.gen_range(2..=24);
        let d = rng.gen_range(2..=16);
        let tau = taus[b % taus.len()];
        let v = random_vectors(&mut rng, n, d);
        let labels = clustered_labels(&mut rng, n);
        let name = StrategyName::ALL[b % 5];
        let s = Strategy::new(
            name,
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
        )
        .map_err(|e| e.to_string())?;
        let sel = build_pair_selection(&labels, &s);
        let got = hier_contrastive(&v, &sel, tau);
        let want = direct_hier_loss(&v, &sel, tau);
        let e = rel_err(got, want);
        worst = worst.max(e);
        check(e <= 1e-9, || {
            format!("batch {b}: {got} vs oracle {want} (rel {e:.2e})")
        })?;

        let unit = PairSelection::supervised(&labels);
        let terminals: Vec<&str> = labels.iter().map(|l| l.terminal.as_str()).collect();
        let reference = supcon_reference(&v, &terminals, tau).map_err(|e| e.to_string())?;
        let got = hier_contrastive(&v, &unit, tau);
        let e = rel_err(got, reference);
        worst_supcon = worst_supcon.max(e);
        check(e <= 1e-9, || {
            format!("batch {b}: unit-weight loss {got} vs supcon {reference} (rel {e:.2e})")
        })?;
    }
    Ok(format!(
        "50 batches; max rel err {worst:.1e} vs direct sum, {worst_supcon:.1e} vs supcon"
    ))
}

fn norm_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

const FD_STEP: f64 = 1e-5;

fn central_difference(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let flat = probe.as_slice_mut().unwrap();
        let orig = flat[idx];
        flat[idx] = orig + FD_STEP;
        let plus = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = orig - FD_STEP;
        let minus = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = orig;
        out.push((plus - minus) / (2.0 * FD_STEP));
    }
    out
}

fn head_gradient_error(rng: &mut ChaCha8Rng, classes: usize, h: &Array2<f64>) -> f64 {
    let n = h.nrows();
    let head = ClassifierHead::seeded(Level::L1, classes, h.ncols(), rng.gen());
    let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let (_, g) = cross_entropy_with_grad(head.logits(h).view(), &gold);
    let grads = head.backward(h, &g);

    let numeric_w = central_difference(&head.weight, |w| {
        let hd = ClassifierHead {
            weight: w.clone(),
            ..head.clone()
        };
        cross_entropy(hd.logits(h).view(), &gold)
    });
    let bias2 = head.bias.clone().insert_axis(ndarray::Axis(0));
    let numeric_b = central_difference(&bias2, |b| {
        let hd = ClassifierHead {
            bias: b.row(0).to_owned(),
            ..head.clone()
        };
        cross_entropy(hd.logits(h).view(), &gold)
    });
    let numeric_h = central_difference(h, |x| cross_entropy(head.logits(x).view(), &gold));
    [
        norm_rel_err(grads.weight.as_slice().unwrap(), &numeric_w),
        norm_rel_err(grads.bias.as_slice().unwrap(), &numeric_b),
        norm_rel_err(grads.input.as_slice().unwrap(), &numeric_h),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h3 = SenseHierarchy::pdtb3();
    let taus = [0.07, 0.1, 0.5, 1.0];
    let (mut worst_scl, mut worst_ce): (f64, f64) = (0.0, 0.0);
    for inst in 0..20 {
        let n = rng.gen_range(3..=12);
        let d = rng.gen_range(2..=16);
        let tau = taus[inst % taus.len()];
        let v = random_vectors(&mut rng, n, d);
        let labels = clustered_labels(&mut rng, n);
        let sel = build_pair_selection(&labels, &Strategy::preset(StrategyName::ALL[inst % 5]));
        let (_, g) = hier_contrastive_with_grad(&v, &sel, tau);
        let numeric = central_difference(&v, |x| hier_contrastive(x, &sel, tau));
        let e = norm_rel_err(g.as_slice().unwrap(), &numeric);
        worst_scl = worst_scl.max(e);
        check(e < 1e-4, || {
            format!("instance {inst}: contrastive gradient rel err {e:.2e}")
        })?;

        for classes in [h3.classes(Level::L1).len(), h3.classes(Level::L2).len()] {
            let e = head_gradient_error(&mut rng, classes, &v);
            worst_ce = worst_ce.max(e);
            check(e < 1e-4, || {
                format!("instance {inst}: {classes}-way head gradient rel err {e:.2e}")
            })?;
        }
    }
    Ok(format!(
        "20 instances; max rel err contrastive {worst_scl:.1e}, heads {worst_ce:.1e}"
    ))
}

fn small_splits(per_class: usize, seed: u64) -> (hiercl::corpus::SplitSet, SenseHierarchy) {
    let h = Arc::new(SenseHierarchy::pdtb3());
    let c = generate(h, per_class, seed, 0.05).expect("synthetic corpus");
    (split_sections(&c), SenseHierarchy::pdtb3())
}

fn beta_zero_reduction() -> Outcome {
    let (splits, h) = small_splits(4, 4);
    let pool = training_pool(&splits.train, true).map_err(|e| e.to_string())?;
    let batch = &pool[..16];
    let base_cfg = TrainConfig {
        learning_rate: 1e-2,
        dim: 16,
        ..TrainConfig::default()
    };

    let zero = TrainConfig {
        beta: 0.0,
        ..base_cfg.clone()
    };
    let mut t = Trainer::new(zero.clone(), &h).map_err(|e| e.to_string())?;
    let out = loss_and_grad(&t.model, batch, &h, &zero).map_err(|e| e.to_string())?;
    let e = rel_err(out.loss.total, out.loss.ce_l1 + out.loss.ce_l2);
    check(e <= 1e-12, || {
        format!("total {} vs ce sum (rel {e:.1e})", out.loss.total)
    })?;
    check(out.loss.scl > 0.0, || {
        "contrastive term should be non-zero on this batch".into()
    })?;

    // Multi-task baseline: heads and projection trained on CE alone.
    let mut mtl = t.model.clone();
    let (x, _) = mtl.encoder.featurize(batch).map_err(|e| e.to_string())?;
    let v = mtl.encoder.projection.forward(&x);
    let targets = hiercl::trainer::batch_targets(batch, &h).map_err(|e| e.to_string())?;
    let (ce1, g1) = cross_entropy_with_grad(mtl.head_l1.logits(&v).view(), &targets.l1);
    let rows: Vec<usize> = targets.l2.iter().map(|p| p.0).collect();
    let gold2: Vec<usize> = targets.l2.iter().map(|p| p.1).collect();
    let v2 = v.select(ndarray::Axis(0), &rows);
    let (ce2, g2) = cross_entropy_with_grad(mtl.head_l2.logits(&v2).view(), &gold2);
    let hg1 = mtl.head_l1.backward(&v, &g1);
    let hg2 = mtl.head_l2.backward(&v2, &g2);
    let mut gv = hg1.input.clone();
    for (k, &r) in rows.iter().enumerate() {
        let mut row = gv.row_mut(r);
        row += &hg2.input.row(k);
    }
    let (pw, pb) = mtl.encoder.projection.backward(&x, &v, &gv);
    let mut grads: Vec<Vec<f64>> = [
        pw.as_slice(),
        pb.as_slice(),
        hg1.weight.as_slice(),
        hg1.bias.as_slice(),
        hg2.weight.as_slice(),
        hg2.bias.as_slice(),
    ]
    .into_iter()
    .map(|s| s.unwrap().to_vec())
    .collect();
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > base_cfg.grad_clip_l2 {
        let k = base_cfg.grad_clip_l2 / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    // First Adam step: bias-corrected moments reduce to g and g^2.
    let lr = base_cfg.learning_rate;
    let params: [&mut [f64]; 6] = [
        mtl.encoder.projection.weight.as_slice_mut().unwrap(),
        mtl.encoder.projection.bias.as_slice_mut().unwrap(),
        mtl.head_l1.weight.as_slice_mut().unwrap(),
        mtl.head_l1.bias.as_slice_mut().unwrap(),
        mtl.head_l2.weight.as_slice_mut().unwrap(),
        mtl.head_l2.bias.as_slice_mut().unwrap(),
    ];
    for (p, g) in params.into_iter().zip(&grads) {
        for (pi, gi) in p.iter_mut().zip(g) {
            let m_hat = (1.0 - 0.9) * gi / (1.0 - 0.9);
            let v_hat = (1.0 - 0.999) * gi * gi / (1.0 - 0.999);
            *pi -= lr * m_hat / (v_hat.sqrt() + 1e-8);
        }
    }

    let rec = t.step(batch, 1, 1).map_err(|e| e.to_string())?;
    check(rec.loss.ce_l1 == ce1 && rec.loss.ce_l2 == ce2, || {
        "step CE differs from baseline CE".into()
    })?;
    let max_diff = [
        (
            &t.model.encoder.projection.weight,
            &mtl.encoder.projection.weight,
        ),
        (&t.model.head_l1.weight, &mtl.head_l1.weight),
        (&t.model.head_l2.weight, &mtl.head_l2.weight),
    ]
    .iter()
    .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
    .fold(0.0, f64::max);
    check(max_diff <= 1e-12, || {
        format!("parameters after one step differ from baseline by {max_diff:.1e}")
    })?;

    // The `-contrastive` switch and β = 0 take the same path bit for bit.
    let off = TrainConfig {
        contrastive: false,
        beta: 1.0,
        ..base_cfg.clone()
    };
    let mut t_off = Trainer::new(off, &h).map_err(|e| e.to_string())?;
    t_off.step(batch, 1, 1).map_err(|e| e.to_string())?;
    check(
        t_off.model.encoder.projection == t.model.encoder.projection
            && t_off.model.head_l2 == t.model.head_l2,
        || "contrastive=false differs from beta=0".into(),
    )?;

    // β > 0 sees the same CE values on the first step.
    let one = TrainConfig {
        beta: 1.0,
        ..base_cfg
    };
    let mut t_one = Trainer::new(one, &h).map_err(|e| e.to_string())?;
    let r1 = t_one.step(batch, 1, 1).map_err(|e| e.to_string())?;
    check(r1.loss.ce_l1 == ce1 && r1.loss.ce_l2 == ce2, || {
        "beta=1 first-step CE differs".into()
    })?;
    Ok(format!(
        "total == ce_l1 + ce_l2; first step matches CE-only baseline within {max_diff:.1e}"
    ))
}

fn augmentation_counting() -> Outcome {
    let mut corpora = 0;
    let mut rows = 0;
    for version in [Version::Pdtb2, Version::Pdtb3] {
        let h = Arc::new(SenseHierarchy::builtin(version));
        for seed in 0..10 {
            for noise in [0.0, 0.3, 1.0] {
                let c = generate(h.clone(), 3, seed, noise).map_err(|e| e.to_string())?;
                for (what, originals) in [
                    ("corpus", c.examples.clone()),
                    (
                        "expanded train",
                        hiercl::corpus::expand_multilabel(&c.examples),
                    ),
                ] {
                    let pool = build_training_pool(&originals).map_err(|e| e.to_string())?;
                    let n = originals.len();
                    let conn: usize = originals.iter().map(|e| e.connectives.len()).sum();
                    check(pool.len() == n + conn, || {
                        format!(
                            "{version} seed {seed} {what}: {} != {n} + {conn}",
                            pool.len()
                        )
                    })?;
                    check(2 * n <= pool.len() && pool.len() <= 3 * n, || {
                        format!(
                            "{version} seed {seed} {what}: {} outside [2N, 3N]",
                            pool.len()
                        )
                    })?;
                    let mut source: Option<&RelationExample> = None;
                    for e in &pool {
                        match e.provenance {
                            Provenance::Original => source = Some(e),
                            Provenance::Augmented => {
                                let s = source.ok_or("augmented row before any original")?;
                                check(e.senses == s.senses && e.rel_id == s.rel_id, || {
                                    format!("{}: sense set changed", e.log_id())
                                })?;
                            }
                        }
                    }
                    rows += pool.len();
                }
                corpora += 1;
            }
        }
    }
    Ok(format!("{corpora} corpora, {rows} pool rows checked"))
}

fn sister_negative_invariant() -> Outcome {
    let pool = pdtb3_terminals();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = Strategy::preset(StrategyName::Ours);
    let (mut anchors, mut negatives, mut cross) = (0usize, 0usize, 0usize);
    while anchors < 10_000 {
        let labels = random_batch(&mut rng, &pool, 64);
        let sel = build_pair_selection(&labels, &s);
        for i in 0..labels.len().min(10_000 - anchors) {
            anchors += 1;
            for &j in &sel.negatives[i] {
                negatives += 1;
                let sisters = are_sisters(&labels[i], &labels[j]).map_err(|e| e.to_string())?;
                if labels[i].l1 != labels[j].l1 || !sisters {
                    cross += 1;
                }
            }
        }
    }
    check(cross == 0, || format!("{cross} cross-level-1 negatives"))?;
    Ok(format!(
        "{anchors} anchors, {negatives} negatives, 0 cross-level-1"
    ))
}

fn effect_direction() -> Outcome {
    let start = Instant::now();
    let h = Arc::new(SenseHierarchy::pdtb3());
    let corpus = generate(h.clone(), 40, 0, 0.01).map_err(|e| e.to_string())?;
    let splits = split_sections(&corpus);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        max_epochs: 10,
        patience: 10,
        dim: 64,
        ..TrainConfig::default()
    };
    let rows = sweep_beta_seeds(&cfg, &splits, &h, &[0.0, 0.5, 1.0, 2.0], &[0, 1, 2])
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let base = rows[0].dev.l2.macro_f1 * 100.0;
    let curve: Vec<String> = rows
        .iter()
        .map(|r| format!("b={}: {:.2}", r.beta, r.dev.l2.macro_f1 * 100.0))
        .collect();
    let best = rows[1..]
        .iter()
        .map(|r| r.dev.l2.macro_f1 * 100.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "dev l2 macro-F1 over 3 seeds: {}; best gain {:+.2}",
        curve.join(", "),
        best - base
    );
    check(elapsed < Duration::from_secs(15 * 60), || {
        format!("{detail}; took {elapsed:?}")
    })?;
    check(best - base >= 1.0, || detail.clone())?;
    Ok(detail)
}

fn brute_force_report(
    preds: &BTreeMap<String, String>,
    gold: &BTreeMap<String, Vec<String>>,
    classes: &[String],
) -> (Vec<(usize, usize, usize)>, f64, f64) {
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k + 1]; k];
    let (mut correct, mut scored) = (0usize, 0usize);
    for (id, labels) in gold {
        let listed: Vec<usize> = labels
            .iter()
            .filter_map(|l| classes.iter().position(|c| c == l))
            .collect();
        if listed.is_empty() {
            continue;
        }
        scored += 1;
        let p = classes.iter().position(|c| c == &preds[id]);
        match p {
            Some(p) if listed.contains(&p) => {
                correct += 1;
                confusion[p][p] += 1;
            }
            Some(p) => confusion[listed[0]][p] += 1,
            None => confusion[listed[0]][k] += 1,
        }
    }
    let counts: Vec<(usize, usize, usize)> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let fp = (0..k).map(|r| confusion[r][c]).sum::<usize>() - tp;
            let fn_ = confusion[c].iter().sum::<usize>() - tp;
            (tp, fp, fn_)
        })
        .collect();
    let f1s: Vec<f64> = counts
        .iter()
        .map(|&(tp, fp, fn_)| {
            let p = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let r = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect();
    let accuracy = if scored == 0 {
        0.0
    } else {
        correct as f64 / scored as f64
    };
    (counts, accuracy, f1s.iter().sum::<f64>() / k as f64)
}

fn compare_with_brute_force(
    report: &EvalReport,
    preds: &BTreeMap<String, String>,
    gold: &BTreeMap<String, Vec<String>>,
    classes: &[String],
) -> Result<(), String> {
    let (counts, acc, macro_f1) = brute_force_report(preds, gold, classes);
    for (c, &(tp, fp, fn_)) in report.classes.iter().zip(&counts) {
        check((c.tp, c.fp, c.fn_) == (tp, fp, fn_), || {
            format!(
                "{}: counts {:?} vs {:?}",
                c.label,
                (c.tp, c.fp, c.fn_),
                (tp, fp, fn_)
            )
        })?;
    }
    check(report.accuracy == acc, || {
        format!("accuracy {} vs {acc}", report.accuracy)
    })?;
    check((report.macro_f1 - macro_f1).abs() <= 1e-12, || {
        format!("macro-F1 {} vs {macro_f1}", report.macro_f1)
    })
}

fn metrics_oracle() -> Outcome {
    let s = |x: &str| x.to_string();
    let hand_classes = vec![s("A"), s("B")];
    let hand_gold: BTreeMap<String, Vec<String>> = [("1", "A"), ("2", "B"), ("3", "B")]
        .iter()
        .map(|(i, g)| (s(i), vec![s(g)]))
        .collect();
    let hand_preds: BTreeMap<String, String> = [("1", "A"), ("2", "A"), ("3", "B")]
        .iter()
        .map(|(i, p)| (s(i), s(p)))
        .collect();
    let r = score_labels(&hand_preds, &hand_gold, &hand_classes, Level::L2)
        .map_err(|e| e.to_string())?;
    let third = 2.0 / 3.0;
    check(
        (r.accuracy - third).abs() < 1e-15 && (r.macro_f1 - third).abs() < 1e-15,
        || format!("hand case: acc {} f1 {}", r.accuracy, r.macro_f1),
    )?;
    check(
        r.classes.iter().all(|c| (c.f1 - third).abs() < 1e-15),
        || "hand case per-class F1".into(),
    )?;

    let h = SenseHierarchy::pdtb3();
    let classes = h.classes(Level::L2).to_vec();
    let mut vocab = classes.clone();
    vocab.push(s("Expansion.Disjunction"));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut gold = BTreeMap::new();
    let mut preds = BTreeMap::new();
    for i in 0..1000 {
        let id = format!("r{i:04}");
        let k = if rng.gen_bool(0.2) { 2 } else { 1 };
        let g: Vec<String> = vocab.choose_multiple(&mut rng, k).cloned().collect();
        gold.insert(id.clone(), g);
        preds.insert(id, vocab.choose(&mut rng).unwrap().clone());
    }
    let report = score_labels(&preds, &gold, &classes, Level::L2).map_err(|e| e.to_string())?;
    compare_with_brute_force(&report, &preds, &gold, &classes)?;
    for size in [1usize, 7, 50, 333] {
        let g: BTreeMap<_, _> = gold
            .iter()
            .take(size)
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect();
        let r = score_labels(&preds, &g, &classes, Level::L2).map_err(|e| e.to_string())?;
        compare_with_brute_force(&r, &preds, &g, &classes)?;
    }
    Ok(format!(
        "hand case 2/3; 1,000-example instance acc {:.4} macro-F1 {:.4} match brute force",
        report.accuracy, report.macro_f1
    ))
}

fn reproducibility() -> Outcome {
    let (splits, h) = small_splits(6, 9);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 4,
        patience: 4,
        dim: 32,
        seed: 17,
        ..TrainConfig::default()
    };
    let run = || -> Result<(Vec<u8>, Vec<u8>, String), String> {
        let out = train(&cfg, &splits, &h).map_err(|e| e.to_string())?;
        let mut history = Vec::new();
        write_jsonl(&out.history, &mut history).map_err(|e| e.to_string())?;
        let mut steps = Vec::new();
        write_jsonl(&out.steps, &mut steps).map_err(|e| e.to_string())?;
        Ok((
            history,
            steps,
            out.checkpoint.to_json().map_err(|e| e.to_string())?,
        ))
    };
    let a = run()?;
    let b = run()?;
    check(a.0 == b.0, || "metric histories differ".into())?;
    check(a.1 == b.1, || "step logs differ".into())?;
    check(a.2 == b.2, || "checkpoints differ".into())?;
    let ckpt = hiercl::trainer::Checkpoint::from_json(&a.2).map_err(|e| e.to_string())?;
    let model = hiercl::trainer::Model::from_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    let v1 = model
        .encoder
        .encode(&splits.dev[..3])
        .map_err(|e| e.to_string())?
        .vectors;
    let v0: Array1<f64> = v1.row(0).to_owned();
    check(v0.iter().all(|x| x.is_finite()), || {
        "reloaded model produced non-finite output".into()
    })?;
    Ok(format!(
        "history {} bytes, checkpoint {} bytes, byte-identical",
        a.0.len(),
        a.2.len()
    ))
}
