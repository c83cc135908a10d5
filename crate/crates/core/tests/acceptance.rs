//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits non-zero if any failed.
//!
//! Long training runs are shared between criteria: the default full run
//! serves the end-to-end check, the batch-size check (as bs 256) and the
//! subsampling check.

use std::time::Instant;

use diet_core::data::firewall_violations;
use diet_core::encoder::MlpEncoder;
use diet_core::harness::report::spearman;
use diet_core::harness::{
    run_diet, run_supervised, HeadVariant, Mode, RunArtifact, TrainConfig, Trainer,
};
use diet_core::head::{xent_smoothed, CandidateSet, DietHead};
use diet_core::numeric::{Matrix, Rng};
use diet_core::optim::{OptimConfig, OptimKind, Optimizer};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// The end-to-end task: gaussian clusters N=2000, D=32, C=10, σ=0.15 with the
/// default recipe for 300 epochs.
fn task() -> TrainConfig {
    TrainConfig::default()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn final_probe(a: &RunArtifact) -> f64 {
    a.final_probe().expect("final epoch is always probed")
}

fn dloss(enc: &MlpEncoder, head: &DietHead, x: &Matrix, t: &[usize]) -> f64 {
    let f = enc.encode(x).unwrap();
    let z = head.logits(&f).unwrap();
    xent_smoothed(&z, t, head.alpha()).unwrap().0
}

fn masks(enc: &MlpEncoder, x: &Matrix) -> Vec<Matrix> {
    enc.forward(x).unwrap().1.masks().to_vec()
}

/// Five-point central difference; `None` if a ReLU flips inside the stencil.
fn central_diff(mut eval: impl FnMut(f64) -> (f64, bool), h: f64) -> Option<f64> {
    let mut vals = [0.0; 4];
    for (v, s) in vals.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
        let (l, same) = eval(s * h);
        if !same {
            return None;
        }
        *v = l;
    }
    Some((-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * h))
}

fn criterion_1() -> Outcome {
    const H: f64 = 1e-4;
    const FLOOR: f64 = 1e-5;
    let alphas = [0.0, 0.4, 0.8];
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    let cases = 24;
    for case in 0..cases {
        let mut rng = Rng::new(0xC1 + case as u64);
        let d = rng.range_inclusive(1, 16);
        let depth = rng.range_inclusive(0, 2);
        let k = rng.range_inclusive(1, 16);
        let n = rng.range_inclusive(2, 32);
        let b = rng.range_inclusive(1, 8.min(n));
        let alpha = alphas[case % 3];
        let mut dims = vec![d];
        for _ in 0..depth {
            dims.push(rng.range_inclusive(1, 16));
        }
        dims.push(k);
        let mut enc = MlpEncoder::init(&dims, case as u64).unwrap();
        for bias in enc.biases_mut() {
            for v in bias.iter_mut() {
                *v = 0.1 * rng.normal();
            }
        }
        let mut head = DietHead::init(n, k, alpha, case as u64).unwrap();
        let x = Matrix::from_fn(b, d, |_, _| rng.normal());
        let targets: Vec<usize> = rng.permutation(n)[..b].to_vec();

        let (f, cache) = enc.forward(&x).unwrap();
        let z = head.logits(&f).unwrap();
        let (_, gz) = xent_smoothed(&z, &targets, alpha).unwrap();
        let (gw, gf) = head.backward(&f, &gz).unwrap();
        let (ge, _) = enc.backward(&cache, &gf).unwrap();
        let base_masks = cache.masks().to_vec();

        let mut record = |an: f64, fd: Option<f64>| match fd {
            Some(fd) => {
                checked += 1;
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(FLOOR));
            }
            None => skipped += 1,
        };

        let analytic: Vec<Vec<f64>> = ge.slices().iter().map(|s| s.to_vec()).collect();
        for (slot, grads) in analytic.iter().enumerate() {
            for (j, &an) in grads.iter().enumerate() {
                let orig = enc.param_slices()[slot][j];
                let fd = central_diff(
                    |delta| {
                        enc.param_slices_mut()[slot][j] = orig + delta;
                        let l = dloss(&enc, &head, &x, &targets);
                        let same = masks(&enc, &x) == base_masks;
                        enc.param_slices_mut()[slot][j] = orig;
                        (l, same)
                    },
                    H,
                );
                record(an, fd);
            }
        }
        for j in 0..gw.data().len() {
            let orig = head.weights().data()[j];
            let fd = central_diff(
                |delta| {
                    head.weights_mut().data_mut()[j] = orig + delta;
                    let l = dloss(&enc, &head, &x, &targets);
                    head.weights_mut().data_mut()[j] = orig;
                    (l, true)
                },
                H,
            );
            record(gw.data()[j], fd);
        }
    }
    let pass = worst < 1e-5 && skipped * 100 <= checked;
    outcome(
        pass,
        format!("{cases} configs, {checked} parameters, max rel err {worst:.2e} (< 1e-5), {skipped} skipped at ReLU kinks"),
    )
}

fn plain_ce(z: &Matrix, t: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &tr) in t.iter().enumerate() {
        let row = z.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total -= (row[tr] - m) - denom.ln();
    }
    total / t.len() as f64
}

fn criterion_2() -> Outcome {
    let mut worst_ln: f64 = 0.0;
    for n in [2usize, 10, 1000] {
        for alpha in [0.0, 0.4, 0.8] {
            let z = Matrix::zeros(4, n);
            let t = [0, n - 1, n / 2, 1];
            let (loss, _) = xent_smoothed(&z, &t, alpha).unwrap();
            worst_ln = worst_ln.max((loss - (n as f64).ln()).abs());
        }
    }
    let mut rng = Rng::new(0xC2);
    let (mut worst_ce, mut worst_shift): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let n = rng.range_inclusive(2, 40);
        let b = rng.range_inclusive(1, 8);
        let z = Matrix::from_fn(b, n, |_, _| 3.0 * rng.normal());
        let t: Vec<usize> = (0..b).map(|_| rng.below(n as u64) as usize).collect();
        let (loss0, _) = xent_smoothed(&z, &t, 0.0).unwrap();
        worst_ce = worst_ce.max((loss0 - plain_ce(&z, &t)).abs());
        let alpha = rng.uniform(0.0, 0.95);
        let c = rng.uniform(-50.0, 50.0);
        let shifted = Matrix::from_fn(b, n, |i, j| z.get(i, j) + c);
        let (l1, g1) = xent_smoothed(&z, &t, alpha).unwrap();
        let (l2, g2) = xent_smoothed(&shifted, &t, alpha).unwrap();
        worst_shift = worst_shift.max((l1 - l2).abs()).max(g1.max_abs_diff(&g2));
    }
    let pass = worst_ln <= 1e-12 && worst_ce <= 1e-12 && worst_shift <= 1e-10;
    outcome(
        pass,
        format!(
            "|loss(0) - ln N| {worst_ln:.1e} (<= 1e-12), alpha=0 vs plain CE {worst_ce:.1e} (<= 1e-12), shift {worst_shift:.1e} (<= 1e-10)"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = Rng::new(0xC3);
    let (mut exact, mut zero_outside) = (0, 0);
    let instances = 50;
    for i in 0..instances {
        let n = rng.range_inclusive(2, 64);
        let k = rng.range_inclusive(1, 16);
        let b = rng.range_inclusive(1, 8);
        let alpha = [0.0, 0.4, 0.8][i % 3];
        let head = DietHead::init(n, k, alpha, i as u64).unwrap();
        let f = Matrix::from_fn(b, k, |_, _| rng.normal());
        let t: Vec<usize> = (0..b).map(|_| rng.below(n as u64) as usize).collect();

        let z = head.logits(&f).unwrap();
        let (loss, gz) = xent_smoothed(&z, &t, alpha).unwrap();
        let (gw, gf) = head.backward(&f, &gz).unwrap();
        let s = head
            .sampled_xent(&f, &t, alpha, &CandidateSet::all(n))
            .unwrap();
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if loss.to_bits() == s.loss.to_bits()
            && bits(&gz) == bits(&s.grad_logits)
            && bits(&gw) == bits(&s.grad_rows)
            && bits(&gf) == bits(&s.grad_features)
        {
            exact += 1;
        }

        // Proper subset: the scattered gradient and one optimizer step leave
        // every non-candidate row untouched.
        let mut classes = t.clone();
        for _ in 0..rng.range_inclusive(0, n / 2) {
            classes.push(rng.below(n as u64) as usize);
        }
        let cands = CandidateSet::new(classes);
        let s = head.sampled_xent(&f, &t, alpha, &cands).unwrap();
        let mut dense = Matrix::zeros(n, k);
        for (r, &c) in cands.classes().iter().enumerate() {
            dense.row_mut(c).copy_from_slice(s.grad_rows.row(r));
        }
        let mut w = head.weights().clone();
        let before = w.clone();
        let mut opt = Optimizer::new(OptimKind::Adamw, &[n * k]);
        opt.begin_step();
        let cfg = OptimConfig::default();
        opt.update_rows(0, &mut w, cands.classes(), &s.grad_rows, 1e-2, 0.05, &cfg)
            .unwrap();
        let untouched = (0..n).filter(|c| cands.position(*c).is_none()).all(|c| {
            dense.row(c).iter().all(|v| v.to_bits() == 0)
                && w.row(c) == before.row(c)
                && opt.slots()[0].first[c * k..(c + 1) * k]
                    .iter()
                    .all(|v| v.to_bits() == 0)
                && opt.slots()[0].second[c * k..(c + 1) * k]
                    .iter()
                    .all(|v| v.to_bits() == 0)
        });
        if untouched {
            zero_outside += 1;
        }
    }
    outcome(
        exact == instances && zero_outside == instances,
        format!(
            "bit-identical to full head on {exact}/{instances} instances; zero outside candidates on {zero_outside}/{instances}"
        ),
    )
}

struct Shared {
    diet: RunArtifact,
    supervised: RunArtifact,
}

fn criterion_4(shared: &Shared) -> Outcome {
    let d = final_probe(&shared.diet);
    let s = final_probe(&shared.supervised);
    outcome(
        d >= 0.90 && d >= 0.85 * s,
        format!(
            "DIET probe {d:.4} (>= 0.90), supervised {s:.4}, ratio {:.4} (>= 0.85)",
            d / s
        ),
    )
}

fn criterion_5() -> Outcome {
    let budget = task().epochs / 4;
    let mut acc = [Vec::new(), Vec::new()];
    for (slot, alpha) in [0.0, 0.8].into_iter().enumerate() {
        for seed in 0..5 {
            let cfg = TrainConfig {
                seed,
                label_smoothing: alpha,
                ..task()
            };
            let mut t = Trainer::new(cfg).unwrap();
            t.run_until(budget).unwrap();
            acc[slot].push(t.probe(false).unwrap());
        }
    }
    let (m0, m8) = (median(acc[0].clone()), median(acc[1].clone()));
    outcome(
        m8 >= m0,
        format!(
            "epoch {budget}/{}: median probe alpha=0.8 {m8:.4} >= alpha=0.0 {m0:.4} (seeds: {:?} vs {:?})",
            task().epochs,
            acc[1].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            acc[0].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_6(shared: &Shared) -> Outcome {
    let mut accs = Vec::new();
    for bs in [32, 64, 128] {
        let a = run_diet(TrainConfig {
            batch_size: bs,
            ..task()
        })
        .unwrap();
        accs.push((bs, final_probe(&a)));
    }
    accs.push((256, final_probe(&shared.diet)));
    let hi = accs.iter().map(|a| a.1).fold(f64::MIN, f64::max);
    let lo = accs.iter().map(|a| a.1).fold(f64::MAX, f64::min);
    outcome(
        hi - lo <= 0.05,
        format!(
            "probe by batch size {}; spread {:.4} (<= 0.05)",
            accs.iter()
                .map(|(b, a)| format!("{b}:{a:.4}"))
                .collect::<Vec<_>>()
                .join(" "),
            hi - lo
        ),
    )
}

/// Capacity/duration grid at α=0.8 for the loss-informativeness check. The
/// clusters are noisier than the end-to-end task (σ=0.3) so accuracy is not
/// saturated, and runs are long enough to leave the random-init regime.
fn informativeness_runs() -> Vec<TrainConfig> {
    let base = TrainConfig {
        noise_sigma: 0.3,
        n_train: 1000,
        warmup_epochs: 2,
        batch_size: 128,
        feature_dim: 32,
        ..task()
    };
    let mut out = Vec::new();
    for hidden in [vec![32], vec![64, 64], vec![128, 128], vec![256, 256]] {
        for epochs in [40, 160] {
            out.push(TrainConfig {
                hidden: hidden.clone(),
                epochs,
                ..base.clone()
            });
        }
    }
    out
}

fn criterion_7() -> Outcome {
    let mut loss = Vec::new();
    let mut acc = Vec::new();
    for cfg in informativeness_runs() {
        let a = run_diet(cfg).unwrap();
        loss.push(a.final_loss().unwrap());
        acc.push(final_probe(&a));
    }
    let rho = spearman(&loss, &acc);
    let pairs: Vec<String> = loss
        .iter()
        .zip(&acc)
        .map(|(l, a)| format!("({l:.3},{a:.3})"))
        .collect();
    outcome(
        rho.is_some_and(|r| r <= -0.7),
        format!(
            "{} runs, spearman {rho:?} (<= -0.7); (loss, probe): {}",
            loss.len(),
            pairs.join(" ")
        ),
    )
}

fn criterion_8(shared: &Shared) -> Outcome {
    let cfg = TrainConfig {
        subsample: task().n_train / 2,
        ..task()
    };
    let half = run_diet(cfg).unwrap();
    let (full, sub) = (final_probe(&shared.diet), final_probe(&half));
    outcome(
        full - sub <= 0.10,
        format!(
            "full {full:.4}, 50% subsample {sub:.4}, loss of {:.4} (<= 0.10)",
            full - sub
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for head in [HeadVariant::Full, HeadVariant::Sampled] {
        let cfg = TrainConfig {
            n_train: 500,
            n_test: 200,
            epochs: 20,
            warmup_epochs: 2,
            batch_size: 64,
            probe_every: 5,
            head,
            candidates: 128,
            ..task()
        };
        let run = || {
            let mut t = Trainer::new(cfg.clone()).unwrap();
            t.run_to_end().unwrap();
            t
        };
        let (a, b) = (run(), run());
        let rerun = a.encoder() == b.encoder()
            && a.head() == b.head()
            && a.metrics()
                .iter()
                .zip(b.metrics())
                .all(|(x, y)| x.same_numbers(y));

        let mut first = Trainer::new(cfg.clone()).unwrap();
        first.run_until(cfg.epochs / 2).unwrap();
        let bytes = first.checkpoint_bytes();
        drop(first);
        let mut resumed = Trainer::read_checkpoint(&mut &bytes[..]).unwrap();
        resumed.run_to_end().unwrap();
        let resume = resumed.encoder() == a.encoder()
            && resumed.head() == a.head()
            && resumed.optimizer() == a.optimizer()
            && resumed
                .metrics()
                .iter()
                .zip(a.metrics())
                .all(|(x, y)| x.same_numbers(y));
        pass &= rerun && resume;
        details.push(format!(
            "{head:?} head: rerun identical {rerun}, midpoint resume identical {resume}"
        ));
    }
    outcome(pass, details.join("; "))
}

fn criterion_10() -> Outcome {
    let cfg = TrainConfig {
        n_train: 300,
        n_test: 100,
        epochs: 6,
        warmup_epochs: 1,
        batch_size: 50,
        probe_every: 2,
        ..task()
    };
    let mut t = Trainer::new(cfg).unwrap();
    t.run_to_end().unwrap();
    let probes = t
        .metrics()
        .iter()
        .filter(|m| m.probe_top1.is_some())
        .count() as u64;
    let reads = t.train_data().label_reads();
    let violations = firewall_violations();
    outcome(
        violations == 0 && reads == probes,
        format!("label reads inside diet training: {violations}; training-split label reads {reads} == probe fits {probes}"),
    )
}

fn shared() -> Shared {
    Shared {
        diet: run_diet(task()).unwrap(),
        supervised: run_supervised(TrainConfig {
            mode: Mode::Supervised,
            ..task()
        })
        .unwrap(),
    }
}

/// Optional arguments select criteria by number; the default runs all.
fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let cell = std::cell::OnceCell::new();
    let shared = || cell.get_or_init(shared);
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient correctness", Box::new(criterion_1)),
        ("loss identities", Box::new(criterion_2)),
        ("sampled softmax exactness", Box::new(criterion_3)),
        (
            "end-to-end representation quality",
            Box::new(|| criterion_4(shared())),
        ),
        ("label smoothing speedup", Box::new(criterion_5)),
        ("batch size robustness", Box::new(|| criterion_6(shared()))),
        ("loss informativeness", Box::new(criterion_7)),
        ("subsampling viability", Box::new(|| criterion_8(shared()))),
        ("determinism and resume", Box::new(criterion_9)),
        ("unsupervised firewall", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let o = check();
        println!(
            "criterion {id:>2} [{}] {name}: {} ({:.0} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all selected acceptance criteria passed");
}
