//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.
//!
//! `cargo test -p wmnet-core --test acceptance`

mod common;

use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use wmnet::attacks::{attack_and_measure, cutoff, prune, quantize, Attack, QuantScope};
use wmnet::dist::{
    default_family, indistinguishability_report, kl_laplace_closed_form, kl_numeric, verify_laplace_optimality, SymmetricDensity,
    DEFAULT_BINS,
};
use wmnet::nn::{build_model, evaluate, gen_dataset, train, Dataset, DatasetKind, Dense, Mlp, NetworkSpec, TrainConfig};
use wmnet::{bit_error_rate, derive_key, embed, extract, modulate, EmbeddingPlan, Layer, MasterSeed, Message, ModelWeights};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// C1: extract after embed + train returns the message exactly.
fn integrity_by_construction() -> Outcome {
    let mut failures = Vec::new();
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC1 + trial);
        let classes = rng.gen_range(2..=4);
        let spec = NetworkSpec {
            input_dim: 8,
            hidden: vec![rng.gen_range(16..=48), rng.gen_range(16..=48)],
            classes,
            init: Default::default(),
            seed: rng.gen(),
        };
        let model = build_model(&spec).unwrap();
        let data = gen_dataset(DatasetKind::Blobs, classes, 40, 0.5, rng.gen()).unwrap().lift(8, rng.gen()).unwrap();
        let hosts: Vec<String> = match rng.gen_range(0..3) {
            0 => vec!["fc1".into()],
            1 => vec!["fc2".into()],
            _ => vec!["fc1".into(), "fc2".into()],
        };
        let payload_l = rng.gen_range(1..=16);
        let spreading_s = rng.gen_range(1..=8);
        let sigmas = hosts.iter().map(|h| spec.init_std(h).unwrap()).collect();
        let plan = EmbeddingPlan::even_split(hosts, payload_l * spreading_s, rng.gen_range(1.0..2.0), sigmas).unwrap();
        let mut seed = [0u8; 32];
        rng.fill(&mut seed);
        let key = derive_key(MasterSeed::from_bytes(seed), &model, &plan, payload_l, spreading_s).unwrap();
        let message = Message::random(payload_l, &mut rng).unwrap();
        let embedded = embed(&model, &key, &message).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 0.1,
            lr_decay: 1.0,
            lr_step_epochs: 0,
            seed: rng.gen(),
            subset_fraction: 1.0,
        };
        let (trained, _) = train(&embedded, &data, &cfg).unwrap();
        let ber = bit_error_rate(&message, &extract(&trained, &key).unwrap()).unwrap();
        if ber != 0.0 {
            failures.push(format!("trial {trial}: BER {ber}"));
        }
    }
    check(failures.is_empty(), format!("50 random triples, failures: {failures:?}"))
}

fn random_setting() -> impl Strategy<Value = (Vec<bool>, usize, u64, Vec<f32>, f64)> {
    (1usize..=16, 1usize..=8).prop_flat_map(|(l, s)| {
        (
            proptest::collection::vec(any::<bool>(), l),
            Just(s),
            any::<u64>(),
            proptest::collection::vec(-3.0f32..3.0, l * s + 20),
            1e-3f64..1e3,
        )
    })
}

/// C2: round trip, positive scaling and blockwise sign symmetry on 10^4 cases.
fn decoder_properties() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    let result = runner.run(&random_setting(), |(bits, s, seed, weights, alpha)| {
        let message = Message::from_bits(bits).unwrap();
        let l = message.len();
        let n = weights.len();
        let model = ModelWeights::new(vec![Layer::new("w", vec![n], weights, vec![0.5]).unwrap()]).unwrap();
        let plan = EmbeddingPlan::even_split(vec!["w".into()], l * s, 1.0, vec![0.7]).unwrap();
        let key = derive_key(MasterSeed::from_u64(seed), &model, &plan, l, s).unwrap();

        let embedded = embed(&model, &key, &message).unwrap();
        prop_assert_eq!(&extract(&embedded, &key).unwrap(), &message);

        let mut scaled = embedded.clone();
        for w in scaled.weights_mut(0) {
            *w = (f64::from(*w) * alpha) as f32;
        }
        prop_assert_eq!(&extract(&scaled, &key).unwrap(), &message);

        let flip = seed as usize % l;
        let mut flipped_bits = message.bits().to_vec();
        flipped_bits[flip] = !flipped_bits[flip];
        let mut flipped_s = key.spreading_seq.clone();
        for v in &mut flipped_s[flip * s..(flip + 1) * s] {
            *v = -*v;
        }
        let a = modulate(&message, &key.spreading_seq, s).unwrap();
        let b = modulate(&Message::from_bits(flipped_bits).unwrap(), &flipped_s, s).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    });
    match result {
        Ok(()) => Ok("10000 cases: round trip, scaling invariance, sign symmetry".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// C3: closed-form KL vs grid integration, Laplace strictly minimal.
fn laplace_optimality() -> Outcome {
    let grid: Vec<f64> = (0..5).map(|k| 0.2 * 25f64.powf(k as f64 / 4.0)).collect();
    let mut worst_gap = 0.0f64;
    let mut failures = Vec::new();
    for &gamma in &grid {
        for &lambda in &grid {
            let closed = kl_laplace_closed_form(gamma, lambda).unwrap();
            let numeric =
                kl_numeric(&SymmetricDensity::Laplace { scale: gamma }, &SymmetricDensity::Laplace { scale: lambda });
            worst_gap = worst_gap.max((closed - numeric).abs());
            let report = verify_laplace_optimality(lambda, gamma, &default_family(gamma)).map_err(|e| e.to_string())?;
            if !report.laplace_minimal || !report.laplace_max_entropy {
                failures.push((gamma, lambda));
            }
        }
    }
    check(
        worst_gap <= 1e-6 && failures.is_empty(),
        format!("5x5 grid, max |closed - grid| = {worst_gap:.2e}, non-minimal points: {failures:?}"),
    )
}

/// C4: BER 0 under quantization, sign preservation on 10^6 weights.
fn quantization_robustness() -> Outcome {
    let wm = desk(1).watermark(PAYLOAD, 16, 1.0);
    let mut bers = Vec::new();
    for bits in [32, 16, 8, 4] {
        let q = quantize(&wm.model, bits, QuantScope::Global).unwrap();
        bers.push(bit_error_rate(&wm.message, &extract(&q, &wm.key).unwrap()).unwrap());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let weights: Vec<f32> = (0..1_000_000)
        .map(|_| {
            let magnitude = 10f32.powf(rng.gen_range(-8.0..1.0));
            if rng.gen() { magnitude } else { -magnitude }
        })
        .collect();
    let big = ModelWeights::new(vec![Layer::new("w", vec![weights.len()], weights, vec![]).unwrap()]).unwrap();
    let mut violations = 0usize;
    for bits in [32, 16, 8, 4, 2, 1] {
        let q = quantize(&big, bits, QuantScope::Global).unwrap();
        violations += q.layers()[0]
            .weights
            .iter()
            .zip(&big.layers()[0].weights)
            .filter(|(&qw, &w)| f64::from(qw) * f64::from(w) < 0.0)
            .count();
    }
    check(
        bers.iter().all(|&b| b == 0.0) && violations == 0,
        format!("BER at n_b 32/16/8/4 = {bers:?}; sign violations over 6 x 10^6 = {violations}"),
    )
}

/// C5: pruning, S = 50, C = 1, 5 seeds.
fn pruning_robustness() -> Outcome {
    let fractions = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let mut per_p = vec![Vec::new(); fractions.len()];
    for &seed in &SEEDS {
        let wm = desk(seed).watermark(PAYLOAD, 50, 1.0);
        for (k, &p) in fractions.iter().enumerate() {
            let pruned = prune(&wm.model, p).unwrap();
            per_p[k].push(bit_error_rate(&wm.message, &extract(&pruned, &wm.key).unwrap()).unwrap());
        }
    }
    let means: Vec<f64> = per_p.iter().map(|v| mean(v)).collect();
    let zero_up_to_half = per_p[..5].iter().flatten().all(|&b| b == 0.0);
    check(zero_up_to_half && means[5] <= 1.0, format!("mean BER for p = 0.1..0.6: {means:?}"))
}

/// C6: fine-tuning, S = 8, C = 1, 5 seeds.
fn fine_tuning_robustness() -> Outcome {
    let mut bers = Vec::new();
    for &seed in &SEEDS {
        let d = desk(seed);
        let wm = d.watermark(PAYLOAD, 8, 1.0);
        let r = attack_and_measure(&wm.model, &wm.key, &wm.message, &Attack::FineTune { cfg: fine_tune_cfg(seed) }, &d.data)
            .unwrap();
        bers.push(r.ber);
    }
    check(mean(&bers) <= 1.0, format!("per-seed BER {bers:?}, mean {:.3}", mean(&bers)))
}

/// C7: transfer learning over S in {4, 16, 32}, 5 seeds.
fn transfer_robustness() -> Outcome {
    let spreads = [4usize, 16, 32];
    let mut means = Vec::new();
    let mut ters = Vec::new();
    for &s in &spreads {
        let mut bers = Vec::new();
        for &seed in &SEEDS {
            let d = desk(seed);
            let wm = d.watermark(PAYLOAD, s, 1.0);
            let attack = Attack::Transfer { data: Box::new(transfer_task(seed)), new_classes: 8, cfg: transfer_cfg(seed) };
            let r = attack_and_measure(&wm.model, &wm.key, &wm.message, &attack, &d.data).unwrap();
            bers.push(r.ber);
            ters.push(r.ter);
        }
        means.push(mean(&bers));
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    check(
        means[2] <= 2.0 && decreasing,
        format!("mean BER at S = 4/16/32: {means:?}; mean new-task TER {:.1}", mean(&ters)),
    )
}

/// C8: TER cost of the watermark at 25% per-layer occupancy, 5 seeds.
fn unobtrusiveness() -> Outcome {
    let mut gaps = Vec::new();
    let mut max_occupancy = 0.0f64;
    for &seed in &SEEDS {
        let d = desk(seed);
        let occ = d.plan(PAYLOAD, 128, 1.0).occupancy(&d.init).unwrap();
        max_occupancy = occ.per_layer.iter().fold(max_occupancy, |m, (_, p)| m.max(*p));
        let wm = d.watermark(PAYLOAD, 128, 1.0);
        gaps.push(wm.ter - d.baseline_ter);
    }
    check(
        max_occupancy <= 25.0 && mean(&gaps) <= 1.5,
        format!("occupancy {max_occupancy:.2}%, TER gaps {gaps:?}, mean {:.2}", mean(&gaps)),
    )
}

/// C9: std ratio and empirical KL at C = 1, ~20% occupancy.
fn secrecy() -> Outcome {
    let d = desk(1);
    let occ = d.plan(PAYLOAD, 100, 1.0).occupancy(&d.init).unwrap();
    let wm = d.watermark(PAYLOAD, 100, 1.0);
    let report = indistinguishability_report(&wm.model, &wm.key, DEFAULT_BINS).unwrap();
    let ok = report.layers.len() == HOST_LAYERS.len()
        && report
            .layers
            .iter()
            .all(|l| (0.8..=1.25).contains(&l.std_ratio()) && l.kl_empirical_nats <= 0.15);
    let detail: Vec<String> = report
        .layers
        .iter()
        .zip(&occ.per_layer)
        .map(|(l, (_, p))| {
            format!("{} ({p:.1}%): std ratio {:.3}, KL {:.3}", l.layer, l.std_ratio(), l.kl_empirical_nats)
        })
        .collect();
    check(ok, detail.join("; "))
}

/// C10: at the largest threshold that breaks the watermark, the model is broken too.
fn cutoff_tradeoff() -> Outcome {
    let d = desk(1);
    let wm = d.watermark(PAYLOAD, 50, 1.0);
    let layers: Vec<String> = HOST_LAYERS.iter().map(|s| s.to_string()).collect();
    let w_max = layers
        .iter()
        .flat_map(|n| wm.model.layer(n).unwrap().weights.iter())
        .fold(0.0f64, |m, &w| m.max(f64::from(w).abs()));
    for k in 0..=200 {
        let threshold = w_max * 10f64.powf(-5.0 * k as f64 / 200.0);
        let cut = cutoff(&wm.model, &layers, threshold).unwrap();
        let ber = bit_error_rate(&wm.message, &extract(&cut, &wm.key).unwrap()).unwrap();
        if ber > 10.0 {
            let ter = evaluate(&cut, &d.data).unwrap();
            return check(ter >= 40.0, format!("T = {threshold:.3e}: BER {ber:.1}, TER {ter:.1}"));
        }
    }
    Err("BER never exceeded 10% in the sweep".into())
}

/// Mean cross-entropy computed directly from the parameters, without the
/// trainer's forward pass.
fn reference_loss(layers: &[Dense], xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let mut a = x.clone();
        for (k, layer) in layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                z[o] = layer.b[o];
                for i in 0..layer.inputs {
                    z[o] += layer.w[o * layer.inputs + i] * a[i];
                }
            }
            a = if k + 1 < layers.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z };
        }
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = a.iter().map(|v| (v - max).exp()).sum();
        total -= (a[y] - max) - norm.ln();
    }
    total / xs.len() as f64
}

fn param_mut(m: &mut Mlp, k: usize, j: usize) -> &mut f64 {
    let n_w = m.layers[k].w.len();
    if j < n_w {
        &mut m.layers[k].w[j]
    } else {
        &mut m.layers[k].b[j - n_w]
    }
}

fn gradient_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.gen_range(2..=4);
    let classes = rng.gen_range(2..=4);
    let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(3..=6)).collect();
    let spec = NetworkSpec { input_dim: input, hidden, classes, init: Default::default(), seed };
    let mut mlp = Mlp::from_model(&build_model(&spec).unwrap()).unwrap();
    for layer in &mut mlp.layers {
        for b in &mut layer.b {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<usize> = (0..8).map(|_| rng.gen_range(0..classes)).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let (_, grads, _) = mlp.loss_and_grad(&refs, &ys);

    let h = 1e-4;
    let mut worst = 0.0f64;
    for k in 0..mlp.layers.len() {
        for j in 0..mlp.layers[k].w.len() + mlp.layers[k].b.len() {
            let original = *param_mut(&mut mlp, k, j);
            *param_mut(&mut mlp, k, j) = original + h;
            let plus = reference_loss(&mlp.layers, &xs, &ys);
            *param_mut(&mut mlp, k, j) = original - h;
            let minus = reference_loss(&mlp.layers, &xs, &ys);
            *param_mut(&mut mlp, k, j) = original;
            let numeric = (plus - minus) / (2.0 * h);
            let n_w = mlp.layers[k].w.len();
            let analytic = if j < n_w { grads[k].w[j] } else { grads[k].b[j - n_w] };
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

fn frozen_integrity_100_epochs() -> bool {
    let spec = NetworkSpec { input_dim: 2, hidden: vec![16, 16], classes: 3, init: Default::default(), seed: 11 };
    let mut model = build_model(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mask: Vec<(usize, usize)> = model
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(o, l)| (0..l.weight_count()).map(move |i| (o, i)))
        .filter(|_| rng.gen_bool(0.3))
        .collect();
    model.set_frozen(mask.iter().copied()).unwrap();
    let data: Dataset = gen_dataset(DatasetKind::Rings, 3, 60, 0.1, 13).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 16,
        learning_rate: 0.1,
        lr_decay: 1.0,
        lr_step_epochs: 0,
        seed: 14,
        subset_fraction: 1.0,
    };
    let (trained, _) = train(&model, &data, &cfg).unwrap();
    let intact = mask
        .iter()
        .all(|&(o, i)| trained.layers()[o].weights[i].to_bits() == model.layers()[o].weights[i].to_bits());
    let moved = trained.layers().iter().zip(model.layers()).any(|(a, b)| a.weights != b.weights);
    intact && moved
}

/// C11: gradients vs central differences; frozen weights over 100 epochs.
fn trainer_correctness() -> Outcome {
    let worst = (0..10).map(|seed| gradient_worst_error(0x11 + seed)).fold(0.0, f64::max);
    let frozen_ok = frozen_integrity_100_epochs();
    check(
        worst <= 1e-4 && frozen_ok,
        format!("worst relative gradient error {worst:.2e} over 10 nets; frozen weights intact: {frozen_ok}"),
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        ("C1", "integrity by construction", integrity_by_construction),
        ("C2", "decoder properties", decoder_properties),
        ("C3", "maximum-entropy Laplace optimum", laplace_optimality),
        ("C4", "quantization robustness", quantization_robustness),
        ("C5", "pruning robustness", pruning_robustness),
        ("C6", "fine-tuning robustness", fine_tuning_robustness),
        ("C7", "transfer-learning robustness", transfer_robustness),
        ("C8", "unobtrusiveness", unobtrusiveness),
        ("C9", "secrecy at C = 1", secrecy),
        ("C10", "cut-off attack trade-off", cutoff_tradeoff),
        ("C11", "trainer correctness", trainer_correctness),
    ];
    let results: Vec<(Outcome, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, _, run)| {
                scope.spawn(move || {
                    let start = Instant::now();
                    let outcome = std::panic::catch_unwind(run)
                        .unwrap_or_else(|_| Err("panicked".to_string()));
                    (outcome, start.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut failed = 0;
    for ((id, name, _), (outcome, secs)) in criteria.iter().zip(&results) {
        match outcome {
            Ok(detail) => println!("[PASS] {id} {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
