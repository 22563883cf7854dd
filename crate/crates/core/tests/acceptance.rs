//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with the measured values before asserting.
//!
//! Criterion 7's retrieval thresholds are asserted exactly as stated even
//! though the measured ceiling of this implementation sits well below them;
//! that test documents the shortfall in its output rather than weakening the
//! bar.

use std::time::Instant;

use dcg_core::config::{
    derive_seed, EvalConfig, ModelConfig, PeFlags, ScalePreset, TrainConfig,
};
use dcg_core::data::ndjson::LabeledSketch;
use dcg_core::data::{generate_synthetic, toy_dataset, Shape, StrokeSequence, CANVAS_FILL};
use dcg_core::eval::{evaluate_ret, MetricsReport};
use dcg_core::graph;
use dcg_core::model::{BnMode, LatentNoise, SketchModel};
use dcg_core::pe::{absolute_pe, RelPeRef, RelativePeBank};
use dcg_core::pipeline;
use dcg_core::train::{train, Dataset};
use dcg_tensor::{ParamSet, Tape, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn labeled(count: usize, seed: u64) -> Vec<LabeledSketch> {
    toy_dataset(count, seed)
        .into_iter()
        .map(|(seq, category)| LabeledSketch {
            seq,
            category: Some(category),
        })
        .collect()
}

#[test]
fn criterion_01_end_to_end_gradient_suite() {
    let start = Instant::now();
    let report = dcg_core::gradcheck::run_gradcheck(0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let ok = report.passed() && elapsed < 120.0;
    println!(
        "ACCEPTANCE 01 {}: gradient suite max_rel_err={:.3e} (tolerance 1e-4) over groups {:?} in {:.1}s (< 120s)",
        verdict(ok),
        report.max_rel_err,
        report.groups.iter().map(|g| g.group.as_str()).collect::<Vec<_>>(),
        elapsed
    );
    for g in &report.groups {
        assert!(
            g.max_rel_err < dcg_core::gradcheck::FD_TOLERANCE,
            "group {} at {:.3e}",
            g.group,
            g.max_rel_err
        );
    }
    assert!(elapsed < 120.0);
}

#[test]
fn criterion_02_adjacency_structure_on_random_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    for _ in 0..1000 {
        let m = rng.random_range(3..8usize);
        let dim = rng.random_range(2..6usize);
        let v = Tensor::<f64>::randn(&[m, dim], 1.0, &mut rng);
        let a = graph::build_masked_adjacency(&v);
        // Independent cosine oracle.
        let alpha = |i: usize, j: usize| -> f64 {
            let (ri, rj) = (v.row_slice(i), v.row_slice(j));
            let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
            let ni: f64 = ri.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nj: f64 = rj.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (ni * nj)
        };
        for i in 0..m {
            assert_eq!(a.at2(i, i), 1.0, "diagonal must be 1");
            let mut offdiag: Vec<(usize, f64)> = (0..m)
                .filter(|&j| j != i && a.at2(i, j) != 0.0)
                .map(|j| (j, a.at2(i, j)))
                .collect();
            assert!(offdiag.len() <= 2, "more than two neighbors");
            // The kept entries must be exactly 0.5/0.2 times the row's top-2
            // oracle similarities.
            let mut scores: Vec<(usize, f64)> =
                (0..m).filter(|&j| j != i).map(|j| (j, alpha(i, j))).collect();
            scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            offdiag.sort_by(|a, b| a.0.cmp(&b.0));
            let mut expected = vec![
                (scores[0].0, 0.5 * scores[0].1),
                (scores[1].0, 0.2 * scores[1].1),
            ];
            expected.sort_by(|a, b| a.0.cmp(&b.0));
            for ((ja, va), (je, ve)) in offdiag.iter().zip(expected.iter()) {
                assert_eq!(ja, je, "neighbor index mismatch in row {i}");
                assert!((va - ve).abs() < 1e-12, "weight {va} vs oracle {ve}");
            }
            checked += 1;
        }
    }
    // Crafted exact tie: identical candidate rows; the lower index must win.
    let tie = Tensor::<f64>::from_vec(
        &[3, 2],
        vec![1.0, 0.0, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    )
    .unwrap();
    let a = graph::build_masked_adjacency(&tie);
    let alpha01 = std::f64::consts::FRAC_1_SQRT_2;
    assert!((a.at2(0, 1) - 0.5 * alpha01).abs() < 1e-12, "tie must break to the lower index");
    assert!((a.at2(0, 2) - 0.2 * alpha01).abs() < 1e-12);
    println!(
        "ACCEPTANCE 02 PASS: adjacency structure verified on 1000 random embedding sets ({checked} rows), tie-break deterministic"
    );
}

#[test]
fn criterion_03_pe_isolation_and_pe_in_edges_variant() {
    let cfg = ModelConfig::gradcheck_micro();
    let seq = generate_synthetic(Shape::Circle, &mut ChaCha8Rng::seed_from_u64(5))
        .normalized(CANVAS_FILL);
    let mut short = seq.clone();
    short.points.truncate(cfg.max_seq_len - 1);
    let input = pipeline::prepare_input::<f64>(&seq, &cfg, None).images;

    let graph_of = |mutate: &dyn Fn(&mut SketchModel<f64>)| {
        let mut model = SketchModel::<f64>::init(cfg.clone(), 9).unwrap();
        model.set_delta_scale(30.0);
        mutate(&mut model);
        let target = model.stroke5_target(&short).unwrap();
        let tape = Tape::new();
        let out = model
            .forward_loss(&tape, &input, &target, &LatentNoise::Zero, BnMode::Eval, None)
            .unwrap();
        out.graph
    };

    let baseline = graph_of(&|_m| {});
    // Perturb every relative-PE vector.
    let perturbed_r = graph_of(&|m| {
        let ids: Vec<_> = m.rel_bank().offset_ids().to_vec();
        for id in ids {
            let bumped = m.params().get(id).map(|x| x + 3.7);
            m.params_mut().set(id, bumped);
        }
    });
    // Perturb the absolute table.
    let perturbed_p = graph_of(&|m| {
        let rows = dcg_core::pe::pe_rows_for_graph::<f64>(cfg.patch_count, cfg.embed_dim)
            .unwrap()
            .map(|x| x * 2.5 + 0.9);
        m.override_absolute_pe_rows(rows);
    });
    let iso_ok = baseline.a == perturbed_r.a
        && baseline.a_hat == perturbed_r.a_hat
        && baseline.a == perturbed_p.a
        && baseline.a_hat == perturbed_p.a_hat;

    // PE-in-edges variant must change A on the same fixture.
    let ablated = graph_of(&|m| {
        m.set_flags(PeFlags {
            absolute_pe: true,
            relative_pe: true,
            pe_in_edges: true,
        });
    });
    let variant_ok = ablated.a != baseline.a;
    println!(
        "ACCEPTANCE 03 {}: default A/A-hat bit-identical under P and R perturbations ({iso_ok}); pe-in-edges changes A ({variant_ok})",
        verdict(iso_ok && variant_ok)
    );
    assert!(iso_ok);
    assert!(variant_ok);
}

#[test]
fn criterion_04_relative_pe_constraints() {
    let mut params = ParamSet::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = 12usize;
    let bank = RelativePeBank::init(&mut params, m, 16, &mut rng);
    let mut cases = 0usize;
    for _ in 0..2000 {
        let i = rng.random_range(1..=m);
        let j = rng.random_range(1..=m);
        let k = rng.random_range(0..m);
        if i + k <= m && j + k <= m {
            // Target-invariance as storage identity.
            assert_eq!(bank.lookup(i, i + k).unwrap(), bank.lookup(j, j + k).unwrap());
            cases += 1;
        }
        // Undirectedness as storage identity.
        assert_eq!(bank.lookup(i, j).unwrap(), bank.lookup(j, i).unwrap());
        // Global-node lookups resolve to the fixed placeholder, which is not
        // a parameter and therefore cannot appear in any gradient map.
        assert_eq!(bank.lookup(0, j).unwrap(), RelPeRef::Placeholder);
    }
    assert_eq!(bank.offset_ids().len(), m);
    // The placeholder has no ParamId: the gradient map is keyed by ParamId,
    // so it is excluded by construction. Double-check no offset id is
    // reachable from a (0, j) lookup.
    for j in 0..=m {
        assert!(matches!(bank.lookup(0, j).unwrap(), RelPeRef::Placeholder));
    }
    println!(
        "ACCEPTANCE 04 PASS: relative-PE target-invariance/undirectedness hold as storage identity over {cases} random (i, j, k) cases; placeholders are not parameters"
    );
}

#[test]
fn criterion_05_sinusoidal_table_matches_direct_evaluation() {
    let mut worst = 0.0f64;
    for dim in [16usize, 64, 128, 512] {
        for pos in 0..=64usize {
            let got = absolute_pe(pos, dim).unwrap();
            for d in 0..dim / 2 {
                // Independent route: multiply by the negative power instead
                // of dividing by the positive one.
                let freq = 10000f64.powf(-((2 * d) as f64) / dim as f64);
                let angle = pos as f64 * freq;
                worst = worst.max((got[2 * d] - angle.sin()).abs());
                worst = worst.max((got[2 * d + 1] - angle.cos()).abs());
            }
        }
    }
    let ok = worst < 1e-12;
    println!(
        "ACCEPTANCE 05 {}: sinusoidal table matches direct evaluation, max abs err {worst:.2e} (< 1e-12) for pos <= 64, dim <= 512",
        verdict(ok)
    );
    assert!(ok);
}

#[test]
fn criterion_06_normalization_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_fact = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..200 {
        let a = Tensor::<f64>::rand_uniform(&[5, 5], 0.05, 1.0, &mut rng);
        let ours = graph::sym_normalize(&a).unwrap();
        // Brute-force oracle: build D^{-1/2} explicitly and do two matrix
        // multiplications.
        let mut dinv = Tensor::<f64>::zeros(&[5, 5]);
        for i in 0..5 {
            let deg: f64 = a.row_slice(i).iter().sum();
            dinv.set2(i, i, 1.0 / deg.sqrt());
        }
        let matmul = |x: &Tensor<f64>, y: &Tensor<f64>| -> Tensor<f64> {
            let mut out = Tensor::zeros(&[5, 5]);
            for i in 0..5 {
                for j in 0..5 {
                    let mut acc = 0.0;
                    for k in 0..5 {
                        acc += x.at2(i, k) * y.at2(k, j);
                    }
                    out.set2(i, j, acc);
                }
            }
            out
        };
        let oracle = matmul(&matmul(&dinv, &a), &dinv);
        for (x, y) in ours.data().iter().zip(oracle.data()) {
            worst_fact = worst_fact.max((x - y).abs());
        }
        // Scale invariance.
        let scaled = graph::sym_normalize(&a.map(|x| x * 7.3)).unwrap();
        for (x, y) in ours.data().iter().zip(scaled.data()) {
            worst_scale = worst_scale.max((x - y).abs());
        }
    }
    let ok = worst_fact < 1e-12 && worst_scale < 1e-10;
    println!(
        "ACCEPTANCE 06 {}: sym-normalize matches brute-force oracle (max {worst_fact:.2e} < 1e-12) and is scale-invariant (max {worst_scale:.2e} < 1e-10) on random 5x5 matrices",
        verdict(ok)
    );
    assert!(ok);
}

#[test]
fn criterion_07_overfit_and_retrieve() {
    let start = Instant::now();
    let cfg = ModelConfig::toy();
    let dataset = Dataset::prepare(labeled(32, 0), &cfg).unwrap();
    let mut model = SketchModel::<f32>::init(cfg, 0).unwrap();
    let mut tc = TrainConfig::new(ScalePreset::Toy);
    // 480 optimizer steps (<= 500): batch 1 keeps the per-epoch decay
    // schedule alive for the whole run.
    tc.epochs = 15;
    tc.batch_size = 1;
    tc.threads = 1;
    let out = train(&mut model, &dataset, &tc).unwrap();
    let steps = out.loss_curve.len();
    let initial: f64 =
        out.loss_curve[..32].iter().map(|p| p.nll).sum::<f64>() / 32.0;
    let final_nll: f64 =
        out.loss_curve[steps - 32..].iter().map(|p| p.nll).sum::<f64>() / 32.0;
    let nll_ok = final_nll <= 0.5 * initial;

    let ret0 = evaluate_ret(
        &model,
        &dataset,
        &EvalConfig {
            mask_prob: 0.0,
            threads: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let ret10 = evaluate_ret(
        &model,
        &dataset,
        &EvalConfig {
            mask_prob: 0.1,
            threads: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let r1_clean = ret0.ret_at[0].1;
    let r1_masked = ret10.ret_at[0].1;
    let elapsed = start.elapsed().as_secs_f64();
    let time_ok = elapsed < 600.0;
    let ret_clean_ok = r1_clean >= 90.0;
    let ret_masked_ok = r1_masked >= 60.0;
    let ok = nll_ok && ret_clean_ok && ret_masked_ok && time_ok;
    println!(
        "ACCEPTANCE 07 {}: {steps} steps in {elapsed:.0}s (< 600s: {time_ok}); NLL {initial:.1} -> {final_nll:.1} (<= 50%: {nll_ok}); Ret@1 mask0 = {r1_clean:.1}% (>= 90%: {ret_clean_ok}); Ret@1 mask10 = {r1_masked:.1}% (>= 60%: {ret_masked_ok})",
        verdict(ok)
    );
    assert!(steps <= 500, "budget exceeded: {steps} steps");
    assert!(time_ok, "took {elapsed:.0}s");
    assert!(nll_ok, "final NLL {final_nll:.2} vs initial {initial:.2}");
    // Asserted at the stated thresholds. The measured ceiling of this
    // implementation sits far below them (see README, "Known limitations"):
    // teacher-forced replay itself re-encodes to rank 1 for only about half
    // the corpus even at 4x the step budget, so these two assertions fail
    // honestly rather than being weakened.
    assert!(ret_clean_ok, "Ret@1 at mask 0% = {r1_clean:.1}% < 90%");
    assert!(ret_masked_ok, "Ret@1 at mask 10% = {r1_masked:.1}% < 60%");
}

#[test]
fn criterion_08_ablation_mechanics_change_step_one_loss() {
    let cfg_base = ModelConfig::toy();
    let seq = &labeled(4, 3)[0].seq.normalized(CANVAS_FILL);
    let loss_for = |flags: PeFlags| -> f64 {
        let mut cfg = cfg_base.clone();
        cfg.flags = flags;
        let mut model = SketchModel::<f32>::init(cfg.clone(), 11).unwrap();
        model.set_delta_scale(100.0);
        let input = pipeline::prepare_input::<f32>(seq, &cfg, None).images;
        let target = model.stroke5_target(seq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(11, "eps", 1));
        let noise = LatentNoise::sampled(cfg.latent_dim, &mut rng);
        let tape = Tape::new();
        let out = model
            .forward_loss(&tape, &input, &target, &noise, BnMode::Train, None)
            .unwrap();
        tape.value(out.loss).item() as f64
    };
    let default = loss_for(PeFlags::default());
    let no_abs = loss_for(PeFlags {
        absolute_pe: false,
        relative_pe: true,
        pe_in_edges: false,
    });
    let no_rel = loss_for(PeFlags {
        absolute_pe: true,
        relative_pe: false,
        pe_in_edges: false,
    });
    let in_edges = loss_for(PeFlags {
        absolute_pe: true,
        relative_pe: true,
        pe_in_edges: true,
    });
    let ok = no_abs != default && no_rel != default && in_edges != default;
    println!(
        "ACCEPTANCE 08 {}: step-1 loss default {default:.6} vs no-abs-pe {no_abs:.6}, no-rel-pe {no_rel:.6}, pe-in-edges {in_edges:.6} (all differ: {ok})",
        verdict(ok)
    );
    assert!(ok);
}

#[test]
fn criterion_09_train_eval_determinism() {
    let run = || {
        let cfg = ModelConfig::toy();
        let dataset = Dataset::prepare(labeled(8, 1), &cfg).unwrap();
        let mut model = SketchModel::<f32>::init(cfg, 5).unwrap();
        let mut tc = TrainConfig::new(ScalePreset::Toy);
        tc.epochs = 2;
        tc.batch_size = 4;
        tc.threads = 1;
        tc.seed = 5;
        train(&mut model, &dataset, &tc).unwrap();
        let mut ckpt_bytes = Vec::new();
        dcg_core::checkpoint::write_model(&model, &mut ckpt_bytes).unwrap();
        let ec = EvalConfig {
            mask_prob: 0.1,
            threads: 1,
            ..Default::default()
        };
        let ret = evaluate_ret(&model, &dataset, &ec).unwrap();
        let metrics = MetricsReport::build(model.config(), &ec, &ret, None)
            .unwrap()
            .to_json()
            .unwrap();
        (ckpt_bytes, metrics)
    };
    let (ckpt_a, metrics_a) = run();
    let (ckpt_b, metrics_b) = run();
    let ok = ckpt_a == ckpt_b && metrics_a == metrics_b;
    println!(
        "ACCEPTANCE 09 {}: two train->eval runs at threads=1 give byte-identical checkpoints ({} bytes) and metrics JSON ({} bytes)",
        verdict(ok),
        ckpt_a.len(),
        metrics_a.len()
    );
    assert!(ok);
}

#[test]
fn criterion_10_learning_rate_schedule_exactness() {
    let cfg = ModelConfig::toy();
    let dataset = Dataset::prepare(labeled(8, 2), &cfg).unwrap();
    let mut model = SketchModel::<f32>::init(cfg, 1).unwrap();
    let mut tc = TrainConfig::new(ScalePreset::Toy);
    tc.epochs = 5;
    tc.batch_size = 2;
    tc.threads = 1;
    let out = train(&mut model, &dataset, &tc).unwrap();
    let mut worst = 0.0f64;
    for p in &out.loss_curve {
        let expect = 1e-3 * 0.95f64.powi(p.epoch as i32);
        worst = worst.max((p.lr - expect).abs());
    }
    let ok = worst < 1e-12 && !out.loss_curve.is_empty();
    println!(
        "ACCEPTANCE 10 {}: recorded learning rates match 1e-3 * 0.95^epoch, max abs deviation {worst:.2e} (< 1e-12) over {} steps",
        verdict(ok),
        out.loss_curve.len()
    );
    assert!(ok);
}
