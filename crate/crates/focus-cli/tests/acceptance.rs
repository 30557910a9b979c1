//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N: ...` line. Benchmarks are pinned desk-scale configurations;
//! everything is deterministic, so these results are stable run to run.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;

use focus::ablation::{run_ablation, ARM_FULL, ARM_NO_SINK};
use focus::backbone::{BackboneConfig, FrozenBackbone};
use focus::eval::{self, evaluate, split_indices};
use focus::hsi::{default_partition, generate_synthetic, Sample, SyntheticSpec};
use focus::model::{attention_mask, FocusParams};
use focus::numerics::{finite_diff_check, Tensor};
use focus::rng::SplitMix64;
use focus::saliency::CubeMode;
use focus::sink::HeadScope;
use focus::train::{
    fit, loss_value, overhead_ratio, sample_grads, FitSetup, TaskKind, TrainConfig,
};

// ---- shared benchmark builders ---------------------------------------------

/// Binary healthy-vs-stressed benchmark family: C=20 bands over 400-2400 nm,
/// two spectral groups, 16x16 cubes, class 1 carries the lesion in group 1.
fn bench_data(seed: u64, noise: f64, amplitude: f64, per_class: usize) -> Vec<Sample> {
    generate_synthetic(&SyntheticSpec {
        classes: 2,
        bands: 20,
        height: 16,
        width: 16,
        samples_per_class: per_class,
        groups: 2,
        wavelength_range: (400.0, 2400.0),
        discriminative_group: vec![0, 1],
        lesion_free_classes: 1,
        amplitude,
        band_jitter: 0.5,
        lesion_radius_frac: (0.20, 0.38),
        noise_sigma: noise,
        seed,
        regression: false,
    })
    .unwrap()
}

fn bench_setup(samples: &[Sample], backbone_seed: u64, dim: usize, heads: usize) -> FitSetup {
    FitSetup {
        backbone: Arc::new(
            FrozenBackbone::init_frozen(BackboneConfig {
                dim,
                layers: 2,
                heads,
                mlp_ratio: 2.0,
                seed: backbone_seed,
            })
            .unwrap(),
        ),
        partition: default_partition(samples[0].cube.wavelengths(), Some(2)).unwrap(),
        patch_size: 4,
        use_sink: true,
        classes: 2,
    }
}

fn bench_cfg(seed: u64, epochs: usize, lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed,
        learning_rate: 1e-2,
        lambda,
        rho_aux: 0.25,
        ..TrainConfig::default()
    }
}

fn temp_dir(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("focus-acceptance-{}-{name}", std::process::id()));
    p
}

// ---- criterion 1 ------------------------------------------------------------

/// Analytic gradients of the combined objective match central finite
/// differences (eps 1e-5) within 1e-4 relative error on the toy config
/// C=8, G=2, K=2, d=8, L=2, H=2, 4x4 patch grid.
#[test]
fn c01_gradient_oracle() {
    let start = std::time::Instant::now();
    let samples = generate_synthetic(&SyntheticSpec {
        classes: 2,
        bands: 8,
        height: 16,
        width: 16,
        samples_per_class: 3,
        groups: 2,
        wavelength_range: (400.0, 2400.0),
        discriminative_group: vec![0, 1],
        lesion_free_classes: 0,
        amplitude: 0.4,
        band_jitter: 0.5,
        lesion_radius_frac: (0.22, 0.40),
        noise_sigma: 0.02,
        seed: 31,
        regression: false,
    })
    .unwrap();
    let setup = FitSetup {
        backbone: Arc::new(
            FrozenBackbone::init_frozen(BackboneConfig {
                dim: 8,
                layers: 2,
                heads: 2,
                mlp_ratio: 2.0,
                seed: 41,
            })
            .unwrap(),
        ),
        partition: default_partition(samples[0].cube.wavelengths(), Some(2)).unwrap(),
        patch_size: 4,
        use_sink: true,
        classes: 2,
    };
    // A few optimizer steps move the readout off its zero init so gradients
    // flow through every leaf; rho 0.5 leaves one aux head for the sink term.
    let cfg = TrainConfig { rho_aux: 0.5, ..bench_cfg(5, 3, 1e-3) };
    let warm = fit(&samples, &setup, &cfg).unwrap();
    let model = warm.model;
    let parts = warm.parts;
    let lambda = 1e-3;
    let sample = &samples[4];

    let analytic =
        sample_grads(&model, sample, &parts, lambda, TaskKind::Classification).unwrap().grads;
    let mut point: Vec<Tensor> = model.params.tensors().iter().map(|t| (*t).clone()).collect();
    let f = |ps: &[Tensor]| {
        let mut m = model.clone();
        for (dst, src) in m.params.tensors_mut().into_iter().zip(ps) {
            *dst = src.clone();
        }
        loss_value(&m, sample, &parts, lambda, TaskKind::Classification).unwrap()
    };
    let err = finite_diff_check(f, &mut point, &analytic, 1e-5).unwrap();
    let elapsed = start.elapsed();
    println!(
        "criterion 1: {} — max relative gradient error {err:.3e} (tolerance 1e-4), {elapsed:?}",
        if err < 1e-4 { "PASS" } else { "FAIL" }
    );
    assert!(err < 1e-4, "gradient error {err}");
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
}

// ---- criterion 2 ------------------------------------------------------------

/// Over 100 random forwards every attention row sums to 1 within 1e-9 and
/// every mask-forbidden entry is exactly zero.
#[test]
fn c02_attention_contracts() {
    let samples = bench_data(61, 0.05, 0.5, 2);
    let mut worst_row_gap = 0.0f64;
    let mut masked_nonzero = 0usize;
    let mut forwards = 0usize;
    for trial in 0..25u64 {
        let setup = bench_setup(&samples, 70 + trial, 16, 4);
        let params = FocusParams::init(2, 2, 20, 16, 80 + trial);
        let model = focus::model::FocusModel::new(
            setup.backbone.clone(),
            params,
            setup.partition.clone(),
            4,
            trial % 2 == 0, // alternate sink on/off
        )
        .unwrap();
        let sample = &samples[(trial % samples.len() as u64) as usize];
        for class in 0..2 {
            let fwd = model.forward_class(&sample.cube, class).unwrap();
            forwards += 1;
            let layout = fwd.layout;
            let mask = attention_mask(&layout);
            for l in 0..fwd.attention.layer_count() {
                for h in 0..fwd.attention.head_count() {
                    let a = fwd.attention.head(l, h);
                    for q in 0..a.rows() {
                        let sum: f64 = a.row_slice(q).iter().sum();
                        worst_row_gap = worst_row_gap.max((sum - 1.0).abs());
                        for k in 0..a.cols() {
                            if !mask.allowed(q, k) && a.at(q, k) != 0.0 {
                                masked_nonzero += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let pass = forwards >= 50 && worst_row_gap < 1e-9 && masked_nonzero == 0;
    println!(
        "criterion 2: {} — {forwards} forwards (x2 layers x heads), worst row-sum gap {worst_row_gap:.2e}, masked nonzeros {masked_nonzero}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

// ---- criterion 3 ------------------------------------------------------------

/// The backbone checksum is bitwise identical before and after a 20-epoch
/// training run.
#[test]
fn c03_frozen_contract() {
    let samples = bench_data(71, 0.02, 0.5, 6);
    let setup = bench_setup(&samples, 72, 32, 4);
    let before = setup.backbone.checksum();
    let outcome = fit(&samples, &setup, &bench_cfg(73, 20, 1e-3)).unwrap();
    let after = setup.backbone.checksum();
    assert_eq!(outcome.log.entries.len(), 20);
    println!(
        "criterion 3: {} — checksum {before:#018x} unchanged over 20 epochs",
        if before == after { "PASS" } else { "FAIL" }
    );
    assert_eq!(before, after);
}

// ---- criterion 4 ------------------------------------------------------------

/// Across 5 seed-matched pairs (lambda 1e-3 vs 0): aux-head sink rate is
/// strictly larger with the loss in every pair, and the collapse rate
/// decreases in at least 4 of 5.
#[test]
fn c04_sink_efficacy() {
    let start = std::time::Instant::now();
    let mut rate_wins = 0;
    let mut collapse_wins = 0;
    for seed in 0..5u64 {
        let samples = bench_data(100 + seed, 0.02, 0.6, 20);
        let setup = bench_setup(&samples, 200 + seed, 48, 8);
        let with = fit(&samples, &setup, &bench_cfg(seed, 40, 1e-3)).unwrap();
        let without = fit(&samples, &setup, &bench_cfg(seed, 40, 0.0)).unwrap();

        let rate_with = eval::mean_aux_sink_rate(
            &with.model,
            &with.parts,
            &samples,
            TaskKind::Classification,
        )
        .unwrap()
        .unwrap();
        let rate_without = eval::mean_aux_sink_rate(
            &without.model,
            &without.parts,
            &samples,
            TaskKind::Classification,
        )
        .unwrap()
        .unwrap();

        let collapse = |m: &focus::model::FocusModel| -> f64 {
            let mut total = 0.0;
            for s in &samples {
                let class = s.label.class().unwrap();
                let fwd = m.forward_class(&s.cube, class).unwrap();
                total += focus::sink::collapse_rate(&fwd.attention);
            }
            total / samples.len() as f64
        };
        let collapse_with = collapse(&with.model);
        let collapse_without = collapse(&without.model);

        if rate_with > rate_without {
            rate_wins += 1;
        }
        if collapse_with < collapse_without {
            collapse_wins += 1;
        }
        println!(
            "  seed {seed}: aux sink rate {rate_with:.4} vs {rate_without:.4}, collapse {collapse_with:.4} vs {collapse_without:.4}"
        );
    }
    let pass = rate_wins == 5 && collapse_wins >= 4;
    println!(
        "criterion 4: {} — sink-rate wins {rate_wins}/5, collapse improvements {collapse_wins}/5 (need 5 and >=4), {:?}",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed()
    );
    assert!(start.elapsed().as_secs() < 600, "over the 10-minute budget");
    assert!(pass);
}

// ---- criterion 5 ------------------------------------------------------------

/// Over 10 seeds: the spectral curve's top group matches the planted group
/// for the majority of stressed samples in at least 80% of seeds, and the
/// mean BIO@5 beats the Monte-Carlo random-top-5 baseline by at least 3x.
#[test]
fn c05_planted_band_recovery() {
    // Monte-Carlo oracle: expected IoU of a uniformly random top-5 band set
    // against the truncated planted set over C=20 bands.
    let baseline = {
        let mut rng = SplitMix64::new(999);
        let truth: Vec<usize> = (10..15).collect(); // any fixed 5-subset
        let trials = 20_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let mut bands: Vec<usize> = (0..20).collect();
            rng.shuffle(&mut bands);
            let pick = &bands[..5];
            let inter = pick.iter().filter(|b| truth.contains(b)).count();
            total += inter as f64 / (10 - inter) as f64;
        }
        total / trials as f64
    };

    let mut seed_successes = 0;
    let mut bio_sum = 0.0;
    for seed in 0..10u64 {
        let samples = bench_data(100 + seed, 0.05, 0.6, 20);
        let setup = bench_setup(&samples, 200 + seed, 48, 8);
        let outcome = fit(&samples, &setup, &bench_cfg(seed, 60, 5e-5)).unwrap();
        let mut recovered = 0;
        let mut lesioned = 0;
        let mut bio_seed = 0.0;
        for sample in &samples {
            if !sample.has_lesion() {
                continue;
            }
            lesioned += 1;
            let class = sample.label.class().unwrap();
            let (_, _, curve) = eval::explain_sample(
                &outcome.model,
                &outcome.parts,
                sample,
                CubeMode::Faithful,
                class,
            )
            .unwrap();
            let top = eval::top_k_bands(&curve, 1)[0];
            let planted = outcome.model.partition().group_of(sample.true_bands[0]);
            if outcome.model.partition().group_of(top) == planted {
                recovered += 1;
            }
            bio_seed += eval::bio_at_k(&curve, &sample.true_bands, 5).unwrap();
        }
        bio_seed /= lesioned as f64;
        bio_sum += bio_seed;
        let majority = 2 * recovered > lesioned;
        if majority {
            seed_successes += 1;
        }
        println!("  seed {seed}: top-group {recovered}/{lesioned}, mean BIO@5 {bio_seed:.3}");
    }
    let mean_bio = bio_sum / 10.0;
    let pass = seed_successes >= 8 && mean_bio >= 3.0 * baseline;
    println!(
        "criterion 5: {} — {seed_successes}/10 seeds recover the planted group (need >=8); mean BIO@5 {mean_bio:.3} vs 3x random baseline {:.3}",
        if pass { "PASS" } else { "FAIL" },
        3.0 * baseline
    );
    // Exact hypergeometric expectation is ~0.159; the spec's "~0.13" is a
    // looser estimate of the same quantity.
    assert!((0.10..0.20).contains(&baseline), "oracle baseline {baseline}");
    assert!(pass);
}

// ---- criterion 6 ------------------------------------------------------------

/// On the pinned localization benchmark (trained at sigma 0.05, scored on
/// noiseless cubes from the same generator family): spatial IoU >= 0.5 and
/// AUPRC >= 0.8.
#[test]
fn c06_lesion_localization() {
    let samples = bench_data(102, 0.05, 0.6, 20);
    let clean = bench_data(902, 0.0, 0.6, 8);
    let setup = bench_setup(&samples, 202, 48, 8);
    let outcome = fit(&samples, &setup, &bench_cfg(2, 60, 5e-5)).unwrap();
    let report = evaluate(
        &outcome.model,
        &outcome.parts,
        &clean,
        CubeMode::Faithful,
        5,
        TaskKind::Classification,
    )
    .unwrap();
    let iou = report.mean_spatial_iou.unwrap();
    let auprc = report.mean_auprc.unwrap();
    let pass = iou >= 0.5 && auprc >= 0.8;
    println!(
        "criterion 6: {} — noiseless spatial IoU {iou:.3} (need >=0.5), AUPRC {auprc:.3} (need >=0.8)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

// ---- criterion 7 ------------------------------------------------------------

/// Overhead at paper-scale dims: enumeration matches the closed form exactly
/// and the ratio against an 86M-parameter backbone is below 1%.
#[test]
fn c07_overhead_bound() {
    let (k, g, c, d) = (4usize, 10usize, 204usize, 768usize);
    let params = FocusParams::init(k, g, c, d, 0);
    let closed_form = k * g * d + d + c * d + d + k;
    let enumerated = params.trainable_count();
    let backbone = BackboneConfig { dim: 768, layers: 12, heads: 12, mlp_ratio: 4.0, seed: 0 };
    let ratio = overhead_ratio(&params, &backbone);
    let pass = enumerated == closed_form && ratio < 0.01;
    println!(
        "criterion 7: {} — {enumerated} trainable scalars (closed form {closed_form}) / {} backbone scalars = {ratio:.5} (< 0.01)",
        if pass { "PASS" } else { "FAIL" },
        backbone.param_count()
    );
    assert_eq!(enumerated, closed_form);
    assert!(ratio < 0.01, "ratio {ratio}");
}

// ---- criterion 8 ------------------------------------------------------------

/// cmd_explain runs with differentiation disabled and produces byte-identical
/// outputs across two invocations.
#[test]
fn c08_gradient_free_explanation() {
    let base = temp_dir("c08");
    std::fs::remove_dir_all(&base).ok();
    let data = base.join("data");
    let ckpt = base.join("ckpt");
    let bin = env!("CARGO_BIN_EXE_focus");

    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().expect("spawn focus");
        assert!(
            out.status.success(),
            "focus {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "gen-data", "--out", data.to_str().unwrap(), "--classes", "2", "--bands", "20",
        "--size", "16", "--samples", "6", "--groups", "2", "--healthy", "1",
        "--amplitude", "0.6", "--noise", "0.05", "--lesion-min", "0.2", "--lesion-max", "0.38",
        "--seed", "7",
    ]);
    run(&[
        "train", "--data", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap(),
        "--epochs", "6", "--lr", "0.01", "--lambda", "5e-5", "--groups", "2", "--patch", "4",
        "--dim", "16", "--layers", "2", "--heads", "4", "--seed", "3",
    ]);
    let cube = data.join("sample_0006.hsc");
    let out1 = base.join("explain1");
    let out2 = base.join("explain2");
    for out in [&out1, &out2] {
        run(&[
            "explain", "--model", ckpt.to_str().unwrap(), "--cube", cube.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ]);
    }
    let files =
        ["saliency.hsc", "heatmap.pgm", "heatmap.csv", "curve.csv", "rollout.pgm", "sink_metrics.csv"];
    let mut identical = true;
    for f in files {
        let a = std::fs::read(out1.join(f)).unwrap();
        let b = std::fs::read(out2.join(f)).unwrap();
        if a != b {
            identical = false;
            println!("  {f} differs between runs");
        }
    }
    // The curve covers every band of the input cube.
    let curve = std::fs::read_to_string(out1.join("curve.csv")).unwrap();
    let curve_rows = curve.lines().count() - 1;
    println!(
        "criterion 8: {} — two explain runs byte-identical over {} artifacts; curve length {curve_rows} = C",
        if identical && curve_rows == 20 { "PASS" } else { "FAIL" },
        files.len()
    );
    assert!(identical);
    assert_eq!(curve_rows, 20);
    std::fs::remove_dir_all(&base).ok();
}

// ---- criterion 9 ------------------------------------------------------------

/// bio_at_k, spatial_iou and auprc match exhaustive brute-force computation
/// on every binary mask of a 3x3 grid with random score fields.
#[test]
fn c09_metric_oracles() {
    let mut rng = SplitMix64::new(23);
    let mut checked = [0usize; 3];
    for mask_bits in 0..512u32 {
        let mask: Vec<bool> = (0..9).map(|i| mask_bits >> i & 1 == 1).collect();
        let positives = mask.iter().filter(|m| **m).count();
        let scores: Vec<f64> = (0..9).map(|_| (rng.next_f64() * 8.0).floor() / 8.0).collect();

        // bio_at_k: treat mask as the planted band set over 9 bands.
        if positives > 0 {
            let truth: Vec<usize> = (0..9).filter(|&i| mask[i]).collect();
            let curve = focus::saliency::SpectralCurve::from_values(scores.clone());
            for k in [1, 3, 5] {
                let fast = eval::bio_at_k(&curve, &truth, k).unwrap();
                let brute = brute_bio(&scores, &truth, k);
                assert_eq!(fast, brute, "bio mask {mask_bits:#b} k {k}");
            }
            checked[0] += 1;
        }

        // spatial_iou on the 3x3 grid.
        let heat = focus::saliency::SpatialHeatmap::new(3, 3, scores.clone());
        let grid_mask = focus::hsi::Mask::new(3, 3, mask.clone()).unwrap();
        let fast = eval::spatial_iou(&heat, &grid_mask).unwrap();
        let brute = brute_iou(&scores, &mask);
        assert_eq!(fast.value, brute.0, "iou mask {mask_bits}");
        assert_eq!(fast.degenerate, brute.1);
        checked[1] += 1;

        // auprc; degenerate masks must error.
        match eval::auprc(&scores, &mask) {
            Ok(fast) => {
                let brute = brute_auprc(&scores, &mask);
                assert!(
                    (fast - brute).abs() <= 1e-12,
                    "auprc mask {mask_bits}: {fast} vs {brute}"
                );
                checked[2] += 1;
            }
            Err(_) => assert!(positives == 0 || positives == 9),
        }
    }
    println!(
        "criterion 9: PASS — brute-force parity on 3x3 grids: bio {} cases, iou {} cases, auprc {} cases",
        checked[0], checked[1], checked[2]
    );
    assert_eq!(checked[1], 512);
}

fn brute_bio(scores: &[f64], truth: &[usize], k: usize) -> f64 {
    // Independent path: full stable sort by (score desc, index asc).
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let predicted: Vec<usize> = order[..k].to_vec();
    let mut t = truth.to_vec();
    t.sort_unstable();
    t.truncate(k);
    let inter = predicted.iter().filter(|p| t.contains(p)).count();
    inter as f64 / (predicted.len() + t.len() - inter) as f64
}

fn brute_iou(scores: &[f64], mask: &[bool]) -> (f64, bool) {
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return (0.0, true);
    }
    let mut inter = 0;
    let mut union = 0;
    for (s, &m) in scores.iter().zip(mask) {
        let p = (s - lo) / (hi - lo) >= 0.5;
        if p && m {
            inter += 1;
        }
        if p || m {
            union += 1;
        }
    }
    (if union == 0 { 1.0 } else { inter as f64 / union as f64 }, false)
}

fn brute_auprc(scores: &[f64], mask: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = mask.iter().filter(|m| **m).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (s, &m) in scores.iter().zip(mask) {
            if *s >= t {
                if m {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / positives;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

// ---- criterion 10 -----------------------------------------------------------

/// The three-row ablation table improves collapse rate and sink consistency
/// from the no-sink arm to the full mechanism, seed-matched.
#[test]
fn c10_ablation_directions() {
    let samples = bench_data(7, 0.02, 0.6, 20);
    let setup = bench_setup(&samples, 107, 48, 8);
    let table = run_ablation(&samples, &setup, &bench_cfg(7, 40, 1e-3), 5).unwrap();
    assert_eq!(table.rows.len(), 3);

    let no_sink = table.row(ARM_NO_SINK).unwrap();
    let full = table.row(ARM_FULL).unwrap();
    assert!(no_sink.sink_absorption.is_none(), "w/o-sink absorption must be empty");

    let collapse_ok = full.collapse_rate < no_sink.collapse_rate;
    let consistency_ok = full.sink_consistency > no_sink.sink_consistency;
    println!("{}", table.to_csv());
    println!(
        "criterion 10: {} — collapse {:.4} -> {:.4} (must drop), consistency {:.4} -> {:.4} (must rise)",
        if collapse_ok && consistency_ok { "PASS" } else { "FAIL" },
        no_sink.collapse_rate,
        full.collapse_rate,
        no_sink.sink_consistency,
        full.sink_consistency
    );
    assert!(collapse_ok);
    assert!(consistency_ok);
}

// ---- deterministic split sanity (used by cmd_eval) --------------------------

#[test]
fn split_indices_are_deterministic_and_cover() {
    let (train, held) = split_indices(40, 0.8, 9);
    let (train2, held2) = split_indices(40, 0.8, 9);
    assert_eq!(train, train2);
    assert_eq!(held, held2);
    assert_eq!(train.len() + held.len(), 40);
}
