//! Implementations of the five subcommands.

use std::fs;

use std::sync::Arc;

use focus::ablation::run_ablation;
use focus::backbone::{AttentionRecord, BackboneConfig, FrozenBackbone};
use focus::eval::{evaluate, split_indices};
use focus::hsi::format::{load_cube, save_cube, save_gray_pgm};
use focus::hsi::{default_partition, generate_synthetic, HsiCube, SyntheticSpec};
use focus::model::FocusModel;
use focus::saliency::{
    attention_rollout, build_cube, per_layer_heatmaps, spatial_heatmap, spectral_curve, CubeMode,
    SpatialHeatmap,
};
use focus::sink::{collapse_rate, layer_sink_mass, sink_consistency};
use focus::train::{fit, FitSetup, TaskKind, TrainConfig};

use crate::data::{
    load_checkpoint, load_dataset, write_checkpoint, write_dataset, CliError, TrainManifest,
};
use crate::{AblateArgs, EvalArgs, ExplainArgs, GenDataArgs, ModeArg, TaskArg, TrainArgs};

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Cls => TaskKind::Classification,
            TaskArg::Reg => TaskKind::Regression,
        }
    }
}

impl From<ModeArg> for CubeMode {
    fn from(m: ModeArg) -> CubeMode {
        match m {
            ModeArg::Faithful => CubeMode::Faithful,
            ModeArg::BandWeighted => CubeMode::BandWeighted,
        }
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let regression = args.task == TaskArg::Reg;
    if regression && args.classes != 1 {
        return Err(CliError::Usage("--task reg requires --classes 1".into()));
    }
    if args.healthy >= args.classes {
        return Err(CliError::Usage("--healthy must leave at least one lesioned class".into()));
    }
    let lesioned = args.classes - args.healthy;
    let mut discriminative_group = vec![0; args.healthy];
    discriminative_group
        .extend((0..lesioned).map(|i| (i * args.groups / lesioned).min(args.groups - 1)));
    let spec = SyntheticSpec {
        classes: args.classes,
        bands: args.bands,
        height: args.size,
        width: args.size,
        samples_per_class: args.samples,
        groups: args.groups,
        wavelength_range: (args.wl_start, args.wl_end),
        discriminative_group,
        lesion_free_classes: args.healthy,
        amplitude: args.amplitude,
        band_jitter: args.band_jitter,
        lesion_radius_frac: (args.lesion_min, args.lesion_max),
        noise_sigma: args.noise,
        seed: args.seed,
        regression,
    };
    let samples = generate_synthetic(&spec)?;
    write_dataset(&args.out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn class_count(samples: &[focus::hsi::Sample], task: TaskKind) -> Result<usize, CliError> {
    match task {
        TaskKind::Regression => Ok(1),
        TaskKind::Classification => samples
            .iter()
            .map(|s| s.label.class())
            .collect::<Option<Vec<usize>>>()
            .and_then(|cs| cs.iter().max().map(|m| m + 1))
            .ok_or_else(|| CliError::Data("classification labels required".into())),
    }
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let task: TaskKind = args.task.into();
    let dataset = load_dataset(&args.data, task)?;
    let classes = class_count(&dataset.samples, task)?;
    let partition =
        default_partition(dataset.samples[0].cube.wavelengths(), Some(args.groups))?;
    let backbone = Arc::new(FrozenBackbone::init_frozen(BackboneConfig {
        dim: args.dim,
        layers: args.layers,
        heads: args.heads,
        mlp_ratio: args.mlp_ratio,
        seed: args.seed ^ 0xbac_c0de,
    })?);
    let setup = FitSetup {
        backbone: backbone.clone(),
        partition,
        patch_size: args.patch,
        use_sink: !args.no_sink,
        classes,
    };
    let cfg = TrainConfig {
        learning_rate: args.lr,
        weight_decay: args.weight_decay,
        epochs: args.epochs,
        lambda: args.lambda,
        rho_aux: args.rho_aux,
        seed: args.seed,
        batch_size: args.batch,
        task,
        ..TrainConfig::default()
    };
    let outcome = fit(&dataset.samples, &setup, &cfg)?;
    let manifest = TrainManifest {
        patch_size: args.patch,
        groups: args.groups,
        classes,
        use_sink: !args.no_sink,
        rho_aux: args.rho_aux,
        lambda: args.lambda,
        seed: args.seed,
        regression: task == TaskKind::Regression,
    };
    write_checkpoint(
        &args.out,
        &outcome.model.params,
        &backbone,
        &outcome.parts,
        &manifest,
        &outcome.log,
        None,
    )?;
    if let Some(last) = outcome.log.entries.last() {
        println!(
            "trained {} epochs: task loss {:.6}, accuracy {}",
            outcome.log.entries.len(),
            last.task_loss,
            last.accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
        );
    }
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn rebuild_model(checkpoint: &crate::data::Checkpoint, cube: &HsiCube) -> Result<FocusModel, CliError> {
    let partition = default_partition(cube.wavelengths(), Some(checkpoint.manifest.groups))?;
    Ok(FocusModel::new(
        checkpoint.backbone.clone(),
        checkpoint.params.clone(),
        partition,
        checkpoint.manifest.patch_size,
        checkpoint.manifest.use_sink,
    )?)
}

pub fn explain(args: ExplainArgs) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(&args.model)?;
    let cube = load_cube(&args.cube)?;
    let model = rebuild_model(&checkpoint, &cube)?;
    let class = match args.class {
        Some(c) => {
            if c >= model.classes() {
                return Err(CliError::Usage(format!(
                    "--class {c} out of range for {} classes",
                    model.classes()
                )));
            }
            c
        }
        None if checkpoint.manifest.regression => 0,
        None => model.classify(&cube)?.0,
    };

    // Single gradient-free forward; everything below is post-processing.
    let fwd = model.forward_class(&cube, class)?;
    let mode: CubeMode = args.mode.into();
    let adapter = Some(&model.params.adapter);
    let saliency = build_cube(
        &fwd.attention,
        &checkpoint.parts,
        &fwd.layout,
        model.partition(),
        mode,
        adapter,
        class,
    )?;
    let heat = spatial_heatmap(&saliency);
    let curve = spectral_curve(&saliency);
    let rollout = attention_rollout(&fwd.attention, &fwd.layout)?;

    fs::create_dir_all(&args.out)?;
    // Saliency cube as HSC1, wavelengths copied from the input.
    let (gh, gw, bands) = (saliency.grid_h(), saliency.grid_w(), saliency.bands());
    let mut band_major = vec![0.0; bands * gh * gw];
    for y in 0..gh {
        for x in 0..gw {
            for b in 0..bands {
                band_major[(b * gh + y) * gw + x] = saliency.at(x, y, b);
            }
        }
    }
    let saliency_cube = HsiCube::new(cube.wavelengths().to_vec(), gh, gw, band_major)?;
    save_cube(&saliency_cube, &args.out.join("saliency.hsc"))?;

    save_gray_pgm(heat.values(), gh, gw, &args.out.join("heatmap.pgm"))?;
    let mut heat_csv = String::from("x,y,M\n");
    for y in 0..gh {
        for x in 0..gw {
            heat_csv.push_str(&format!("{x},{y},{:.12}\n", heat.at(x, y)));
        }
    }
    fs::write(args.out.join("heatmap.csv"), heat_csv)?;

    let mut curve_csv = String::from("wavelength_nm,B\n");
    for (wl, b) in cube.wavelengths().iter().zip(curve.values()) {
        curve_csv.push_str(&format!("{wl},{b:.12}\n"));
    }
    fs::write(args.out.join("curve.csv"), curve_csv)?;

    save_gray_pgm(rollout.values(), gh, gw, &args.out.join("rollout.pgm"))?;

    let layer_heats = per_layer_heatmaps(
        &fwd.attention,
        &checkpoint.parts,
        &fwd.layout,
        model.partition(),
        mode,
        adapter,
        class,
    )?;
    fs::write(
        args.out.join("sink_metrics.csv"),
        sink_metrics_csv(&fwd.attention, &layer_heats)?,
    )?;
    println!("explained class {class} into {}", args.out.display());
    Ok(())
}

/// Rows `metric,layer,head,value`; layer/head empty where an entry is
/// aggregated over them.
fn sink_metrics_csv(
    record: &AttentionRecord,
    layer_heats: &[SpatialHeatmap],
) -> Result<String, CliError> {
    let mut out = String::from("metric,layer,head,value\n");
    if let Some(sink) = record.sink_index {
        for layer in 0..record.layer_count() {
            for head in 0..record.head_count() {
                let a = record.head(layer, head);
                let mass: f64 =
                    (0..a.rows()).map(|r| a.at(r, sink)).sum::<f64>() / a.rows() as f64;
                out.push_str(&format!("sink_rate,{layer},{head},{mass:.12}\n"));
            }
        }
        if let Some(masses) = layer_sink_mass(record) {
            for (layer, mass) in masses.iter().enumerate() {
                out.push_str(&format!("layer_sink_mass,{layer},,{mass:.12}\n"));
            }
        }
    }
    out.push_str(&format!("collapse_rate,,,{:.12}\n", collapse_rate(record)));
    let heat_values: Vec<&[f64]> = layer_heats.iter().map(|h| h.values()).collect();
    let consistency = sink_consistency(&heat_values)?;
    out.push_str(&format!("sink_consistency,,,{:.12}\n", consistency.value));
    Ok(out)
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let task: TaskKind = args.task.into();
    let checkpoint = load_checkpoint(&args.model)?;
    let dataset = load_dataset(&args.data, task)?;
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(CliError::Usage("--holdout must be in [0, 1)".into()));
    }
    let (_, held) = split_indices(dataset.samples.len(), 1.0 - args.holdout, args.split_seed);
    if held.is_empty() {
        return Err(CliError::Data("held-out split is empty".into()));
    }
    let held_samples: Vec<focus::hsi::Sample> =
        held.iter().map(|&i| dataset.samples[i].clone()).collect();
    let model = rebuild_model(&checkpoint, &held_samples[0].cube)?;
    let report =
        evaluate(&model, &checkpoint.parts, &held_samples, args.mode.into(), args.k, task)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("report.csv"), report.to_csv())?;
    fs::write(args.out.join("report.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data, TaskKind::Classification)?;
    let classes = class_count(&dataset.samples, TaskKind::Classification)?;
    let partition =
        default_partition(dataset.samples[0].cube.wavelengths(), Some(args.groups))?;
    let backbone = Arc::new(FrozenBackbone::init_frozen(BackboneConfig {
        dim: args.dim,
        layers: args.layers,
        heads: args.heads,
        mlp_ratio: args.mlp_ratio,
        seed: args.seed ^ 0xbac_c0de,
    })?);
    let setup = FitSetup {
        backbone,
        partition,
        patch_size: args.patch,
        use_sink: true,
        classes,
    };
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        lambda: args.lambda,
        rho_aux: args.rho_aux,
        seed: args.seed,
        batch_size: args.batch,
        task: TaskKind::Classification,
        ..TrainConfig::default()
    };
    let table = run_ablation(&dataset.samples, &setup, &cfg, args.k)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("ablation.csv"), table.to_csv())?;
    print!("{}", table.to_csv());
    Ok(())
}
