//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use radial_threat::dastrace::{read_trace_file, write_trace_file, DatasetManifest, ManifestEntry, SampleRecord, ThreatClass};
use radial_threat::featurize::{denoise_record, feature_manifest_line, featurize_set, write_feature_file, FeatureConfig, FeatureVariant};
use radial_threat::metrics::{ablation_table, MetricsReport};
use radial_threat::network::checkpoint::Checkpoint;
use radial_threat::network::model::Classifier;
use radial_threat::simulate::synth_dataset;
use radial_threat::train::{ablation_run, classify_records, evaluate, loss_curve_csv, train, AblationRow};

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, GlobalArgs};

/// Effective configuration plus the keys the operator set explicitly.
struct Loaded {
    cfg: RunConfig,
    explicit: BTreeSet<String>,
}

fn load_config(g: &GlobalArgs, flags: &[(&str, String)]) -> Result<Loaded, CliError> {
    let mut cfg = RunConfig::default();
    let mut explicit = BTreeSet::new();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
        for line in text.lines() {
            if let Some((k, _)) = line.split('#').next().unwrap_or("").split_once('=') {
                explicit.insert(k.trim().to_string());
            }
        }
    }
    for o in &g.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v)?;
        explicit.insert(k.trim().to_string());
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
        explicit.insert(k.to_string());
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        explicit.insert("seed".into());
    }
    if g.repeats == 0 {
        return Err(CliError::Config("--repeats must be at least 1".into()));
    }
    cfg.finalize()?;
    Ok(Loaded { cfg, explicit })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    write(&out.join("effective_config.txt"), cfg.to_text())
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(format!("{} does not exist", path.display())))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let opt = |k: &'static str, v: Option<String>| v.map(|v| (k, v));
    let flags: Vec<(&str, String)> = match &cli.command {
        Command::Simulate { n_per_class, noise_floor } => [
            opt("n_per_class", n_per_class.map(|v| v.to_string())),
            opt("noise_floor", noise_floor.map(|v| v.to_string())),
        ]
        .into_iter()
        .flatten()
        .collect(),
        Command::Featurize { variant, .. } | Command::Infer { variant, .. } => {
            opt("variant", variant.clone()).into_iter().collect()
        }
        Command::Train { variant, epochs, .. } => [
            opt("variant", variant.clone()),
            opt("epochs", epochs.map(|v| v.to_string())),
        ]
        .into_iter()
        .flatten()
        .collect(),
        _ => Vec::new(),
    };
    let loaded = load_config(g, &flags)?;
    prepare_out(&g.out, &loaded.cfg)?;
    match &cli.command {
        Command::Simulate { .. } => simulate(&loaded.cfg, &g.out),
        Command::Denoise { input } => denoise(&loaded.cfg, input, &g.out),
        Command::Featurize { input, training, .. } => featurize(&loaded.cfg, input, *training, &g.out),
        Command::Train { manifest, .. } => train_cmd(&loaded.cfg, manifest, &g.out),
        Command::Eval { checkpoint, manifest, all } => eval(&loaded, checkpoint, manifest, *all, &g.out),
        Command::Ablation { manifest, variants } => ablation(&loaded.cfg, manifest, variants, g.repeats, &g.out),
        Command::Infer { checkpoint, input, .. } => infer(&loaded, checkpoint, input, &g.out),
    }
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (records, mut manifest) = synth_dataset(&cfg.sim, "traces.dast")?;
    manifest.split_ratio = cfg.split_ratio;
    write_trace_file(&records, &out.join("traces.dast"))?;
    manifest.write(&out.join("manifest.txt"))?;
    println!("simulated {} records ({} per class) -> {}", records.len(), cfg.sim.n_per_class, out.display());
    Ok(())
}

fn denoise(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    require(input)?;
    let records = read_trace_file(input)?;
    let clean = records
        .iter()
        .map(|r| denoise_record(r, &cfg.features.vmd))
        .collect::<Result<Vec<_>, _>>()?;
    write_trace_file(&clean, &out.join("denoised.dast"))?;
    println!("denoised {} records -> {}", clean.len(), out.join("denoised.dast").display());
    Ok(())
}

fn featurize(cfg: &RunConfig, input: &Path, training: bool, out: &Path) -> Result<(), CliError> {
    require(input)?;
    let records = read_trace_file(input)?;
    let fcfg = cfg.feature_config();
    let samples = featurize_set(&records, cfg.variant, &fcfg, training)?;
    let maps: Vec<_> = samples.iter().map(|s| &s.features).collect();
    write_feature_file(&maps, &out.join("features.dasf"))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        manifest.push_str(&feature_manifest_line("features.dasf", i, s, cfg.variant));
        manifest.push('\n');
    }
    write(&out.join("features.manifest"), manifest)?;
    println!(
        "featurized {} records into {} {}x{} {} maps -> {}",
        records.len(),
        samples.len(),
        fcfg.resolution,
        fcfg.resolution,
        cfg.variant,
        out.join("features.dasf").display()
    );
    Ok(())
}

/// Records referenced by `entries`, with trace paths resolved relative to
/// the manifest's directory. Each trace file is read once.
fn load_records(manifest_path: &Path, entries: &[ManifestEntry]) -> Result<Vec<SampleRecord>, CliError> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut files: BTreeMap<String, Vec<SampleRecord>> = BTreeMap::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if !files.contains_key(&e.trace_file) {
            let path: PathBuf = base.join(&e.trace_file);
            require(&path)?;
            files.insert(e.trace_file.clone(), read_trace_file(&path)?);
        }
        let recs = &files[&e.trace_file];
        let rec = recs.get(e.record_index).ok_or_else(|| {
            CliError::Format(format!(
                "manifest references record {} of {} which holds {} records",
                e.record_index,
                e.trace_file,
                recs.len()
            ))
        })?;
        if rec.label != e.label {
            return Err(CliError::Format(format!(
                "manifest label {} disagrees with record {} of {} ({})",
                e.label, e.record_index, e.trace_file, rec.label
            )));
        }
        out.push(rec.clone());
    }
    Ok(out)
}

fn read_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    require(path)?;
    Ok(DatasetManifest::read(path)?)
}

fn split_records(path: &Path) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>), CliError> {
    let manifest = read_manifest(path)?;
    let (train, test) = manifest.split(manifest.split_seed)?;
    Ok((load_records(path, &train)?, load_records(path, &test)?))
}

fn feature_meta(cfg: &RunConfig, fcfg: &FeatureConfig) -> Vec<(String, String)> {
    let v = &fcfg.vmd;
    [
        ("variant", cfg.variant.to_string()),
        ("resolution", fcfg.resolution.to_string()),
        ("window", fcfg.window.to_string()),
        ("hop", fcfg.hop.to_string()),
        ("vmd.k", v.n_modes.to_string()),
        ("vmd.alpha", v.alpha.to_string()),
        ("vmd.tau", v.tau.to_string()),
        ("vmd.tol", v.tolerance.to_string()),
        ("vmd.max_iters", v.max_iters.to_string()),
        ("vmd.rho_min", v.rho_min.to_string()),
        ("seed", cfg.seed.to_string()),
        ("epochs", cfg.train.epochs.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn train_cmd(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<(), CliError> {
    let (train_recs, _) = split_records(manifest)?;
    let fcfg = cfg.feature_config();
    let train_set = featurize_set(&train_recs, cfg.variant, &fcfg, true)?;
    let mut model = Classifier::<f32>::new(cfg.model_spec(), cfg.seed)?;
    let curve = train(&mut model, &train_set, None, &cfg.train)?;
    write(&out.join("loss_curve.csv"), loss_curve_csv(&curve))?;
    Checkpoint::from_model(&mut model, feature_meta(cfg, &fcfg)).write(&out.join("model.dasm"))?;
    let last = curve.last().map_or(f64::NAN, |s| s.loss);
    println!(
        "trained {} on {} samples for {} epochs, final loss {last:.4} -> {}",
        cfg.variant,
        train_set.len(),
        curve.len(),
        out.join("model.dasm").display()
    );
    Ok(())
}

/// Model, variant and feature settings recorded in a checkpoint; explicit
/// operator settings that contradict them are rejected.
fn open_checkpoint(loaded: &Loaded, path: &Path) -> Result<(Classifier<f32>, FeatureVariant, FeatureConfig), CliError> {
    require(path)?;
    let ckpt = Checkpoint::read(path)?;
    let variant: FeatureVariant = ckpt
        .meta("variant")
        .ok_or_else(|| CliError::Format(format!("{}: checkpoint records no variant", path.display())))?
        .parse()
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    let resolution = ckpt.spec.resolution();
    if let Some(r) = ckpt.meta("resolution") {
        if r.parse::<usize>().ok() != Some(resolution) {
            return Err(CliError::Format(format!(
                "{}: recorded resolution {r} disagrees with model resolution {resolution}",
                path.display()
            )));
        }
    }
    let cfg = &loaded.cfg;
    if loaded.explicit.contains("variant") && cfg.variant != variant {
        return Err(CliError::Format(format!(
            "variant mismatch: requested {} but checkpoint was trained on {variant}",
            cfg.variant
        )));
    }
    let scale_keys = ["resolution", "res_scale"];
    if scale_keys.iter().any(|k| loaded.explicit.contains(*k)) && cfg.model_spec().resolution() != resolution {
        return Err(CliError::Format(format!(
            "resolution mismatch: requested {} but checkpoint expects {resolution}",
            cfg.model_spec().resolution()
        )));
    }
    let mut fcfg = FeatureConfig {
        resolution,
        ..cfg.features.clone()
    };
    let meta_num = |k: &str| ckpt.meta(k).map(str::to_string);
    let mut recorded = RunConfig::default();
    for k in ["window", "hop", "vmd.k", "vmd.alpha", "vmd.tau", "vmd.tol", "vmd.max_iters", "vmd.rho_min"] {
        if let Some(v) = meta_num(k) {
            recorded
                .set(k, &v)
                .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        }
    }
    fcfg.window = recorded.features.window;
    fcfg.hop = recorded.features.hop;
    fcfg.vmd = recorded.features.vmd;
    let model = ckpt.to_model::<f32>()?;
    Ok((model, variant, fcfg))
}

fn eval(loaded: &Loaded, checkpoint: &Path, manifest: &Path, all: bool, out: &Path) -> Result<(), CliError> {
    let (mut model, variant, fcfg) = open_checkpoint(loaded, checkpoint)?;
    let records = if all {
        let m = read_manifest(manifest)?;
        load_records(manifest, &m.entries)?
    } else {
        split_records(manifest)?.1
    };
    let test_set = featurize_set(&records, variant, &fcfg, false)?;
    let report = evaluate(&mut model, &test_set)?;
    println!("{variant} on {} records", test_set.len());
    println!("{report}");
    write(&out.join("metrics.txt"), format!("{report}\n"))?;
    write(
        &out.join("metrics.csv"),
        format!("variant,P_ave,R_ave,F1_ave,FAR,wall_time_s\n{}\n", report.csv_line(variant.name())),
    )?;
    Ok(())
}

fn parse_variants(list: &str) -> Result<Vec<FeatureVariant>, CliError> {
    let vs = list
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<FeatureVariant>().map_err(|e| CliError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if vs.is_empty() {
        return Err(CliError::Config("no variants given".into()));
    }
    Ok(vs)
}

fn mean_range(xs: &[f64]) -> (f64, f64) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, (hi - lo) / 2.0)
}

fn ablation(cfg: &RunConfig, manifest: &Path, variants: &str, repeats: usize, out: &Path) -> Result<(), CliError> {
    let variants = parse_variants(variants)?;
    let (train_recs, test_recs) = split_records(manifest)?;
    let mut runs: Vec<Vec<AblationRow>> = Vec::with_capacity(repeats);
    let mut csv = String::from("repeat,seed,variant,P_ave,R_ave,F1_ave,FAR,wall_time_s\n");
    for k in 0..repeats {
        let seed = cfg.seed.wrapping_add(k as u64);
        let fcfg = FeatureConfig {
            seed,
            ..cfg.feature_config()
        };
        let tcfg = radial_threat::train::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let rows = ablation_run(&train_recs, &test_recs, &variants, &fcfg, &tcfg, seed)?;
        for r in &rows {
            csv.push_str(&format!("{k},{seed},{}\n", r.report.csv_line(r.variant.name())));
            let name = format!("loss_curve_{}_{k}.csv", r.variant.name().to_ascii_lowercase());
            write(&out.join(name), loss_curve_csv(&r.curve))?;
        }
        runs.push(rows);
    }
    let table = if repeats == 1 {
        let rows: Vec<(String, MetricsReport)> =
            runs[0].iter().map(|r| (r.variant.name().to_string(), r.report.clone())).collect();
        ablation_table(&rows)
    } else {
        repeat_table(&variants, &runs)
    };
    print!("{table}");
    write(&out.join("ablation.txt"), &table)?;
    write(&out.join("ablation.csv"), csv)?;
    Ok(())
}

fn repeat_table(variants: &[FeatureVariant], runs: &[Vec<AblationRow>]) -> String {
    let mut out = format!(
        "{:<10} {:>15} {:>15} {:>15} {:>15}\n",
        "method", "P_ave", "R_ave", "F1_ave", "FAR"
    );
    for (i, v) in variants.iter().enumerate() {
        let pick = |f: fn(&MetricsReport) -> f64| -> String {
            let xs: Vec<f64> = runs.iter().map(|r| 100.0 * f(&r[i].report)).collect();
            let (m, h) = mean_range(&xs);
            format!("{m:.2} ± {h:.2}")
        };
        out.push_str(&format!(
            "{:<10} {:>15} {:>15} {:>15} {:>15}\n",
            v.name(),
            pick(|m| m.p_ave),
            pick(|m| m.r_ave),
            pick(|m| m.f1_ave),
            pick(|m| m.far)
        ));
    }
    out.push_str(&format!("({} repeats; ± is half the min-max range)\n", runs.len()));
    out
}

/// Operator action for a predicted area.
pub fn action(class: ThreatClass) -> &'static str {
    match class {
        ThreatClass::NoThreat => "None",
        ThreatClass::Tracking => "ContinueTracking",
        ThreatClass::Alarm => "DispatchVerification",
    }
}

fn infer(loaded: &Loaded, checkpoint: &Path, input: &Path, out: &Path) -> Result<(), CliError> {
    let (mut model, variant, fcfg) = open_checkpoint(loaded, checkpoint)?;
    require(input)?;
    let records = read_trace_file(input)?;
    let preds = classify_records(&mut model, &records, variant, &fcfg)?;
    let mut lines = String::new();
    let mut counts = [0usize; 3];
    for (i, p) in preds.iter().enumerate() {
        let [p0, p1, p2] = p.probabilities;
        lines.push_str(&format!(
            "record={i} class={} p={p0:.9},{p1:.9},{p2:.9} action={}\n",
            p.class,
            action(p.class)
        ));
        counts[p.class.index()] += 1;
    }
    let summary = format!(
        "summary records={} None={} ContinueTracking={} DispatchVerification={}\n",
        preds.len(),
        counts[ThreatClass::NoThreat.index()],
        counts[ThreatClass::Tracking.index()],
        counts[ThreatClass::Alarm.index()]
    );
    print!("{lines}{summary}");
    write(&out.join("decisions.txt"), format!("{lines}{summary}"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_map() {
        assert_eq!(action(ThreatClass::Alarm), "DispatchVerification");
        assert_eq!(action(ThreatClass::Tracking), "ContinueTracking");
        assert_eq!(action(ThreatClass::NoThreat), "None");
    }

    #[test]
    fn variant_lists() {
        assert_eq!(parse_variants("raw, TF,stff_aug").unwrap().len(), 3);
        assert!(matches!(parse_variants("raw,bogus"), Err(CliError::Config(_))));
    }
}
