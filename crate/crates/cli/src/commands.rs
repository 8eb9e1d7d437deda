use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anatomy_attn::gradcheck::{run_targets, GradCheckOptions, TargetGroup};
use anatomy_attn::harness::{
    ablation_sweep, data_seed, derive_seed, gen_synthetic, median, per_class_auc, robustness_experiment,
    seg_toy_run, write_pgm, write_pgm_normalized, AblationAxis, MetricsTable, SyntheticSpec,
};
use anatomy_attn::model::{gradcam as grad_cam, train as fit, write_history, CamStage, Model, ModelConfig, TrainConfig};
use anatomy_attn::seg::write_loss_curve;
use anatomy_attn::Error;

use crate::config::Settings;
use crate::error::CliError;

pub struct RunContext {
    pub settings: Settings,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunContext {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    /// Create the output directory and echo the effective configuration.
    fn prepare(&self, command: &str, extra: &[(&str, String)]) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)?;
        let mut run = vec![("command", command.to_string()), ("seed", self.seed.to_string())];
        run.extend(extra.iter().cloned());
        fs::write(self.path("config.ini"), self.settings.to_ini(&run))?;
        Ok(())
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_stage(s: &str) -> Result<CamStage, CliError> {
    if s.eq_ignore_ascii_case("last") {
        return Ok(CamStage::Last);
    }
    s.parse()
        .map(CamStage::Index)
        .map_err(|_| CliError::Usage(format!("--stage expects `last` or an index, got {s:?}")))
}

/// Group names as printed in target labels; empty means all groups.
pub fn parse_groups(names: &[String]) -> Result<Vec<TargetGroup>, CliError> {
    if names.is_empty() {
        return Ok(TargetGroup::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| {
            TargetGroup::ALL
                .into_iter()
                .find(|g| g.name() == n.trim())
                .ok_or_else(|| CliError::Usage(format!("unknown gradcheck group {n:?}")))
        })
        .collect()
}

pub fn gradcheck<W: Write>(
    ctx: &RunContext,
    tol: Option<f64>,
    eps: Option<f64>,
    groups: &[TargetGroup],
    fault: Option<String>,
    log: &mut W,
) -> Result<(), CliError> {
    let opts = GradCheckOptions {
        tol: tol.unwrap_or(ctx.settings.gradcheck.tol),
        eps: eps.unwrap_or(ctx.settings.gradcheck.eps),
        fault: fault.clone(),
    };
    ctx.prepare("gradcheck", &[])?;
    if let Some(op) = &fault {
        writeln!(log, "fault injected: backward of `{op}` sign-flipped")?;
    }
    let start = Instant::now();
    let results = run_targets(groups, &opts)?;
    let mut csv = ctx.create("gradcheck.csv")?;
    writeln!(csv, "target,max_rel_error,coords,passed")?;
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.report.passed();
        writeln!(
            log,
            "{:<36} {:>11.3e}  {}",
            r.label(),
            r.report.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        )?;
        writeln!(csv, "{},{:.6e},{},{}", r.label(), r.report.max_rel_error, r.report.coords_checked, ok)?;
        if !ok {
            failed.push(r.label());
        }
    }
    csv.flush()?;
    let worst = results.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    writeln!(
        log,
        "{} targets, worst {:.3e}, tol {:e}, eps {:e}, {:.1}s",
        results.len(),
        worst,
        opts.tol,
        opts.eps,
        start.elapsed().as_secs_f64()
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::SuiteFailed(failed))
    }
}

fn run_spec(settings: &Settings, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed: data_seed(seed),
        ..settings.experiment.data.clone()
    }
}

pub fn train<W: Write>(ctx: &RunContext, log: &mut W) -> Result<(), CliError> {
    ctx.prepare("train", &[])?;
    let spec = run_spec(&ctx.settings, ctx.seed);
    let data = gen_synthetic(&spec)?;
    let cfg = ModelConfig {
        n_classes: spec.classes.len(),
        ..ctx.settings.experiment.model.clone()
    };
    let model_seed = derive_seed(ctx.seed, 0);
    let mut model = Model::new(cfg, model_seed)?;
    let tc = TrainConfig {
        seed: derive_seed(model_seed, 1),
        ..ctx.settings.experiment.train
    };
    let history = fit(&mut model, &data.train.labeled(), Some(&data.val.labeled()), &tc)?;
    for r in &history {
        let auc = r.val_auc.map_or("-".to_string(), |a| format!("{a:.2}"));
        writeln!(log, "epoch {:>3}  loss {:.5}  val auc {auc}", r.epoch, r.loss)?;
    }
    let mut w = ctx.create("history.csv")?;
    write_history(&mut w, &history)?;
    w.flush()?;

    let test = data.test.labeled();
    let probs = model.predict(&test.images, &test.masks)?;
    let per = per_class_auc(&probs, &test.labels)?
        .into_iter()
        .enumerate()
        .map(|(c, a)| a.ok_or_else(|| Error::DegenerateLabels(format!("class {c} in test split"))))
        .collect::<Result<Vec<f64>, Error>>()?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    let mut table = MetricsTable::default();
    table.push_condition(model.config().attention_level.label(), &spec.class_names(), &per, mean);
    let mut w = ctx.create("test_metrics.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    writeln!(log, "test mean auc {mean:.2}")?;

    model.save(&ctx.out, "model")?;
    let first = [0];
    write_pgm_normalized(&ctx.path("sample_image.pgm"), &data.test.images.select_batch(&first)?)?;
    let masks = data.test.noisy_masks.select_batch(&first)?;
    write_pgm(&ctx.path("sample_lung.pgm"), masks.lung())?;
    write_pgm(&ctx.path("sample_heart.pgm"), masks.heart())?;
    Ok(())
}

pub fn ablate<W: Write>(ctx: &RunContext, axis: AblationAxis, seeds: &[u64], log: &mut W) -> Result<(), CliError> {
    ctx.prepare("ablate", &[("axis", axis.to_string()), ("seeds", join(seeds))])?;
    let start = Instant::now();
    let table = ablation_sweep(axis, &ctx.settings.experiment, seeds)?;
    for c in table.conditions() {
        writeln!(log, "{c:<12} mean auc {:.2}", table.mean_of(c).unwrap_or(f64::NAN))?;
    }
    let mut w = ctx.create(&axis.file_name())?;
    table.write_csv(&mut w)?;
    w.flush()?;
    writeln!(log, "{} in {:.1}s", axis.file_name(), start.elapsed().as_secs_f64())?;
    Ok(())
}

pub fn robustness<W: Write>(
    ctx: &RunContext,
    windows: &[usize],
    seeds: &[u64],
    trials: Option<usize>,
    log: &mut W,
) -> Result<(), CliError> {
    let windows = if windows.is_empty() { ctx.settings.windows.clone() } else { windows.to_vec() };
    let trials = trials.unwrap_or(ctx.settings.trials);
    ctx.prepare(
        "robustness",
        &[
            ("windows", join(&windows)),
            ("seeds", join(seeds)),
            ("trials", trials.to_string()),
        ],
    )?;
    let report = robustness_experiment(&ctx.settings.experiment, &windows, trials, seeds)?;
    let mut w = ctx.create("robustness.csv")?;
    report.median.write_csv(&mut w)?;
    w.flush()?;
    for (seed, table) in seeds.iter().zip(&report.per_seed) {
        let mut w = ctx.create(&format!("robustness_seed{seed}.csv"))?;
        table.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut w = ctx.create("robustness_degradation.csv")?;
    report.write_degradation_csv(&mut w)?;
    w.flush()?;
    for (model, _, med) in &report.degradation {
        writeln!(log, "{model:<10} median degradation {med:.3}")?;
    }
    Ok(())
}

pub fn seg_toy<W: Write>(ctx: &RunContext, seeds: &[u64], log: &mut W) -> Result<(), CliError> {
    ctx.prepare("seg-toy", &[("seeds", join(seeds))])?;
    let mut summary = ctx.create("seg_summary.csv")?;
    writeln!(summary, "seed,gen_m_step10,gen_m_final,ratio")?;
    let mut ratios = Vec::new();
    for &seed in seeds {
        let (_, _, curve) = seg_toy_run(&ctx.settings.seg, seed)?;
        let mut w = ctx.create(&format!("seg_loss_seed{seed}.csv"))?;
        write_loss_curve(&mut w, &curve)?;
        w.flush()?;
        let (Some(early), Some(last)) = (curve.get(curve.len().min(10).saturating_sub(1)), curve.last()) else {
            return Err(CliError::Usage("seg.steps must be positive".into()));
        };
        let ratio = last.parts.gen_m / early.parts.gen_m;
        writeln!(summary, "{seed},{:.9},{:.9},{ratio:.9}", early.parts.gen_m, last.parts.gen_m)?;
        writeln!(
            log,
            "seed {seed}: L_gen_M step {} {:.4} -> step {} {:.4} (ratio {ratio:.3})",
            early.step, early.parts.gen_m, last.step, last.parts.gen_m
        )?;
        ratios.push(ratio);
    }
    writeln!(summary, "median,,,{:.9}", median(&ratios))?;
    summary.flush()?;
    Ok(())
}

pub fn gradcam<W: Write>(
    ctx: &RunContext,
    checkpoint: &Path,
    class: usize,
    stage: CamStage,
    images: &[usize],
    log: &mut W,
) -> Result<(), CliError> {
    let model = Model::load(checkpoint, "model")?;
    ctx.prepare(
        "gradcam",
        &[
            ("checkpoint", checkpoint.display().to_string()),
            ("class", class.to_string()),
            ("images", join(images)),
        ],
    )?;
    let spec = SyntheticSpec {
        image_size: model.config().image_size,
        ..run_spec(&ctx.settings, ctx.seed)
    };
    let data = gen_synthetic(&spec)?;
    let test = &data.test;
    for &i in images {
        if i >= test.len() {
            return Err(CliError::Usage(format!(
                "image index {i} out of range for {} test images",
                test.len()
            )));
        }
        let image = test.images.select_batch(&[i])?;
        let masks = test.noisy_masks.select_batch(&[i])?;
        let cam = grad_cam(&model, &image, &masks, class, stage)?;
        let name = format!("gradcam_class{class}_{i}.pgm");
        write_pgm(&ctx.path(&name), &cam)?;
        write_pgm_normalized(&ctx.path(&format!("image_{i}.pgm")), &image)?;
        writeln!(log, "{name}")?;
    }
    Ok(())
}
