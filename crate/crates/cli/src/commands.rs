use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use mdfsc::autoencoder::{self, Autoencoder};
use mdfsc::features::build_feature_matrix;
use mdfsc::metrics::{evaluate, roc_points, write_roc_csv, ScoredLabel};
use mdfsc::pipeline::synth::{synth_dataset, write_dataset};
use mdfsc::pipeline::{load_and_resize, read_manifest, split_records, ImageRecord, Label, NormStats};
use mdfsc::rng::stream;
use mdfsc::scoring::{read_reports, recon_baseline_score, write_reports, ReportLine, Scorer};
use mdfsc::sparse::{dict_learn, load_dict, save_dict};
use rayon::prelude::*;

use crate::{CliError, Command, RunConfig, ScorerKind};

type Result<T> = std::result::Result<T, CliError>;

/// Appends the resolved config and results of each command to the run log.
struct RunLog<'a> {
    path: &'a Path,
}

impl<'a> RunLog<'a> {
    fn start(cfg: &'a RunConfig, command: &str) -> Result<Self> {
        let log = Self { path: &cfg.paths.run_log };
        log.append(&format!("== {command}\n{}", cfg.to_toml()))?;
        Ok(log)
    }

    fn append(&self, text: &str) -> Result<()> {
        ensure_parent(self.path)?;
        let mut f = OpenOptions::new().create(true).append(true).open(self.path)?;
        writeln!(f, "{text}")?;
        Ok(())
    }

    fn note(&self, text: String) -> Result<()> {
        info!("{text}");
        self.append(&format!("# {text}"))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::Synth => synth(cfg),
        Command::TrainAe => train_ae(cfg),
        Command::FitDict => fit_dict(cfg),
        Command::Score { scorer } => score(cfg, *scorer),
        Command::Eval => eval(cfg),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let log = RunLog::start(cfg, "synth")?;
    cfg.synth.validate()?;
    let ds = synth_dataset(&cfg.synth, cfg.seed)?;
    write_dataset(&ds, &cfg.paths.data_dir)?;
    let anomalous = ds.test.iter().filter(|i| i.record.label == Label::Anomalous).count();
    log.note(format!(
        "wrote {} train and {} test images ({anomalous} anomalous) to {}",
        ds.train.len(),
        ds.test.len(),
        cfg.paths.data_dir.display()
    ))?;
    println!("train: {}  test: {}  anomalous: {anomalous}", ds.train.len(), ds.test.len());
    Ok(())
}

/// One manifest entry loaded, with the manifest path as id.
struct Loaded {
    id: String,
    image: mdfsc::Result<ImageRecord>,
}

fn load_manifest(path: &Path, size: usize) -> Result<Vec<Loaded>> {
    let entries = read_manifest(path)?;
    let root = path.parent().unwrap_or(Path::new(""));
    Ok(entries
        .par_iter()
        .map(|e| Loaded {
            id: e.path.clone(),
            image: load_and_resize(&root.join(&e.path), size).map(|mut r| {
                r.id = e.path.clone();
                r.label = e.label;
                r
            }),
        })
        .collect())
}

fn all_ok(items: Vec<Loaded>) -> Result<Vec<ImageRecord>> {
    items.into_iter().map(|l| l.image.map_err(CliError::from)).collect()
}

/// Training images: the normals of the train manifest, or of the split.
fn train_images(cfg: &RunConfig) -> Result<Vec<ImageRecord>> {
    let (source, images) = match &cfg.paths.manifest {
        Some(m) => {
            let all = all_ok(load_manifest(m, cfg.image_size)?)?;
            (m, split_records(all, cfg.train_fraction, cfg.seed).0)
        }
        None => {
            let m = &cfg.paths.train_manifest;
            (m, all_ok(load_manifest(m, cfg.image_size)?)?)
        }
    };
    let normals: Vec<_> = images.into_iter().filter(|r| r.label == Label::Normal).collect();
    if normals.is_empty() {
        return Err(CliError::data(format!(
            "{} has no normal images to train on",
            source.display()
        )));
    }
    Ok(normals)
}

/// Test entries, each with its own load result.
fn test_entries(cfg: &RunConfig) -> Result<Vec<Loaded>> {
    match &cfg.paths.manifest {
        Some(m) => {
            let all = all_ok(load_manifest(m, cfg.image_size)?)?;
            let test = split_records(all, cfg.train_fraction, cfg.seed).1;
            Ok(test
                .into_iter()
                .map(|r| Loaded { id: r.id.clone(), image: Ok(r) })
                .collect())
        }
        None => load_manifest(&cfg.paths.test_manifest, cfg.image_size),
    }
}

fn normalize(stats: &NormStats, imgs: &[ImageRecord]) -> Result<Vec<ImageRecord>> {
    imgs.iter().map(|i| stats.apply(i).map_err(CliError::from)).collect()
}

pub fn train_ae(cfg: &RunConfig) -> Result<()> {
    let log = RunLog::start(cfg, "train-ae")?;
    let raw = train_images(cfg)?;
    let stats = NormStats::fit(&raw)?;
    let imgs = normalize(&stats, &raw)?;
    let channels = raw[0].channels();
    let train_cfg = cfg.ae.train();

    let mut jobs = vec![("autoencoder", true, &cfg.paths.checkpoint)];
    if cfg.ae.train_baseline {
        jobs.push(("baseline", false, &cfg.paths.baseline_checkpoint));
    }
    for (name, head, path) in jobs {
        let arch = cfg.ae.arch(channels, head);
        let mut model = Autoencoder::build(arch, &mut stream(cfg.seed, &format!("init/{name}")))?;
        model.norm_stats = stats.clone();
        log.note(format!("training {name}: {} parameters on {} images", model.param_count(), imgs.len()))?;
        let report = autoencoder::train(&mut model, &imgs, &[], &train_cfg, cfg.seed)?;
        ensure_parent(path)?;
        autoencoder::save(&model, path)?;
        log.note(format!(
            "{name}: {} steps, final loss {}, digest {} -> {}",
            report.steps,
            report.final_loss().map_or("n/a".into(), |l| format!("{l:.6}")),
            model.digest(),
            path.display()
        ))?;
        log.append(&format!("# {name} epoch losses {:?}", report.epoch_losses))?;
    }
    Ok(())
}

pub fn fit_dict(cfg: &RunConfig) -> Result<()> {
    let log = RunLog::start(cfg, "fit-dict")?;
    let model = autoencoder::load(&cfg.paths.checkpoint)?;
    let imgs = normalize(&model.norm_stats, &train_images(cfg)?)?;
    let f = &cfg.features;
    let fm = build_feature_matrix(&model, &imgs, f.patch, f.stride, f.budget_per_image, cfg.seed)?;
    log.note(format!("feature matrix: d = {}, m = {}", fm.d, fm.m()))?;
    let (mut dict, report) = dict_learn(&fm, &cfg.dict_learn(), cfg.seed)?;
    dict.meta.model_digest = Some(model.digest());
    dict.meta.patch = f.patch;
    dict.meta.stride = f.stride;
    ensure_parent(&cfg.paths.dictionary)?;
    save_dict(&dict, &cfg.paths.dictionary)?;
    if report.underdetermined {
        warn!("fewer feature columns ({}) than atoms ({})", fm.m(), dict.n());
    }
    log.note(format!(
        "dictionary: {} atoms, {} iterations, converged {}, {} re-seeded, digest {}",
        dict.n(),
        report.iterations,
        report.converged,
        report.reseeded,
        dict.digest()
    ))?;
    log.append(&format!("# objective trace {:?}", report.objective_trace))?;
    Ok(())
}

pub fn score(cfg: &RunConfig, kind: ScorerKind) -> Result<()> {
    let log = RunLog::start(cfg, &format!("score --scorer {kind:?}"))?;
    let entries = test_entries(cfg)?;
    let ckpt = match kind {
        ScorerKind::Mdfsc => &cfg.paths.checkpoint,
        ScorerKind::Recon => &cfg.paths.baseline_checkpoint,
    };
    let model = autoencoder::load(ckpt)?;
    let prepared: Vec<(String, mdfsc::Result<ImageRecord>)> = entries
        .into_iter()
        .map(|l| (l.id, l.image.and_then(|i| model.norm_stats.apply(&i))))
        .collect();

    let results: Vec<(String, mdfsc::Result<ReportLine>)> = match kind {
        ScorerKind::Mdfsc => {
            let dict = load_dict(&cfg.paths.dictionary)?;
            let scorer = Scorer::new(&model, &dict, cfg.score())?;
            if dict.meta.model_digest.as_deref().is_some_and(|d| d != scorer.model_digest) {
                warn!("dictionary was fitted on features of a different checkpoint");
            }
            prepared
                .into_par_iter()
                .map(|(id, img)| {
                    let r = img.and_then(|i| scorer.score(&i));
                    (id, r.map(|r| r.to_line()))
                })
                .collect()
        }
        ScorerKind::Recon => {
            let digest = model.digest();
            prepared
                .into_par_iter()
                .map(|(id, img)| {
                    let r = img.and_then(|i| recon_baseline_score(&model, &i));
                    let line = r.map(|score| ReportLine {
                        id: id.clone(),
                        score,
                        k: 0,
                        n_patches: 0,
                        top_residuals: Vec::new(),
                        model_digest: digest.clone(),
                        dict_digest: String::new(),
                    });
                    (id, line)
                })
                .collect()
        }
    };

    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(l) => lines.push(l),
            Err(e) => failed.push(format!("{id}: {e}")),
        }
    }
    ensure_parent(&cfg.paths.reports)?;
    write_reports(&cfg.paths.reports, &lines)?;
    log.note(format!("scored {} images -> {}", lines.len(), cfg.paths.reports.display()))?;
    if !failed.is_empty() {
        for f in &failed {
            log.note(format!("failed {f}"))?;
        }
        return Err(CliError::data(format!("{} image(s) could not be scored:\n{}", failed.len(), failed.join("\n"))));
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let log = RunLog::start(cfg, "eval")?;
    let reports = read_reports(&cfg.paths.reports)?;
    let manifest = cfg.paths.manifest.as_ref().unwrap_or(&cfg.paths.test_manifest);
    let labels: HashMap<String, Label> =
        read_manifest(manifest)?.into_iter().map(|e| (e.path, e.label)).collect();
    let missing: Vec<&str> = reports
        .iter()
        .filter(|r| !labels.contains_key(&r.id))
        .map(|r| r.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::data(format!(
            "report ids missing from {}: {}",
            manifest.display(),
            missing.join(", ")
        )));
    }
    let items: Vec<ScoredLabel> = reports
        .iter()
        .map(|r| ScoredLabel::new(r.score, labels[&r.id] == Label::Anomalous))
        .collect();
    let summary = evaluate(&items)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    ensure_parent(&cfg.paths.eval)?;
    std::fs::write(&cfg.paths.eval, format!("{json}\n"))?;
    if let Some(p) = &cfg.paths.roc_csv {
        ensure_parent(p)?;
        write_roc_csv(p, &roc_points(&items)?)?;
    }
    log.note(format!("eval {}", serde_json::to_string(&summary).expect("summary serializes")))?;
    println!("{json}");
    Ok(())
}
