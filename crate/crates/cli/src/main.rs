use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};

use mbsr::ablation;
use mbsr::config::{self, Command, Settings};
use mbsr::synth::{self, BoxPolicy, DatasetManifest, Split};
use mbsr::trainer::{self, TrainingSet};
use mbsr::{checkpoint, hough, io, mask, visualize, AnnotatedSample, Error, Model, Result};

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn subcommand(cmd: Command, about: &'static str) -> clap::Command {
    let mut sub = clap::Command::new(cmd.name()).about(about);
    for def in config::keys_for(cmd) {
        sub = sub.arg(
            Arg::new(def.key)
                .long(def.flag)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(format!(
                    "{} [{}; default {:?}]",
                    def.help, def.key, def.default
                )),
        );
    }
    sub
}

fn cli() -> clap::Command {
    clap::Command::new("mbsr")
        .about("Text-rotation classification with mask-regularized intermediate features")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(path_arg("config", "flat `key = value` settings file").global(true))
        .subcommand(
            subcommand(Command::GenData, "Generate a synthetic annotated dataset")
                .arg(path_arg("out", "output dataset directory").required(true))
                .arg(
                    Arg::new("mask-preview")
                        .long("mask-preview")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize))
                        .help("also write mask pyramids of the first N training samples"),
                ),
        )
        .subcommand(
            subcommand(Command::Train, "Train a model and write a checkpoint")
                .arg(path_arg("data", "dataset directory").required(true))
                .arg(path_arg("out", "checkpoint path").required(true))
                .arg(path_arg(
                    "log",
                    "JSONL training log (default: <out>.log.jsonl)",
                )),
        )
        .subcommand(
            subcommand(
                Command::Eval,
                "Score a checkpoint or the Hough baseline on a split",
            )
            .arg(path_arg("data", "dataset directory").required(true))
            .arg(
                Arg::new("split")
                    .long("split")
                    .value_name("SPLIT")
                    .default_value("test")
                    .help("train, val or test"),
            )
            .arg(
                Arg::new("method")
                    .long("method")
                    .value_parser(["model", "hough"])
                    .default_value("model"),
            )
            .arg(path_arg(
                "checkpoint",
                "checkpoint to evaluate (method model)",
            ))
            .arg(path_arg("out", "write the JSON report here")),
        )
        .subcommand(
            subcommand(
                Command::Ablate,
                "Train and score every stage selection in the plan",
            )
            .arg(path_arg("data", "dataset directory").required(true))
            .arg(path_arg("out", "directory for ablation.json and ablation.md").required(true)),
        )
        .subcommand(
            subcommand(
                Command::Visualize,
                "Export channel-mean feature maps for one image",
            )
            .arg(path_arg("checkpoint", "checkpoint to load").required(true))
            .arg(path_arg("image", "input PNG").required(true))
            .arg(path_arg("out", "output directory").required(true)),
        )
}

fn settings(cmd: Command, m: &ArgMatches) -> Result<Settings> {
    let mut flags = BTreeMap::new();
    for def in config::keys_for(cmd) {
        if let Some(v) = m.get_one::<String>(def.key) {
            flags.insert(def.key.to_string(), v.clone());
        }
    }
    Settings::load(m.get_one::<PathBuf>("config").map(PathBuf::as_path), &flags)
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    m.get_one::<PathBuf>(name).expect("required by clap")
}

fn optional_split(
    dir: &Path,
    split: Split,
    policy: BoxPolicy,
) -> Result<Option<Vec<AnnotatedSample>>> {
    let manifest = DatasetManifest::read(dir)?;
    if manifest.counts.get(split) == 0 {
        return Ok(None);
    }
    synth::load_dataset_with(dir, split, policy).map(Some)
}

fn gen_data(m: &ArgMatches) -> Result<()> {
    let s = settings(Command::GenData, m)?;
    let out = path(m, "out");
    let manifest = synth::generate_dataset(&s.dataset_options()?, out)?;
    let c = &manifest.counts;
    println!(
        "wrote {} (train {}, val {}, test {}; {}x{}, noise {}, seed {})",
        out.display(),
        c.get(Split::Train),
        c.get(Split::Val),
        c.get(Split::Test),
        manifest.image_size[0],
        manifest.image_size[1],
        manifest.noise_level,
        manifest.generator_seed,
    );
    if let Some(&n) = m.get_one::<usize>("mask-preview") {
        let samples = synth::load_dataset(out, Split::Train)?;
        let dir = out.join("mask_preview");
        for sample in samples.iter().take(n) {
            let (h, w) = (sample.image.height(), sample.image.width());
            let pyr = mask::pyramid_from_boxes(&sample.boxes, h, w, mask::Downscale::Max)?;
            pyr.export_png(&dir, &sample.id)?;
        }
    }
    Ok(())
}

fn train(m: &ArgMatches) -> Result<()> {
    let s = settings(Command::Train, m)?;
    let (data, out) = (path(m, "data"), path(m, "out"));
    let log_path = m
        .get_one::<PathBuf>("log")
        .cloned()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.jsonl", out.display())));
    let cfg = s.train_config()?;
    let samples = synth::load_dataset(data, Split::Train)?;
    let val = optional_split(data, Split::Val, BoxPolicy::Optional)?;
    let set = TrainingSet::new(&samples, cfg.mask_downscale)?;
    let model = Model::<f32>::init(&s.backbone_config()?, cfg.seed)?;
    let outcome = trainer::train(model, &set, val.as_deref(), &cfg, Some(out))?;
    trainer::write_log_jsonl(&log_path, &outcome.log)?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} samples (stages {:?}); final loss {:.6}, train acc {:.4}; best epoch {} -> {}",
        outcome.log.len(),
        samples.len(),
        cfg.loss.stages.to_string(),
        last.train.total,
        last.train_accuracy,
        outcome.best_epoch,
        out.display(),
    );
    Ok(())
}

fn eval(m: &ArgMatches) -> Result<()> {
    let s = settings(Command::Eval, m)?;
    let data = path(m, "data");
    let split: Split = m.get_one::<String>("split").expect("defaulted").parse()?;
    let samples = synth::load_dataset_with(data, split, BoxPolicy::Optional)?;
    let report = match m.get_one::<String>("method").map(String::as_str) {
        Some("hough") => hough::evaluate_hough(&samples, &s.hough_config()?)?,
        _ => {
            let ckpt = m.get_one::<PathBuf>("checkpoint").ok_or_else(|| {
                Error::InvalidArgument("--checkpoint is required for --method model".into())
            })?;
            let (model, _) = checkpoint::load::<f32>(ckpt)?;
            trainer::evaluate(&model, &samples, s.parse("eval.batch_size")?)?
        }
    };
    let json = report.to_json();
    if let Some(out) = m.get_one::<PathBuf>("out") {
        write_text(out, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn ablate(m: &ArgMatches) -> Result<()> {
    let s = settings(Command::Ablate, m)?;
    let (data, out) = (path(m, "data"), path(m, "out"));
    let plan = s.ablation_plan()?;
    let cfg = s.train_config()?;
    let samples = synth::load_dataset(data, Split::Train)?;
    let val = optional_split(data, Split::Val, BoxPolicy::Optional)?;
    let test = synth::load_dataset_with(data, Split::Test, BoxPolicy::Optional)?;
    let set = TrainingSet::new(&samples, cfg.mask_downscale)?;
    let report = ablation::run_ablation(
        &plan,
        &s.backbone_config()?,
        &cfg,
        &set,
        val.as_deref(),
        &test,
        s.parse("eval.batch_size")?,
        s.parse("ablate.jobs")?,
    )?;
    let table = report.render_table();
    write_text(&out.join("ablation.json"), &report.to_json())?;
    write_text(&out.join("ablation.md"), &table)?;
    print!("{table}");
    if report.rows.iter().all(|r| r.mean_hmean.is_none()) {
        return Err(Error::Validation("every ablation run failed".into()));
    }
    Ok(())
}

fn visualize(m: &ArgMatches) -> Result<()> {
    let s = settings(Command::Visualize, m)?;
    let stages = s.visualize_stages()?;
    let (model, _) = checkpoint::load::<f32>(path(m, "checkpoint"))?;
    let image_path = path(m, "image");
    let image = io::load_image(image_path)?;
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    for p in visualize::export_feature_maps(&model, &image, &stages, path(m, "out"), stem)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let head: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .collect();
            eprintln!(
                "error: usage: {}",
                one_line(head.join(" ").trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    let result = match matches.subcommand() {
        Some(("gen-data", m)) => gen_data(m),
        Some(("train", m)) => train(m),
        Some(("eval", m)) => eval(m),
        Some(("ablate", m)) => ablate(m),
        Some(("visualize", m)) => visualize(m),
        _ => unreachable!("clap enforces a subcommand"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
