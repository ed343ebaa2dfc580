//! Flat dotted-key settings (`train.initial_lr = 1e-4`) layered as
//! default < preset < config file < command-line flag.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::ablation::AblationPlan;
use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::hough::HoughConfig;
use crate::losses::{LossConfig, StageSelection};
use crate::synth::DatasetOptions;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Command {
    GenData,
    Train,
    Eval,
    Ablate,
    Visualize,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::GenData,
        Command::Train,
        Command::Eval,
        Command::Ablate,
        Command::Visualize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Visualize => "visualize",
        }
    }
}

/// A settings key and the flag that mirrors it on the command line.
#[derive(Debug, Clone, Copy)]
pub struct KeyDef {
    pub key: &'static str,
    pub flag: &'static str,
    pub commands: &'static [Command],
    pub default: &'static str,
    pub help: &'static str,
}

use Command::{Ablate, Eval, GenData, Train, Visualize};

const TRAINING: &[Command] = &[Train, Ablate];

#[rustfmt::skip]
pub const KEYS: &[KeyDef] = &[
    KeyDef { key: "preset", flag: "preset", commands: &[GenData, Train, Eval, Ablate], default: "none", help: "named override set: none, desk, fast, resnet18" },
    KeyDef { key: "data.count", flag: "count", commands: &[GenData], default: "2500", help: "total number of samples" },
    KeyDef { key: "data.split", flag: "split-ratios", commands: &[GenData], default: "0.8,0.1,0.1", help: "train,val,test fractions" },
    KeyDef { key: "data.noise", flag: "noise", commands: &[GenData], default: "0.7", help: "background clutter level in [0, 1]" },
    KeyDef { key: "data.seed", flag: "seed", commands: &[GenData], default: "1", help: "generator seed" },
    KeyDef { key: "data.image_size", flag: "image-size", commands: &[GenData], default: "128", help: "square image side, multiple of 32" },
    KeyDef { key: "data.max_regions", flag: "max-regions", commands: &[GenData], default: "2", help: "maximum text regions per image" },
    KeyDef { key: "model.stage_channels", flag: "channels", commands: TRAINING, default: "16,32,64,128", help: "channels of the four stages" },
    KeyDef { key: "model.blocks_per_stage", flag: "blocks", commands: TRAINING, default: "2,2,2,2", help: "residual blocks per stage" },
    KeyDef { key: "model.dropout", flag: "dropout", commands: TRAINING, default: "0.1", help: "dropout probability after pooling" },
    KeyDef { key: "loss.form", flag: "loss-form", commands: TRAINING, default: "cross_entropy", help: "cross_entropy or literal_probability" },
    KeyDef { key: "loss.stages", flag: "stages", commands: &[Train], default: "2,3", help: "regularized stages, e.g. 2,3 (empty for none)" },
    KeyDef { key: "loss.mse_weight", flag: "mse-weight", commands: TRAINING, default: "1", help: "weight of the mask regularizer" },
    KeyDef { key: "loss.mse_reduction", flag: "mse-reduction", commands: TRAINING, default: "mean", help: "mean or sum" },
    KeyDef { key: "loss.channel_mode", flag: "channel-mode", commands: TRAINING, default: "broadcast", help: "broadcast or mean" },
    KeyDef { key: "mask.downscale", flag: "mask-downscale", commands: TRAINING, default: "max", help: "max or mean" },
    KeyDef { key: "train.initial_lr", flag: "lr", commands: TRAINING, default: "1e-4", help: "initial learning rate" },
    KeyDef { key: "train.epochs", flag: "epochs", commands: TRAINING, default: "30", help: "training epochs" },
    KeyDef { key: "train.batch_size", flag: "batch-size", commands: TRAINING, default: "32", help: "mini-batch size" },
    KeyDef { key: "train.lr_schedule", flag: "lr-schedule", commands: TRAINING, default: "step_decay", help: "step_decay or constant" },
    KeyDef { key: "train.decay_milestones", flag: "milestones", commands: TRAINING, default: "0.6,0.85", help: "epoch fractions where the rate decays" },
    KeyDef { key: "train.decay_factor", flag: "decay-factor", commands: TRAINING, default: "0.1", help: "multiplier applied at each milestone" },
    KeyDef { key: "train.momentum", flag: "momentum", commands: TRAINING, default: "0.9", help: "SGD momentum" },
    KeyDef { key: "train.seed", flag: "seed", commands: &[Train], default: "0", help: "initialization and shuffling seed" },
    KeyDef { key: "eval.batch_size", flag: "eval-batch-size", commands: &[Eval, Ablate], default: "64", help: "evaluation batch size" },
    KeyDef { key: "hough.edge_threshold", flag: "edge-threshold", commands: &[Eval], default: "0.3", help: "edge cut as a fraction of max gradient" },
    KeyDef { key: "hough.angle_bins", flag: "angle-bins", commands: &[Eval], default: "180", help: "orientation bins over [0, 180)" },
    KeyDef { key: "hough.vote_threshold", flag: "vote-threshold", commands: &[Eval], default: "0", help: "ignore accumulator cells at or below this" },
    KeyDef { key: "ablate.selections", flag: "selections", commands: &[Ablate], default: "default", help: "stage subsets separated by ';' (default: ten standard rows)" },
    KeyDef { key: "ablate.seeds", flag: "seeds", commands: &[Ablate], default: "1,2,3", help: "seeds per row" },
    KeyDef { key: "ablate.jobs", flag: "jobs", commands: &[Ablate], default: "1", help: "parallel sub-runs" },
    KeyDef { key: "visualize.stages", flag: "stage", commands: &[Visualize], default: "4", help: "stages to export, e.g. 4 or 1,2,3,4" },
];

pub fn key_def(key: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|k| k.key == key)
}

pub fn keys_for(cmd: Command) -> impl Iterator<Item = &'static KeyDef> {
    KEYS.iter().filter(move |k| k.commands.contains(&cmd))
}

/// Overrides applied by a named preset.
pub fn preset(name: &str) -> Result<&'static [(&'static str, &'static str)]> {
    match name {
        "none" => Ok(&[]),
        "desk" => Ok(&[("train.initial_lr", "0.05"), ("train.epochs", "10")]),
        "fast" => Ok(&[
            ("model.stage_channels", "8,16,32,64"),
            ("model.blocks_per_stage", "1,1,1,1"),
            ("train.epochs", "2"),
            ("train.initial_lr", "0.05"),
        ]),
        "resnet18" => Ok(&[("model.stage_channels", "64,128,256,512")]),
        other => Err(Error::invalid(format!("unknown preset {other:?}"))),
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let location = format!("{origin}:{}", i + 1);
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            location: location.clone(),
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim().trim_matches('"'));
        if key_def(k).is_none() {
            return Err(Error::Parse {
                location,
                message: format!("unknown key {k:?}"),
            });
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Resolves every key from the layers, highest priority last.
    pub fn resolve(
        file: &BTreeMap<String, String>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self> {
        for k in flags.keys() {
            if key_def(k).is_none() {
                return Err(Error::invalid(format!("unknown key {k:?}")));
            }
        }
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .map(|k| (k.key.to_string(), k.default.to_string()))
            .collect();
        let preset_name = flags
            .get("preset")
            .or_else(|| file.get("preset"))
            .map(String::as_str)
            .unwrap_or("none");
        for (k, v) in preset(preset_name)? {
            values.insert(k.to_string(), v.to_string());
        }
        values.extend(file.iter().map(|(k, v)| (k.clone(), v.clone())));
        values.extend(flags.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(Settings { values })
    }

    pub fn defaults() -> Self {
        Settings::resolve(&BTreeMap::new(), &BTreeMap::new()).expect("defaults resolve")
    }

    pub fn load(config_file: Option<&Path>, flags: &BTreeMap<String, String>) -> Result<Self> {
        let file = match config_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_config_text(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        Settings::resolve(&file, flags)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if key_def(key).is_none() {
            return Err(Error::invalid(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("settings key {key} is not registered"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(key);
        v.parse::<T>()
            .map_err(|e| Error::invalid(format!("{key} = {v:?}: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(key);
        if v.trim().is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|p| {
                p.trim()
                    .parse::<T>()
                    .map_err(|e| Error::invalid(format!("{key} = {v:?}: {e}")))
            })
            .collect()
    }

    fn array4(&self, key: &str) -> Result<[usize; 4]> {
        let v: Vec<usize> = self.list(key)?;
        v.try_into()
            .map_err(|_| Error::invalid(format!("{key} needs exactly four values")))
    }

    pub fn dataset_options(&self) -> Result<DatasetOptions> {
        let split: Vec<f64> = self.list("data.split")?;
        let split_ratios: [f64; 3] = split
            .try_into()
            .map_err(|_| Error::invalid("data.split needs three fractions"))?;
        Ok(DatasetOptions {
            count: self.parse("data.count")?,
            split_ratios,
            noise_level: self.parse("data.noise")?,
            seed: self.parse("data.seed")?,
            image_size: self.parse("data.image_size")?,
            max_regions: self.parse("data.max_regions")?,
        })
    }

    pub fn backbone_config(&self) -> Result<BackboneConfig> {
        let cfg = BackboneConfig {
            stage_channels: self.array4("model.stage_channels")?,
            blocks_per_stage: self.array4("model.blocks_per_stage")?,
            dropout_prob: self.parse("model.dropout")?,
            num_classes: crate::backbone::NUM_CLASSES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        Ok(LossConfig {
            form: self.parse("loss.form")?,
            mse_reduction: self.parse("loss.mse_reduction")?,
            channel_mode: self.parse("loss.channel_mode")?,
            stages: self.parse::<StageSelection>("loss.stages")?,
            mse_weight: self.parse("loss.mse_weight")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            initial_lr: self.parse("train.initial_lr")?,
            epochs: self.parse("train.epochs")?,
            batch_size: self.parse("train.batch_size")?,
            lr_schedule: self.parse("train.lr_schedule")?,
            decay_milestones: self.list("train.decay_milestones")?,
            decay_factor: self.parse("train.decay_factor")?,
            momentum: self.parse("train.momentum")?,
            loss: self.loss_config()?,
            mask_downscale: self.parse("mask.downscale")?,
            seed: self.parse("train.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hough_config(&self) -> Result<HoughConfig> {
        let cfg = HoughConfig {
            edge_threshold: self.parse("hough.edge_threshold")?,
            angle_bins: self.parse("hough.angle_bins")?,
            vote_threshold: self.parse("hough.vote_threshold")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ablation_plan(&self) -> Result<AblationPlan> {
        let sel = self.str("ablate.selections").trim();
        let selections = if sel == "default" {
            AblationPlan::default_selections()
        } else {
            sel.split(';')
                .map(str::parse::<StageSelection>)
                .collect::<Result<Vec<_>>>()?
        };
        let plan = AblationPlan {
            selections,
            seeds: self.list("ablate.seeds")?,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn visualize_stages(&self) -> Result<Vec<usize>> {
        let stages: Vec<usize> = self.list("visualize.stages")?;
        if stages.is_empty() || stages.iter().any(|s| !(1..=4).contains(s)) {
            return Err(Error::invalid("visualize.stages must list stages in 1..=4"));
        }
        Ok(stages)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}
