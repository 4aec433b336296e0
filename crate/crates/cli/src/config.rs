//! Flat `key = value` configuration shared by the config file, command-line
//! flags and the `resolved_config` echo.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches};
use rcpn_core::forest::MergePolicy;
use rcpn_core::ingest::{SuperpixelMethod, SynthSpec};
use rcpn_core::net::LossMode;
use rcpn_core::numeric::Activation;
use rcpn_core::trainer::TrainConfig;

use crate::CliError;

/// Value types that can appear in a config line.
pub trait ConfigValue: Sized {
    const IS_FLAG: bool = false;
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
from_str_value!(usize, u64, u8);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| !v.is_nan())
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for bool {
    const IS_FLAG: bool = true;
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "yes" | "on" | "1" => Some(true),
            "false" | "no" | "off" | "0" => Some(false),
            _ => None,
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

/// Empty means unset.
impl ConfigValue for Option<PathBuf> {
    fn parse_value(s: &str) -> Option<Self> {
        Some((!s.is_empty()).then(|| PathBuf::from(s)))
    }
    fn render(&self) -> String {
        self.as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Option<Self> {
        (!s.is_empty()).then(|| PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

/// Comma-separated class indices.
impl ConfigValue for Vec<usize> {
    fn parse_value(s: &str) -> Option<Self> {
        if s.is_empty() {
            return Some(Vec::new());
        }
        s.split(',').map(|t| t.trim().parse().ok()).collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ConfigValue for LossMode {
    fn parse_value(s: &str) -> Option<Self> {
        LossMode::parse(s)
    }
    fn render(&self) -> String {
        self.name().into()
    }
}

impl ConfigValue for MergePolicy {
    fn parse_value(s: &str) -> Option<Self> {
        MergePolicy::parse(s)
    }
    fn render(&self) -> String {
        self.name().into()
    }
}

impl ConfigValue for Activation {
    fn parse_value(s: &str) -> Option<Self> {
        Activation::parse(s)
    }
    fn render(&self) -> String {
        self.name().into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segmenter {
    Grid,
    Slic,
}

impl ConfigValue for Segmenter {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "grid" => Some(Segmenter::Grid),
            "slic" => Some(Segmenter::Slic),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            Segmenter::Grid => "grid",
            Segmenter::Slic => "slic",
        }
        .into()
    }
}

macro_rules! settings {
    ($($key:ident : $ty:ty = $default:expr, $help:literal;)*) => {
        /// Every configurable value. Field names are the config keys; flags use
        /// the same names with `-` for `_`.
        #[derive(Clone, Debug, PartialEq)]
        pub struct Settings {
            $(pub $key: $ty,)*
        }

        impl Default for Settings {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl Settings {
            pub const KEYS: &'static [(&'static str, &'static str, bool)] =
                &[$((stringify!($key), $help, <$ty as ConfigValue>::IS_FLAG),)*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value).ok_or_else(|| {
                            CliError::Usage(format!("invalid value `{value}` for key `{key}`"))
                        })?;
                    })*
                    _ => return Err(CliError::Usage(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $(stringify!($key) => Some(self.$key.render()),)*
                    _ => None,
                }
            }
        }
    };
}

settings! {
    images: PathBuf = "images".into(), "directory of input .ppm images";
    labels: PathBuf = "labels".into(), "directory of ground-truth .pgm label maps";
    features: Option<PathBuf> = None, "optional directory of per-image feature CSVs";
    model: Option<PathBuf> = None, "checkpoint to load";
    predictions: PathBuf = "predictions".into(), "directory of predicted .pgm label maps";
    out: PathBuf = "out".into(), "output directory";
    seed: u64 = 1, "random seed";
    classes: usize = 0, "class count; 0 derives it from the labels";
    void_value: u8 = 255, "label value treated as VOID";
    superpixels: Segmenter = Segmenter::Grid, "grid or slic";
    superpixel_target: usize = 16, "requested super-pixel count";
    slic_compactness: f64 = 10.0, "SLIC spatial weight";
    slic_iters: usize = 10, "SLIC iterations";
    r_train: usize = 10, "parse trees per image during training";
    r_test: usize = 40, "parse trees per image at inference";
    epochs: usize = 10, "passes over the training set";
    learning_rate: f64 = 0.01, "SGD step size";
    momentum: f64 = 0.9, "SGD momentum";
    weight_decay: f64 = 0.0, "L2 weight decay";
    clip_norm: f64 = 5.0, "global gradient norm cap";
    loss_mode: LossMode = LossMode::PureNode, "rcpn or pure_node";
    balanced: bool = false, "inverse-frequency class weights";
    policy: MergePolicy = MergePolicy::Balanced, "tree merge policy: uniform or balanced";
    d_sem: usize = 60, "semantic feature width";
    activation: Activation = Activation::Tanh, "tanh or relu";
    local_only: bool = false, "train the context-free baseline";
    mrf: bool = false, "decode the label hierarchy at inference";
    mrf_k: usize = 9, "labels retained for decoding";
    overlays: bool = false, "write color overlays next to predictions";
    iou_subset: Vec<usize> = Vec::new(), "comma-separated classes for subset IoU";
    count: usize = 10, "synthetic images to generate";
    cells_x: usize = 4, "synthetic grid width in cells";
    cells_y: usize = 4, "synthetic grid height in cells";
    cell_px: usize = 8, "synthetic cell size in pixels";
    synth_classes: usize = 4, "synthetic class count";
    ambiguity: f64 = 0.5, "fraction of cells drawn ambiguous";
    noise: f64 = 0.03, "per-pixel noise standard deviation";
    invert_rule: bool = false, "swap the marker-to-class rule";
}

impl Settings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            r_train: self.r_train,
            r_test: self.r_test,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            seed: self.seed,
            loss_mode: self.loss_mode,
            balanced: self.balanced,
            policy: self.policy,
            d_sem: self.d_sem,
            activation: self.activation,
            local_only: self.local_only,
        }
    }

    pub fn segmenter(&self) -> SuperpixelMethod {
        match self.superpixels {
            Segmenter::Grid => SuperpixelMethod::Grid {
                target: self.superpixel_target,
            },
            Segmenter::Slic => SuperpixelMethod::Slic {
                target: self.superpixel_target,
                compactness: self.slic_compactness,
                iters: self.slic_iters,
            },
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            cells_x: self.cells_x,
            cells_y: self.cells_y,
            cell_px: self.cell_px,
            classes: self.synth_classes,
            ambiguity: self.ambiguity,
            noise: self.noise,
            invert_rule: self.invert_rule,
        }
    }

    /// Every key with its effective value, one `key = value` line each.
    pub fn resolved(&self) -> String {
        Self::KEYS
            .iter()
            .map(|(k, _, _)| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{source}:{}: expected `key = value`, got `{line}`",
                    n + 1
                ))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("{source}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Infer,
    Eval,
    Diag,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Synth,
        Command::Train,
        Command::Infer,
        Command::Eval,
        Command::Diag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Eval => "eval",
            Command::Diag => "diag",
        }
    }

    fn about(self) -> &'static str {
        match self {
            Command::Synth => "Generate a synthetic context dataset",
            Command::Train => "Train a model and write a checkpoint with diagnostics",
            Command::Infer => "Label images with a trained model",
            Command::Eval => "Score predicted label maps against ground truth",
            Command::Diag => "Compare gradient strengths of both loss modes from one seed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub command: Command,
    pub settings: Settings,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn cli() -> clap::Command {
    let mut root = clap::Command::new("rcpn")
        .about("Scene labeling with recursive context propagation over random parse forests")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = clap::Command::new(cmd.name()).about(cmd.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("file of `key = value` lines"),
        );
        for &(key, help, is_flag) in Settings::KEYS {
            let mut arg = Arg::new(key)
                .long(flag_name(key))
                .help(help)
                .action(ArgAction::Set)
                .value_name("VALUE");
            if is_flag {
                arg = arg.num_args(0..=1).default_missing_value("true");
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

/// Resolves defaults, then the `--config` file, then flags.
pub fn parse_config<I, T>(argv: I) -> Result<CliConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = cli().try_get_matches_from(argv).map_err(CliError::Clap)?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let command = Command::ALL
        .into_iter()
        .find(|c| c.name() == name)
        .expect("registered");
    let mut settings = Settings::default();
    if let Some(path) = sub.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {path}: {e}")))?;
        settings.apply_text(&text, path)?;
    }
    apply_flags(&mut settings, sub)?;
    let config = CliConfig { command, settings };
    check_required(&config)?;
    Ok(config)
}

fn apply_flags(settings: &mut Settings, sub: &ArgMatches) -> Result<(), CliError> {
    for &(key, _, _) in Settings::KEYS {
        if let Some(v) = sub.get_one::<String>(key) {
            settings.set(key, v).map_err(|_| {
                CliError::Usage(format!("invalid value `{v}` for --{}", flag_name(key)))
            })?;
        }
    }
    Ok(())
}

fn require_dir(path: &Path, key: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "`{key}` directory {} does not exist",
            path.display()
        )))
    }
}

fn check_required(config: &CliConfig) -> Result<(), CliError> {
    let s = &config.settings;
    match config.command {
        Command::Synth => {
            if s.synth_classes < 3 {
                return Err(CliError::Usage("`synth_classes` must be at least 3".into()));
            }
        }
        Command::Train | Command::Diag => {
            require_dir(&s.images, "images")?;
            require_dir(&s.labels, "labels")?;
        }
        Command::Infer => {
            if s.model.is_none() {
                return Err(CliError::Usage("`model` is required for infer".into()));
            }
            require_dir(&s.images, "images")?;
        }
        Command::Eval => {
            require_dir(&s.predictions, "predictions")?;
            require_dir(&s.labels, "labels")?;
        }
    }
    if let Some(f) = &s.features {
        require_dir(f, "features")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_round_trip_through_resolved_text() {
        let mut s = Settings::default();
        s.set("d_sem", "30").unwrap();
        s.set("iou_subset", "1,3").unwrap();
        s.set("features", "feats").unwrap();
        s.set("learning_rate", "0.1").unwrap();
        let mut t = Settings::default();
        t.apply_text(&s.resolved(), "resolved").unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut s = Settings::default();
        s.apply_text("# header\n\nd_sem = 12  # trailing\n", "f")
            .unwrap();
        assert_eq!(s.d_sem, 12);
    }

    #[test]
    fn bad_value_names_key_and_token() {
        let e = Settings::default()
            .apply_text("d_sem = sixty", "f")
            .unwrap_err()
            .to_string();
        assert!(e.contains("d_sem") && e.contains("sixty"), "{e}");
        let e = Settings::default()
            .set("dsem", "1")
            .unwrap_err()
            .to_string();
        assert!(e.contains("dsem"), "{e}");
    }

    #[test]
    fn every_key_has_a_flag() {
        let c = cli();
        let train = c.find_subcommand("train").unwrap();
        for (k, _, _) in Settings::KEYS {
            assert!(
                train
                    .get_arguments()
                    .any(|a| a.get_long() == Some(&flag_name(k))),
                "{k}"
            );
        }
    }
}
