//! Config-driven experiments: TOML schema, dataset stages, training,
//! evaluation, zero-shot evaluation, complexity tables and run manifests.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::io::{load_dataset, save_dataset, DATASET_VERSION};
use crate::channel::{build_dataset, splitmix64, Dataset, LinkConfig, ProfileRegistry, ProfileSpec};
use crate::error::{Error, Result};
use crate::models::{count_complexity, BackboneConfig, BackboneRegistry, ComplexityReport, ModelShape, RouterSpec};
use crate::moe::{
    load_checkpoint, save_checkpoint, Checkpoint, Estimator, MoEModel, SingleExpert, Thresholds, CHECKPOINT_VERSION,
};
use crate::pipeline::{
    evaluate, train, write_eval_csv, write_history_csv, write_trace_csv, write_usage_csv, zero_shot_eval, EvalReport,
    History, TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    MixedSnr,
    MixedProfile,
    VaryingRb,
    Custom,
}

/// A grid of channel configurations: every profile at every delay spread
/// (nominal when the list is empty), RB count and SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelGrid {
    pub profiles: Vec<String>,
    #[serde(default)]
    pub delay_spreads_ns: Vec<f64>,
    pub n_rb: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub samples_per_config: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub n_ant: usize,
    pub train: ChannelGrid,
    pub test: ChannelGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Single,
    Moe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    #[serde(default = "default_backbone")]
    pub backbone: String,
    pub n_blocks: usize,
    pub channels: usize,
    #[serde(default = "default_experts")]
    pub experts: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Defaults to `2/r`.
    #[serde(default)]
    pub tau1: Option<f64>,
    /// Defaults to `4/(5r)`.
    #[serde(default)]
    pub tau2: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_true")]
    pub bias_at_eval: bool,
}

fn default_backbone() -> String {
    "resnet".into()
}
fn default_experts() -> usize {
    4
}
fn default_k() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_balancer")]
    pub balancer: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_precision")]
    pub precision: String,
    #[serde(default)]
    pub patience: Option<usize>,
}

fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}
fn default_learning_rate() -> f64 {
    TrainConfig::default().learning_rate
}
fn default_balancer() -> String {
    TrainConfig::default().balancer
}
fn default_alpha() -> f64 {
    TrainConfig::default().alpha
}
fn default_precision() -> String {
    TrainConfig::default().precision
}

/// Input geometry for the complexity table, `[H, W, D]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexitySection {
    pub input: [usize; 3],
}

impl Default for ComplexitySection {
    fn default() -> Self {
        Self { input: [16, 240, 4] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Directory name under the output root when `--out` is not given.
    #[serde(default)]
    pub output_dir: Option<String>,
    pub channel: ChannelSection,
    #[serde(default)]
    pub zero_shot: Option<ChannelGrid>,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub complexity: ComplexitySection,
}

fn check_grid(g: &ChannelGrid, path: &str, reg: &ProfileRegistry) -> Result<()> {
    if g.profiles.is_empty() {
        return Err(Error::config(format!("{path}.profiles"), "must not be empty"));
    }
    for (i, p) in g.profiles.iter().enumerate() {
        if !reg.contains(p) {
            return Err(Error::config(
                format!("{path}.profiles[{i}]"),
                format!(
                    "unknown profile `{p}` (known: {})",
                    reg.names().collect::<Vec<_>>().join(", ")
                ),
            ));
        }
    }
    if g.delay_spreads_ns.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::config(
            format!("{path}.delay_spreads_ns"),
            "must be finite and non-negative",
        ));
    }
    if g.n_rb.is_empty() || g.n_rb.contains(&0) {
        return Err(Error::config(
            format!("{path}.n_rb"),
            "must be a non-empty list of positive counts",
        ));
    }
    if g.snr_db.is_empty() {
        return Err(Error::config(format!("{path}.snr_db"), "must not be empty"));
    }
    if g.snr_db.iter().any(|s| s.is_nan()) {
        return Err(Error::config(format!("{path}.snr_db"), "NaN is not an SNR"));
    }
    if g.samples_per_config == 0 {
        return Err(Error::config(format!("{path}.samples_per_config"), "must be positive"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into());
            Error::config(path, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let reg = ProfileRegistry::builtin();
        if self.channel.n_ant == 0 {
            return Err(Error::config("channel.n_ant", "must be positive"));
        }
        check_grid(&self.channel.train, "channel.train", &reg)?;
        check_grid(&self.channel.test, "channel.test", &reg)?;
        if let Some(z) = &self.zero_shot {
            check_grid(z, "zero_shot", &reg)?;
        }
        let m = &self.model;
        if !BackboneRegistry::builtin().names().any(|n| n == m.backbone) {
            return Err(Error::config(
                "model.backbone",
                format!("unknown backbone `{}`", m.backbone),
            ));
        }
        if m.n_blocks == 0 {
            return Err(Error::config("model.n_blocks", "must be at least 1"));
        }
        if m.channels == 0 {
            return Err(Error::config("model.channels", "must be positive"));
        }
        if m.architecture == Architecture::Moe {
            if m.experts < 2 {
                return Err(Error::config("model.experts", "a mixture needs at least 2 experts"));
            }
            if m.k == 0 || m.k > m.experts {
                return Err(Error::config(
                    "model.k",
                    format!("k = {} outside 1..={}", m.k, m.experts),
                ));
            }
            self.thresholds().validate(m.experts)?;
        }
        self.train_config().validate()?;
        if self.complexity.input.contains(&0) {
            return Err(Error::config("complexity.input", "extents must be positive"));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Thresholds {
        let d = Thresholds::defaults(self.model.experts);
        Thresholds {
            tau1: self.model.tau1.unwrap_or(d.tau1),
            tau2: self.model.tau2.unwrap_or(d.tau2),
            gamma: self.model.gamma.unwrap_or(d.gamma),
        }
    }

    pub fn backbone_config(&self, io_channels: usize) -> BackboneConfig {
        BackboneConfig {
            kind: self.model.backbone.clone(),
            n_blocks: self.model.n_blocks,
            channels: self.model.channels,
            io_channels,
        }
    }

    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            master: s,
            train_data: splitmix64(s ^ 0x01),
            test_data: splitmix64(s ^ 0x02),
            zero_shot_data: splitmix64(s ^ 0x03),
            init: splitmix64(s ^ 0x04),
            train: splitmix64(s ^ 0x05),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: self.seeds().train,
            balancer: t.balancer.clone(),
            alpha: t.alpha,
            precision: t.precision.clone(),
            patience: t.patience,
        }
    }

    pub fn init_model(&self) -> Result<Estimator> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seeds().init);
        let bb = self.backbone_config(2);
        Ok(match self.model.architecture {
            Architecture::Single => Estimator::Single(SingleExpert::new(bb, &mut rng)?),
            Architecture::Moe => Estimator::Moe(MoEModel::new(
                bb,
                self.model.experts,
                self.model.k,
                self.thresholds(),
                &mut rng,
            )?),
        })
    }
}

/// Every seed a run uses, all derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub train_data: u64,
    pub test_data: u64,
    pub zero_shot_data: u64,
    pub init: u64,
    pub train: u64,
}

/// Builds the profile x delay-spread x RB x SNR grid.
pub fn grid_dataset(grid: &ChannelGrid, n_ant: usize, seed: u64) -> Result<Dataset> {
    let reg = ProfileRegistry::builtin();
    let mut profiles: Vec<ProfileSpec> = Vec::new();
    for name in &grid.profiles {
        if grid.delay_spreads_ns.is_empty() {
            profiles.push(reg.build(name, None)?);
        } else {
            for ds in &grid.delay_spreads_ns {
                profiles.push(reg.build(name, Some(ds * 1e-9))?);
            }
        }
    }
    let links: Vec<LinkConfig> = grid
        .n_rb
        .iter()
        .flat_map(|&rb| grid.snr_db.iter().map(move |&snr| LinkConfig::new(n_ant, rb, snr)))
        .collect();
    build_dataset(&profiles, &links, grid.samples_per_config, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    ZeroShot,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.mcds",
            Split::Test => "test.mcds",
            Split::ZeroShot => "zeroshot.mcds",
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const USAGE_FILE: &str = "usage.csv";
pub const TRACE_FILE: &str = "routing_trace.csv";
pub const ZS_EVAL_FILE: &str = "zeroshot_eval.csv";
pub const ZS_USAGE_FILE: &str = "zeroshot_usage.csv";
pub const ZS_TRACE_FILE: &str = "zeroshot_routing_trace.csv";
pub const COMPLEXITY_FILE: &str = "complexity.csv";

/// Records everything needed to reproduce a run. No timestamps or host
/// details, so identical configs yield identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub dataset_format_version: u32,
    pub checkpoint_format_version: u32,
    pub crate_version: String,
    pub artifacts: Vec<String>,
}

/// One row of the complexity table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub model: String,
    pub macs: u64,
    pub flops: u64,
    pub params: u64,
    pub model_size_bytes: u64,
}

impl ComplexityRow {
    fn new(model: impl Into<String>, r: ComplexityReport) -> Self {
        Self {
            model: model.into(),
            macs: r.macs,
            flops: r.flops,
            params: r.params,
            model_size_bytes: r.model_size_bytes,
        }
    }
}

/// Single expert, router alone, and MoE top-k for every `k` in `1..=r`,
/// at the configured input geometry.
pub fn complexity_table(cfg: &ExperimentConfig) -> Result<Vec<ComplexityRow>> {
    let [h, w, d] = cfg.complexity.input;
    let bb = cfg.backbone_config(d);
    let r = cfg.model.experts;
    let router = RouterSpec::new(r, d).map_err(|_| Error::config("model.experts", "need at least 2 experts"))?;
    let label = format!("{}-{}b-{}c", bb.kind, bb.n_blocks, bb.channels);
    let mut rows = vec![
        ComplexityRow::new(
            format!("single {label}"),
            count_complexity(&ModelShape::Expert(bb.clone()), [h, w, d])?,
        ),
        ComplexityRow::new(
            format!("router r={r}"),
            count_complexity(&ModelShape::Router(router), [h, w, d])?,
        ),
    ];
    for k in 1..=r {
        let shape = ModelShape::Moe {
            backbone: bb.clone(),
            router,
            k,
        };
        rows.push(ComplexityRow::new(
            format!("moe top-{k}-of-{r} {label}"),
            count_complexity(&shape, [h, w, d])?,
        ));
    }
    Ok(rows)
}

pub fn write_complexity_csv(rows: &[ComplexityRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_complexity_csv(input: impl std::io::Read) -> Result<Vec<ComplexityRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<ComplexityRow>, _>>()?)
}

/// An experiment bound to its output directory.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Self {
        Self {
            config,
            out: out.into(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Creates the output directory. An existing non-empty directory is
    /// refused unless `force` is set.
    pub fn prepare(&self, force: bool) -> Result<()> {
        if self.out.exists() {
            let non_empty = fs::read_dir(&self.out)?.next().is_some();
            if non_empty && !force {
                return Err(Error::usage(format!(
                    "output directory {} already exists; pass --force to overwrite",
                    self.out.display()
                )));
            }
        }
        fs::create_dir_all(&self.out)?;
        Ok(())
    }

    fn grid(&self, split: Split) -> Result<(&ChannelGrid, u64)> {
        let seeds = self.config.seeds();
        Ok(match split {
            Split::Train => (&self.config.channel.train, seeds.train_data),
            Split::Test => (&self.config.channel.test, seeds.test_data),
            Split::ZeroShot => (
                self.config
                    .zero_shot
                    .as_ref()
                    .ok_or_else(|| Error::config("zero_shot", "section missing"))?,
                seeds.zero_shot_data,
            ),
        })
    }

    /// Generates a split deterministically from the config.
    pub fn generate_split(&self, split: Split) -> Result<Dataset> {
        let (grid, seed) = self.grid(split)?;
        grid_dataset(grid, self.config.channel.n_ant, seed)
    }

    /// Loads a split from the output directory, or generates it.
    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        let p = self.path(split.file_name());
        if p.exists() {
            load_dataset(&p)
        } else {
            self.generate_split(split)
        }
    }

    /// Writes every configured split to the output directory.
    pub fn generate(&self) -> Result<Vec<(Split, Dataset)>> {
        let mut splits = vec![Split::Train, Split::Test];
        if self.config.zero_shot.is_some() {
            splits.push(Split::ZeroShot);
        }
        let mut out = Vec::new();
        for s in splits {
            let ds = self.generate_split(s)?;
            save_dataset(&ds, &self.path(s.file_name()))?;
            out.push((s, ds));
        }
        Ok(out)
    }

    /// Trains from the configured initialization and writes the checkpoint
    /// and history.
    pub fn train(&self) -> Result<(Checkpoint, History)> {
        let data = self.dataset(Split::Train)?;
        let (tr, val) = data.split_validation();
        let mut model = self.config.init_model()?;
        let history = train(&mut model, &tr, &val, &self.config.train_config())?;
        let ck = Checkpoint {
            model,
            trained_on: data.config_tuples(),
        };
        save_checkpoint(&ck, &self.path(CHECKPOINT_FILE))?;
        write_file(&self.path(HISTORY_FILE), |b| write_history_csv(&history.records, b))?;
        Ok((ck, history))
    }

    fn load_model(&self) -> Result<Checkpoint> {
        load_checkpoint(&self.path(CHECKPOINT_FILE))
    }

    fn write_report(&self, report: &EvalReport, model: &Estimator, files: [&str; 3]) -> Result<()> {
        write_file(&self.path(files[0]), |b| write_eval_csv(&report.rows, b))?;
        if let Some(m) = model.as_moe() {
            write_file(&self.path(files[1]), |b| {
                write_usage_csv(&report.usage, m.n_experts(), b)
            })?;
            write_file(&self.path(files[2]), |b| write_trace_csv(&report.traces, b))?;
        }
        Ok(())
    }

    /// Multitask evaluation on the test split.
    pub fn eval(&self) -> Result<EvalReport> {
        let ck = self.load_model()?;
        let report = evaluate(&ck.model, &self.dataset(Split::Test)?)?;
        self.write_report(&report, &ck.model, [EVAL_FILE, USAGE_FILE, TRACE_FILE])?;
        Ok(report)
    }

    /// Evaluation on configurations absent from training.
    pub fn zeroshot(&self) -> Result<EvalReport> {
        let ck = self.load_model()?;
        let report = zero_shot_eval(&ck.model, &ck.trained_on, &self.dataset(Split::ZeroShot)?)?;
        self.write_report(&report, &ck.model, [ZS_EVAL_FILE, ZS_USAGE_FILE, ZS_TRACE_FILE])?;
        Ok(report)
    }

    pub fn complexity(&self) -> Result<Vec<ComplexityRow>> {
        let rows = complexity_table(&self.config)?;
        write_file(&self.path(COMPLEXITY_FILE), |b| write_complexity_csv(&rows, b))?;
        Ok(rows)
    }

    pub fn write_manifest(&self) -> Result<Manifest> {
        let mut artifacts: BTreeSet<String> = BTreeSet::new();
        for e in fs::read_dir(&self.out)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if name != MANIFEST_FILE {
                artifacts.insert(name);
            }
        }
        let m = Manifest {
            config: self.config.clone(),
            seeds: self.config.seeds(),
            dataset_format_version: DATASET_VERSION,
            checkpoint_format_version: CHECKPOINT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: artifacts.into_iter().collect(),
        };
        let json = serde_json::to_string_pretty(&m).map_err(|e| Error::parse(e.to_string()))?;
        fs::write(self.path(MANIFEST_FILE), json + "\n")?;
        Ok(m)
    }

    /// Generate, train, evaluate, zero-shot evaluate when configured,
    /// account complexity and write the manifest.
    pub fn run(&self) -> Result<RunSummary> {
        self.generate()?;
        let (_, history) = self.train()?;
        let eval = self.eval()?;
        let zero_shot = match self.config.zero_shot {
            Some(_) => Some(self.zeroshot()?),
            None => None,
        };
        let complexity = self.complexity()?;
        fs::write(self.path("config.toml"), self.config.to_toml()?)?;
        self.write_manifest()?;
        Ok(RunSummary {
            history,
            eval,
            zero_shot,
            complexity,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub history: History,
    pub eval: EvalReport,
    pub zero_shot: Option<EvalReport>,
    pub complexity: Vec<ComplexityRow>,
}

/// Reads a manifest and returns its experiment config.
pub fn config_from_manifest(path: &Path) -> Result<ExperimentConfig> {
    let m: Manifest = serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::parse(format!("manifest: {e}")))?;
    m.config.validate()?;
    Ok(m.config)
}
