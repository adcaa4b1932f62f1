//! End-to-end orchestration: configuration, evaluation protocols, per-fold
//! training and testing, reports and on-disk artifacts.
//!
//! Per fold: preprocess, train the stacked autoencoder on training frames,
//! encode every sequence, compute one phantom per class on training
//! features, warp training sequences to their class phantom, extract FTP
//! features and train one-vs-all SVMs. A test sequence is warped to every
//! phantom and variant `k` is scored by class `k`'s SVM.
//!
//! All randomness is derived from one master seed with
//! [`derive_seed`]: `derive_seed(master, "<subset>/fold", i)` gives the fold
//! seed, from which the DAE, registration and SVM seeds are derived with the
//! tags `"dae"`, `"registration"` and `"svm"`. Seeds written inside the
//! module sections of a config are ignored.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::{svm_predict, svm_train_ova, svm_train_ova_per_class, SvmConfig, SvmModel};
use crate::dae::{encode_sequence, train_stack_with_history, training_samples, InputScaler, StackedModel, TrainConfig};
use crate::error::{Error, Result};
use crate::ftp::{ftp_features, FtpConfig};
use crate::preprocess::{preprocess_sequence, select_reference_frame, NormalizationConfig, DEFAULT_CHUNKS, DEFAULT_LENGTH};
use crate::registration::{compute_phantom, warp_sequence, Frames, PhantomTemplate, RegistrationConfig, RegistrationMethod, WarpMode};
use crate::rng::{derive_seed, rng_from_seed};
use crate::skeleton_io::{generate_synthetic, parse_dataset, ActionSequence, DatasetFormat, DatasetMeta, SyntheticSpec};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain denoising autoencoder (λ = β = 0).
    Dae,
    /// Category head only (β = 0).
    DaeCc,
    /// Temporal head only (λ = 0).
    DaeTc,
    #[default]
    DaeCtc,
    /// Joint positions: scaled coordinates instead of learned features.
    Jp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dae => "dae",
            Variant::DaeCc => "dae_cc",
            Variant::DaeTc => "dae_tc",
            Variant::DaeCtc => "dae_ctc",
            Variant::Jp => "jp",
        }
    }

    /// Training config with the heads this variant disables switched off.
    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        match self {
            Variant::Dae => {
                out.lambda = 0.0;
                out.beta = 0.0;
            }
            Variant::DaeCc => out.beta = 0.0,
            Variant::DaeTc => out.lambda = 0.0,
            Variant::DaeCtc | Variant::Jp => {}
        }
        out
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dae" => Ok(Variant::Dae),
            "dae_cc" => Ok(Variant::DaeCc),
            "dae_tc" => Ok(Variant::DaeTc),
            "dae_ctc" => Ok(Variant::DaeCtc),
            "jp" => Ok(Variant::Jp),
            other => Err(Error::config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    #[default]
    CrossSubject,
    HalfSubjects,
    LeaveOneSubjectOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSubset {
    pub name: String,
    /// 1-based class ids of the full dataset.
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    /// Training subjects for `cross_subject`.
    pub train_subjects: Vec<u32>,
    /// Evaluated separately when non-empty; otherwise the whole dataset is
    /// one subset.
    pub subsets: Vec<ClassSubset>,
    /// Where a subset list comes from, for the record.
    pub provenance: Option<String>,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec {
            kind: ProtocolKind::CrossSubject,
            train_subjects: vec![1, 3, 5, 7, 9],
            subsets: Vec::new(),
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn subjects_of(dataset: &[ActionSequence]) -> Vec<u32> {
    dataset.iter().map(|s| s.subject_id).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Splits dataset indices into folds. `seed` only matters for
/// `half_subjects`.
pub fn split_protocol(dataset: &[ActionSequence], spec: &ProtocolSpec, seed: u64) -> Result<Vec<Fold>> {
    let subjects = subjects_of(dataset);
    if subjects.is_empty() {
        return Err(Error::data("dataset is empty"));
    }
    let by_subjects = |name: String, train: &BTreeSet<u32>| Fold {
        name,
        train: (0..dataset.len()).filter(|&i| train.contains(&dataset[i].subject_id)).collect(),
        test: (0..dataset.len()).filter(|&i| !train.contains(&dataset[i].subject_id)).collect(),
    };
    match spec.kind {
        ProtocolKind::CrossSubject => {
            let train: BTreeSet<u32> = spec.train_subjects.iter().copied().collect();
            if train.is_empty() {
                return Err(Error::config("cross_subject protocol needs train_subjects"));
            }
            if let Some(s) = train.iter().find(|s| !subjects.contains(s)) {
                return Err(Error::config(format!("train subject {s} does not occur in the dataset")));
            }
            Ok(vec![by_subjects("cross_subject".into(), &train)])
        }
        ProtocolKind::HalfSubjects => {
            let mut shuffled = subjects.clone();
            shuffled.shuffle(&mut rng_from_seed(seed));
            let train: BTreeSet<u32> = shuffled[..subjects.len().div_ceil(2)].iter().copied().collect();
            Ok(vec![by_subjects("half_subjects".into(), &train)])
        }
        ProtocolKind::LeaveOneSubjectOut => Ok(subjects
            .iter()
            .map(|&held| {
                let train: BTreeSet<u32> = subjects.iter().copied().filter(|&s| s != held).collect();
                by_subjects(format!("subject_{held:02}"), &train)
            })
            .collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Raw layout of `paths`; unused for synthetic data.
    pub format: Option<DatasetFormat>,
    /// Files or directories (directories are listed in sorted order).
    pub paths: Vec<PathBuf>,
    /// `msr_action3d`, `utkinect` or `florence3d`.
    pub preset: Option<String>,
    /// JSON-encoded [`DatasetMeta`], for canonical files of other layouts.
    pub meta_path: Option<PathBuf>,
    /// Generate the dataset instead of reading it.
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            format: None,
            paths: Vec::new(),
            preset: None,
            meta_path: None,
            synthetic: Some(SyntheticSpec::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub target_length: usize,
    pub chunk_count: usize,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            target_length: DEFAULT_LENGTH,
            chunk_count: DEFAULT_CHUNKS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Layer widths; defaults depend on the dataset preset.
    pub hidden_sizes: Option<Vec<usize>>,
    #[serde(flatten)]
    pub dae: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmTraining {
    /// Each training sequence is warped to its own class phantom; one
    /// feature matrix serves every class SVM.
    #[default]
    OwnPhantom,
    /// SVM `k` is trained on every training sequence warped to phantom `k`,
    /// the same view it scores at test time.
    PerPhantom,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub svm_training: SvmTraining,
    /// Tags sequences by split and panics if a test sequence reaches a
    /// training entry point.
    pub leak_guard: bool,
    /// Debug only: evaluate every fold on its own training set.
    pub resubstitution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasterConfig {
    pub seed: u64,
    pub variant: Variant,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessSection,
    pub train: TrainSection,
    pub registration: RegistrationConfig,
    pub ftp: FtpConfig,
    pub svm: SvmConfig,
    pub protocol: ProtocolSpec,
    pub pipeline: PipelineOptions,
}

impl Default for MasterConfig {
    fn default() -> Self {
        MasterConfig {
            seed: 0,
            variant: Variant::DaeCtc,
            dataset: DatasetConfig::default(),
            preprocess: PreprocessSection::default(),
            train: TrainSection::default(),
            registration: RegistrationConfig::default(),
            ftp: FtpConfig::default(),
            svm: SvmConfig::default(),
            protocol: ProtocolSpec::default(),
            pipeline: PipelineOptions {
                leak_guard: true,
                ..Default::default()
            },
        }
    }
}

impl MasterConfig {
    /// Reads a config file; relative dataset paths are resolved against the
    /// file's directory. Every failure is a config error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg: MasterConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.dataset.paths.iter_mut().for_each(resolve);
        if let Some(p) = cfg.dataset.meta_path.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        if let Some(h) = &self.train.hidden_sizes {
            return h.clone();
        }
        match self.dataset.preset.as_deref() {
            Some("utkinect") => vec![150, 300, 600],
            Some("florence3d") => vec![100, 200, 400],
            _ => vec![200, 400, 800],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.dae.validate()?;
        if self.hidden_sizes().is_empty() || self.hidden_sizes().contains(&0) {
            return Err(Error::config("hidden_sizes must be non-empty and positive"));
        }
        let t = self.preprocess.target_length;
        if self.preprocess.chunk_count == 0 || t % self.preprocess.chunk_count != 0 {
            return Err(Error::config("target_length must be a positive multiple of chunk_count"));
        }
        self.registration.validate(t)?;
        self.ftp.check_length(t)?;
        self.svm.validate()?;
        if self.dataset.synthetic.is_none() && self.dataset.format.is_none() {
            return Err(Error::config("dataset needs either `synthetic` or `format` and `paths`"));
        }
        if let Some(s) = &self.dataset.synthetic {
            s.validate()?;
        }
        for subset in &self.protocol.subsets {
            if subset.classes.len() < 2 {
                return Err(Error::config(format!("subset {} needs at least two classes", subset.name)));
            }
        }
        Ok(())
    }
}

pub fn preset_meta(name: &str) -> Result<DatasetMeta> {
    match name {
        "msr_action3d" => Ok(DatasetMeta::msr_action3d()),
        "utkinect" => Ok(DatasetMeta::utkinect()),
        "florence3d" => Ok(DatasetMeta::florence3d()),
        other => Err(Error::config(format!("unknown dataset preset {other:?}"))),
    }
}

fn expand_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(Error::BadPath { path: p.clone(), msg: "no such file or directory".into() });
        }
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::BadPath { path: p.clone(), msg: e.to_string() })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file())
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Loads or generates the configured dataset.
pub fn load_dataset(cfg: &DatasetConfig) -> Result<(Vec<ActionSequence>, DatasetMeta)> {
    if let Some(spec) = &cfg.synthetic {
        return generate_synthetic(spec);
    }
    let format = cfg.format.ok_or_else(|| Error::config("dataset format missing"))?;
    let mut meta = match (&cfg.preset, &cfg.meta_path) {
        (Some(p), _) => preset_meta(p)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::BadPath { path: path.clone(), msg: e.to_string() })?;
            serde_json::from_str(&text).map_err(|e| Error::BadPath { path: path.clone(), msg: e.to_string() })?
        }
        (None, None) => return Err(Error::config("dataset needs `preset` or `meta_path`")),
    };
    meta.validate()?;
    let mut paths = expand_paths(&cfg.paths)?;
    if format == DatasetFormat::Msr {
        paths.retain(|p| p.to_string_lossy().ends_with("_skeleton3D.txt"));
    }
    let data = parse_dataset(format, &paths, &meta)?;
    for s in &data {
        if let Some(l) = s.label {
            if l == 0 || l > meta.category_count {
                return Err(Error::data(format!("sequence {} has label {l} outside 1..={}", s.instance_id, meta.category_count)));
            }
        }
    }
    meta.sequence_count = data.len();
    Ok((data, meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

/// A dataset sequence viewed through its role in one fold.
#[derive(Debug, Clone, Copy)]
pub struct Tagged<'a> {
    pub index: usize,
    pub role: Role,
    pub seq: &'a ActionSequence,
}

fn guard_train(items: &[Tagged], enabled: bool, entry: &str) {
    if enabled {
        if let Some(t) = items.iter().find(|t| t.role != Role::Train) {
            panic!("leak guard: test sequence {} (index {}) reached {entry}", t.seq.instance_id, t.index);
        }
    }
}

/// Frame-level feature extractor of a trained fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Dae(StackedModel),
    /// Scaled joint coordinates.
    Jp(InputScaler),
}

impl Encoder {
    pub fn encode(&self, seq: &ActionSequence) -> Result<Vec<Vec<f64>>> {
        match self {
            Encoder::Dae(m) => Ok(encode_sequence(m, seq)?.features),
            Encoder::Jp(s) => seq.frames.iter().map(|f| s.scale_frame(f)).collect(),
        }
    }
}

/// Everything a fold needs at test time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModel {
    pub class_count: usize,
    pub normalization: NormalizationConfig,
    pub encoder: Encoder,
    pub registration: RegistrationConfig,
    pub ftp: FtpConfig,
    pub phantoms: Vec<PhantomTemplate>,
    pub svm: SvmModel,
    /// Training loss curves, empty for the JP encoder.
    pub dae_history: Vec<Vec<f64>>,
}

impl FoldModel {
    /// One FTP feature per phantom, or a single one without registration.
    pub fn feature_variants(&self, features: &Frames) -> Result<Vec<Vec<f64>>> {
        if self.registration.method == RegistrationMethod::None {
            return Ok(vec![ftp_features(features, &self.ftp)?]);
        }
        self.phantoms
            .iter()
            .map(|p| ftp_features(&warp_sequence(&p.atoms, features, WarpMode::Intra, &self.registration)?, &self.ftp))
            .collect()
    }

    /// Predicted 1-based label of a raw sequence.
    pub fn predict(&self, seq: &ActionSequence) -> Result<usize> {
        let pre = preprocess_sequence(seq, &self.normalization)?;
        let feats = self.encoder.encode(&pre)?;
        Ok(svm_predict(&self.svm, &self.feature_variants(&feats)?)?.0)
    }
}

/// Settings for one fold, with seeds already derived.
#[derive(Debug, Clone)]
pub struct FoldSettings {
    pub variant: Variant,
    pub hidden_sizes: Vec<usize>,
    pub train: TrainConfig,
    pub registration: RegistrationConfig,
    pub ftp: FtpConfig,
    pub svm: SvmConfig,
    pub target_length: usize,
    pub chunk_count: usize,
    pub svm_training: SvmTraining,
    pub leak_guard: bool,
}

impl FoldSettings {
    pub fn derive(cfg: &MasterConfig, fold_seed: u64) -> Self {
        let mut train = cfg.variant.apply(&cfg.train.dae);
        train.seed = derive_seed(fold_seed, "dae", 0);
        let mut registration = cfg.registration.clone();
        registration.seed = derive_seed(fold_seed, "registration", 0);
        let mut svm = cfg.svm.clone();
        svm.seed = derive_seed(fold_seed, "svm", 0);
        FoldSettings {
            variant: cfg.variant,
            hidden_sizes: cfg.hidden_sizes(),
            train,
            registration,
            ftp: cfg.ftp.clone(),
            svm,
            target_length: cfg.preprocess.target_length,
            chunk_count: cfg.preprocess.chunk_count,
            svm_training: cfg.pipeline.svm_training,
            leak_guard: cfg.pipeline.leak_guard,
        }
    }
}

/// Trains every stage of one fold. Sequences that cannot be preprocessed
/// are skipped; their count is returned.
pub fn train_fold(train: &[Tagged], meta: &DatasetMeta, settings: &FoldSettings) -> Result<(FoldModel, usize)> {
    guard_train(train, settings.leak_guard, "train_fold");
    let l = meta.category_count;
    let layout = meta.layout();
    let raw: Vec<&ActionSequence> = train.iter().map(|t| t.seq).collect();
    let reference = select_reference_frame(&raw, &layout)?;
    let normalization = NormalizationConfig::new(meta, reference, settings.target_length, settings.chunk_count)?;

    let mut skipped = 0;
    let mut pre: Vec<ActionSequence> = Vec::new();
    for t in train {
        if t.seq.label.is_none() {
            return Err(Error::data(format!("training sequence {} has no label", t.seq.instance_id)));
        }
        match preprocess_sequence(t.seq, &normalization) {
            Ok(s) => pre.push(s),
            Err(_) => skipped += 1,
        }
    }
    for k in 1..=l {
        if !pre.iter().any(|s| s.label == Some(k)) {
            return Err(Error::data(format!("class {k} ({}) has no usable training sequence", meta.category_names[k - 1])));
        }
    }

    let pre_refs: Vec<&ActionSequence> = pre.iter().collect();
    let scaler = InputScaler::fit(pre.iter().flat_map(|s| s.frames.iter()))?;
    let (encoder, dae_history) = if settings.variant == Variant::Jp {
        (Encoder::Jp(scaler), Vec::new())
    } else {
        let samples = training_samples(&pre_refs, &scaler, l, settings.chunk_count)?;
        let (mut model, history) = train_stack_with_history(&samples, &settings.hidden_sizes, &settings.train)?;
        model.scaler = scaler;
        (Encoder::Dae(model), history.layers.into_iter().chain([history.finetune]).collect())
    };

    let features: Vec<Vec<Vec<f64>>> = pre.iter().map(|s| encoder.encode(s)).collect::<Result<_>>()?;
    let labels: Vec<usize> = pre.iter().map(|s| s.label.expect("checked above")).collect();

    let mut model = FoldModel {
        class_count: l,
        normalization,
        encoder,
        registration: settings.registration.clone(),
        ftp: settings.ftp.clone(),
        phantoms: Vec::new(),
        svm: SvmModel {
            class_count: 0,
            feature_dim: 0,
            config: settings.svm.clone(),
            scalers: Vec::new(),
            classes: Vec::new(),
        },
        dae_history,
    };

    if settings.registration.method == RegistrationMethod::None {
        let rows = features.iter().map(|f| ftp_features(f, &settings.ftp)).collect::<Result<Vec<_>>>()?;
        model.svm = svm_train_ova(&rows, &labels, l, &settings.svm)?;
        return Ok((model, skipped));
    }

    for k in 1..=l {
        let own: Vec<&Frames> = features.iter().zip(&labels).filter(|(_, &y)| y == k).map(|(f, _)| f.as_slice()).collect();
        let pools: Vec<Vec<&Frames>> = (1..=l)
            .filter(|&o| o != k)
            .map(|o| features.iter().zip(&labels).filter(|(_, &y)| y == o).map(|(f, _)| f.as_slice()).collect())
            .collect();
        model.phantoms.push(compute_phantom(k, &own, &pools, &settings.registration)?.template);
    }

    model.svm = match settings.svm_training {
        SvmTraining::OwnPhantom => {
            let rows = features
                .iter()
                .zip(&labels)
                .map(|(f, &y)| {
                    let w = warp_sequence(&model.phantoms[y - 1].atoms, f, WarpMode::Intra, &settings.registration)?;
                    ftp_features(&w, &settings.ftp)
                })
                .collect::<Result<Vec<_>>>()?;
            svm_train_ova(&rows, &labels, l, &settings.svm)?
        }
        SvmTraining::PerPhantom => {
            let per_class = model
                .phantoms
                .iter()
                .map(|p| {
                    features
                        .iter()
                        .map(|f| ftp_features(&warp_sequence(&p.atoms, f, WarpMode::Intra, &settings.registration)?, &settings.ftp))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            svm_train_ova_per_class(&per_class, &labels, l, &settings.svm)?
        }
    };
    Ok((model, skipped))
}

/// Predictions for a fold's test sequences: `(true label, predicted)` for
/// every usable sequence, plus the number skipped.
pub fn test_fold(model: &FoldModel, test: &[Tagged]) -> Result<(Vec<(usize, usize)>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for t in test {
        let label = t.seq.label.ok_or_else(|| Error::data(format!("test sequence {} has no label", t.seq.instance_id)))?;
        match preprocess_sequence(t.seq, &model.normalization) {
            Ok(pre) => {
                let feats = model.encoder.encode(&pre)?;
                let (pred, _) = svm_predict(&model.svm, &model.feature_variants(&feats)?)?;
                out.push((label, pred));
            }
            Err(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub name: String,
    pub train_count: usize,
    pub test_count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub name: String,
    pub class_names: Vec<String>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    /// 0 for a class that is never predicted.
    pub precision: Vec<f64>,
    /// 0 for a class without test instances.
    pub recall: Vec<f64>,
    pub accuracy: f64,
    pub test_count: u64,
    pub skipped_train: usize,
    pub skipped_test: usize,
    pub folds: Vec<FoldSummary>,
}

impl SubsetReport {
    pub fn from_confusion(name: String, class_names: Vec<String>, confusion: Vec<Vec<u64>>) -> Self {
        let l = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..l).map(|k| confusion[k][k]).sum();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        SubsetReport {
            name,
            class_names,
            precision: (0..l).map(|k| ratio(confusion[k][k], (0..l).map(|r| confusion[r][k]).sum())).collect(),
            recall: (0..l).map(|k| ratio(confusion[k][k], confusion[k].iter().sum())).collect(),
            accuracy: ratio(trace, total),
            test_count: total,
            confusion,
            skipped_train: 0,
            skipped_test: 0,
            folds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub variant: Variant,
    pub registration: RegistrationMethod,
    /// Mean over subsets.
    pub accuracy: f64,
    pub subsets: Vec<SubsetReport>,
    pub config: MasterConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::config(format!("unknown report format {other:?}"))),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn emit_report(report: &RunReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report)?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut s = String::new();
            writeln!(s, "variant,{}", report.variant.name()).ok();
            writeln!(s, "accuracy,{}", report.accuracy).ok();
            for sub in &report.subsets {
                writeln!(s).ok();
                writeln!(s, "subset,{}", csv_field(&sub.name)).ok();
                writeln!(s, "accuracy,{}", sub.accuracy).ok();
                let names: Vec<String> = sub.class_names.iter().map(|n| csv_field(n)).collect();
                writeln!(s, "true\\predicted,{}", names.join(",")).ok();
                for (name, row) in names.iter().zip(&sub.confusion) {
                    let cells: Vec<String> = row.iter().map(u64::to_string).collect();
                    writeln!(s, "{name},{}", cells.join(",")).ok();
                }
                let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
                writeln!(s, "precision,{}", join(&sub.precision)).ok();
                writeln!(s, "recall,{}", join(&sub.recall)).ok();
            }
            Ok(s.into_bytes())
        }
    }
}

pub fn parse_report(text: &str) -> Result<RunReport> {
    Ok(serde_json::from_str(text)?)
}

/// Sequences of one class subset, relabelled to `1..=subset.len()`, and the
/// matching metadata.
pub fn restrict_to_subset(dataset: &[ActionSequence], meta: &DatasetMeta, subset: &ClassSubset) -> Result<(Vec<ActionSequence>, DatasetMeta)> {
    for &c in &subset.classes {
        if c == 0 || c > meta.category_count {
            return Err(Error::config(format!("subset {} names class {c} outside 1..={}", subset.name, meta.category_count)));
        }
    }
    let data = dataset
        .iter()
        .filter_map(|s| {
            let pos = subset.classes.iter().position(|&c| Some(c) == s.label)?;
            Some(ActionSequence {
                label: Some(pos + 1),
                ..s.clone()
            })
        })
        .collect::<Vec<_>>();
    let mut sub_meta = meta.clone();
    sub_meta.category_names = subset.classes.iter().map(|&c| meta.category_names[c - 1].clone()).collect();
    sub_meta.category_count = subset.classes.len();
    sub_meta.sequence_count = data.len();
    Ok((data, sub_meta))
}

fn subsets_of(cfg: &MasterConfig, meta: &DatasetMeta) -> Vec<ClassSubset> {
    if cfg.protocol.subsets.is_empty() {
        vec![ClassSubset {
            name: "all".into(),
            classes: (1..=meta.category_count).collect(),
        }]
    } else {
        cfg.protocol.subsets.clone()
    }
}

/// Trained models of one run, by subset and fold.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub subsets: Vec<(String, Vec<(Fold, FoldModel)>)>,
}

fn fold_plan(cfg: &MasterConfig, data: &[ActionSequence], subset: &str) -> Result<Vec<(Fold, u64)>> {
    let folds = split_protocol(data, &cfg.protocol, derive_seed(cfg.seed, "protocol", 0))?;
    Ok(folds
        .into_iter()
        .enumerate()
        .map(|(i, mut f)| {
            if cfg.pipeline.resubstitution {
                f.test = f.train.clone();
            }
            (f, derive_seed(cfg.seed, &format!("{subset}/fold"), i as u64))
        })
        .collect())
}

fn tagged<'a>(data: &'a [ActionSequence], idx: &[usize], role: Role) -> Vec<Tagged<'a>> {
    idx.iter().map(|&i| Tagged { index: i, role, seq: &data[i] }).collect()
}

/// Trains and evaluates every fold of every subset.
pub fn run_pipeline(dataset: &[ActionSequence], meta: &DatasetMeta, cfg: &MasterConfig) -> Result<(RunReport, RunArtifacts)> {
    cfg.validate()?;
    let mut subsets = Vec::new();
    let mut artifacts = Vec::new();
    for subset in subsets_of(cfg, meta) {
        let (data, sub_meta) = restrict_to_subset(dataset, meta, &subset)?;
        let l = sub_meta.category_count;
        let mut confusion = vec![vec![0u64; l]; l];
        let mut folds = Vec::new();
        let mut fold_models = Vec::new();
        let (mut skipped_train, mut skipped_test) = (0, 0);
        for (fold, seed) in fold_plan(cfg, &data, &subset.name)? {
            let settings = FoldSettings::derive(cfg, seed);
            let (model, sk) = train_fold(&tagged(&data, &fold.train, Role::Train), &sub_meta, &settings)
                .map_err(|e| Error::data(format!("subset {} fold {}: {e}", subset.name, fold.name)))?;
            skipped_train += sk;
            let (pairs, sk) = test_fold(&model, &tagged(&data, &fold.test, Role::Test))?;
            skipped_test += sk;
            for &(y, p) in &pairs {
                confusion[y - 1][p - 1] += 1;
            }
            let correct = pairs.iter().filter(|(y, p)| y == p).count();
            folds.push(FoldSummary {
                name: fold.name.clone(),
                train_count: fold.train.len(),
                test_count: pairs.len(),
                accuracy: if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 },
            });
            fold_models.push((fold, model));
        }
        let mut rep = SubsetReport::from_confusion(subset.name.clone(), sub_meta.category_names.clone(), confusion);
        rep.skipped_train = skipped_train;
        rep.skipped_test = skipped_test;
        rep.folds = folds;
        subsets.push(rep);
        artifacts.push((subset.name, fold_models));
    }
    let accuracy = subsets.iter().map(|s| s.accuracy).sum::<f64>() / subsets.len() as f64;
    Ok((
        RunReport {
            version: REPORT_VERSION,
            variant: cfg.variant,
            registration: cfg.registration.method,
            accuracy,
            subsets,
            config: cfg.clone(),
        },
        RunArtifacts { subsets: artifacts },
    ))
}

/// Test-only pass with previously trained fold models; reproduces the
/// report of the run that produced them.
pub fn evaluate_pipeline(dataset: &[ActionSequence], meta: &DatasetMeta, cfg: &MasterConfig, artifacts: &RunArtifacts) -> Result<RunReport> {
    let mut subsets = Vec::new();
    for subset in subsets_of(cfg, meta) {
        let (data, sub_meta) = restrict_to_subset(dataset, meta, &subset)?;
        let models = artifacts
            .subsets
            .iter()
            .find(|(n, _)| *n == subset.name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::data(format!("no trained models for subset {}", subset.name)))?;
        let l = sub_meta.category_count;
        let mut confusion = vec![vec![0u64; l]; l];
        let mut folds = Vec::new();
        let mut skipped_test = 0;
        let plan = fold_plan(cfg, &data, &subset.name)?;
        if plan.len() != models.len() {
            return Err(Error::data(format!("subset {}: {} folds planned, {} trained", subset.name, plan.len(), models.len())));
        }
        for ((fold, _), (stored, model)) in plan.iter().zip(models) {
            if fold.test != stored.test {
                return Err(Error::data(format!("fold {} does not match the trained split", fold.name)));
            }
            check_dim_classes(model, l)?;
            let (pairs, sk) = test_fold(model, &tagged(&data, &fold.test, Role::Test))?;
            skipped_test += sk;
            for &(y, p) in &pairs {
                confusion[y - 1][p - 1] += 1;
            }
            let correct = pairs.iter().filter(|(y, p)| y == p).count();
            folds.push(FoldSummary {
                name: fold.name.clone(),
                train_count: fold.train.len(),
                test_count: pairs.len(),
                accuracy: if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 },
            });
        }
        let mut rep = SubsetReport::from_confusion(subset.name.clone(), sub_meta.category_names.clone(), confusion);
        rep.skipped_test = skipped_test;
        rep.folds = folds;
        subsets.push(rep);
    }
    let accuracy = subsets.iter().map(|s| s.accuracy).sum::<f64>() / subsets.len() as f64;
    Ok(RunReport {
        version: REPORT_VERSION,
        variant: cfg.variant,
        registration: cfg.registration.method,
        accuracy,
        subsets,
        config: cfg.clone(),
    })
}

fn check_dim_classes(model: &FoldModel, l: usize) -> Result<()> {
    if model.class_count != l {
        return Err(Error::data(format!("model has {} classes, subset has {l}", model.class_count)));
    }
    Ok(())
}

/// Fold metadata stored next to the fold's model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FoldRecord {
    fold: Fold,
    class_count: usize,
    normalization: NormalizationConfig,
    registration: RegistrationConfig,
    ftp: FtpConfig,
    dae_history: Vec<Vec<f64>>,
}

/// Writes `<dir>/<subset>/<fold>/{fold,encoder,phantoms,svm}.json` and
/// returns the written paths.
pub fn save_artifacts(dir: &Path, artifacts: &RunArtifacts) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (subset, folds) in &artifacts.subsets {
        for (fold, model) in folds {
            let d = dir.join(subset).join(&fold.name);
            std::fs::create_dir_all(&d)?;
            let record = FoldRecord {
                fold: fold.clone(),
                class_count: model.class_count,
                normalization: model.normalization.clone(),
                registration: model.registration.clone(),
                ftp: model.ftp.clone(),
                dae_history: model.dae_history.clone(),
            };
            let files: [(&str, String); 4] = [
                ("fold.json", serde_json::to_string(&record)?),
                ("encoder.json", serde_json::to_string(&model.encoder)?),
                ("phantoms.json", serde_json::to_string(&model.phantoms)?),
                ("svm.json", model.svm.to_json()?),
            ];
            for (name, body) in files {
                let p = d.join(name);
                std::fs::write(&p, body)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::BadPath { path: path.to_path_buf(), msg: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| Error::BadPath { path: path.to_path_buf(), msg: e.to_string() })
}

/// Reads back what [`save_artifacts`] wrote, for the subsets and folds the
/// config implies.
pub fn load_artifacts(dir: &Path, dataset: &[ActionSequence], meta: &DatasetMeta, cfg: &MasterConfig) -> Result<RunArtifacts> {
    let mut subsets = Vec::new();
    for subset in subsets_of(cfg, meta) {
        let (data, _) = restrict_to_subset(dataset, meta, &subset)?;
        let mut folds = Vec::new();
        for (fold, _) in fold_plan(cfg, &data, &subset.name)? {
            let d = dir.join(&subset.name).join(&fold.name);
            let record: FoldRecord = read_json(&d.join("fold.json"))?;
            let encoder: Encoder = read_json(&d.join("encoder.json"))?;
            if let Encoder::Dae(m) = &encoder {
                StackedModel::from_json(&serde_json::to_string(m)?)?;
            }
            let phantoms: Vec<PhantomTemplate> = read_json(&d.join("phantoms.json"))?;
            let svm_text = std::fs::read_to_string(d.join("svm.json"))?;
            let svm = SvmModel::from_json(&svm_text)?;
            folds.push((
                record.fold,
                FoldModel {
                    class_count: record.class_count,
                    normalization: record.normalization,
                    encoder,
                    registration: record.registration,
                    ftp: record.ftp,
                    phantoms,
                    svm,
                    dae_history: record.dae_history,
                },
            ));
        }
        subsets.push((subset.name.clone(), folds));
    }
    Ok(RunArtifacts { subsets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestoreOptions {
    /// Probability of dropping each non-hip joint.
    pub q: f64,
    /// Gaussian noise added to every present coordinate, in normalized units.
    pub sigma: f64,
}

impl Default for RestoreOptions {
    fn default() -> Self {
        RestoreOptions { q: 0.2, sigma: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreReport {
    pub options: RestoreOptions,
    pub test_sequences: usize,
    /// Mean squared error in the autoencoder's scaled input space.
    pub corrupted_mse: f64,
    pub restored_mse: f64,
    /// Restoration of the clean input, for reference.
    pub clean_reconstruction_mse: f64,
    /// Per-example skeleton reconstruction loss on the training frames.
    pub train_reconstruction_mse: f64,
    pub dae_history: Vec<Vec<f64>>,
}

/// Outputs of [`restore_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct RestoreOutcome {
    pub report: RestoreReport,
    pub clean: Vec<ActionSequence>,
    pub corrupted: Vec<ActionSequence>,
    pub restored: Vec<ActionSequence>,
}

fn corrupt_sequence(seq: &ActionSequence, meta: &DatasetMeta, opts: &RestoreOptions, rng: &mut crate::rng::Rng) -> Result<ActionSequence> {
    let noise = Normal::new(0.0, opts.sigma).map_err(|e| Error::config(e.to_string()))?;
    let keep = [meta.hip_joint_index, meta.left_hip_index, meta.right_hip_index];
    let mut out = seq.clone();
    for f in &mut out.frames {
        for (j, joint) in f.joints.iter_mut().enumerate() {
            if joint.is_missing {
                continue;
            }
            if !keep.contains(&j) && rng.gen_bool(opts.q) {
                *joint = crate::skeleton_io::Joint::missing();
                continue;
            }
            let p = joint.position();
            *joint = joint.with_position([0, 1, 2].map(|k| p[k] + noise.sample(rng)));
        }
    }
    Ok(out)
}

fn scaled_mse(model: &StackedModel, a: &[ActionSequence], b: &[ActionSequence]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (sa, sb) in a.iter().zip(b) {
        for (fa, fb) in sa.frames.iter().zip(&sb.frames) {
            let (xa, xb) = (model.scaler.scale_frame(fa)?, model.scaler.scale_frame(fb)?);
            total += xa.iter().zip(&xb).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
            n += xa.len();
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Denoising experiment: trains the stacked autoencoder on the first fold's
/// training split, corrupts the preprocessed test sequences by dropping
/// joints and adding noise, and restores them.
pub fn restore_experiment(dataset: &[ActionSequence], meta: &DatasetMeta, cfg: &MasterConfig, opts: &RestoreOptions) -> Result<RestoreOutcome> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&opts.q) || !(opts.sigma >= 0.0) {
        return Err(Error::config("restore q must lie in [0, 1] and sigma must be >= 0"));
    }
    let (fold, seed) = fold_plan(cfg, dataset, "restore")?
        .into_iter()
        .next()
        .ok_or_else(|| Error::data("protocol produced no folds"))?;
    let mut settings = FoldSettings::derive(cfg, seed);
    settings.variant = if cfg.variant == Variant::Jp { Variant::DaeCtc } else { cfg.variant };
    settings.registration.method = RegistrationMethod::None;
    let (model, _) = train_fold(&tagged(dataset, &fold.train, Role::Train), meta, &settings)?;
    let Encoder::Dae(dae) = &model.encoder else {
        unreachable!("restore always trains an autoencoder")
    };
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "restore", 0));
    let mut clean = Vec::new();
    for &i in &fold.test {
        if let Ok(s) = preprocess_sequence(&dataset[i], &model.normalization) {
            clean.push(s);
        }
    }
    if clean.is_empty() {
        return Err(Error::data("no usable test sequence to restore"));
    }
    let corrupted = clean.iter().map(|s| corrupt_sequence(s, meta, opts, &mut rng)).collect::<Result<Vec<_>>>()?;
    let restored = corrupted.iter().map(|s| crate::dae::restore_sequence(dae, s)).collect::<Result<Vec<_>>>()?;
    let clean_restored = clean.iter().map(|s| crate::dae::restore_sequence(dae, s)).collect::<Result<Vec<_>>>()?;
    let train_pre: Vec<ActionSequence> = fold
        .train
        .iter()
        .filter_map(|&i| preprocess_sequence(&dataset[i], &model.normalization).ok())
        .collect();
    let train_restored = train_pre.iter().map(|s| crate::dae::restore_sequence(dae, s)).collect::<Result<Vec<_>>>()?;
    let report = RestoreReport {
        options: opts.clone(),
        test_sequences: clean.len(),
        corrupted_mse: scaled_mse(dae, &corrupted, &clean)?,
        restored_mse: scaled_mse(dae, &restored, &clean)?,
        clean_reconstruction_mse: scaled_mse(dae, &clean_restored, &clean)?,
        train_reconstruction_mse: scaled_mse(dae, &train_restored, &train_pre)?,
        dae_history: model.dae_history.clone(),
    };
    Ok(RestoreOutcome {
        report,
        clean,
        corrupted,
        restored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_synthetic(subjects: usize) -> (Vec<ActionSequence>, DatasetMeta) {
        generate_synthetic(&SyntheticSpec {
            class_count: 3,
            sequences_per_class: 6,
            subject_count: subjects,
            ..Default::default()
        })
        .unwrap()
    }

    fn fast_config() -> MasterConfig {
        let mut cfg = MasterConfig::default();
        cfg.train.hidden_sizes = Some(vec![8, 10]);
        cfg.train.dae.epochs = 2;
        cfg.train.dae.finetune_epochs = 1;
        cfg.train.dae.learning_rate = 0.5;
        cfg.preprocess.target_length = 28;
        cfg.preprocess.chunk_count = 7;
        cfg.registration.max_iters = 3;
        cfg.svm.epochs = 10;
        cfg.protocol.kind = ProtocolKind::HalfSubjects;
        cfg.dataset.synthetic = Some(SyntheticSpec {
            class_count: 3,
            sequences_per_class: 6,
            subject_count: 4,
            ..Default::default()
        });
        cfg
    }

    #[test]
    fn loso_folds() {
        let (data, _) = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let spec = ProtocolSpec { kind: ProtocolKind::LeaveOneSubjectOut, ..Default::default() };
        let folds = split_protocol(&data, &spec, 0).unwrap();
        assert_eq!(folds.len(), 10);
        for f in &folds {
            let test_subjects: BTreeSet<u32> = f.test.iter().map(|&i| data[i].subject_id).collect();
            assert_eq!(test_subjects.len(), 1);
            assert_eq!(f.train.len() + f.test.len(), data.len());
            assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
    }

    #[test]
    fn cross_subject_split() {
        let (data, _) = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let folds = split_protocol(&data, &ProtocolSpec::default(), 0).unwrap();
        let test: BTreeSet<u32> = folds[0].test.iter().map(|&i| data[i].subject_id).collect();
        assert_eq!(test, BTreeSet::from([2, 4, 6, 8, 10]));
        let bad = ProtocolSpec { train_subjects: vec![1, 42], ..Default::default() };
        assert!(matches!(split_protocol(&data, &bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn half_subjects_is_seeded() {
        let (data, _) = small_synthetic(5);
        let spec = ProtocolSpec { kind: ProtocolKind::HalfSubjects, ..Default::default() };
        let a = split_protocol(&data, &spec, 7).unwrap();
        assert_eq!(a, split_protocol(&data, &spec, 7).unwrap());
        let train: BTreeSet<u32> = a[0].train.iter().map(|&i| data[i].subject_id).collect();
        assert_eq!(train.len(), 3);
    }

    #[test]
    fn variants_switch_heads() {
        let base = TrainConfig::default();
        assert_eq!((Variant::Dae.apply(&base).lambda, Variant::Dae.apply(&base).beta), (0.0, 0.0));
        assert_eq!(Variant::DaeCc.apply(&base).beta, 0.0);
        assert_eq!(Variant::DaeCc.apply(&base).lambda, base.lambda);
        assert_eq!(Variant::DaeTc.apply(&base).lambda, 0.0);
        assert_eq!(Variant::DaeCtc.apply(&base), base);
        for v in ["dae", "dae_cc", "dae_tc", "dae_ctc", "jp"] {
            assert_eq!(v.parse::<Variant>().unwrap().name(), v);
        }
    }

    #[test]
    fn perfect_report_is_diagonal() {
        let confusion = vec![vec![10, 0, 0], vec![0, 10, 0], vec![0, 0, 10]];
        let r = SubsetReport::from_confusion("all".into(), vec!["a".into(), "b".into(), "c".into()], confusion.clone());
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, vec![1.0; 3]);
        let csv = emit_report(
            &RunReport {
                version: REPORT_VERSION,
                variant: Variant::DaeCtc,
                registration: RegistrationMethod::Lwsr,
                accuracy: 1.0,
                subsets: vec![r],
                config: MasterConfig::default(),
            },
            ReportFormat::Csv,
        )
        .unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.contains("true\\predicted,a,b,c\na,10,0,0\nb,0,10,0\nc,0,0,10\n"));
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = MasterConfig::default();
        let back: MasterConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: MasterConfig = serde_json::from_str(r#"{"seed": 4, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(partial.train.dae.epochs, 3);
        assert_eq!(partial.train.dae.lambda, 1.5);
        assert_eq!(partial.hidden_sizes(), vec![200, 400, 800]);
        assert!(serde_json::from_str::<MasterConfig>(r#"{"sed": 4}"#).is_err());
    }

    #[test]
    #[should_panic(expected = "leak guard")]
    fn leak_guard_catches_test_sequences() {
        let (data, meta) = small_synthetic(2);
        let mut items = tagged(&data, &[0, 1, 2], Role::Train);
        items[1].role = Role::Test;
        let settings = FoldSettings::derive(&fast_config(), 0);
        let _ = train_fold(&items, &meta, &settings);
    }

    #[test]
    fn tiny_run_is_deterministic_and_reloadable() {
        let cfg = fast_config();
        let (data, meta) = load_dataset(&cfg.dataset).unwrap();
        let (r1, a1) = run_pipeline(&data, &meta, &cfg).unwrap();
        let (r2, _) = run_pipeline(&data, &meta, &cfg).unwrap();
        assert_eq!(emit_report(&r1, ReportFormat::Json).unwrap(), emit_report(&r2, ReportFormat::Json).unwrap());
        let sub = &r1.subsets[0];
        let trace: u64 = (0..3).map(|k| sub.confusion[k][k]).sum();
        assert_eq!(sub.accuracy, trace as f64 / sub.test_count as f64);
        let parsed = parse_report(std::str::from_utf8(&emit_report(&r1, ReportFormat::Json).unwrap()).unwrap()).unwrap();
        assert_eq!(parsed, r1);

        let dir = tempfile::tempdir().unwrap();
        save_artifacts(dir.path(), &a1).unwrap();
        let loaded = load_artifacts(dir.path(), &data, &meta, &cfg).unwrap();
        assert_eq!(evaluate_pipeline(&data, &meta, &cfg, &loaded).unwrap(), r1);
    }

    #[test]
    fn every_mode_runs() {
        let base = fast_config();
        let (data, meta) = load_dataset(&base.dataset).unwrap();
        for method in [RegistrationMethod::Dtw, RegistrationMethod::None] {
            let mut cfg = base.clone();
            cfg.registration.method = method;
            let (r, _) = run_pipeline(&data, &meta, &cfg).unwrap();
            assert_eq!(r.registration, method);
        }
        let mut cfg = base.clone();
        cfg.variant = Variant::Jp;
        cfg.pipeline.svm_training = SvmTraining::PerPhantom;
        let (r, a) = run_pipeline(&data, &meta, &cfg).unwrap();
        assert!(r.accuracy.is_finite());
        assert!(matches!(a.subsets[0].1[0].1.encoder, Encoder::Jp(_)));
    }

    #[test]
    fn subsets_relabel() {
        let (data, meta) = small_synthetic(2);
        let subset = ClassSubset { name: "s".into(), classes: vec![3, 1] };
        let (sub, sub_meta) = restrict_to_subset(&data, &meta, &subset).unwrap();
        assert_eq!(sub.len(), 12);
        assert_eq!(sub_meta.category_names, vec![meta.category_names[2].clone(), meta.category_names[0].clone()]);
        assert!(sub.iter().all(|s| s.label == Some(1) || s.label == Some(2)));
        let bad = ClassSubset { name: "x".into(), classes: vec![1, 9] };
        assert!(restrict_to_subset(&data, &meta, &bad).is_err());
    }
}
