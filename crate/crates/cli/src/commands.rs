//! Subcommand arguments and their implementations.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use hierembed::embed::{self, EdgeEval, NegativePolicy, TrainConfig};
use hierembed::export::{self, ProjectionMethod};
use hierembed::heads::{self, ClassifierConfig, HeadKind, ImbalancePolicy, ThresholdMode};
use hierembed::hierarchy::{self, Hierarchy};
use hierembed::io;
use hierembed::joint::{self, FeatureMatrix, InstanceSplit, JointConfig};
use hierembed::optim::OptimizerKind;
use hierembed::synth::{self, SynthConfig};
use hierembed::{ConeParams, Error, Geometry, Result};

pub const NODES: &str = "nodes.tsv";
pub const EDGES: &str = "edges.tsv";
pub const FEATURES: &str = "features.bin";
pub const INSTANCES: &str = "instances.tsv";
pub const INSTANCE_LEVELS: &str = "instances-levels.tsv";
pub const INSTANCE_SPLIT: &str = "instance_split.tsv";

fn load_tree(dir: &Path) -> Result<Hierarchy> {
    io::read_hierarchy(&dir.join(NODES), &dir.join(EDGES))
}

fn load_features(dir: &Path) -> Result<FeatureMatrix> {
    io::read_features(&dir.join(FEATURES), &dir.join(INSTANCES))
}

fn log(msg: impl AsRef<str>) {
    eprintln!("[hierembed] {}", msg.as_ref());
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenTreeArgs {
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 3)]
    pub branching: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_tree(a: &GenTreeArgs) -> Result<()> {
    let h = hierarchy::generate_synthetic_tree(a.levels, a.branching)?;
    io::write_hierarchy(&h, &a.out.join(NODES), &a.out.join(EDGES))?;
    log(format!("wrote a tree with {} nodes on {} levels", h.len(), h.n_levels()));
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    /// Directory with nodes.tsv and edges.tsv.
    #[arg(long)]
    pub tree: PathBuf,
    /// Fraction of the remaining non-basic edges added to train.
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let h = load_tree(&a.tree)?;
    let closure = h.transitive_closure()?;
    let s = hierarchy::split_edges(&h, a.fraction, a.seed)?;
    let s = hierarchy::augment_eval_negatives(s, &closure, h.len(), a.seed)?;
    io::write_split(&h, &s, &a.out)?;
    log(format!(
        "train {} / val {} / test {} positives, {} + {} negatives",
        s.train.len(),
        s.val.len(),
        s.test.len(),
        s.val_neg.len(),
        s.test_neg.len()
    ));
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainLabelsArgs {
    #[arg(long)]
    pub tree: PathBuf,
    /// Directory written by `split`.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "ec")]
    pub geometry: Geometry,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Aperture constant K.
    #[arg(long, default_value_t = 0.1)]
    pub aperture_k: f64,
    /// Margin α.
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Train once per margin and keep the best validation F1.
    #[arg(long, value_delimiter = ',')]
    pub margin_sweep: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    /// adam or rsgd; defaults to rsgd for hc and adam otherwise.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    /// Corruptions per level and side (pick-per-level) or per side (uniform).
    #[arg(long, default_value_t = 1)]
    pub negatives: usize,
    /// Draw negatives uniformly instead of one per level.
    #[arg(long)]
    pub uniform_negatives: bool,
    /// Squared order-embedding energy.
    #[arg(long)]
    pub squared: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainLabelsArgs {
    fn config(&self) -> TrainConfig {
        let mut c = TrainConfig::new(self.geometry, self.dim);
        c.k = self.aperture_k;
        c.squared = self.squared;
        c.margin = self.margin;
        c.lr = self.lr;
        c.epochs = self.epochs;
        c.batch_size = self.batch_size;
        if let Some(o) = self.optimizer {
            c.optimizer = o;
        }
        c.negatives = if self.uniform_negatives {
            NegativePolicy::Uniform { per_side: self.negatives }
        } else {
            NegativePolicy::PickPerLevel { rounds: self.negatives }
        };
        c.seed = self.seed;
        c
    }
}

fn edge_row(name: &str, e: &EdgeEval) -> Vec<String> {
    [e.threshold, e.precision, e.recall, e.f1, e.accuracy, e.tpr, e.tnr]
        .iter()
        .fold(vec![name.to_string()], |mut r, v| {
            r.push(v.to_string());
            r
        })
}

const EDGE_HEADER: [&str; 8] = ["split", "threshold", "precision", "recall", "F1", "accuracy", "TPR", "TNR"];

pub fn train_labels(a: &TrainLabelsArgs) -> Result<()> {
    let h = load_tree(&a.tree)?;
    let closure = h.transitive_closure()?;
    let s = io::read_split(&h, &a.split, a.seed)?;
    let mut cfg = a.config();
    let out = if a.margin_sweep.is_empty() {
        embed::train_label_embeddings(&h, &s, &closure, &cfg)?
    } else {
        let (m, out) = embed::sweep_margin(&h, &s, &closure, &cfg, &a.margin_sweep)?;
        log(format!("margin sweep picked α = {m}"));
        cfg.margin = m;
        out
    };
    if let Some(last) = out.log.last() {
        log(format!("epoch {} loss {}", last.epoch, last.loss));
    }
    io::write_embedding(&a.out.join("labels.emb"), &h, &out.table)?;
    io::write_training_log(&a.out.join("train_log.csv"), &out.log)?;

    let params = cfg.cone_params()?;
    let mut rows = Vec::new();
    if !s.val.is_empty() && !s.val_neg.is_empty() {
        let val = embed::evaluate_edge_prediction(&out.table, &params, s.val.pairs(), &s.val_negative_edges())?;
        rows.push(edge_row("val", &val));
        if !s.test.is_empty() && !s.test_neg.is_empty() {
            let test = embed::evaluate_at_threshold(&out.table, &params, s.test.pairs(), &s.test_negative_edges(), val.threshold)?;
            log(format!("test F1 {} at validation threshold {}", test.f1, val.threshold));
            rows.push(edge_row("test", &test));
        }
    }
    io::write_csv(&a.out.join("edge_metrics.csv"), &EDGE_HEADER.map(String::from), &rows)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub tree: PathBuf,
    /// Label embedding file (EMB1).
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub embedding: Option<PathBuf>,
    /// Joint model file; only its label points are used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub aperture_k: f64,
    #[arg(long)]
    pub squared: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_labels(h: &Hierarchy, embedding: &Option<PathBuf>, model: &Option<PathBuf>, k: f64) -> Result<(hierembed::embed::EmbeddingTable, ConeParams)> {
    match (embedding, model) {
        (Some(e), _) => {
            let t = io::read_embedding(e, h)?;
            let p = ConeParams::new(t.geometry, k)?;
            Ok((t, p))
        }
        (None, Some(m)) => {
            let m = io::read_model(m, h)?;
            Ok((m.labels, m.params))
        }
        (None, None) => Err(Error::Inconsistent("an embedding or a model is required".into())),
    }
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let h = load_tree(&a.tree)?;
    let closure = h.transitive_closure()?;
    let (t, mut p) = load_labels(&h, &a.embedding, &a.model, a.aperture_k)?;
    p.squared = a.squared;
    let ev = joint::reconstruct_labels(&t, &p, &closure)?;
    log(format!("reconstruction TPR {} TNR {} F1 {}", ev.tpr, ev.tnr, ev.f1));
    io::write_reconstruction(&a.out.join("reconstruction.csv"), &ev)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenFeaturesArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub per_leaf: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_features(a: &GenFeaturesArgs) -> Result<()> {
    let h = load_tree(&a.tree)?;
    let cfg = SynthConfig {
        per_leaf: a.per_leaf,
        dim: a.dim,
        spread: a.spread,
        decay: a.decay,
        noise: a.noise,
        seed: a.seed,
    };
    let f = synth::gaussian_features(&h, &cfg)?;
    io::write_features(&a.out.join(FEATURES), &a.out.join(INSTANCES), &f)?;
    io::write_instance_levels(&a.out.join(INSTANCE_LEVELS), &h, &f)?;
    log(format!("wrote {} instances with {} features", f.len(), f.dim()));
    Ok(())
}

fn write_instance_split(path: &Path, f: &FeatureMatrix, s: &InstanceSplit) -> Result<()> {
    let mut tag = vec![""; f.len()];
    for (name, rows) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        for &r in rows.iter() {
            tag[r] = name;
        }
    }
    let rows: Vec<Vec<String>> = (0..f.len())
        .map(|r| vec![f.ids[r].to_string(), tag[r].to_string()])
        .collect();
    let mut w = String::from("instance_id\tsplit\n");
    for r in rows {
        w.push_str(&r.join("\t"));
        w.push('\n');
    }
    std::fs::write(path, w)?;
    Ok(())
}

fn read_instance_subset(path: &Path, f: &FeatureMatrix, subset: &str) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let row_of: std::collections::HashMap<u32, usize> = f.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let mut it = line.split('\t');
        let id: u32 = it
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad line '{line}'", path.display())))?;
        if it.next().map(str::trim) == Some(subset) {
            rows.push(
                *row_of
                    .get(&id)
                    .ok_or_else(|| Error::Inconsistent(format!("unknown instance {id}")))?,
            );
        }
    }
    rows.sort_unstable();
    Ok(rows)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainJointArgs {
    #[arg(long)]
    pub tree: PathBuf,
    /// Directory with features.bin and instances.tsv.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "ec")]
    pub geometry: Geometry,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub aperture_k: f64,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Label learning rate; 1e-2 for ec/oe and 1e-4 for hc by default.
    #[arg(long)]
    pub lr_labels: Option<f64>,
    /// Map learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr_im: f64,
    /// 200 for ec/oe and 100 for hc by default.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub negatives: usize,
    /// Make half of the corrupted children instances.
    #[arg(long)]
    pub balance_negatives: bool,
    #[arg(long, default_value_t = 0.01)]
    pub init_std: f64,
    /// Start label points from a label-only embedding file.
    #[arg(long)]
    pub init_from_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainJointArgs {
    fn config(&self) -> JointConfig {
        let mut c = JointConfig::new(self.geometry, self.dim);
        c.k = self.aperture_k;
        c.margin = self.margin;
        if let Some(v) = self.lr_labels {
            c.lr_labels = v;
        }
        c.lr_im = self.lr_im;
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        c.batch_size = self.batch_size;
        c.negatives = NegativePolicy::PickPerLevel { rounds: self.negatives };
        c.balance_negatives = self.balance_negatives;
        c.init_std = self.init_std;
        c.seed = self.seed;
        c
    }
}

pub fn train_joint(a: &TrainJointArgs) -> Result<()> {
    let h = load_tree(&a.tree)?;
    let closure = h.transitive_closure()?;
    let f = load_features(&a.features)?;
    let cfg = a.config();
    let init = match &a.init_from_labels {
        Some(p) => Some(io::read_embedding(p, &h).map_err(|e| match e {
            Error::Io(io) => Error::Inconsistent(format!("label initialization {}: {io}", p.display())),
            other => other,
        })?),
        None => None,
    };
    let s = joint::split_instances(f.len(), a.seed);
    let (model, log_rows) = joint::train_joint(&h, &closure, &f, &s.train, &cfg, init)?;
    io::write_model(&a.out.join("model.bin"), &h, &model)?;
    write_instance_split(&a.out.join(INSTANCE_SPLIT), &f, &s)?;
    let rows: Vec<Vec<String>> = log_rows
        .iter()
        .map(|l| vec![l.epoch.to_string(), l.loss.to_string()])
        .collect();
    io::write_csv(&a.out.join("train_log.csv"), &["epoch".into(), "loss".into()], &rows)?;

    let mut evals = Vec::new();
    for (name, rows) in [("val", &s.val), ("test", &s.test)] {
        if !rows.is_empty() {
            evals.push((name, joint::evaluate_joint(&model, &h, &f, rows)?));
        }
    }
    for (name, e) in &evals {
        log(format!("{name}: m-F1 {} per level {:?}", e.m_f1, e.level_accuracy));
    }
    let refs: Vec<(&str, &joint::JointEval)> = evals.iter().map(|(n, e)| (*n, e)).collect();
    io::write_joint_metrics(&a.out.join("metrics.csv"), &refs)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Joint model file.
    #[arg(long)]
    pub model: PathBuf,
    /// instance_split.tsv written by train-joint; all instances when absent.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    /// Subset of the split file to classify.
    #[arg(long, default_value = "test")]
    pub subset: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn classify(a: &ClassifyArgs) -> Result<()> {
    let h = load_tree(&a.tree)?;
    let f = load_features(&a.features)?;
    let model = io::read_model(&a.model, &h)?;
    let rows = match &a.split_file {
        Some(p) => read_instance_subset(p, &f, &a.subset)?,
        None => (0..f.len()).collect(),
    };
    let preds = joint::classify_all(&model, &h, &f, &rows)?;
    io::write_predictions(&a.out.join("predictions.tsv"), &h, &f, &preds)?;
    log(format!("{} predictions for {} instances", preds.len(), rows.len()));
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Heads to train (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "hab,plc,mc,mplc,hs")]
    pub head: Vec<HeadKind>,
    #[arg(long, default_value = "none")]
    pub imbalance: ImbalancePolicy,
    #[arg(long, default_value = "ofadb")]
    pub threshold_mode: ThresholdMode,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub init_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train_classifier(a: &TrainClassifierArgs) -> Result<()> {
    let h = load_tree(&a.tree)?;
    let f = load_features(&a.features)?;
    let s = joint::split_instances(f.len(), a.seed);
    let layout = heads::HeadLayout::new(&h);
    let paths = heads::instance_paths(&h, &f)?;
    let mut evals = Vec::new();
    for &kind in &a.head {
        let cfg = ClassifierConfig {
            kind,
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            init_std: a.init_std,
            imbalance: a.imbalance,
            threshold_mode: a.threshold_mode,
            seed: a.seed,
        };
        let (clf, log_rows) = heads::train_linear_classifier(&h, &f, &s, &cfg)?;
        let mut header = vec!["epoch".to_string(), "loss".to_string()];
        header.extend((1..=h.n_levels()).map(|l| format!("val_L{l}")));
        let rows: Vec<Vec<String>> = log_rows
            .iter()
            .map(|l| {
                let mut r = vec![l.epoch.to_string(), l.loss.to_string()];
                r.extend(l.val_level_f1.iter().map(|v| v.to_string()));
                r.resize(header.len(), String::new());
                r
            })
            .collect();
        io::write_csv(&a.out.join(format!("{kind}_log.csv")), &header, &rows)?;
        let eval_rows = if s.test.is_empty() { &s.train } else { &s.test };
        let ev = heads::evaluate_classifier(&clf, &layout, &f, eval_rows, &paths)?;
        log(format!("{kind}: m-F1 {} per level {:?}", ev.m_f1, ev.level_f1));
        evals.push((kind.name(), ev));
    }
    let refs: Vec<(&str, &heads::ClassifierEval)> = evals.iter().map(|(n, e)| (*n, e)).collect();
    io::write_classifier_metrics(&a.out.join("metrics.csv"), &refs)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Export2dArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub embedding: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// raw2d or pca.
    #[arg(long, default_value = "pca")]
    pub method: ProjectionMethod,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn export_2d(a: &Export2dArgs) -> Result<()> {
    let h = load_tree(&a.tree)?;
    let (t, _) = load_labels(&h, &a.embedding, &a.model, hierembed::geometry::DEFAULT_K)?;
    let pts = export::export_2d(&t, &h, a.method)?;
    let mut text = String::from("node_id\tx\ty\tlevel\n");
    for p in pts {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", p.node_id, p.x, p.y, p.level));
    }
    std::fs::write(a.out.join("points_2d.tsv"), text)?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConvertEthecArgs {
    /// ETHEC metadata JSON (object keyed by image, or a list of records).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
