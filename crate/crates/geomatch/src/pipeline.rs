//! Training and evaluation stages over a workspace directory.
//!
//! ```text
//! corpus/                        objects.jl pois.jl queries.jl splits.jl manifest.json
//! gc/                            pois.jl queries.jl
//! geo/                           encoder.ckpt trace.jl
//! mm/<gc|text>/                  model.ckpt vocab.txt trace.jl
//! ft/<model>/                    model.ckpt vocab.txt trace.jl report.json
//! eval/<model>-<split>/          metrics.json
//! rank/<model>-<split>/          scores.jl
//! retrieve/<model>-<split>/      scores.jl metrics.json
//! ablate/<model>-<split>-<axis>/ metrics.json
//! ```
//!
//! Every stage directory also gets the resolved `config.toml`. A stage
//! refuses to start while another holds the workspace lock, and fails
//! naming the first missing upstream file. Outputs are only written after
//! a stage completes, so a failed stage leaves earlier checkpoints intact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use geomatch_core::bench::generate_benchmark;
use geomatch_core::eval::{
    ablation_slice, run_ranking, run_retrieval, slice_by_query_type, AblationAxis, Metrics, RankingResult,
    RetrievalPool,
};
use geomatch_core::gcfeat::{corpus_map_bounds, GcConfig, GcRecord};
use geomatch_core::geoenc::{train_geo_encoder, GeoEncoder, GeoEncoderConfig, GeoTraceRow, GeoTrainConfig};
use geomatch_core::matching::{
    finetune as run_finetune, pretrain_round_robin, FinetuneConfig, FinetuneReport, FrozenGeo, GcUse, GcVectors,
    Head, InteractionConfig, InteractionModel, MatchDataset, PretrainConfig, PretrainExample, PretrainTask,
    PretrainTraceRow, Scorer, Tokenizer,
};
use geomatch_core::nn::{ParameterStore, TransformerConfig};
use geomatch_core::{CorpusBundle, GeoPoint, SpatialIndex};
use serde::Serialize;

use crate::config::{Init, RunConfig};
use crate::corpus::{self, Manifest};
use crate::error::{Error, Result};
use crate::gc_cache::{self, ExtractStats};
use crate::report::{MetricsBlock, MetricsReport, Slice};
use crate::{checkpoint, jsonl};

pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.ckpt";
pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRACE_FILE: &str = "trace.jl";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SCORES_FILE: &str = "scores.jl";
pub const LOCK_FILE: &str = ".lock";

/// Which pre-trained interaction model a variant starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MmVariant {
    /// All three tasks with the GC segment.
    Gc,
    /// Text-only masked language modeling.
    Text,
}

impl MmVariant {
    pub const fn as_str(self) -> &'static str {
        match self {
            MmVariant::Gc => "gc",
            MmVariant::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [MmVariant::Gc, MmVariant::Text].into_iter().find(|v| v.as_str() == s)
    }

    fn tasks(self) -> Vec<PretrainTask> {
        match self {
            MmVariant::Gc => PretrainTask::ALL.to_vec(),
            MmVariant::Text => vec![PretrainTask::MlmSingle],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// Query and POI GC.
    Gc,
    /// POI GC only.
    NoQueryGc,
    /// No GC at all.
    Text,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Gc, Variant::NoQueryGc, Variant::Text];

    pub const fn as_str(self) -> &'static str {
        match self {
            Variant::Gc => "gc",
            Variant::NoQueryGc => "noqgc",
            Variant::Text => "text",
        }
    }

    pub fn gc_use(self) -> GcUse {
        match self {
            Variant::Gc => GcUse::FULL,
            Variant::NoQueryGc => GcUse::POI_ONLY,
            Variant::Text => GcUse::NONE,
        }
    }

    pub fn pretrained(self) -> MmVariant {
        match self {
            Variant::Text => MmVariant::Text,
            _ => MmVariant::Gc,
        }
    }
}

/// A fine-tuned model, named `<head>-<variant>` with a `-scratch` suffix
/// when it skipped multi-modal pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModelSpec {
    pub head: Head,
    pub variant: Variant,
    pub from_scratch: bool,
}

impl ModelSpec {
    pub fn new(head: Head, variant: Variant) -> Self {
        Self {
            head,
            variant,
            from_scratch: false,
        }
    }

    pub fn name(&self) -> String {
        let head = self.head.as_str().to_ascii_lowercase();
        let scratch = if self.from_scratch { "-scratch" } else { "" };
        format!("{head}-{}{scratch}", self.variant.as_str())
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (rest, from_scratch) = match s.strip_suffix("-scratch") {
            Some(r) => (r, true),
            None => (s, false),
        };
        let (head, variant) = rest.split_once('-')?;
        Some(Self {
            head: Head::parse(head)?,
            variant: Variant::ALL.into_iter().find(|v| v.as_str() == variant)?,
            from_scratch,
        })
    }
}

/// Removes the workspace lock file when dropped.
#[derive(Debug)]
pub struct StageLock {
    path: PathBuf,
}

impl Drop for StageLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn gc_dir(&self) -> PathBuf {
        self.root.join("gc")
    }

    pub fn geo_dir(&self) -> PathBuf {
        self.root.join("geo")
    }

    pub fn mm_dir(&self, v: MmVariant) -> PathBuf {
        self.root.join("mm").join(v.as_str())
    }

    pub fn model_dir(&self, m: &ModelSpec) -> PathBuf {
        self.root.join("ft").join(m.name())
    }

    pub fn eval_dir(&self, m: &ModelSpec, split: &str) -> PathBuf {
        self.root.join("eval").join(format!("{}-{split}", m.name()))
    }

    pub fn rank_dir(&self, m: &ModelSpec, split: &str) -> PathBuf {
        self.root.join("rank").join(format!("{}-{split}", m.name()))
    }

    pub fn retrieve_dir(&self, m: &ModelSpec, split: &str) -> PathBuf {
        self.root.join("retrieve").join(format!("{}-{split}", m.name()))
    }

    pub fn ablate_dir(&self, m: &ModelSpec, split: &str, axis: AblationAxis) -> PathBuf {
        let axis = axis.as_str().to_ascii_lowercase();
        self.root.join("ablate").join(format!("{}-{split}-{axis}", m.name()))
    }

    /// Takes the workspace lock; fails if another stage holds it.
    pub fn lock(&self) -> Result<StageLock> {
        fs::create_dir_all(&self.root).map_err(Error::io(&self.root))?;
        let path = self.root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StageLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::Io { path, source: e }),
        }
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    jsonl::write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    jsonl::write_atomic(path, text.as_bytes())
}

fn write_vocab(dir: &Path, tok: &Tokenizer) -> Result<()> {
    let mut text = tok.vocab().join("\n");
    text.push('\n');
    jsonl::write_atomic(&dir.join(VOCAB_FILE), text.as_bytes())
}

fn read_vocab(dir: &Path) -> Result<Tokenizer> {
    let path = require(dir.join(VOCAB_FILE))?;
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    Ok(Tokenizer::from_vocab(text.lines().map(str::to_string).collect()))
}

/// Vocabulary over every POI text and the training queries.
fn build_tokenizer(bundle: &CorpusBundle) -> Tokenizer {
    Tokenizer::build(
        bundle
            .pois()
            .iter()
            .map(|p| p.text.as_str())
            .chain(bundle.split("train").into_iter().map(|q| q.text.as_str())),
    )
}

fn corpus_gc_config(cfg: &RunConfig, bundle: &CorpusBundle) -> Result<GcConfig> {
    let bounds = corpus_map_bounds(bundle).ok_or_else(|| Error::Config("corpus has no coordinates".into()))?;
    let gc = cfg.gc_config(bounds);
    gc.validate()?;
    Ok(gc)
}

/// Corpus plus, when asked for, the cached GC records.
struct Inputs {
    bundle: CorpusBundle,
    gc: GcConfig,
    poi_rec: BTreeMap<String, GcRecord>,
    query_rec: BTreeMap<String, GcRecord>,
}

impl Inputs {
    fn load(ws: &Workspace, cfg: &RunConfig, with_gc: bool) -> Result<Self> {
        let bundle = corpus::load_corpus(&ws.corpus_dir())?;
        let gc = corpus_gc_config(cfg, &bundle)?;
        let (poi_rec, query_rec) = if with_gc {
            (
                gc_cache::load_cache(&ws.gc_dir().join(gc_cache::POI_CACHE_FILE))?,
                gc_cache::load_cache(&ws.gc_dir().join(gc_cache::QUERY_CACHE_FILE))?,
            )
        } else {
            (BTreeMap::new(), BTreeMap::new())
        };
        Ok(Self {
            bundle,
            gc,
            poi_rec,
            query_rec,
        })
    }
}

struct Geo {
    store: ParameterStore,
    model: GeoEncoder,
}

impl Geo {
    fn register(cfg: &RunConfig, gc: &GcConfig) -> Result<Self> {
        let mut store = ParameterStore::new(cfg.seed);
        let mut gcfg = GeoEncoderConfig::new(gc, cfg.geo.layers, cfg.geo.hidden, cfg.geo.heads);
        gcfg.trunk.ffn_mult = cfg.geo.ffn_mult;
        let model = GeoEncoder::register(&mut store, gcfg)?;
        Ok(Self { store, model })
    }

    fn load(ws: &Workspace, cfg: &RunConfig, gc: &GcConfig) -> Result<Self> {
        let mut geo = Self::register(cfg, gc)?;
        checkpoint::load_into(&mut geo.store, &ws.geo_dir().join(ENCODER_FILE))?;
        Ok(geo)
    }

    fn vectors(&self, records: &BTreeMap<String, GcRecord>) -> Result<BTreeMap<String, GcVectors>> {
        records
            .iter()
            .map(|(id, r)| {
                let out = self.model.encode_gc(&self.store, r)?;
                Ok((id.clone(), GcVectors::from_encoder_output(&out)?))
            })
            .collect()
    }
}

/// Frozen GC vectors for every POI and located query; empty ones when the
/// model never reads GC.
struct Features {
    geo: Option<Geo>,
    poi: BTreeMap<String, GcVectors>,
    query: BTreeMap<String, GcVectors>,
}

impl Features {
    fn build(ws: &Workspace, cfg: &RunConfig, inputs: &Inputs, text_only: bool) -> Result<Self> {
        if text_only {
            let empty = || GcVectors::new(0, cfg.geo.hidden, Vec::new()).expect("empty vectors");
            return Ok(Self {
                geo: None,
                poi: inputs.bundle.pois().iter().map(|p| (p.id.clone(), empty())).collect(),
                query: inputs
                    .bundle
                    .queries()
                    .iter()
                    .filter(|q| q.location.is_some())
                    .map(|q| (q.id.clone(), empty()))
                    .collect(),
            });
        }
        let geo = Geo::load(ws, cfg, &inputs.gc)?;
        Ok(Self {
            poi: geo.vectors(&inputs.poi_rec)?,
            query: geo.vectors(&inputs.query_rec)?,
            geo: Some(geo),
        })
    }

    fn dataset(&self, bundle: &CorpusBundle, split: &str, tok: &Tokenizer) -> Result<MatchDataset> {
        if !bundle.splits().contains_key(split) {
            return Err(Error::Usage(format!("unknown split {split:?}")));
        }
        Ok(MatchDataset::from_bundle(bundle, split, tok, &self.poi, &self.query)?)
    }
}

fn interaction_config(cfg: &RunConfig, vocab_size: usize, gc: &GcConfig) -> InteractionConfig {
    InteractionConfig {
        trunk: TransformerConfig {
            layers: cfg.mm.layers,
            hidden: cfg.mm.hidden,
            heads: cfg.mm.heads,
            ffn_mult: cfg.mm.ffn_mult,
            max_seq: cfg.mm.max_seq,
        },
        vocab_size,
        geo_hidden: cfg.geo.hidden,
        family_sizes: gc.family_sizes(),
    }
}

/// Generates the benchmark into `corpus/`.
pub fn gen_bench(ws: &Workspace, cfg: &RunConfig) -> Result<Manifest> {
    let _lock = ws.lock()?;
    let bundle = generate_benchmark(&cfg.gen_spec())?;
    let dir = ws.corpus_dir();
    let manifest = corpus::save_corpus(&bundle, &dir)?;
    write_config(&dir, cfg)?;
    Ok(manifest)
}

/// Brings the POI and query GC caches up to date; returns the POI and
/// query statistics.
pub fn extract_gc(ws: &Workspace, cfg: &RunConfig) -> Result<(ExtractStats, ExtractStats)> {
    let _lock = ws.lock()?;
    let bundle = corpus::load_corpus(&ws.corpus_dir())?;
    let gc = corpus_gc_config(cfg, &bundle)?;
    let digest = jsonl::file_sha256(&ws.corpus_dir().join(corpus::OBJECTS_FILE))?;
    let index = SpatialIndex::new(bundle.objects().to_vec());
    let pois: Vec<(String, GeoPoint)> = bundle.pois().iter().map(|p| (p.id.clone(), p.location)).collect();
    let queries: Vec<(String, GeoPoint)> = bundle
        .queries()
        .iter()
        .filter_map(|q| q.location.map(|l| (q.id.clone(), l)))
        .collect();
    let dir = ws.gc_dir();
    let (_, p) = gc_cache::update_cache(&dir.join(gc_cache::POI_CACHE_FILE), &pois, &index, &gc, &digest)?;
    let (_, q) = gc_cache::update_cache(&dir.join(gc_cache::QUERY_CACHE_FILE), &queries, &index, &gc, &digest)?;
    write_config(&dir, cfg)?;
    Ok((p, q))
}

#[derive(Serialize)]
struct GeoTraceLine {
    step: usize,
    mgm: f64,
    gcl: f64,
}

/// Trains the geographic encoder on every POI record plus the training
/// queries' records.
pub fn pretrain_geo(ws: &Workspace, cfg: &RunConfig) -> Result<Vec<GeoTraceRow>> {
    let _lock = ws.lock()?;
    let inputs = Inputs::load(ws, cfg, true)?;
    let mut records: Vec<GcRecord> = inputs.poi_rec.values().cloned().collect();
    for q in inputs.bundle.split("train") {
        if let Some(r) = inputs.query_rec.get(&q.id) {
            records.push(r.clone());
        }
    }
    let mut geo = Geo::register(cfg, &inputs.gc)?;
    let trace = train_geo_encoder(
        &mut geo.store,
        &geo.model,
        &records,
        &GeoTrainConfig {
            epochs: cfg.geo.epochs,
            batch_size: cfg.geo.batch_size,
            lr: cfg.geo.lr,
            weight_decay: cfg.geo.weight_decay,
            mask_prob: cfg.geo.mask_prob,
            seed: cfg.seed,
        },
    )?;
    let dir = ws.geo_dir();
    checkpoint::save(&geo.store, &dir.join(ENCODER_FILE))?;
    let lines = trace.iter().map(|r| GeoTraceLine {
        step: r.step,
        mgm: r.mgm,
        gcl: r.gcl,
    });
    jsonl::write_atomic(&dir.join(TRACE_FILE), jsonl::render(lines).as_bytes())?;
    write_config(&dir, cfg)?;
    Ok(trace)
}

#[derive(Serialize)]
struct MmTraceLine {
    step: usize,
    epoch: usize,
    task: &'static str,
    loss: f64,
}

/// Multi-modal pre-training of one variant.
pub fn pretrain_mm(ws: &Workspace, cfg: &RunConfig, variant: MmVariant) -> Result<Vec<PretrainTraceRow>> {
    let _lock = ws.lock()?;
    let text_only = variant == MmVariant::Text;
    let inputs = Inputs::load(ws, cfg, !text_only)?;
    let features = Features::build(ws, cfg, &inputs, text_only)?;
    let tok = build_tokenizer(&inputs.bundle);
    let mut store = ParameterStore::new(cfg.seed);
    let model = InteractionModel::register(&mut store, interaction_config(cfg, tok.len(), &inputs.gc))?;

    let example = |text: &str, poi: &str| -> Result<PretrainExample> {
        let gc = features.poi.get(poi).cloned().ok_or_else(|| geomatch_core::Error::MissingGc { id: poi.into() })?;
        let codes = inputs
            .poi_rec
            .get(poi)
            .map(|r| r.objects.iter().map(|o| o.codes()).collect())
            .unwrap_or_default();
        Ok(PretrainExample {
            tokens: tok.encode(text),
            codes,
            gc,
        })
    };
    let mut corpus = inputs
        .bundle
        .pois()
        .iter()
        .map(|p| example(&p.text, &p.id))
        .collect::<Result<Vec<_>>>()?;
    if cfg.mm.train_queries {
        for q in inputs.bundle.split("train") {
            corpus.push(example(&q.text, &q.gold)?);
        }
    }
    let frozen = features.geo.as_ref().map(|g| FrozenGeo {
        store: &g.store,
        model: &g.model,
    });
    let trace = pretrain_round_robin(
        &mut store,
        &model,
        &corpus,
        frozen,
        &PretrainConfig {
            epochs: cfg.mm.epochs,
            batch_size: cfg.mm.batch_size,
            lr: cfg.mm.lr,
            weight_decay: cfg.mm.weight_decay,
            mask_prob: cfg.mm.mask_prob,
            seed: cfg.seed,
            tasks: variant.tasks(),
        },
    )?;
    let dir = ws.mm_dir(variant);
    checkpoint::save(&store, &dir.join(MODEL_FILE))?;
    write_vocab(&dir, &tok)?;
    let lines = trace.iter().map(|r| MmTraceLine {
        step: r.step,
        epoch: r.epoch,
        task: r.task.as_str(),
        loss: r.loss,
    });
    jsonl::write_atomic(&dir.join(TRACE_FILE), jsonl::render(lines).as_bytes())?;
    write_config(&dir, cfg)?;
    Ok(trace)
}

#[derive(Serialize)]
struct FinetuneReportFile<'a> {
    model: String,
    best_epoch: usize,
    epoch_losses: &'a [f64],
    dev_recall_at_1: &'a [f64],
}

#[derive(Serialize)]
struct StepLine {
    step: usize,
    loss: f64,
}

/// Directory whose checkpoint a fine-tuning run starts from; `None` for
/// a from-scratch run.
fn init_dir(ws: &Workspace, cfg: &RunConfig, spec: &ModelSpec) -> Option<PathBuf> {
    if spec.from_scratch {
        return None;
    }
    let bi_first = spec.head == Head::Cross && cfg.cross.init == Init::Bi;
    Some(if bi_first {
        ws.model_dir(&ModelSpec::new(Head::Bi, spec.variant))
    } else {
        ws.mm_dir(spec.variant.pretrained())
    })
}

/// Listwise fine-tuning of one head and variant; keeps the best dev epoch.
pub fn finetune(ws: &Workspace, cfg: &RunConfig, spec: ModelSpec) -> Result<FinetuneReport> {
    let _lock = ws.lock()?;
    let section = match spec.head {
        Head::Bi => &cfg.bi,
        Head::Cross => &cfg.cross,
    };
    let init = init_dir(ws, cfg, &spec);
    if let Some(d) = &init {
        require(d.join(MODEL_FILE))?;
    }
    let text_only = spec.variant == Variant::Text;
    let inputs = Inputs::load(ws, cfg, !text_only)?;
    let features = Features::build(ws, cfg, &inputs, text_only)?;
    let tok = match &init {
        Some(d) => read_vocab(d)?,
        None => build_tokenizer(&inputs.bundle),
    };
    let mut store = ParameterStore::new(cfg.seed);
    let model = InteractionModel::register(&mut store, interaction_config(cfg, tok.len(), &inputs.gc))?;
    if let Some(d) = &init {
        checkpoint::load_into(&mut store, &d.join(MODEL_FILE))?;
    }
    let train = features.dataset(&inputs.bundle, "train", &tok)?;
    let dev = features.dataset(&inputs.bundle, "dev", &tok)?;
    let report = run_finetune(
        &mut store,
        &model,
        &train,
        &dev,
        &FinetuneConfig {
            head: spec.head,
            gc: spec.variant.gc_use(),
            epochs: section.epochs,
            batch_size: section.batch_size,
            lr: section.lr,
            weight_decay: section.weight_decay,
            train_candidates: section.train_candidates,
            select_queries: section.select_queries,
            warmup_steps: section.warmup_steps,
            linear_decay: section.linear_decay,
            seed: cfg.seed,
        },
    )?;
    let dir = ws.model_dir(&spec);
    checkpoint::save(&store, &dir.join(MODEL_FILE))?;
    write_vocab(&dir, &tok)?;
    let steps = report
        .step_losses
        .iter()
        .enumerate()
        .map(|(step, &loss)| StepLine { step, loss });
    jsonl::write_atomic(&dir.join(TRACE_FILE), jsonl::render(steps).as_bytes())?;
    write_json(
        &dir.join(REPORT_FILE),
        &FinetuneReportFile {
            model: spec.name(),
            best_epoch: report.best_epoch,
            epoch_losses: &report.epoch_losses,
            dev_recall_at_1: &report.dev_recall_at_1,
        },
    )?;
    write_config(&dir, cfg)?;
    Ok(report)
}

/// A fine-tuned model with the data it scores.
struct Loaded {
    inputs: Inputs,
    features: Features,
    tok: Tokenizer,
    store: ParameterStore,
    model: InteractionModel,
    spec: ModelSpec,
}

impl Loaded {
    fn load(ws: &Workspace, cfg: &RunConfig, spec: ModelSpec) -> Result<Self> {
        let dir = ws.model_dir(&spec);
        require(dir.join(MODEL_FILE))?;
        let text_only = spec.variant == Variant::Text;
        let inputs = Inputs::load(ws, cfg, !text_only)?;
        let features = Features::build(ws, cfg, &inputs, text_only)?;
        let tok = read_vocab(&dir)?;
        let mut store = ParameterStore::new(cfg.seed);
        let model = InteractionModel::register(&mut store, interaction_config(cfg, tok.len(), &inputs.gc))?;
        checkpoint::load_into(&mut store, &dir.join(MODEL_FILE))?;
        Ok(Self {
            inputs,
            features,
            tok,
            store,
            model,
            spec,
        })
    }

    fn dataset(&self, split: &str) -> Result<MatchDataset> {
        let ds = self.features.dataset(&self.inputs.bundle, split, &self.tok)?;
        if ds.is_empty() {
            return Err(Error::Usage(format!("split {split:?} has no queries")));
        }
        Ok(ds)
    }

    fn scorer(&self) -> Scorer<'_> {
        Scorer {
            store: &self.store,
            model: &self.model,
            head: self.spec.head,
            gc: self.spec.variant.gc_use(),
        }
    }

    fn report(&self, cfg: &RunConfig, split: &str, task: &str, metrics: &Metrics, slices: Vec<Slice>) -> MetricsReport {
        MetricsReport {
            model: self.spec.name(),
            split: split.to_string(),
            task: task.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            global: MetricsBlock::from(metrics),
            slices,
        }
    }
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    query: &'a str,
    poi: &'a str,
    score: f64,
}

fn render_scores(results: &[RankingResult]) -> String {
    jsonl::render(results.iter().flat_map(|r| {
        r.ranked.iter().map(move |p| ScoreLine {
            query: &r.query_id,
            poi: &p.id,
            score: p.score,
        })
    }))
}

/// Ranks each query's candidates and writes the metrics report, with one
/// slice per query type.
pub fn evaluate(ws: &Workspace, cfg: &RunConfig, spec: ModelSpec, split: &str) -> Result<MetricsReport> {
    let _lock = ws.lock()?;
    let m = Loaded::load(ws, cfg, spec)?;
    let ds = m.dataset(split)?;
    let results = run_ranking(&m.scorer(), &ds)?;
    let slices = slice_by_query_type(&results, &ds)?.iter().map(Slice::from).collect();
    let report = m.report(cfg, split, "ranking", &Metrics::compute(&results)?, slices);
    let dir = ws.eval_dir(&spec, split);
    jsonl::write_atomic(&dir.join(METRICS_FILE), report.render().as_bytes())?;
    write_config(&dir, cfg)?;
    Ok(report)
}

/// Writes `(query, poi, score)` lines for every query's candidate list,
/// best first. Returns the number of queries.
pub fn rank(ws: &Workspace, cfg: &RunConfig, spec: ModelSpec, split: &str) -> Result<usize> {
    let _lock = ws.lock()?;
    let m = Loaded::load(ws, cfg, spec)?;
    let ds = m.dataset(split)?;
    let results = run_ranking(&m.scorer(), &ds)?;
    let dir = ws.rank_dir(&spec, split);
    jsonl::write_atomic(&dir.join(SCORES_FILE), render_scores(&results).as_bytes())?;
    write_config(&dir, cfg)?;
    Ok(results.len())
}

/// Bi-encoder retrieval over every POI, keeping the top `k_max` per query.
pub fn retrieve(ws: &Workspace, cfg: &RunConfig, spec: ModelSpec, split: &str, k_max: usize) -> Result<MetricsReport> {
    let _lock = ws.lock()?;
    if spec.head == Head::Cross {
        return Err(Error::Usage(geomatch_core::Error::CrossHeadRetrieval.to_string()));
    }
    let m = Loaded::load(ws, cfg, spec)?;
    let ds = m.dataset(split)?;
    let results = run_retrieval(&m.scorer(), &ds, RetrievalPool::Full, k_max)?;
    let slices = slice_by_query_type(&results, &ds)?.iter().map(Slice::from).collect();
    let report = m.report(cfg, split, "retrieval", &Metrics::compute(&results)?, slices);
    let dir = ws.retrieve_dir(&spec, split);
    jsonl::write_atomic(&dir.join(SCORES_FILE), render_scores(&results).as_bytes())?;
    jsonl::write_atomic(&dir.join(METRICS_FILE), report.render().as_bytes())?;
    write_config(&dir, cfg)?;
    Ok(report)
}

/// Ranking metrics along one ablation axis; `levels` are fractions.
pub fn ablate(
    ws: &Workspace,
    cfg: &RunConfig,
    spec: ModelSpec,
    split: &str,
    axis: AblationAxis,
    levels: &[f64],
) -> Result<MetricsReport> {
    let _lock = ws.lock()?;
    if axis != AblationAxis::QueryType && levels.is_empty() {
        return Err(Error::Usage(format!("{} needs at least one level", axis.as_str())));
    }
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::Usage("ablation levels must lie in [0, 1]".into()));
    }
    let m = Loaded::load(ws, cfg, spec)?;
    let ds = m.dataset(split)?;
    let scorer = m.scorer();
    let global = Metrics::compute(&run_ranking(&scorer, &ds)?)?;
    let slices = ablation_slice(&scorer, &ds, axis, levels)?.iter().map(Slice::from).collect();
    let report = m.report(cfg, split, "ranking", &global, slices);
    let dir = ws.ablate_dir(&spec, split, axis);
    jsonl::write_atomic(&dir.join(METRICS_FILE), report.render().as_bytes())?;
    write_config(&dir, cfg)?;
    Ok(report)
}

/// Reports of one end-to-end run, in the order they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub reports: Vec<MetricsReport>,
    pub gc_ablation: MetricsReport,
}

impl PipelineOutcome {
    pub fn report(&self, model: &str) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.model == model)
    }

    /// Every report rendered and concatenated.
    pub fn render(&self) -> String {
        self.reports.iter().chain([&self.gc_ablation]).map(MetricsReport::render).collect()
    }
}

/// Bi-encoders with and without query GC and text-only are evaluated on
/// test; the two cross-encoders on dev.
pub const BI_EVAL_SPLIT: &str = "test";
pub const CROSS_EVAL_SPLIT: &str = "dev";
pub const GC_PERCENT_LEVELS: [f64; 3] = [0.0, 0.5, 1.0];

/// Every stage from benchmark generation to the query-GC ablation.
pub fn run_all(ws: &Workspace, cfg: &RunConfig) -> Result<PipelineOutcome> {
    gen_bench(ws, cfg)?;
    extract_gc(ws, cfg)?;
    pretrain_geo(ws, cfg)?;
    pretrain_mm(ws, cfg, MmVariant::Gc)?;
    pretrain_mm(ws, cfg, MmVariant::Text)?;
    let bi: Vec<ModelSpec> = Variant::ALL.iter().map(|&v| ModelSpec::new(Head::Bi, v)).collect();
    let cross = [ModelSpec::new(Head::Cross, Variant::Gc), ModelSpec::new(Head::Cross, Variant::Text)];
    for &m in bi.iter().chain(&cross) {
        finetune(ws, cfg, m)?;
    }
    let mut reports = Vec::new();
    for &m in &bi {
        reports.push(evaluate(ws, cfg, m, BI_EVAL_SPLIT)?);
    }
    for &m in &cross {
        reports.push(evaluate(ws, cfg, m, CROSS_EVAL_SPLIT)?);
    }
    let gc_ablation = ablate(ws, cfg, bi[0], BI_EVAL_SPLIT, AblationAxis::GcPercent, &GC_PERCENT_LEVELS)?;
    Ok(PipelineOutcome { reports, gc_ablation })
}
