//! Algorithm 1 end to end: one MI estimate per adjacent layer pair and token
//! for a macro and a micro store, then `E(l, t)` and `Ê(t)`.
//!
//! Every cell trains with its own seed derived from `(run seed, l, t)`, so
//! results do not depend on execution order or worker count. Finished cells
//! are persisted under `<out>/cells/` keyed by a hash of everything that
//! determines them, which makes interrupted runs resumable.

mod ie;
mod report;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mine::{train_mi, TrainConfig};
use crate::repr_io::Repr1Reader;
use crate::types::{source_field, IEProfile, MIEstimate, RepresentationStore, StoreDims, StoreMode};

pub use ie::{compute_ie, shot_stats, MicroProtocol};
pub use report::{
    compare_sources, read_ie_profile, read_mi_matrix, render_ie_profile, render_mi_matrix, render_svg, shot_report,
    ShotReport, COMPARE_FIRST_COLUMN, SHOT_REPORT_ROWS,
};

/// Read access to `S × D` slices, from memory or from a REPR1 file.
pub trait SliceSource: Sync {
    fn dims(&self) -> StoreDims;
    fn mode(&self) -> StoreMode;
    fn source_id(&self) -> &str;
    fn load(&self, layer: usize, token: usize) -> Result<Array2<f64>>;
}

impl SliceSource for RepresentationStore {
    fn dims(&self) -> StoreDims {
        RepresentationStore::dims(self)
    }

    fn mode(&self) -> StoreMode {
        RepresentationStore::mode(self)
    }

    fn source_id(&self) -> &str {
        RepresentationStore::source_id(self)
    }

    fn load(&self, layer: usize, token: usize) -> Result<Array2<f64>> {
        self.slice_f64(layer, token)
    }
}

/// A REPR1 file; each load opens its own reader and streams one slice.
pub struct Repr1Source {
    path: PathBuf,
    header: crate::repr_io::Repr1Header,
}

impl Repr1Source {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let reader = Repr1Reader::open(path.as_ref())?;
        Ok(Self {
            path: path.as_ref().to_path_buf(),
            header: reader.header().clone(),
        })
    }
}

impl SliceSource for Repr1Source {
    fn dims(&self) -> StoreDims {
        self.header.dims
    }

    fn mode(&self) -> StoreMode {
        self.header.mode
    }

    fn source_id(&self) -> &str {
        &self.header.source_id
    }

    fn load(&self, layer: usize, token: usize) -> Result<Array2<f64>> {
        Ok(Repr1Reader::open(&self.path)?.read_slice(layer, token)?.mapv(f64::from))
    }
}

/// Stable seed for a cell: the first 8 bytes of SHA-256 over the parts.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub fn cell_seed(run_seed: u64, layer_pair: usize, token: usize) -> u64 {
    derive_seed(&[run_seed, layer_pair as u64, token as u64])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Macro,
    Micro,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Macro => "macro",
            Level::Micro => "micro",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Done(MIEstimate),
    Failed {
        layer_pair: usize,
        token: usize,
        reason: String,
    },
    /// Outside the requested layer/token range.
    Skipped,
}

impl CellOutcome {
    pub fn bits(&self) -> Option<f64> {
        match self {
            CellOutcome::Done(e) => Some(e.value_bits),
            _ => None,
        }
    }
}

/// `(L−1) × T` grid of cell outcomes, row-major by layer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiMatrix {
    pub level: Level,
    pub layer_pairs: usize,
    pub tokens: usize,
    pub cells: Vec<CellOutcome>,
}

impl MiMatrix {
    /// Every cell skipped.
    pub fn blank(level: Level, dims: StoreDims) -> Self {
        let layer_pairs = dims.layers.saturating_sub(1);
        Self {
            level,
            layer_pairs,
            tokens: dims.tokens,
            cells: vec![CellOutcome::Skipped; layer_pairs * dims.tokens],
        }
    }

    fn place(&mut self, task: &Task, outcome: CellOutcome) {
        self.cells[task.layer_pair * self.tokens + task.token] = outcome;
    }

    pub fn get(&self, layer_pair: usize, token: usize) -> &CellOutcome {
        &self.cells[layer_pair * self.tokens + token]
    }

    pub fn bits(&self, layer_pair: usize, token: usize) -> Option<f64> {
        self.get(layer_pair, token).bits()
    }

    pub fn failures(&self) -> impl Iterator<Item = (usize, usize, &str)> {
        self.cells.iter().filter_map(|c| match c {
            CellOutcome::Failed {
                layer_pair,
                token,
                reason,
            } => Some((*layer_pair, *token, reason.as_str())),
            _ => None,
        })
    }
}

/// Options shared by every cell of one estimation run.
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub train: TrainConfig,
    pub run_seed: u64,
    pub workers: usize,
    /// Directory for per-cell results; `None` disables persistence.
    pub cell_dir: Option<PathBuf>,
    /// Reuse persisted cells whose key matches.
    pub resume: bool,
}

impl EstimateOptions {
    pub fn new(train: TrainConfig, run_seed: u64) -> Self {
        Self {
            train,
            run_seed,
            workers: 1,
            cell_dir: None,
            resume: false,
        }
    }
}

struct Task {
    level: Level,
    replicate: Option<usize>,
    layer_pair: usize,
    token: usize,
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    key: String,
    outcome: CellOutcome,
}

impl Task {
    fn seed(&self, run_seed: u64) -> u64 {
        match self.replicate {
            None => cell_seed(run_seed, self.layer_pair, self.token),
            Some(b) => derive_seed(&[run_seed, self.layer_pair as u64, self.token as u64, b as u64 + 1]),
        }
    }

    fn file_name(&self) -> String {
        let rep = self.replicate.map_or(String::new(), |b| format!("_b{b}"));
        format!("{}{rep}_l{}_t{}.json", self.level.as_str(), self.layer_pair, self.token)
    }

    /// Hash of everything that determines this cell's result.
    fn key(&self, source: &dyn SliceSource, opts: &EstimateOptions, seed: u64) -> String {
        let desc = serde_json::json!({
            "level": self.level,
            "replicate": self.replicate,
            "l": self.layer_pair,
            "t": self.token,
            "seed": seed,
            "train": opts.train,
            "dims": source.dims(),
            "source_id": source.source_id(),
        });
        hex::encode(Sha256::digest(desc.to_string().as_bytes()))
    }
}

fn run_cell(task: &Task, source: &dyn SliceSource, opts: &EstimateOptions, rows: Option<&[usize]>) -> CellOutcome {
    let seed = task.seed(opts.run_seed);
    let fail = |reason: String| CellOutcome::Failed {
        layer_pair: task.layer_pair,
        token: task.token,
        reason,
    };
    let load = || -> Result<(Array2<f64>, Array2<f64>)> {
        let x = source.load(task.layer_pair, task.token)?;
        let y = source.load(task.layer_pair + 1, task.token)?;
        Ok(match rows {
            Some(r) => (x.select(Axis(0), r), y.select(Axis(0), r)),
            None => (x, y),
        })
    };
    let (x, y) = match load() {
        Ok(xy) => xy,
        Err(e) => return fail(e.to_string()),
    };
    let cfg = TrainConfig { seed, ..opts.train };
    match train_mi(x.view(), y.view(), &cfg) {
        Ok(mut est) => {
            est.layer_pair = task.layer_pair;
            est.token = task.token;
            CellOutcome::Done(est)
        }
        Err(e) => fail(e.to_string()),
    }
}

fn cached(path: &Path, key: &str) -> Option<CellOutcome> {
    let text = std::fs::read_to_string(path).ok()?;
    let rec: CellRecord = serde_json::from_str(&text).ok()?;
    (rec.key == key).then_some(rec.outcome)
}

fn persist(path: &Path, key: String, outcome: &CellOutcome) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let rec = CellRecord {
        key,
        outcome: outcome.clone(),
    };
    std::fs::write(&tmp, serde_json::to_vec(&rec)?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs `tasks` on a bounded pool; the result vector is in task order.
fn run_tasks(
    tasks: &[Task],
    sources: [&dyn SliceSource; 2],
    opts: &EstimateOptions,
    resamples: &[Vec<usize>],
) -> Result<Vec<CellOutcome>> {
    if let Some(dir) = &opts.cell_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; tasks.len()]);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = opts.workers.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let source = match task.level {
                    Level::Macro => sources[0],
                    Level::Micro => sources[1],
                };
                let seed = task.seed(opts.run_seed);
                let key = task.key(source, opts, seed);
                let path = opts.cell_dir.as_ref().map(|d| d.join(task.file_name()));
                let reused = match (&path, opts.resume) {
                    (Some(p), true) => cached(p, &key),
                    _ => None,
                };
                let outcome = match reused {
                    Some(o) => o,
                    None => {
                        let rows = task.replicate.map(|b| resamples[b].as_slice());
                        let o = run_cell(task, source, opts, rows);
                        if let Some(p) = &path {
                            if let Err(e) = persist(p, key, &o) {
                                first_error.lock().expect("lock").get_or_insert(e);
                            }
                        }
                        o
                    }
                };
                results.lock().expect("lock")[i] = Some(outcome);
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("lock") {
        return Err(e);
    }
    Ok(results
        .into_inner()
        .expect("lock")
        .into_iter()
        .map(|o| o.expect("every task ran"))
        .collect())
}

/// Half-open index range; `None` means everything.
pub type IndexRange = Option<(usize, usize)>;

fn in_range(r: IndexRange, i: usize) -> bool {
    r.is_none_or(|(a, b)| a <= i && i < b)
}

fn grid_tasks(
    level: Level,
    dims: StoreDims,
    replicate: Option<usize>,
    pairs: IndexRange,
    tokens: IndexRange,
) -> Vec<Task> {
    let mut tasks = Vec::new();
    for l in 0..dims.layers.saturating_sub(1) {
        for t in 0..dims.tokens {
            if in_range(pairs, l) && in_range(tokens, t) {
                tasks.push(Task {
                    level,
                    replicate,
                    layer_pair: l,
                    token: t,
                });
            }
        }
    }
    tasks
}

fn assemble(level: Level, dims: StoreDims, tasks: &[Task], outcomes: Vec<CellOutcome>) -> MiMatrix {
    let mut m = MiMatrix::blank(level, dims);
    for (task, o) in tasks.iter().zip(outcomes) {
        m.place(task, o);
    }
    m
}

/// Estimates every adjacent-pair cell of one store.
pub fn estimate_all(source: &dyn SliceSource, opts: &EstimateOptions) -> Result<MiMatrix> {
    estimate_range(source, opts, None, None)
}

pub fn estimate_range(
    source: &dyn SliceSource,
    opts: &EstimateOptions,
    pairs: IndexRange,
    tokens: IndexRange,
) -> Result<MiMatrix> {
    let dims = source.dims();
    if dims.layers < 2 {
        return Err(Error::Shape(format!(
            "store has {} layers; need at least 2",
            dims.layers
        )));
    }
    let level = match source.mode() {
        StoreMode::Macro => Level::Macro,
        StoreMode::Micro => Level::Micro,
    };
    let tasks = grid_tasks(level, dims, None, pairs, tokens);
    let outcomes = run_tasks(&tasks, [source, source], opts, &[])?;
    Ok(assemble(level, dims, &tasks, outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub macro_store: PathBuf,
    pub micro_store: PathBuf,
    pub micro_protocol: MicroProtocol,
    pub train: TrainConfig,
    #[serde(default)]
    pub tokens: IndexRange,
    #[serde(default)]
    pub layer_pairs: IndexRange,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Bootstrap resamples for the per-shot s.d.; 0 disables.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Tokens per shot, for per-shot statistics.
    #[serde(default)]
    pub shot_length: Option<usize>,
}

fn default_bootstrap() -> usize {
    32
}

/// Everything one pipeline run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub macro_mi: MiMatrix,
    pub micro_mi: MiMatrix,
    pub profile: IEProfile,
    pub outputs: Vec<PathBuf>,
}

impl PipelineRun {
    pub fn failed_cells(&self) -> usize {
        self.macro_mi.failures().count() + self.micro_mi.failures().count()
    }
}

/// Checks that the two stores describe the same samples.
pub fn check_compatible(macro_src: &dyn SliceSource, micro_src: &dyn SliceSource) -> Result<()> {
    let (a, b) = (macro_src.dims(), micro_src.dims());
    if macro_src.mode() != StoreMode::Macro || micro_src.mode() != StoreMode::Micro {
        return Err(Error::InvalidArgument(
            "expected a macro store and a micro store".into(),
        ));
    }
    if a.samples != b.samples || a.width != b.width || a.layers != b.layers {
        return Err(Error::Shape(format!(
            "macro store (S={}, L={}, D={}) and micro store (S={}, L={}, D={}) disagree",
            a.samples, a.layers, a.width, b.samples, b.layers, b.width
        )));
    }
    let tok = |s: &dyn SliceSource| source_field(s.source_id(), "tokenizer").map(str::to_owned);
    if let (Some(x), Some(y)) = (tok(macro_src), tok(micro_src)) {
        if x != y {
            return Err(Error::InvalidArgument(format!("tokenizer mismatch: {x} vs {y}")));
        }
    }
    Ok(())
}

/// Macro and micro matrices for the configured ranges, plus bootstrap
/// replicates when requested, then the profile and its CSV/SVG outputs.
pub fn run_pipeline(cfg: &PipelineConfig, workers: usize, resume: bool) -> Result<PipelineRun> {
    let macro_src = Repr1Source::open(&cfg.macro_store)?;
    let micro_src = Repr1Source::open(&cfg.micro_store)?;
    run_pipeline_with(cfg, &macro_src, &micro_src, workers, resume)
}

pub fn run_pipeline_with(
    cfg: &PipelineConfig,
    macro_src: &dyn SliceSource,
    micro_src: &dyn SliceSource,
    workers: usize,
    resume: bool,
) -> Result<PipelineRun> {
    check_compatible(macro_src, micro_src)?;
    cfg.train.validate()?;
    let (ma, mi) = (macro_src.dims(), micro_src.dims());
    if ma.layers < 2 {
        return Err(Error::Shape("stores need at least 2 layers".into()));
    }
    let micro_tokens: IndexRange = match cfg.micro_protocol {
        MicroProtocol::FirstEntity => Some((0, 1)),
        MicroProtocol::PositionMean => None,
    };
    let replicates: Vec<Option<usize>> = std::iter::once(None).chain((0..cfg.bootstrap).map(Some)).collect();
    let mut tasks = Vec::new();
    for &rep in &replicates {
        tasks.extend(grid_tasks(Level::Macro, ma, rep, cfg.layer_pairs, cfg.tokens));
        tasks.extend(grid_tasks(Level::Micro, mi, rep, cfg.layer_pairs, micro_tokens));
    }
    let opts = EstimateOptions {
        train: cfg.train,
        run_seed: cfg.seed,
        workers,
        cell_dir: Some(cfg.out_dir.join("cells")),
        resume,
    };
    let resample: Vec<Vec<usize>> = (0..cfg.bootstrap)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, u64::MAX, b as u64]));
            (0..ma.samples).map(|_| rng.random_range(0..ma.samples)).collect()
        })
        .collect();
    let outcomes = run_tasks(&tasks, [macro_src, micro_src], &opts, &resample)?;

    let mut matrices: Vec<(MiMatrix, MiMatrix)> = replicates
        .iter()
        .map(|_| (MiMatrix::blank(Level::Macro, ma), MiMatrix::blank(Level::Micro, mi)))
        .collect();
    for (task, o) in tasks.iter().zip(outcomes) {
        let pair = &mut matrices[task.replicate.map_or(0, |b| b + 1)];
        match task.level {
            Level::Macro => pair.0.place(task, o),
            Level::Micro => pair.1.place(task, o),
        }
    }
    let (macro_mi, micro_mi) = matrices.remove(0);

    let mut profile = compute_ie(&macro_mi, &micro_mi, cfg.micro_protocol)?;
    if let Some(shot) = cfg.shot_length {
        let replicas = matrices
            .iter()
            .map(|(a, b)| compute_ie(a, b, cfg.micro_protocol))
            .collect::<Result<Vec<_>>>()?;
        profile.shot_stats = Some(shot_stats(&profile, shot, &replicas)?);
    }

    let outputs = write_outputs(&cfg.out_dir, &macro_mi, &micro_mi, &profile)?;
    Ok(PipelineRun {
        macro_mi,
        micro_mi,
        profile,
        outputs,
    })
}

/// Writes `mi_matrix.csv`, `ie_profile.csv`, `ie_profile.svg` and, when
/// shot statistics exist, `shot_report.csv`.
pub fn write_outputs(
    out: &Path,
    macro_mi: &MiMatrix,
    micro_mi: &MiMatrix,
    profile: &IEProfile,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    put("mi_matrix.csv", render_mi_matrix(&[macro_mi, micro_mi])?)?;
    put("ie_profile.csv", render_ie_profile(profile)?)?;
    put("ie_profile.svg", render_svg(&[("E_hat", profile)]))?;
    if profile.shot_stats.is_some() {
        put("shot_report.csv", shot_report(profile)?.to_csv()?)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parity::ParityDynamics;

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 40,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn seeds_depend_on_cell_only() {
        assert_eq!(cell_seed(1, 2, 3), cell_seed(1, 2, 3));
        assert_ne!(cell_seed(1, 2, 3), cell_seed(1, 3, 2));
        assert_ne!(cell_seed(1, 2, 3), cell_seed(2, 2, 3));
    }

    #[test]
    fn matrix_shape_and_worker_independence() {
        let dyn_ = ParityDynamics::new(2, 0.9).unwrap();
        let (ma, _) = dyn_.sample_trajectories(400, 4, 1).unwrap().to_stores();
        let mut wide = RepresentationStore::empty(StoreDims::new(400, 3, 2, 4), StoreMode::Macro, "t");
        for l in 0..3 {
            for t in 0..2 {
                wide.set_slice(l, t, ma.slice_data(l.min(1), 0).unwrap().to_vec())
                    .unwrap();
            }
        }
        let mut opts = EstimateOptions::new(quick(), 5);
        let one = estimate_all(&wide, &opts).unwrap();
        assert_eq!((one.layer_pairs, one.tokens), (2, 2));
        opts.workers = 4;
        assert_eq!(estimate_all(&wide, &opts).unwrap(), one);
    }

    #[test]
    fn resume_reuses_cells() {
        let dyn_ = ParityDynamics::new(2, 1.0).unwrap();
        let (ma, mi) = dyn_.sample_trajectories(300, 4, 2).unwrap().to_stores();
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            macro_store: PathBuf::new(),
            micro_store: PathBuf::new(),
            micro_protocol: MicroProtocol::PositionMean,
            train: quick(),
            tokens: None,
            layer_pairs: None,
            out_dir: dir.path().to_path_buf(),
            seed: 9,
            bootstrap: 0,
            shot_length: None,
        };
        let first = run_pipeline_with(&cfg, &ma, &mi, 2, false).unwrap();
        let cell = dir.path().join("cells/macro_l0_t0.json");
        let mut rec: CellRecord = serde_json::from_str(&std::fs::read_to_string(&cell).unwrap()).unwrap();
        if let CellOutcome::Done(e) = &mut rec.outcome {
            e.value_bits = 42.0;
        }
        std::fs::write(&cell, serde_json::to_vec(&rec).unwrap()).unwrap();
        let resumed = run_pipeline_with(&cfg, &ma, &mi, 1, true).unwrap();
        assert_eq!(resumed.macro_mi.bits(0, 0), Some(42.0));
        assert_eq!(resumed.micro_mi, first.micro_mi);
        let fresh = run_pipeline_with(&cfg, &ma, &mi, 1, false).unwrap();
        assert_eq!(fresh.macro_mi, first.macro_mi);
    }

    #[test]
    fn failed_cells_are_gaps() {
        let mut store = RepresentationStore::zeros(StoreDims::new(1, 2, 1, 2), StoreMode::Macro, "tiny");
        store.slice_mut(0, 0).unwrap().fill(1.0);
        let m = estimate_all(&store, &EstimateOptions::new(quick(), 0)).unwrap();
        assert_eq!(m.failures().count(), 1);
        assert_eq!(m.bits(0, 0), None);
    }

    #[test]
    fn mismatched_stores_are_rejected() {
        let a = RepresentationStore::zeros(StoreDims::new(4, 2, 2, 3), StoreMode::Macro, "tokenizer=a");
        let b = RepresentationStore::zeros(StoreDims::new(4, 2, 2, 3), StoreMode::Micro, "tokenizer=b");
        assert!(check_compatible(&a, &b).is_err());
        let c = RepresentationStore::zeros(StoreDims::new(5, 2, 2, 3), StoreMode::Micro, "tokenizer=a");
        assert!(check_compatible(&a, &c).is_err());
        let d = RepresentationStore::zeros(StoreDims::new(4, 2, 1, 3), StoreMode::Micro, "tokenizer=a");
        assert!(check_compatible(&a, &d).is_ok());
    }
}
