use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LofReference, Method};
use super::tune::{tune_epsilon, TuneScore};
use crate::data::{stratified_folds, Dataset, LoadReport};
use crate::error::{Error, Result};
use crate::evaluators::{build_ensemble, ModelEnsemble};
use crate::metrics::{robustness, scored_point, validity, LofModel, MetricReport, ScoreInput};
use crate::models::{refit_head, train_with_validation, Model};
use crate::rashomon::RashomonEllipsoid;
use crate::recourse::{
    generate_continuous, generate_mixed, generate_sparse, BinaryTarget, CandidateIndex, Counterfactual, MixedConfig,
    RecourseConstraints,
};

pub const CELLS_FILE: &str = "cells.jsonl";
pub const RESULT_JSON: &str = "result.json";
pub const RESULT_CSV: &str = "result.csv";

/// Counterfactuals are sought for instances the base model labels 0, after
/// any label flip requested by `desired_class`.
const DESIRED: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config_hash: String,
    pub fold: usize,
    pub method: Method,
    pub evaluator: String,
    pub evaluator_index: usize,
    pub target_index: usize,
    /// As written in the config.
    pub epsilon_target: f64,
    pub epsilon_target_abs: f64,
    pub tuned_epsilon: Option<f64>,
    pub tuned_epsilon_abs: Option<f64>,
    pub base_objective: Option<f64>,
    pub ensemble_size: usize,
    pub ensemble_shortfall: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    pub evaluator_seed: u64,
    pub seconds_preprocess: Option<f64>,
    pub seconds_per_ce: Option<f64>,
    pub budget_exceeded: bool,
    pub tuning: Vec<(f64, TuneScore)>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

impl CellResult {
    fn key(&self) -> (usize, Method, usize, usize) {
        (self.fold, self.method, self.evaluator_index, self.target_index)
    }

    pub fn is_complete(&self) -> bool {
        !self.budget_exceeded && self.error.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub load: LoadReport,
    pub cells: Vec<CellResult>,
    /// Some cell ran out of budget or failed.
    pub partial: bool,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    fold: usize,
    method: &'a str,
    evaluator: &'a str,
    epsilon_target: f64,
    tuned_epsilon: Option<f64>,
    n: Option<usize>,
    found: Option<usize>,
    validity: Option<f64>,
    robustness: Option<f64>,
    mean_l2: Option<f64>,
    mean_l0: Option<f64>,
    mean_l_mix: Option<f64>,
    mean_lof: Option<f64>,
    seconds_preprocess: Option<f64>,
    seconds_per_ce: Option<f64>,
    budget_exceeded: bool,
    error: Option<&'a str>,
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.cells {
            let r = c.report.as_ref();
            out.serialize(CsvRow {
                fold: c.fold,
                method: c.method.name(),
                evaluator: &c.evaluator,
                epsilon_target: c.epsilon_target,
                tuned_epsilon: c.tuned_epsilon,
                n: r.map(|r| r.n),
                found: r.map(|r| r.found),
                validity: r.map(|r| r.validity),
                robustness: r.map(|r| r.robustness),
                mean_l2: r.and_then(|r| r.mean_l2),
                mean_l0: r.and_then(|r| r.mean_l0),
                mean_l_mix: r.and_then(|r| r.mean_l_mix),
                mean_lof: r.and_then(|r| r.mean_lof),
                seconds_preprocess: c.seconds_preprocess,
                seconds_per_ce: c.seconds_per_ce,
                budget_exceeded: c.budget_exceeded,
                error: c.error.as_deref(),
            })?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Everything a fold's cells share.
struct Fold {
    index: usize,
    train: Dataset,
    base: Model,
    base_objective: f64,
    ell: RashomonEllipsoid,
    val_x0: Vec<DVector<f64>>,
    test_x0: Vec<DVector<f64>>,
    cons: RecourseConstraints,
    lof: Option<LofModel>,
    seconds_preprocess: f64,
    /// `[target][evaluator]`
    ensembles: Vec<Vec<std::result::Result<ModelEnsemble, String>>>,
}

fn denied(base: &Model, ds: &Dataset, rows: &[usize], cap: Option<usize>) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::new();
    for &i in rows {
        let x = ds.row(i);
        if base.predict(&x)? != DESIRED {
            out.push(x);
            if cap.is_some_and(|c| out.len() >= c) {
                break;
            }
        }
    }
    Ok(out)
}

fn evaluator_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64 * 1_000_003)
}

fn prepare_fold(cfg: &ExperimentConfig, ds: &Dataset, index: usize, split: &crate::data::FoldSplit) -> Result<Fold> {
    let start = Instant::now();
    let std = ds.preprocess(&split.train)?;
    let train = std.subset(&split.train);
    let val = std.subset(&split.val);
    let trained = train_with_validation(&train, Some(&val), &cfg.model)?;
    let base = if cfg.refit_head { refit_head(&trained.model, &train, &cfg.model)? } else { trained.model };
    let base_objective = base.objective(&train)?;
    let ell = RashomonEllipsoid::build(&base, &train, 0.0)?;
    let seconds_preprocess = start.elapsed().as_secs_f64();

    let val_x0 = denied(&base, &std, &split.val, cfg.max_tuning_instances)?;
    let test_x0 = denied(&base, &std, &split.test, cfg.max_instances)?;
    let cons = if cfg.actionable {
        RecourseConstraints::from_specs(&std.specs)
    } else {
        RecourseConstraints::free(&std.specs)
    };
    let lof_rows: Vec<usize> = (0..train.n())
        .filter(|&i| cfg.lof_reference == LofReference::AllTraining || train.y[i] == DESIRED)
        .collect();
    let lof = if lof_rows.len() >= 2 {
        Some(LofModel::fit_capped(train.x.select_rows(lof_rows.iter()), cfg.lof_k)?)
    } else {
        None
    };

    let ensembles = cfg
        .epsilon_targets
        .iter()
        .map(|&e| {
            let eps = cfg.epsilon_scale.resolve(e, base_objective);
            cfg.evaluators
                .par_iter()
                .map(|tpl| {
                    let mut spec = tpl.clone();
                    spec.epsilon_target = eps;
                    spec.seed = evaluator_seed(tpl.seed, index);
                    build_ensemble(&base, &train, Some(&val), &cfg.model, &spec).map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();

    Ok(Fold {
        index,
        train,
        base,
        base_objective,
        ell,
        val_x0,
        test_x0,
        cons,
        lof,
        seconds_preprocess,
        ensembles,
    })
}

/// Generated counterfactuals for one instance set at one ε.
#[derive(Clone)]
struct Batch {
    ces: Vec<Option<Counterfactual>>,
    seconds: Vec<f64>,
}

struct MethodRun<'a> {
    cfg: &'a ExperimentConfig,
    fold: &'a Fold,
    method: Method,
    start: Instant,
    exceeded: AtomicBool,
    val: BTreeMap<usize, Batch>,
    test: BTreeMap<usize, Batch>,
}

impl MethodRun<'_> {
    fn generate(&self, eps_abs: f64, xs: &[DVector<f64>]) -> Result<Batch> {
        let ell = self.fold.ell.with_epsilon(eps_abs)?;
        let target = BinaryTarget::new(&self.fold.base, &ell, self.fold.base.threshold())?;
        let index = match self.method {
            Method::DataSupported => Some(CandidateIndex::build(&target, &self.fold.train.x)?),
            _ => None,
        };
        let cfg = self.cfg;
        let cons = &self.fold.cons;
        let out: Vec<(Option<Counterfactual>, f64)> =
            xs.par_iter()
                .enumerate()
                .map(|(i, x0)| {
                    if self.start.elapsed().as_secs_f64() > cfg.budget_seconds {
                        self.exceeded.store(true, Ordering::Relaxed);
                        return Ok((None, 0.0));
                    }
                    let t = Instant::now();
                    let r = match self.method {
                        Method::DataSupported => index
                            .as_ref()
                            .expect("index built for data-supported")
                            .counterfactual(&target, x0, cons, cfg.search_distance),
                        Method::Continuous => generate_continuous(&target, x0, &cfg.continuous, cons),
                        Method::Sparse => generate_sparse(&target, x0, &cfg.continuous, cons),
                        Method::Mixed => {
                            let mix = MixedConfig {
                                seed: cfg.mixed.seed.wrapping_add(i as u64),
                                ..cfg.mixed
                            };
                            generate_mixed(&target, x0, &cfg.continuous, &mix, cons)
                        }
                    };
                    let secs = t.elapsed().as_secs_f64();
                    match r {
                        Ok(cf) => Ok((Some(cf), secs)),
                        Err(Error::NoRobustCandidate { .. }) => Ok((None, secs)),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?;
        let (ces, seconds) = out.into_iter().unzip();
        Ok(Batch { ces, seconds })
    }

    fn batch(&mut self, grid_index: usize, test: bool) -> Result<Batch> {
        let cache = if test { &self.test } else { &self.val };
        if let Some(b) = cache.get(&grid_index) {
            return Ok(b.clone());
        }
        let eps = self.eps_abs(grid_index);
        let xs = if test { &self.fold.test_x0 } else { &self.fold.val_x0 };
        let b = self.generate(eps, xs)?;
        let cache = if test { &mut self.test } else { &mut self.val };
        cache.insert(grid_index, b.clone());
        Ok(b)
    }

    fn eps_abs(&self, grid_index: usize) -> f64 {
        self.cfg
            .epsilon_scale
            .resolve(self.cfg.epsilon_grid[grid_index], self.fold.base_objective)
    }

    fn cell(&mut self, hash: &str, target_index: usize, evaluator_index: usize) -> CellResult {
        let cfg = self.cfg;
        let fold = self.fold;
        let tpl = &cfg.evaluators[evaluator_index];
        let eps_target = cfg.epsilon_targets[target_index];
        let mut cell = CellResult {
            config_hash: hash.to_string(),
            fold: fold.index,
            method: self.method,
            evaluator: tpl.kind.name().to_string(),
            evaluator_index,
            target_index,
            epsilon_target: eps_target,
            epsilon_target_abs: cfg.epsilon_scale.resolve(eps_target, fold.base_objective),
            tuned_epsilon: None,
            tuned_epsilon_abs: None,
            base_objective: Some(fold.base_objective),
            ensemble_size: 0,
            ensemble_shortfall: 0,
            split_seed: cfg.split.seed,
            train_seed: cfg.model.seed,
            evaluator_seed: evaluator_seed(tpl.seed, fold.index),
            seconds_preprocess: Some(fold.seconds_preprocess),
            seconds_per_ce: None,
            budget_exceeded: false,
            tuning: Vec::new(),
            report: None,
            error: None,
        };
        if let Err(e) = self.fill(&mut cell) {
            cell.error = Some(e.to_string());
        }
        cell.budget_exceeded = self.exceeded.load(Ordering::Relaxed);
        cell
    }

    fn fill(&mut self, cell: &mut CellResult) -> Result<()> {
        let ens = match &self.fold.ensembles[cell.target_index][cell.evaluator_index] {
            Ok(e) => e.clone(),
            Err(msg) => return Err(Error::EmptyEnsemble(msg.clone())),
        };
        cell.ensemble_size = ens.len();
        cell.ensemble_shortfall = ens.shortfall;
        let grid = &self.cfg.epsilon_grid;
        let chosen = if self.fold.val_x0.is_empty() {
            grid.len() - 1
        } else {
            let positions: Vec<f64> = (0..grid.len()).map(|i| i as f64).collect();
            let base = self.fold.base.clone();
            let tuned = tune_epsilon(&positions, |p| {
                let b = self.batch(p as usize, false)?;
                let pts: Vec<_> = b.ces.iter().map(|c| scored_point(c.as_ref())).collect();
                let found: Vec<f64> = b.ces.iter().flatten().filter(|c| c.certified).map(|c| c.l2).collect();
                Ok(TuneScore {
                    validity: validity(&base, &pts, DESIRED)?,
                    robustness: robustness(&ens.members, &pts, DESIRED)?,
                    mean_l2: (!found.is_empty()).then(|| found.iter().sum::<f64>() / found.len() as f64),
                })
            })?;
            cell.tuning = tuned.trace.iter().map(|&(p, s)| (grid[p as usize], s)).collect();
            tuned.epsilon as usize
        };
        cell.tuned_epsilon = Some(grid[chosen]);
        cell.tuned_epsilon_abs = Some(self.eps_abs(chosen));
        if self.fold.test_x0.is_empty() {
            return Err(Error::Empty("no test instances need recourse".into()));
        }
        let b = self.batch(chosen, true)?;
        cell.seconds_per_ce = Some(b.seconds.iter().sum::<f64>() / b.seconds.len() as f64);
        cell.report = Some(MetricReport::score(&ScoreInput {
            base: &self.fold.base,
            ensemble: &ens,
            x0: &self.fold.test_x0,
            ces: &b.ces,
            target: DESIRED,
            specs: &self.fold.cons.specs,
            lof: self.fold.lof.as_ref(),
            seconds: Some(&b.seconds),
        })?);
        Ok(())
    }
}

fn error_cells(cfg: &ExperimentConfig, hash: &str, fold: usize, method: Method, msg: &str) -> Vec<CellResult> {
    let mut out = Vec::new();
    for (ti, &e) in cfg.epsilon_targets.iter().enumerate() {
        for (ei, tpl) in cfg.evaluators.iter().enumerate() {
            out.push(CellResult {
                config_hash: hash.to_string(),
                fold,
                method,
                evaluator: tpl.kind.name().to_string(),
                evaluator_index: ei,
                target_index: ti,
                epsilon_target: e,
                epsilon_target_abs: f64::NAN,
                tuned_epsilon: None,
                tuned_epsilon_abs: None,
                base_objective: None,
                ensemble_size: 0,
                ensemble_shortfall: 0,
                split_seed: cfg.split.seed,
                train_seed: cfg.model.seed,
                evaluator_seed: evaluator_seed(tpl.seed, fold),
                seconds_preprocess: None,
                seconds_per_ce: None,
                budget_exceeded: false,
                tuning: Vec::new(),
                report: None,
                error: Some(msg.to_string()),
            });
        }
    }
    out
}

fn read_previous(path: &Path, hash: &str) -> Result<Vec<CellResult>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn last line from an interrupted run is ignored.
        if let Ok(c) = serde_json::from_str::<CellResult>(&line) {
            if c.config_hash == hash && c.is_complete() {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Run every (fold, method, evaluator, ε_target) cell, streaming finished
/// cells to `out/cells.jsonl` and writing `result.json` and `result.csv` at
/// the end. With `resume`, complete cells already on disk for the same
/// config hash are kept and not recomputed.
pub fn run(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<ExperimentResult> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let cells_path = out.join(CELLS_FILE);
    let previous = if resume {
        read_previous(&cells_path, &hash)?
    } else {
        Vec::new()
    };
    let done: BTreeSet<_> = previous.iter().map(CellResult::key).collect();

    let (mut raw, load) = cfg.data.load()?;
    if cfg.desired_class != DESIRED {
        raw.y.iter_mut().for_each(|y| *y = 1 - *y);
    }
    let ds = if cfg.balance { raw.balance(cfg.split.seed) } else { raw };
    let mut folds = stratified_folds(&ds.y, &cfg.split)?;
    if let Some(k) = cfg.max_folds {
        folds.truncate(k.max(1));
    }
    let cells_per_method = cfg.epsilon_targets.len() * cfg.evaluators.len();
    let pending = |f: usize, m: Method| {
        (0..cfg.epsilon_targets.len())
            .flat_map(|t| (0..cfg.evaluators.len()).map(move |e| (t, e)))
            .any(|(t, e)| !done.contains(&(f, m, e, t)))
    };

    // The log is rewritten with only the reused cells so it never mixes configs.
    let mut file = File::create(&cells_path)?;
    for c in &previous {
        writeln!(file, "{}", serde_json::to_string(c)?)?;
    }
    let (tx, rx) = mpsc::channel::<CellResult>();
    let writer = std::thread::spawn(move || -> Result<Vec<CellResult>> {
        let mut w = BufWriter::new(file);
        let mut got = Vec::new();
        for cell in rx {
            writeln!(w, "{}", serde_json::to_string(&cell)?)?;
            w.flush()?;
            got.push(cell);
        }
        Ok(got)
    });

    folds.par_iter().enumerate().for_each_with(tx, |tx, (fi, split)| {
        let methods: Vec<Method> = cfg.methods.iter().copied().filter(|&m| pending(fi, m)).collect();
        if methods.is_empty() {
            return;
        }
        let fold = match prepare_fold(cfg, &ds, fi, split) {
            Ok(f) => f,
            Err(e) => {
                for &m in &methods {
                    for c in error_cells(cfg, &hash, fi, m, &e.to_string()) {
                        let _ = tx.send(c);
                    }
                }
                return;
            }
        };
        methods.par_iter().for_each_with(tx.clone(), |tx, &method| {
            let mut mr = MethodRun {
                cfg,
                fold: &fold,
                method,
                start: Instant::now(),
                exceeded: AtomicBool::new(false),
                val: BTreeMap::new(),
                test: BTreeMap::new(),
            };
            for t in 0..cfg.epsilon_targets.len() {
                for e in 0..cfg.evaluators.len() {
                    if !done.contains(&(fi, method, e, t)) {
                        let _ = tx.send(mr.cell(&hash, t, e));
                    }
                }
            }
        });
    });

    let fresh = writer
        .join()
        .map_err(|_| Error::Numerical("result writer panicked".into()))??;
    let mut cells = previous;
    cells.extend(fresh);
    cells.sort_by_key(CellResult::key);
    debug_assert!(cells.len() <= folds.len() * cfg.methods.len() * cells_per_method);
    let partial = cells.iter().any(|c| !c.is_complete());
    let result = ExperimentResult {
        config_hash: hash,
        config: cfg.clone(),
        load,
        cells,
        partial,
    };
    fs::write(out.join(RESULT_JSON), serde_json::to_string_pretty(&result)?)?;
    result.write_csv(File::create(out.join(RESULT_CSV))?)?;
    Ok(result)
}
