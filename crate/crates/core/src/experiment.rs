//! Simulation sweeps: configuration, resumable execution and report files.
//!
//! A sweep is split into cells, one per ρ value. Each cell draws
//! `replications` datasets with seeds `base_seed + k`, standardizes them and
//! runs every (loss, procedure, penalty) combination on the same data.
//! Finished cells are stored under `cells/` keyed by a hash of everything
//! that determines their content, so an interrupted sweep resumes where it
//! stopped and produces the same files as an uninterrupted one.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gic::{lft_from_path, sscv_from_path, ssnet_from_path, GicPenalty, Procedure, RefitCache, SelectionOutcome};
use crate::loss::LossSpec;
use crate::metrics::{aggregate, ReplicationRecord};
use crate::sim::{generate, GroundTruth, SimModel, SimModelSpec};
use crate::solver::{fit_path, SolverConfig};

fn default_lambda_count() -> usize {
    20
}

fn default_lambda_ratio() -> f64 {
    0.01
}

fn default_folds() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Sweep description as written in a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: SimModel,
    pub n: usize,
    pub p: usize,
    pub replications: usize,
    pub rho_grid: Vec<f64>,
    /// Any of `ssnet`, `sscv`, `lft`.
    pub procedures: Vec<String>,
    /// GIC penalties for SSnet and SSCV, e.g. `bic`, `ebic:1`.
    pub penalties: Vec<String>,
    /// `logistic`, `quadratic`, `huber` or `huber:<δ>`.
    pub losses: Vec<String>,
    pub base_seed: u64,
    #[serde(default = "default_lambda_count")]
    pub lambda_count: usize,
    #[serde(default = "default_lambda_ratio")]
    pub lambda_ratio: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// One (loss, procedure, penalty) combination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Combo {
    pub loss: LossSpec,
    pub procedure: Procedure,
    pub penalty: GicPenalty,
}

/// Counts for a sweep, computed without running it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExperimentPlan {
    pub cells: usize,
    /// Simulated datasets over all cells.
    pub datasets: usize,
    /// Replications × ρ values × procedures, for each loss.
    pub runs_per_loss: usize,
    /// Every (dataset, loss, procedure, penalty) selection.
    pub selection_runs: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.rho_grid.is_empty() {
            return bad("rho_grid is empty".into());
        }
        if let Some(r) = self.rho_grid.iter().find(|r| !(r.abs() < 1.0)) {
            return bad(format!("rho {r} is outside (-1, 1)"));
        }
        SimModelSpec {
            model: self.model,
            n: self.n,
            p: self.p,
            rho: 0.0,
            seed: 0,
        }
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
        if self.lambda_count == 0 || !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return bad("lambda_count must be positive and lambda_ratio in (0, 1)".into());
        }
        if self.folds < 2 || self.folds > self.n {
            return bad(format!("folds must lie in 2..={}", self.n));
        }
        let combos = self.combos()?;
        if combos.is_empty() {
            return bad("no (loss, procedure, penalty) combinations".into());
        }
        Ok(())
    }

    pub fn procedure_list(&self) -> Result<Vec<Procedure>> {
        let mut out = Vec::new();
        for s in &self.procedures {
            let p: Procedure = s.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            if p == Procedure::Ss {
                return Err(Error::Config(
                    "procedure `ss` needs a fixed lambda and is not available in sweeps".into(),
                ));
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Combinations in run order: by loss, then procedure, then penalty.
    pub fn combos(&self) -> Result<Vec<Combo>> {
        let procedures = self.procedure_list()?;
        let penalties = self
            .penalties
            .iter()
            .map(|s| s.parse::<GicPenalty>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Config(e.to_string()))?;
        let losses = self
            .losses
            .iter()
            .map(|s| s.parse::<LossSpec>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::new();
        for &loss in &losses {
            for &procedure in &procedures {
                if procedure == Procedure::Lft {
                    out.push(Combo {
                        loss,
                        procedure,
                        penalty: GicPenalty::fan_tang(),
                    });
                    continue;
                }
                if penalties.is_empty() {
                    return Err(Error::Config(format!("procedure {procedure} needs at least one penalty")));
                }
                for &penalty in &penalties {
                    out.push(Combo {
                        loss,
                        procedure,
                        penalty,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        self.validate()?;
        let datasets = self.replications * self.rho_grid.len();
        Ok(ExperimentPlan {
            cells: self.rho_grid.len(),
            datasets,
            runs_per_loss: datasets * self.procedures.len(),
            selection_runs: datasets * self.combos()?.len(),
        })
    }

    /// Stable digest of everything that determines the cell at `rho`.
    pub fn cell_key(&self, rho: f64, solver: &SolverConfig) -> String {
        let descriptor = format!(
            "v1|{}|{}|{}|{}|{:?}|{:?}|{:?}|{:?}|{}|{}|{:?}|{}|{:?}",
            self.model,
            self.n,
            self.p,
            self.replications,
            rho.to_bits(),
            self.procedures,
            self.penalties,
            self.losses,
            self.base_seed,
            self.lambda_count,
            self.lambda_ratio.to_bits(),
            self.folds,
            solver,
        );
        let digest = Sha256::digest(descriptor.as_bytes());
        digest.iter().take(16).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Result of one combination on one replication.
#[derive(Clone, Debug)]
pub struct ComboResult {
    pub combo: Combo,
    pub replication: usize,
    pub seed: u64,
    pub outcome: std::result::Result<ReplicationRecord, String>,
}

fn record_from(outcome: &SelectionOutcome, truth: &GroundTruth, coefs_original: Vec<f64>, p: usize) -> ReplicationRecord {
    ReplicationRecord {
        selected: outcome.selected.clone(),
        family_contained_truth: outcome.family.contains(&truth.true_support),
        refit_coefficients: coefs_original,
        true_support: truth.true_support.clone(),
        true_direction: truth.padded_direction(p),
    }
}

/// Runs every combination of `cfg` on the dataset with seed
/// `base_seed + k` at the given ρ. Failures are captured per combination.
pub fn run_replication(cfg: &ExperimentConfig, rho: f64, k: usize, solver: &SolverConfig) -> Result<Vec<ComboResult>> {
    let combos = cfg.combos()?;
    let seed = cfg.base_seed.wrapping_add(k as u64);
    let spec = SimModelSpec {
        model: cfg.model,
        n: cfg.n,
        p: cfg.p,
        rho,
        seed,
    };
    let fail_all = |msg: String| -> Vec<ComboResult> {
        combos
            .iter()
            .map(|&combo| ComboResult {
                combo,
                replication: k,
                seed,
                outcome: Err(msg.clone()),
            })
            .collect()
    };
    let prepared = generate(&spec).and_then(|(d, truth)| Ok((d.standardize()?, truth)));
    let (d, truth) = match prepared {
        Ok(v) => v,
        Err(e) => return Ok(fail_all(e.to_string())),
    };

    let mut out = Vec::with_capacity(combos.len());
    let mut current: Option<(LossSpec, std::result::Result<crate::solver::PathResult, String>, RefitCache)> = None;
    for combo in combos {
        if current.as_ref().is_none_or(|(l, _, _)| *l != combo.loss) {
            let path = fit_path(&d, &combo.loss, cfg.lambda_count, cfg.lambda_ratio, solver).map_err(|e| e.to_string());
            current = Some((combo.loss, path, RefitCache::new()));
        }
        let (_, path, cache) = current.as_ref().expect("path prepared");
        let outcome = match path {
            Err(e) => Err(e.clone()),
            Ok(path) => {
                let selected = match combo.procedure {
                    Procedure::Ssnet => ssnet_from_path(&d, &combo.loss, path, &combo.penalty, solver, cache, true),
                    Procedure::Sscv => sscv_from_path(&d, &combo.loss, path, cfg.folds, &combo.penalty, solver, seed, cache, true)
                        .map(|r| r.0),
                    Procedure::Lft => lft_from_path(&d, &combo.loss, path),
                    Procedure::Ss => Err(Error::Config("ss is not available in sweeps".into())),
                };
                selected
                    .and_then(|o| {
                        let (_, raw) = d.destandardize_coefficients(o.refit.intercept, &o.refit.coefficients)?;
                        Ok(record_from(&o, &truth, raw, cfg.p))
                    })
                    .map_err(|e| e.to_string())
            }
        };
        out.push(ComboResult {
            combo,
            replication: k,
            seed,
            outcome,
        });
    }
    Ok(out)
}

/// One row of the summary report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub procedure: String,
    pub penalty: String,
    pub loss: String,
    pub rho: f64,
    pub n: usize,
    pub p: usize,
    pub l: usize,
    pub failures: usize,
    pub p_inc: f64,
    pub p_inc_se: f64,
    pub p_equal: f64,
    pub p_equal_se: f64,
    pub p_supset: f64,
    pub p_supset_se: f64,
    pub angle: f64,
    pub angle_se: f64,
}

/// One row per (replication, combination).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub model: String,
    pub rho: f64,
    pub replication: usize,
    pub seed: u64,
    pub procedure: String,
    pub penalty: String,
    pub loss: String,
    /// `ok`, or the error message.
    pub status: String,
    pub selected: String,
    pub family_contains_truth: bool,
    pub angle: f64,
    /// `index:value` pairs for the selected predictors, original scale.
    pub coefficients: String,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub rho: f64,
    pub report: Vec<ReportRow>,
    pub replications: Vec<ReplicationRow>,
    /// Raw per-combination results in (combination, replication) order.
    pub results: Vec<Vec<ComboResult>>,
}

fn loss_label(l: &LossSpec) -> String {
    match l {
        LossSpec::Huber { delta } => format!("huber:{delta}"),
        other => other.name().to_string(),
    }
}

/// Runs one ρ cell in memory.
pub fn run_cell(cfg: &ExperimentConfig, rho: f64, solver: &SolverConfig) -> Result<CellResult> {
    cfg.validate()?;
    let combos = cfg.combos()?;
    let per_rep: Vec<Vec<ComboResult>> = (0..cfg.replications)
        .into_par_iter()
        .map(|k| run_replication(cfg, rho, k, solver))
        .collect::<Result<_>>()?;

    let mut by_combo: Vec<Vec<ComboResult>> = vec![Vec::with_capacity(cfg.replications); combos.len()];
    for rep in per_rep {
        for (c, r) in rep.into_iter().enumerate() {
            by_combo[c].push(r);
        }
    }

    let mut report = Vec::new();
    let mut replications = Vec::new();
    for (combo, results) in combos.iter().zip(&by_combo) {
        let records: Vec<ReplicationRecord> = results.iter().filter_map(|r| r.outcome.as_ref().ok().cloned()).collect();
        let failures = results.len() - records.len();
        let base = ReportRow {
            model: cfg.model.to_string(),
            procedure: combo.procedure.to_string(),
            penalty: combo.penalty.label(),
            loss: loss_label(&combo.loss),
            rho,
            n: cfg.n,
            p: cfg.p,
            l: records.len(),
            failures,
            p_inc: f64::NAN,
            p_inc_se: f64::NAN,
            p_equal: f64::NAN,
            p_equal_se: f64::NAN,
            p_supset: f64::NAN,
            p_supset_se: f64::NAN,
            angle: f64::NAN,
            angle_se: f64::NAN,
        };
        let row = if records.is_empty() {
            base
        } else {
            let agg = aggregate(records)?;
            ReportRow {
                p_inc: agg.p_inc,
                p_inc_se: agg.p_inc_se,
                p_equal: agg.p_equal,
                p_equal_se: agg.p_equal_se,
                p_supset: agg.p_supset,
                p_supset_se: agg.p_supset_se,
                angle: agg.angle,
                angle_se: agg.angle_se,
                ..base
            }
        };
        for r in results {
            let (status, selected, inc, angle, coefficients) = match &r.outcome {
                Ok(rec) => (
                    "ok".to_string(),
                    rec.selected.joined(),
                    rec.family_contained_truth,
                    rec.angle()?,
                    rec.selected
                        .indices()
                        .iter()
                        .map(|&j| format!("{j}:{}", rec.refit_coefficients[j - 1]))
                        .collect::<Vec<_>>()
                        .join(";"),
                ),
                Err(e) => (e.clone(), String::new(), false, f64::NAN, String::new()),
            };
            replications.push(ReplicationRow {
                model: row.model.clone(),
                rho,
                replication: r.replication,
                seed: r.seed,
                procedure: row.procedure.clone(),
                penalty: row.penalty.clone(),
                loss: row.loss.clone(),
                status,
                selected,
                family_contains_truth: inc,
                angle,
                coefficients,
            });
        }
        report.push(row);
    }
    Ok(CellResult {
        rho,
        report,
        replications,
        results: by_combo,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Concatenates CSV texts that share a header.
fn concat_csv(parts: &[String]) -> String {
    let mut out = String::new();
    for (k, part) in parts.iter().enumerate() {
        let body = if k == 0 { part.as_str() } else { part.split_once('\n').map_or("", |(_, rest)| rest) };
        out.push_str(body);
    }
    out
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// What `run_experiment` did.
#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub report: Vec<ReportRow>,
    pub cells_run: usize,
    pub cells_reused: usize,
    pub report_path: PathBuf,
    pub replications_path: PathBuf,
}

/// Runs the sweep into `cfg.output_dir`, reusing finished cells.
///
/// Writes `report.csv`, `replications.csv` and one pair of files per cell
/// under `cells/`.
pub fn run_experiment(cfg: &ExperimentConfig, solver: &SolverConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let cells_dir = dir.join("cells");
    fs::create_dir_all(&cells_dir).map_err(io_err(&cells_dir))?;
    let (mut reports, mut reps) = (Vec::new(), Vec::new());
    let (mut cells_run, mut cells_reused) = (0, 0);
    for &rho in &cfg.rho_grid {
        let key = cfg.cell_key(rho, solver);
        let report_path = cells_dir.join(format!("{key}.report.csv"));
        let reps_path = cells_dir.join(format!("{key}.replications.csv"));
        if report_path.exists() && reps_path.exists() {
            reports.push(fs::read_to_string(&report_path).map_err(io_err(&report_path))?);
            reps.push(fs::read_to_string(&reps_path).map_err(io_err(&reps_path))?);
            cells_reused += 1;
            continue;
        }
        let cell = run_cell(cfg, rho, solver)?;
        let (report_csv, reps_csv) = (to_csv(&cell.report)?, to_csv(&cell.replications)?);
        // the report file marks completion, so it goes last
        write_atomic(&reps_path, &reps_csv)?;
        write_atomic(&report_path, &report_csv)?;
        reports.push(report_csv);
        reps.push(reps_csv);
        cells_run += 1;
    }
    let report_text = concat_csv(&reports);
    let report_path = dir.join("report.csv");
    let replications_path = dir.join("replications.csv");
    write_atomic(&report_path, &report_text)?;
    write_atomic(&replications_path, &concat_csv(&reps))?;
    Ok(ExperimentSummary {
        report: parse_report_csv(&report_text)?,
        cells_run,
        cells_reused,
        report_path,
        replications_path,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Measure {
    PInc,
    PEqual,
    PSupset,
    Angle,
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "p_inc" => Ok(Measure::PInc),
            "p_equal" => Ok(Measure::PEqual),
            "p_supset" => Ok(Measure::PSupset),
            "angle" => Ok(Measure::Angle),
            other => Err(Error::InvalidArgument(format!("unknown measure `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub model: String,
    pub procedure: String,
    pub penalty: String,
    pub loss: String,
    pub rho: f64,
    pub value: f64,
    pub se: f64,
}

/// Long-format plot data for one measure, ordered by configuration then ρ.
pub fn plot_rows(reports: &[ReportRow], measure: Measure) -> Vec<PlotRow> {
    let mut rows: Vec<PlotRow> = reports
        .iter()
        .map(|r| {
            let (value, se) = match measure {
                Measure::PInc => (r.p_inc, r.p_inc_se),
                Measure::PEqual => (r.p_equal, r.p_equal_se),
                Measure::PSupset => (r.p_supset, r.p_supset_se),
                Measure::Angle => (r.angle, r.angle_se),
            };
            PlotRow {
                model: r.model.clone(),
                procedure: r.procedure.clone(),
                penalty: r.penalty.clone(),
                loss: r.loss.clone(),
                rho: r.rho,
                value,
                se,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.model, &a.procedure, &a.penalty, &a.loss)
            .cmp(&(&b.model, &b.procedure, &b.penalty, &b.loss))
            .then(a.rho.total_cmp(&b.rho))
    });
    rows
}

pub fn emit_plot_data(reports: &[ReportRow], measure: Measure) -> Result<String> {
    to_csv(&plot_rows(reports, measure))
}

pub fn parse_plot_csv(text: &str) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
