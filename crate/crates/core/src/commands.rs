//! Command implementations behind the `ifenn` binary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::driver::{run_fem, run_ifenn, IncrementView, RunMode, RunOutput, RunRecord};
use crate::error::{Error, Result};
use crate::output::{
    find_snapshot, read_reaction_csv, snapshot_file_name, write_reaction_csv, write_snapshot_index,
    write_timing_csv, FieldSnapshot, IndexEntry, ReactionRow, REACTION_FILE, SNAPSHOT_DIR,
    SNAPSHOT_INDEX, TIMING_FILE, TOOL_VERSION,
};
use crate::picnn::{load_model, save_model, train, write_loss_csv, PicnnModel};
use crate::pixel::{cap_field, gp_to_pixels, PixelGrid};
use crate::scalar::Scalar;
use crate::scenario::{Precision, ScenarioConfig};

pub const GENERATE_DIR: &str = "generate";
pub const LOSS_FILE: &str = "loss.csv";

/// Field names used in snapshot files.
pub const FIELD_H: &str = "H";
pub const FIELD_H_CAPPED: &str = "H_capped";
pub const FIELD_PHI: &str = "phi";

pub fn run_dir_name(mode: RunMode) -> &'static str {
    match mode {
        RunMode::FemOnly => "run-fem",
        RunMode::Ifenn => "run-ifenn",
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the requested fields of each selected increment and keeps the index.
struct SnapshotWriter<'a> {
    dir: PathBuf,
    hash: String,
    h_cap: f64,
    fields: &'a [&'a str],
    entries: Vec<IndexEntry>,
    written: Vec<PathBuf>,
}

impl<'a> SnapshotWriter<'a> {
    fn new(run_dir: &Path, cfg: &ScenarioConfig, fields: &'a [&'a str]) -> Result<Self> {
        let dir = run_dir.join(SNAPSHOT_DIR);
        create_dir(&dir)?;
        Ok(Self {
            dir,
            hash: cfg.short_hash(),
            h_cap: cfg.run.conditioning.h_cap,
            fields,
            entries: Vec::new(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, view: &IncrementView<f64>) -> Result<()> {
        let n = view.row.increment;
        let h = gp_to_pixels(view.history, view.grid)?;
        for &field in self.fields {
            let (grid, units) = match field {
                FIELD_H => (h.clone(), "N/mm^2"),
                FIELD_H_CAPPED => (cap_field(&h, self.h_cap), "N/mm^2"),
                _ => (gp_to_pixels(view.phi_gp, view.grid)?, "1"),
            };
            let file = snapshot_file_name(field, n);
            let snap = FieldSnapshot {
                increment: n,
                field: field.into(),
                units: units.into(),
                config_hash: self.hash.clone(),
                grid,
            };
            let path = self.dir.join(&file);
            snap.save(&path)?;
            self.entries.push(IndexEntry {
                increment: n,
                field: field.into(),
                file,
            });
            self.written.push(path);
        }
        Ok(())
    }

    fn finish(self) -> Result<Vec<PathBuf>> {
        write_snapshot_index(&self.entries, &self.hash, &self.dir.join(SNAPSHOT_INDEX))?;
        Ok(self.written)
    }
}

fn write_record(dir: &Path, record: &RunRecord, hash: &str) -> Result<()> {
    write_reaction_csv(&record.rows, hash, &dir.join(REACTION_FILE))?;
    write_timing_csv(&record.rows, hash, &dir.join(TIMING_FILE))
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub dir: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub record: RunRecord,
}

/// FEM-only run that exports history maps (raw and capped) and phase-field maps
/// at the training increments and any listed snapshot increments.
pub fn cmd_generate(cfg: &ScenarioConfig, out: &Path) -> Result<GenerateSummary> {
    let dir = out.join(GENERATE_DIR);
    create_dir(&dir)?;
    let mesh = cfg.mesh()?;
    let mat = cfg.material();
    let wanted: BTreeSet<usize> = cfg
        .training
        .iter()
        .flat_map(|t| t.increments.iter().copied())
        .collect();
    let fields = [FIELD_H, FIELD_H_CAPPED, FIELD_PHI];
    let mut writer = SnapshotWriter::new(&dir, cfg, &fields)?;
    let run_cfg = cfg.run.clone();
    let RunOutput { record, .. } = run_fem(
        &mesh,
        &mat,
        &cfg.schedule,
        &cfg.boundary,
        &run_cfg,
        &mut |view| {
            let n = view.row.increment;
            if wanted.contains(&n) || run_cfg.wants_snapshot(n) {
                writer.write(view)?;
            }
            Ok(())
        },
    )?;
    let snapshots = writer.finish()?;
    write_record(&dir, &record, &cfg.short_hash())?;
    Ok(GenerateSummary {
        dir,
        snapshots,
        record,
    })
}

/// Default training inputs: raw history maps of the training increments written by `generate`.
pub fn default_training_inputs(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let t = cfg.training()?;
    if t.increments.is_empty() {
        return Err(Error::Config(
            "[training] increments is empty and no snapshot files were given".into(),
        ));
    }
    let dir = out.join(GENERATE_DIR).join(SNAPSHOT_DIR);
    Ok(t.increments
        .iter()
        .map(|&n| dir.join(snapshot_file_name(FIELD_H, n)))
        .collect())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub loss_path: PathBuf,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Trains a fresh network on history snapshots and writes the model and loss history.
pub fn cmd_train(
    cfg: &ScenarioConfig,
    snapshots: &[PathBuf],
    model_path: &Path,
    loss_path: &Path,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<TrainSummary> {
    let t = cfg.training()?;
    if snapshots.is_empty() {
        return Err(Error::Config("no training snapshots given".into()));
    }
    let mut maps = Vec::with_capacity(snapshots.len());
    for p in snapshots {
        let snap = FieldSnapshot::<f64>::load(p)?;
        if snap.field != FIELD_H && snap.field != FIELD_H_CAPPED {
            return Err(Error::Config(format!(
                "{}: expected a history map, found field {:?}",
                p.display(),
                snap.field
            )));
        }
        if let Some(first) = maps.first() {
            let first: &PixelGrid<f64> = first;
            if !first.same_shape(&snap.grid) {
                return Err(Error::Shape(format!(
                    "{}: {} x {} map does not match the first snapshot ({} x {})",
                    p.display(),
                    snap.grid.rows,
                    snap.grid.cols,
                    first.rows,
                    first.cols
                )));
            }
        }
        maps.push(snap.grid);
    }
    let summary = match t.precision {
        Precision::F32 => train_as::<f32>(cfg, &maps, model_path, loss_path, progress)?,
        Precision::F64 => train_as::<f64>(cfg, &maps, model_path, loss_path, progress)?,
    };
    Ok(summary)
}

fn train_as<T: Scalar>(
    cfg: &ScenarioConfig,
    maps: &[PixelGrid<f64>],
    model_path: &Path,
    loss_path: &Path,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<TrainSummary> {
    let t = cfg.training()?;
    let tc = t.train_config();
    let batch: Vec<PixelGrid<T>> = maps.iter().map(|m| m.cast()).collect();
    let mat = cfg.material().cast::<T>();
    let mut model =
        PicnnModel::<T>::with_init_scale(t.architecture(), tc.rng_seed, tc.init_scale.as_ref())?
            .with_input_scale(t.input_scale)?;
    let report = train(
        &mut model,
        &batch,
        &mat,
        &tc,
        cfg.run.conditioning.h_cap,
        |e, l| progress(e, l),
    )?;
    model.meta.precision = t.precision.name().into();
    model.meta.config_hash = Some(cfg.short_hash());
    for p in [model_path, loss_path] {
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
    }
    save_model(&model, model_path)?;
    let provenance = [
        format!("ifenn {TOOL_VERSION} loss"),
        format!("config {}", cfg.short_hash()),
    ];
    write_loss_csv(&report.loss_history, &provenance, loss_path)?;
    Ok(TrainSummary {
        model_path: model_path.to_path_buf(),
        loss_path: loss_path.to_path_buf(),
        initial_loss: report.loss_history.first().copied().unwrap_or(f64::NAN),
        final_loss: report.final_loss,
        epochs: tc.epochs,
    })
}

/// Network prediction for a raw history map, capped like the training inputs.
pub fn predict_phi(
    model: &PicnnModel<f64>,
    h: &PixelGrid<f64>,
    h_cap: f64,
) -> Result<PixelGrid<f64>> {
    model.forward(&cap_field(h, h_cap))
}

/// Compares network predictions with the FEM phase field at the given increments of a `generate` run.
pub fn evaluate_training_fit(
    model: &PicnnModel<f64>,
    generate_dir: &Path,
    increments: &[usize],
    h_cap: f64,
) -> Result<Vec<FieldDiff>> {
    let mut out = Vec::with_capacity(increments.len());
    for &n in increments {
        let missing = |f: &str| {
            Error::Config(format!(
                "no {f} snapshot for increment {n} in {}",
                generate_dir.display()
            ))
        };
        let h = find_snapshot(generate_dir, FIELD_H, n)?.ok_or_else(|| missing(FIELD_H))?;
        let phi = find_snapshot(generate_dir, FIELD_PHI, n)?.ok_or_else(|| missing(FIELD_PHI))?;
        let pred = predict_phi(model, &FieldSnapshot::<f64>::load(&h)?.grid, h_cap)?;
        out.push(field_diff(
            n,
            &FieldSnapshot::<f64>::load(&phi)?.grid,
            &pred,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub snapshots: Vec<PathBuf>,
}

impl RunSummary {
    pub fn report(&self) -> String {
        let r = &self.record;
        let sum = |f: fn(&crate::driver::IncrementRow) -> f64| r.rows.iter().map(f).sum::<f64>();
        let activation = r
            .activation_increment
            .map_or("never".to_string(), |n| n.to_string());
        format!(
            "increments: {}\npeak reaction: {:.6e} N at increment {}\nactivation increment: {activation}\n\
             time: total {:.2} s, equilibrium {:.2} s, phase field {:.2} s",
            r.rows.len(),
            r.peak_reaction(),
            r.peak_increment().map_or("-".to_string(), |n| n.to_string()),
            sum(|x| x.t_total),
            sum(|x| x.t_equilibrium),
            sum(|x| x.t_phase),
        )
    }
}

/// Runs the scenario in its configured mode, writing the reaction table, timings and snapshots.
pub fn cmd_run(cfg: &ScenarioConfig, model_path: Option<&Path>, out: &Path) -> Result<RunSummary> {
    cmd_run_observed(cfg, model_path, out, &mut |_| Ok(()))
}

/// As [`cmd_run`], also handing every finished increment to `observer`.
pub fn cmd_run_observed(
    cfg: &ScenarioConfig,
    model_path: Option<&Path>,
    out: &Path,
    observer: &mut dyn FnMut(&IncrementView<f64>) -> Result<()>,
) -> Result<RunSummary> {
    let mesh = cfg.mesh()?;
    let mat = cfg.material();
    let model = match cfg.run.mode {
        RunMode::FemOnly => None,
        RunMode::Ifenn => {
            let path = model_path
                .ok_or_else(|| Error::Config("run.mode = \"ifenn\" needs a model file".into()))?;
            if !path.exists() {
                return Err(Error::Config(format!(
                    "model file {} does not exist",
                    path.display()
                )));
            }
            Some(load_model::<f64>(path)?)
        }
    };
    let dir = out.join(run_dir_name(cfg.run.mode));
    create_dir(&dir)?;
    let fields = [FIELD_H, FIELD_PHI];
    let mut writer = SnapshotWriter::new(&dir, cfg, &fields)?;
    let run_cfg = cfg.run.clone();
    let mut observer = |view: &IncrementView<f64>| {
        if run_cfg.wants_snapshot(view.row.increment) {
            writer.write(view)?;
        }
        observer(view)
    };
    let output = match &model {
        None => run_fem(
            &mesh,
            &mat,
            &cfg.schedule,
            &cfg.boundary,
            &run_cfg,
            &mut observer,
        )?,
        Some(m) => run_ifenn(
            &mesh,
            &mat,
            &cfg.schedule,
            &cfg.boundary,
            &run_cfg,
            m,
            &mut observer,
        )?,
    };
    let snapshots = writer.finish()?;
    write_record(&dir, &output.record, &cfg.short_hash())?;
    Ok(RunSummary {
        dir,
        record: output.record,
        snapshots,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldDiff {
    pub increment: usize,
    /// `|a - b|_2 / |a|_2` over all pixels.
    pub rel_l2: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TipColumns {
    pub increment: usize,
    pub a: Option<usize>,
    pub b: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub increments: usize,
    /// Displacement window `[u0, u1]` for the reaction statistics.
    pub window: [f64; 2],
    pub max_abs_reaction_diff: f64,
    pub mean_abs_reaction_diff: f64,
    pub peak_a: f64,
    pub peak_b: f64,
    /// `|peak_b - peak_a| / peak_a`.
    pub peak_rel_diff: f64,
    /// Displacement at the peak of record `a`.
    pub u_peak_a: f64,
    pub phi_diffs: Vec<FieldDiff>,
    pub tip_columns: Vec<TipColumns>,
}

/// Compares two result directories; `window` defaults to the whole schedule.
pub fn cmd_compare(a: &Path, b: &Path, window: Option<[f64; 2]>) -> Result<CompareReport> {
    let ra = read_reaction_csv(&a.join(REACTION_FILE))?;
    let rb = read_reaction_csv(&b.join(REACTION_FILE))?;
    let report = compare_rows(&ra, &rb, window)?;
    let mut phi_diffs = Vec::new();
    for row in &ra {
        let n = row.increment;
        if let (Some(pa), Some(pb)) = (
            find_snapshot(a, FIELD_PHI, n)?,
            find_snapshot(b, FIELD_PHI, n)?,
        ) {
            let fa = FieldSnapshot::<f64>::load(&pa)?.grid;
            let fb = FieldSnapshot::<f64>::load(&pb)?.grid;
            phi_diffs.push(field_diff(n, &fa, &fb)?);
        }
    }
    Ok(CompareReport {
        phi_diffs,
        ..report
    })
}

pub fn field_diff(increment: usize, a: &PixelGrid<f64>, b: &PixelGrid<f64>) -> Result<FieldDiff> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "field maps {}x{} and {}x{} differ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (mut num, mut den, mut linf) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.values.iter().zip(&b.values) {
        num += (x - y) * (x - y);
        den += x * x;
        linf = linf.max((x - y).abs());
    }
    let rel_l2 = if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    };
    Ok(FieldDiff {
        increment,
        rel_l2,
        linf,
    })
}

/// Reaction statistics of two tables over matching schedules.
pub fn compare_rows(
    a: &[ReactionRow],
    b: &[ReactionRow],
    window: Option<[f64; 2]>,
) -> Result<CompareReport> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "records have {} and {} increments",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(b) {
        let tol = 1e-12 * x.displacement.abs().max(y.displacement.abs()).max(1e-300);
        if x.increment != y.increment || (x.displacement - y.displacement).abs() > tol {
            return Err(Error::Config(format!(
                "schedules differ at increment {} (u = {:e} vs {:e})",
                x.increment, x.displacement, y.displacement
            )));
        }
    }
    let peak = |r: &[ReactionRow]| r.iter().map(|x| x.reaction).fold(0.0, f64::max);
    let (peak_a, peak_b) = (peak(a), peak(b));
    let u_peak_a = a
        .iter()
        .find(|x| x.reaction == peak_a)
        .map_or(0.0, |x| x.displacement);
    let window = window.unwrap_or([0.0, a.last().map_or(0.0, |x| x.displacement)]);
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(x, _)| x.displacement >= window[0] && x.displacement <= window[1])
        .map(|(x, y)| (x.reaction - y.reaction).abs())
        .collect();
    let max_abs_reaction_diff = diffs.iter().copied().fold(0.0, f64::max);
    let mean_abs_reaction_diff = if diffs.is_empty() {
        0.0
    } else {
        diffs.iter().sum::<f64>() / diffs.len() as f64
    };
    Ok(CompareReport {
        increments: a.len(),
        window,
        max_abs_reaction_diff,
        mean_abs_reaction_diff,
        peak_a,
        peak_b,
        peak_rel_diff: if peak_a > 0.0 {
            (peak_b - peak_a).abs() / peak_a
        } else {
            (peak_b - peak_a).abs()
        },
        u_peak_a,
        phi_diffs: Vec::new(),
        tip_columns: a
            .iter()
            .zip(b)
            .map(|(x, y)| TipColumns {
                increment: x.increment,
                a: x.tip_col,
                b: y.tip_col,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::SolverMode;

    fn rows(n: usize, du: f64, f: impl Fn(usize) -> f64) -> Vec<ReactionRow> {
        (1..=n)
            .map(|i| ReactionRow {
                increment: i,
                displacement: i as f64 * du,
                reaction: f(i),
                max_phi: 0.0,
                mode: SolverMode::Fem,
                stag_iters: 1,
                tip_col: None,
            })
            .collect()
    }

    #[test]
    fn identical_records_have_zero_differences() {
        let a = rows(10, 1e-3, |i| (i as f64).sin().abs());
        let r = compare_rows(&a, &a, None).unwrap();
        assert_eq!(r.max_abs_reaction_diff, 0.0);
        assert_eq!(r.mean_abs_reaction_diff, 0.0);
        assert_eq!(r.peak_rel_diff, 0.0);
    }

    #[test]
    fn mismatched_schedules_are_rejected() {
        let a = rows(10, 1e-3, |_| 1.0);
        assert!(compare_rows(&a, &rows(9, 1e-3, |_| 1.0), None).is_err());
        assert!(compare_rows(&a, &rows(10, 2e-3, |_| 1.0), None).is_err());
    }

    #[test]
    fn window_restricts_statistics() {
        let a = rows(4, 1.0, |_| 1.0);
        let b = rows(4, 1.0, |i| if i == 4 { 3.0 } else { 1.5 });
        let r = compare_rows(&a, &b, Some([0.0, 3.0])).unwrap();
        assert_eq!(r.max_abs_reaction_diff, 0.5);
        let r = compare_rows(&a, &b, None).unwrap();
        assert_eq!(r.max_abs_reaction_diff, 2.0);
        assert_eq!(r.mean_abs_reaction_diff, 3.5 / 4.0);
    }

    #[test]
    fn field_diff_values() {
        let a = PixelGrid::filled(2, 2, 1.0, 1.0);
        let b = PixelGrid::filled(2, 2, 0.5, 1.0);
        let d = field_diff(1, &a, &b).unwrap();
        assert_eq!(d.linf, 0.5);
        assert!((d.rel_l2 - 0.5).abs() < 1e-15);
        assert!(field_diff(1, &a, &PixelGrid::filled(1, 2, 0.0, 1.0)).is_err());
    }
}
