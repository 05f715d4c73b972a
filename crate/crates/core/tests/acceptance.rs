//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The desk-scale criteria (7 to 11) generate data, train the network for the full
//! 10000 epochs and run five scenarios, which takes well over an hour on one core.
//! `IFENN_ACCEPTANCE=quick` skips them. `IFENN_ACCEPTANCE_STRICT=1` makes any FAIL
//! a non-zero exit; otherwise only a crash does.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ifenn::commands::{
    self, cmd_compare, cmd_generate, cmd_run_observed, cmd_train, CompareReport, GENERATE_DIR,
};
use ifenn::driver::{IncrementView, RunMode, RunRecord};
use ifenn::picnn::{load_model, StencilKind};
use ifenn::pixel::{gp_to_pixels, PixelGrid};
use ifenn::scenario::ScenarioConfig;
use ifenn::Result;

// Thresholds.
const SPLIT_TOL: f64 = 1e-10;
const UNIFORM_H_TOL: f64 = 1e-8;
const PROFILE_TOL: f64 = 0.02;
const STENCIL_TOL: f64 = 1e-9;
const GRADIENT_TOL: f64 = 1e-4;
const D4_TOL: f64 = 1e-12;
const LOSS_RATIO: f64 = 1e-2;
const PHI_REL_L2: f64 = 0.05;
const PHI_LINF: f64 = 0.15;
const ACTIVATION_PHI: f64 = 0.99;
const PEAK_REL: f64 = 0.05;
const MEAN_DIFF_REL: f64 = 0.05;
const TIP_PIXELS: usize = 3;
const PROPAGATION_SHARE: f64 = 0.9;
const CRACKED: f64 = 0.9;

struct Line {
    id: usize,
    name: &'static str,
    pass: Option<bool>,
    detail: String,
}

fn main() {
    let quick = std::env::var("IFENN_ACCEPTANCE").is_ok_and(|v| v == "quick");
    let strict = std::env::var("IFENN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&work);
    fs::create_dir_all(&work).expect("work dir");
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");

    let mut lines = vec![
        c1_split(),
        c2_phasefield(),
        c3_stencils(),
        c4_residual(),
        c5_gradient(),
        c6_equivariance(),
    ];
    if quick {
        let names = [
            "training viability",
            "hybrid-run fidelity",
            "schedule generalization",
            "shape generalization",
            "double crack",
        ];
        for (i, name) in names.into_iter().enumerate() {
            lines.push(Line {
                id: 7 + i,
                name,
                pass: None,
                detail: "skipped (IFENN_ACCEPTANCE=quick)".into(),
            });
        }
    } else {
        let desk = Desk::new(&configs, &work);
        lines.extend(desk.criteria());
    }
    lines.push(c12_reproducibility(&work));
    lines.sort_by_key(|l| l.id);

    println!();
    let mut failed = 0;
    for l in &lines {
        let tag = match l.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("criterion {:>2} {tag} {}: {}", l.id, l.name, l.detail);
    }
    println!(
        "\nacceptance: {} pass, {failed} fail, {} skipped",
        lines.iter().filter(|l| l.pass == Some(true)).count(),
        lines.iter().filter(|l| l.pass.is_none()).count()
    );
    if strict && failed > 0 {
        std::process::exit(1);
    }
}

fn line(id: usize, name: &'static str, pass: bool, detail: String) -> Line {
    Line {
        id,
        name,
        pass: Some(pass),
        detail,
    }
}

fn c1_split() -> Line {
    let worst = common::spectral_split_worst(10_000, 1);
    line(
        1,
        "spectral split",
        worst <= SPLIT_TOL,
        format!("worst rel error {worst:.2e} over 1e4 strains (<= {SPLIT_TOL:e})"),
    )
}

fn c2_phasefield() -> Line {
    let uniform = common::uniform_history_worst();
    let e = [3, 6, 9].map(common::crack_profile_error);
    let pass = uniform <= UNIFORM_H_TOL && e[1] <= PROFILE_TOL && e[0] > e[1] && e[1] > e[2];
    line(
        2,
        "phase-field analytic checks",
        pass,
        format!("uniform-H max error {uniform:.2e}; profile L2 error {:.4} / {:.4} / {:.4} at lc/h 3 / 6 / 9", e[0], e[1], e[2]),
    )
}

fn c3_stencils() -> Line {
    let k5 = common::stencil_quadratic_worst(StencilKind::K5, 3);
    let k9s = common::stencil_quadratic_worst(StencilKind::K9Star, 3);
    let id = common::k9_star_identity_worst(3);
    let worst = k5.max(k9s).max(id);
    line(
        3,
        "stencil exactness",
        worst <= STENCIL_TOL,
        format!("K5 {k5:.2e}, K9* {k9s:.2e}, K9* identity {id:.2e}"),
    )
}

fn c4_residual() -> Line {
    let bad = common::residual_oracle_mismatches(4);
    line(
        4,
        "residual oracle",
        bad == 0,
        format!("{bad} of 24 grid/stencil cases differ bitwise"),
    )
}

fn c5_gradient() -> Line {
    let worst = (0..5).map(common::gradient_check_worst).fold(0.0, f64::max);
    line(
        5,
        "gradient check",
        worst <= GRADIENT_TOL,
        format!("max rel error {worst:.2e} over 5 seeds, both losses"),
    )
}

fn c6_equivariance() -> Line {
    let worst = common::d4_equivariance_worst(6);
    line(
        6,
        "D4 equivariance",
        worst <= D4_TOL,
        format!("max abs gap {worst:.2e}"),
    )
}

fn c12_reproducibility(work: &Path) -> Line {
    let cfg = ScenarioConfig::from_toml(REPRO_CONFIG).expect("built-in config");
    let runs = [work.join("repro-a"), work.join("repro-b")];
    for out in &runs {
        let pipeline = || -> Result<()> {
            cmd_generate(&cfg, out)?;
            let inputs = commands::default_training_inputs(&cfg, out)?;
            cmd_train(
                &cfg,
                &inputs,
                &out.join("model.json"),
                &out.join("loss.csv"),
                &mut |_, _| {},
            )?;
            let mut ifenn = cfg.clone();
            ifenn.run.mode = RunMode::Ifenn;
            commands::cmd_run(&ifenn, Some(&out.join("model.json")), out)?;
            let mut fem = cfg.clone();
            fem.run.mode = RunMode::FemOnly;
            commands::cmd_run(&fem, None, out)?;
            Ok(())
        };
        if let Err(e) = pipeline() {
            return line(
                12,
                "reproducibility",
                false,
                format!("pipeline failed: {e}"),
            );
        }
    }
    let (files, differing) = compare_trees(&runs[0], &runs[1]);
    line(
        12,
        "reproducibility",
        files > 0 && differing.is_empty(),
        format!("{files} files compared (timing tables excluded), differing: {differing:?}"),
    )
}

/// Byte comparison of every file under `a` with its twin under `b`, skipping wall-clock timings.
fn compare_trees(a: &Path, b: &Path) -> (usize, Vec<String>) {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in fs::read_dir(dir).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(a, &mut files);
    files.retain(|p| p.file_name().is_some_and(|n| n != "timing.csv"));
    let differing = files
        .iter()
        .filter(|p| fs::read(p).ok() != fs::read(b.join(p.strip_prefix(a).unwrap())).ok())
        .map(|p| p.strip_prefix(a).unwrap().display().to_string())
        .collect();
    (files.len(), differing)
}

const REPRO_CONFIG: &str = r#"name = "repro"

[geometry]
lx = 1.0
ly = 1.0
nx = 24
ny = 24

[[geometry.notches]]
start = [0.0, 0.5]
end = [0.375, 0.5]

[material]
lambda = 121154.0
mu = 80770.0
gc = 2.7
lc = 0.1

[schedule]
segments = [{ count = 16, delta_u = 4e-4 }]

[run]
activation_phi = 0.5
snapshot_every = 4

[training]
increments = [10, 12]
architecture = [1, 6, 6, 1]
epochs = 40
seed = 12
"#;

/// Per-increment audit of the two irreversibility conditions.
#[derive(Default)]
struct Audit {
    prev: Option<(Vec<f64>, Vec<f64>)>,
    phi_decreases: usize,
    h_decreases: usize,
    last_phi: Option<PixelGrid<f64>>,
    /// Increments at which both notch-adjacent probes were cracked, and a band connected them.
    probes: Vec<(usize, usize)>,
    nucleated: [Option<usize>; 2],
    spanned: Option<usize>,
}

impl Audit {
    fn observe(&mut self, v: &IncrementView<f64>) -> Result<()> {
        let phi = gp_to_pixels(v.phi_gp, v.grid)?;
        if let Some((p_phi, p_h)) = &self.prev {
            self.phi_decreases += phi.values.iter().zip(p_phi).filter(|(a, b)| a < b).count();
            self.h_decreases += v.history.iter().zip(p_h).filter(|(a, b)| a < b).count();
        }
        if !self.probes.is_empty() {
            for (k, &(r, c)) in self.probes.iter().enumerate() {
                if self.nucleated[k].is_none()
                    && (phi.at(r, c) > CRACKED || phi.at(r - 1, c) > CRACKED)
                {
                    self.nucleated[k] = Some(v.row.increment);
                }
            }
            if self.spanned.is_none() && connects(&phi, self.probes[0].1, self.probes[1].1) {
                self.spanned = Some(v.row.increment);
            }
        }
        self.prev = Some((phi.values.clone(), v.history.to_vec()));
        self.last_phi = Some(phi);
        Ok(())
    }
}

/// Whether a 4-connected set of cracked pixels touches both column `c0` and column `c1`.
fn connects(phi: &PixelGrid<f64>, c0: usize, c1: usize) -> bool {
    let (rows, cols) = (phi.rows, phi.cols);
    let mut seen = vec![false; rows * cols];
    let mut stack: Vec<usize> = (0..rows)
        .map(|r| r * cols + c0)
        .filter(|&i| phi.values[i] > CRACKED)
        .collect();
    for &i in &stack {
        seen[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (r, c) = (i / cols, i % cols);
        if c == c1 {
            return true;
        }
        let mut push = |j: usize| {
            if !seen[j] && phi.values[j] > CRACKED {
                seen[j] = true;
                stack.push(j);
            }
        };
        if r > 0 {
            push(i - cols);
        }
        if r + 1 < rows {
            push(i + cols);
        }
        if c > 0 {
            push(i - 1);
        }
        if c + 1 < cols {
            push(i + 1);
        }
    }
    false
}

struct Desk {
    configs: PathBuf,
    work: PathBuf,
}

struct Trained {
    model: PathBuf,
    fem: RunRecord,
    fem_dir: PathBuf,
}

impl Desk {
    fn new(configs: &Path, work: &Path) -> Self {
        Self {
            configs: configs.to_path_buf(),
            work: work.to_path_buf(),
        }
    }

    fn config(&self, file: &str) -> ScenarioConfig {
        ScenarioConfig::load(&self.configs.join(file)).expect("shipped config")
    }

    fn criteria(&self) -> Vec<Line> {
        let t0 = Instant::now();
        let (c7, trained) = self.c7_training();
        eprintln!(
            "[acceptance] criterion 7 done after {:.0} s",
            t0.elapsed().as_secs_f64()
        );
        let mut out = vec![c7];
        match trained {
            Some(t) => {
                out.push(self.c8_fidelity(&t));
                eprintln!(
                    "[acceptance] criterion 8 done after {:.0} s",
                    t0.elapsed().as_secs_f64()
                );
                out.push(self.c9_schedules(&t));
                eprintln!(
                    "[acceptance] criterion 9 done after {:.0} s",
                    t0.elapsed().as_secs_f64()
                );
                out.push(self.c10_shape(&t));
                out.push(self.c11_double_crack(&t));
                eprintln!(
                    "[acceptance] desk criteria done after {:.0} s",
                    t0.elapsed().as_secs_f64()
                );
            }
            None => {
                for (id, name) in [
                    (8, "hybrid-run fidelity"),
                    (9, "schedule generalization"),
                    (10, "shape generalization"),
                    (11, "double crack"),
                ] {
                    out.push(line(
                        id,
                        name,
                        false,
                        "no trained model (criterion 7 pipeline failed)".into(),
                    ));
                }
            }
        }
        out
    }

    fn c7_training(&self) -> (Line, Option<Trained>) {
        let name = "training viability";
        let cfg = self.config("snt_desk.toml");
        let out = self.work.join("snt-desk");
        let t0 = Instant::now();
        let attempt = || -> Result<_> {
            let generated = cmd_generate(&cfg, &out)?;
            let t_gen = t0.elapsed().as_secs_f64();
            let inputs = commands::default_training_inputs(&cfg, &out)?;
            let model = out.join("model.json");
            let every = 1000;
            let summary = cmd_train(&cfg, &inputs, &model, &out.join("loss.csv"), &mut |e, l| {
                if e % every == 0 {
                    eprintln!("[acceptance] epoch {e:>5} loss {l:.4e}");
                }
            })?;
            let t_train = t0.elapsed().as_secs_f64() - t_gen;
            let increments = &cfg.training.as_ref().expect("training section").increments;
            let fit = commands::evaluate_training_fit(
                &load_model::<f64>(&model)?,
                &out.join(GENERATE_DIR),
                increments,
                cfg.run.conditioning.h_cap,
            )?;
            Ok((generated, summary, fit, t_gen, t_train, model))
        };
        match attempt() {
            Err(e) => (line(7, name, false, format!("pipeline failed: {e}")), None),
            Ok((generated, summary, fit, t_gen, t_train, model)) => {
                let ratio = summary.final_loss / summary.initial_loss;
                let fits = fit
                    .iter()
                    .all(|d| d.rel_l2 <= PHI_REL_L2 && d.linf <= PHI_LINF);
                let per: Vec<String> = fit
                    .iter()
                    .map(|d| {
                        format!(
                            "inc {}: rel L2 {:.4} (<= {PHI_REL_L2}), Linf {:.4} (<= {PHI_LINF})",
                            d.increment, d.rel_l2, d.linf
                        )
                    })
                    .collect();
                let detail = format!(
                    "loss {:.4e} -> {:.4e} = {:.3}% of initial (<= {}%); {}; generate {:.0} s, train {:.0} s",
                    summary.initial_loss,
                    summary.final_loss,
                    100.0 * ratio,
                    100.0 * LOSS_RATIO,
                    per.join("; "),
                    t_gen,
                    t_train
                );
                let trained = Trained {
                    model,
                    fem: generated.record,
                    fem_dir: out.join(GENERATE_DIR),
                };
                (
                    line(7, name, ratio <= LOSS_RATIO && fits, detail),
                    Some(trained),
                )
            }
        }
    }

    /// Hybrid run of `cfg` with the irreversibility audit, plus (optionally) its FEM-only twin.
    fn hybrid(
        &self,
        cfg: &ScenarioConfig,
        t: &Trained,
        tag: &str,
        audit: &mut Audit,
    ) -> Result<(RunRecord, PathBuf)> {
        let out = self.work.join(tag);
        let mut c = cfg.clone();
        c.run.mode = RunMode::Ifenn;
        let s = cmd_run_observed(&c, Some(&t.model), &out, &mut |v| audit.observe(v))?;
        Ok((s.record, s.dir))
    }

    fn fem(&self, cfg: &ScenarioConfig, tag: &str) -> Result<(RunRecord, PathBuf)> {
        let mut c = cfg.clone();
        c.run.mode = RunMode::FemOnly;
        let s = commands::cmd_run(&c, None, &self.work.join(tag))?;
        Ok((s.record, s.dir))
    }

    fn c8_fidelity(&self, t: &Trained) -> Line {
        let name = "hybrid-run fidelity";
        let cfg = self.config("snt_desk.toml");
        let mut audit = Audit::default();
        let (rec, dir) = match self.hybrid(&cfg, t, "snt-desk", &mut audit) {
            Ok(r) => r,
            Err(e) => return line(8, name, false, format!("hybrid run failed: {e}")),
        };
        let report = match band(&t.fem_dir, &dir) {
            Ok(r) => r,
            Err(e) => return line(8, name, false, format!("compare failed: {e}")),
        };
        // Activation: the first hybrid increment follows the first FEM increment reaching the threshold.
        let expected = t
            .fem
            .rows
            .iter()
            .find(|r| r.max_phi >= ACTIVATION_PHI)
            .map(|r| r.increment + 1);
        let activation_ok =
            rec.activation_increment.is_some() && rec.activation_increment == expected;
        let (tips_ok, tip_detail) = tip_agreement(
            &t.fem,
            &rec,
            cfg.geometry.notches[0].end[0] / cfg.geometry.lx,
            2 * cfg.geometry.nx,
        );
        let band_ok = report.peak_rel_diff <= PEAK_REL
            && report.mean_abs_reaction_diff <= MEAN_DIFF_REL * report.peak_a;
        let monotone = audit.phi_decreases == 0 && audit.h_decreases == 0;
        let terminal = rec.rows.last().map_or(f64::NAN, |r| r.reaction);
        line(
            8,
            name,
            activation_ok && band_ok && tips_ok && monotone,
            format!(
                "activation at {:?} (expected {:?}); peak {:.2} vs {:.2} N ({:.2}%); mean pre-peak diff {:.3}% of peak; {tip_detail}; \
                 phi decreases {}, H decreases {}; terminal reaction {:.2} N (residual force expected)",
                rec.activation_increment,
                expected,
                report.peak_a,
                report.peak_b,
                100.0 * report.peak_rel_diff,
                100.0 * report.mean_abs_reaction_diff / report.peak_a,
                audit.phi_decreases,
                audit.h_decreases,
                terminal
            ),
        )
    }

    fn c9_schedules(&self, t: &Trained) -> Line {
        let name = "schedule generalization";
        let mut details = Vec::new();
        let mut pass = true;
        for (file, tag) in [("snt_desk_ii.toml", "II"), ("snt_desk_iii.toml", "III")] {
            let cfg = self.config(file);
            let run = || -> Result<CompareReport> {
                let (_, fem_dir) = self.fem(&cfg, &format!("schedule-{tag}"))?;
                let (_, dir) =
                    self.hybrid(&cfg, t, &format!("schedule-{tag}"), &mut Audit::default())?;
                band(&fem_dir, &dir)
            };
            match run() {
                Ok(r) => {
                    let ok = r.peak_rel_diff <= PEAK_REL
                        && r.mean_abs_reaction_diff <= MEAN_DIFF_REL * r.peak_a;
                    pass &= ok;
                    details.push(format!(
                        "{tag}: completed, peak {:.2} vs {:.2} N ({:.2}%), mean pre-peak diff {:.3}% of peak",
                        r.peak_a,
                        r.peak_b,
                        100.0 * r.peak_rel_diff,
                        100.0 * r.mean_abs_reaction_diff / r.peak_a
                    ));
                }
                Err(e) => {
                    pass = false;
                    details.push(format!("{tag}: failed: {e}"));
                }
            }
        }
        line(9, name, pass, details.join("; "))
    }

    fn c10_shape(&self, t: &Trained) -> Line {
        let name = "shape generalization";
        let cfg = self.config("snt_desk_124.toml");
        let mut audit = Audit::default();
        match self.hybrid(&cfg, t, "snt-desk-124", &mut audit) {
            Err(e) => line(10, name, false, format!("hybrid run failed: {e}")),
            Ok((rec, _)) => {
                let cols = 2 * cfg.geometry.nx;
                let tip = rec.rows.iter().filter_map(|r| r.tip_col).max();
                let through = tip.is_some_and(|c| c + 1 + TIP_PIXELS >= cols);
                line(
                    10,
                    name,
                    through,
                    format!(
                        "{}x{} pixel input ran {} increments (activation {:?}); furthest crack tip column {tip:?} of {cols} (needs >= {})",
                        cols,
                        2 * cfg.geometry.ny,
                        rec.rows.len(),
                        rec.activation_increment,
                        cols - 1 - TIP_PIXELS
                    ),
                )
            }
        }
    }

    fn c11_double_crack(&self, t: &Trained) -> Line {
        let name = "double crack";
        let cfg = self.config("sdnt_desk.toml");
        let px = 2.0 * cfg.geometry.nx as f64 / cfg.geometry.lx;
        let row = (2.0 * cfg.geometry.notches[0].end[1] * cfg.geometry.ny as f64 / cfg.geometry.ly)
            .round() as usize;
        // Pixel columns just past the left tip and just before the right one.
        let left = (cfg.geometry.notches[0].end[0] * px).round() as usize;
        let right = (cfg.geometry.notches[1].start[0] * px).round() as usize - 1;
        let mut audit = Audit {
            probes: vec![(row, left), (row, right)],
            ..Audit::default()
        };
        match self.hybrid(&cfg, t, "sdnt-desk", &mut audit) {
            Err(e) => line(11, name, false, format!("hybrid run failed: {e}")),
            Ok((rec, _)) => {
                let pass = audit.nucleated.iter().all(Option::is_some) && audit.spanned.is_some();
                line(
                    11,
                    name,
                    pass,
                    format!(
                        "activation {:?}; phi > {CRACKED} next to the left tip (column {left}) at {:?}, right tip (column {right}) at {:?}; \
                         connected band between them at {:?}",
                        rec.activation_increment, audit.nucleated[0], audit.nucleated[1], audit.spanned
                    ),
                )
            }
        }
    }
}

/// Reaction statistics over the pre-peak window of the FEM record in `fem_dir`.
fn band(fem_dir: &Path, dir: &Path) -> Result<CompareReport> {
    let whole = cmd_compare(fem_dir, dir, None)?;
    cmd_compare(fem_dir, dir, Some([0.0, whole.u_peak_a]))
}

/// Crack-tip agreement over the first `PROPAGATION_SHARE` of the ligament ahead of the notch.
fn tip_agreement(
    fem: &RunRecord,
    hybrid: &RunRecord,
    notch_fraction: f64,
    cols: usize,
) -> (bool, String) {
    let Some(first) = hybrid.activation_increment else {
        return (false, "no hybrid increments".into());
    };
    let start = notch_fraction * cols as f64;
    let limit = start + PROPAGATION_SHARE * (cols as f64 - 1.0 - start);
    let mut checked = 0;
    let mut worst = 0usize;
    let mut missing = 0;
    for (a, b) in fem
        .rows
        .iter()
        .zip(&hybrid.rows)
        .filter(|(a, _)| a.increment >= first)
    {
        let Some(ca) = a.tip_col else { continue };
        if ca as f64 > limit {
            break;
        }
        checked += 1;
        match b.tip_col {
            Some(cb) => worst = worst.max(ca.abs_diff(cb)),
            None => missing += 1,
        }
    }
    let ok = checked > 0 && missing == 0 && worst <= TIP_PIXELS;
    (ok, format!("tip columns over {checked} increments up to column {limit:.0}: worst gap {worst} px, {missing} missing"))
}
