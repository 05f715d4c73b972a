//! Oracle computations shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use ifenn::elasticity::{spectral_split, MaterialParams, Strain};
use ifenn::linalg::LinearSolver;
use ifenn::mesh::build_mesh;
use ifenn::phasefield::{assemble_phasefield, prescribe, solve_phasefield};
use ifenn::picnn::train::evaluate_loss;
use ifenn::picnn::{
    laplacian, loss_and_gradient, pde_residual, Architecture, LaplacianStencil, LossKind,
    PicnnModel, StencilKind,
};
use ifenn::pixel::PixelGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn material(lc: f64) -> MaterialParams<f64> {
    MaterialParams::new(121154.0, 80770.0, 2.7, lc).unwrap()
}

pub fn random_grid(rows: usize, cols: usize, scale: f64, seed: u64) -> PixelGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PixelGrid::from_fn(rows, cols, 0.005, |_, _| scale * rng.random::<f64>())
}

/// Worst relative error of `psi+ + psi- = psi` and of rotation invariance over `n` random strains.
pub fn spectral_split_worst(n: usize, seed: u64) -> f64 {
    let mat = material(0.03);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let mut c = || rng.random_range(-1e-2..1e-2);
        let s = Strain::new(c(), c(), c());
        let total = s.energy(&mat);
        let (plus, minus) = spectral_split(&s, &mat);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (rp, rm) = spectral_split(&s.rotated(theta), &mat);
        worst = worst.max((plus + minus - total).abs() / total);
        worst = worst
            .max((rp - plus).abs() / total)
            .max((rm - minus).abs() / total);
    }
    worst
}

/// Largest nodal deviation from `2H / (gc/lc + 2H)` under uniform history.
pub fn uniform_history_worst() -> f64 {
    let mat = material(0.03);
    let mesh = build_mesh(1.0, 1.0, 12, 12, &[]).unwrap();
    let mut worst = 0.0f64;
    for h in [0.0, 1.0, 45.0, 1e4] {
        let sys = assemble_phasefield(&mesh, &mat, &vec![h; mesh.num_gauss_points()]).unwrap();
        let s = solve_phasefield(&mesh, &sys, LinearSolver::Direct).unwrap();
        let expected = 2.0 * h / (mat.gc / mat.lc + 2.0 * h);
        worst = s
            .phi_nodal
            .iter()
            .fold(worst, |w, &v| w.max((v - expected).abs()));
    }
    worst
}

/// Relative nodal L2 error of the profile `exp(-|x| / lc)` with `ratio` elements per `lc`.
pub fn crack_profile_error(ratio: usize) -> f64 {
    let lc = 1.0;
    let half = 10 * ratio;
    let h = lc / ratio as f64;
    let mesh = build_mesh(2.0 * half as f64 * h, 2.0 * h, 2 * half, 2, &[]).unwrap();
    let mat = material(lc);
    let sys = assemble_phasefield(&mesh, &mat, &vec![0.0; mesh.num_gauss_points()]).unwrap();
    let crack: Vec<(usize, f64)> = (0..3).map(|j| (j * (2 * half + 1) + half, 1.0)).collect();
    let s = solve_phasefield(&mesh, &prescribe(&mesh, sys, &crack), LinearSolver::Direct).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (n, p) in mesh.node_coords.iter().enumerate() {
        let exact = (-(p[0] - half as f64 * h).abs() / lc).exp();
        num += (s.phi_nodal[n] - exact).powi(2);
        den += exact * exact;
    }
    (num / den).sqrt()
}

/// Worst relative error of the discrete Laplacian of random quadratics on interior pixels.
pub fn stencil_quadratic_worst(kind: StencilKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let h = 0.01;
        let phi = PixelGrid::from_fn(16, 16, h, |r, col| {
            let (x, y) = (col as f64 * h, r as f64 * h);
            c[0] * x * x + c[1] * x * y + c[2] * y * y + c[3] * x + c[4] * y + c[5]
        });
        let exact = 2.0 * (c[0] + c[2]);
        let lap = laplacian(&phi, &LaplacianStencil::new(kind, h));
        for r in 1..15 {
            for col in 1..15 {
                worst = worst.max((lap.at(r, col) - exact).abs() / exact.abs());
            }
        }
    }
    worst
}

/// Worst relative gap between the shifted nine-point form and the nominal nine-point Laplacian.
pub fn k9_star_identity_worst(seed: u64) -> f64 {
    let phi = random_grid(24, 19, 1.0, seed);
    let star = laplacian(&phi, &LaplacianStencil::new(StencilKind::K9Star, 0.005));
    let direct = laplacian(&phi, &LaplacianStencil::new(StencilKind::K9, 0.005));
    let scale = direct.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    star.values
        .iter()
        .zip(&direct.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / scale))
}

/// Loop evaluation of the residual with explicit mirrored indexing.
pub fn residual_loop(
    phi: &PixelGrid<f64>,
    h: &PixelGrid<f64>,
    mat: &MaterialParams<f64>,
    kind: StencilKind,
) -> Vec<f64> {
    let st = LaplacianStencil::new(kind, phi.h_px);
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        (if i < 0 {
            -i - 1
        } else if i >= n {
            2 * n - i - 1
        } else {
            i
        }) as usize
    };
    let (a, b) = (mat.gc / mat.lc, mat.gc * mat.lc);
    let mut out = Vec::with_capacity(phi.values.len());
    for r in 0..phi.rows {
        for c in 0..phi.cols {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let rr = mirror(r as isize + i as isize - 1, phi.rows);
                    let cc = mirror(c as isize + j as isize - 1, phi.cols);
                    acc += st.weights[i][j] * phi.at(rr, cc);
                }
            }
            let lap = (acc - st.shift * phi.at(r, c)) / (st.h * st.h);
            let p = phi.at(r, c);
            out.push(a * p - b * lap - 2.0 * (1.0 - p) * h.at(r, c));
        }
    }
    out
}

/// Number of grids (sizes 1..=64, all stencils) whose residual differs bitwise from the loop oracle.
pub fn residual_oracle_mismatches(seed: u64) -> usize {
    let mat = material(0.06);
    let mut bad = 0;
    for (k, (rows, cols)) in [
        (1, 1),
        (2, 3),
        (5, 5),
        (7, 13),
        (16, 16),
        (31, 8),
        (64, 64),
        (64, 37),
    ]
    .into_iter()
    .enumerate()
    {
        let phi = random_grid(rows, cols, 1.0, seed + k as u64);
        let h = random_grid(rows, cols, 500.0, seed + 100 + k as u64);
        for kind in [StencilKind::K5, StencilKind::K9, StencilKind::K9Star] {
            let fast =
                pde_residual(&phi, &h, &mat, &LaplacianStencil::new(kind, phi.h_px)).unwrap();
            let slow = residual_loop(&phi, &h, &mat, kind);
            if fast
                .values
                .iter()
                .zip(&slow)
                .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                bad += 1;
            }
        }
    }
    bad
}

/// Worst relative error of the analytic gradient against central differences
/// on a two-layer, four-channel network with 12 x 12 inputs.
///
/// Inputs stay in `[0, 1)` so no tanh unit saturates: a saturated unit leaves
/// gradients near 1e-7 that central differences cannot resolve against a loss near 1e4.
pub fn gradient_check_worst(seed: u64) -> f64 {
    gradient_check_scaled(seed, 1.0)
}

/// As [`gradient_check_worst`] for a network dividing its input by `input_scale`,
/// fed maps `input_scale` times larger.
pub fn gradient_check_scaled(seed: u64, input_scale: f64) -> f64 {
    let mat = material(0.06);
    let x = random_grid(12, 12, input_scale, seed);
    let batch = [x.clone(), x.transpose().map(|v| 0.5 * v)];
    let mut m = PicnnModel::<f64>::new(
        Architecture {
            channels: vec![1, 4, 1],
        },
        seed,
    )
    .unwrap();
    let mut worst = 0.0f64;
    for kind in [LossKind::L2, LossKind::MeanSquared] {
        let (_, g) = loss_and_gradient(&m, &batch, &mat, StencilKind::K9Star, kind).unwrap();
        let g = g.flat();
        let p0 = m.flat_params();
        let step = 1e-5;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += step;
            m.set_flat_params(&p);
            let up = evaluate_loss(&m, &batch, &mat, StencilKind::K9Star, kind).unwrap();
            p[i] -= 2.0 * step;
            m.set_flat_params(&p);
            let down = evaluate_loss(&m, &batch, &mat, StencilKind::K9Star, kind).unwrap();
            let fd = (up - down) / (2.0 * step);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8));
        }
        m.set_flat_params(&p0);
    }
    worst
}

/// Worst absolute gap between `forward(s(X))` and `s(forward(X))` over the eight square symmetries.
pub fn d4_equivariance_worst(seed: u64) -> f64 {
    let m = PicnnModel::<f64>::new(Architecture::standard(), seed).unwrap();
    let x = random_grid(16, 16, 200.0, seed);
    let y = m.forward(&x).unwrap();
    let mut worst = 0.0f64;
    for k in 0..8 {
        let a = m.forward(&x.dihedral(k)).unwrap();
        let b = y.dihedral(k);
        worst = a
            .values
            .iter()
            .zip(&b.values)
            .fold(worst, |w, (p, q)| w.max((p - q).abs()));
    }
    worst
}
