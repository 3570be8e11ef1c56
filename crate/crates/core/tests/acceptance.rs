//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! Runs without the libtest harness so the report always reaches stdout.
//! A criterion listed in `KNOWN_UNATTAINABLE` still runs and still prints its
//! honest verdict; it just does not fail the process.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fmrisim_core::experiment::{build_design, ActivationSpec, BaselineRegion, SimulationSetup, Simulator};
use fmrisim_core::noise::{
    add_kspace_noise, noncentral_chi_pdf, phase_pdf, rician_moments, rician_pdf, NoiseParams, RiceParams,
};
use fmrisim_core::phantom::{Plane, SliceMaps, TissueSet};
use fmrisim_core::recon::{idft_recon, idft_unscaled, kspace_to_grid, ReconKind};
use fmrisim_core::session::analysis::stat_map;
use fmrisim_core::session::archive::SeriesReader;
use fmrisim_core::session::config::RunConfig;
use fmrisim_core::session::pipeline::{load_config_phantom, prepare, simulate_to_dir};
use fmrisim_core::signal::{
    forward_dft_with, gre_signal, ir_signal, se_signal, Evaluation, KSpaceFrame, SensitivityMap,
};
use fmrisim_core::stats::{t_critical, ttest_map, StatKind, DEFAULT_THRESHOLD};
use fmrisim_core::trajectory::{
    cartesian_trajectory, radial_trajectory, ScanParams, Sequence, Trajectory, GAMMA_HZ_PER_T,
};
use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

const DFT_REL_TOL: f64 = 1e-12;
const ROUNDTRIP_TOL: f64 = 1e-10;
const DFT_RUNTIME: Duration = Duration::from_secs(1);
const VARIANCE_TRIALS: usize = 10_000;
const VARIANCE_REL_TOL: f64 = 0.05;
const VARIANCE_RUNTIME: Duration = Duration::from_secs(60);
const PDF_MASS_TOL: f64 = 1e-6;
const MC_DRAWS: usize = 1_000_000;
const MOMENT_REL_TOL: f64 = 0.01;
const PHASE_VAR_REL_TOL: f64 = 0.02;
const CHI_RICE_TOL: f64 = 1e-12;
const CLOSED_FORM_TOL: f64 = 1e-10;
const IR_NULL_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-9;
const HERMITIAN_BREAK: f64 = 1e-3;
const END_TO_END_RUNTIME: Duration = Duration::from_secs(600);
const NULL_SEEDS: u64 = 100;
const NULL_RATE_RANGE: (f64, f64) = (0.04, 0.06);
const TRPC_TOL: f64 = 1e-6;

/// Criteria that cannot hold together with the rest; see the reason text.
const KNOWN_UNATTAINABLE: &[(&str, &str)] = &[(
    "1b",
    "the forward kernel and the reconstruction both carry 1/(Nx Ny) so that image noise variance is \
     sigma_k^2/(Nx Ny) (criterion 2); the round trip therefore returns img/(Nx Ny). \
     idft_unscaled is the exact inverse and is reported alongside",
)];

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

fn scan(n: usize) -> ScanParams {
    ScanParams {
        sequence: Sequence::Gre,
        b0: 3.0,
        te: 0.0604,
        tr: 1.0,
        ti: None,
        flip_deg: 90.0,
        eesp: 0.000832,
        accel: 1,
        n_coils: 1,
        grid_n: n,
        include_delta_b: true,
        assume_te: false,
    }
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn max_norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Direct double loop over centered voxel coordinates.
fn brute_force_dft(image: &Array2<Complex64>, traj: &Trajectory) -> Vec<Complex64> {
    let n = image.nrows();
    let nf = n as f64;
    let half = (n / 2) as f64;
    traj.samples()
        .iter()
        .map(|s| {
            let mut acc = Complex64::new(0.0, 0.0);
            for row in 0..n {
                for col in 0..n {
                    let (x, y) = (col as f64 - half, row as f64 - half);
                    let arg = -2.0 * PI * (s.kx * x / nf + s.ky * y / nf);
                    acc += image[[row, col]] * Complex64::new(arg.cos(), arg.sin());
                }
            }
            acc / (nf * nf)
        })
        .collect()
}

fn criterion_1() -> Vec<Outcome> {
    let start = Instant::now();
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = Array2::from_shape_simple_fn((n, n), || {
        Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
    });
    let cart = Arc::new(cartesian_trajectory(&scan(n)).unwrap());
    let radial = Arc::new(radial_trajectory(&scan(n)).unwrap());

    let mut worst: f64 = 0.0;
    for traj in [&cart, &radial] {
        let oracle = brute_force_dft(&image, traj);
        for mode in [Evaluation::Auto, Evaluation::Direct] {
            let f = forward_dft_with(&image, traj, mode).unwrap();
            worst = worst.max(max_abs_diff(&f.values, &oracle) / max_norm(&oracle));
        }
    }

    let frame = forward_dft_with(&image, &cart, Evaluation::Auto).unwrap();
    let flat: Vec<Complex64> = image.iter().copied().collect();
    let recon = idft_recon(&frame).unwrap();
    let rt: Vec<Complex64> = recon.data.iter().copied().collect();
    let rt_err = max_abs_diff(&rt, &flat) / max_norm(&flat);
    let exact: Vec<Complex64> = idft_unscaled(&frame).unwrap().data.iter().copied().collect();
    let exact_err = max_abs_diff(&exact, &flat) / max_norm(&flat);
    let ratio = max_norm(&flat) / max_norm(&rt);
    let elapsed = start.elapsed();

    vec![
        outcome(
            "1a",
            "forward transform vs brute-force oracle (Cartesian and radial, FFT and direct)",
            worst <= DFT_REL_TOL && elapsed < DFT_RUNTIME,
            format!("max rel err {worst:.2e} (tol {DFT_REL_TOL:e}), runtime {elapsed:.2?}"),
        ),
        outcome(
            "1b",
            "idft_recon after forward_dft is the identity",
            rt_err <= ROUNDTRIP_TOL && elapsed < DFT_RUNTIME,
            format!(
                "max rel err {rt_err:.2e} (tol {ROUNDTRIP_TOL:e}); |img|/|recon| = {ratio:.1}; \
                 idft_unscaled round trip rel err {exact_err:.2e}"
            ),
        ),
    ]
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let n = 64;
    let traj = Arc::new(cartesian_trajectory(&scan(n)).unwrap());
    let zero = KSpaceFrame::new(vec![Complex64::new(0.0, 0.0); traj.len()], Arc::clone(&traj), 0).unwrap();
    let np = NoiseParams { sigma_k: 1.0, seed: 2 };
    let (sum, sum_sq) = (0..VARIANCE_TRIALS)
        .into_par_iter()
        .fold(
            || (Array2::<f64>::zeros((n, n)), Array2::<f64>::zeros((n, n))),
            |(mut s, mut q), trial| {
                let noisy = add_kspace_noise(&zero, &np, trial).unwrap();
                let re = idft_recon(&noisy).unwrap().real();
                s += &re;
                q += &re.mapv(|v| v * v);
                (s, q)
            },
        )
        .reduce(
            || (Array2::<f64>::zeros((n, n)), Array2::<f64>::zeros((n, n))),
            |(a, b), (c, d)| (a + c, b + d),
        );
    let m = VARIANCE_TRIALS as f64;
    let var = (&sum_sq - &(&sum * &sum / m)) / (m - 1.0);
    let target = 1.0 / (n * n) as f64;
    let mean_var = var.mean().unwrap();
    let within = var.iter().filter(|&&v| ((v - target) / target).abs() <= VARIANCE_REL_TOL).count();
    let frac = within as f64 / var.len() as f64;
    let elapsed = start.elapsed();
    let mean_ok = ((mean_var - target) / target).abs() <= VARIANCE_REL_TOL;
    outcome(
        "2",
        "reconstructed real-part variance equals sigma_k^2/(Nx Ny)",
        mean_ok && frac >= 0.99 && elapsed < VARIANCE_RUNTIME,
        format!(
            "voxel-mean variance {mean_var:.4e} vs {target:.4e} (rel {:.2}%), {:.2}% of voxels within {}%, runtime {elapsed:.2?}",
            100.0 * (mean_var - target) / target,
            100.0 * frac,
            100.0 * VARIANCE_REL_TOL
        ),
    )
}

/// Composite Simpson with `m` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn complex_gaussian_draws(rho: f64, theta: f64, sigma: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = Complex64::from_polar(rho, theta);
    (0..MC_DRAWS)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            mean + Complex64::new(re, im) * sigma
        })
        .collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

fn criterion_3() -> Vec<Outcome> {
    let mut out = Vec::new();

    let mut worst_mass: f64 = 0.0;
    for &(rho, sigma) in &[(0.0, 1.0), (1.0, 1.0), (2.0, 0.5), (5.0, 1.0), (30.0, 2.0)] {
        let p = RiceParams::new(rho, 0.7, sigma).unwrap();
        let top = rho + 40.0 * sigma;
        let rice = simpson(|r| rician_pdf(r, &p), 0.0, top, 200_000);
        let phase = simpson(|f| phase_pdf(f, &p), -PI, PI, 200_000);
        worst_mass = worst_mass.max((rice - 1.0).abs()).max((phase - 1.0).abs());
        for coils in [1u32, 2, 4, 8] {
            let top = rho + 60.0 * sigma;
            let chi = simpson(|m| noncentral_chi_pdf(m, rho, sigma, coils), 0.0, top, 200_000);
            worst_mass = worst_mass.max((chi - 1.0).abs());
        }
    }
    out.push(outcome(
        "3a",
        "Rician, phase and noncentral-chi densities integrate to one",
        worst_mass <= PDF_MASS_TOL,
        format!("max |mass - 1| = {worst_mass:.2e} (tol {PDF_MASS_TOL:e})"),
    ));

    let sigma = 1.0;
    let mut worst_moment: f64 = 0.0;
    let mut rayleigh_mc = (0.0, 0.0);
    let mut rayleigh_phase_var = 0.0;
    for (i, ratio) in [0.0, 1.0, 2.0, 5.0].into_iter().enumerate() {
        let draws = complex_gaussian_draws(ratio * sigma, 0.3, sigma, 30 + i as u64);
        let mags: Vec<f64> = draws.iter().map(|z| z.norm()).collect();
        let (m, v) = mean_var(&mags);
        let (tm, tv) = rician_moments(&RiceParams::new(ratio * sigma, 0.3, sigma).unwrap());
        worst_moment = worst_moment.max(((m - tm) / tm).abs()).max(((v - tv) / tv).abs());
        if ratio == 0.0 {
            rayleigh_mc = (m, v);
            let phases: Vec<f64> = draws.iter().map(|z| z.arg()).collect();
            rayleigh_phase_var = mean_var(&phases).1;
        }
    }
    out.push(outcome(
        "3b",
        "magnitude mean and variance match Monte Carlo for rho/sigma in {0,1,2,5}",
        worst_moment <= MOMENT_REL_TOL,
        format!("max rel deviation {worst_moment:.3e} over {MC_DRAWS} draws (tol {MOMENT_REL_TOL})"),
    ));

    let ray_mean = sigma * (PI / 2.0).sqrt();
    let ray_var = (4.0 - PI) * sigma * sigma / 2.0;
    let (tm, tv) = rician_moments(&RiceParams::new(0.0, 0.0, sigma).unwrap());
    let dev = [
        (tm - ray_mean) / ray_mean,
        (tv - ray_var) / ray_var,
        (rayleigh_mc.0 - ray_mean) / ray_mean,
        (rayleigh_mc.1 - ray_var) / ray_var,
    ]
    .iter()
    .map(|d| d.abs())
    .fold(0.0, f64::max);
    out.push(outcome(
        "3c",
        "rho = 0 magnitude has the Rayleigh mean and variance",
        dev <= MOMENT_REL_TOL,
        format!("max rel deviation {dev:.3e} (closed form and Monte Carlo, tol {MOMENT_REL_TOL})"),
    ));

    let uniform_var = PI * PI / 3.0;
    let p0 = RiceParams::new(0.0, 0.0, sigma).unwrap();
    let quad_var = simpson(|f| f * f * phase_pdf(f, &p0), -PI, PI, 20_000);
    let dev = ((rayleigh_phase_var - uniform_var) / uniform_var)
        .abs()
        .max(((quad_var - uniform_var) / uniform_var).abs());
    out.push(outcome(
        "3d",
        "rho = 0 phase variance is pi^2/3",
        dev <= PHASE_VAR_REL_TOL,
        format!(
            "Monte Carlo {rayleigh_phase_var:.5}, density quadrature {quad_var:.5}, target {uniform_var:.5} (tol {}%)",
            100.0 * PHASE_VAR_REL_TOL
        ),
    ));

    let mut worst: f64 = 0.0;
    for &(rho, sigma) in &[(0.0, 1.0), (0.5, 1.0), (3.0, 0.7), (12.0, 1.5), (80.0, 1.0)] {
        let p = RiceParams::new(rho, 0.0, sigma).unwrap();
        for i in 0..=2000 {
            let m = (rho + 12.0 * sigma) * i as f64 / 2000.0;
            let a = noncentral_chi_pdf(m, rho, sigma, 1);
            let b = rician_pdf(m, &p);
            worst = worst.max((a - b).abs());
        }
    }
    out.push(outcome(
        "3e",
        "single-coil noncentral chi equals the Rician density",
        worst <= CHI_RICE_TOL,
        format!("max |difference| {worst:.2e} (tol {CHI_RICE_TOL:e})"),
    ));
    out
}

fn single_voxel_slice(n: usize, at: (usize, usize), m0: f64, t1: f64, t2star: f64, db: f64) -> SliceMaps {
    let mut s = SliceMaps {
        plane: Plane::Axial,
        index: 1,
        m0: Array2::zeros((n, n)),
        t1: Array2::zeros((n, n)),
        t2star: Array2::zeros((n, n)),
        delta_b: Array2::zeros((n, n)),
        act_map: Array2::zeros((n, n)),
        gain: Array2::from_elem((n, n), Complex64::new(1.0, 0.0)),
    };
    s.m0[at] = m0;
    s.t1[at] = t1;
    s.t2star[at] = t2star;
    s.delta_b[at] = db;
    s
}

/// `factor * e^{rate t} e^{-i 2 pi (kx x + ky y)/N} / N^2` for one voxel.
fn one_voxel_oracle(traj: &Trajectory, at: (usize, usize), factor: f64, rate: Complex64, common: Option<f64>) -> Vec<Complex64> {
    let n = traj.grid_n() as f64;
    let (x, y) = (at.1 as f64 - n / 2.0, at.0 as f64 - n / 2.0);
    traj.samples()
        .iter()
        .map(|s| {
            let t = common.unwrap_or(s.t);
            let arg = -2.0 * PI * (s.kx * x + s.ky * y) / n;
            factor * (rate * t).exp() * Complex64::new(arg.cos(), arg.sin()) / (n * n)
        })
        .collect()
}

fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    max_abs_diff(a, b) / max_norm(b).max(f64::MIN_POSITIVE)
}

fn criterion_4() -> Outcome {
    let n = 16;
    let at = (5, 11);
    let coil = SensitivityMap::uniform(n);
    let mut notes = Vec::new();
    let mut ok = true;

    // GRE sampled at TE = T2*: decay factor e^{-1}; TR >> T1 leaves M0.
    let mut p = scan(n);
    p.include_delta_b = false;
    p.assume_te = true;
    p.tr = 1.0;
    let t2s = p.te;
    let traj = Arc::new(cartesian_trajectory(&p).unwrap());
    let slice = single_voxel_slice(n, at, 0.8, 1e-3, t2s, 0.0);
    let f = gre_signal(&slice, &traj, &p, &coil, 0).unwrap();
    let oracle: Vec<Complex64> = one_voxel_oracle(&traj, at, 0.8 * (-1.0f64).exp(), Complex64::new(0.0, 0.0), Some(0.0));
    let e = rel(&f.values, &oracle);
    ok &= e <= CLOSED_FORM_TOL;
    notes.push(format!("GRE e^-1 {e:.1e}"));

    // per-sample timing with off-resonance and a 30 degree flip
    let mut p = scan(n);
    p.flip_deg = 30.0;
    p.tr = 0.5;
    let (t1, t2s, db) = (0.9, 0.05, 2e-8);
    let slice = single_voxel_slice(n, at, 1.0, t1, t2s, db);
    let traj = Arc::new(cartesian_trajectory(&p).unwrap());
    let f = gre_signal(&slice, &traj, &p, &coil, 0).unwrap();
    let e1 = (-p.tr / t1).exp();
    let a = 30f64.to_radians();
    let amp = a.sin() * (1.0 - e1) / (1.0 - a.cos() * e1);
    let rate = Complex64::new(-1.0 / t2s, GAMMA_HZ_PER_T * db);
    let e = rel(&f.values, &one_voxel_oracle(&traj, at, amp, rate, None));
    ok &= e <= CLOSED_FORM_TOL;
    notes.push(format!("GRE timed 30deg {e:.1e}"));

    // IR null at TI = T1 ln 2 with TR >> T1
    let mut p = scan(n);
    p.sequence = Sequence::Ir;
    p.tr = 1.0;
    let t1 = 0.01;
    p.ti = Some(t1 * 2f64.ln());
    let slice = single_voxel_slice(n, at, 1.0, t1, 0.05, 0.0);
    let traj = Arc::new(cartesian_trajectory(&p).unwrap());
    let f = ir_signal(&slice, &traj, &p, &coil, 0).unwrap();
    let null = max_norm(&f.values);
    ok &= null < IR_NULL_TOL;
    notes.push(format!("IR null max|s| {null:.1e}"));

    // IR with TI = TR/2 = T1 = 1 s
    p.tr = 2.0;
    p.ti = Some(1.0);
    let slice = single_voxel_slice(n, at, 1.0, 1.0, 0.05, 0.0);
    let f = ir_signal(&slice, &traj, &p, &coil, 0).unwrap();
    let factor = 1.0 - 2.0 * (-1.0f64).exp() + (-2.0f64).exp();
    let e = rel(&f.values, &one_voxel_oracle(&traj, at, factor, Complex64::new(0.0, 0.0), None));
    ok &= e <= CLOSED_FORM_TOL;
    notes.push(format!("IR 1-2/e+1/e^2 {e:.1e}"));

    // SE equals GRE without off-resonance at 90 degrees, on a full phantom slice
    let cfg = RunConfig::example();
    let phantom = load_config_phantom(&cfg).unwrap();
    let slice = phantom.extract_slice(Plane::Axial, 48).unwrap();
    let mut p = scan(96);
    p.include_delta_b = false;
    let traj = Arc::new(cartesian_trajectory(&p).unwrap());
    let coil = SensitivityMap::uniform(96);
    let gre = gre_signal(&slice, &traj, &p, &coil, 0).unwrap();
    p.sequence = Sequence::Se;
    let se = se_signal(&slice, &traj, &p, &coil, 0).unwrap();
    let e = rel(&se.values, &gre.values);
    ok &= e <= CLOSED_FORM_TOL;
    notes.push(format!("SE vs GRE {e:.1e}"));

    outcome(
        "4",
        "single-voxel and sequence-equivalence closed forms",
        ok,
        format!("{} (tol {CLOSED_FORM_TOL:e}, IR null {IR_NULL_TOL:e})", notes.join(", ")),
    )
}

/// Largest `|s(k) - conj(s(-k))|` over pairs with both points on the grid.
fn hermitian_violation(frame: &KSpaceFrame) -> (f64, f64) {
    let g = kspace_to_grid(frame).unwrap();
    let n = g.nrows();
    let mut worst: f64 = 0.0;
    for r in 1..n {
        for c in 1..n {
            worst = worst.max((g[[r, c]] - g[[n - r, n - c]].conj()).norm());
        }
    }
    (worst, g.iter().map(|v| v.norm()).fold(0.0, f64::max))
}

fn criterion_5() -> Outcome {
    let cfg = RunConfig::example();
    let phantom = load_config_phantom(&cfg).unwrap();
    let slice = phantom.extract_slice(Plane::Axial, 48).unwrap();
    let coil = SensitivityMap::uniform(96);

    let mut common = scan(96);
    common.include_delta_b = false;
    common.assume_te = true;
    let traj = Arc::new(cartesian_trajectory(&common).unwrap());
    let f = gre_signal(&slice, &traj, &common, &coil, 0).unwrap();
    let (v0, m0) = hermitian_violation(&f);

    let real = scan(96);
    let f = gre_signal(&slice, &traj, &real, &coil, 0).unwrap();
    let (v1, m1) = hermitian_violation(&f);
    outcome(
        "5",
        "Hermitian symmetry holds at common time and breaks with off-resonance and real timing",
        v0 / m0 <= HERMITIAN_TOL && v1 > HERMITIAN_BREAK * m1,
        format!(
            "common time: max violation / max|s| = {:.2e} (tol {HERMITIAN_TOL:e}); real timing with dB: {:.2e} (need > {HERMITIAN_BREAK:e})",
            v0 / m0,
            v1 / m1
        ),
    )
}

fn worked_example() -> RunConfig {
    let mut c = RunConfig::example();
    c.seed = Some(20241111);
    c.timestamp = Some("2024-11-11T17:07:23".into());
    c
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

fn criterion_6(dir: &Path) -> Vec<Outcome> {
    let mut out = Vec::new();
    let cfg = worked_example();
    let start = Instant::now();
    let run = simulate_to_dir(&cfg, dir.join("example"), |_| {}).unwrap();
    let elapsed = start.elapsed();

    let summary = &run.metadata.summary;
    let fields = [
        "11-Nov-2024",
        "17:07:23",
        "slice 48",
        "size 96",
        "Axial plane",
        "Acceleration Factor = 1",
        "Field Strength = 3T",
        "TE = 60.4ms",
        "TR = 1000ms",
        "Flip Angle = 90deg",
        "EESP = 0.832ms",
        "Number of Coils = 1",
        "gradient echo (GRE) signal equation",
        "Cartesian k-space trajectory",
        "initial 16 rest images",
        "19 epochs",
        "16 task images",
        "16 rest images",
        "total of 624 images",
        "SNR was set to 5",
        "CNR was set to 0.5",
        "There were 0 degrees of phase",
        "Cartesian inverse FFT algorithm",
    ];
    let mut pos = 0;
    let mut missing = Vec::new();
    for f in fields {
        match summary[pos..].find(f) {
            Some(i) => pos += i + f.len(),
            None => missing.push(f),
        }
    }
    out.push(outcome(
        "6a",
        "worked example runs to completion with every summary field in order",
        missing.is_empty() && run.metadata.n_frames == 624 && elapsed < END_TO_END_RUNTIME,
        format!(
            "{} frames in {elapsed:.2?}; {}",
            run.metadata.n_frames,
            if missing.is_empty() { "all fields in order".to_string() } else { format!("missing or out of order: {missing:?}") }
        ),
    ));

    let mut reader = SeriesReader::open(&run.archive).unwrap();
    let map = stat_map(&mut reader, StatKind::Tstat, DEFAULT_THRESHOLD, 0).unwrap();
    let phantom = load_config_phantom(&cfg).unwrap();
    let slice = phantom.extract_slice(cfg.slice.plane, cfg.slice.index).unwrap();
    let gm = TissueSet::default().gm;
    let mut active = Vec::new();
    let mut inactive_gm = Vec::new();
    for ((idx, &t), &a) in map.values.indexed_iter().zip(slice.act_map.iter()) {
        if a == 1 {
            active.push(t);
        } else if slice.m0[idx] == gm.m0 && slice.t1[idx] == gm.t1 && slice.t2star[idx] == gm.t2star {
            inactive_gm.push(t);
        }
    }
    let active_mean = active.iter().sum::<f64>() / active.len() as f64;
    let p999 = percentile(inactive_gm.clone(), 0.999);
    out.push(outcome(
        "6b",
        "mean t over active voxels exceeds the inactive grey-matter 99.9th percentile",
        active_mean > p999,
        format!(
            "active mean t = {active_mean:.2} over {} voxels, inactive GM 99.9th percentile = {p999:.2} over {} voxels",
            active.len(),
            inactive_gm.len()
        ),
    ));

    let start = Instant::now();
    let mut null_cfg = worked_example();
    null_cfg.activation.cnr = 0.0;
    let prepared = prepare(&null_cfg).unwrap();
    let sim = &prepared.simulator;
    let design = sim.design().clone();
    let df = (design.len() - 2) as f64;
    let crit = t_critical(0.05, df).unwrap();
    let (lo, hi) = (40, 56);
    let mut exceed = 0usize;
    let mut total = 0usize;
    for seed in 1..=NULL_SEEDS {
        let series: Vec<Array2<f64>> = (0..sim.n_frames())
            .into_par_iter()
            .map(|t| {
                let frames = sim.frame(t, seed).unwrap();
                let img = sim.images(&frames).unwrap();
                img[0].data.slice(s![lo..hi, lo..hi]).mapv(|v| v.norm())
            })
            .collect();
        let m = ttest_map(&series, &design, 0).unwrap();
        exceed += m.values.iter().filter(|t| t.abs() > crit).count();
        total += m.values.len();
    }
    let rate = exceed as f64 / total as f64;
    out.push(outcome(
        "6c",
        "null run false-positive rate at the two-sided 5% threshold",
        (NULL_RATE_RANGE.0..=NULL_RATE_RANGE.1).contains(&rate),
        format!(
            "{exceed}/{total} = {:.3}% with |t| > {crit:.4} (df {df}), {NULL_SEEDS} seeds on the central 16x16, {:.1?}",
            100.0 * rate,
            start.elapsed()
        ),
    ));
    out
}

fn files_identical(a: &Path, b: &Path) -> bool {
    let (mut fa, mut fb) = (File::open(a).unwrap(), File::open(b).unwrap());
    if fa.metadata().unwrap().len() != fb.metadata().unwrap().len() {
        return false;
    }
    let (mut ba, mut bb) = (vec![0u8; 1 << 20], vec![0u8; 1 << 20]);
    loop {
        let na = fa.read(&mut ba).unwrap();
        if na == 0 {
            return true;
        }
        fb.read_exact(&mut bb[..na]).unwrap();
        if ba[..na] != bb[..na] {
            return false;
        }
    }
}

fn criterion_7(dir: &Path) -> Outcome {
    let cfg = worked_example();
    let run_with = |threads: usize, name: &str| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_to_dir(&cfg, dir.join(name), |_| {}).unwrap()).archive
    };
    let a = run_with(4, "repro-a");
    let b = run_with(4, "repro-b");
    let c = run_with(1, "repro-single");
    let same_runs = files_identical(&a, &b);
    let same_threads = files_identical(&a, &c);
    let size = std::fs::metadata(&a).unwrap().len();
    outcome(
        "7",
        "identical config and seed give a bit-identical archive (repeat and 1 vs 4 threads)",
        same_runs && same_threads,
        format!("repeat identical: {same_runs}, 1 vs 4 threads identical: {same_threads}, {size} bytes"),
    )
}

fn trpc_deviation(assume_te: bool) -> (f64, usize) {
    let cfg = worked_example();
    let phantom = load_config_phantom(&cfg).unwrap();
    let slice = phantom.extract_slice(Plane::Axial, 48).unwrap();
    let mut params = cfg.scan_params(96);
    params.include_delta_b = false;
    params.assume_te = assume_te;
    let traj = Arc::new(cartesian_trajectory(&params).unwrap());
    let sim = Simulator::new(SimulationSetup {
        slice: slice.clone(),
        traj,
        params,
        design: build_design(&cfg.task_design()).unwrap(),
        spec: ActivationSpec {
            snr: 5.0,
            cnr: 0.5,
            trpc_deg: 30.0,
        },
        recon: ReconKind::CartesianIfft,
        baseline: BaselineRegion::Active,
    })
    .unwrap()
    .with_sigma_k(0.0)
    .unwrap();
    let rest = sim.images(sim.noiseless(0)).unwrap();
    let task = sim.images(sim.noiseless(1)).unwrap();
    // noise-free frames from the public frame path must agree with the cache
    let t_task = sim.design().x.iter().position(|&x| x == 1).unwrap();
    let via_frame = sim.images(&sim.frame(t_task, 1).unwrap()).unwrap();
    assert_eq!(via_frame[0].data, task[0].data);

    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (idx, &a) in slice.act_map.indexed_iter() {
        if a == 1 {
            let d = (task[0].data[idx] * rest[0].data[idx].conj()).arg();
            worst = worst.max((d - PI / 6.0).abs());
            count += 1;
        }
    }
    (worst, count)
}

fn criterion_8() -> Vec<Outcome> {
    let (common, n) = trpc_deviation(true);
    let (timed, _) = trpc_deviation(false);
    vec![outcome(
        "8",
        "task minus rest phase at active voxels equals the 30 degree TRPC (sigma_k = 0, no dB)",
        common <= TRPC_TOL,
        format!(
            "common-time readout: max |dphi - pi/6| = {common:.2e} rad over {n} voxels (tol {TRPC_TOL:e}); \
             info: per-sample readout timing gives {timed:.2e} rad from T2* blurring across the region edge"
        ),
    )]
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    results.extend(criterion_1());
    results.push(criterion_2());
    results.extend(criterion_3());
    results.push(criterion_4());
    results.push(criterion_5());
    results.extend(criterion_6(dir.path()));
    results.push(criterion_7(dir.path()));
    results.extend(criterion_8());

    let mut unexpected = 0;
    println!();
    for r in &results {
        let known = KNOWN_UNATTAINABLE.iter().find(|(id, _)| *id == r.id);
        println!("{} criterion {:<3} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.id, r.name, r.detail);
        match (r.pass, known) {
            (false, Some((_, why))) => println!("     known unattainable: {why}"),
            (false, None) => unexpected += 1,
            _ => {}
        }
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!("\n{passed}/{} criteria passed, {unexpected} unexpected failures", results.len());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
