//! Invariant self-test: fast end-to-end checks of the numerical core, with
//! independent quadrature oracles for the Gaussian formulas.

use std::time::Instant;

use moderr_core::fmath;
use moderr_core::gaussian::{
    enhanced_noise_constant, gaussian_condition, gaussian_kl, quadratic_difference_identity,
    weighted_operator_norm, woodbury_gap, GaussianMeasure, SpdMatrix,
};
use moderr_core::linalg::{self, Mat};
use moderr_core::obs::{build_observation, projection_diagnostic, ObservationKind, SensorLayout};
use moderr_core::pde::{
    assemble_system, sample_initial_condition, PdeCoefficients, PriorSpec, SpaceTimeMesh,
    SpaceTimeSystem,
};
use moderr_core::rng::Rng;

/// Simpson-quadrature posterior moments for the scalar data model
/// `y = g·θ + shift + η` with prior `N(m, var)` and noise `N(0, noise_var)`.
pub fn quad_posterior_1d(
    m: f64,
    var: f64,
    g: f64,
    noise_var: f64,
    shift: f64,
    y: f64,
) -> (f64, f64) {
    let sd = var.sqrt();
    let lo = m - 12.0 * sd;
    let hi = m + 12.0 * sd;
    let n = 20_001;
    let h = (hi - lo) / (n - 1) as f64;
    let dens = |t: f64| {
        let r = y - g * t - shift;
        (-0.5 * ((t - m) * (t - m) / var + r * r / noise_var)).exp()
    };
    let simpson = |f: &dyn Fn(f64) -> f64| {
        let mut s = f(lo) + f(hi);
        for k in 1..n - 1 {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
        }
        s * h / 3.0
    };
    let z = simpson(&dens);
    let mean = simpson(&|t| t * dens(t)) / z;
    let var_post = simpson(&|t| (t - mean) * (t - mean) * dens(t)) / z;
    (mean, var_post)
}

/// Simpson-quadrature KL divergence between scalar Gaussians.
pub fn quad_kl_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    let sd = v1.sqrt();
    let lo = m1 - 14.0 * sd;
    let hi = m1 + 14.0 * sd;
    let n = 40_001;
    let h = (hi - lo) / (n - 1) as f64;
    let logp = |t: f64| -0.5 * ((t - m1) * (t - m1) / v1 + (2.0 * std::f64::consts::PI * v1).ln());
    let logq = |t: f64| -0.5 * ((t - m2) * (t - m2) / v2 + (2.0 * std::f64::consts::PI * v2).ln());
    let f = |t: f64| (logp(t) - logq(t)) * logp(t).exp();
    let mut s = f(lo) + f(hi);
    for k in 1..n - 1 {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
    }
    s * h / 3.0
}

pub struct SelftestReport {
    pub lines: Vec<String>,
    pub failures: Vec<String>,
    pub summary_hash: String,
}

fn fnv(lines: &[String]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for line in lines {
        for b in line.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= b'\n' as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn random_spd(rng: &mut Rng, n: usize) -> SpdMatrix {
    let b = Mat::from_fn(n, n, |_, _| rng.standard_normal());
    let mut a = b.matmul_t(&b);
    for i in 0..n {
        a[(i, i)] += n as f64;
    }
    a.symmetrize();
    SpdMatrix::new(a).expect("spd")
}

fn random_psd(rng: &mut Rng, n: usize) -> Mat {
    let b = Mat::from_fn(n, n, |_, _| rng.standard_normal());
    let mut a = b.matmul_t(&b);
    a.symmetrize();
    a
}

/// Runs the invariant suite. `perturb` injects a deliberate corruption into
/// the model-error solve so the residual check must fail (negative control).
pub fn run_selftest(perturb: bool) -> SelftestReport {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    // the summary hash covers names and outcomes, not the (jittery) timings
    let mut check = |name: &str, result: Result<(), String>, elapsed: f64| {
        let canonical = match &result {
            Ok(()) => format!("selftest: {name} ... ok"),
            Err(msg) => format!("selftest: {name} ... FAILED: {msg}"),
        };
        println!("{canonical} ({elapsed:.2}s)");
        lines.push(canonical);
        if let Err(msg) = result {
            failures.push(format!("{name}: {msg}"));
        }
    };

    // quadratic difference identity on 100 random instances
    let start = Instant::now();
    let result = (|| {
        let mut rng = Rng::new(101);
        for k in 0..100 {
            let d = 1 + (k % 8);
            let m1 = random_spd(&mut rng, d);
            let m2 = random_psd(&mut rng, d);
            let a: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            let (lhs, rhs) =
                quadratic_difference_identity(&a, &b, &m1, &m2).map_err(|e| e.to_string())?;
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            if (lhs - rhs).abs() / scale > 1e-10 {
                return Err(format!("instance {k}: lhs {lhs} vs rhs {rhs}"));
            }
        }
        Ok(())
    })();
    check(
        "quadratic-form difference identity (100 instances)",
        result,
        start.elapsed().as_secs_f64(),
    );

    // inverse-gap PSD property
    let start = Instant::now();
    let result = (|| {
        let mut rng = Rng::new(102);
        for k in 0..50 {
            let d = 1 + (k % 6);
            let m1 = random_spd(&mut rng, d);
            let m2 = random_psd(&mut rng, d);
            let gap = woodbury_gap(&m1, &m2).map_err(|e| e.to_string())?;
            let eig = linalg::sym_eigen(&gap).map_err(|e| e.to_string())?;
            let min = eig.values.first().copied().unwrap_or(0.0);
            if min < -1e-10 {
                return Err(format!("instance {k}: min eigenvalue {min}"));
            }
        }
        Ok(())
    })();
    check(
        "inverse-gap nonnegativity (50 instances)",
        result,
        start.elapsed().as_secs_f64(),
    );

    // norm-equivalence sandwich
    let start = Instant::now();
    let result = (|| {
        let mut rng = Rng::new(103);
        for k in 0..100 {
            let d = 1 + (k % 5);
            let m1 = random_spd(&mut rng, d);
            let m2 = random_psd(&mut rng, d);
            let sum = SpdMatrix::new(m1.entries().add(&m2)).map_err(|e| e.to_string())?;
            let upper = enhanced_noise_constant(&m1, &m2).map_err(|e| e.to_string())?;
            let lower = weighted_operator_norm(&sum, m1.entries()).map_err(|e| e.to_string())?;
            let z: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            let z_m1 = fmath::sqrt(m1.inv_quad_form(&z));
            let z_sum = fmath::sqrt(sum.inv_quad_form(&z));
            if z_m1 > upper * z_sum * (1.0 + 1e-10) + 1e-300 {
                return Err(format!("instance {k}: upper bound fails"));
            }
            if z_sum / lower > z_m1 * (1.0 + 1e-10) + 1e-300 {
                return Err(format!("instance {k}: lower bound fails"));
            }
        }
        Ok(())
    })();
    check(
        "norm-equivalence sandwich (100 instances)",
        result,
        start.elapsed().as_secs_f64(),
    );

    // conditioning against the quadrature oracle
    let start = Instant::now();
    let result = (|| {
        for (m, var, g, nv, shift, y) in [
            (0.0, 1.0, 1.0, 1.0, 0.0, 2.0),
            (0.7, 2.5, 1.4, 0.8, 0.6, 3.1),
            (-1.0, 0.5, -2.0, 2.0, 0.0, 1.5),
        ] {
            let prior = GaussianMeasure::new(
                vec![m],
                SpdMatrix::new(Mat::from_rows(&[&[var]])).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let forward = Mat::from_rows(&[&[g]]);
            let noise = SpdMatrix::new(Mat::from_rows(&[&[nv]])).map_err(|e| e.to_string())?;
            let post = gaussian_condition(&prior, &forward, &noise, &[shift], &[y])
                .map_err(|e| e.to_string())?;
            let (qm, qv) = quad_posterior_1d(m, var, g, nv, shift, y);
            if (post.mean()[0] - qm).abs() > 1e-6 {
                return Err(format!("mean {} vs quadrature {qm}", post.mean()[0]));
            }
            if (post.cov().entries()[(0, 0)] - qv).abs() > 1e-6 {
                return Err(format!(
                    "variance {} vs quadrature {qv}",
                    post.cov().entries()[(0, 0)]
                ));
            }
        }
        Ok(())
    })();
    check(
        "linear-Gaussian conditioning vs quadrature",
        result,
        start.elapsed().as_secs_f64(),
    );

    // KL against the quadrature oracle
    let start = Instant::now();
    let result = (|| {
        for (m1, v1, m2, v2) in [
            (0.0, 2.0, 0.0, 1.0),
            (0.0, 1.0, 1.0, 1.0),
            (0.3, 0.7, -0.2, 1.9),
        ] {
            let p = GaussianMeasure::new(
                vec![m1],
                SpdMatrix::new(Mat::from_rows(&[&[v1]])).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let q = GaussianMeasure::new(
                vec![m2],
                SpdMatrix::new(Mat::from_rows(&[&[v2]])).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let closed = gaussian_kl(&p, &q).map_err(|e| e.to_string())?;
            let quad = quad_kl_1d(m1, v1, m2, v2);
            if (closed - quad).abs() > 1e-6 {
                return Err(format!("closed {closed} vs quadrature {quad}"));
            }
        }
        Ok(())
    })();
    check(
        "Gaussian KL vs quadrature",
        result,
        start.elapsed().as_secs_f64(),
    );

    // model-error residual and the projection identity on a small testbed
    let start = Instant::now();
    let testbed = (|| -> Result<(SpaceTimeSystem, SensorLayout), String> {
        let mesh = SpaceTimeMesh::structured(6, 100).map_err(|e| e.to_string())?;
        let coeffs = PdeCoefficients::defaults(&mesh).map_err(|e| e.to_string())?;
        let op = assemble_system(&mesh, &coeffs).map_err(|e| e.to_string())?;
        let spec = PriorSpec::default();
        let ic = sample_initial_condition(&op, &spec, 11).map_err(|e| e.to_string())?;
        let system = SpaceTimeSystem::assemble(op, ic).map_err(|e| e.to_string())?;
        Ok((system, SensorLayout::reference()))
    })();
    match testbed {
        Err(msg) => {
            check("testbed assembly", Err(msg), start.elapsed().as_secs_f64());
        }
        Ok((mut system, layout)) => {
            check("testbed assembly", Ok(()), start.elapsed().as_secs_f64());

            let start = Instant::now();
            let result = (|| {
                if perturb {
                    // negative control: corrupt the homogeneous solve output
                    let mid = system.delta_best.len() / 2;
                    system.delta_best[mid] += 1e-3 * linalg::norm_inf(&system.delta_best);
                }
                let residual = system
                    .op
                    .apply(&system.delta_best)
                    .map_err(|e| e.to_string())?;
                let nd = system.mesh().num_nodes();
                let tail = linalg::norm_inf(&residual[nd..]);
                let scale = linalg::norm_inf(&system.initial_condition);
                if tail > 1e-10 * scale {
                    return Err(format!("non-initial residual rows at {tail:e}"));
                }
                Ok(())
            })();
            check(
                "model-error vector solves the homogeneous system",
                result,
                start.elapsed().as_secs_f64(),
            );

            let start = Instant::now();
            let result = (|| {
                let od = build_observation(ObservationKind::Pde, &layout, &system)
                    .map_err(|e| e.to_string())?;
                let truth = moderr_core::pde::truth_on_grid(system.mesh());
                let diag = projection_diagnostic(&od, &system, &layout, &truth)
                    .map_err(|e| e.to_string())?;
                if diag.on_window_rel_err > 1e-6 {
                    return Err(format!("window error {:e}", diag.on_window_rel_err));
                }
                if diag.off_window_rel > 1e-6 {
                    return Err(format!("off-window leakage {:e}", diag.off_window_rel));
                }
                Ok(())
            })();
            check(
                "pseudoinverse projection identity on the observation window",
                result,
                start.elapsed().as_secs_f64(),
            );
        }
    }

    // reference source profile probes
    let start = Instant::now();
    check(
        "reference source profile",
        crate::pipeline::truth_probe(),
        start.elapsed().as_secs_f64(),
    );

    let summary_hash = fnv(&lines);
    println!("selftest summary hash: {summary_hash}");
    SelftestReport {
        lines,
        failures,
        summary_hash,
    }
}
