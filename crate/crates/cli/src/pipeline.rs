//! Orchestration: configuration → testbed → outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::Serialize;

use moderr_core::experiment::{run_bound_suite, run_oracle_suite, BoundSuite, BoundSuiteConfig};
use moderr_core::gaussian::GaussianMeasure;
use moderr_core::linalg::Mat;
use moderr_core::obs::{
    build_joint_problem, build_observation, compute_posteriors, median_abs,
    observation_time_index_set, projection_diagnostic, small_noise_study, synthesize_data,
    JointProblem, ObservationKind, ObservationOperator, SensorLayout, SyntheticData,
};
use moderr_core::pde::{
    assemble_system, build_model_matrix, matern_prior, model_column, sample_initial_condition,
    solve_model_error, source_temporal_truth, truth_on_grid, PdeCoefficients, PriorSpec,
    SpaceTimeMesh, SpaceTimeOperator, SpaceTimeSystem,
};

use crate::config::{ExperimentConfig, TruthSpec};
use crate::io::{export_mesh, export_velocity, import_mesh, import_velocity, CsvTable};

/// Pipeline failure, tagged with the process exit code it maps to.
#[derive(Debug)]
pub enum PipelineError {
    /// Configuration problem (exit code 2).
    Config(String),
    /// Numerical or IO failure during compute (exit code 3).
    Run(String),
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineError::Config(msg) => write!(f, "configuration error: {msg}"),
            PipelineError::Run(msg) => write!(f, "run error: {msg}"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Run(_) => 3,
        }
    }
}

impl From<moderr_core::Error> for PipelineError {
    fn from(e: moderr_core::Error) -> Self {
        PipelineError::Run(e.to_string())
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Run(e.to_string())
    }
}

type PResult<T> = Result<T, PipelineError>;

/// Loads a config file (or the defaults when `path` is `None`) and
/// validates it.
pub fn load_config(path: Option<&Path>) -> PResult<ExperimentConfig> {
    let cfg: ExperimentConfig = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate().map_err(PipelineError::Config)?;
    Ok(cfg)
}

/// Assembled testbed shared by the subcommands.
pub struct Testbed {
    pub system: SpaceTimeSystem,
    pub layout: SensorLayout,
    pub prior: GaussianMeasure,
    pub prior_spec: PriorSpec,
    pub truth: Vec<f64>,
    pub kind: ObservationKind,
    pub operator: ObservationOperator,
    pub config_hash: String,
}

/// Parallel model-matrix build: columns are independent solves against the
/// shared factorised operator; results are merged in index order so the
/// matrix is identical to the serial build.
pub fn build_model_matrix_par(op: &SpaceTimeOperator, threads: usize) -> PResult<Mat> {
    let nt = op.mesh().num_temporal_nodes();
    if threads <= 1 || nt < 4 {
        return Ok(build_model_matrix(op)?);
    }
    let threads = threads.min(nt);
    let chunk = nt.div_ceil(threads);
    let mut m = Mat::zeros(op.mesh().dof(), nt);
    let results: Vec<Vec<(usize, Vec<f64>)>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..threads {
            let lo = t * chunk;
            let hi = ((t + 1) * chunk).min(nt);
            handles.push(scope.spawn(move || {
                let mut cols = Vec::with_capacity(hi.saturating_sub(lo));
                for j in lo..hi {
                    let col = model_column(op, j).expect("column solve");
                    cols.push((j, col));
                }
                cols
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("join"))
            .collect()
    });
    for chunk_cols in results {
        for (j, col) in chunk_cols {
            m.set_col(j, &col);
        }
    }
    Ok(m)
}

/// Builds mesh, coefficients, operator, priors, truth, and the observation
/// operator from a validated config.
pub fn build_testbed(cfg: &ExperimentConfig, threads: usize) -> PResult<Testbed> {
    let mesh = match cfg.discretization.mesh.source.as_str() {
        "structured" => SpaceTimeMesh::structured(
            cfg.discretization.spatial_nodes_per_axis,
            cfg.discretization.temporal_elements,
        )?,
        "file" => {
            let nodes = cfg.discretization.mesh.nodes.as_ref().expect("validated");
            let tris = cfg
                .discretization
                .mesh
                .triangles
                .as_ref()
                .expect("validated");
            import_mesh(
                Path::new(nodes),
                Path::new(tris),
                cfg.discretization.temporal_elements,
            )
            .map_err(PipelineError::Config)?
        }
        _ => unreachable!("validated"),
    };

    let velocity = match cfg.pde.velocity.source.as_str() {
        "analytic" => moderr_core::pde::default_velocity(&mesh),
        "file" => {
            let path = cfg.pde.velocity.path.as_ref().expect("validated");
            import_velocity(Path::new(path), mesh.num_nodes()).map_err(PipelineError::Config)?
        }
        _ => unreachable!("validated"),
    };
    let coeffs = PdeCoefficients::new(
        cfg.pde.kappa,
        velocity,
        cfg.pde.source_center,
        cfg.pde.source_width,
    )?;

    let op = assemble_system(&mesh, &coeffs)?;

    let mut prior_spec = PriorSpec {
        theta_mean: cfg.prior.theta_mean,
        matern_sigma: cfg.prior.matern_sigma,
        matern_length: cfg.prior.matern_length,
        ic_mean: cfg.prior.ic_mean,
        ic_eps: cfg.prior.ic_eps,
        ic_alpha: cfg.prior.ic_alpha,
        robin_beta: 0.0,
    };
    prior_spec.robin_beta = cfg
        .prior
        .robin_beta
        .unwrap_or_else(|| (cfg.prior.ic_eps * cfg.prior.ic_alpha).sqrt());

    let ic = sample_initial_condition(&op, &prior_spec, cfg.ic_seed)?;
    let model_matrix = build_model_matrix_par(&op, threads)?;
    let delta_best = solve_model_error(&op, &ic)?;
    let system = SpaceTimeSystem {
        op,
        model_matrix,
        delta_best,
        initial_condition: ic,
    };

    let reference = SensorLayout::reference();
    let layout = SensorLayout::new(
        cfg.observation.sensors.clone().unwrap_or(reference.spatial),
        cfg.observation.times.clone().unwrap_or(reference.times),
    );

    let sigma_theta = matern_prior(&mesh, &prior_spec)?;
    let prior = GaussianMeasure::new(
        vec![prior_spec.theta_mean; mesh.num_temporal_nodes()],
        sigma_theta,
    )?;

    let truth = match cfg.pde.truth {
        TruthSpec::Reference => truth_on_grid(&mesh),
        TruthSpec::Constant(v) => vec![v; mesh.num_temporal_nodes()],
    };

    let kind = match cfg.observation.kind.as_str() {
        "basic" => ObservationKind::Basic,
        "pde" => ObservationKind::Pde,
        _ => unreachable!("validated"),
    };
    let operator = build_observation(kind, &layout, &system)?;

    Ok(Testbed {
        system,
        layout,
        prior,
        prior_spec,
        truth,
        kind,
        operator,
        config_hash: cfg.hash(),
    })
}

fn bound_suite_config(cfg: &ExperimentConfig) -> BoundSuiteConfig {
    BoundSuiteConfig {
        mc_samples: cfg.bounds.mc_samples,
        mc_seed: cfg.bounds.mc_seed,
        joint_basis: cfg.joint.basis_size,
        coeff_std: cfg.joint.coeff_std,
        joint_seed: cfg.joint.seed,
        include_truth_ic: cfg.joint.include_truth_ic,
        enhanced_snapshots: cfg.bounds.enhanced_snapshots,
        enhanced_seed: cfg.bounds.enhanced_seed,
        use_closed_form: cfg.bounds.use_closed_form,
    }
}

fn git_hash() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Serialize)]
struct RunMeta<'a> {
    config_hash: &'a str,
    git_hash: String,
    crate_version: &'static str,
    config: &'a ExperimentConfig,
    n_spatial_nodes: usize,
    n_temporal_nodes: usize,
    n_obs: usize,
    max_element_diameter: f64,
    dt: f64,
    global_peclet: f64,
    local_peclet: f64,
    sigma_noise: Option<f64>,
    signal_stats: Option<[f64; 3]>,
    outputs: Vec<String>,
}

fn write_meta(
    cfg: &ExperimentConfig,
    testbed: &Testbed,
    data: Option<&SyntheticData>,
    signal: Option<&[f64]>,
    outputs: Vec<String>,
    dir: &Path,
) -> PResult<()> {
    let mesh = testbed.system.mesh();
    let coeffs = testbed.system.op.coeffs();
    let signal_stats = signal.map(|s| {
        let mut v: Vec<f64> = s.iter().map(|x| x.abs()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        [v[0], median_abs(s), v[v.len() - 1]]
    });
    let meta = RunMeta {
        config_hash: &testbed.config_hash,
        git_hash: git_hash(),
        crate_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        n_spatial_nodes: mesh.num_nodes(),
        n_temporal_nodes: mesh.num_temporal_nodes(),
        n_obs: testbed.operator.n_obs(),
        max_element_diameter: mesh.max_element_diameter(),
        dt: mesh.dt(),
        global_peclet: coeffs.global_peclet(),
        local_peclet: coeffs.local_peclet(mesh),
        sigma_noise: data.map(|d| d.sigma_noise),
        signal_stats,
        outputs,
    };
    let text =
        serde_json::to_string_pretty(&meta).map_err(|e| PipelineError::Run(e.to_string()))?;
    fs::write(dir.join("run_meta.json"), text)?;
    Ok(())
}

#[derive(Serialize)]
struct BoundReportFile<'a> {
    config_hash: &'a str,
    c_enh: f64,
    reports: Vec<serde_json::Value>,
    marginal: &'a [moderr_core::experiment::MarginalReport],
}

fn write_bound_report(
    suite: &BoundSuite,
    cfg: &ExperimentConfig,
    config_hash: &str,
    dir: &Path,
) -> PResult<()> {
    let keep: Vec<serde_json::Value> = suite
        .reports
        .iter()
        .filter(|r| match &cfg.bounds.pairs {
            None => true,
            Some(pairs) => pairs.iter().any(|p| p == r.pair.label()),
        })
        .map(|r| serde_json::to_value(r).expect("report serialises"))
        .collect();
    let file = BoundReportFile {
        config_hash,
        c_enh: suite.c_enh,
        reports: keep,
        marginal: &suite.marginal,
    };
    let text =
        serde_json::to_string_pretty(&file).map_err(|e| PipelineError::Run(e.to_string()))?;
    fs::write(dir.join("bound_report.json"), text)?;

    // flat CSV row per pair for batch sweeps
    let mut csv = CsvTable::new(
        config_hash,
        &[
            "pair_index",
            "lemma_bound",
            "prop_constant_ln",
            "prop_bound",
            "prop_bound_upper",
            "driver",
            "exact_kl",
            "holds",
        ],
    );
    for (i, r) in suite.reports.iter().enumerate() {
        csv.push(vec![
            i as f64,
            r.lemma_bound,
            r.prop_constant_ln,
            r.prop_bound,
            r.prop_bound_upper,
            r.driver.value,
            r.exact_kl.unwrap_or(f64::NAN),
            if r.holds { 1.0 } else { 0.0 },
        ]);
    }
    csv.write(&dir.join("bound_report.csv"))?;
    Ok(())
}

fn build_joint(cfg: &ExperimentConfig, testbed: &Testbed) -> PResult<JointProblem> {
    Ok(build_joint_problem(
        &testbed.system,
        &testbed.operator,
        cfg.joint.basis_size,
        cfg.joint.coeff_std,
        &testbed.prior_spec,
        cfg.joint.seed,
        cfg.joint.include_truth_ic,
    )?)
}

/// Full pipeline: data synthesis, posteriors, diagnostics, bound suite, and
/// the output files (`means.csv`, `covdiag.csv`, `projection.csv`,
/// `small_noise.csv`, `bound_report.json`, `run_meta.json`).
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> PResult<Vec<String>> {
    fs::create_dir_all(out_dir)?;
    let testbed = build_testbed(cfg, threads)?;
    let hash = testbed.config_hash.clone();

    let data = synthesize_data(
        &testbed.operator,
        &testbed.system,
        &testbed.truth,
        cfg.observation.snr_scale,
        cfg.observation.seed,
        cfg.observation.noise_free,
    )?;
    let pair = compute_posteriors(&testbed.operator, &testbed.system, &testbed.prior, &data)?;

    let mesh = testbed.system.mesh();
    let mut means = CsvTable::new(&hash, &["t", "prior_mean", "m_approx", "m_best", "truth"]);
    for (k, &t) in mesh.temporal_nodes().iter().enumerate() {
        means.push(vec![
            t,
            testbed.prior.mean()[k],
            pair.approx.mean()[k],
            pair.best.mean()[k],
            testbed.truth[k],
        ]);
    }
    means.write(&out_dir.join("means.csv"))?;

    let mut covdiag = CsvTable::new(&hash, &["t", "prior_var", "posterior_var"]);
    for (k, &t) in mesh.temporal_nodes().iter().enumerate() {
        covdiag.push(vec![
            t,
            testbed.prior.cov().entries()[(k, k)],
            pair.approx.cov().entries()[(k, k)],
        ]);
    }
    covdiag.write(&out_dir.join("covdiag.csv"))?;

    let diag = projection_diagnostic(
        &testbed.operator,
        &testbed.system,
        &testbed.layout,
        &testbed.truth,
    )?;
    let window = observation_time_index_set(&testbed.system, &testbed.layout);
    let mut projection = CsvTable::new(&hash, &["t", "truth", "projected", "in_window"]);
    for (k, &t) in mesh.temporal_nodes().iter().enumerate() {
        projection.push(vec![
            t,
            testbed.truth[k],
            diag.projected[k],
            if window.contains(&k) { 1.0 } else { 0.0 },
        ]);
    }
    projection.write(&out_dir.join("projection.csv"))?;

    let rows = small_noise_study(
        &testbed.operator,
        &testbed.system,
        &testbed.prior,
        &testbed.truth,
        &testbed.layout,
        &[1e-2, 1e-4, 1e-6],
    )?;
    let mut small_noise = CsvTable::new(&hash, &["scale", "sigma_noise", "rel_err_on_window"]);
    for r in &rows {
        small_noise.push(vec![r.scale, r.sigma_noise, r.rel_err_on_window]);
    }
    small_noise.write(&out_dir.join("small_noise.csv"))?;

    let joint = build_joint(cfg, &testbed)?;
    let suite = run_bound_suite(
        &testbed.system,
        &testbed.operator,
        &testbed.prior,
        &testbed.prior_spec,
        &data,
        &joint,
        &bound_suite_config(cfg),
    )?;
    write_bound_report(&suite, cfg, &hash, out_dir)?;

    let signal: Vec<f64> = data
        .y
        .iter()
        .zip(data.noise_realization.iter())
        .map(|(y, n)| y - n)
        .collect();
    let outputs = vec![
        "means.csv".into(),
        "covdiag.csv".into(),
        "projection.csv".into(),
        "small_noise.csv".into(),
        "bound_report.json".into(),
        "bound_report.csv".into(),
        "run_meta.json".into(),
    ];
    write_meta(
        cfg,
        &testbed,
        Some(&data),
        Some(&signal),
        outputs.clone(),
        out_dir,
    )?;
    Ok(outputs)
}

/// Bound certification only: `bound_report.json` (+ CSV) and `run_meta.json`;
/// with `oracle` also the finite-grid oracle summary.
pub fn cmd_bounds(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    oracle: Option<(usize, u64)>,
    threads: usize,
) -> PResult<Vec<String>> {
    fs::create_dir_all(out_dir)?;
    let testbed = build_testbed(cfg, threads)?;
    let hash = testbed.config_hash.clone();
    let data = synthesize_data(
        &testbed.operator,
        &testbed.system,
        &testbed.truth,
        cfg.observation.snr_scale,
        cfg.observation.seed,
        cfg.observation.noise_free,
    )?;
    let joint = build_joint(cfg, &testbed)?;
    let suite = run_bound_suite(
        &testbed.system,
        &testbed.operator,
        &testbed.prior,
        &testbed.prior_spec,
        &data,
        &joint,
        &bound_suite_config(cfg),
    )?;
    write_bound_report(&suite, cfg, &hash, out_dir)?;
    let mut outputs = vec![
        "bound_report.json".into(),
        "bound_report.csv".into(),
        "run_meta.json".into(),
    ];

    if let Some((instances, seed)) = oracle {
        let summary = run_oracle_suite(instances, seed)?;
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| PipelineError::Run(e.to_string()))?;
        fs::write(out_dir.join("oracle_summary.json"), text)?;
        outputs.push("oracle_summary.json".into());
        if !summary.failures.is_empty() {
            return Err(PipelineError::Run(format!(
                "oracle suite found {} bound violations (see oracle_summary.json)",
                summary.failures.len()
            )));
        }
    }

    write_meta(cfg, &testbed, Some(&data), None, outputs.clone(), out_dir)?;
    Ok(outputs)
}

/// Mesh (and velocity) export for external tooling.
pub fn cmd_mesh_export(cfg: &ExperimentConfig, out_dir: &Path) -> PResult<Vec<String>> {
    fs::create_dir_all(out_dir)?;
    let mesh = SpaceTimeMesh::structured(
        cfg.discretization.spatial_nodes_per_axis,
        cfg.discretization.temporal_elements,
    )?;
    let hash = cfg.hash();
    export_mesh(&mesh, &hash, out_dir)?;
    let velocity = moderr_core::pde::default_velocity(&mesh);
    export_velocity(&velocity, &hash, out_dir)?;
    Ok(vec![
        "nodes.csv".into(),
        "triangles.csv".into(),
        "velocity.csv".into(),
    ])
}

/// Verifies that θ†(t) matches the reference profile at a few probe times —
/// a cheap smoke check exposed for the selftest.
pub fn truth_probe() -> Result<(), String> {
    for (t, expect) in [(0.1, 80.0), (0.45, 100.0), (1.0, 50.0)] {
        let v = source_temporal_truth(t).map_err(|e| e.to_string())?;
        if (v - expect).abs() > 1e-9 {
            return Err(format!("truth profile at t={t}: {v} vs {expect}"));
        }
    }
    Ok(())
}

/// Elapsed-seconds helper for run summaries.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Resolves the output directory: CLI flag, then `MODERR_OUT`, then the
/// config value.
pub fn resolve_out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(root) = std::env::var("MODERR_OUT") {
        if !root.is_empty() {
            return PathBuf::from(root);
        }
    }
    PathBuf::from(&cfg.output_dir)
}
