//! Experiment configuration: a single JSON document whose defaults reproduce
//! the reference experiment, with every constant overridable.

use serde::{Deserialize, Serialize};

/// Top-level configuration. Any subset of fields may appear in the file;
/// unknown fields are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pde: PdeBlock,
    pub prior: PriorBlock,
    pub discretization: DiscretizationBlock,
    pub observation: ObservationBlock,
    pub bounds: BoundsBlock,
    pub joint: JointBlock,
    /// Seed of the reference initial condition that generates the model
    /// error.
    pub ic_seed: u64,
    /// Output directory root (CLI `--out` and `MODERR_OUT` override it).
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pde: PdeBlock::default(),
            prior: PriorBlock::default(),
            discretization: DiscretizationBlock::default(),
            observation: ObservationBlock::default(),
            bounds: BoundsBlock::default(),
            joint: JointBlock::default(),
            ic_seed: 2024,
            output_dir: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeBlock {
    pub kappa: f64,
    pub velocity: VelocitySource,
    pub source_width: f64,
    pub source_center: [f64; 2],
    pub truth: TruthSpec,
}

impl Default for PdeBlock {
    fn default() -> Self {
        PdeBlock {
            kappa: 0.05,
            velocity: VelocitySource::default(),
            source_width: 0.05,
            source_center: [0.5, 0.35],
            truth: TruthSpec::Reference,
        }
    }
}

/// Velocity field: the built-in analytic recirculating field, or a nodal
/// field imported from CSV (columns `vx,vy`, one row per mesh node).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocitySource {
    pub source: String,
    pub path: Option<String>,
}

impl Default for VelocitySource {
    fn default() -> Self {
        VelocitySource {
            source: "analytic".into(),
            path: None,
        }
    }
}

/// Source amplitude used to generate data: the reference piecewise profile
/// or a constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSpec {
    Reference,
    Constant(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorBlock {
    pub theta_mean: f64,
    pub matern_sigma: f64,
    pub matern_length: f64,
    pub ic_mean: f64,
    pub ic_eps: f64,
    pub ic_alpha: f64,
    /// Robin coefficient of the IC covariance; `null` selects `√(ε·α)`.
    pub robin_beta: Option<f64>,
}

impl Default for PriorBlock {
    fn default() -> Self {
        PriorBlock {
            theta_mean: 65.0,
            matern_sigma: 80.0,
            matern_length: 0.17,
            ic_mean: 50.0,
            ic_eps: 4.5e-3,
            ic_alpha: 2.2e-1,
            robin_beta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationBlock {
    /// Nodes per spatial axis of the structured unit-square mesh.
    pub spatial_nodes_per_axis: usize,
    /// Temporal elements on [0, 1]; the node count is one more.
    pub temporal_elements: usize,
    pub mesh: MeshSource,
}

impl Default for DiscretizationBlock {
    fn default() -> Self {
        DiscretizationBlock {
            spatial_nodes_per_axis: 11,
            temporal_elements: 100,
            mesh: MeshSource::default(),
        }
    }
}

/// Mesh: structured triangulation of the unit square, or CSV import
/// (`nodes` with columns `x,y`; `triangles` with columns `v0,v1,v2`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSource {
    pub source: String,
    pub nodes: Option<String>,
    pub triangles: Option<String>,
}

impl Default for MeshSource {
    fn default() -> Self {
        MeshSource {
            source: "structured".into(),
            nodes: None,
            triangles: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationBlock {
    /// `"basic"` or `"pde"`.
    pub kind: String,
    /// `null` selects the reference 8-sensor layout.
    pub sensors: Option<Vec<[f64; 2]>>,
    /// `null` selects the reference 81 observation times.
    pub times: Option<Vec<f64>>,
    pub snr_scale: f64,
    pub seed: u64,
    pub noise_free: bool,
}

impl Default for ObservationBlock {
    fn default() -> Self {
        ObservationBlock {
            kind: "basic".into(),
            sensors: None,
            times: None,
            snr_scale: 0.1,
            seed: 0,
            noise_free: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsBlock {
    pub mc_samples: u64,
    pub mc_seed: u64,
    pub enhanced_snapshots: usize,
    pub enhanced_seed: u64,
    pub use_closed_form: bool,
    /// Subset of pair labels to report (`null` keeps all six).
    pub pairs: Option<Vec<String>>,
}

impl Default for BoundsBlock {
    fn default() -> Self {
        BoundsBlock {
            mc_samples: 10_000,
            mc_seed: 0,
            enhanced_snapshots: 32,
            enhanced_seed: 2,
            use_closed_form: true,
            pairs: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointBlock {
    pub basis_size: usize,
    pub coeff_std: f64,
    pub seed: u64,
    pub include_truth_ic: bool,
}

impl Default for JointBlock {
    fn default() -> Self {
        JointBlock {
            basis_size: 4,
            coeff_std: 50.0,
            seed: 1,
            include_truth_ic: false,
        }
    }
}

pub const PAIR_LABELS: [&str; 6] = [
    "approximate-vs-best",
    "enhanced-vs-best",
    "approx-vs-enhanced",
    "best-vs-joint",
    "approx-vs-joint",
    "enhanced-vs-joint",
];

impl ExperimentConfig {
    /// Semantic validation after parsing; messages name the offending field.
    pub fn validate(&self) -> Result<(), String> {
        match self.pde.velocity.source.as_str() {
            "analytic" => {}
            "file" => {
                if self.pde.velocity.path.is_none() {
                    return Err("missing config field: pde.velocity.path (required when pde.velocity.source = \"file\")".into());
                }
            }
            other => {
                return Err(format!(
                    "invalid config field pde.velocity.source: {other:?} (expected \"analytic\" or \"file\")"
                ))
            }
        }
        match self.discretization.mesh.source.as_str() {
            "structured" => {}
            "file" => {
                if self.discretization.mesh.nodes.is_none() {
                    return Err("missing config field: discretization.mesh.nodes (required when discretization.mesh.source = \"file\")".into());
                }
                if self.discretization.mesh.triangles.is_none() {
                    return Err("missing config field: discretization.mesh.triangles (required when discretization.mesh.source = \"file\")".into());
                }
            }
            other => {
                return Err(format!(
                    "invalid config field discretization.mesh.source: {other:?} (expected \"structured\" or \"file\")"
                ))
            }
        }
        if self.discretization.spatial_nodes_per_axis < 2 {
            return Err(
                "invalid config field discretization.spatial_nodes_per_axis: need at least 2"
                    .into(),
            );
        }
        if self.discretization.temporal_elements < 1 {
            return Err(
                "invalid config field discretization.temporal_elements: need at least 1".into(),
            );
        }
        match self.observation.kind.as_str() {
            "basic" | "pde" => {}
            other => {
                return Err(format!(
                "invalid config field observation.kind: {other:?} (expected \"basic\" or \"pde\")"
            ))
            }
        }
        if !self.observation.snr_scale.is_finite() || self.observation.snr_scale <= 0.0 {
            return Err("invalid config field observation.snr_scale: must be positive".into());
        }
        if matches!(&self.observation.sensors, Some(s) if s.is_empty()) {
            return Err("invalid config field observation.sensors: must be nonempty".into());
        }
        if matches!(&self.observation.times, Some(t) if t.is_empty()) {
            return Err("invalid config field observation.times: must be nonempty".into());
        }
        if !self.pde.kappa.is_finite() || self.pde.kappa <= 0.0 {
            return Err("invalid config field pde.kappa: must be positive".into());
        }
        if !self.pde.source_width.is_finite() || self.pde.source_width <= 0.0 {
            return Err("invalid config field pde.source_width: must be positive".into());
        }
        for (name, value) in [
            ("prior.matern_sigma", self.prior.matern_sigma),
            ("prior.matern_length", self.prior.matern_length),
            ("prior.ic_eps", self.prior.ic_eps),
            ("prior.ic_alpha", self.prior.ic_alpha),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(format!("invalid config field {name}: must be positive"));
            }
        }
        if let Some(beta) = self.prior.robin_beta {
            if !beta.is_finite() || beta < 0.0 {
                return Err("invalid config field prior.robin_beta: must be nonnegative".into());
            }
        }
        if self.bounds.mc_samples < 2 {
            return Err("invalid config field bounds.mc_samples: need at least 2".into());
        }
        if self.bounds.enhanced_snapshots < 2 {
            return Err("invalid config field bounds.enhanced_snapshots: need at least 2".into());
        }
        if let Some(pairs) = &self.bounds.pairs {
            for p in pairs {
                if !PAIR_LABELS.contains(&p.as_str()) {
                    return Err(format!(
                        "invalid config field bounds.pairs: unknown pair {p:?} (expected one of {PAIR_LABELS:?})"
                    ));
                }
            }
        }
        if self.joint.basis_size > 0
            && (!self.joint.coeff_std.is_finite() || self.joint.coeff_std <= 0.0)
        {
            return Err(
                "invalid config field joint.coeff_std: must be positive when joint.basis_size > 0"
                    .into(),
            );
        }
        Ok(())
    }

    /// Canonical JSON serialisation, the input of the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// FNV-1a hash of the canonical JSON; stamped into every output file.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_json().as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
