//! Advection-diffusion testbed on the unit square.
//!
//! The parabolic problem `∂_t w − κΔw + v·∇w = s(x)θ'(t)` with homogeneous
//! Neumann boundary data is discretised by P1 finite elements on a structured
//! triangulation in space and an implicit one-step scheme in time (trapezoidal
//! propagator, right-endpoint vertex-quadrature load). The full space-time
//! operator `A` is block lower-bidiagonal: the `t=0` block rows enforce the
//! initial condition against `b`, and block row `k ≥ 1` reads
//!
//! `(M + Δt/2·K) u_k − (M − Δt/2·K) u_{k−1} = Δt · F · θ'(t_k)`,
//!
//! where `K = κ·stiffness + advection` and `F_i = m_lump,i · s(x_i)` is the
//! vertex-quadrature load. Collocating the load at `t_k` is what gives the
//! PDE observation operator its exact discrete kernel property: applying `A`
//! to any zero-initial-condition solution reproduces the load pattern, and a
//! homogeneous solution is annihilated on every non-initial row.
//!
//! Three solves define the inverse problem: the model matrix `M` maps
//! temporal source coefficients to states (zero initial condition), the
//! model-error vector `δ̃†` is the homogeneous solution carried by the unknown
//! initial condition, and their sum is the best state.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::gaussian::SpdMatrix;
use crate::linalg::{self, Lu, Mat};
use crate::rng::Rng;
use crate::Result;

// ---------------------------------------------------------------------------
// mesh
// ---------------------------------------------------------------------------

/// Triangulated unit square in space, uniform grid in time.
#[derive(Debug, Clone)]
pub struct SpaceTimeMesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    temporal_nodes: Vec<f64>,
    dt: f64,
}

/// Barycentric interpolation stencil for one spatial point.
#[derive(Debug, Clone)]
pub struct SpatialStencil {
    pub nodes: [usize; 3],
    pub weights: [f64; 3],
}

impl SpaceTimeMesh {
    /// Structured triangulation with `nodes_per_axis ≥ 2` nodes per spatial
    /// axis (each grid cell split into two triangles) and `time_elements ≥ 1`
    /// uniform elements on `[0, 1]`.
    pub fn structured(nodes_per_axis: usize, time_elements: usize) -> Result<Self> {
        if nodes_per_axis < 2 {
            return Err(Error::DegenerateResolution {
                detail: "need at least 2 nodes per spatial axis",
            });
        }
        if time_elements < 1 {
            return Err(Error::DegenerateResolution {
                detail: "need at least 1 temporal element",
            });
        }
        let na = nodes_per_axis;
        let h = 1.0 / (na - 1) as f64;
        let mut nodes = Vec::with_capacity(na * na);
        for iy in 0..na {
            for ix in 0..na {
                nodes.push([ix as f64 * h, iy as f64 * h]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (na - 1) * (na - 1));
        for iy in 0..na - 1 {
            for ix in 0..na - 1 {
                let v00 = iy * na + ix;
                let v10 = v00 + 1;
                let v01 = v00 + na;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::from_parts(nodes, triangles, time_elements)
    }

    /// Builds from explicit node and triangle lists (the mesh-import path).
    pub fn from_parts(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        time_elements: usize,
    ) -> Result<Self> {
        if nodes.len() < 3 || triangles.is_empty() {
            return Err(Error::DegenerateResolution {
                detail: "mesh needs at least one triangle",
            });
        }
        if time_elements < 1 {
            return Err(Error::DegenerateResolution {
                detail: "need at least 1 temporal element",
            });
        }
        for tri in &triangles {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::DegenerateResolution {
                    detail: "triangle references a missing node",
                });
            }
            let area = signed_area(&nodes[tri[0]], &nodes[tri[1]], &nodes[tri[2]]);
            if area <= 0.0 {
                return Err(Error::DegenerateResolution {
                    detail: "triangles must be positively oriented with nonzero area",
                });
            }
        }
        let nt = time_elements + 1;
        let dt = 1.0 / time_elements as f64;
        let temporal_nodes: Vec<f64> = (0..nt).map(|k| k as f64 * dt).collect();
        Ok(SpaceTimeMesh {
            nodes,
            triangles,
            temporal_nodes,
            dt,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_temporal_nodes(&self) -> usize {
        self.temporal_nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn temporal_nodes(&self) -> &[f64] {
        &self.temporal_nodes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Total space-time degrees of freedom `N_D · N_T`.
    pub fn dof(&self) -> usize {
        self.num_nodes() * self.num_temporal_nodes()
    }

    /// Flat index of spatial node `n` at temporal node `k`.
    #[inline]
    pub fn dof_index(&self, node: usize, k: usize) -> usize {
        k * self.num_nodes() + node
    }

    /// Maximal element diameter (longest triangle edge).
    pub fn max_element_diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for tri in &self.triangles {
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let pa = self.nodes[tri[a]];
                let pb = self.nodes[tri[b]];
                d = d.max(fmath::hypot(pa[0] - pb[0], pa[1] - pb[1]));
            }
        }
        d
    }

    /// Boundary edges (node pairs that belong to exactly one triangle).
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut counts: Vec<([usize; 2], usize)> = Vec::new();
        for tri in &self.triangles {
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let key = if tri[a] < tri[b] {
                    [tri[a], tri[b]]
                } else {
                    [tri[b], tri[a]]
                };
                match counts.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((key, 1)),
                }
            }
        }
        counts
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(k, _)| k)
            .collect()
    }

    /// Barycentric stencil of the triangle containing `(x, y)`.
    pub fn locate(&self, x: f64, y: f64) -> Result<SpatialStencil> {
        let eps = 1e-10;
        for tri in &self.triangles {
            let [a, b, c] = [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]];
            let area = signed_area(&a, &b, &c);
            let wa = signed_area(&[x, y], &b, &c) / area;
            let wb = signed_area(&a, &[x, y], &c) / area;
            let wc = signed_area(&a, &b, &[x, y]) / area;
            if wa >= -eps && wb >= -eps && wc >= -eps {
                let mut w = [wa.max(0.0), wb.max(0.0), wc.max(0.0)];
                let sum = w[0] + w[1] + w[2];
                for v in w.iter_mut() {
                    *v /= sum;
                }
                return Ok(SpatialStencil {
                    nodes: *tri,
                    weights: w,
                });
            }
        }
        Err(Error::OutsideDomain { x, y })
    }

    /// Temporal hat-function weights for time `t ∈ [0, 1]`: one node when
    /// `t` coincides with a temporal node, two otherwise.
    pub fn temporal_weights(&self, t: f64) -> Result<Vec<(usize, f64)>> {
        let nt = self.num_temporal_nodes();
        if !(-1e-12..=1.0 + 1e-12).contains(&t) {
            return Err(Error::OutsideDomain { x: t, y: 0.0 });
        }
        let pos = (t / self.dt).min((nt - 1) as f64).max(0.0);
        let k = (fmath::floor(pos) as usize).min(nt - 2);
        let s = pos - k as f64;
        if s.abs() < 1e-12 {
            Ok(vec![(k, 1.0)])
        } else if (1.0 - s).abs() < 1e-12 {
            Ok(vec![(k + 1, 1.0)])
        } else {
            Ok(vec![(k, 1.0 - s), (k + 1, s)])
        }
    }
}

#[inline]
fn signed_area(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

// ---------------------------------------------------------------------------
// coefficients, source, truth
// ---------------------------------------------------------------------------

/// PDE coefficients: diffusivity, nodal velocity field, and source geometry.
#[derive(Debug, Clone)]
pub struct PdeCoefficients {
    pub kappa: f64,
    /// Nodal velocity values, normalised so the maximal nodal speed is 1.
    pub velocity: Vec<[f64; 2]>,
    pub source_center: [f64; 2],
    pub source_width: f64,
}

impl PdeCoefficients {
    pub fn new(
        kappa: f64,
        velocity: Vec<[f64; 2]>,
        source_center: [f64; 2],
        source_width: f64,
    ) -> Result<Self> {
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(Error::NegativeInput {
                context: "diffusivity must be positive",
            });
        }
        if !source_width.is_finite() || source_width <= 0.0 {
            return Err(Error::NegativeInput {
                context: "source width must be positive",
            });
        }
        Ok(PdeCoefficients {
            kappa,
            velocity,
            source_center,
            source_width,
        })
    }

    /// Reference defaults: `κ = 0.05`, the analytic recirculating velocity
    /// field, source width `L = 0.05` centred at `(0.5, 0.35)`.
    pub fn defaults(mesh: &SpaceTimeMesh) -> Result<Self> {
        Self::new(0.05, default_velocity(mesh), [0.5, 0.35], 0.05)
    }

    pub fn max_nodal_speed(&self) -> f64 {
        self.velocity
            .iter()
            .fold(0.0_f64, |m, v| m.max(fmath::hypot(v[0], v[1])))
    }

    /// `‖v‖_∞ / (2κ)`.
    pub fn global_peclet(&self) -> f64 {
        self.max_nodal_speed() / (2.0 * self.kappa)
    }

    /// `‖v‖_∞ Δx / (2κ)`.
    pub fn local_peclet(&self, mesh: &SpaceTimeMesh) -> f64 {
        self.max_nodal_speed() * mesh.max_element_diameter() / (2.0 * self.kappa)
    }
}

/// Divergence-free recirculating field `v = ∇⊥ψ`, `ψ = sin²(πx)sin²(πy)`,
/// sampled at the mesh nodes and normalised so the maximal nodal speed is
/// exactly 1. The field vanishes on the whole boundary, so `v·n = 0` there.
pub fn default_velocity(mesh: &SpaceTimeMesh) -> Vec<[f64; 2]> {
    let raw: Vec<[f64; 2]> = mesh
        .nodes()
        .iter()
        .map(|&[x, y]| stream_velocity(x, y))
        .collect();
    let max = raw
        .iter()
        .fold(0.0_f64, |m, v| m.max(fmath::hypot(v[0], v[1])));
    if max == 0.0 {
        return raw;
    }
    raw.iter().map(|v| [v[0] / max, v[1] / max]).collect()
}

/// Unnormalised stream-function velocity at a point.
pub fn stream_velocity(x: f64, y: f64) -> [f64; 2] {
    let pi = fmath::PI;
    let sx = fmath::sin(pi * x);
    let sy = fmath::sin(pi * y);
    let vx = pi * sx * sx * fmath::sin(2.0 * pi * y);
    let vy = -pi * fmath::sin(2.0 * pi * x) * sy * sy;
    [vx, vy]
}

/// Analytic divergence of the unnormalised stream-function field, evaluated
/// as the sum of the two separately computed partial derivatives (so the
/// cancellation is genuine, not symbolic).
pub fn stream_velocity_divergence(x: f64, y: f64) -> f64 {
    let pi = fmath::PI;
    let dvx_dx = pi * pi * fmath::sin(2.0 * pi * x) * fmath::sin(2.0 * pi * y);
    let dvy_dy = -pi * pi * fmath::sin(2.0 * pi * x) * fmath::sin(2.0 * pi * y);
    dvx_dx + dvy_dy
}

/// Spatial source profile `s(x) = (2πL)⁻¹ exp(−|x−x₀|²/(2L))`.
pub fn source_spatial(x: &[f64; 2], width: f64, center: &[f64; 2]) -> f64 {
    let dx = x[0] - center[0];
    let dy = x[1] - center[1];
    fmath::exp(-(dx * dx + dy * dy) / (2.0 * width)) / (2.0 * fmath::PI * width)
}

/// Reference source amplitude `θ†(t)`: constant plateaus at 80 and 50 joined
/// by smooth bump transitions peaking at `t = 0.45`.
pub fn source_temporal_truth(t: f64) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&t) {
        return Err(Error::OutsideDomain { x: t, y: 0.0 });
    }
    let bump = |t: f64| -> f64 {
        let q = 1.0 - 16.0 * (t - 0.45) * (t - 0.45);
        if q <= 0.0 {
            0.0
        } else {
            fmath::exp(1.0 - 1.0 / q)
        }
    };
    Ok(if t <= 0.2 {
        80.0
    } else if t <= 0.45 {
        80.0 + 20.0 * bump(t)
    } else if t <= 0.7 {
        50.0 + 50.0 * bump(t)
    } else {
        50.0
    })
}

/// Nodal interpolation of `θ†` on the temporal grid.
pub fn truth_on_grid(mesh: &SpaceTimeMesh) -> Vec<f64> {
    mesh.temporal_nodes()
        .iter()
        .map(|&t| source_temporal_truth(t).expect("grid times lie in [0,1]"))
        .collect()
}

// ---------------------------------------------------------------------------
// assembly and the space-time operator
// ---------------------------------------------------------------------------

/// Assembled space-time operator: the block structure of `A`, its factorised
/// step block, and the load machinery.
#[derive(Debug, Clone)]
pub struct SpaceTimeOperator {
    mesh: SpaceTimeMesh,
    coeffs: PdeCoefficients,
    mass: Mat,
    stiffness: Mat,
    advection: Mat,
    lumped_mass: Vec<f64>,
    /// Vertex-quadrature load `F_i = m_lump,i · s(x_i)`.
    load_spatial: Vec<f64>,
    /// `Q = M + Δt/2·K` (new-time block).
    q: Mat,
    /// `P = M − Δt/2·K` (old-time block, entering with a minus sign in `A`).
    p: Mat,
    q_lu: Lu,
}

/// Assembles mass/stiffness/advection and the step blocks.
pub fn assemble_system(
    mesh: &SpaceTimeMesh,
    coeffs: &PdeCoefficients,
) -> Result<SpaceTimeOperator> {
    let nd = mesh.num_nodes();
    if coeffs.velocity.len() != nd {
        return Err(Error::DimensionMismatch {
            expected: nd,
            got: coeffs.velocity.len(),
            context: "nodal velocity field",
        });
    }
    let mut mass = Mat::zeros(nd, nd);
    let mut stiffness = Mat::zeros(nd, nd);
    let mut advection = Mat::zeros(nd, nd);
    let mut lumped = vec![0.0; nd];

    for tri in mesh.triangles() {
        let p0 = mesh.nodes()[tri[0]];
        let p1 = mesh.nodes()[tri[1]];
        let p2 = mesh.nodes()[tri[2]];
        let area = signed_area(&p0, &p1, &p2);
        // constant P1 gradients
        let grads = [
            [
                (p1[1] - p2[1]) / (2.0 * area),
                (p2[0] - p1[0]) / (2.0 * area),
            ],
            [
                (p2[1] - p0[1]) / (2.0 * area),
                (p0[0] - p2[0]) / (2.0 * area),
            ],
            [
                (p0[1] - p1[1]) / (2.0 * area),
                (p1[0] - p0[0]) / (2.0 * area),
            ],
        ];
        // nodal velocities, interpolated to edge midpoints
        let v = [
            coeffs.velocity[tri[0]],
            coeffs.velocity[tri[1]],
            coeffs.velocity[tri[2]],
        ];
        let vmid = |a: usize, b: usize| -> [f64; 2] {
            [(v[a][0] + v[b][0]) / 2.0, (v[a][1] + v[b][1]) / 2.0]
        };
        // ∫_T v φ_i dx by the edge-midpoint rule: the two midpoints adjacent
        // to vertex i carry φ_i = 1/2
        let v_phi = [
            [
                (vmid(0, 1)[0] + vmid(2, 0)[0]) * area / 6.0,
                (vmid(0, 1)[1] + vmid(2, 0)[1]) * area / 6.0,
            ],
            [
                (vmid(0, 1)[0] + vmid(1, 2)[0]) * area / 6.0,
                (vmid(0, 1)[1] + vmid(1, 2)[1]) * area / 6.0,
            ],
            [
                (vmid(1, 2)[0] + vmid(2, 0)[0]) * area / 6.0,
                (vmid(1, 2)[1] + vmid(2, 0)[1]) * area / 6.0,
            ],
        ];
        for i in 0..3 {
            lumped[tri[i]] += area / 3.0;
            for j in 0..3 {
                let mij = if i == j { area / 6.0 } else { area / 12.0 };
                mass[(tri[i], tri[j])] += mij;
                stiffness[(tri[i], tri[j])] +=
                    area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                advection[(tri[i], tri[j])] +=
                    v_phi[i][0] * grads[j][0] + v_phi[i][1] * grads[j][1];
            }
        }
    }

    let load_spatial: Vec<f64> = (0..nd)
        .map(|i| {
            lumped[i] * source_spatial(&mesh.nodes()[i], coeffs.source_width, &coeffs.source_center)
        })
        .collect();

    let half_dt = 0.5 * mesh.dt();
    let mut k_mat = stiffness.scale(coeffs.kappa);
    k_mat = k_mat.add(&advection);
    let q = mass.add(&k_mat.scale(half_dt));
    let p = mass.sub(&k_mat.scale(half_dt));
    let q_lu = linalg::lu_factor(&q).map_err(|_| Error::SingularMatrix {
        context: "time-step block factorisation",
    })?;

    Ok(SpaceTimeOperator {
        mesh: mesh.clone(),
        coeffs: coeffs.clone(),
        mass,
        stiffness,
        advection,
        lumped_mass: lumped,
        load_spatial,
        q,
        p,
        q_lu,
    })
}

impl SpaceTimeOperator {
    pub fn mesh(&self) -> &SpaceTimeMesh {
        &self.mesh
    }

    pub fn coeffs(&self) -> &PdeCoefficients {
        &self.coeffs
    }

    pub fn mass(&self) -> &Mat {
        &self.mass
    }

    pub fn stiffness(&self) -> &Mat {
        &self.stiffness
    }

    pub fn advection(&self) -> &Mat {
        &self.advection
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    pub fn load_spatial(&self) -> &[f64] {
        &self.load_spatial
    }

    /// Marches the block system: `u_0 = ic`,
    /// `Q u_k = P u_{k−1} + Δt·F·θ'(t_k)`.
    pub fn solve(&self, theta_nodal: &[f64], ic: &[f64]) -> Result<Vec<f64>> {
        let nd = self.mesh.num_nodes();
        let nt = self.mesh.num_temporal_nodes();
        if theta_nodal.len() != nt {
            return Err(Error::DimensionMismatch {
                expected: nt,
                got: theta_nodal.len(),
                context: "temporal source coefficients",
            });
        }
        if ic.len() != nd {
            return Err(Error::DimensionMismatch {
                expected: nd,
                got: ic.len(),
                context: "initial condition",
            });
        }
        let mut u = vec![0.0; nd * nt];
        u[..nd].copy_from_slice(ic);
        let dt = self.mesh.dt();
        let mut prev = ic.to_vec();
        for k in 1..nt {
            let mut rhs = self.p.matvec(&prev);
            let scale = dt * theta_nodal[k];
            if scale != 0.0 {
                for (r, &f) in rhs.iter_mut().zip(self.load_spatial.iter()) {
                    *r += scale * f;
                }
            }
            let next = self.q_lu.solve(&rhs);
            u[k * nd..(k + 1) * nd].copy_from_slice(&next);
            prev = next;
        }
        Ok(u)
    }

    /// `A u`: initial block rows return `u_0`; block row `k ≥ 1` returns
    /// `Q u_k − P u_{k−1}`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let nd = self.mesh.num_nodes();
        let nt = self.mesh.num_temporal_nodes();
        if u.len() != nd * nt {
            return Err(Error::DimensionMismatch {
                expected: nd * nt,
                got: u.len(),
                context: "space-time vector",
            });
        }
        let mut out = vec![0.0; nd * nt];
        out[..nd].copy_from_slice(&u[..nd]);
        for k in 1..nt {
            let uk = &u[k * nd..(k + 1) * nd];
            let ukm = &u[(k - 1) * nd..k * nd];
            let quk = self.q.matvec(uk);
            let pukm = self.p.matvec(ukm);
            for i in 0..nd {
                out[k * nd + i] = quk[i] - pukm[i];
            }
        }
        Ok(out)
    }

    /// Sparse row of `A` for the space-time test index (node, k).
    pub fn a_row_stencil(&self, node: usize, k: usize) -> Vec<(usize, f64)> {
        let nd = self.mesh.num_nodes();
        if k == 0 {
            return vec![(node, 1.0)];
        }
        let mut row = Vec::new();
        for j in 0..nd {
            let qv = self.q[(node, j)];
            if qv != 0.0 {
                row.push((k * nd + j, qv));
            }
            let pv = self.p[(node, j)];
            if pv != 0.0 {
                row.push(((k - 1) * nd + j, -pv));
            }
        }
        row
    }

    /// Space-time load vector for given source coefficients and initial
    /// condition: the right-hand side `A u` of a solution.
    pub fn load(&self, theta_nodal: &[f64], ic: &[f64]) -> Result<Vec<f64>> {
        let nd = self.mesh.num_nodes();
        let nt = self.mesh.num_temporal_nodes();
        if theta_nodal.len() != nt || ic.len() != nd {
            return Err(Error::DimensionMismatch {
                expected: nt,
                got: theta_nodal.len(),
                context: "load inputs",
            });
        }
        let mut f = vec![0.0; nd * nt];
        f[..nd].copy_from_slice(ic);
        let dt = self.mesh.dt();
        for k in 1..nt {
            let scale = dt * theta_nodal[k];
            for i in 0..nd {
                f[k * nd + i] = scale * self.load_spatial[i];
            }
        }
        Ok(f)
    }

    /// Lumped-mass spatial integral of the field at temporal node `k`.
    pub fn lumped_integral(&self, u: &[f64], k: usize) -> f64 {
        let nd = self.mesh.num_nodes();
        linalg::dot(&self.lumped_mass, &u[k * nd..(k + 1) * nd])
    }
}

/// One column of the model matrix: the solution with zero initial condition
/// and `θ' = ψ_j` (the j-th temporal hat function).
pub fn model_column(op: &SpaceTimeOperator, j: usize) -> Result<Vec<f64>> {
    let nt = op.mesh().num_temporal_nodes();
    let mut theta = vec![0.0; nt];
    theta[j] = 1.0;
    let ic = vec![0.0; op.mesh().num_nodes()];
    op.solve(&theta, &ic)
}

/// Dense model matrix `M ∈ ℝ^{(N_D N_T) × N_T}`, built column by column.
pub fn build_model_matrix(op: &SpaceTimeOperator) -> Result<Mat> {
    let nt = op.mesh().num_temporal_nodes();
    let dof = op.mesh().dof();
    let mut m = Mat::zeros(dof, nt);
    for j in 0..nt {
        let col = model_column(op, j)?;
        m.set_col(j, &col);
    }
    Ok(m)
}

/// Model-error vector `δ̃†`: the homogeneous solution carried by the initial
/// condition `b†`. Solves the IC-only system, so all non-initial rows of
/// `A δ̃†` vanish to solver precision.
pub fn solve_model_error(op: &SpaceTimeOperator, b_best: &[f64]) -> Result<Vec<f64>> {
    let nt = op.mesh().num_temporal_nodes();
    let theta = vec![0.0; nt];
    op.solve(&theta, b_best)
}

/// Assembled testbed: operator, model matrix, model error, and the reference
/// initial condition that generated it.
#[derive(Debug, Clone)]
pub struct SpaceTimeSystem {
    pub op: SpaceTimeOperator,
    pub model_matrix: Mat,
    pub delta_best: Vec<f64>,
    pub initial_condition: Vec<f64>,
}

impl SpaceTimeSystem {
    pub fn assemble(op: SpaceTimeOperator, initial_condition: Vec<f64>) -> Result<Self> {
        let model_matrix = build_model_matrix(&op)?;
        let delta_best = solve_model_error(&op, &initial_condition)?;
        Ok(SpaceTimeSystem {
            op,
            model_matrix,
            delta_best,
            initial_condition,
        })
    }

    pub fn mesh(&self) -> &SpaceTimeMesh {
        self.op.mesh()
    }

    /// Discretised best state `u† = M θ̃† + δ̃†`.
    pub fn best_state(&self, theta_truth: &[f64]) -> Vec<f64> {
        let m_theta = self.model_matrix.matvec(theta_truth);
        linalg::add_vec(&m_theta, &self.delta_best)
    }
}

// ---------------------------------------------------------------------------
// priors
// ---------------------------------------------------------------------------

/// Hyperparameters of the temporal Matérn prior and the initial-condition
/// random field.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub theta_mean: f64,
    pub matern_sigma: f64,
    pub matern_length: f64,
    pub ic_mean: f64,
    pub ic_eps: f64,
    pub ic_alpha: f64,
    /// Robin coefficient of the IC covariance operator; the conventional
    /// choice `√(εα)` reduces boundary artefacts.
    pub robin_beta: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        let ic_eps = 4.5e-3;
        let ic_alpha = 2.2e-1;
        PriorSpec {
            theta_mean: 65.0,
            matern_sigma: 80.0,
            matern_length: 0.17,
            ic_mean: 50.0,
            ic_eps,
            ic_alpha,
            robin_beta: fmath::sqrt(ic_eps * ic_alpha),
        }
    }
}

/// Matérn-3/2 kernel `c(s,t) = σ²(1+√3|s−t|/ℓ)exp(−√3|s−t|/ℓ)`.
pub fn matern_kernel(s: f64, t: f64, sigma: f64, length: f64) -> f64 {
    let r = fmath::sqrt(3.0) * fmath::abs(s - t) / length;
    sigma * sigma * (1.0 + r) * fmath::exp(-r)
}

/// Prior covariance on temporal coefficients: the kernel projected onto the
/// temporal hat basis, `∫ c(t_i, t') ψ_j(t') dt'` by two-point Gauss
/// quadrature per element, with the hat-function mass apportioned
/// symmetrically (a `√(w_i/w_j)` rescaling of the one-sided integral, where
/// `w_j = ∫ψ_j`). One-sided weighting would leave the half-mass boundary
/// columns asymmetric at order one; the symmetric apportioning leaves only
/// the kernel-smoothing asymmetry, which the symmetrisation then absorbs.
/// PSD-clipped on construction.
pub fn matern_prior(mesh: &SpaceTimeMesh, spec: &PriorSpec) -> Result<SpdMatrix> {
    let raw = matern_prior_raw(mesh, spec);
    SpdMatrix::from_symmetric_clipped(raw)
}

/// The quadrature matrix before symmetrisation (exposed so tests can measure
/// the asymmetry the symmetrisation step absorbs).
pub fn matern_prior_raw(mesh: &SpaceTimeMesh, spec: &PriorSpec) -> Mat {
    let nt = mesh.num_temporal_nodes();
    let times = mesh.temporal_nodes();
    let dt = mesh.dt();
    // two-point Gauss on each element
    let gauss = 1.0 / fmath::sqrt(3.0);
    let mut sigma = Mat::zeros(nt, nt);
    for e in 0..nt - 1 {
        let t0 = times[e];
        let mid = t0 + 0.5 * dt;
        for &xi in &[-gauss, gauss] {
            let t = mid + 0.5 * dt * xi;
            let w = 0.5 * dt;
            let s_local = (t - t0) / dt;
            // hat functions on this element
            for (j, phi) in [(e, 1.0 - s_local), (e + 1, s_local)] {
                for i in 0..nt {
                    sigma[(i, j)] +=
                        w * phi * matern_kernel(times[i], t, spec.matern_sigma, spec.matern_length);
                }
            }
        }
    }
    // symmetric apportioning of the hat mass: entry (i,j) carries √(w_i w_j)
    // instead of w_j
    let weight = |k: usize| if k == 0 || k == nt - 1 { 0.5 * dt } else { dt };
    for i in 0..nt {
        for j in 0..nt {
            sigma[(i, j)] *= fmath::sqrt(weight(i) / weight(j));
        }
    }
    sigma
}

/// Robin-regularised Helmholtz-squared sampler for the initial condition:
/// `H = ε·stiffness + α·mass + β·boundary-mass`, one draw is
/// `b = m_b + H⁻¹ G ξ` with `G Gᵀ = mass`, realising the covariance
/// `H⁻¹ · mass · H⁻ᵀ` — the discrete analogue of `(−εΔ+αI)⁻²`.
#[derive(Debug, Clone)]
pub struct IcSampler {
    mean: f64,
    h_factor: Mat,
    mass_factor: Mat,
}

impl IcSampler {
    pub fn new(op: &SpaceTimeOperator, spec: &PriorSpec) -> Result<Self> {
        let nd = op.mesh().num_nodes();
        let mut h = op.stiffness().scale(spec.ic_eps);
        h = h.add(&op.mass().scale(spec.ic_alpha));
        let mut boundary = Mat::zeros(nd, nd);
        for edge in op.mesh().boundary_edges() {
            let pa = op.mesh().nodes()[edge[0]];
            let pb = op.mesh().nodes()[edge[1]];
            let len = fmath::hypot(pa[0] - pb[0], pa[1] - pb[1]);
            boundary[(edge[0], edge[0])] += len / 3.0;
            boundary[(edge[1], edge[1])] += len / 3.0;
            boundary[(edge[0], edge[1])] += len / 6.0;
            boundary[(edge[1], edge[0])] += len / 6.0;
        }
        h = h.add(&boundary.scale(spec.robin_beta));
        h.symmetrize();
        let h_factor = linalg::cholesky(&h)?;
        let mut mass = op.mass().clone();
        mass.symmetrize();
        let mass_factor = linalg::cholesky(&mass)?;
        Ok(IcSampler {
            mean: spec.ic_mean,
            h_factor,
            mass_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.h_factor.rows()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let nd = self.dim();
        let mut xi = vec![0.0; nd];
        rng.fill_standard_normal(&mut xi);
        let g_xi = self.mass_factor.matvec(&xi);
        let fluct = linalg::chol_solve(&self.h_factor, &g_xi);
        fluct.iter().map(|&f| self.mean + f).collect()
    }
}

/// One seeded draw of the initial-condition random field.
pub fn sample_initial_condition(
    op: &SpaceTimeOperator,
    spec: &PriorSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = IcSampler::new(op, spec)?;
    let mut rng = Rng::substream(seed, 0);
    Ok(sampler.sample(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_mesh() -> SpaceTimeMesh {
        SpaceTimeMesh::structured(11, 100).unwrap()
    }

    // --- mesh ---------------------------------------------------------------

    #[test]
    fn minimal_mesh() {
        let mesh = SpaceTimeMesh::structured(2, 1).unwrap();
        assert_eq!(mesh.num_nodes(), 4);
        assert_eq!(mesh.num_triangles(), 2);
        assert_eq!(mesh.num_temporal_nodes(), 2);
    }

    #[test]
    fn default_mesh_scales() {
        let mesh = default_mesh();
        assert_eq!(mesh.num_temporal_nodes(), 101);
        assert!((mesh.dt() - 0.01).abs() < 1e-15);
        let dx = mesh.max_element_diameter();
        assert!((0.11..=0.15).contains(&dx), "dx = {dx}");
        // temporal nodes uniform
        for w in mesh.temporal_nodes().windows(2) {
            assert!((w[1] - w[0] - mesh.dt()).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_resolution_rejected() {
        assert!(SpaceTimeMesh::structured(1, 10).is_err());
        assert!(SpaceTimeMesh::structured(3, 0).is_err());
    }

    #[test]
    fn triangles_positively_oriented() {
        let mesh = default_mesh();
        for tri in mesh.triangles() {
            let area = signed_area(
                &mesh.nodes()[tri[0]],
                &mesh.nodes()[tri[1]],
                &mesh.nodes()[tri[2]],
            );
            assert!(area > 0.0);
        }
        // reversed orientation rejected
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(SpaceTimeMesh::from_parts(nodes, vec![[0, 2, 1]], 1).is_err());
    }

    #[test]
    fn locate_interpolates_linears_exactly() {
        let mesh = default_mesh();
        let st = mesh.locate(0.33, 0.57).unwrap();
        // linear function x + 2y reproduced by barycentric weights
        let val: f64 = st
            .nodes
            .iter()
            .zip(st.weights.iter())
            .map(|(&n, &w)| w * (mesh.nodes()[n][0] + 2.0 * mesh.nodes()[n][1]))
            .sum();
        assert!((val - (0.33 + 2.0 * 0.57)).abs() < 1e-12);
        assert!(mesh.locate(1.5, 0.5).is_err());
    }

    #[test]
    fn temporal_weights_partition_unity() {
        let mesh = default_mesh();
        let w = mesh.temporal_weights(0.105).unwrap();
        assert_eq!(w.len(), 2);
        let sum: f64 = w.iter().map(|&(_, v)| v).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let snapped = mesh.temporal_weights(0.1).unwrap();
        assert_eq!(snapped, vec![(10, 1.0)]);
        assert!(mesh.temporal_weights(1.2).is_err());
    }

    // --- velocity ------------------------------------------------------------

    #[test]
    fn velocity_normalised_and_boundary_free() {
        let mesh = default_mesh();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        assert!((coeffs.max_nodal_speed() - 1.0).abs() < 1e-6);
        for (node, v) in mesh.nodes().iter().zip(coeffs.velocity.iter()) {
            let on_boundary = node[0] < 1e-14
                || node[0] > 1.0 - 1e-14
                || node[1] < 1e-14
                || node[1] > 1.0 - 1e-14;
            if on_boundary {
                assert!(fmath::hypot(v[0], v[1]) < 1e-12, "v·n ≠ 0 at {node:?}");
            }
        }
    }

    #[test]
    fn velocity_divergence_free() {
        let mut rng = crate::rng::Rng::new(40);
        for _ in 0..200 {
            let x = rng.uniform();
            let y = rng.uniform();
            assert!(stream_velocity_divergence(x, y).abs() < 1e-10);
        }
    }

    #[test]
    fn peclet_numbers_at_defaults() {
        let mesh = default_mesh();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        assert!((coeffs.global_peclet() - 10.0).abs() < 1e-12);
        let local = coeffs.local_peclet(&mesh);
        assert!((1.1..=1.5).contains(&local), "local Péclet {local}");
    }

    // --- source --------------------------------------------------------------

    #[test]
    fn truth_profile_values() {
        assert!((source_temporal_truth(0.1).unwrap() - 80.0).abs() < 1e-12);
        assert!((source_temporal_truth(1.0).unwrap() - 50.0).abs() < 1e-9);
        assert!((source_temporal_truth(0.45).unwrap() - 100.0).abs() < 1e-9);
        assert!(source_temporal_truth(1.5).is_err());
        assert!(source_temporal_truth(-0.2).is_err());
    }

    #[test]
    fn truth_profile_continuous_at_breakpoints() {
        for t in [0.2, 0.45, 0.7] {
            let left = source_temporal_truth(t - 1e-13).unwrap();
            let right = source_temporal_truth(t + 1e-13).unwrap();
            let at = source_temporal_truth(t).unwrap();
            assert!((left - at).abs() < 1e-10, "t={t}");
            assert!((right - at).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn source_peak_value() {
        let s = source_spatial(&[0.5, 0.35], 0.05, &[0.5, 0.35]);
        assert!((s - 1.0 / (2.0 * fmath::PI * 0.05)).abs() < 1e-12);
        assert!((s - 3.1831).abs() < 1e-4);
    }

    // --- assembly and solves ---------------------------------------------------

    #[test]
    fn homogeneous_problem_stays_zero() {
        let mesh = SpaceTimeMesh::structured(6, 20).unwrap();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let theta = vec![0.0; mesh.num_temporal_nodes()];
        let ic = vec![0.0; mesh.num_nodes()];
        let u = op.solve(&theta, &ic).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mass_conserved_for_homogeneous_neumann_advection_diffusion() {
        // divergence-free v, zero-flux boundary, θ' ≡ 0: the lumped-mass
        // integral of the field stays constant to 1%.
        let mesh = default_mesh();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let spec = PriorSpec::default();
        let ic = sample_initial_condition(&op, &spec, 99).unwrap();
        let theta = vec![0.0; mesh.num_temporal_nodes()];
        let u = op.solve(&theta, &ic).unwrap();
        let m0 = op.lumped_integral(&u, 0);
        for k in 1..mesh.num_temporal_nodes() {
            let mk = op.lumped_integral(&u, k);
            assert!((mk - m0).abs() / m0.abs() < 0.01, "k={k}: {mk} vs {m0}");
        }
    }

    #[test]
    fn diffusion_dominated_field_flattens() {
        // κ = 10: by t = 1 the field is spatially uniform to 5% relative
        // spread despite the concentrated source.
        let mesh = SpaceTimeMesh::structured(11, 50).unwrap();
        let mut coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        coeffs.kappa = 10.0;
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let theta = vec![65.0; mesh.num_temporal_nodes()];
        let ic = vec![0.0; mesh.num_nodes()];
        let u = op.solve(&theta, &ic).unwrap();
        let nd = mesh.num_nodes();
        let last = &u[(mesh.num_temporal_nodes() - 1) * nd..];
        let mean: f64 = last.iter().sum::<f64>() / nd as f64;
        let spread = last.iter().fold(0.0_f64, |m, &v| m.max((v - mean).abs()));
        assert!(spread / mean < 0.05, "relative spread {}", spread / mean);
    }

    #[test]
    fn model_error_solves_homogeneous_rows() {
        let mesh = SpaceTimeMesh::structured(8, 30).unwrap();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let spec = PriorSpec::default();
        let b = sample_initial_condition(&op, &spec, 7).unwrap();
        let delta = solve_model_error(&op, &b).unwrap();
        let residual = op.apply(&delta).unwrap();
        let nd = mesh.num_nodes();
        let scale = linalg::norm_inf(&b);
        // IC rows reproduce b†, all later rows vanish
        for i in 0..nd {
            assert!((residual[i] - b[i]).abs() < 1e-12 * scale);
        }
        let tail = &residual[nd..];
        assert!(
            linalg::norm_inf(tail) <= 1e-10 * scale,
            "‖tail‖ = {}",
            linalg::norm_inf(tail)
        );
    }

    #[test]
    fn zero_ic_gives_zero_model_error() {
        let mesh = SpaceTimeMesh::structured(5, 10).unwrap();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let delta = solve_model_error(&op, &vec![0.0; mesh.num_nodes()]).unwrap();
        assert!(delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn model_error_deviation_decays() {
        let mesh = default_mesh();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let spec = PriorSpec::default();
        let b = sample_initial_condition(&op, &spec, 13).unwrap();
        let delta = solve_model_error(&op, &b).unwrap();
        let nd = mesh.num_nodes();
        let total_mass: f64 = op.lumped_mass().iter().sum();
        let mut prev = f64::INFINITY;
        for k in 0..mesh.num_temporal_nodes() {
            let slice = &delta[k * nd..(k + 1) * nd];
            let mean = op.lumped_integral(&delta, k) / total_mass;
            let dev: f64 = slice
                .iter()
                .zip(op.lumped_mass())
                .map(|(&v, &m)| m * (v - mean) * (v - mean))
                .sum::<f64>()
                .max(0.0);
            let dev = fmath::sqrt(dev);
            assert!(dev <= prev * (1.0 + 1e-10), "k={k}: {dev} > {prev}");
            prev = dev;
        }
    }

    #[test]
    fn model_matrix_superposition_and_affine_decomposition() {
        let mesh = SpaceTimeMesh::structured(7, 25).unwrap();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let m = build_model_matrix(&op).unwrap();

        // M·0 = 0
        let zero = m.matvec(&vec![0.0; mesh.num_temporal_nodes()]);
        assert!(zero.iter().all(|&v| v == 0.0));

        // superposition is exact for the linear solve
        let col1 = model_column(&op, 3).unwrap();
        let col2 = model_column(&op, 9).unwrap();
        let mut theta = vec![0.0; mesh.num_temporal_nodes()];
        theta[3] = 1.0;
        theta[9] = 1.0;
        let combined = op.solve(&theta, &vec![0.0; mesh.num_nodes()]).unwrap();
        for i in 0..combined.len() {
            assert!((combined[i] - col1[i] - col2[i]).abs() < 1e-12);
        }

        // M θ' + δ̃† equals the one-shot solve for the reference profile and
        // five random source amplitudes
        let spec = PriorSpec::default();
        let b = sample_initial_condition(&op, &spec, 3).unwrap();
        let delta = solve_model_error(&op, &b).unwrap();
        let mut rng = crate::rng::Rng::new(91);
        let mut profiles = vec![truth_on_grid(&mesh)];
        for _ in 0..5 {
            profiles.push(
                (0..mesh.num_temporal_nodes())
                    .map(|_| 65.0 + 20.0 * rng.standard_normal())
                    .collect(),
            );
        }
        for theta in &profiles {
            let direct = op.solve(theta, &b).unwrap();
            let m_theta = m.matvec(theta);
            let scale = linalg::norm_inf(&direct);
            for i in 0..direct.len() {
                let recon = m_theta[i] + delta[i];
                assert!(
                    (recon - direct[i]).abs() <= 1e-9 * scale,
                    "i={i}: {} vs {}",
                    recon,
                    direct[i]
                );
            }
        }
    }

    #[test]
    fn model_matrix_constant_across_ic_and_error_constant_across_theta() {
        let mesh = SpaceTimeMesh::structured(5, 8).unwrap();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        // M never sees the IC, δ̃† never sees θ': verify the affine split
        // solve(θ, b) − solve(0, b) equals M θ for two different b.
        let spec = PriorSpec::default();
        let m = build_model_matrix(&op).unwrap();
        let truth = truth_on_grid(&mesh);
        for seed in [1u64, 2] {
            let b = sample_initial_condition(&op, &spec, seed).unwrap();
            let with_theta = op.solve(&truth, &b).unwrap();
            let without_theta = solve_model_error(&op, &b).unwrap();
            let m_theta = m.matvec(&truth);
            let scale = linalg::norm_inf(&with_theta);
            for i in 0..with_theta.len() {
                assert!(((with_theta[i] - without_theta[i]) - m_theta[i]).abs() < 1e-9 * scale);
            }
        }
    }

    // --- Matérn prior -----------------------------------------------------------

    #[test]
    fn matern_prior_diagonal_scale_and_decay() {
        let mesh = default_mesh();
        let spec = PriorSpec::default();
        let sigma = matern_prior(&mesh, &spec).unwrap();
        let nt = mesh.num_temporal_nodes();
        // interior diagonal ≈ σ²·Δt (mass weight), within kernel curvature
        let mid = sigma.entries()[(50, 50)];
        let expect = 6400.0 * mesh.dt();
        assert!(
            (mid - expect).abs() / expect < 0.05,
            "diagonal {mid} vs {expect}"
        );
        // kernel decay over the full interval: entry ≤ 1e-2·σ²·Δt
        let far = fmath::abs(sigma.entries()[(0, nt - 1)]);
        assert!(far < 1e-2 * expect, "far entry {far}");
    }

    #[test]
    fn matern_prior_asymmetry_small_before_fix() {
        let mesh = default_mesh();
        let spec = PriorSpec::default();
        let raw = matern_prior_raw(&mesh, &spec);
        let anti = raw.sub(&raw.transpose());
        let ratio = anti.frobenius_norm() / raw.frobenius_norm();
        assert!(ratio <= 2e-3, "pre-symmetrisation ‖Σ−Σᵀ‖/‖Σ‖ = {ratio}");
        assert!(ratio > 0.0, "quadrature asymmetry should be nonzero");
    }

    #[test]
    fn matern_prior_is_positive_definite() {
        let mesh = default_mesh();
        let spec = PriorSpec::default();
        let sigma = matern_prior(&mesh, &spec).unwrap();
        // Cholesky succeeded inside the constructor; spot-check a quadratic form
        let ones = vec![1.0; mesh.num_temporal_nodes()];
        let q = linalg::dot(&ones, &sigma.entries().matvec(&ones));
        assert!(q > 0.0);
    }

    // --- IC sampler ----------------------------------------------------------------

    #[test]
    fn ic_sampler_mean_and_determinism() {
        let mesh = SpaceTimeMesh::structured(6, 4).unwrap();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let spec = PriorSpec::default();
        let sampler = IcSampler::new(&op, &spec).unwrap();
        let n = 10_000u64;
        let nd = mesh.num_nodes();
        let mut mean = vec![0.0; nd];
        let mut m2 = vec![0.0; nd];
        for i in 0..n {
            let mut rng = Rng::substream(9, i);
            let b = sampler.sample(&mut rng);
            for (j, &v) in b.iter().enumerate() {
                mean[j] += v;
                m2[j] += v * v;
            }
        }
        for j in 0..nd {
            let m = mean[j] / n as f64;
            let var = (m2[j] / n as f64 - m * m).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (m - 50.0).abs() <= 3.0 * se + 1e-9,
                "node {j}: mean {m} ± {se}"
            );
        }
        // determinism
        let a = sample_initial_condition(&op, &spec, 42).unwrap();
        let b = sample_initial_condition(&op, &spec, 42).unwrap();
        let c = sample_initial_condition(&op, &spec, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ic_variance_field_positive_and_smooth() {
        // The per-node sample variance should be a positive, spatially smooth
        // field: no checkerboard (max edge jump ≤ 50% of the field range).
        let mesh = default_mesh();
        let coeffs = PdeCoefficients::defaults(&mesh).unwrap();
        let op = assemble_system(&mesh, &coeffs).unwrap();
        let spec = PriorSpec::default();
        let sampler = IcSampler::new(&op, &spec).unwrap();
        let n = 2_000u64;
        let nd = mesh.num_nodes();
        let mut s1 = vec![0.0; nd];
        let mut s2 = vec![0.0; nd];
        for i in 0..n {
            let mut rng = Rng::substream(17, i);
            let b = sampler.sample(&mut rng);
            for (j, &v) in b.iter().enumerate() {
                s1[j] += v;
                s2[j] += v * v;
            }
        }
        let var: Vec<f64> = (0..nd)
            .map(|j| {
                let m = s1[j] / n as f64;
                (s2[j] / n as f64 - m * m).max(0.0)
            })
            .collect();
        assert!(var.iter().all(|&v| v > 0.0));

        // no checkerboard: adjacent nodes share at least half their variance
        // (a white-noise or oscillating field has edge correlation ≤ 0)
        let mut rng = Rng::substream(17, 12_345);
        let b = sampler.sample(&mut rng);
        let mean_b: f64 = b.iter().sum::<f64>() / nd as f64;
        let field_var: f64 =
            b.iter().map(|&v| (v - mean_b) * (v - mean_b)).sum::<f64>() / nd as f64;
        let mut jump_sq = 0.0;
        let mut n_edges = 0usize;
        for tri in mesh.triangles() {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let d = b[tri[i]] - b[tri[j]];
                jump_sq += d * d;
                n_edges += 1;
            }
        }
        let edge_corr = 1.0 - jump_sq / (n_edges as f64 * 2.0 * field_var);
        assert!(
            edge_corr >= 0.5,
            "edge correlation {edge_corr} signals a rough field"
        );
    }
}
