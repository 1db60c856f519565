//! Structured tetrahedral beam meshes and P1 finite element assembly.
//!
//! Degrees of freedom are node-major (`3·node + component`). The clamped
//! face `x = 0` is eliminated by deleting its rows and columns, so every
//! operator in [`BeamAssembly`] acts on the free DOFs only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

pub const DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoxFace {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFacet {
    pub nodes: [usize; 3],
    pub tet: usize,
    pub face: BoxFace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamMesh {
    pub lengths: [f64; 3],
    pub divisions: [usize; 3],
    pub nodes: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
    pub facets: Vec<BoundaryFacet>,
}

/// Kuhn triangulation of the unit cube: one tet per axis permutation, each a
/// monotone path from corner 0 to corner 7 (bit 0 = x, bit 1 = y, bit 2 = z).
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

pub fn build_mesh(lx: f64, ly: f64, lz: f64, nx: usize, ny: usize, nz: usize) -> Result<BeamMesh> {
    for (name, l) in [("Lx", lx), ("Ly", ly), ("Lz", lz)] {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::invalid(format!("{name} = {l} must be positive")));
        }
    }
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::invalid("subdivisions must be at least 1"));
    }
    let id = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                nodes.push([
                    lx * i as f64 / nx as f64,
                    ly * j as f64 / ny as f64,
                    lz * k as f64 / nz as f64,
                ]);
            }
        }
    }

    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let corner = |b: usize| id(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                for path in KUHN {
                    let mut t = path.map(corner);
                    if signed_volume(&nodes, &t) < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }

    let index = |n: usize| {
        let k = n % (nz + 1);
        let j = (n / (nz + 1)) % (ny + 1);
        let i = n / ((nz + 1) * (ny + 1));
        [i, j, k]
    };
    let mut facets = Vec::new();
    for (e, t) in tets.iter().enumerate() {
        for skip in 0..4 {
            let tri: Vec<usize> = (0..4).filter(|&a| a != skip).map(|a| t[a]).collect();
            let idx: Vec<[usize; 3]> = tri.iter().map(|&n| index(n)).collect();
            let on = |axis: usize, value: usize| idx.iter().all(|c| c[axis] == value);
            let face = if on(0, 0) {
                Some(BoxFace::XMin)
            } else if on(0, nx) {
                Some(BoxFace::XMax)
            } else if on(1, 0) {
                Some(BoxFace::YMin)
            } else if on(1, ny) {
                Some(BoxFace::YMax)
            } else if on(2, 0) {
                Some(BoxFace::ZMin)
            } else if on(2, nz) {
                Some(BoxFace::ZMax)
            } else {
                None
            };
            if let Some(face) = face {
                facets.push(BoundaryFacet {
                    nodes: [tri[0], tri[1], tri[2]],
                    tet: e,
                    face,
                });
            }
        }
    }

    Ok(BeamMesh {
        lengths: [lx, ly, lz],
        divisions: [nx, ny, nz],
        nodes,
        tets,
        facets,
    })
}

fn signed_volume(nodes: &[[f64; 3]], t: &[usize; 4]) -> f64 {
    let p = t.map(|n| nodes[n]);
    let a = sub(p[1], p[0]);
    let b = sub(p[2], p[0]);
    let c = sub(p[3], p[0]);
    dot3(a, cross(b, c)) / 6.0
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl BeamMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_volume(&self, e: usize) -> f64 {
        signed_volume(&self.nodes, &self.tets[e])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|e| self.tet_volume(e)).sum()
    }

    pub fn facets_on(&self, face: BoxFace) -> impl Iterator<Item = &BoundaryFacet> + '_ {
        self.facets.iter().filter(move |f| f.face == face)
    }

    /// Clamped face `x = 0`.
    pub fn dirichlet_facets(&self) -> impl Iterator<Item = &BoundaryFacet> + '_ {
        self.facets_on(BoxFace::XMin)
    }

    /// Loaded and observed face `x = Lx`.
    pub fn neumann_facets(&self) -> impl Iterator<Item = &BoundaryFacet> + '_ {
        self.facets_on(BoxFace::XMax)
    }

    pub fn facet_area(&self, f: &BoundaryFacet) -> f64 {
        let p = f.nodes.map(|n| self.nodes[n]);
        let c = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        0.5 * dot3(c, c).sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub young: f64,
    pub poisson: f64,
    pub density: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            young: 1000.0,
            poisson: 0.3,
            density: 1.0,
        }
    }
}

impl MaterialParams {
    pub fn new(young: f64, poisson: f64, density: f64) -> Result<Self> {
        let m = MaterialParams {
            young,
            poisson,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young.is_finite() && self.young > 0.0) {
            return Err(Error::invalid(format!("Young's modulus {} must be positive", self.young)));
        }
        if !(self.poisson > -1.0 && self.poisson < 0.5) {
            return Err(Error::invalid(format!("Poisson ratio {} outside (-1, 0.5)", self.poisson)));
        }
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(Error::invalid(format!("density {} must be positive", self.density)));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }

    pub fn lambda(&self) -> f64 {
        self.young * self.poisson / ((1.0 + self.poisson) * (1.0 - 2.0 * self.poisson))
    }
}

/// Strain measure the first viscous kernel acts on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViscousStrain {
    /// `ε_d = ε − (1/3) tr ε I`
    #[default]
    Deviatoric,
    /// the full strain `ε`
    Full,
}

/// Factors multiplying the two viscous operators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViscousScaling {
    /// `k_dev * 2μ ε_d(u_t) + k_tr * (λ + 2μ/3) tr ε(u_t) I`: each kernel
    /// relaxes its part of the elastic stress
    #[default]
    ElasticModuli,
    /// `k_dev * ε_d(u_t) + k_tr * tr ε(u_t) I`
    Unit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViscousModel {
    #[serde(default)]
    pub strain: ViscousStrain,
    #[serde(default)]
    pub scaling: ViscousScaling,
}

impl ViscousModel {
    /// `(c_dev, c_tr)` multiplying the unscaled operators.
    pub fn factors(&self, mat: &MaterialParams) -> (f64, f64) {
        match self.scaling {
            ViscousScaling::ElasticModuli => (2.0 * mat.mu(), mat.lambda() + 2.0 * mat.mu() / 3.0),
            ViscousScaling::Unit => (1.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadKind {
    /// traction `[0, ℓ(t), 0]` on the free end
    Bending,
    /// traction `[ℓ(t), 0, 0]` on the free end
    Extension,
}

impl LoadKind {
    pub fn direction(self) -> usize {
        match self {
            LoadKind::Bending => 1,
            LoadKind::Extension => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub kind: LoadKind,
    pub magnitude: f64,
    pub t_load: f64,
}

/// Bending with unit magnitude released at `t = 0.8`.
impl Default for LoadSpec {
    fn default() -> Self {
        LoadSpec::bending(1.0, 0.8)
    }
}

impl LoadSpec {
    pub fn bending(magnitude: f64, t_load: f64) -> Self {
        LoadSpec {
            kind: LoadKind::Bending,
            magnitude,
            t_load,
        }
    }

    pub fn extension(magnitude: f64, t_load: f64) -> Self {
        LoadSpec {
            kind: LoadKind::Extension,
            magnitude,
            t_load,
        }
    }

    /// Linear ramp up to the release time, zero from `t_load` on.
    pub fn profile(&self, t: f64) -> f64 {
        if t >= 0.0 && t < self.t_load {
            self.magnitude * t / self.t_load
        } else {
            0.0
        }
    }
}

/// Map between full node-major DOFs and the free DOFs left after clamping.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    free_of_full: Vec<Option<usize>>,
    full_of_free: Vec<usize>,
}

impl DofMap {
    pub fn new(n_full: usize, fixed: &[bool]) -> Self {
        let mut free_of_full = vec![None; n_full];
        let mut full_of_free = Vec::new();
        for d in 0..n_full {
            if !fixed[d] {
                free_of_full[d] = Some(full_of_free.len());
                full_of_free.push(d);
            }
        }
        DofMap {
            free_of_full,
            full_of_free,
        }
    }

    pub fn n_full(&self) -> usize {
        self.free_of_full.len()
    }

    pub fn n_free(&self) -> usize {
        self.full_of_free.len()
    }

    pub fn free_index(&self, full: usize) -> Option<usize> {
        self.free_of_full[full]
    }

    pub fn full_index(&self, free: usize) -> usize {
        self.full_of_free[free]
    }

    pub fn restrict_matrix(&self, a: &CsrMatrix) -> CsrMatrix {
        let trip: Vec<(usize, usize, f64)> = a
            .triplets()
            .into_iter()
            .filter_map(|(r, c, v)| Some((self.free_of_full[r]?, self.free_of_full[c]?, v)))
            .collect();
        CsrMatrix::from_triplets(self.n_free(), self.n_free(), &trip)
    }

    pub fn restrict_vector(&self, v: &[f64]) -> Vec<f64> {
        self.full_of_free.iter().map(|&d| v[d]).collect()
    }

    pub fn extend_vector(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_full()];
        for (i, &d) in self.full_of_free.iter().enumerate() {
            out[d] = v[i];
        }
        out
    }
}

/// Operators on all node-major DOFs, before clamping.
#[derive(Clone, Debug)]
pub struct FullOperators {
    pub mass: CsrMatrix,
    /// from `ℂε:ε`, assembled through the Voigt form `BᵀDB`
    pub stiffness: CsrMatrix,
    /// from `ε:ε`
    pub strain: CsrMatrix,
    /// from `ε_d:ε_d`
    pub deviatoric: CsrMatrix,
    /// from `tr ε · tr ε`
    pub trace: CsrMatrix,
}

struct ElementMatrices {
    dofs: [usize; 12],
    mass: [[f64; 12]; 12],
    stiffness: [[f64; 12]; 12],
    strain: [[f64; 12]; 12],
    trace: [[f64; 12]; 12],
}

/// Barycentric gradients of a P1 tet and its volume.
fn shape_gradients(p: [[f64; 3]; 4]) -> ([[f64; 3]; 4], f64) {
    let a = sub(p[1], p[0]);
    let b = sub(p[2], p[0]);
    let c = sub(p[3], p[0]);
    let det = dot3(a, cross(b, c));
    // rows of the inverse of [a b c] (columns) are the cofactor vectors / det
    let g1 = cross(b, c).map(|x| x / det);
    let g2 = cross(c, a).map(|x| x / det);
    let g3 = cross(a, b).map(|x| x / det);
    let g0 = [
        -(g1[0] + g2[0] + g3[0]),
        -(g1[1] + g2[1] + g3[1]),
        -(g1[2] + g2[2] + g3[2]),
    ];
    ([g0, g1, g2, g3], det / 6.0)
}

fn element_matrices(mesh: &BeamMesh, e: usize, mat: &MaterialParams) -> Result<ElementMatrices> {
    let t = mesh.tets[e];
    let (g, vol) = shape_gradients(t.map(|n| mesh.nodes[n]));
    if !(vol > 0.0) {
        return Err(Error::InvertedElement { element: e, volume: vol });
    }
    let mut dofs = [0usize; 12];
    for a in 0..4 {
        for i in 0..3 {
            dofs[3 * a + i] = 3 * t[a] + i;
        }
    }
    let mut mass = [[0.0; 12]; 12];
    let mut strain = [[0.0; 12]; 12];
    let mut trace = [[0.0; 12]; 12];
    for a in 0..4 {
        for b in 0..4 {
            let m = mat.density * vol * if a == b { 2.0 } else { 1.0 } / 20.0;
            let gab = dot3(g[a], g[b]);
            for i in 0..3 {
                mass[3 * a + i][3 * b + i] = m;
                for j in 0..3 {
                    let delta = if i == j { gab } else { 0.0 };
                    strain[3 * a + i][3 * b + j] = vol * 0.5 * (delta + g[a][j] * g[b][i]);
                    trace[3 * a + i][3 * b + j] = vol * g[a][i] * g[b][j];
                }
            }
        }
    }

    // Voigt: ε = (ε11, ε22, ε33, 2ε23, 2ε13, 2ε12)
    let (mu, lambda) = (mat.mu(), mat.lambda());
    let mut d = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = lambda;
        }
        d[i][i] += 2.0 * mu;
        d[i + 3][i + 3] = mu;
    }
    let mut bm = [[0.0; 12]; 6];
    for a in 0..4 {
        let [gx, gy, gz] = g[a];
        let c = 3 * a;
        bm[0][c] = gx;
        bm[1][c + 1] = gy;
        bm[2][c + 2] = gz;
        bm[3][c + 1] = gz;
        bm[3][c + 2] = gy;
        bm[4][c] = gz;
        bm[4][c + 2] = gx;
        bm[5][c] = gy;
        bm[5][c + 1] = gx;
    }
    let mut db = [[0.0; 12]; 6];
    for r in 0..6 {
        for c in 0..12 {
            db[r][c] = (0..6).map(|k| d[r][k] * bm[k][c]).sum();
        }
    }
    let mut stiffness = [[0.0; 12]; 12];
    for r in 0..12 {
        for c in 0..12 {
            stiffness[r][c] = vol * (0..6).map(|k| bm[k][r] * db[k][c]).sum::<f64>();
        }
    }
    Ok(ElementMatrices {
        dofs,
        mass,
        stiffness,
        strain,
        trace,
    })
}

fn scatter(n: usize, elems: &[ElementMatrices], pick: impl Fn(&ElementMatrices) -> &[[f64; 12]; 12]) -> CsrMatrix {
    let mut trip = Vec::with_capacity(elems.len() * 144);
    for em in elems {
        let m = pick(em);
        for r in 0..12 {
            for c in 0..12 {
                if m[r][c] != 0.0 {
                    trip.push((em.dofs[r], em.dofs[c], m[r][c]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

/// Element matrices are computed in parallel and scattered in element order,
/// so the result does not depend on the thread count.
pub fn assemble_full(mesh: &BeamMesh, mat: &MaterialParams) -> Result<FullOperators> {
    mat.validate()?;
    let elems: Vec<ElementMatrices> = (0..mesh.tets.len())
        .into_par_iter()
        .map(|e| element_matrices(mesh, e, mat))
        .collect::<Result<_>>()?;
    let n = DIM * mesh.nodes.len();
    let strain = scatter(n, &elems, |m| &m.strain);
    let trace = scatter(n, &elems, |m| &m.trace);
    let deviatoric = CsrMatrix::linear_combination(&[(1.0, &strain), (-1.0 / 3.0, &trace)]);
    Ok(FullOperators {
        mass: scatter(n, &elems, |m| &m.mass),
        stiffness: scatter(n, &elems, |m| &m.stiffness),
        strain,
        deviatoric,
        trace,
    })
}

/// Time-independent operators on the free DOFs of the clamped beam.
#[derive(Clone, Debug)]
pub struct BeamAssembly {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    /// from `ε_d:ε_d` (or `ε:ε` for [`ViscousStrain::Full`])
    pub k_dev: CsrMatrix,
    /// from `tr ε · tr ε`
    pub k_trace: CsrMatrix,
    /// `3 × n_free`, mean displacement of the `x = Lx` face
    pub obs: CsrMatrix,
    /// unit traction in direction `i` on the `x = Lx` face, as free-DOF loads
    pub traction: [Vec<f64>; 3],
    pub dof_map: DofMap,
    pub material: MaterialParams,
    pub viscous: ViscousModel,
    pub volume: f64,
    pub tip_area: f64,
}

pub fn assemble(mesh: &BeamMesh, mat: &MaterialParams) -> Result<BeamAssembly> {
    assemble_with(mesh, mat, ViscousModel::default())
}

pub fn assemble_with(mesh: &BeamMesh, mat: &MaterialParams, viscous: ViscousModel) -> Result<BeamAssembly> {
    let full = assemble_full(mesh, mat)?;
    let n_full = DIM * mesh.nodes.len();
    let mut fixed = vec![false; n_full];
    for (n, x) in mesh.nodes.iter().enumerate() {
        if x[0] == 0.0 {
            for i in 0..DIM {
                fixed[DIM * n + i] = true;
            }
        }
    }
    let dof_map = DofMap::new(n_full, &fixed);

    let mut face_weight = vec![0.0; mesh.nodes.len()];
    let mut tip_area = 0.0;
    for f in mesh.neumann_facets() {
        let a = mesh.facet_area(f);
        tip_area += a;
        for &n in &f.nodes {
            face_weight[n] += a / 3.0;
        }
    }
    let mut traction: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; dof_map.n_free()]);
    let mut obs_trip = Vec::new();
    for (n, &w) in face_weight.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (i, tr) in traction.iter_mut().enumerate() {
            if let Some(d) = dof_map.free_index(DIM * n + i) {
                tr[d] += w;
                obs_trip.push((i, d, w / tip_area));
            }
        }
    }
    let obs = CsrMatrix::from_triplets(DIM, dof_map.n_free(), &obs_trip);

    let dev = match viscous.strain {
        ViscousStrain::Deviatoric => &full.deviatoric,
        ViscousStrain::Full => &full.strain,
    };
    Ok(BeamAssembly {
        mass: dof_map.restrict_matrix(&full.mass),
        stiffness: dof_map.restrict_matrix(&full.stiffness),
        k_dev: dof_map.restrict_matrix(dev),
        k_trace: dof_map.restrict_matrix(&full.trace),
        obs,
        traction,
        dof_map,
        material: *mat,
        viscous,
        volume: mesh.total_volume(),
        tip_area,
    })
}

impl BeamAssembly {
    pub fn n_free(&self) -> usize {
        self.dof_map.n_free()
    }

    /// Operators the two kernels act through, with the model's scaling.
    pub fn viscous_operators(&self) -> (CsrMatrix, CsrMatrix) {
        let (cd, ct) = self.viscous.factors(&self.material);
        (self.k_dev.scaled(cd), self.k_trace.scaled(ct))
    }

    /// Free-DOF load shape of a unit-magnitude traction of the given kind.
    pub fn load_shape(&self, kind: LoadKind) -> &[f64] {
        &self.traction[kind.direction()]
    }

    pub fn load_vector(&self, spec: &LoadSpec, t: f64) -> Vec<f64> {
        let l = spec.profile(t);
        self.load_shape(spec.kind).iter().map(|g| l * g).collect()
    }

    /// `Obs · u` for a free-DOF displacement.
    pub fn observe(&self, u: &[f64]) -> [f64; 3] {
        let y = self.obs.apply(u);
        [y[0], y[1], y[2]]
    }
}
