//! The three periodic cell problems on the unit cell.
//!
//! * Six elastic correctors driven by unit macroscopic strains, solved on the
//!   solid skeleton with periodic tying and zero-mean displacement.
//! * One pressure corrector driven by the interface surface load.
//! * Three Stokes flows driven by unit body forces, Taylor-Hood (triquadratic
//!   velocity / trilinear pressure) on the fluid, no-slip at the interface.
//!
//! All solid problems share one sparse factorization and scatter their
//! solutions back onto the full node set through the periodic representatives.

use nalgebra::{Matrix3, Vector3};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::fem::{self, ElemGeom, SparseSystem};
use crate::mesh::{CellMesh, Region, HEX_FACES};
use crate::tensor::{Voigt6, VOIGT_PAIRS};

/// Vector field stored on every mesh node.
pub type NodalField = Vec<Vector3<f64>>;

/// Unit macroscopic strain of a Voigt slot (tensor components).
pub fn unit_strain(slot: usize) -> Matrix3<f64> {
    let (i, j) = VOIGT_PAIRS[slot];
    let mut e = Matrix3::zeros();
    e[(i, j)] += 0.5;
    e[(j, i)] += 0.5;
    e
}

/// Engineering strain 6-vector of a symmetric tensor (shear doubled).
pub fn strain_to_eng(e: &Matrix3<f64>) -> [f64; 6] {
    [
        e[(0, 0)],
        e[(1, 1)],
        e[(2, 2)],
        2.0 * e[(1, 2)],
        2.0 * e[(0, 2)],
        2.0 * e[(0, 1)],
    ]
}

/// Connected components of the elements of one region, periodic adjacency
/// included. Elements of the other region are marked `usize::MAX`.
pub fn region_components(mesh: &CellMesh, region: Region) -> (Vec<usize>, usize) {
    let n = mesh.num_elements();
    let neighbors = mesh.neighbors();
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for seed in 0..n {
        if mesh.labels[seed] != region || comp[seed] != usize::MAX {
            continue;
        }
        let mut stack = vec![seed];
        comp[seed] = count;
        while let Some(e) = stack.pop() {
            for f in 0..6 {
                if let Some(o) = neighbors[e][f] {
                    if mesh.labels[o] == region && comp[o] == usize::MAX {
                        comp[o] = count;
                        stack.push(o);
                    }
                }
            }
        }
        count += 1;
    }
    (comp, count)
}

// ---------------------------------------------------------------------------
// solid problems
// ---------------------------------------------------------------------------

struct SolidDofs {
    /// Dof of (rep node, component), usize::MAX when inactive.
    dof: Vec<usize>,
    n_dofs: usize,
    n_total: usize, // including the three mean multipliers
}

fn solid_dofs(mesh: &CellMesh) -> SolidDofs {
    let n = mesh.num_nodes();
    let mut active = vec![false; n];
    for (e, hex) in mesh.hexes.iter().enumerate() {
        if mesh.labels[e] == Region::Solid {
            for &a in hex {
                active[mesh.reps[a]] = true;
            }
        }
    }
    let mut dof = vec![usize::MAX; 3 * n];
    let mut next = 0;
    for r in 0..n {
        if active[r] && mesh.reps[r] == r {
            for c in 0..3 {
                dof[3 * r + c] = next;
                next += 1;
            }
        }
    }
    SolidDofs {
        dof,
        n_dofs: next,
        n_total: next + 3,
    }
}

/// Engineering strain rows of one node: d eps_I / d u_c for this node.
fn b_rows(grad: &Vector3<f64>) -> [[f64; 3]; 6] {
    [
        [grad[0], 0.0, 0.0],
        [0.0, grad[1], 0.0],
        [0.0, 0.0, grad[2]],
        [0.0, grad[2], grad[1]],
        [grad[2], 0.0, grad[0]],
        [grad[1], grad[0], 0.0],
    ]
}

/// Bilinear face geometry: area-weighted normal at a face quadrature point,
/// oriented outward for the stored corner ordering.
pub fn face_normal(corners: &[Vector3<f64>], u: f64, v: f64) -> Vector3<f64> {
    let du = -corners[0] * (1.0 - v) + corners[1] * (1.0 - v) + corners[2] * v - corners[3] * v;
    let dv = -corners[0] * (1.0 - u) - corners[1] * u + corners[2] * u + corners[3] * (1.0 - u);
    du.cross(&dv)
}

/// Solves the six elastic corrector problems and the pressure corrector in a
/// single factorization. Returns (strain correctors, pressure corrector).
pub fn solve_solid_correctors(
    mesh: &CellMesh,
    d_tensor: &Voigt6,
) -> Result<([NodalField; 6], NodalField)> {
    let (_, n_solid_comp) = region_components(mesh, Region::Solid);
    if n_solid_comp == 0 {
        return Err(Error::Solver("cell has no solid region".into()));
    }
    if n_solid_comp > 1 {
        return Err(Error::Solver(format!(
            "solid region is disconnected ({n_solid_comp} components)"
        )));
    }

    let dofs = solid_dofs(mesh);
    let mut sys = SparseSystem::new(dofs.n_total);
    let mut rhs = vec![vec![0.0; dofs.n_total]; 7];

    let quad = fem::gauss_hex(2);
    let d_mat = d_tensor.0;
    // scale of the mean-displacement rows: the mass weights are O(h^3) while
    // the stiffness diagonal is O(D h), so D/h^2 balances the blocks
    let h = (mesh.num_elements() as f64).cbrt().recip();
    let row_scale = d_mat.norm() / (h * h);

    for (e, hex) in mesh.hexes.iter().enumerate() {
        if mesh.labels[e] != Region::Solid {
            continue;
        }
        let xs = mesh.element_nodes(e);
        let mut ke = [[0.0f64; 24]; 24];
        let mut fe = [[0.0f64; 24]; 6];
        let mut me = [0.0f64; 8];
        for (q, &w) in quad.points.iter().zip(&quad.weights) {
            let ref_grads = fem::q1_grad(q);
            let shapes = fem::q1_shape(q);
            let geo = ElemGeom::new(&xs, &ref_grads);
            let dv = w * geo.det;
            let grads: Vec<Vector3<f64>> = ref_grads.iter().map(|g| geo.phys_grad(g)).collect();
            let mut b = [[0.0f64; 24]; 6];
            for a in 0..8 {
                let rows = b_rows(&grads[a]);
                for i in 0..6 {
                    for c in 0..3 {
                        b[i][3 * a + c] = rows[i][c];
                    }
                }
            }
            let mut db = [[0.0f64; 24]; 6];
            for i in 0..6 {
                for col in 0..24 {
                    let mut s = 0.0;
                    for j in 0..6 {
                        s += d_mat[(i, j)] * b[j][col];
                    }
                    db[i][col] = s;
                }
            }
            for r in 0..24 {
                for c in 0..24 {
                    let mut s = 0.0;
                    for i in 0..6 {
                        s += b[i][r] * db[i][c];
                    }
                    ke[r][c] += s * dv;
                }
            }
            // unit-strain loads: f^I = -B^T D e_I dv (engineering unit vectors)
            for slot in 0..6 {
                for col in 0..24 {
                    fe[slot][col] -= db[slot][col] * dv;
                }
            }
            for a in 0..8 {
                me[a] += shapes[a] * dv * row_scale;
            }
        }
        for la in 0..8 {
            let ra = mesh.reps[hex[la]];
            for c in 0..3 {
                let ga = dofs.dof[3 * ra + c];
                for lb in 0..8 {
                    let rb = mesh.reps[hex[lb]];
                    for cc in 0..3 {
                        let gb = dofs.dof[3 * rb + cc];
                        sys.add(ga, gb, ke[3 * la + c][3 * lb + cc]);
                    }
                }
                for slot in 0..6 {
                    rhs[slot][ga] += fe[slot][3 * la + c];
                }
                let mult = dofs.n_dofs + c;
                sys.add(mult, ga, me[la]);
                sys.add(ga, mult, me[la]);
            }
        }
    }

    // interface surface load for the pressure corrector; the normal points
    // from the solid into the fluid
    let (face_pts, face_ws) = fem::gauss_quad_face();
    for &(e, f) in &mesh.interface {
        let hex = mesh.hexes[e];
        let face = HEX_FACES[f as usize];
        let corners: Vec<Vector3<f64>> = face.iter().map(|&l| mesh.nodes[hex[l]]).collect();
        for (&(u, v), &w) in face_pts.iter().zip(&face_ws) {
            let n4 = [
                (1.0 - u) * (1.0 - v),
                u * (1.0 - v),
                u * v,
                (1.0 - u) * v,
            ];
            let normal = face_normal(&corners, u, v);
            for (k, &l) in face.iter().enumerate() {
                let ra = mesh.reps[hex[l]];
                for c in 0..3 {
                    rhs[6][dofs.dof[3 * ra + c]] += w * n4[k] * normal[c];
                }
            }
        }
    }

    let sols = sys.solve(&rhs)?;

    let scatter = |sol: &[f64]| -> NodalField {
        (0..mesh.num_nodes())
            .map(|a| {
                let r = mesh.reps[a];
                let mut v = Vector3::zeros();
                for c in 0..3 {
                    let g = dofs.dof[3 * r + c];
                    if g != usize::MAX {
                        v[c] = sol[g];
                    }
                }
                v
            })
            .collect()
    };

    let strain = [
        scatter(&sols[0]),
        scatter(&sols[1]),
        scatter(&sols[2]),
        scatter(&sols[3]),
        scatter(&sols[4]),
        scatter(&sols[5]),
    ];
    Ok((strain, scatter(&sols[6])))
}

// ---------------------------------------------------------------------------
// Stokes problem
// ---------------------------------------------------------------------------

/// Scaffold of the Taylor-Hood fluid space. Topology only: node positions are
/// interpolated from the current corner positions, so the same scaffold
/// serves every morph of the mesh.
pub struct StokesSpace {
    /// Mesh elements carrying fluid.
    pub fluid_elems: Vec<usize>,
    /// Per fluid element, the 27 velocity node ids in tensor ordering.
    pub elem_nodes: Vec<[usize; 27]>,
    /// Defining mesh corners of each velocity node (1, 2, 4 or 8 of them).
    pub corners: Vec<Vec<usize>>,
    /// Periodic representative of each velocity node.
    pub reps: Vec<usize>,
    /// No-slip flag per velocity node (true on the interface).
    pub noslip: Vec<bool>,
    /// Fluid component id per fluid element.
    pub components: Vec<usize>,
    pub n_components: usize,
    /// Components with no periodic passage; they carry (near) zero flow.
    pub enclosed: Vec<bool>,
}

impl StokesSpace {
    pub fn build(mesh: &CellMesh) -> StokesSpace {
        let fluid_elems: Vec<usize> = (0..mesh.num_elements())
            .filter(|&e| mesh.labels[e] == Region::Fluid)
            .collect();

        let corner_of = |x: usize, y: usize, z: usize| -> usize {
            match (x, y, z) {
                (0, 0, 0) => 0,
                (1, 0, 0) => 1,
                (1, 1, 0) => 2,
                (0, 1, 0) => 3,
                (0, 0, 1) => 4,
                (1, 0, 1) => 5,
                (1, 1, 1) => 6,
                (0, 1, 1) => 7,
                _ => unreachable!(),
            }
        };
        // lattice value 0 -> {0}, 1 (midpoint) -> {0,1}, 2 -> {1}
        let choices = |v: usize| -> &'static [usize] {
            match v {
                0 => &[0],
                1 => &[0, 1],
                2 => &[1],
                _ => unreachable!(),
            }
        };

        let mut key_to_id: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut corners: Vec<Vec<usize>> = Vec::new();
        let mut elem_nodes = Vec::with_capacity(fluid_elems.len());
        for &e in &fluid_elems {
            let hex = mesh.hexes[e];
            let mut ids = [0usize; 27];
            for c in 0..3usize {
                for b in 0..3usize {
                    for a in 0..3usize {
                        let mut set = Vec::new();
                        for &za in choices(a) {
                            for &zb in choices(b) {
                                for &zc in choices(c) {
                                    set.push(hex[corner_of(za, zb, zc)]);
                                }
                            }
                        }
                        set.sort_unstable();
                        let id = *key_to_id.entry(set.clone()).or_insert_with(|| {
                            corners.push(set.clone());
                            corners.len() - 1
                        });
                        ids[a + 3 * b + 9 * c] = id;
                    }
                }
            }
            elem_nodes.push(ids);
        }

        // periodic representatives via representative-corner keys
        let mut rep_key_to_id: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut reps = vec![0usize; corners.len()];
        for (id, set) in corners.iter().enumerate() {
            let mut key: Vec<usize> = set.iter().map(|&c| mesh.reps[c]).collect();
            key.sort_unstable();
            let r = *rep_key_to_id.entry(key).or_insert(id);
            reps[id] = r;
        }

        // no-slip: all velocity nodes living on interface faces
        let mut noslip = vec![false; corners.len()];
        {
            let mut mark = |set: &mut Vec<usize>| {
                set.sort_unstable();
                if let Some(&id) = key_to_id.get(set) {
                    noslip[id] = true;
                }
            };
            for &(e, f) in &mesh.interface {
                let hex = mesh.hexes[e];
                let face = HEX_FACES[f as usize];
                let quad: Vec<usize> = face.iter().map(|&l| hex[l]).collect();
                for k in 0..4 {
                    mark(&mut vec![quad[k]]);
                    mark(&mut vec![quad[k], quad[(k + 1) % 4]]);
                }
                mark(&mut quad.clone());
            }
        }
        // propagate through periodic orbits
        for id in 0..corners.len() {
            if noslip[id] {
                noslip[reps[id]] = true;
            }
        }
        for id in 0..corners.len() {
            if noslip[reps[id]] {
                noslip[id] = true;
            }
        }

        // fluid components; a component with no wrap-around fluid adjacency
        // cannot carry periodic flow
        let (comp_all, n_components) = region_components(mesh, Region::Fluid);
        let components: Vec<usize> = fluid_elems.iter().map(|&e| comp_all[e]).collect();
        let mut enclosed = vec![true; n_components];
        let neighbors = mesh.neighbors();
        for &e in &fluid_elems {
            let ce: Vector3<f64> = mesh.element_nodes(e).iter().sum::<Vector3<f64>>() / 8.0;
            for f in 0..6 {
                if let Some(o) = neighbors[e][f] {
                    if mesh.labels[o] == Region::Fluid {
                        let co: Vector3<f64> =
                            mesh.element_nodes(o).iter().sum::<Vector3<f64>>() / 8.0;
                        if (ce - co).amax() > 0.75 {
                            enclosed[comp_all[e]] = false;
                        }
                    }
                }
            }
        }

        StokesSpace {
            fluid_elems,
            elem_nodes,
            corners,
            reps,
            noslip,
            components,
            n_components,
            enclosed,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.corners.len()
    }

    /// Position of a velocity node: average of its defining corners, which
    /// equals the trilinear interpolation at its local coordinates.
    pub fn node_position(&self, mesh: &CellMesh, id: usize) -> Vector3<f64> {
        let set = &self.corners[id];
        set.iter().map(|&c| mesh.nodes[c]).sum::<Vector3<f64>>() / set.len() as f64
    }
}

/// Stokes characteristic flows, one per coordinate direction.
pub struct StokesSolution {
    pub space: StokesSpace,
    /// Velocity per direction, on the scaffold's velocity nodes.
    pub velocity: [Vec<Vector3<f64>>; 3],
    /// Pressure per direction, on mesh nodes (zero outside the fluid).
    pub pressure: [Vec<f64>; 3],
}

pub fn solve_stokes(mesh: &CellMesh) -> Result<Option<StokesSolution>> {
    let space = StokesSpace::build(mesh);
    if space.fluid_elems.is_empty() {
        return Ok(None);
    }

    let nv = space.num_nodes();
    let mut vdof = vec![usize::MAX; 3 * nv];
    let mut next = 0;
    for id in 0..nv {
        if space.reps[id] == id && !space.noslip[id] {
            for c in 0..3 {
                vdof[3 * id + c] = next;
                next += 1;
            }
        }
    }
    let mut pmap: HashMap<usize, usize> = HashMap::new();
    for &e in &space.fluid_elems {
        for &a in &mesh.hexes[e] {
            let r = mesh.reps[a];
            let l = pmap.len();
            pmap.entry(r).or_insert(next + l);
        }
    }
    let np = pmap.len();
    let n_total = next + np + space.n_components;
    let mult0 = next + np;

    let mut sys = SparseSystem::new(n_total);
    let mut rhs = vec![vec![0.0; n_total]; 3];

    let quad = fem::gauss_hex(3);
    for (le, &e) in space.fluid_elems.iter().enumerate() {
        let corner_xs = mesh.element_nodes(e);
        let comp = space.components[le];
        let ids = space.elem_nodes[le];
        let mut lap = [[0.0f64; 27]; 27];
        let mut cpl = [[0.0f64; 8]; 81]; // (velocity node, comp) x pressure node
        let mut load = [0.0f64; 27];
        let mut pmean = [0.0f64; 8];
        for (q, &w) in quad.points.iter().zip(&quad.weights) {
            let geo = ElemGeom::new(&corner_xs, &fem::q1_grad(q));
            let dv = w * geo.det;
            let shapes = fem::q2_shape(q);
            let grads: Vec<Vector3<f64>> =
                fem::q2_grad(q).iter().map(|g| geo.phys_grad(g)).collect();
            let q1s = fem::q1_shape(q);
            for a in 0..27 {
                for b in a..27 {
                    let v = grads[a].dot(&grads[b]) * dv;
                    lap[a][b] += v;
                    if a != b {
                        lap[b][a] += v;
                    }
                }
                load[a] += shapes[a] * dv;
                for lq in 0..8 {
                    let nq = q1s[lq] * dv;
                    for c in 0..3 {
                        cpl[3 * a + c][lq] -= nq * grads[a][c];
                    }
                }
            }
            for lq in 0..8 {
                pmean[lq] += q1s[lq] * dv;
            }
        }
        // scatter
        for a in 0..27 {
            let ra = space.reps[ids[a]];
            let free_a = vdof[3 * ra] != usize::MAX;
            if free_a {
                for b in 0..27 {
                    let rb = space.reps[ids[b]];
                    if vdof[3 * rb] != usize::MAX && lap[a][b] != 0.0 {
                        for c in 0..3 {
                            sys.add(vdof[3 * ra + c], vdof[3 * rb + c], lap[a][b]);
                        }
                    }
                }
                for k in 0..3 {
                    rhs[k][vdof[3 * ra + k]] += load[a];
                }
            }
            for (lq, &aq) in mesh.hexes[e].iter().enumerate() {
                let gq = pmap[&mesh.reps[aq]];
                if free_a {
                    for c in 0..3 {
                        let v = cpl[3 * a + c][lq];
                        if v != 0.0 {
                            sys.add(vdof[3 * ra + c], gq, v);
                            sys.add(gq, vdof[3 * ra + c], v);
                        }
                    }
                }
            }
        }
        for (lq, &aq) in mesh.hexes[e].iter().enumerate() {
            let gq = pmap[&mesh.reps[aq]];
            sys.add(mult0 + comp, gq, pmean[lq]);
            sys.add(gq, mult0 + comp, pmean[lq]);
        }
    }

    let sols = sys.solve(&rhs)?;

    let mut velocity: [Vec<Vector3<f64>>; 3] = [
        vec![Vector3::zeros(); nv],
        vec![Vector3::zeros(); nv],
        vec![Vector3::zeros(); nv],
    ];
    let mut pressure: [Vec<f64>; 3] = [
        vec![0.0; mesh.num_nodes()],
        vec![0.0; mesh.num_nodes()],
        vec![0.0; mesh.num_nodes()],
    ];
    for k in 0..3 {
        for id in 0..nv {
            let r = space.reps[id];
            for c in 0..3 {
                let g = vdof[3 * r + c];
                if g != usize::MAX {
                    velocity[k][id][c] = sols[k][g];
                }
            }
        }
        for a in 0..mesh.num_nodes() {
            let r = mesh.reps[a];
            if let Some(&g) = pmap.get(&r) {
                pressure[k][a] = sols[k][g];
            }
        }
    }

    Ok(Some(StokesSolution {
        space,
        velocity,
        pressure,
    }))
}

/// Bundle of all cell responses.
pub struct CellSolution {
    pub strain_correctors: [NodalField; 6],
    pub pressure_corrector: NodalField,
    pub stokes: Option<StokesSolution>,
}

pub fn solve_cell_problems(mesh: &CellMesh, d_tensor: &Voigt6) -> Result<CellSolution> {
    let (strain_correctors, pressure_corrector) = solve_solid_correctors(mesh, d_tensor)?;
    let stokes = solve_stokes(mesh)?;
    Ok(CellSolution {
        strain_correctors,
        pressure_corrector,
        stokes,
    })
}

/// Full gradient of a nodal field at a quadrature point of one element.
pub fn field_gradient(
    mesh: &CellMesh,
    field: &NodalField,
    e: usize,
    geo: &ElemGeom,
    ref_grads: &[[f64; 3]; 8],
) -> Matrix3<f64> {
    let hex = mesh.hexes[e];
    let mut grad = Matrix3::zeros();
    for (a, g) in ref_grads.iter().enumerate() {
        let pg = geo.phys_grad(g);
        let u = field[hex[a]];
        for i in 0..3 {
            for j in 0..3 {
                grad[(i, j)] += u[i] * pg[j];
            }
        }
    }
    grad
}

/// Symmetric gradient (strain) of a nodal field at a quadrature point.
pub fn field_strain(
    mesh: &CellMesh,
    field: &NodalField,
    e: usize,
    geo: &ElemGeom,
    ref_grads: &[[f64; 3]; 8],
) -> Matrix3<f64> {
    let g = field_gradient(mesh, field, e, geo, ref_grads);
    (g + g.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cross_sphere_mesh, ImplicitCellGeometry};
    use approx::assert_relative_eq;

    #[test]
    fn homogeneous_solid_has_zero_correctors() {
        let geom = ImplicitCellGeometry::new([0.0, 0.0, 0.0], 0.0).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 8).unwrap();
        let d = Voigt6::isotropic(1.0, 0.3);
        let (strain, pressure) = solve_solid_correctors(&mesh, &d).unwrap();
        for slot in 0..6 {
            let max = strain[slot].iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(max < 1e-10, "corrector {slot} should vanish, max {max}");
        }
        let maxp = pressure.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(maxp < 1e-10);
    }

    #[test]
    fn unit_strains_are_symmetric() {
        let e = unit_strain(5);
        assert_relative_eq!(e[(0, 1)], 0.5);
        assert_relative_eq!(e[(1, 0)], 0.5);
        assert_relative_eq!(unit_strain(0)[(0, 0)], 1.0);
    }

    #[test]
    fn interface_load_sums_to_zero() {
        // closed (periodized) surface: the total surface load vanishes
        let geom = ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 10).unwrap();
        let (face_pts, face_ws) = fem::gauss_quad_face();
        let mut total = Vector3::zeros();
        for &(e, f) in &mesh.interface {
            let hex = mesh.hexes[e];
            let face = HEX_FACES[f as usize];
            let c: Vec<Vector3<f64>> = face.iter().map(|&l| mesh.nodes[hex[l]]).collect();
            for (&(u, v), &w) in face_pts.iter().zip(&face_ws) {
                total += face_normal(&c, u, v) * w;
            }
        }
        assert!(total.norm() < 1e-12, "total {total:?}");
    }

    #[test]
    fn stokes_divergence_is_weakly_zero() {
        let geom = ImplicitCellGeometry::new([0.2, 0.0, 0.0], 0.0).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 10).unwrap();
        let sol = solve_stokes(&mesh).unwrap().unwrap();
        let quad = fem::gauss_hex(3);
        let mut res: HashMap<usize, f64> = HashMap::new();
        for (le, &e) in sol.space.fluid_elems.iter().enumerate() {
            let corner_xs = mesh.element_nodes(e);
            let ids = sol.space.elem_nodes[le];
            for (q, &w) in quad.points.iter().zip(&quad.weights) {
                let geo = ElemGeom::new(&corner_xs, &fem::q1_grad(q));
                let dv = w * geo.det;
                let grads: Vec<Vector3<f64>> =
                    fem::q2_grad(q).iter().map(|g| geo.phys_grad(g)).collect();
                let q1s = fem::q1_shape(q);
                let mut div = 0.0;
                for a in 0..27 {
                    div += grads[a].dot(&sol.velocity[0][ids[a]]);
                }
                for (lq, &aq) in mesh.hexes[e].iter().enumerate() {
                    *res.entry(mesh.reps[aq]).or_insert(0.0) += q1s[lq] * div * dv;
                }
            }
        }
        let max_res = res.values().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_res < 1e-10, "continuity residual {max_res}");
    }

    #[test]
    fn stokes_no_slip_holds_on_interface() {
        let geom = ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 10).unwrap();
        let sol = solve_stokes(&mesh).unwrap().unwrap();
        for id in 0..sol.space.num_nodes() {
            if sol.space.noslip[id] {
                for k in 0..3 {
                    assert!(sol.velocity[k][id].norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn all_solid_cell_has_no_stokes_solution() {
        let geom = ImplicitCellGeometry::new([0.0, 0.0, 0.0], 0.0).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 8).unwrap();
        assert!(solve_stokes(&mesh).unwrap().is_none());
    }
}
