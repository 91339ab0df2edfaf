//! Labeled periodic hexahedral meshes of the unit cell.
//!
//! The cell is the unit cube split into a solid skeleton and a fluid channel
//! system. Boundary nodes are identified with their periodic partners through
//! a representative table; the solid/fluid interface is stored as a list of
//! solid-element faces whose normals point into the fluid. Every node carries
//! the parameter preimage assigned at creation, which is what the spline box
//! morphs.

mod generate;
mod io;

pub use generate::{generate_cross_sphere_mesh, ImplicitCellGeometry};
pub use io::{export_vtk, write_legacy_vtk, CellMeshRecord};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::fem;
use crate::spline::{DesignVector, SplineBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Solid,
    Fluid,
}

/// Local corner coordinates of the hexahedron in [0,1]^3 (VTK ordering).
pub const HEX_CORNERS: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// Local node ids of the six faces, ordered so the right-hand rule gives the
/// outward normal.
pub const HEX_FACES: [[usize; 4]; 6] = [
    [0, 4, 7, 3], // x-
    [1, 2, 6, 5], // x+
    [0, 1, 5, 4], // y-
    [3, 7, 6, 2], // y+
    [0, 3, 2, 1], // z-
    [4, 5, 6, 7], // z+
];

#[derive(Debug, Clone)]
pub struct CellMesh {
    pub nodes: Vec<Vector3<f64>>,
    pub hexes: Vec<[usize; 8]>,
    pub labels: Vec<Region>,
    /// Solid-element faces on the interface; normals point from solid into fluid.
    pub interface: Vec<(usize, u8)>,
    /// Periodic orbit representative of each node (identity for interior nodes).
    pub reps: Vec<usize>,
    /// Parameter preimage of each node in [0,1]^3.
    pub preimages: Vec<Vector3<f64>>,
}

impl CellMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.hexes.len()
    }

    pub fn element_nodes(&self, e: usize) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (k, &n) in self.hexes[e].iter().enumerate() {
            out[k] = self.nodes[n];
        }
        out
    }

    /// Volume of one element by Gauss quadrature.
    pub fn element_volume(&self, e: usize) -> f64 {
        let xs = self.element_nodes(e);
        let quad = fem::gauss_hex(2);
        let mut v = 0.0;
        for (q, &w) in quad.points.iter().zip(&quad.weights) {
            let grads = fem::q1_grad(q);
            let geo = fem::ElemGeom::new(&xs, &grads);
            v += w * geo.det;
        }
        v
    }

    pub fn volume(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.element_volume(e)).sum()
    }

    pub fn region_volume(&self, region: Region) -> f64 {
        (0..self.num_elements())
            .filter(|&e| self.labels[e] == region)
            .map(|e| self.element_volume(e))
            .sum()
    }

    pub fn porosity(&self) -> f64 {
        self.region_volume(Region::Fluid) / self.volume()
    }

    /// Minimum Jacobian determinant over all elements (2x2x2 Gauss points).
    pub fn min_jacobian(&self) -> (usize, f64) {
        let quad = fem::gauss_hex(2);
        let mut min = (0usize, f64::INFINITY);
        for e in 0..self.num_elements() {
            let xs = self.element_nodes(e);
            for q in &quad.points {
                let grads = fem::q1_grad(q);
                let det = fem::ElemGeom::jacobian_det(&xs, &grads);
                if det < min.1 {
                    min = (e, det);
                }
            }
        }
        min
    }

    pub fn check_jacobians(&self) -> Result<()> {
        let (e, det) = self.min_jacobian();
        if det <= 0.0 {
            return Err(Error::TangledElement { element: e, det });
        }
        Ok(())
    }

    /// Moves every node to the spline image of its preimage. Connectivity,
    /// labels, pairs and preimages are unchanged.
    pub fn morphed(&self, b: &SplineBox, d: &DesignVector) -> Result<CellMesh> {
        let mut out = self.clone();
        for (node, t) in out.nodes.iter_mut().zip(&self.preimages) {
            *node = b.evaluate_map(d, t);
        }
        out.check_jacobians()?;
        Ok(out)
    }

    /// Face-adjacency map keyed by the periodic representatives of the face
    /// corners; every face of the periodic cell has exactly two entries.
    pub fn face_adjacency(&self) -> HashMap<[usize; 4], Vec<(usize, u8)>> {
        let mut map: HashMap<[usize; 4], Vec<(usize, u8)>> = HashMap::new();
        for (e, hex) in self.hexes.iter().enumerate() {
            for (f, face) in HEX_FACES.iter().enumerate() {
                let mut key = [0usize; 4];
                for (k, &ln) in face.iter().enumerate() {
                    key[k] = self.reps[hex[ln]];
                }
                key.sort_unstable();
                map.entry(key).or_default().push((e, f as u8));
            }
        }
        map
    }

    /// Neighbor element across each face, using periodic identification.
    pub fn neighbors(&self) -> Vec<[Option<usize>; 6]> {
        let map = self.face_adjacency();
        let mut out = vec![[None; 6]; self.num_elements()];
        for entries in map.values() {
            if entries.len() == 2 {
                let (e0, f0) = entries[0];
                let (e1, f1) = entries[1];
                out[e0][f0 as usize] = Some(e1);
                out[e1][f1 as usize] = Some(e0);
            }
        }
        out
    }

    /// Structural and geometric validation per the mesh contract.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.preimages.len() != n || self.reps.len() != n {
            return Err(Error::InvalidMesh("node table sizes disagree".into()));
        }
        if self.labels.len() != self.num_elements() {
            return Err(Error::InvalidMesh("one label per element required".into()));
        }
        for hex in &self.hexes {
            if hex.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh("hex references missing node".into()));
            }
        }
        for (i, &r) in self.reps.iter().enumerate() {
            if r >= n || self.reps[r] != r {
                return Err(Error::InvalidMesh(format!(
                    "node {i}: representative {r} is not canonical"
                )));
            }
        }
        // every face must be shared by exactly two elements after periodic
        // identification, otherwise a boundary node lacks its partner
        for (key, entries) in self.face_adjacency() {
            if entries.len() != 2 {
                return Err(Error::InvalidMesh(format!(
                    "face {key:?} has {} incident elements; boundary node lacks a periodic partner",
                    entries.len()
                )));
            }
        }
        for &(e, f) in &self.interface {
            if e >= self.num_elements() || f >= 6 {
                return Err(Error::InvalidMesh("interface facet out of range".into()));
            }
            if self.labels[e] != Region::Solid {
                return Err(Error::InvalidMesh(
                    "interface facet must be stored on its solid side".into(),
                ));
            }
        }
        self.check_jacobians()
    }

    /// Periodic pairs (node, representative) for nodes that are not canonical.
    pub fn periodic_pairs(&self) -> Vec<(usize, usize)> {
        self.reps
            .iter()
            .enumerate()
            .filter(|&(i, &r)| i != r)
            .map(|(i, &r)| (i, r))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_mesh() -> CellMesh {
        generate_cross_sphere_mesh(
            &ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap(),
            12,
        )
        .unwrap()
    }

    #[test]
    fn volumes_add_up() {
        let mesh = reference_mesh();
        let total = mesh.volume();
        let solid = mesh.region_volume(Region::Solid);
        let fluid = mesh.region_volume(Region::Fluid);
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        assert_relative_eq!(solid + fluid, total, epsilon = 1e-12);
    }

    #[test]
    fn periodic_pairs_differ_by_cell_edge() {
        let mesh = reference_mesh();
        for (slave, master) in mesh.periodic_pairs() {
            let d = mesh.nodes[slave] - mesh.nodes[master];
            for k in 0..3 {
                let c = d[k].abs();
                assert!(c < 1e-12 || (c - 1.0).abs() < 1e-12, "offset {c}");
            }
            assert!(d.norm() > 0.5);
        }
    }

    #[test]
    fn morph_with_zero_design_is_identity() {
        let mesh = reference_mesh();
        let b = SplineBox::build([2, 2, 2], [2, 2, 2], 0.05).unwrap();
        let d = DesignVector::zeros(&b);
        let morphed = mesh.morphed(&b, &d).unwrap();
        for (a, b) in mesh.nodes.iter().zip(&morphed.nodes) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn morph_is_linear_in_the_design() {
        let mesh = reference_mesh();
        let b = SplineBox::build([2, 2, 2], [2, 2, 2], 0.05).unwrap();
        let space = crate::spline::DesignSpace::new(&b, false);
        let mut d1 = DesignVector::zeros(&b);
        d1.alpha[0] = Vector3::new(0.01, 0.0, -0.005);
        let mut d2 = DesignVector::zeros(&b);
        d2.beta[2] = Vector3::new(0.0, 0.004, 0.01);
        let x1 = space.to_vec(&d1);
        let x2 = space.to_vec(&d2);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + 0.5 * b).collect();
        let m1 = mesh.morphed(&b, &d1).unwrap();
        let m2 = mesh.morphed(&b, &d2).unwrap();
        let mm = mesh.morphed(&b, &space.from_vec(&mix)).unwrap();
        for i in 0..mesh.num_nodes() {
            let lin = m1.nodes[i] + (m2.nodes[i] - mesh.nodes[i]) * 0.5;
            assert!((mm.nodes[i] - lin).norm() < 1e-12);
        }
    }

    #[test]
    fn sheared_cell_keeps_positive_jacobians() {
        let mesh = reference_mesh();
        let b = SplineBox::build([2, 2, 2], [2, 2, 2], 0.05).unwrap();
        let mut d = DesignVector::zeros(&b);
        d.beta[0] = Vector3::new(0.0, 0.08, 0.0);
        let morphed = mesh.morphed(&b, &d).unwrap();
        assert!(morphed.min_jacobian().1 > 0.0);
        // sheared cell volume equals the lattice triple product
        let e1 = Vector3::new(1.0, 0.08, 0.0);
        let e2 = Vector3::y();
        let e3 = Vector3::z();
        assert_relative_eq!(morphed.volume(), e1.dot(&e2.cross(&e3)), epsilon = 1e-10);
    }
}
