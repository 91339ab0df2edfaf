//! Structured generation of the cross-and-sphere reference cell.

use nalgebra::Vector3;

use super::{CellMesh, Region, HEX_FACES};
use crate::error::{Error, Result};

/// Implicit pore geometry: axis-aligned cylindrical channels through the
/// cell center plus a centered sphere. A zero radius disables that part.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitCellGeometry {
    pub radii: [f64; 3],
    pub sphere: f64,
}

impl ImplicitCellGeometry {
    pub fn new(radii: [f64; 3], sphere: f64) -> Result<Self> {
        for &a in &radii {
            if !(0.0..0.5).contains(&a) {
                return Err(Error::Geometry(format!(
                    "channel radius {a} must lie in [0, 1/2)"
                )));
            }
        }
        if !(0.0..0.5).contains(&sphere) {
            return Err(Error::Geometry(format!(
                "sphere radius {sphere} must lie in [0, 1/2)"
            )));
        }
        Ok(ImplicitCellGeometry { radii, sphere })
    }

    /// Signed distance-like function: negative inside the pore.
    pub fn level(&self, y: &Vector3<f64>) -> f64 {
        let c = Vector3::new(0.5, 0.5, 0.5);
        let mut f = f64::INFINITY;
        for axis in 0..3 {
            let a = self.radii[axis];
            if a > 0.0 {
                let (j, k) = ((axis + 1) % 3, (axis + 2) % 3);
                let r = ((y[j] - c[j]).powi(2) + (y[k] - c[k]).powi(2)).sqrt();
                f = f.min(r - a);
            }
        }
        if self.sphere > 0.0 {
            f = f.min((y - c).norm() - self.sphere);
        }
        if f == f64::INFINITY {
            0.5 // no pore anywhere
        } else {
            f
        }
    }

    fn gradient(&self, y: &Vector3<f64>) -> Vector3<f64> {
        // gradient of the active (minimal) part
        let c = Vector3::new(0.5, 0.5, 0.5);
        let mut best = f64::INFINITY;
        let mut g = Vector3::zeros();
        for axis in 0..3 {
            let a = self.radii[axis];
            if a > 0.0 {
                let (j, k) = ((axis + 1) % 3, (axis + 2) % 3);
                let r = ((y[j] - c[j]).powi(2) + (y[k] - c[k]).powi(2)).sqrt();
                if r - a < best && r > 1e-14 {
                    best = r - a;
                    g = Vector3::zeros();
                    g[j] = (y[j] - c[j]) / r;
                    g[k] = (y[k] - c[k]) / r;
                }
            }
        }
        if self.sphere > 0.0 {
            let r = (y - c).norm();
            if r - self.sphere < best && r > 1e-14 {
                g = (y - c) / r;
            }
        }
        g
    }

    /// True when each nonzero channel spans the cell (needed for a positive
    /// definite permeability).
    pub fn has_through_channel(&self, axis: usize) -> bool {
        self.radii[axis] > 0.0
    }
}

/// Generates the body-fitted structured mesh of the cross-and-sphere cell.
///
/// Elements are labeled by the sign of the implicit function at their
/// centroids; interface nodes are then projected onto the zero level set
/// along the gradient, with the movement capped at half a cell width.
pub fn generate_cross_sphere_mesh(
    geom: &ImplicitCellGeometry,
    resolution: usize,
) -> Result<CellMesh> {
    if resolution < 8 {
        return Err(Error::MeshGeneration(format!(
            "resolution {resolution} below the minimum of 8"
        )));
    }
    let n = resolution;
    let np = n + 1;
    let h = 1.0 / n as f64;

    let node_id = |i: usize, j: usize, k: usize| (i * np + j) * np + k;
    let mut nodes = Vec::with_capacity(np * np * np);
    for i in 0..np {
        for j in 0..np {
            for k in 0..np {
                nodes.push(Vector3::new(i as f64 * h, j as f64 * h, k as f64 * h));
            }
        }
    }

    let mut hexes = Vec::with_capacity(n * n * n);
    let mut labels = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let hex = [
                    node_id(i, j, k),
                    node_id(i + 1, j, k),
                    node_id(i + 1, j + 1, k),
                    node_id(i, j + 1, k),
                    node_id(i, j, k + 1),
                    node_id(i + 1, j, k + 1),
                    node_id(i + 1, j + 1, k + 1),
                    node_id(i, j + 1, k + 1),
                ];
                let centroid = Vector3::new(
                    (i as f64 + 0.5) * h,
                    (j as f64 + 0.5) * h,
                    (k as f64 + 0.5) * h,
                );
                hexes.push(hex);
                labels.push(if geom.level(&centroid) < 0.0 {
                    Region::Fluid
                } else {
                    Region::Solid
                });
            }
        }
    }

    // periodic representatives: wrap the last grid layer onto the first
    let mut reps = vec![0usize; nodes.len()];
    for i in 0..np {
        for j in 0..np {
            for k in 0..np {
                reps[node_id(i, j, k)] = node_id(i % n, j % n, k % n);
            }
        }
    }

    // nodes shared by solid and fluid elements
    let mut touches = vec![(false, false); nodes.len()];
    for (e, hex) in hexes.iter().enumerate() {
        for &a in hex {
            let r = reps[a];
            match labels[e] {
                Region::Solid => {
                    touches[a].0 = true;
                    touches[r].0 = true;
                }
                Region::Fluid => {
                    touches[a].1 = true;
                    touches[r].1 = true;
                }
            }
        }
    }
    // orbit members must agree on interface membership
    for a in 0..nodes.len() {
        let r = reps[a];
        touches[a].0 |= touches[r].0;
        touches[a].1 |= touches[r].1;
    }

    // project interface nodes onto the level set, movement capped at h/2
    for a in 0..nodes.len() {
        if !(touches[a].0 && touches[a].1) {
            continue;
        }
        let on_boundary: [bool; 3] = [
            nodes[a][0] < 0.5 * h || nodes[a][0] > 1.0 - 0.5 * h,
            nodes[a][1] < 0.5 * h || nodes[a][1] > 1.0 - 0.5 * h,
            nodes[a][2] < 0.5 * h || nodes[a][2] > 1.0 - 0.5 * h,
        ];
        let original = nodes[a];
        let mut y = original;
        for _ in 0..4 {
            let f = geom.level(&y);
            let g = geom.gradient(&y);
            let g2 = g.norm_squared();
            if g2 < 1e-12 {
                break;
            }
            y -= g * (f / g2);
        }
        let mut shift = y - original;
        let cap = 0.5 * h;
        if shift.norm() > cap {
            shift *= cap / shift.norm();
        }
        // periodic faces stay planar: our implicit surfaces cross the cell
        // boundary orthogonally, so in-plane motion is exact there
        for k in 0..3 {
            if on_boundary[k] {
                shift[k] = 0.0;
            }
        }
        nodes[a] = original + shift;
    }
    // enforce exact orbit consistency after projection
    for a in 0..nodes.len() {
        let r = reps[a];
        if r != a {
            let mut p = nodes[r];
            for k in 0..3 {
                // slave sits one lattice vector away where its index wrapped
                if nodes[a][k] > nodes[r][k] + 0.5 {
                    p[k] += 1.0;
                }
            }
            nodes[a] = p;
        }
    }

    let preimages = nodes.clone();
    let mut mesh = CellMesh {
        nodes,
        hexes,
        labels,
        interface: Vec::new(),
        reps,
        preimages,
    };

    // interface facets: solid faces whose periodic neighbor is fluid
    let neighbors = mesh.neighbors();
    let mut interface = Vec::new();
    for e in 0..mesh.num_elements() {
        if mesh.labels[e] != Region::Solid {
            continue;
        }
        for f in 0..HEX_FACES.len() {
            if let Some(other) = neighbors[e][f] {
                if mesh.labels[other] == Region::Fluid {
                    interface.push((e, f as u8));
                }
            }
        }
    }
    mesh.interface = interface;

    mesh.check_jacobians().map_err(|err| match err {
        Error::TangledElement { element, det } => Error::MeshGeneration(format!(
            "projection tangled element {element} (det {det:.3e})"
        )),
        other => other,
    })?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn all_solid_cell_has_no_fluid() {
        let geom = ImplicitCellGeometry::new([0.0, 0.0, 0.0], 0.0).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 8).unwrap();
        assert!(mesh.labels.iter().all(|&l| l == Region::Solid));
        assert!(mesh.interface.is_empty());
        assert_eq!(mesh.region_volume(Region::Fluid), 0.0);
    }

    #[test]
    fn pore_volume_matches_monte_carlo() {
        let geom = ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 16).unwrap();
        let mut rng = StdRng::seed_from_u64(123);
        let samples = 200_000;
        let inside = (0..samples)
            .filter(|_| {
                let y = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
                geom.level(&y) < 0.0
            })
            .count();
        let mc = inside as f64 / samples as f64;
        let fem = mesh.porosity();
        assert!(
            (fem - mc).abs() / mc < 0.10,
            "porosity {fem:.4} vs monte carlo {mc:.4}"
        );
    }

    #[test]
    fn generated_mesh_is_valid() {
        let geom = ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 12).unwrap();
        mesh.validate().unwrap();
        assert!(!mesh.interface.is_empty());
    }

    #[test]
    fn resolution_below_minimum_is_rejected() {
        let geom = ImplicitCellGeometry::new([0.1, 0.1, 0.1], 0.2).unwrap();
        assert!(generate_cross_sphere_mesh(&geom, 4).is_err());
    }

    #[test]
    fn invalid_radii_are_rejected() {
        assert!(ImplicitCellGeometry::new([0.6, 0.1, 0.1], 0.2).is_err());
        assert!(ImplicitCellGeometry::new([0.1, 0.1, 0.1], 0.5).is_err());
    }
}
