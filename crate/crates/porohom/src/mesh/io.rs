//! Mesh serialization: documented JSON schema and legacy ASCII VTK export.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use super::{CellMesh, Region};
use crate::error::{Error, Result};

/// JSON mesh schema.
///
/// * `nodes` — node coordinates, cell units.
/// * `hexes` — 8 node ids per element, VTK corner ordering.
/// * `labels` — `"solid"` or `"fluid"` per element.
/// * `interface` — `[element, face]` pairs on the solid side of the interface.
/// * `periodic_pairs` — `[node, master]` identifications of boundary nodes.
/// * `preimages` — spline parameter preimage per node.
#[derive(Debug, Serialize, Deserialize)]
pub struct CellMeshRecord {
    pub nodes: Vec<[f64; 3]>,
    pub hexes: Vec<[usize; 8]>,
    pub labels: Vec<Region>,
    pub interface: Vec<(usize, u8)>,
    pub periodic_pairs: Vec<(usize, usize)>,
    pub preimages: Vec<[f64; 3]>,
}

impl CellMesh {
    pub fn to_record(&self) -> CellMeshRecord {
        CellMeshRecord {
            nodes: self.nodes.iter().map(|p| [p[0], p[1], p[2]]).collect(),
            hexes: self.hexes.clone(),
            labels: self.labels.clone(),
            interface: self.interface.clone(),
            periodic_pairs: self.periodic_pairs(),
            preimages: self.preimages.iter().map(|p| [p[0], p[1], p[2]]).collect(),
        }
    }

    pub fn from_record(r: CellMeshRecord) -> Result<Self> {
        let n = r.nodes.len();
        let mut reps: Vec<usize> = (0..n).collect();
        for &(node, master) in &r.periodic_pairs {
            if node >= n || master >= n {
                return Err(Error::InvalidMesh("periodic pair out of range".into()));
            }
            reps[node] = master;
        }
        // canonicalize: master of a master must be itself
        for i in 0..n {
            let mut r0 = reps[i];
            let mut guard = 0;
            while reps[r0] != r0 {
                r0 = reps[r0];
                guard += 1;
                if guard > n {
                    return Err(Error::InvalidMesh("periodic pair table has a cycle".into()));
                }
            }
            reps[i] = r0;
        }
        let mesh = CellMesh {
            nodes: r.nodes.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
            hexes: r.hexes,
            labels: r.labels,
            interface: r.interface,
            reps,
            preimages: r
                .preimages
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.to_record())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let record: CellMeshRecord = serde_json::from_reader(std::io::BufReader::new(file))?;
        CellMesh::from_record(record)
    }
}

/// Legacy ASCII VTK unstructured-grid writer for hexahedral data.
pub fn write_legacy_vtk(
    path: &Path,
    title: &str,
    nodes: &[Vector3<f64>],
    hexes: &[[usize; 8]],
    cell_scalars: &[(&str, &[f64])],
    point_vectors: &[(&str, &[Vector3<f64>])],
    point_scalars: &[(&str, &[f64])],
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", nodes.len())?;
    for p in nodes {
        writeln!(w, "{:.12e} {:.12e} {:.12e}", p[0], p[1], p[2])?;
    }
    writeln!(w, "CELLS {} {}", hexes.len(), hexes.len() * 9)?;
    for hex in hexes {
        write!(w, "8")?;
        for id in hex {
            write!(w, " {id}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", hexes.len())?;
    for _ in 0..hexes.len() {
        writeln!(w, "12")?;
    }
    if !cell_scalars.is_empty() {
        writeln!(w, "CELL_DATA {}", hexes.len())?;
        for (name, values) in cell_scalars {
            if values.len() != hexes.len() {
                return Err(Error::InvalidMesh(format!(
                    "cell field {name} has {} values for {} cells",
                    values.len(),
                    hexes.len()
                )));
            }
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in *values {
                writeln!(w, "{v:.12e}")?;
            }
        }
    }
    if !point_vectors.is_empty() || !point_scalars.is_empty() {
        writeln!(w, "POINT_DATA {}", nodes.len())?;
        for (name, values) in point_vectors {
            if values.len() != nodes.len() {
                return Err(Error::InvalidMesh(format!(
                    "field {name} has {} values for {} nodes",
                    values.len(),
                    nodes.len()
                )));
            }
            writeln!(w, "VECTORS {name} double")?;
            for v in *values {
                writeln!(w, "{:.12e} {:.12e} {:.12e}", v[0], v[1], v[2])?;
            }
        }
        for (name, values) in point_scalars {
            if values.len() != nodes.len() {
                return Err(Error::InvalidMesh(format!(
                    "field {name} has {} values for {} nodes",
                    values.len(),
                    nodes.len()
                )));
            }
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in *values {
                writeln!(w, "{v:.12e}")?;
            }
        }
    }
    Ok(())
}

/// Legacy ASCII VTK export of the cell with the region label as cell data
/// and optional nodal vector fields.
pub fn export_vtk(
    mesh: &CellMesh,
    path: &Path,
    point_vectors: &[(&str, &[Vector3<f64>])],
) -> Result<()> {
    let region: Vec<f64> = mesh
        .labels
        .iter()
        .map(|l| if *l == Region::Fluid { 1.0 } else { 0.0 })
        .collect();
    write_legacy_vtk(
        path,
        "porohom cell mesh",
        &mesh.nodes,
        &mesh.hexes,
        &[("region", &region)],
        point_vectors,
        &[],
    )
}
