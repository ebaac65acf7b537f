//! Fixed triangle-mesh topology: triangle list, per-triangle edge table
//! and the 68-landmark index table.
//!
//! Edges are enumerated per triangle as (t0,t1), (t1,t2), (t2,t0), each
//! pair stored with the smaller index first. Edges shared between
//! triangles appear once per incident triangle; the edge-loss
//! normalization 1/(3M) counts them that way.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet2D, VertexSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyFile {
    n_vertices: usize,
    triangles: Vec<[u32; 3]>,
    landmark68: Vec<u32>,
}

/// Immutable mesh connectivity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceTopology {
    n_vertices: usize,
    triangles: Vec<[u32; 3]>,
    landmark68: Vec<u32>,
}

/// Canonical per-triangle edge list: 3 entries per triangle, (i, j) with i < j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeTable {
    edges: Vec<(u32, u32)>,
}

impl EdgeTable {
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl FaceTopology {
    pub fn new(n_vertices: usize, triangles: Vec<[u32; 3]>, landmark68: Vec<u32>) -> Result<Self> {
        for (ti, t) in triangles.iter().enumerate() {
            for &idx in t {
                if idx as usize >= n_vertices {
                    return Err(Error::TopologyInvalid {
                        reason: format!("triangle index {idx} out of range [0, {n_vertices})"),
                        index: ti,
                    });
                }
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::TopologyInvalid {
                    reason: format!("degenerate triangle {t:?}"),
                    index: ti,
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (li, &idx) in landmark68.iter().enumerate() {
            if idx as usize >= n_vertices {
                return Err(Error::TopologyInvalid {
                    reason: format!("landmark index {idx} out of range [0, {n_vertices})"),
                    index: li,
                });
            }
            if !seen.insert(idx) {
                return Err(Error::TopologyInvalid {
                    reason: format!("duplicate landmark index {idx}"),
                    index: li,
                });
            }
        }
        Ok(Self {
            n_vertices,
            triangles,
            landmark68,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn landmark68(&self) -> &[u32] {
        &self.landmark68
    }

    pub fn edge_table(&self) -> EdgeTable {
        let mut edges = Vec::with_capacity(3 * self.triangles.len());
        for t in &self.triangles {
            for k in 0..3 {
                let a = t[k];
                let b = t[(k + 1) % 3];
                edges.push((a.min(b), a.max(b)));
            }
        }
        EdgeTable { edges }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = TopologyFile {
            n_vertices: self.n_vertices,
            triangles: self.triangles.clone(),
            landmark68: self.landmark68.clone(),
        };
        let json = serde_json::to_string(&file).expect("topology serializes");
        std::fs::write(path.as_ref(), json)
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
    }
}

/// Loads and validates a topology JSON file
/// (`{"n_vertices": N, "triangles": [[i,j,k],...], "landmark68": [...]}`).
pub fn load_topology(path: impl AsRef<Path>) -> Result<FaceTopology> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: TopologyFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    FaceTopology::new(file.n_vertices, file.triangles, file.landmark68)
}

/// Euclidean length of every edge entry, in canonical order.
pub fn edge_lengths(v: &VertexSet, edges: &EdgeTable) -> Result<Vec<f64>> {
    let pts = v.points();
    let mut out = Vec::with_capacity(edges.len());
    for &(a, b) in edges.edges() {
        let (a, b) = (a as usize, b as usize);
        if a >= pts.len() || b >= pts.len() {
            return Err(Error::SizeMismatch {
                context: "edge table references vertex beyond set".into(),
                expected: a.max(b) + 1,
                got: pts.len(),
            });
        }
        out.push((pts[a] - pts[b]).norm());
    }
    Ok(out)
}

/// Gathers the 68 landmark rows of a 2D set, order preserved.
pub fn select_landmarks_2d(p: &LandmarkSet2D, topo: &FaceTopology) -> Result<LandmarkSet2D> {
    if p.len() != topo.n_vertices() {
        return Err(Error::SizeMismatch {
            context: "landmark set vs topology".into(),
            expected: topo.n_vertices(),
            got: p.len(),
        });
    }
    let rows: Vec<_> = topo
        .landmark68()
        .iter()
        .map(|&i| p.points()[i as usize])
        .collect();
    LandmarkSet2D::new(rows)
}

/// Gathers the 68 landmark rows of a 3D set, order preserved.
pub fn select_landmarks_3d(v: &VertexSet, topo: &FaceTopology) -> Result<VertexSet> {
    if v.len() != topo.n_vertices() {
        return Err(Error::SizeMismatch {
            context: "vertex set vs topology".into(),
            expected: topo.n_vertices(),
            got: v.len(),
        });
    }
    let rows: Vec<_> = topo
        .landmark68()
        .iter()
        .map(|&i| v.points()[i as usize])
        .collect();
    VertexSet::new(rows, v.frame())
}

/// Writes a Wavefront OBJ with 1-based face indices.
pub fn export_obj(v: &VertexSet, topo: &FaceTopology, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if v.len() != topo.n_vertices() {
        return Err(Error::SizeMismatch {
            context: "vertex set vs topology".into(),
            expected: topo.n_vertices(),
            got: v.len(),
        });
    }
    let mut buf = Vec::new();
    for p in v.points() {
        writeln!(buf, "v {:.9e} {:.9e} {:.9e}", p.x, p.y, p.z).expect("write to vec");
    }
    for t in topo.triangles() {
        writeln!(buf, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("write to vec");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}
