//! Wavefront OBJ with `v`, `vt` and `f v/vt` records.
//!
//! Each distinct `(v, vt)` pair becomes one mesh vertex, numbered in
//! sorted pair order, so files written by [`save_obj`] reload with
//! identical vertex order. The topology id is
//! read from a sidecar `<stem>.topology.json`; without one, a fingerprint
//! of the face index list is used.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Mesh, MeshError, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyManifest {
    pub topology_id: String,
}

fn sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.topology.json"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MeshError + '_ {
    move |source| MeshError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let (vertices, triangles, uvs) = parse_obj(&text)?;
    let side = sidecar(path);
    let topology_id = if side.exists() {
        let raw = std::fs::read_to_string(&side).map_err(io_err(&side))?;
        let m: TopologyManifest = serde_json::from_str(&raw).map_err(|e| MeshError::Obj {
            line: e.line(),
            message: format!("{}: {e}", side.display()),
        })?;
        m.topology_id
    } else {
        fingerprint(&triangles)
    };
    Mesh::new(vertices, triangles, uvs, topology_id)
}

fn fingerprint(triangles: &[[u32; 3]]) -> String {
    let mut h = Sha256::new();
    for t in triangles {
        for i in t {
            h.update(i.to_le_bytes());
        }
    }
    format!("faces-{}", &hex::encode(h.finalize())[..16])
}

type Parsed = (Vec<Vec3>, Vec<[u32; 3]>, Vec<[f64; 2]>);

fn parse_obj(text: &str) -> Result<Parsed> {
    let mut positions = Vec::new();
    let mut texcoords = Vec::new();
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut corners: Vec<[(usize, usize); 3]> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |message: String| MeshError::Obj { line: line_no, message };
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let floats = |parts: std::str::SplitWhitespace<'_>, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = parts
                .take(n)
                .map(|s| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() < n {
                return Err(err(format!("expected {n} numbers")));
            }
            Ok(v)
        };
        match tag {
            "v" => {
                let v = floats(parts, 3)?;
                positions.push(Vec3::new(v[0], v[1], v[2]));
            }
            "vt" => {
                let v = floats(parts, 2)?;
                texcoords.push([v[0], v[1]]);
            }
            "f" => {
                let mut face = Vec::new();
                for corner in parts {
                    let mut idx = corner.split('/');
                    let resolve = |s: Option<&str>, n: usize| -> Result<usize> {
                        let s = s
                            .filter(|s| !s.is_empty())
                            .ok_or_else(|| err(format!("face corner {corner:?} needs v/vt indices")))?;
                        let i: i64 = s.parse().map_err(|e| err(format!("{s:?}: {e}")))?;
                        let r = if i < 0 { n as i64 + i } else { i - 1 };
                        if r < 0 || r as usize >= n {
                            return Err(err(format!("index {i} out of range")));
                        }
                        Ok(r as usize)
                    };
                    let v = resolve(idx.next(), positions.len())?;
                    let vt = resolve(idx.next(), texcoords.len())?;
                    pairs.insert((v, vt));
                    face.push((v, vt));
                }
                if face.len() < 3 {
                    return Err(err("face with fewer than 3 corners".into()));
                }
                for k in 1..face.len() - 1 {
                    corners.push([face[0], face[k], face[k + 1]]);
                }
            }
            _ => {}
        }
    }
    // vertex ids follow sorted (v, vt) order, which is the identity for
    // files written by save_obj
    let ids: HashMap<(usize, usize), u32> = pairs.iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();
    let vertices = pairs.iter().map(|&(v, _)| positions[v]).collect();
    let uvs = pairs.iter().map(|&(_, vt)| texcoords[vt]).collect();
    let triangles = corners.iter().map(|t| t.map(|c| ids[&c])).collect();
    Ok((vertices, triangles, uvs))
}

/// Writes the mesh and its topology sidecar.
pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in mesh.vertices() {
        // {:?} on f64 round-trips exactly
        writeln!(out, "v {:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
    }
    for uv in mesh.uvs() {
        writeln!(out, "vt {:?} {:?}", uv[0], uv[1]).unwrap();
    }
    for t in mesh.triangles() {
        let [a, b, c] = t.map(|i| i + 1);
        writeln!(out, "f {a}/{a} {b}/{b} {c}/{c}").unwrap();
    }
    std::fs::write(path, out).map_err(io_err(path))?;
    let side = sidecar(path);
    let manifest = TopologyManifest {
        topology_id: mesh.topology_id().to_string(),
    };
    std::fs::write(&side, serde_json::to_string_pretty(&manifest).unwrap() + "\n").map_err(io_err(&side))
}
