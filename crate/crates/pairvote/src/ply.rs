//! ASCII PLY reading and writing for point clouds (positions, optional
//! normals, optional per-point noise flag) and triangle meshes.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{UnitVec3, Vec3};
use crate::mesh::TriangleMesh;
use std::fmt::Write as _;
use std::path::Path;

/// A cloud loaded from disk, with the clutter flags if the file carried them.
#[derive(Clone, Debug)]
pub struct CloudFile {
    pub cloud: PointCloud,
    pub noise: Option<Vec<bool>>,
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

struct PlyHeader {
    vertex_count: usize,
    face_count: usize,
    /// Property names of the vertex element, in declaration order.
    vertex_props: Vec<String>,
    /// Data lines start after this many header lines.
    header_lines: usize,
}

fn parse_header(path: &Path, lines: &[&str]) -> Result<PlyHeader> {
    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(parse_err(path, 1, "missing 'ply' magic"));
    }
    let mut vertex_count = None;
    let mut face_count = 0usize;
    let mut vertex_props = Vec::new();
    let mut current = String::new();
    let mut saw_format = false;
    for (i, raw) in lines.iter().enumerate().skip(1) {
        let line = raw.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if line != "format ascii 1.0" {
                    return Err(parse_err(path, i + 1, "only 'format ascii 1.0' is supported"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(path, i + 1, "element without name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, i + 1, "element without count"))?;
                current = name.to_string();
                match name {
                    "vertex" => vertex_count = Some(count),
                    "face" => face_count = count,
                    _ => {}
                }
            }
            Some("property") => {
                if current == "vertex" {
                    let name = line
                        .split_whitespace()
                        .last()
                        .ok_or_else(|| parse_err(path, i + 1, "property without name"))?;
                    vertex_props.push(name.to_string());
                }
            }
            Some("end_header") => {
                if !saw_format {
                    return Err(parse_err(path, i + 1, "no format line before end_header"));
                }
                let vertex_count =
                    vertex_count.ok_or_else(|| parse_err(path, i + 1, "no vertex element"))?;
                return Ok(PlyHeader {
                    vertex_count,
                    face_count,
                    vertex_props,
                    header_lines: i + 1,
                });
            }
            Some(other) => {
                return Err(parse_err(path, i + 1, format!("unexpected token '{other}'")));
            }
            None => {}
        }
    }
    Err(parse_err(path, lines.len(), "header never terminated"))
}

/// Reads an ASCII PLY point cloud. Recognized vertex properties are
/// `x y z`, optional `nx ny nz`, and an optional `noise` flag; any other
/// properties are skipped by position.
pub fn read_cloud(path: &Path) -> Result<CloudFile> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let header = parse_header(path, &lines)?;
    let idx_of = |name: &str| header.vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (idx_of("x"), idx_of("y"), idx_of("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(path, header.header_lines, "vertex element lacks x/y/z")),
    };
    let normal_idx = match (idx_of("nx"), idx_of("ny"), idx_of("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let noise_idx = idx_of("noise");

    let mut positions = Vec::with_capacity(header.vertex_count);
    let mut normals = Vec::with_capacity(if normal_idx.is_some() { header.vertex_count } else { 0 });
    let mut noise = Vec::with_capacity(if noise_idx.is_some() { header.vertex_count } else { 0 });
    for row in 0..header.vertex_count {
        let line_no = header.header_lines + row;
        let line = lines
            .get(line_no)
            .ok_or_else(|| parse_err(path, line_no + 1, "fewer vertex rows than declared"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < header.vertex_props.len() {
            return Err(parse_err(path, line_no + 1, "vertex row has too few columns"));
        }
        let num = |i: usize| -> Result<f64> {
            toks[i]
                .parse::<f64>()
                .map_err(|_| parse_err(path, line_no + 1, format!("bad number '{}'", toks[i])))
        };
        positions.push(Vec3::new(num(ix)?, num(iy)?, num(iz)?));
        if let Some((a, b, c)) = normal_idx {
            let n = Vec3::new(num(a)?, num(b)?, num(c)?);
            let norm = n.norm();
            if !(norm > 0.0) {
                return Err(parse_err(path, line_no + 1, "zero-length normal"));
            }
            // Keep already-unit normals bit exact; normalize foreign data.
            normals.push(if (norm - 1.0).abs() < 1e-9 {
                UnitVec3::new_unchecked(n)
            } else {
                UnitVec3::new_normalize(n)
            });
        }
        if let Some(i) = noise_idx {
            noise.push(num(i)? != 0.0);
        }
    }
    let cloud = if normal_idx.is_some() {
        PointCloud::with_normals(positions, normals)
    } else {
        PointCloud::from_positions(positions)
    };
    Ok(CloudFile {
        cloud,
        noise: noise_idx.map(|_| noise),
    })
}

/// Writes an ASCII PLY point cloud; floats use shortest round-trip
/// formatting so a read-back is bit exact.
pub fn write_cloud(path: &Path, cloud: &PointCloud, noise: Option<&[bool]>) -> Result<()> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment pairvote point cloud\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals.is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if noise.is_some() {
        out.push_str("property uchar noise\n");
    }
    out.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(ns) = &cloud.normals {
            let n = ns[i].into_inner();
            let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
        }
        if let Some(flags) = noise {
            let _ = write!(out, " {}", u8::from(flags[i]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads an ASCII PLY triangle mesh (vertex positions + faces; faces with
/// more than three vertices are fan-triangulated).
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let header = parse_header(path, &lines)?;
    let idx_of = |name: &str| header.vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (idx_of("x"), idx_of("y"), idx_of("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(path, header.header_lines, "vertex element lacks x/y/z")),
    };
    let mut vertices = Vec::with_capacity(header.vertex_count);
    for row in 0..header.vertex_count {
        let line_no = header.header_lines + row;
        let line = lines
            .get(line_no)
            .ok_or_else(|| parse_err(path, line_no + 1, "fewer vertex rows than declared"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<f64> {
            toks.get(i)
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| parse_err(path, line_no + 1, "bad vertex row"))
        };
        vertices.push(Vec3::new(num(ix)?, num(iy)?, num(iz)?));
    }
    let mut triangles = Vec::with_capacity(header.face_count);
    for row in 0..header.face_count {
        let line_no = header.header_lines + header.vertex_count + row;
        let line = lines
            .get(line_no)
            .ok_or_else(|| parse_err(path, line_no + 1, "fewer face rows than declared"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let count: usize = toks
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, line_no + 1, "bad face row"))?;
        if count < 3 || toks.len() < count + 1 {
            return Err(parse_err(path, line_no + 1, "face needs at least 3 vertices"));
        }
        let vert = |i: usize| -> Result<u32> {
            let v: usize = toks[i + 1]
                .parse()
                .map_err(|_| parse_err(path, line_no + 1, "bad face index"))?;
            if v >= vertices.len() {
                return Err(parse_err(path, line_no + 1, "face index out of range"));
            }
            Ok(v as u32)
        };
        let v0 = vert(0)?;
        for i in 1..count - 1 {
            triangles.push([v0, vert(i)?, vert(i + 1)?]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cloud_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let positions: Vec<Vec3> = (0..200)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..2.0),
                )
            })
            .collect();
        let normals: Vec<UnitVec3> = (0..200)
            .map(|_| crate::geom::tests::random_unit(&mut rng))
            .collect();
        let noise: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.3)).collect();
        let cloud = PointCloud::with_normals(positions, normals);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        write_cloud(&path, &cloud, Some(&noise)).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.noise.as_deref(), Some(&noise[..]));
        for i in 0..cloud.len() {
            assert_eq!(back.cloud.positions[i], cloud.positions[i]);
            assert_eq!(
                back.cloud.normals.as_ref().unwrap()[i].into_inner(),
                cloud.normals.as_ref().unwrap()[i].into_inner()
            );
        }
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, "not a ply\n").unwrap();
        assert!(matches!(read_cloud(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n").unwrap();
        assert!(matches!(read_cloud(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn mesh_ply_roundtrip_via_writer() {
        // Write a tiny quad mesh by hand and check fan triangulation.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
        )
        .unwrap();
        let mesh = read_mesh(&path).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }
}
