//! PLY mesh I/O: `vertex (x, y, z, nx, ny, nz: float)` and
//! `face (vertex_indices: list uchar int)`, ASCII or little-endian binary.

use std::io::{BufRead, Write};

use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

/// Writes the mesh; coordinates are narrowed to `f32` as the format
/// declares, so re-reading and re-writing reproduces the file exactly.
pub fn write_ply<W: Write>(mesh: &TriangleMesh, format: PlyFormat, mut w: W) -> Result<()> {
    let tag = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {tag} 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property float {p}")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    let values = |k: usize| {
        let (p, n) = (mesh.vertices[k], mesh.normals[k]);
        [p.x, p.y, p.z, n.x, n.y, n.z].map(|v| v as f32)
    };
    match format {
        PlyFormat::Ascii => {
            for k in 0..mesh.vertices.len() {
                let v = values(k);
                writeln!(w, "{} {} {} {} {} {}", v[0], v[1], v[2], v[3], v[4], v[5])?;
            }
            for t in &mesh.triangles {
                writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for k in 0..mesh.vertices.len() {
                for v in values(k) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            for t in &mesh.triangles {
                w.write_all(&[3u8])?;
                for &i in t {
                    let i = i32::try_from(i)
                        .map_err(|_| Error::InvalidArgument("vertex index exceeds int32".into()))?;
                    w.write_all(&i.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::parse("<ply>", line, msg)
}

/// Reads a mesh written by [`write_ply`] (either format).
pub fn read_ply<R: BufRead>(mut r: R) -> Result<TriangleMesh> {
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(bad(header.len() + 1, "missing end_header"));
        }
        let line = line.trim_end().to_string();
        let done = line == "end_header";
        header.push(line);
        if done {
            break;
        }
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(bad(1, "missing ply magic"));
    }
    let mut format = None;
    let mut counts = (None, None);
    let mut vertex_props = Vec::new();
    let mut current = "";
    for (n, line) in header.iter().enumerate().skip(1) {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", "1.0"] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", "1.0"] => format = Some(PlyFormat::BinaryLittleEndian),
            ["comment", ..] | ["end_header"] => {}
            ["element", "vertex", c] => {
                current = "vertex";
                counts.0 = Some(c.parse::<usize>().map_err(|e| bad(n + 1, e.to_string()))?);
            }
            ["element", "face", c] => {
                current = "face";
                counts.1 = Some(c.parse::<usize>().map_err(|e| bad(n + 1, e.to_string()))?);
            }
            ["property", "float", name] if current == "vertex" => vertex_props.push(*name),
            ["property", "list", "uchar", "int", "vertex_indices"] if current == "face" => {}
            _ => return Err(bad(n + 1, format!("unsupported header line `{line}`"))),
        }
    }
    let format = format.ok_or_else(|| bad(2, "missing format"))?;
    if vertex_props != ["x", "y", "z", "nx", "ny", "nz"] {
        return Err(bad(3, "vertex properties must be x y z nx ny nz"));
    }
    let (nv, nf) = (counts.0.unwrap_or(0), counts.1.unwrap_or(0));
    let mut mesh = TriangleMesh::default();
    let mut push_vertex = |v: [f32; 6]| {
        let v = v.map(f64::from);
        mesh.vertices.push(Vector3::new(v[0], v[1], v[2]));
        mesh.normals.push(Vector3::new(v[3], v[4], v[5]));
    };
    let mut triangles = Vec::with_capacity(nf);
    match format {
        PlyFormat::Ascii => {
            let mut lines = r.lines();
            let mut lineno = header.len();
            let mut next = || -> Result<(usize, String)> {
                lineno += 1;
                let l = lines.next().ok_or_else(|| bad(lineno, "unexpected end of file"))??;
                Ok((lineno, l))
            };
            for _ in 0..nv {
                let (n, l) = next()?;
                let v: Vec<f32> = l
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e: std::num::ParseFloatError| bad(n, e.to_string()))?;
                let v: [f32; 6] = v.try_into().map_err(|_| bad(n, "expected 6 vertex values"))?;
                push_vertex(v);
            }
            for _ in 0..nf {
                let (n, l) = next()?;
                let v: Vec<i64> = l
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e: std::num::ParseIntError| bad(n, e.to_string()))?;
                match v.as_slice() {
                    [3, a, b, c] => triangles.push((n, [*a, *b, *c])),
                    _ => return Err(bad(n, "faces must be triangles")),
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf4 = [0u8; 4];
            for _ in 0..nv {
                let mut v = [0f32; 6];
                for x in &mut v {
                    r.read_exact(&mut buf4)?;
                    *x = f32::from_le_bytes(buf4);
                }
                push_vertex(v);
            }
            for k in 0..nf {
                let mut count = [0u8; 1];
                r.read_exact(&mut count)?;
                if count[0] != 3 {
                    return Err(bad(0, format!("face {k} is not a triangle")));
                }
                let mut t = [0i64; 3];
                for x in &mut t {
                    r.read_exact(&mut buf4)?;
                    *x = i64::from(i32::from_le_bytes(buf4));
                }
                triangles.push((k, t));
            }
        }
    }
    for (n, t) in triangles {
        if t.iter().any(|&i| i < 0 || i as usize >= nv) {
            return Err(bad(n, "vertex index out of range"));
        }
        mesh.triangles.push(t.map(|i| i as usize));
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vector3::new(0.1, 0.2, 0.3),
                Vector3::new(1.0 / 3.0, -2.5, 1e-7),
                Vector3::new(-4.0, 5.123456789, 6.0),
            ],
            normals: vec![Vector3::z(), Vector3::x(), -Vector3::y()],
            triangles: vec![[0, 1, 2]],
        }
    }

    #[test]
    fn round_trips_are_byte_identical() {
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut first = Vec::new();
            write_ply(&sample(), format, &mut first).unwrap();
            let back = read_ply(first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_ply(&back, format, &mut second).unwrap();
            assert_eq!(first, second);
            assert_eq!(back.triangles, sample().triangles);
            for (a, b) in back.vertices.iter().zip(&sample().vertices) {
                assert!((a - b).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_indices_and_headers() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 0 0 1\n3 0 0 1\n";
        assert!(read_ply(text.as_bytes()).is_err());
        assert!(read_ply("plx\nend_header\n".as_bytes()).is_err());
        let empty = TriangleMesh::default();
        let mut buf = Vec::new();
        write_ply(&empty, PlyFormat::Ascii, &mut buf).unwrap();
        assert_eq!(read_ply(buf.as_slice()).unwrap(), empty);
    }
}
