//! Wavefront OBJ subset: `v x y z` and triangular `f a b c` records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Mesh, TemplateMesh};
use crate::error::IoContext;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<[f64; 3]>,
    /// 0-based.
    pub faces: Vec<[usize; 3]>,
}

/// Coordinates are written with 15 significant digits.
pub fn write_obj<W: Write>(w: &mut W, vertices: &[[f64; 3]], faces: &[[usize; 3]]) -> Result<()> {
    if let Some((k, v)) = vertices.iter().enumerate().find(|(_, v)| v.iter().any(|c| !c.is_finite())) {
        return Err(Error::Invalid(format!("vertex {k} has non-finite coordinate {v:?}")));
    }
    for v in vertices {
        writeln!(w, "v {:.14e} {:.14e} {:.14e}", v[0], v[1], v[2])?;
    }
    for f in faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Reads vertices and faces; polygons are fan-triangulated, texture and
/// normal indices (`a/b/c`) ignored, negative indices resolved relative to the end.
pub fn read_obj<R: BufRead>(r: R) -> Result<ObjMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?;
                if c.len() != 3 {
                    return Err(Error::Format(format!("line {}: vertex needs 3 coordinates", ln + 1)));
                }
                vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx = tok
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|e| Error::Format(format!("line {}: bad index {t:?}: {e}", ln + 1)))?;
                        let n = vertices.len() as i64;
                        let z = if i < 0 { n + i } else { i - 1 };
                        if z < 0 || z >= n {
                            return Err(Error::Format(format!("line {}: index {i} out of range", ln + 1)));
                        }
                        Ok(z as usize)
                    })
                    .collect::<Result<Vec<usize>>>()?;
                if idx.len() < 3 {
                    return Err(Error::Format(format!("line {}: face needs 3 indices", ln + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(ObjMesh { vertices, faces })
}

impl ObjMesh {
    pub fn load(path: &Path) -> Result<Self> {
        read_obj(BufReader::new(File::open(path).at(path)?))
    }

    pub fn into_mesh(self) -> Mesh {
        Mesh::new(self.vertices)
    }
}

/// Writes `mesh` with the template's faces.
pub fn export_obj(mesh: &Mesh, template: &TemplateMesh, path: &Path) -> Result<()> {
    mesh.check_template(template)?;
    let mut w = BufWriter::new(File::create(path).at(path)?);
    write_obj(&mut w, &mesh.vertices, template.faces())?;
    w.flush().at(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_triangle_text() {
        let mut buf = Vec::new();
        write_obj(&mut buf, &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], &[[0, 1, 2]]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).collect::<Vec<_>>(), ["f 1 2 3"]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut buf = Vec::new();
        assert!(write_obj(&mut buf, &[[f64::NAN, 0.0, 0.0]], &[]).is_err());
    }

    #[test]
    fn reads_slashes_quads_and_negative_indices() {
        let src = "# c\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\nf -4 -3 -1\n";
        let m = read_obj(src.as_bytes()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3], [0, 1, 3]]);
        assert!(read_obj("v 0 0 0\nf 1 2 3\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_within_1e12(v in proptest::collection::vec(proptest::array::uniform3(-1e3f64..1e3), 3..20)) {
            let faces = vec![[0, 1, 2]];
            let mut buf = Vec::new();
            write_obj(&mut buf, &v, &faces).unwrap();
            let back = read_obj(buf.as_slice()).unwrap();
            prop_assert_eq!(&back.faces, &faces);
            for (a, b) in v.iter().zip(&back.vertices) {
                for c in 0..3 {
                    prop_assert!((a[c] - b[c]).abs() <= 1e-12 * a[c].abs().max(1.0));
                }
            }
        }
    }
}
