//! XYZ (one `x y z` line per point) and OFF mesh readers/writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| parse_err(line, format!("invalid number '{tok}'")))
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 coordinates, found {}", toks.len())));
        }
        let p = Point3::new(parse_f64(toks[0], line_no)?, parse_f64(toks[1], line_no)?, parse_f64(toks[2], line_no)?);
        if !p.is_finite() {
            return Err(parse_err(line_no, "non-finite coordinate"));
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(Error::EmptyInput);
    }
    PointCloud::new(pts)
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text)
}

/// Formats with the shortest decimal that parses back to the same `f64`.
pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).expect("writing to a String");
    }
    out
}

pub fn save_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_xyz(cloud)).map_err(|e| Error::io(path, e))
}

/// Triangle mesh as read from an OFF file. Polygons are fan-triangulated.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn triangle(&self, t: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(c - a).norm()
    }

    /// Uniform surface samples: triangles drawn by area, then uniform
    /// barycentric coordinates.
    pub fn sample(&self, n_points: usize, seed: u64) -> Result<(Vec<Point3>, Vec<usize>)> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::invalid("mesh has zero surface area"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n_points);
        let mut tris = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let u = rng.gen::<f64>() * total;
            let t = cumulative.partition_point(|&c| c <= u).min(self.triangles.len() - 1);
            let [a, b, c] = self.triangle(t);
            let r1 = rng.gen::<f64>().sqrt();
            let r2 = rng.gen::<f64>();
            pts.push(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
            tris.push(t);
        }
        Ok((pts, tris))
    }
}

/// Meaningful lines with their 1-based line numbers; `#` starts a comment.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_off(text: &str) -> Result<TriMesh> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing OFF header"))?;
    let counts_inline =
        header.strip_prefix("OFF").ok_or_else(|| parse_err(hline, format!("expected 'OFF', found '{header}'")))?.trim();
    let (cline, counts) = if counts_inline.is_empty() {
        lines.next().ok_or_else(|| parse_err(hline + 1, "missing vertex/face counts"))?
    } else {
        (hline, counts_inline)
    };
    let nums: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| parse_err(cline, format!("invalid count '{t}'"))))
        .collect::<Result<_>>()?;
    if nums.len() < 2 {
        return Err(parse_err(cline, "expected vertex and face counts"));
    }
    let (nv, nf) = (nums[0], nums[1]);

    let mut vertices = Vec::with_capacity(nv);
    let mut last_line = cline;
    for _ in 0..nv {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(last_line + 1, "unexpected end of file in vertices"))?;
        last_line = ln;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(ln, "vertex needs 3 coordinates"));
        }
        let p = Point3::new(parse_f64(toks[0], ln)?, parse_f64(toks[1], ln)?, parse_f64(toks[2], ln)?);
        if !p.is_finite() {
            return Err(parse_err(ln, "non-finite vertex"));
        }
        vertices.push(p);
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(last_line + 1, "unexpected end of file in faces"))?;
        last_line = ln;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| parse_err(ln, format!("invalid index '{t}'"))))
            .collect::<Result<_>>()?;
        let k = *idx.first().ok_or_else(|| parse_err(ln, "empty face"))?;
        if k < 3 || idx.len() < k + 1 {
            return Err(parse_err(ln, format!("face declares {k} vertices but lists {}", idx.len().saturating_sub(1))));
        }
        let face = &idx[1..=k];
        if let Some(&bad) = face.iter().find(|&&v| v >= nv) {
            return Err(parse_err(ln, format!("vertex index {bad} out of range ({nv} vertices)")));
        }
        for j in 1..k - 1 {
            triangles.push([face[0], face[j], face[j + 1]]);
        }
    }
    Ok(TriMesh { vertices, triangles })
}

/// Reads an OFF mesh and samples `n_points` surface points from it.
pub fn load_off(path: impl AsRef<Path>, n_points: usize, seed: u64) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mesh = parse_off(&text)?;
    let (pts, _) = mesh.sample(n_points, seed)?;
    PointCloud::new(pts)
}
