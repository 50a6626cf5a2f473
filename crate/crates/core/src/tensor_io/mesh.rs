//! Triangle meshes in binary little-endian PLY and ASCII OBJ.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeshData {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Optional per-vertex rgb in [0, 1].
    pub colors: Option<Vec<[f32; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "ply" => Ok(MeshFormat::Ply),
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            _ => Err(Error::Format(format!("unknown mesh extension: {}", path.display()))),
        }
    }
}

impl MeshData {
    pub fn new(vertices: Vec<[f32; 3]>, triangles: Vec<[u32; 3]>, colors: Option<Vec<[f32; 3]>>) -> Result<Self> {
        let m = Self {
            vertices,
            triangles,
            colors,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u64;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v as u64 >= n) {
                return Err(Error::Format(format!("triangle {i} index out of range: {t:?}")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Format(format!("triangle {i} is degenerate: {t:?}")));
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != self.vertices.len() {
                return Err(Error::Format("color count differs from vertex count".into()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Triangle corner positions in f64.
    pub fn triangle(&self, i: usize) -> [[f64; 3]; 3] {
        let t = self.triangles[i];
        t.map(|v| self.vertices[v as usize].map(f64::from))
    }

    /// Append another mesh, re-indexing its triangles.
    pub fn append(&mut self, other: &MeshData) {
        let off = self.vertices.len() as u32;
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut mine), Some(theirs)) => {
                mine.extend_from_slice(theirs);
                Some(mine)
            }
            (None, Some(theirs)) if self.vertices.is_empty() => Some(theirs.clone()),
            _ => None,
        };
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|v| v + off)));
    }

    /// Drop vertices not referenced by any triangle.
    pub fn compact(&self) -> MeshData {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut colors = self.colors.as_ref().map(|_| Vec::new());
        let mut triangles = Vec::with_capacity(self.triangles.len());
        for t in &self.triangles {
            let mut nt = [0u32; 3];
            for (k, &v) in t.iter().enumerate() {
                let v = v as usize;
                if remap[v] == u32::MAX {
                    remap[v] = vertices.len() as u32;
                    vertices.push(self.vertices[v]);
                    if let (Some(dst), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                        dst.push(src[v]);
                    }
                }
                nt[k] = remap[v];
            }
            triangles.push(nt);
        }
        MeshData {
            vertices,
            triangles,
            colors,
        }
    }
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &MeshData, format: MeshFormat) -> Result<()> {
    let path = path.as_ref();
    mesh.validate()?;
    let bytes = match format {
        MeshFormat::Ply => ply_bytes(mesh),
        MeshFormat::Obj => obj_string(mesh).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<MeshData> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mesh = match format {
        MeshFormat::Ply => parse_ply(&bytes)?,
        MeshFormat::Obj => {
            let text = String::from_utf8(bytes).map_err(|_| Error::Format("OBJ is not UTF-8".into()))?;
            parse_obj(&text)?
        }
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn ply_bytes(mesh: &MeshData) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", mesh.vertices.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if mesh.colors.is_some() {
        header.push_str("property float red\nproperty float green\nproperty float blue\n");
    }
    let _ = writeln!(header, "element face {}", mesh.triangles.len());
    header.push_str("property list uchar int vertex_indices\nend_header\n");

    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(cols) = &mesh.colors {
            for c in &cols[i] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return Err(Error::Format(format!("unknown PLY type `{s}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            PlyType::I8 => b[0] as i8 as f64,
            PlyType::U8 => b[0] as f64,
            PlyType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

enum PlyProp {
    Scalar(String, PlyType),
    List(String, PlyType, PlyType),
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corruption("PLY body truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn value(&mut self, ty: PlyType) -> Result<f64> {
        Ok(ty.read(self.take(ty.size())?))
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<MeshData> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("PLY header has no end_header".into()))?;
    let mut body_start = end + END.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) != Some(&b'\n') {
        return Err(Error::Format("malformed end_header line".into()));
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("PLY header not ASCII".into()))?;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Format("missing `ply` magic line".into()));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["format", "binary_little_endian", _] => saw_format = true,
            ["format", other, ..] => return Err(Error::Format(format!("unsupported PLY format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", cnt, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("property before element".into()))?
                .props
                .push(PlyProp::List(name.to_string(), PlyType::parse(cnt)?, PlyType::parse(item)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("property before element".into()))?
                .props
                .push(PlyProp::Scalar(name.to_string(), PlyType::parse(ty)?)),
            _ => return Err(Error::Format(format!("malformed PLY header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(Error::Format("PLY header has no format line".into()));
    }

    let mut cur = Cursor {
        buf: bytes,
        pos: body_start,
    };
    let mut vertices = Vec::new();
    let mut colors: Option<Vec<[f32; 3]>> = None;
    let mut triangles = Vec::new();
    for el in &elements {
        let names: Vec<&str> = el
            .props
            .iter()
            .map(|p| match p {
                PlyProp::Scalar(n, _) | PlyProp::List(n, _, _) => n.as_str(),
            })
            .collect();
        let idx = |n: &str| names.iter().position(|&x| x == n);
        match el.name.as_str() {
            "vertex" => {
                let (ix, iy, iz) = match (idx("x"), idx("y"), idx("z")) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => return Err(Error::Format("vertex element lacks x/y/z".into())),
                };
                let rgb = match (idx("red"), idx("green"), idx("blue")) {
                    (Some(a), Some(b), Some(c)) => Some((a, b, c)),
                    _ => None,
                };
                let mut vals = vec![0.0f64; el.props.len()];
                let mut cols = Vec::new();
                for _ in 0..el.count {
                    for (k, p) in el.props.iter().enumerate() {
                        vals[k] = match p {
                            PlyProp::Scalar(_, ty) => cur.value(*ty)?,
                            PlyProp::List(_, ct, it) => {
                                let n = cur.value(*ct)? as usize;
                                cur.take(n * it.size())?;
                                0.0
                            }
                        };
                    }
                    vertices.push([vals[ix] as f32, vals[iy] as f32, vals[iz] as f32]);
                    if let Some((r, g, b)) = rgb {
                        let scale = |k: usize| match el.props[k] {
                            PlyProp::Scalar(_, PlyType::U8) => 1.0 / 255.0,
                            _ => 1.0,
                        };
                        cols.push([
                            (vals[r] * scale(r)) as f32,
                            (vals[g] * scale(g)) as f32,
                            (vals[b] * scale(b)) as f32,
                        ]);
                    }
                }
                if rgb.is_some() {
                    colors = Some(cols);
                }
            }
            "face" => {
                let li = el
                    .props
                    .iter()
                    .position(|p| matches!(p, PlyProp::List(n, _, _) if n == "vertex_indices" || n == "vertex_index"))
                    .ok_or_else(|| Error::Format("face element lacks vertex_indices".into()))?;
                for _ in 0..el.count {
                    let mut poly = Vec::new();
                    for (k, p) in el.props.iter().enumerate() {
                        match p {
                            PlyProp::Scalar(_, ty) => {
                                cur.value(*ty)?;
                            }
                            PlyProp::List(_, ct, it) => {
                                let n = cur.value(*ct)? as usize;
                                for _ in 0..n {
                                    let v = cur.value(*it)?;
                                    if k == li {
                                        if v < 0.0 {
                                            return Err(Error::Format("negative vertex index".into()));
                                        }
                                        poly.push(v as u32);
                                    }
                                }
                            }
                        }
                    }
                    if poly.len() < 3 {
                        return Err(Error::Format("face with fewer than 3 vertices".into()));
                    }
                    for k in 1..poly.len() - 1 {
                        triangles.push([poly[0], poly[k], poly[k + 1]]);
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for p in &el.props {
                        match p {
                            PlyProp::Scalar(_, ty) => {
                                cur.take(ty.size())?;
                            }
                            PlyProp::List(_, ct, it) => {
                                let n = cur.value(*ct)? as usize;
                                cur.take(n * it.size())?;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(MeshData {
        vertices,
        triangles,
        colors,
    })
}

pub fn obj_string(mesh: &MeshData) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn parse_obj(text: &str) -> Result<MeshData> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut v = [0f32; 3];
                for c in v.iter_mut() {
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::Format(format!("obj line {}: short vertex", ln + 1)))?;
                    *c = tok
                        .parse()
                        .map_err(|_| Error::Format(format!("obj line {}: bad coordinate `{tok}`", ln + 1)))?;
                }
                vertices.push(v);
            }
            Some("f") => {
                let poly: Vec<u32> = it
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| Error::Format(format!("obj line {}: bad index `{tok}`", ln + 1)))?;
                        let idx = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        if idx < 0 {
                            return Err(Error::Format(format!("obj line {}: index out of range", ln + 1)));
                        }
                        Ok(idx as u32)
                    })
                    .collect::<Result<_>>()?;
                if poly.len() < 3 {
                    return Err(Error::Format(format!("obj line {}: face needs 3 vertices", ln + 1)));
                }
                for k in 1..poly.len() - 1 {
                    triangles.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(MeshData {
        vertices,
        triangles,
        colors: None,
    })
}

/// Axis-aligned box as 8 vertices and 12 outward-wound triangles.
pub fn box_mesh(min: [f32; 3], max: [f32; 3]) -> MeshData {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        vertices.push([
            if i & 1 == 0 { min[0] } else { max[0] },
            if i & 2 == 0 { min[1] } else { max[1] },
            if i & 4 == 0 { min[2] } else { max[2] },
        ]);
    }
    let triangles = vec![
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
    ];
    MeshData {
        vertices,
        triangles,
        colors: None,
    }
}
