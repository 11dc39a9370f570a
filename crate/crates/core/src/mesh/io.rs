//! OBJ and PLY readers and writers.
//!
//! Polygons are fan-triangulated on load. PLY supports `ascii` and
//! `binary_little_endian`; positions are written as doubles so binary files
//! round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Per-face payload carried alongside geometry in PLY files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyAttributes {
    pub colors: Option<Vec<[u8; 3]>>,
    pub scalars: BTreeMap<String, Vec<f64>>,
}

/// Optional per-face data for [`write_ply`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PlyExtras<'a> {
    pub face_colors: Option<&'a [[u8; 3]]>,
    pub face_scalar: Option<(&'a str, &'a [f64])>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn load_mesh(bytes: &[u8], format: MeshFormat) -> Result<Mesh> {
    match format {
        MeshFormat::Obj => parse_obj(bytes),
        MeshFormat::Ply => load_ply_with_attributes(bytes).map(|(m, _)| m),
    }
}

pub fn load_mesh_file(path: &Path) -> Result<Mesh> {
    let format = MeshFormat::from_path(path).ok_or_else(|| {
        Error::Structural(format!("{}: unknown mesh extension (expected .obj or .ply)", path.display()))
    })?;
    let bytes = std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    load_mesh(&bytes, format)
}

pub fn save_mesh_file(mesh: &Mesh, path: &Path) -> Result<()> {
    let bytes = match MeshFormat::from_path(path) {
        Some(MeshFormat::Obj) => write_obj(mesh).into_bytes(),
        Some(MeshFormat::Ply) => write_ply(mesh, PlyEncoding::BinaryLittleEndian, PlyExtras::default()),
        None => {
            return Err(Error::Structural(format!(
                "{}: unknown mesh extension (expected .obj or .ply)",
                path.display()
            )))
        }
    };
    std::fs::write(path, bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn fan(poly: &[u32], faces: &mut Vec<[u32; 3]>) {
    for i in 1..poly.len().saturating_sub(1) {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
}

fn finish(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, last_line: usize) -> Result<Mesh> {
    if faces.is_empty() {
        return Err(parse_err(last_line, "no faces found"));
    }
    Mesh::new(vertices, faces)
}

fn parse_obj(bytes: &[u8]) -> Result<Mesh> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(parse_err(0, "empty input"));
    }
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(0, format!("not UTF-8: {e}")))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut line_no = 0;
    for (i, line) in text.lines().enumerate() {
        line_no = i + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let t = tok
                        .next()
                        .ok_or_else(|| parse_err(line_no, "vertex needs three coordinates"))?;
                    *c = t
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad coordinate `{t}`")))?;
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let head = t.split('/').next().unwrap_or("");
                    let idx: i64 = head
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad face index `{t}`")))?;
                    let resolved = match idx {
                        0 => return Err(Error::Structural(format!("line {line_no}: face index 0"))),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(Error::Structural(format!(
                            "line {line_no}: face index {idx} out of range ({} vertices so far)",
                            vertices.len()
                        )));
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(parse_err(line_no, "face needs at least three vertices"));
                }
                fan(&poly, &mut faces);
            }
            _ => {}
        }
    }
    finish(vertices, faces, line_no)
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 40 + mesh.face_count() * 20);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Single { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Single { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads a PLY file, returning the mesh plus any per-face colors and scalar
/// properties it carries.
pub fn load_ply_with_attributes(bytes: &[u8]) -> Result<(Mesh, PlyAttributes)> {
    if bytes.is_empty() {
        return Err(parse_err(0, "empty input"));
    }
    // Header is ASCII lines terminated by `end_header`.
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| *pos + e)
            .unwrap_or(bytes.len());
        let s = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some((line_no, s))
    };
    match next_line(&mut pos) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(1, "missing `ply` magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines = 1;
    loop {
        let (ln, line) = next_line(&mut pos).ok_or_else(|| parse_err(header_lines, "unterminated header"))?;
        header_lines = ln;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.first().copied() {
            Some("format") => {
                encoding = Some(match tok.get(1).copied() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    Some(other) => return Err(parse_err(ln, format!("unsupported format `{other}`"))),
                    None => return Err(parse_err(ln, "format line without encoding")),
                });
            }
            Some("element") => {
                if tok.len() != 3 {
                    return Err(parse_err(ln, "element needs a name and a count"));
                }
                let count = tok[2]
                    .parse()
                    .map_err(|_| parse_err(ln, format!("bad element count `{}`", tok[2])))?;
                elements.push(Element {
                    name: tok[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(ln, "property before any element"))?;
                let prop = if tok.get(1) == Some(&"list") {
                    if tok.len() != 5 {
                        return Err(parse_err(ln, "list property needs count type, item type and name"));
                    }
                    Property::List {
                        count: Scalar::parse(tok[2]).ok_or_else(|| parse_err(ln, format!("unknown type `{}`", tok[2])))?,
                        item: Scalar::parse(tok[3]).ok_or_else(|| parse_err(ln, format!("unknown type `{}`", tok[3])))?,
                        name: tok[4].to_string(),
                    }
                } else {
                    if tok.len() != 3 {
                        return Err(parse_err(ln, "property needs a type and a name"));
                    }
                    Property::Single {
                        ty: Scalar::parse(tok[1]).ok_or_else(|| parse_err(ln, format!("unknown type `{}`", tok[1])))?,
                        name: tok[2].to_string(),
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(parse_err(ln, format!("unexpected header keyword `{other}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| parse_err(header_lines, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut attrs = PlyAttributes::default();
    let mut reader = BodyReader::new(&bytes[pos..], encoding, header_lines);

    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                let idx = |n: &str| el.props.iter().position(|p| p.name() == n);
                let (xi, yi, zi) = match (idx("x"), idx("y"), idx("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(parse_err(header_lines, "vertex element lacks x/y/z")),
                };
                vertices.reserve(el.count);
                for _ in 0..el.count {
                    let rec = reader.record(&el.props)?;
                    vertices.push(Vec3::new(rec[xi][0], rec[yi][0], rec[zi][0]));
                }
            }
            "face" => {
                let list = el
                    .props
                    .iter()
                    .position(|p| matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index"))
                    .ok_or_else(|| parse_err(header_lines, "face element lacks vertex_indices"))?;
                let color_idx = ["red", "green", "blue"].map(|n| el.props.iter().position(|p| p.name() == n));
                let scalar_props: Vec<(usize, String)> = el
                    .props
                    .iter()
                    .enumerate()
                    .filter(|(i, p)| {
                        *i != list
                            && matches!(p, Property::Single { .. })
                            && !["red", "green", "blue", "alpha"].contains(&p.name())
                    })
                    .map(|(i, p)| (i, p.name().to_string()))
                    .collect();
                let mut colors = Vec::new();
                let mut scalars: Vec<Vec<f64>> = vec![Vec::new(); scalar_props.len()];
                for _ in 0..el.count {
                    let line = reader.line;
                    let rec = reader.record(&el.props)?;
                    let poly: Vec<u32> = rec[list]
                        .iter()
                        .map(|&x| {
                            if x < 0.0 || x.fract() != 0.0 {
                                Err(parse_err(line, format!("bad vertex index {x}")))
                            } else {
                                Ok(x as u32)
                            }
                        })
                        .collect::<Result<_>>()?;
                    if poly.len() < 3 {
                        return Err(parse_err(line, "face needs at least three vertices"));
                    }
                    if let Some(&bad) = poly.iter().find(|&&i| i as usize >= vertices.len()) {
                        return Err(Error::Structural(format!(
                            "face index {bad} out of range ({} vertices)",
                            vertices.len()
                        )));
                    }
                    let tris = poly.len() - 2;
                    if let [Some(r), Some(g), Some(b)] = color_idx {
                        let c = [rec[r][0] as u8, rec[g][0] as u8, rec[b][0] as u8];
                        colors.extend(std::iter::repeat_n(c, tris));
                    }
                    for (slot, (pi, _)) in scalars.iter_mut().zip(&scalar_props) {
                        slot.extend(std::iter::repeat_n(rec[*pi][0], tris));
                    }
                    fan(&poly, &mut faces);
                }
                if color_idx.iter().all(Option::is_some) {
                    attrs.colors = Some(colors);
                }
                for ((_, name), vals) in scalar_props.into_iter().zip(scalars) {
                    attrs.scalars.insert(name, vals);
                }
            }
            _ => {
                for _ in 0..el.count {
                    reader.record(&el.props)?;
                }
            }
        }
    }
    let face_total = faces.len();
    let mesh = finish(vertices, faces, reader.line)?;
    if mesh.face_count() != face_total {
        // Degenerate faces were dropped; per-face attributes no longer align.
        attrs = PlyAttributes::default();
    }
    Ok((mesh, attrs))
}

struct BodyReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: PlyEncoding,
    line: usize,
    tokens: std::vec::IntoIter<String>,
}

impl<'a> BodyReader<'a> {
    fn new(bytes: &'a [u8], encoding: PlyEncoding, header_lines: usize) -> Self {
        BodyReader {
            bytes,
            pos: 0,
            encoding,
            line: header_lines,
            tokens: Vec::new().into_iter(),
        }
    }

    fn ascii_line(&mut self) -> Result<()> {
        loop {
            if self.pos >= self.bytes.len() {
                return Err(parse_err(self.line + 1, "unexpected end of data"));
            }
            let end = self.bytes[self.pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|e| self.pos + e)
                .unwrap_or(self.bytes.len());
            let text = String::from_utf8_lossy(&self.bytes[self.pos..end]).into_owned();
            self.pos = end + 1;
            self.line += 1;
            let toks: Vec<String> = text.split_whitespace().map(str::to_string).collect();
            if !toks.is_empty() {
                self.tokens = toks.into_iter();
                return Ok(());
            }
        }
    }

    fn ascii_value(&mut self) -> Result<f64> {
        let t = self
            .tokens
            .next()
            .ok_or_else(|| parse_err(self.line, "too few values in record"))?;
        t.parse()
            .map_err(|_| parse_err(self.line, format!("bad number `{t}`")))
    }

    fn binary_value(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(parse_err(self.line, "unexpected end of binary data"));
        }
        let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }

    fn value(&mut self, ty: Scalar) -> Result<f64> {
        match self.encoding {
            PlyEncoding::Ascii => self.ascii_value(),
            PlyEncoding::BinaryLittleEndian => self.binary_value(ty),
        }
    }

    fn record(&mut self, props: &[Property]) -> Result<Vec<Vec<f64>>> {
        if self.encoding == PlyEncoding::Ascii {
            self.ascii_line()?;
        } else {
            self.line += 1;
        }
        let mut out = Vec::with_capacity(props.len());
        for p in props {
            match p {
                Property::Single { ty, .. } => out.push(vec![self.value(*ty)?]),
                Property::List { count, item, .. } => {
                    let n = self.value(*count)?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(parse_err(self.line, format!("bad list length {n}")));
                    }
                    let mut items = Vec::with_capacity(n as usize);
                    for _ in 0..n as usize {
                        items.push(self.value(*item)?);
                    }
                    out.push(items);
                }
            }
        }
        if self.encoding == PlyEncoding::Ascii && self.tokens.next().is_some() {
            return Err(parse_err(self.line, "too many values in record"));
        }
        Ok(out)
    }
}

/// Serializes a mesh as PLY with double-precision positions.
pub fn write_ply(mesh: &Mesh, encoding: PlyEncoding, extras: PlyExtras<'_>) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(match encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {}", mesh.vertex_count());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(header, "element face {}", mesh.face_count());
    header.push_str("property list uchar int vertex_indices\n");
    let colors = extras.face_colors.filter(|c| c.len() == mesh.face_count());
    let scalar = extras.face_scalar.filter(|(_, v)| v.len() == mesh.face_count());
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if let Some((name, _)) = scalar {
        let _ = writeln!(header, "property float {name}");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            let mut body = String::new();
            for v in mesh.vertices() {
                let _ = writeln!(body, "{:?} {:?} {:?}", v.x, v.y, v.z);
            }
            for (i, f) in mesh.faces().iter().enumerate() {
                let _ = write!(body, "3 {} {} {}", f[0], f[1], f[2]);
                if let Some(c) = colors {
                    let _ = write!(body, " {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                if let Some((_, vals)) = scalar {
                    let _ = write!(body, " {:?}", vals[i] as f32);
                }
                body.push('\n');
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyEncoding::BinaryLittleEndian => {
            for v in mesh.vertices() {
                for c in [v.x, v.y, v.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            for (i, f) in mesh.faces().iter().enumerate() {
                out.push(3);
                for &idx in f {
                    out.extend_from_slice(&(idx as i32).to_le_bytes());
                }
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
                if let Some((_, vals)) = scalar {
                    out.extend_from_slice(&(vals[i] as f32).to_le_bytes());
                }
            }
        }
    }
    out
}
