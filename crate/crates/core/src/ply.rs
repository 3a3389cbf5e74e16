//! PLY ingestion and emission for vertex-only point clouds.
//!
//! Accepts `ascii 1.0` and `binary_little_endian 1.0`. Only the `vertex`
//! element is decoded; elements declared before it are skipped and anything
//! after it is ignored. Within the vertex element `x`, `y`, `z` are required,
//! `red`/`green`/`blue` (or `r`/`g`/`b`) and `nx`/`ny`/`nz` are optional, and
//! every other property is skipped.
//!
//! Normals read from disk are renormalized. If any stored normal is zero or
//! non-finite the whole normal attribute is dropped, since a partial normal
//! field cannot satisfy the cloud invariants.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::cloud::{PointCloud, Rgb};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { ty: ScalarType, name: String },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

impl Element {
    /// Byte width of one record, if it has no list properties.
    fn fixed_stride(&self) -> Option<usize> {
        self.properties
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, .. } => Some(ty.size()),
                Property::List { .. } => None,
            })
            .sum()
    }

    fn scalar_slot(&self, names: &[&str]) -> Option<usize> {
        self.properties.iter().position(|p| match p {
            Property::Scalar { name, .. } => names.contains(&name.as_str()),
            Property::List { .. } => false,
        })
    }
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Number of header lines, so body line numbers can be reported.
    lines: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_no = 0;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<ply header>", e))?;
        line_no += 1;
        if n == 0 {
            return Err(parse_err(line_no, "unexpected end of file inside header"));
        }
        let line = std::str::from_utf8(&buf)
            .map_err(|_| parse_err(line_no, "header is not valid text"))?
            .trim_end_matches(['\n', '\r']);
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next();
        if line_no == 1 {
            if keyword != Some("ply") || tokens.next().is_some() {
                return Err(parse_err(line_no, "missing 'ply' magic"));
            }
            continue;
        }
        match keyword {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let kind = tokens.next();
                let version = tokens.next();
                if version != Some("1.0") {
                    return Err(parse_err(line_no, "unsupported PLY version"));
                }
                format = Some(match kind {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some("binary_big_endian") => {
                        return Err(parse_err(
                            line_no,
                            "binary_big_endian is not supported; convert to little endian",
                        ))
                    }
                    _ => return Err(parse_err(line_no, "unknown format")),
                });
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_no, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_no, "property before any element"))?;
                let ty = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "property without type"))?;
                let property = if ty == "list" {
                    let count = tokens.next().and_then(ScalarType::parse);
                    let item = tokens.next().and_then(ScalarType::parse);
                    match (count, item, tokens.next()) {
                        (Some(count), Some(item), Some(_)) => Property::List { count, item },
                        _ => return Err(parse_err(line_no, "malformed list property")),
                    }
                } else {
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| parse_err(line_no, format!("unknown type '{ty}'")))?;
                    let name = tokens
                        .next()
                        .ok_or_else(|| parse_err(line_no, "property without name"))?;
                    Property::Scalar {
                        ty,
                        name: name.to_string(),
                    }
                };
                element.properties.push(property);
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(line_no, format!("unexpected keyword '{other}'")));
            }
        }
    }
    let format = format.ok_or_else(|| parse_err(line_no, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        lines: line_no,
    })
}

/// Column layout of the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
    normal: Option<[usize; 3]>,
}

impl VertexLayout {
    fn of(element: &Element) -> Result<Self> {
        let slot = |names: &[&str]| element.scalar_slot(names);
        let xyz = match (slot(&["x"]), slot(&["y"]), slot(&["z"])) {
            (Some(x), Some(y), Some(z)) => [x, y, z],
            _ => return Err(Error::Schema("vertex element lacks x, y, z".into())),
        };
        let rgb = match (slot(&["red", "r"]), slot(&["green", "g"]), slot(&["blue", "b"])) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let normal = match (slot(&["nx"]), slot(&["ny"]), slot(&["nz"])) {
            (Some(x), Some(y), Some(z)) => Some([x, y, z]),
            _ => None,
        };
        Ok(Self { xyz, rgb, normal })
    }
}

struct VertexSink {
    layout: VertexLayout,
    positions: Vec<Point3<f64>>,
    colors: Vec<Rgb>,
    normals: Vec<Vector3<f64>>,
}

impl VertexSink {
    fn new(layout: VertexLayout, capacity: usize) -> Self {
        Self {
            positions: Vec::with_capacity(capacity),
            colors: Vec::with_capacity(if layout.rgb.is_some() { capacity } else { 0 }),
            normals: Vec::with_capacity(if layout.normal.is_some() { capacity } else { 0 }),
            layout,
        }
    }

    /// `values[i]` holds the decoded value of property slot `i`.
    fn push(&mut self, values: &[f64]) -> Result<()> {
        let index = self.positions.len();
        let [x, y, z] = self.layout.xyz.map(|s| values[s]);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::Validation {
                index,
                message: "non-finite coordinate".into(),
            });
        }
        self.positions.push(Point3::new(x, y, z));
        if let Some(slots) = self.layout.rgb {
            let mut rgb = [0u8; 3];
            for (c, &s) in rgb.iter_mut().zip(&slots) {
                let v = values[s];
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::Validation {
                        index,
                        message: format!("color channel value {v} outside 0..=255"),
                    });
                }
                *c = v as u8;
            }
            self.colors.push(rgb);
        }
        if let Some([a, b, c]) = self.layout.normal {
            self.normals
                .push(Vector3::new(values[a], values[b], values[c]));
        }
        Ok(())
    }

    fn finish(self) -> Result<PointCloud> {
        let has_rgb = self.layout.rgb.is_some();
        let has_normals = self.layout.normal.is_some();
        let mut cloud = PointCloud::new(self.positions)?;
        if has_rgb {
            cloud = cloud.with_colors(self.colors)?;
        }
        if has_normals {
            let unit: Option<Vec<Vector3<f64>>> = self
                .normals
                .into_iter()
                .map(|n| {
                    let norm = n.norm();
                    (norm.is_finite() && norm > 1e-12).then(|| n / norm)
                })
                .collect();
            if let Some(normals) = unit {
                cloud = cloud.with_normals(normals)?;
            }
        }
        Ok(cloud)
    }
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file))
}

pub fn read_ply<R: BufRead>(mut reader: R) -> Result<PointCloud> {
    let header = read_header(&mut reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Schema("no vertex element".into()))?;
    let vertex = &header.elements[vertex_pos];
    let layout = VertexLayout::of(vertex)?;
    match header.format {
        PlyFormat::Ascii => read_ascii_body(reader, &header, vertex_pos, layout),
        PlyFormat::BinaryLittleEndian => read_binary_body(reader, &header, vertex_pos, layout),
    }
}

fn read_ascii_body<R: BufRead>(
    reader: R,
    header: &Header,
    vertex_pos: usize,
    layout: VertexLayout,
) -> Result<PointCloud> {
    let vertex = &header.elements[vertex_pos];
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| (header.lines + 1 + i, l))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));

    for element in &header.elements[..vertex_pos] {
        for seen in 0..element.count {
            match lines.next() {
                Some((_, Ok(_))) => {}
                Some((_, Err(e))) => return Err(Error::io("<ply body>", e)),
                None => {
                    return Err(Error::Truncated {
                        expected: element.count,
                        actual: seen,
                        unit: "lines",
                    })
                }
            }
        }
    }

    let mut sink = VertexSink::new(layout, vertex.count.min(1 << 20));
    let mut values = vec![0.0; vertex.properties.len()];
    for seen in 0..vertex.count {
        let (line_no, line) = match lines.next() {
            Some((n, Ok(l))) => (n, l),
            Some((_, Err(e))) => return Err(Error::io("<ply body>", e)),
            None => {
                return Err(Error::Truncated {
                    expected: vertex.count,
                    actual: seen,
                    unit: "lines",
                })
            }
        };
        let mut tokens = line.split_whitespace();
        let mut next_number = |ty: ScalarType| -> Result<f64> {
            let tok = tokens
                .next()
                .ok_or_else(|| parse_err(line_no, "too few values on vertex line"))?;
            let parsed = if ty == ScalarType::F32 {
                tok.parse::<f32>().map(f64::from)
            } else {
                tok.parse::<f64>()
            };
            parsed.map_err(|_| parse_err(line_no, format!("'{tok}' is not a number")))
        };
        for (slot, property) in vertex.properties.iter().enumerate() {
            match property {
                Property::Scalar { ty, .. } => values[slot] = next_number(*ty)?,
                Property::List { count, item } => {
                    let n = next_number(*count)?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(parse_err(line_no, "invalid list length"));
                    }
                    for _ in 0..n as usize {
                        next_number(*item)?;
                    }
                }
            }
        }
        sink.push(&values)?;
    }
    sink.finish()
}

struct ByteCursor {
    data: Vec<u8>,
    pos: usize,
}

impl ByteCursor {
    fn take(&mut self, n: usize, expected_total: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Truncated {
                expected: expected_total,
                actual: self.data.len(),
                unit: "bytes",
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn read_binary_body<R: Read>(
    mut reader: R,
    header: &Header,
    vertex_pos: usize,
    layout: VertexLayout,
) -> Result<PointCloud> {
    let mut data = Vec::new();
    reader
        .read_to_end(&mut data)
        .map_err(|e| Error::io("<ply body>", e))?;
    let mut cursor = ByteCursor { data, pos: 0 };

    // Best estimate of the total bytes the header promises, for error reports.
    let mut expected = 0usize;
    for element in &header.elements[..=vertex_pos] {
        expected += element.fixed_stride().unwrap_or(0) * element.count;
    }

    for element in &header.elements[..vertex_pos] {
        for _ in 0..element.count {
            for property in &element.properties {
                skip_binary(&mut cursor, property, expected)?;
            }
        }
    }

    let vertex = &header.elements[vertex_pos];
    let remaining = cursor.data.len() - cursor.pos;
    let capacity = match vertex.fixed_stride() {
        Some(stride) if stride > 0 => vertex.count.min(remaining / stride),
        _ => vertex.count.min(remaining),
    };
    let mut sink = VertexSink::new(layout, capacity);
    let mut values = vec![0.0; vertex.properties.len()];
    for _ in 0..vertex.count {
        for (slot, property) in vertex.properties.iter().enumerate() {
            match property {
                Property::Scalar { ty, .. } => {
                    values[slot] = ty.decode(cursor.take(ty.size(), expected)?);
                }
                list => skip_binary(&mut cursor, list, expected)?,
            }
        }
        sink.push(&values)?;
    }
    sink.finish()
}

fn skip_binary(cursor: &mut ByteCursor, property: &Property, expected: usize) -> Result<()> {
    match property {
        Property::Scalar { ty, .. } => {
            cursor.take(ty.size(), expected)?;
        }
        Property::List { count, item } => {
            let n = count.decode(cursor.take(count.size(), expected)?);
            if n < 0.0 {
                return Err(Error::Schema("negative list length in body".into()));
            }
            cursor.take(n as usize * item.size(), expected)?;
        }
    }
    Ok(())
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(cloud, &mut w, format).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Serializes `cloud`. Coordinates are stored as `float` when every value is
/// exactly representable in 32 bits and as `double` otherwise, so a binary
/// round trip is lossless.
pub fn write_ply<W: Write>(cloud: &PointCloud, w: &mut W, format: PlyFormat) -> std::io::Result<()> {
    let fits_f32 = |v: f64| (v as f32) as f64 == v;
    let pos_single = cloud
        .positions()
        .iter()
        .all(|p| p.coords.iter().all(|&c| fits_f32(c)));
    let normal_single = cloud
        .normals()
        .is_none_or(|n| n.iter().all(|v| v.iter().all(|&c| fits_f32(c))));
    let ty = |single: bool| if single { "float" } else { "double" };

    writeln!(w, "ply")?;
    match format {
        PlyFormat::Ascii => writeln!(w, "format ascii 1.0")?,
        PlyFormat::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property {} {axis}", ty(pos_single))?;
    }
    if cloud.has_colors() {
        for c in ["red", "green", "blue"] {
            writeln!(w, "property uchar {c}")?;
        }
    }
    if cloud.normals().is_some() {
        for n in ["nx", "ny", "nz"] {
            writeln!(w, "property {} {n}", ty(normal_single))?;
        }
    }
    writeln!(w, "end_header")?;

    let write_reals = |w: &mut W, values: &[f64], single: bool| -> std::io::Result<()> {
        for (i, &v) in values.iter().enumerate() {
            match (format, single) {
                (PlyFormat::Ascii, true) => write!(w, "{}{}", if i == 0 { "" } else { " " }, v as f32)?,
                (PlyFormat::Ascii, false) => write!(w, "{}{}", if i == 0 { "" } else { " " }, v)?,
                (PlyFormat::BinaryLittleEndian, true) => w.write_all(&(v as f32).to_le_bytes())?,
                (PlyFormat::BinaryLittleEndian, false) => w.write_all(&v.to_le_bytes())?,
            }
        }
        Ok(())
    };

    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        write_reals(w, &[p.x, p.y, p.z], pos_single)?;
        if let Some(colors) = cloud.colors() {
            let c = colors[i];
            match format {
                PlyFormat::Ascii => write!(w, " {} {} {}", c[0], c[1], c[2])?,
                PlyFormat::BinaryLittleEndian => w.write_all(&c)?,
            }
        }
        if let Some(normals) = cloud.normals() {
            let n = normals[i];
            if format == PlyFormat::Ascii {
                write!(w, " ")?;
            }
            write_reals(w, &[n.x, n.y, n.z], normal_single)?;
        }
        if format == PlyFormat::Ascii {
            writeln!(w)?;
        }
    }
    Ok(())
}
