//! Point-cloud files: whitespace-separated XYZ text and PLY (ASCII or
//! binary little-endian). Only vertex positions are read and written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Parses XYZ text. `#` starts a comment; blank lines are skipped.
pub fn read_xyz<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let number = i + 1;
        let body = line.split('#').next().unwrap_or("");
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: number,
                message: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        points.push(parse_point(&fields, number)?);
    }
    finish(points)
}

pub fn write_xyz<W: Write>(pc: &PointCloud, mut w: W) -> Result<()> {
    for p in pc.points() {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_point(fields: &[&str], line: usize) -> Result<Point3> {
    let mut p = [0.0; 3];
    for (k, f) in fields.iter().take(3).enumerate() {
        let v: f64 = f.parse().map_err(|_| Error::Parse {
            line,
            message: format!("`{f}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("coordinate `{f}` is not finite"),
            });
        }
        p[k] = v;
    }
    Ok(p)
}

fn finish(points: Vec<Point3>) -> Result<PointCloud> {
    if points.is_empty() {
        return Err(Error::Format("file contains no points".into()));
    }
    PointCloud::new(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    lines: usize,
}

fn header_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut number = 0;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if r.read_until(b'\n', &mut buf)? == 0 {
            return Err(header_error(number + 1, "header ended before `end_header`"));
        }
        number += 1;
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        if number == 1 {
            if line != "ply" {
                return Err(header_error(1, "missing `ply` magic"));
            }
            continue;
        }
        match words.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match words.get(1).copied() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    Some(other) => {
                        return Err(Error::Format(format!("unsupported PLY format `{other}`")))
                    }
                    None => return Err(header_error(number, "format line without a format")),
                });
            }
            Some("element") => {
                if words.len() != 3 {
                    return Err(header_error(
                        number,
                        "element line needs a name and a count",
                    ));
                }
                let count = words[2].parse().map_err(|_| {
                    header_error(number, format!("bad element count `{}`", words[2]))
                })?;
                elements.push(Element {
                    name: words[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| header_error(number, "property before any element"))?;
                let scalar = |name: &str| {
                    Scalar::parse(name)
                        .ok_or_else(|| Error::Format(format!("unsupported property type `{name}`")))
                };
                let property = match words.get(1).copied() {
                    Some("list") if words.len() == 5 => Property::List {
                        count: scalar(words[2])?,
                        item: scalar(words[3])?,
                    },
                    Some(ty) if words.len() == 3 => Property::Scalar {
                        name: words[2].to_string(),
                        ty: scalar(ty)?,
                    },
                    _ => return Err(header_error(number, "malformed property line")),
                };
                element.properties.push(property);
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(header_error(
                    number,
                    format!("unknown header keyword `{other}`"),
                ))
            }
        }
    }
    let encoding = encoding.ok_or_else(|| header_error(number, "header has no format line"))?;
    Ok(Header {
        encoding,
        elements,
        lines: number,
    })
}

/// Positions of `x`, `y`, `z` within the vertex element's properties.
fn position_slots(vertex: &Element) -> Result<[usize; 3]> {
    let mut slots = [usize::MAX; 3];
    for (i, p) in vertex.properties.iter().enumerate() {
        if let Property::Scalar { name, ty } = p {
            if let Some(axis) = ["x", "y", "z"].iter().position(|a| a == name) {
                if !matches!(ty, Scalar::F32 | Scalar::F64) {
                    return Err(Error::Format(format!(
                        "vertex property `{name}` must be float or double"
                    )));
                }
                slots[axis] = i;
            }
        }
    }
    if slots.contains(&usize::MAX) {
        return Err(Error::Format("vertex element lacks x, y and z".into()));
    }
    Ok(slots)
}

pub fn read_ply<R: BufRead>(mut r: R) -> Result<PointCloud> {
    let header = read_header(&mut r)?;
    let mut points = Vec::new();
    match header.encoding {
        PlyEncoding::Ascii => read_ascii_body(r, &header, &mut points)?,
        PlyEncoding::BinaryLittleEndian => read_binary_body(r, &header, &mut points)?,
    }
    finish(points)
}

fn read_ascii_body<R: BufRead>(r: R, header: &Header, points: &mut Vec<Point3>) -> Result<()> {
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(i, l)| (header.lines + i + 1, l));
    for element in &header.elements {
        let slots = if element.name == "vertex" {
            Some(position_slots(element)?)
        } else {
            None
        };
        for _ in 0..element.count {
            let (number, line) = loop {
                match lines.next() {
                    Some((n, l)) => {
                        let l = l?;
                        if !l.trim().is_empty() {
                            break (n, l);
                        }
                    }
                    None => {
                        return Err(Error::Format(format!(
                            "file ended inside element `{}`",
                            element.name
                        )))
                    }
                }
            };
            let words: Vec<&str> = line.split_whitespace().collect();
            let mut values = Vec::new();
            let mut at = 0;
            for p in &element.properties {
                let take = |at: usize| {
                    words.get(at).copied().ok_or_else(|| Error::Parse {
                        line: number,
                        message: "too few values".into(),
                    })
                };
                match p {
                    Property::Scalar { .. } => {
                        values.push(take(at)?);
                        at += 1;
                    }
                    Property::List { .. } => {
                        let n: usize = take(at)?.parse().map_err(|_| Error::Parse {
                            line: number,
                            message: "bad list length".into(),
                        })?;
                        values.push("0");
                        at += 1 + n;
                    }
                }
            }
            if at != words.len() {
                return Err(Error::Parse {
                    line: number,
                    message: format!("expected {at} values, found {}", words.len()),
                });
            }
            if let Some(slots) = slots {
                let fields = [values[slots[0]], values[slots[1]], values[slots[2]]];
                points.push(parse_point(&fields, number)?);
            }
        }
    }
    Ok(())
}

fn read_binary_body<R: Read>(mut r: R, header: &Header, points: &mut Vec<Point3>) -> Result<()> {
    let mut buf = [0u8; 8];
    let mut read = |r: &mut R, ty: Scalar, what: &str| -> Result<f64> {
        let n = ty.size();
        r.read_exact(&mut buf[..n]).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::Format(format!("binary body truncated in element `{what}`"))
            }
            _ => Error::Io(e),
        })?;
        Ok(ty.decode(&buf[..n]))
    };
    for element in &header.elements {
        let slots = if element.name == "vertex" {
            Some(position_slots(element)?)
        } else {
            None
        };
        for index in 0..element.count {
            let mut p = [0.0; 3];
            for (i, prop) in element.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let v = read(&mut r, *ty, &element.name)?;
                        if let Some(axis) = slots.and_then(|s| s.iter().position(|&k| k == i)) {
                            p[axis] = v;
                        }
                    }
                    Property::List { count, item } => {
                        let n = read(&mut r, *count, &element.name)?;
                        if n < 0.0 {
                            return Err(Error::Format("negative list length".into()));
                        }
                        for _ in 0..n as usize {
                            read(&mut r, *item, &element.name)?;
                        }
                    }
                }
            }
            if slots.is_some() {
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(Error::Format(format!(
                        "vertex {index} has a non-finite coordinate"
                    )));
                }
                points.push(p);
            }
        }
    }
    Ok(())
}

/// Writes a PLY file with a single `vertex` element of `double` x, y, z.
pub fn write_ply<W: Write>(pc: &PointCloud, encoding: PlyEncoding, mut w: W) -> Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        pc.len()
    )?;
    for p in pc.points() {
        match encoding {
            PlyEncoding::Ascii => writeln!(w, "{} {} {}", p[0], p[1], p[2])?,
            PlyEncoding::BinaryLittleEndian => {
                for v in p {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn extension(path: &Path) -> Result<String> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "xyz" | "ply" => Ok(ext),
        _ => Err(Error::Format(format!(
            "unsupported point-cloud extension for `{}` (expected .xyz or .ply)",
            path.display()
        ))),
    }
}

/// Reads `.xyz` or `.ply` by extension.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let ext = extension(path)?;
    let reader = BufReader::new(File::open(path)?);
    if ext == "xyz" {
        read_xyz(reader)
    } else {
        read_ply(reader)
    }
}

/// Writes `.xyz` text or binary little-endian `.ply` by extension.
pub fn write_point_cloud(pc: &PointCloud, path: &Path) -> Result<()> {
    let ext = extension(path)?;
    let writer = BufWriter::new(File::create(path)?);
    if ext == "xyz" {
        write_xyz(pc, writer)
    } else {
        write_ply(pc, PlyEncoding::BinaryLittleEndian, writer)
    }
}
