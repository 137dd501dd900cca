//! PLY point clouds: `x y z` as double and `red green blue` as uchar, in
//! ASCII or binary little-endian form. The frame tag travels in a comment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Frame, PointCloud};
use crate::error::{Error, IoContext, Result};
use crate::geom::Vec3;

pub fn write_ply(cloud: &PointCloud, path: &Path, binary: bool) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut w = BufWriter::new(File::create(path).with_path(path)?);
    let format = if binary { "binary_little_endian" } else { "ascii" };
    let header = format!(
        "ply\nformat {format} 1.0\ncomment frame {}\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.frame.name(),
        cloud.len()
    );
    w.write_all(header.as_bytes()).with_path(path)?;
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        if binary {
            for v in [p.x, p.y, p.z] {
                w.write_all(&v.to_le_bytes()).with_path(path)?;
            }
            w.write_all(c).with_path(path)?;
        } else {
            // `{:?}` prints the shortest representation that round-trips.
            writeln!(w, "{:?} {:?} {:?} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]).with_path(path)?;
        }
    }
    w.flush().with_path(path)
}

#[derive(Clone, Copy)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads the vertex element of a PLY file. Clouds without a frame comment
/// are taken to be in the global frame.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    read_ply_full(path).map(|(c, _)| c)
}

/// Reads vertices and triangular faces (polygons are fanned).
pub fn read_ply_mesh(path: &Path) -> Result<(PointCloud, Vec<[usize; 3]>)> {
    read_ply_full(path)
}

fn read_ply_full(path: &Path) -> Result<(PointCloud, Vec<[usize; 3]>)> {
    let bad = |m: &str| Error::Schema(format!("{}: {m}", path.display()));
    let mut r = BufReader::new(File::open(path).with_path(path)?);
    let next_line = |r: &mut BufReader<File>| -> Result<String> {
        let mut line = String::new();
        if r.read_line(&mut line).with_path(path)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(bad("missing ply magic"));
    }
    let mut binary = None;
    let mut frame = Frame::Global;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        let words: Vec<&str> = l.split_whitespace().collect();
        let scalar = |t: &str| Scalar::parse(t).ok_or_else(|| bad(&format!("unknown type {t}")));
        match words.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", f, _] => return Err(bad(&format!("unsupported format {f}"))),
            ["comment", "frame", name] => frame = Frame::parse(name).ok_or_else(|| bad("unknown frame tag"))?,
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => elements.push(Element {
                name: name.to_string(),
                count: n.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element"))?
                .props
                .push(Property::List(name.to_string(), scalar(ct)?, scalar(it)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element"))?
                .props
                .push(Property::Scalar(name.to_string(), scalar(ty)?)),
            ["end_header"] => break,
            _ => return Err(bad(&format!("unexpected header line `{l}`"))),
        }
    }
    let binary = binary.ok_or_else(|| bad("missing format line"))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body).with_path(path)?;
    let mut reader = BodyReader {
        binary,
        bytes: &body,
        pos: 0,
    };

    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let mut seen_vertex = false;
    for el in &elements {
        let index = |name: &str| {
            el.props
                .iter()
                .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
        };
        let (ixyz, rgb) = if el.name == "vertex" {
            seen_vertex = true;
            match (index("x"), index("y"), index("z")) {
                (Some(a), Some(b), Some(c)) => (Some([a, b, c]), [index("red"), index("green"), index("blue")]),
                _ => return Err(bad("vertices need x, y and z")),
            }
        } else {
            (None, [None; 3])
        };
        let mut values = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            for (k, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar(_, s) => values[k] = reader.value(*s).ok_or_else(|| bad("truncated data"))?,
                    Property::List(name, ct, it) => {
                        let n = reader.value(*ct).ok_or_else(|| bad("truncated data"))? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(reader.value(*it).ok_or_else(|| bad("truncated data"))? as usize);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            for j in 1..n.saturating_sub(1) {
                                faces.push([idx[0], idx[j], idx[j + 1]]);
                            }
                        }
                    }
                }
            }
            if let Some([a, b, c]) = ixyz {
                positions.push(Vec3::new(values[a], values[b], values[c]));
                colors.push(rgb.map(|i| i.map_or(255, |i| values[i].clamp(0.0, 255.0) as u8)));
            }
        }
    }
    if !seen_vertex {
        return Err(bad("no vertex element"));
    }
    if faces.iter().flatten().any(|&i| i >= positions.len()) {
        return Err(bad("face index out of range"));
    }
    Ok((
        PointCloud {
            positions,
            colors,
            frame,
        },
        faces,
    ))
}

struct BodyReader<'a> {
    binary: bool,
    bytes: &'a [u8],
    pos: usize,
}

impl BodyReader<'_> {
    fn value(&mut self, s: Scalar) -> Option<f64> {
        if self.binary {
            let end = self.pos + s.size();
            let v = s.decode(self.bytes.get(self.pos..end)?);
            self.pos = end;
            Some(v)
        } else {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            let start = self.pos;
            while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
        }
    }
}
