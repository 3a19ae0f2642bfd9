//! PCD v0.7 reading and writing.
//!
//! Reads `ascii` and little-endian `binary` data sections; `binary_compressed`
//! is rejected. Writes ASCII with `F 8` coordinates so that a save/load/save
//! cycle is byte-exact.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geometry::Point3;
use crate::io_util::write_atomic;

#[derive(Debug, Error)]
pub enum PcdError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("PCD format error: {0}")]
    Format(String),
    #[error("unsupported PCD: {0}")]
    Unsupported(String),
}

fn fmt_err(msg: impl Into<String>) -> PcdError {
    PcdError::Format(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    Float,
    Signed,
    Unsigned,
}

impl FieldType {
    fn from_char(c: &str) -> Option<Self> {
        match c {
            "F" => Some(Self::Float),
            "I" => Some(Self::Signed),
            "U" => Some(Self::Unsigned),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            Self::Float => 'F',
            Self::Signed => 'I',
            Self::Unsigned => 'U',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: String,
    pub ty: FieldType,
    pub size: usize,
    pub count: usize,
}

impl FieldSpec {
    pub fn new(name: &str, ty: FieldType, size: usize) -> Self {
        Self {
            name: name.to_string(),
            ty,
            size,
            count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcdHeader {
    pub fields: Vec<FieldSpec>,
    pub width: usize,
    pub height: usize,
    pub points: usize,
    pub data: DataKind,
}

/// Column-oriented view of a PCD body. Multi-count fields are flattened to
/// `name_0`, `name_1`, ...
#[derive(Debug, Clone, PartialEq)]
pub struct PcdTable {
    pub header: PcdHeader,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl PcdTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<PcdHeader, PcdError> {
    let mut names: Option<Vec<String>> = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut types: Option<Vec<FieldType>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut width = None;
    let mut height = None;
    let mut points = None;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| fmt_err(e.to_string()))?;
        if n == 0 {
            return Err(fmt_err("missing DATA line"));
        }
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let key = tokens.next().unwrap_or_default().to_ascii_uppercase();
        let rest: Vec<&str> = tokens.collect();
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| fmt_err(format!("bad integer '{s}' in {key}")))
        };
        match key.as_str() {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => names = Some(rest.iter().map(|s| s.to_string()).collect()),
            "SIZE" => sizes = Some(rest.iter().map(|s| parse_usize(s)).collect::<Result<_, _>>()?),
            "TYPE" => {
                types = Some(
                    rest.iter()
                        .map(|s| FieldType::from_char(s).ok_or_else(|| fmt_err(format!("bad TYPE {s}"))))
                        .collect::<Result<_, _>>()?,
                )
            }
            "COUNT" => counts = Some(rest.iter().map(|s| parse_usize(s)).collect::<Result<_, _>>()?),
            "WIDTH" => width = Some(parse_usize(rest.first().copied().unwrap_or(""))?),
            "HEIGHT" => height = Some(parse_usize(rest.first().copied().unwrap_or(""))?),
            "POINTS" => points = Some(parse_usize(rest.first().copied().unwrap_or(""))?),
            "DATA" => {
                let data = match rest.first().map(|s| s.to_ascii_lowercase()).as_deref() {
                    Some("ascii") => DataKind::Ascii,
                    Some("binary") => DataKind::Binary,
                    Some(other) => {
                        return Err(PcdError::Unsupported(format!("DATA {other}")));
                    }
                    None => return Err(fmt_err("DATA without a value")),
                };
                let names = names.ok_or_else(|| fmt_err("missing FIELDS"))?;
                let sizes = sizes.ok_or_else(|| fmt_err("missing SIZE"))?;
                let types = types.ok_or_else(|| fmt_err("missing TYPE"))?;
                let counts = counts.unwrap_or_else(|| vec![1; names.len()]);
                if sizes.len() != names.len() || types.len() != names.len() || counts.len() != names.len() {
                    return Err(fmt_err("FIELDS/SIZE/TYPE/COUNT lengths differ"));
                }
                let fields = names
                    .into_iter()
                    .zip(sizes)
                    .zip(types)
                    .zip(counts)
                    .map(|(((name, size), ty), count)| {
                        let ok = match ty {
                            FieldType::Float => size == 4 || size == 8,
                            _ => matches!(size, 1 | 2 | 4 | 8),
                        };
                        if ok && count > 0 {
                            Ok(FieldSpec { name, ty, size, count })
                        } else {
                            Err(fmt_err(format!("bad SIZE/COUNT for field {name}")))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let width = width.ok_or_else(|| fmt_err("missing WIDTH"))?;
                let height = height.unwrap_or(1);
                let points = points.unwrap_or(width * height);
                if points != width * height {
                    return Err(fmt_err("POINTS differs from WIDTH*HEIGHT"));
                }
                return Ok(PcdHeader {
                    fields,
                    width,
                    height,
                    points,
                    data,
                });
            }
            other => return Err(fmt_err(format!("unknown header key {other}"))),
        }
    }
}

fn decode_binary(bytes: &[u8], ty: FieldType, size: usize) -> f64 {
    let mut buf = [0u8; 8];
    buf[..size].copy_from_slice(bytes);
    match (ty, size) {
        (FieldType::Float, 4) => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        (FieldType::Float, _) => f64::from_le_bytes(buf),
        (FieldType::Unsigned, 1) => buf[0] as f64,
        (FieldType::Unsigned, 2) => u16::from_le_bytes(buf[..2].try_into().unwrap()) as f64,
        (FieldType::Unsigned, 4) => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        (FieldType::Unsigned, _) => u64::from_le_bytes(buf) as f64,
        (FieldType::Signed, 1) => buf[0] as i8 as f64,
        (FieldType::Signed, 2) => i16::from_le_bytes(buf[..2].try_into().unwrap()) as f64,
        (FieldType::Signed, 4) => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        (FieldType::Signed, _) => i64::from_le_bytes(buf) as f64,
    }
}

pub fn read_pcd<R: Read>(reader: R) -> Result<PcdTable, PcdError> {
    let mut reader = BufReader::new(reader);
    let header = parse_header(&mut reader)?;
    let mut names = Vec::new();
    let mut layout = Vec::new();
    for f in &header.fields {
        for k in 0..f.count {
            names.push(if f.count == 1 {
                f.name.clone()
            } else {
                format!("{}_{k}", f.name)
            });
            layout.push((f.ty, f.size));
        }
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(header.points); names.len()];
    match header.data {
        DataKind::Ascii => {
            let mut text = String::new();
            reader
                .read_to_string(&mut text)
                .map_err(|e| fmt_err(e.to_string()))?;
            let mut rows = 0;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                if rows == header.points {
                    return Err(fmt_err("more data rows than POINTS"));
                }
                let mut n = 0;
                for (col, tok) in columns.iter_mut().zip(line.split_whitespace()) {
                    let v = match tok {
                        "nan" | "NaN" | "-nan" => f64::NAN,
                        _ => tok
                            .parse::<f64>()
                            .map_err(|_| fmt_err(format!("bad value '{tok}' in row {rows}")))?,
                    };
                    col.push(v);
                    n += 1;
                }
                if n != names.len() || line.split_whitespace().count() != names.len() {
                    return Err(fmt_err(format!(
                        "row {rows} has {} values, expected {}",
                        line.split_whitespace().count(),
                        names.len()
                    )));
                }
                rows += 1;
            }
            if rows != header.points {
                return Err(fmt_err(format!("expected {} rows, found {rows}", header.points)));
            }
        }
        DataKind::Binary => {
            let stride: usize = layout.iter().map(|(_, s)| s).sum();
            let mut body = Vec::new();
            reader
                .read_to_end(&mut body)
                .map_err(|e| fmt_err(e.to_string()))?;
            if body.len() < stride * header.points {
                return Err(fmt_err(format!(
                    "binary body has {} bytes, expected {}",
                    body.len(),
                    stride * header.points
                )));
            }
            for row in body.chunks_exact(stride).take(header.points) {
                let mut off = 0;
                for (col, &(ty, size)) in columns.iter_mut().zip(&layout) {
                    col.push(decode_binary(&row[off..off + size], ty, size));
                    off += size;
                }
            }
        }
    }
    Ok(PcdTable {
        header,
        names,
        columns,
    })
}

/// Result of [`load_pcd`]: the finite points and how many rows were dropped.
#[derive(Debug, Clone)]
pub struct LoadedCloud {
    pub cloud: PointCloud,
    pub dropped: usize,
}

pub fn table_to_cloud(table: &PcdTable) -> Result<LoadedCloud, PcdError> {
    let col = |n: &str| {
        table
            .column(n)
            .ok_or_else(|| PcdError::Unsupported(format!("FIELDS lack '{n}'")))
    };
    let (xs, ys, zs) = (col("x")?, col("y")?, col("z")?);
    let intensity = table.column("intensity");
    let mut points = Vec::with_capacity(xs.len());
    let mut inten = Vec::new();
    let mut dropped = 0;
    for i in 0..xs.len() {
        let p = Point3::new(xs[i], ys[i], zs[i]);
        let iv = intensity.map(|c| c[i]);
        if p.iter().all(|v| v.is_finite()) && iv.is_none_or(f64::is_finite) {
            points.push(p);
            if let Some(v) = iv {
                inten.push(v);
            }
        } else {
            dropped += 1;
        }
    }
    let cloud = match intensity {
        Some(_) => PointCloud::with_intensity(points, inten).expect("equal lengths"),
        None => PointCloud::new(points),
    };
    Ok(LoadedCloud { cloud, dropped })
}

/// Loads a PCD file; rows with any non-finite coordinate are dropped.
pub fn load_pcd(path: &Path) -> Result<LoadedCloud, PcdError> {
    let file = std::fs::File::open(path).map_err(|source| PcdError::Io {
        path: path.display().to_string(),
        source,
    })?;
    table_to_cloud(&read_pcd(file)?)
}

fn fmt_value(out: &mut String, v: f64, ty: FieldType) {
    match ty {
        FieldType::Float => write!(out, "{v}"),
        _ => write!(out, "{}", v as i128),
    }
    .expect("writing to a String");
}

/// Serializes columns as an ASCII PCD document.
pub fn encode_ascii(fields: &[FieldSpec], columns: &[&[f64]]) -> String {
    assert_eq!(fields.len(), columns.len());
    let n = columns.first().map_or(0, |c| c.len());
    let mut out = String::with_capacity(64 + n * 24 * fields.len());
    let join = |f: &dyn Fn(&FieldSpec) -> String| fields.iter().map(f).collect::<Vec<_>>().join(" ");
    out.push_str("# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\n");
    writeln!(out, "FIELDS {}", join(&|f| f.name.clone())).unwrap();
    writeln!(out, "SIZE {}", join(&|f| f.size.to_string())).unwrap();
    writeln!(out, "TYPE {}", join(&|f| f.ty.as_char().to_string())).unwrap();
    writeln!(out, "COUNT {}", join(&|_| "1".to_string())).unwrap();
    writeln!(out, "WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA ascii").unwrap();
    for i in 0..n {
        for (k, (f, c)) in fields.iter().zip(columns).enumerate() {
            if k > 0 {
                out.push(' ');
            }
            fmt_value(&mut out, c[i], f.ty);
        }
        out.push('\n');
    }
    out
}

/// Serializes columns as a little-endian binary PCD document.
pub fn encode_binary(fields: &[FieldSpec], columns: &[&[f64]]) -> Vec<u8> {
    let n = columns.first().map_or(0, |c| c.len());
    let names: Vec<_> = fields.iter().map(|f| f.name.as_str()).collect();
    let sizes: Vec<_> = fields.iter().map(|f| f.size.to_string()).collect();
    let types: Vec<_> = fields.iter().map(|f| f.ty.as_char().to_string()).collect();
    let mut out = format!(
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS {}\nSIZE {}\nTYPE {}\nCOUNT {}\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA binary\n",
        names.join(" "),
        sizes.join(" "),
        types.join(" "),
        vec!["1"; fields.len()].join(" ")
    )
    .into_bytes();
    for i in 0..n {
        for (f, c) in fields.iter().zip(columns) {
            let v = c[i];
            match (f.ty, f.size) {
                (FieldType::Float, 4) => out.extend((v as f32).to_le_bytes()),
                (FieldType::Float, _) => out.extend(v.to_le_bytes()),
                (FieldType::Unsigned, 1) => out.push(v as u8),
                (FieldType::Unsigned, 2) => out.extend((v as u16).to_le_bytes()),
                (FieldType::Unsigned, 4) => out.extend((v as u32).to_le_bytes()),
                (FieldType::Unsigned, _) => out.extend((v as u64).to_le_bytes()),
                (FieldType::Signed, 1) => out.push(v as i8 as u8),
                (FieldType::Signed, 2) => out.extend((v as i16).to_le_bytes()),
                (FieldType::Signed, 4) => out.extend((v as i32).to_le_bytes()),
                (FieldType::Signed, _) => out.extend((v as i64).to_le_bytes()),
            }
        }
    }
    out
}

fn cloud_columns(cloud: &PointCloud) -> (Vec<FieldSpec>, Vec<Vec<f64>>) {
    let pts = cloud.points();
    let mut fields = vec![
        FieldSpec::new("x", FieldType::Float, 8),
        FieldSpec::new("y", FieldType::Float, 8),
        FieldSpec::new("z", FieldType::Float, 8),
    ];
    let mut cols = vec![
        pts.iter().map(|p| p.x).collect(),
        pts.iter().map(|p| p.y).collect(),
        pts.iter().map(|p| p.z).collect(),
    ];
    if let Some(i) = cloud.intensity() {
        fields.push(FieldSpec::new("intensity", FieldType::Float, 8));
        cols.push(i.to_vec());
    }
    (fields, cols)
}

pub fn encode_cloud_ascii(cloud: &PointCloud) -> String {
    let (fields, cols) = cloud_columns(cloud);
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    encode_ascii(&fields, &refs)
}

pub fn encode_cloud_binary(cloud: &PointCloud) -> Vec<u8> {
    let (fields, cols) = cloud_columns(cloud);
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    encode_binary(&fields, &refs)
}

/// Writes an ASCII PCD (atomically: temp file then rename).
pub fn save_pcd(cloud: &PointCloud, path: &Path) -> Result<(), PcdError> {
    write_atomic(path, encode_cloud_ascii(cloud).as_bytes()).map_err(|source| PcdError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "# comment\nVERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 3\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 3\nDATA ascii\n1 2 3\n4 5 6\n7 8 9\n";

    #[test]
    fn ascii_three_points() {
        let loaded = table_to_cloud(&read_pcd(THREE.as_bytes()).unwrap()).unwrap();
        assert_eq!(loaded.cloud.len(), 3);
        assert_eq!(loaded.dropped, 0);
        assert_eq!(loaded.cloud.points()[1], Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn nan_rows_are_dropped_and_counted() {
        let text = THREE.replace("4 5 6", "nan nan nan");
        let loaded = table_to_cloud(&read_pcd(text.as_bytes()).unwrap()).unwrap();
        assert_eq!(loaded.cloud.len(), 2);
        assert_eq!(loaded.dropped, 1);
    }

    #[test]
    fn missing_xyz_is_unsupported() {
        let text = THREE.replace("FIELDS x y z", "FIELDS a b c");
        let err = table_to_cloud(&read_pcd(text.as_bytes()).unwrap()).unwrap_err();
        assert!(matches!(err, PcdError::Unsupported(_)));
    }

    #[test]
    fn bad_headers_are_format_errors() {
        assert!(matches!(read_pcd("VERSION 0.7\n".as_bytes()), Err(PcdError::Format(_))));
        let text = THREE.replace("TYPE F F F", "TYPE F F Q");
        assert!(matches!(read_pcd(text.as_bytes()), Err(PcdError::Format(_))));
        let text = THREE.replace("POINTS 3", "POINTS 4");
        assert!(matches!(read_pcd(text.as_bytes()), Err(PcdError::Format(_))));
        let text = THREE.replace("DATA ascii", "DATA binary_compressed");
        assert!(matches!(read_pcd(text.as_bytes()), Err(PcdError::Unsupported(_))));
    }

    #[test]
    fn short_ascii_rows_are_rejected() {
        let text = THREE.replace("7 8 9", "7 8");
        assert!(matches!(read_pcd(text.as_bytes()), Err(PcdError::Format(_))));
    }

    #[test]
    fn binary_mixed_types_and_extra_fields() {
        let fields = [
            FieldSpec::new("x", FieldType::Float, 4),
            FieldSpec::new("y", FieldType::Float, 4),
            FieldSpec::new("z", FieldType::Float, 8),
            FieldSpec::new("ring", FieldType::Unsigned, 2),
            FieldSpec::new("intensity", FieldType::Float, 4),
        ];
        let cols: [&[f64]; 5] = [&[1.5, -2.0], &[0.25, 3.0], &[0.1, 7.0], &[3.0, 15.0], &[10.0, 20.0]];
        let bytes = encode_binary(&fields, &cols);
        let table = read_pcd(bytes.as_slice()).unwrap();
        assert_eq!(table.column("ring").unwrap(), &[3.0, 15.0]);
        let loaded = table_to_cloud(&table).unwrap();
        assert_eq!(loaded.cloud.points()[0], Point3::new(1.5, 0.25, 0.1));
        assert_eq!(loaded.cloud.intensity().unwrap(), &[10.0, 20.0]);
    }

    #[test]
    fn multi_count_fields_are_flattened() {
        let text = "VERSION 0.7\nFIELDS x y z normal\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 3\nWIDTH 1\nHEIGHT 1\nPOINTS 1\nDATA ascii\n1 2 3 0 0 1\n";
        let table = read_pcd(text.as_bytes()).unwrap();
        assert_eq!(table.column("normal_2").unwrap(), &[1.0]);
    }

    #[test]
    fn ascii_encoding_round_trips_bytes() {
        let cloud = PointCloud::with_intensity(
            vec![Point3::new(0.1, 1.0 / 3.0, -2e-9), Point3::new(1e6, -0.0, 5.0)],
            vec![1.0, 0.5],
        )
        .unwrap();
        let a = encode_cloud_ascii(&cloud);
        let back = table_to_cloud(&read_pcd(a.as_bytes()).unwrap()).unwrap().cloud;
        assert_eq!(back, cloud);
        assert_eq!(encode_cloud_ascii(&back), a);
        let b = encode_cloud_binary(&cloud);
        let back = table_to_cloud(&read_pcd(b.as_slice()).unwrap()).unwrap().cloud;
        assert_eq!(back, cloud);
    }
}
