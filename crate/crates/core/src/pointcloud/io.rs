use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Point, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    CsvXyz,
}

impl CloudFormat {
    /// `.ply` is PLY, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::CsvXyz,
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let points = match format {
        CloudFormat::CsvXyz => parse_csv(path, &text)?,
        CloudFormat::PlyAscii => parse_ply(path, &text)?,
    };
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud {
        points,
        timestamp: None,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_xyz<'a>(
    path: &Path,
    line: usize,
    fields: impl Iterator<Item = &'a str>,
) -> Result<Vec<f64>> {
    fields
        .map(|f| {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("cannot parse {f:?} as a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(path, line, format!("non-finite coordinate {f:?}")))
            }
        })
        .collect()
}

fn parse_csv(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = parse_xyz(path, i + 1, line.split(','))?;
        if vals.len() != 3 {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected 3 fields, found {}", vals.len()),
            ));
        }
        points.push(Point::new(vals[0], vals[1], vals[2]));
    }
    Ok(points)
}

fn parse_ply(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }

    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    // Elements declared before the vertex element shift where vertex data starts.
    let mut rows_before_vertex = 0usize;
    let mut seen_vertex = false;
    let mut header_done = false;

    for (i, raw) in lines.by_ref() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(parse_err(path, i + 1, format!("unsupported format {fmt}")));
                }
            }
            ["element", name, n] => {
                let n: usize = n
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, "bad element count"))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertex_count = Some(n);
                    seen_vertex = true;
                } else if !seen_vertex {
                    rows_before_vertex += n;
                }
            }
            ["property", .., name] if in_vertex => props.push((*name).to_string()),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(parse_err(path, 1, "missing end_header"));
    }
    let n = vertex_count.ok_or_else(|| parse_err(path, 1, "no vertex element"))?;
    let col = |axis: &str| {
        props
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| parse_err(path, 1, format!("vertex has no '{axis}' property")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);

    let mut points = Vec::with_capacity(n);
    let mut data = lines.filter(|(_, l)| !l.trim().is_empty()).skip(rows_before_vertex);
    for _ in 0..n {
        let (i, raw) = data
            .next()
            .ok_or_else(|| parse_err(path, 0, "fewer vertex rows than declared"))?;
        let vals = parse_xyz(path, i + 1, raw.split_whitespace())?;
        if vals.len() != props.len() {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {} properties, found {}", props.len(), vals.len()),
            ));
        }
        points.push(Point::new(vals[ix], vals[iy], vals[iz]));
    }
    Ok(points)
}

/// Writes `x,y,z` rows with 9 significant digits.
pub fn write_csv(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# x,y,z")?;
    for p in cloud.points() {
        writeln!(out, "{:.8e},{:.8e},{:.8e}", p.x, p.y, p.z)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_three_points() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.csv", "0,0,0\n1,0,0\n0,1,0\n");
        let c = load_cloud(&p, CloudFormat::CsvXyz).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(*c.get(1), Point::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn csv_header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.csv", "# x,y,z\n1.5,2,3\n");
        assert_eq!(load_cloud(&p, CloudFormat::CsvXyz).unwrap().len(), 1);
    }

    #[test]
    fn csv_nan_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.csv", "0,0,0\n1,nan,0\n");
        match load_cloud(&p, CloudFormat::CsvXyz) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_empty_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.csv", "# only a header\n");
        assert!(matches!(
            load_cloud(&p, CloudFormat::CsvXyz),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn ply_two_vertices_with_extra_properties() {
        let dir = tempfile::tempdir().unwrap();
        let body = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\n\
                    property float x\nproperty float y\nproperty float z\n\
                    property uchar intensity\nelement face 0\n\
                    property list uchar int vertex_indices\nend_header\n\
                    1 2 3 10\n4 5 6 20\n";
        let p = write_tmp(&dir, "a.ply", body);
        let c = load_cloud(&p, CloudFormat::PlyAscii).unwrap();
        assert_eq!(c.points(), &[Point::new(1.0, 2.0, 3.0), Point::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn ply_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
        let p = write_tmp(&dir, "a.ply", body);
        assert!(matches!(
            load_cloud(&p, CloudFormat::PlyAscii),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_write_then_read_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let cloud: PointCloud = vec![
            Point::new(0.123456789012, -4.5, 1e-7),
            Point::new(12345.6789, 0.0, -3.3333333333),
        ]
        .into_iter()
        .collect();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_csv(&cloud, &a).unwrap();
        let back = load_cloud(&a, CloudFormat::CsvXyz).unwrap();
        write_csv(&back, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        for (x, y) in cloud.points().iter().zip(back.points()) {
            assert!((x - y).norm() <= 1e-8 * x.norm().max(1.0));
        }
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(CloudFormat::from_path(Path::new("a.PLY")), CloudFormat::PlyAscii);
        assert_eq!(CloudFormat::from_path(Path::new("a.csv")), CloudFormat::CsvXyz);
    }
}
