//! File formats: Matrix Market coordinate matrices and small CSV tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::problem::{Bounds, Target, TargetMeta};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

/// Reads a `coordinate` Matrix Market file (`real`, `integer` or `pattern`;
/// `general` or `symmetric`).
pub fn read_mtx(path: &Path) -> Result<SparseMatrix> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header.map_err(|e| io_err(path, e))?.to_ascii_lowercase();
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(parse_err(path, 1, "expected '%%MatrixMarket matrix coordinate <field> <symmetry>'"));
    }
    let pattern = match fields[3] {
        "real" | "integer" | "double" => false,
        "pattern" => true,
        other => return Err(parse_err(path, 1, format!("unsupported field type '{other}'"))),
    };
    let symmetric = match fields[4] {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(path, 1, format!("unsupported symmetry '{other}'"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut trip = Vec::new();
    for (k, line) in lines {
        let lineno = k + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .ok_or_else(|| parse_err(path, lineno, "missing field"))?
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad integer '{}'", parts[i])))
        };
        match size {
            None => {
                size = Some((num(0)?, num(1)?, num(2)?));
                trip.reserve(num(2)?);
            }
            Some((m, n, _)) => {
                let (i, j) = (num(0)?, num(1)?);
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(parse_err(path, lineno, format!("entry ({i}, {j}) outside {m}x{n}")));
                }
                let v = if pattern {
                    1.0
                } else {
                    let raw = parts.get(2).ok_or_else(|| parse_err(path, lineno, "missing value"))?;
                    raw.parse::<f64>()
                        .map_err(|_| parse_err(path, lineno, format!("bad value '{raw}'")))?
                };
                trip.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    trip.push((j - 1, i - 1, v));
                }
            }
        }
    }
    let (m, n, nnz) = size.ok_or_else(|| parse_err(path, 0, "missing size line"))?;
    let stored = if symmetric {
        trip.iter().filter(|(i, j, _)| i >= j).count()
    } else {
        trip.len()
    };
    if stored != nnz {
        return Err(parse_err(path, 0, format!("size line declares {nnz} entries, found {stored}")));
    }
    SparseMatrix::from_triplets(m, n, trip).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn write_mtx(path: &Path, a: &SparseMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
        for (i, j, v) in a.triplets() {
            writeln!(w, "{} {} {}", i + 1, j + 1, fmt_sig(v))?;
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

/// Formats with 12 significant digits, plain notation for moderate
/// magnitudes and trailing zeros removed.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..15).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mant))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// A one-column CSV with a header line.
pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = reader(path)?;
    let n_cols = rdr.headers().map_err(|e| csv_err(path, e))?.len();
    if n_cols != 1 {
        return Err(parse_err(path, 1, format!("expected one column, found {n_cols}")));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let raw = &rec[0];
        out.push(
            raw.parse()
                .map_err(|_| parse_err(path, k + 2, format!("bad number '{raw}'")))?,
        );
    }
    Ok(out)
}

pub fn write_vector_csv(path: &Path, header: &str, v: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([header]).map_err(|e| csv_err(path, e))?;
    for x in v {
        w.write_record([fmt_sig(*x)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetRecord {
    kind: String,
    #[serde(default)]
    point: Option<f64>,
    #[serde(default)]
    lo: Option<f64>,
    #[serde(default)]
    hi: Option<f64>,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    group: Option<String>,
}

/// Reads `targets.csv` with columns `kind,point,lo,hi` and optional
/// `id,group`. `kind` is `point` or `interval`.
pub fn read_targets_csv(path: &Path) -> Result<(Vec<Target>, Vec<TargetMeta>)> {
    let mut rdr = reader(path)?;
    let mut targets = Vec::new();
    let mut meta = Vec::new();
    for (k, rec) in rdr.deserialize::<TargetRecord>().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let target = match rec.kind.as_str() {
            "point" => Target::Point(rec.point.ok_or_else(|| parse_err(path, line, "point target without 'point'"))?),
            "interval" => {
                let (lo, hi) = rec
                    .lo
                    .zip(rec.hi)
                    .ok_or_else(|| parse_err(path, line, "interval target without 'lo' and 'hi'"))?;
                Target::Interval { lo, hi }
            }
            other => return Err(parse_err(path, line, format!("unknown target kind '{other}'"))),
        };
        target.validate().map_err(|e| parse_err(path, line, e.to_string()))?;
        targets.push(target);
        meta.push(TargetMeta {
            id: rec.id.filter(|s| !s.is_empty()).unwrap_or_else(|| format!("t{k}")),
            group: rec.group.filter(|s| !s.is_empty()),
        });
    }
    Ok((targets, meta))
}

pub fn write_targets_csv(path: &Path, targets: &[Target], meta: &[TargetMeta]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["kind", "point", "lo", "hi", "id", "group"])
        .map_err(|e| csv_err(path, e))?;
    for (t, m) in targets.iter().zip(meta) {
        let group = m.group.clone().unwrap_or_default();
        let row = match *t {
            Target::Point(v) => ["point".into(), fmt_sig(v), String::new(), String::new(), m.id.clone(), group],
            Target::Interval { lo, hi } => {
                ["interval".into(), String::new(), fmt_sig(lo), fmt_sig(hi), m.id.clone(), group]
            }
        };
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundRecord {
    lower: f64,
    upper: f64,
}

pub fn read_bounds_csv(path: &Path) -> Result<Bounds> {
    let mut rdr = reader(path)?;
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for rec in rdr.deserialize::<BoundRecord>() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        lower.push(rec.lower);
        upper.push(rec.upper);
    }
    Bounds::new(lower, upper).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn write_bounds_csv(path: &Path, b: &Bounds) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["lower", "upper"]).map_err(|e| csv_err(path, e))?;
    for (l, u) in b.lower.iter().zip(&b.upper) {
        w.write_record([fmt_sig(*l), fmt_sig(*u)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(10.0 / 3.0), "3.33333333333");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-2.5), "-2.5");
        assert_eq!(fmt_sig(123456.0), "123456");
        assert_eq!(fmt_sig(1e-9), "1e-9");
        assert_eq!(fmt_sig(6.103515625e-5), "0.00006103515625");
        assert_eq!(fmt_sig(2.5e-7), "2.5e-7");
        assert_eq!(fmt_sig(32768.0), "32768");
        assert_eq!(fmt_sig(0.1 + 0.2), "0.3");
        let v = 1234.56789012345;
        assert!((fmt_sig(v).parse::<f64>().unwrap() - v).abs() <= 1e-11 * v);
    }

    #[test]
    fn mtx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mtx");
        let a = SparseMatrix::from_triplets(3, 4, vec![(0, 0, 1.0), (2, 3, -2.5), (1, 1, 0.125)]).unwrap();
        write_mtx(&path, &a).unwrap();
        assert_eq!(read_mtx(&path).unwrap(), a);
    }

    #[test]
    fn mtx_pattern_and_symmetric() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.mtx");
        std::fs::write(&path, "%%MatrixMarket matrix coordinate pattern symmetric\n% c\n2 2 2\n1 1\n2 1\n").unwrap();
        let a = read_mtx(&path).unwrap();
        assert_eq!(a.to_dense(), nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn mtx_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mtx");
        std::fs::write(&path, "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n").unwrap();
        let e = read_mtx(&path).unwrap_err().to_string();
        assert!(e.contains("bad.mtx") && e.contains(":3:"), "{e}");
        let missing = dir.path().join("missing.mtx");
        assert!(read_mtx(&missing).unwrap_err().to_string().contains("missing.mtx"));
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.csv");
        write_vector_csv(&p, "y", &[1.0, 2.5]).unwrap();
        assert_eq!(read_vector_csv(&p).unwrap(), vec![1.0, 2.5]);

        let p = dir.path().join("targets.csv");
        let targets = vec![Target::Point(3.0), Target::Interval { lo: 95.0, hi: 105.0 }];
        let meta = vec![
            TargetMeta {
                id: "total".into(),
                group: None,
            },
            TargetMeta {
                id: "race".into(),
                group: Some("Race".into()),
            },
        ];
        write_targets_csv(&p, &targets, &meta).unwrap();
        assert_eq!(read_targets_csv(&p).unwrap(), (targets, meta));

        let p = dir.path().join("bounds.csv");
        let b = Bounds::new(vec![0.0, 1.0], vec![2.0, 3.0]).unwrap();
        write_bounds_csv(&p, &b).unwrap();
        assert_eq!(read_bounds_csv(&p).unwrap(), b);
    }

    #[test]
    fn targets_without_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "kind,point,lo,hi\npoint,4,,\ninterval,,1,2\n").unwrap();
        let (t, m) = read_targets_csv(&p).unwrap();
        assert_eq!(t, vec![Target::Point(4.0), Target::Interval { lo: 1.0, hi: 2.0 }]);
        assert_eq!(m[1].id, "t1");
        std::fs::write(&p, "kind,point,lo,hi\nrange,4,,\n").unwrap();
        assert!(read_targets_csv(&p).is_err());
    }
}
