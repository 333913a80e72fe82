//! Reading and writing dense numeric data.
//!
//! * CSV: numeric cells, no header. A single cell is a scalar; a single row
//!   or column binds to a `Vector` parameter.
//! * Matrix Market (`%%MatrixMarket matrix array|coordinate ...`), densified.
//! * LIBSVM text (`label index:value ...`, 1-based indices) for labelled
//!   data sets.

use crate::error::DataError;
use crate::eval::Value;
use std::fs;
use std::io::Write;
use std::path::Path;

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a CSV or Matrix Market file, chosen by its first line.
pub fn load_data(path: impl AsRef<Path>) -> Result<Value, DataError> {
    parse_data(&read(path.as_ref())?)
}

pub fn parse_data(text: &str) -> Result<Value, DataError> {
    if text.trim_start().starts_with("%%MatrixMarket") {
        parse_matrix_market(text)
    } else {
        parse_csv(text)
    }
}

pub fn parse_csv(text: &str) -> Result<Value, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Format {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(rows.len() + 1, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>().map_err(|_| DataError::NonNumericCell {
                    line,
                    column: j + 1,
                    text: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(DataError::Format {
                    line,
                    message: format!("expected {} cells, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Format {
            line: 1,
            message: "no data".into(),
        });
    }
    let cols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Value::from_row_slice(rows.len(), cols, &flat))
}

fn number(tok: &str, line: usize) -> Result<f64, DataError> {
    tok.parse().map_err(|_| DataError::NonNumericCell {
        line,
        column: 0,
        text: tok.to_string(),
    })
}

fn index(tok: &str, line: usize) -> Result<usize, DataError> {
    tok.parse().map_err(|_| DataError::Format {
        line,
        message: format!("bad index `{tok}`"),
    })
}

pub fn parse_matrix_market(text: &str) -> Result<Value, DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or(DataError::Format {
        line: 1,
        message: "empty file".into(),
    })?;
    let head: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if head.len() < 5 || head[1] != "matrix" {
        return Err(DataError::Format {
            line: 1,
            message: "expected `%%MatrixMarket matrix <format> <field> <symmetry>`".into(),
        });
    }
    let coordinate = match head[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => {
            return Err(DataError::Format {
                line: 1,
                message: format!("unknown format `{other}`"),
            })
        }
    };
    let pattern = head[3] == "pattern";
    if !matches!(head[3].as_str(), "real" | "integer" | "double" | "pattern") {
        return Err(DataError::Format {
            line: 1,
            message: format!("unsupported field `{}`", head[3]),
        });
    }
    let sign = match head[4].as_str() {
        "general" => None,
        "symmetric" => Some(1.0),
        "skew-symmetric" => Some(-1.0),
        other => {
            return Err(DataError::Format {
                line: 1,
                message: format!("unsupported symmetry `{other}`"),
            })
        }
    };
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (size_line, size) = body.next().ok_or(DataError::Format {
        line: 2,
        message: "missing size line".into(),
    })?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| index(t, size_line))
        .collect::<Result<_, _>>()?;
    let (rows, cols) = match dims.as_slice() {
        [r, c, _] if coordinate => (*r, *c),
        [r, c] if !coordinate => (*r, *c),
        _ => {
            return Err(DataError::Format {
                line: size_line,
                message: "bad size line".into(),
            })
        }
    };
    let mut m = Value::zeros(rows, cols);
    let mut put = |i: usize, j: usize, v: f64, line: usize| -> Result<(), DataError> {
        if i >= rows || j >= cols {
            return Err(DataError::Format {
                line,
                message: format!("entry ({}, {}) outside {rows}x{cols}", i + 1, j + 1),
            });
        }
        m[(i, j)] = v;
        if let Some(s) = sign {
            if i != j {
                m[(j, i)] = s * v;
            }
        }
        Ok(())
    };
    if coordinate {
        for (line, l) in body {
            let toks: Vec<&str> = l.split_whitespace().collect();
            let want = if pattern { 2 } else { 3 };
            if toks.len() != want {
                return Err(DataError::Format {
                    line,
                    message: format!("expected {want} fields"),
                });
            }
            let i = index(toks[0], line)?;
            let j = index(toks[1], line)?;
            if i == 0 || j == 0 {
                return Err(DataError::Format {
                    line,
                    message: "indices are 1-based".into(),
                });
            }
            let v = if pattern { 1.0 } else { number(toks[2], line)? };
            put(i - 1, j - 1, v, line)?;
        }
    } else {
        let mut k = 0;
        for (line, l) in body {
            for tok in l.split_whitespace() {
                let v = number(tok, line)?;
                let (i, j) = if sign.is_some() {
                    // Lower triangle, column by column.
                    let mut j = 0;
                    let mut rem = k;
                    while j < cols && rem >= rows - j - usize::from(sign == Some(-1.0)) {
                        rem -= rows - j - usize::from(sign == Some(-1.0));
                        j += 1;
                    }
                    (j + rem + usize::from(sign == Some(-1.0)), j)
                } else {
                    (k % rows, k / rows)
                };
                put(i, j, v, line)?;
                k += 1;
            }
        }
    }
    Ok(m)
}

/// Read a LIBSVM-format data set into a dense `(X, y)`. `features` fixes
/// the column count; otherwise the largest index seen is used.
pub fn load_libsvm(path: impl AsRef<Path>, features: Option<usize>) -> Result<(Value, Value), DataError> {
    parse_libsvm(&read(path.as_ref())?, features)
}

pub fn parse_libsvm(text: &str, features: Option<usize>) -> Result<(Value, Value), DataError> {
    let mut labels = Vec::new();
    let mut entries = Vec::new();
    let mut width = 0;
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let l = l.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let mut toks = l.split_whitespace();
        let label = number(toks.next().expect("non-empty line"), line)?;
        let row = labels.len();
        labels.push(label);
        for t in toks {
            let (idx, val) = t.split_once(':').ok_or_else(|| DataError::Format {
                line,
                message: format!("expected index:value, found `{t}`"),
            })?;
            let idx = index(idx, line)?;
            if idx == 0 {
                return Err(DataError::Format {
                    line,
                    message: "feature indices are 1-based".into(),
                });
            }
            width = width.max(idx);
            entries.push((row, idx - 1, number(val, line)?));
        }
    }
    let cols = features.unwrap_or(width);
    if width > cols {
        return Err(DataError::Format {
            line: 0,
            message: format!("feature index {width} exceeds the declared {cols}"),
        });
    }
    let mut x = Value::zeros(labels.len(), cols);
    for (r, c, v) in entries {
        x[(r, c)] = v;
    }
    Ok((x, Value::from_column_slice(labels.len(), 1, &labels)))
}

/// Write a value as CSV with round-trip precision.
pub fn write_csv(path: impl AsRef<Path>, v: &Value) -> Result<(), DataError> {
    let path = path.as_ref();
    let io = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    f.write_all(to_csv(v).as_bytes()).map_err(io)?;
    f.flush().map_err(io)
}

pub fn to_csv(v: &Value) -> String {
    let mut out = String::new();
    for i in 0..v.nrows() {
        let row: Vec<String> = (0..v.ncols()).map(|j| format!("{}", v[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::matrix_value;

    #[test]
    fn csv_matrix() {
        assert_eq!(parse_data("1,2\n3,4\n").unwrap(), matrix_value(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn csv_scalar_and_vector() {
        assert_eq!(parse_data("5\n").unwrap(), matrix_value(1, 1, &[5.0]));
        assert_eq!(parse_data("1\n2\n3\n").unwrap().shape(), (3, 1));
        assert_eq!(parse_data(" 1, 2 ,3").unwrap().shape(), (1, 3));
    }

    #[test]
    fn csv_errors_carry_lines() {
        match parse_data("1,2\n3,x\n").unwrap_err() {
            DataError::NonNumericCell { line, column, .. } => assert_eq!((line, column), (2, 2)),
            e => panic!("{e:?}"),
        }
        match parse_data("1,2\n3\n").unwrap_err() {
            DataError::Format { line, .. } => assert_eq!(line, 2),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn matrix_market_coordinate() {
        let m = parse_data("%%MatrixMarket matrix coordinate real general\n% c\n3 3 2\n1 1 2.5\n3 2 -1\n").unwrap();
        assert_eq!(m.iter().filter(|v| **v == 0.0).count(), 7);
        assert_eq!((m[(0, 0)], m[(2, 1)]), (2.5, -1.0));
    }

    #[test]
    fn matrix_market_array_is_column_major() {
        let m = parse_data("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n").unwrap();
        assert_eq!(m, matrix_value(2, 2, &[1.0, 3.0, 2.0, 4.0]));
    }

    #[test]
    fn matrix_market_symmetric() {
        let m = parse_data("%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n").unwrap();
        assert_eq!(m, matrix_value(2, 2, &[1.0, 2.0, 2.0, 3.0]));
        let c = parse_data("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n2 1 5\n").unwrap();
        assert_eq!(c, matrix_value(2, 2, &[0.0, 5.0, 5.0, 0.0]));
    }

    #[test]
    fn libsvm() {
        let (x, y) = parse_libsvm("+1 1:0.5 3:2\n-1 2:1\n", None).unwrap();
        assert_eq!(x, matrix_value(2, 3, &[0.5, 0.0, 2.0, 0.0, 1.0, 0.0]));
        assert_eq!(y.as_slice(), [1.0, -1.0]);
    }

    #[test]
    fn csv_round_trip() {
        let v = matrix_value(2, 2, &[0.1, 1e-300, -3.0, 1.0 / 3.0]);
        assert_eq!(parse_csv(&to_csv(&v)).unwrap(), v);
    }
}
