//! Plain-text formats for graphs, kernels, measures and fields.
//!
//! * Edge lists: one `x y w` triple per line, node ids are arbitrary strings mapped to
//!   indices in order of first appearance.
//! * Matrices: a header `n n nnz` followed by `row col value` triples (0-based), or a
//!   header `n n` followed by `n` rows of `n` values.
//! * Measures and fields: one `node value` pair per line.
//! * Point clouds: one point per line, coordinates separated by whitespace.
//!
//! `#` starts a comment anywhere on a line; blank lines are ignored.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::field::{Field, Measure};
use crate::sparse::CsrMatrix;

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let body = line.split('#').next().unwrap_or("");
        let toks: Vec<&str> = body.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn number(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a number, found {tok:?}"),
    })
}

fn index(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a node index, found {tok:?}"),
    })
}

/// Parsed edge list with dense node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub labels: Vec<String>,
    pub edges: Vec<(usize, usize, f64)>,
}

pub fn parse_edge_list(text: &str) -> Result<EdgeList> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    let mut id = |s: &str| {
        *ids.entry(s.to_string()).or_insert_with(|| {
            labels.push(s.to_string());
            labels.len() - 1
        })
    };
    for (line, toks) in content_lines(text) {
        if toks.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected `x y w`, found {} fields", toks.len()),
            });
        }
        let w = number(toks[2], line)?;
        let (x, y) = (id(toks[0]), id(toks[1]));
        edges.push((x, y, w));
    }
    if labels.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(EdgeList { labels, edges })
}

pub fn parse_matrix(text: &str) -> Result<CsrMatrix> {
    let mut lines = content_lines(text);
    let Some((hline, header)) = lines.next() else {
        return Err(Error::Parse {
            line: 1,
            message: "missing header".into(),
        });
    };
    let dims: Vec<usize> = header
        .iter()
        .map(|t| index(t, hline))
        .collect::<Result<_>>()?;
    match dims.as_slice() {
        [n, m, nnz] if n == m => {
            let mut triplets = Vec::with_capacity(*nnz);
            for (line, toks) in lines {
                if toks.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        message: "expected `row col value`".into(),
                    });
                }
                triplets.push((
                    index(toks[0], line)?,
                    index(toks[1], line)?,
                    number(toks[2], line)?,
                ));
            }
            if triplets.len() != *nnz {
                return Err(Error::Parse {
                    line: hline,
                    message: format!("header announces {nnz} entries, found {}", triplets.len()),
                });
            }
            CsrMatrix::from_triplets(*n, &triplets)
        }
        [n, m] if n == m => {
            let mut triplets = Vec::new();
            let mut row = 0;
            for (line, toks) in lines {
                if toks.len() != *n || row >= *n {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {n} rows of {n} values"),
                    });
                }
                for (j, t) in toks.iter().enumerate() {
                    triplets.push((row, j, number(t, line)?));
                }
                row += 1;
            }
            if row != *n {
                return Err(Error::Parse {
                    line: hline,
                    message: format!("expected {n} rows, found {row}"),
                });
            }
            CsrMatrix::from_triplets(*n, &triplets)
        }
        _ => Err(Error::Parse {
            line: hline,
            message: "header must be `n n nnz` or `n n`".into(),
        }),
    }
}

/// Coordinate-format text for a matrix, readable by [`parse_matrix`].
pub fn write_matrix(m: &CsrMatrix) -> String {
    let mut out = format!("{} {} {}\n", m.n(), m.n(), m.nnz());
    for (i, j, v) in m.triplets() {
        let _ = writeln!(out, "{i} {j} {v:?}");
    }
    out
}

fn node_values(text: &str, n: usize, labels: Option<&[String]>) -> Result<Vec<f64>> {
    let lookup: Option<HashMap<&str, usize>> =
        labels.map(|l| l.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect());
    let mut values = vec![None; n];
    for (line, toks) in content_lines(text) {
        if toks.len() != 2 {
            return Err(Error::Parse {
                line,
                message: "expected `node value`".into(),
            });
        }
        let i = match &lookup {
            Some(map) => *map.get(toks[0]).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown node {:?}", toks[0]),
            })?,
            None => index(toks[0], line)?,
        };
        if i >= n {
            return Err(Error::Parse {
                line,
                message: format!("node {i} outside 0..{n}"),
            });
        }
        if values[i].replace(number(toks[1], line)?).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("node {:?} listed twice", toks[0]),
            });
        }
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::invalid(format!("no value given for node {i}"))))
        .collect()
}

/// Reads `node value` pairs covering all `n` nodes. With `labels`, node names are
/// looked up there; otherwise they must be indices.
pub fn parse_field(text: &str, n: usize, labels: Option<&[String]>) -> Result<Field> {
    Ok(Field::new(node_values(text, n, labels)?))
}

pub fn parse_measure(text: &str, n: usize, labels: Option<&[String]>) -> Result<Measure> {
    Measure::new(node_values(text, n, labels)?)
}

/// `node value` lines with shortest round-trip formatting.
pub fn write_field(f: &Field, labels: Option<&[String]>) -> String {
    let mut out = String::with_capacity(24 * f.len());
    for (i, v) in f.iter().enumerate() {
        match labels {
            Some(l) => {
                let _ = writeln!(out, "{} {v:?}", l[i]);
            }
            None => {
                let _ = writeln!(out, "{i} {v:?}");
            }
        }
    }
    out
}

pub fn write_measure(m: &Measure, labels: Option<&[String]>) -> String {
    write_field(&Field::new(m.weights().to_vec()), labels)
}

pub fn parse_point_cloud(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut pts = Vec::new();
    for (line, toks) in content_lines(text) {
        let p: Vec<f64> = toks
            .iter()
            .map(|t| number(t, line))
            .collect::<Result<_>>()?;
        if let Some(first) = pts.first().map(Vec::len) {
            if p.len() != first {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {first} coordinates, found {}", p.len()),
                });
            }
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(pts)
}
