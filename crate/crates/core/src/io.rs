//! Plain-text tables for kernels, marginals and files on disk.
//!
//! Every table is tab-separated and starts with a header row. Grid tables
//! carry the node coordinates in their header row and first column; values
//! are printed with the shortest representation that round-trips.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::bp::SkillPosterior;
use crate::chebkit::ChebGrid;
use crate::error::{Error, Result};
use crate::model::{Kernel, WinMatrix};

/// Largest gap tolerated between stored and recomputed node coordinates.
const NODE_TOLERANCE: f64 = 1e-12;

/// `b(x, y)` at node pairs: header `x\y` followed by the `y` nodes, then
/// one row per `x` node.
pub fn kernel_table(kernel: &Kernel) -> String {
    grid_table(kernel.grid(), kernel.values())
}

/// Same layout as [`kernel_table`] for the log-odds `f(x, y)`.
pub fn log_odds_table(kernel: &Kernel) -> String {
    grid_table(kernel.grid(), kernel.log_odds())
}

fn grid_table(grid: &ChebGrid, values: &DMatrix<f64>) -> String {
    let x = grid.nodes();
    let mut out = String::from("x\\y");
    for y in x {
        let _ = write!(out, "\t{y}");
    }
    out.push('\n');
    for (k, xk) in x.iter().enumerate() {
        let _ = write!(out, "{xk}");
        for m in 0..x.len() {
            let _ = write!(out, "\t{}", values[(k, m)]);
        }
        out.push('\n');
    }
    out
}

/// Reads a table written by [`kernel_table`]. The grid order is the number
/// of columns and the coordinates must be that grid's nodes.
pub fn parse_kernel_table(text: &str) -> Result<Kernel> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty kernel table".into(),
    })?;
    let parse = |line: usize, s: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|e| Error::Parse {
            line: line + 1,
            message: format!("bad number {s:?}: {e}"),
        })
    };
    let cols: Vec<&str> = header.split('\t').collect();
    let ys = cols[1..]
        .iter()
        .map(|c| parse(hline, c))
        .collect::<Result<Vec<_>>>()?;
    let grid = ChebGrid::new(ys.len())?;
    check_nodes(&grid, &ys, hline)?;

    let l = grid.order();
    let mut values = DMatrix::zeros(l, l);
    let mut xs = Vec::with_capacity(l);
    let mut rows = 0;
    for (idx, line) in lines {
        if rows == l {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("more than {l} rows"),
            });
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != l + 1 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected {} fields, found {}", l + 1, fields.len()),
            });
        }
        xs.push(parse(idx, fields[0])?);
        for m in 0..l {
            values[(rows, m)] = parse(idx, fields[m + 1])?;
        }
        rows += 1;
    }
    if rows != l {
        return Err(Error::LengthMismatch {
            expected: l,
            found: rows,
        });
    }
    check_nodes(&grid, &xs, hline)?;
    Kernel::from_node_values(grid, &values)
}

fn check_nodes(grid: &ChebGrid, found: &[f64], line: usize) -> Result<()> {
    for (a, b) in grid.nodes().iter().zip(found) {
        if (a - b).abs() > NODE_TOLERANCE {
            return Err(Error::Parse {
                line: line + 1,
                message: format!("coordinate {b} is not a node of the order-{} grid", grid.order()),
            });
        }
    }
    Ok(())
}

/// Posterior density of every player at the nodes: header `id` followed by
/// the nodes, one row per player.
pub fn marginals_table(posterior: &SkillPosterior, w: &WinMatrix) -> String {
    let mut out = String::from("id");
    for x in posterior.grid().nodes() {
        let _ = write!(out, "\t{x}");
    }
    out.push('\n');
    for i in 0..posterior.n() {
        out.push_str(w.label(i));
        for v in &posterior.marginal(i).values {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a match file from disk, tagging errors with the path.
pub fn read_matches(path: &Path) -> Result<WinMatrix> {
    let text = read_to_string(path)?;
    WinMatrix::parse(text.as_bytes()).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::bp::{infer, BpOptions};

    #[test]
    fn kernel_table_round_trips() {
        for l in [1, 2, 7, 32] {
            let grid = ChebGrid::new(l).unwrap();
            let k = Kernel::from_fn(grid, |x, y| 1.0 / (1.0 + (-(3.0 + x) * (x - y)).exp()));
            let text = kernel_table(&k);
            assert_eq!(text.lines().count(), l + 1);
            assert!(text.starts_with("x\\y\t"));
            let back = parse_kernel_table(&text).unwrap();
            assert!(back.max_abs_diff(&k) < 1e-12);
        }
    }

    #[test]
    fn kernel_table_rejects_damage() {
        let k = Kernel::logistic(ChebGrid::new(4).unwrap(), 5.0);
        let text = kernel_table(&k);
        let short: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_kernel_table(&short), Err(Error::LengthMismatch { .. })));
        let bad = text.replacen("\t0.5", "\tzz", 1);
        assert!(matches!(parse_kernel_table(&bad), Err(Error::Parse { .. })));
        let moved = text.replacen("x\\y\t", "x\\y\t0.3\t", 1);
        assert!(parse_kernel_table(&moved).is_err());
        assert!(parse_kernel_table("").is_err());
    }

    #[test]
    fn marginal_rows_integrate_to_one() {
        let grid = ChebGrid::new(16).unwrap();
        let k = Kernel::logistic(grid.clone(), 5.0);
        let mut w = WinMatrix::with_numbered_players(3);
        w.add(0, 1, 2);
        let post = infer(&w, &k, &BpOptions::default()).unwrap();
        let text = marginals_table(&post, &w);
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 4);
        for row in &rows[1..] {
            let v: Vec<f64> = row.split('\t').skip(1).map(|s| s.parse().unwrap()).collect();
            assert_abs_diff_eq!(grid.integrate(&v).unwrap(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn file_helpers_report_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/m.csv");
        write_file(&p, "a,b\nb,c,2\n").unwrap();
        assert_eq!(read_matches(&p).unwrap().total(), 3);
        write_file(&p, "a,b,x\n").unwrap();
        let msg = read_matches(&p).unwrap_err().to_string();
        assert!(msg.contains("line 1") && msg.contains("m.csv"), "{msg}");
        let missing = read_to_string(&dir.path().join("none")).unwrap_err();
        assert_eq!(missing.kind(), "io");
    }
}
