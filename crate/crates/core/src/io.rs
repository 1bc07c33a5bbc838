//! CSV tables and the plain-text tree format.
//!
//! Numbers are written with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64` exactly; infinities are written as `inf` and read
//! back by the standard float parser.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::hjm::BondSurface;
use crate::linalg::Mat;
use crate::rkhs::{Kernel, Tolerances};
use crate::scalar::Real;
use crate::simulation::PathEnsemble;
use crate::stoch_kernel::{IncrementFamily, StochasticAggregateKernel};
use crate::tree::{NodeSpec, TreeMarket};

/// Lossless text form of a scalar.
pub fn fmt_real<T: Real>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

fn parse_real<T: Real>(s: &str) -> Result<T> {
    s.trim().parse::<f64>().map(T::lit).map_err(|_| Error::Parse(format!("not a number: {s:?}")))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Writes a header and rows of preformatted cells.
pub fn write_table<W: Write>(w: W, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// Reads a header and the remaining records as strings.
pub fn read_table<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    let header = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Kernel as a square table whose header holds the labels.
pub fn write_kernel_csv<T: Real, W: Write>(w: W, kernel: &Kernel<T>) -> Result<()> {
    let n = kernel.dim();
    let rows = (0..n).map(|i| (0..n).map(|j| fmt_real(kernel.entries()[(i, j)])).collect());
    write_table(w, kernel.labels(), rows)
}

/// Reads and validates a kernel written by [`write_kernel_csv`].
pub fn read_kernel_csv<T: Real, R: Read>(r: R, tol: &Tolerances<T>) -> Result<Kernel<T>> {
    let (labels, rows) = read_table(r)?;
    let n = labels.len();
    if rows.len() != n || rows.iter().any(|row| row.len() != n) {
        return Err(Error::Parse(format!("kernel table must be {n} × {n}")));
    }
    let vals: Vec<Vec<T>> = rows.iter().map(|row| row.iter().map(|c| parse_real(c)).collect::<Result<_>>()).collect::<Result<_>>()?;
    Kernel::validate(Mat::from_rows(&vals)?, labels, tol)
}

/// Reads a single row of values named by the header (a vector `f` on the
/// kernel's index set).
pub fn read_vector_csv<T: Real, R: Read>(r: R) -> Result<(Vec<String>, Vec<T>)> {
    let (labels, rows) = read_table(r)?;
    if rows.len() != 1 || rows[0].len() != labels.len() {
        return Err(Error::Parse("vector table needs exactly one row".into()));
    }
    Ok((labels, rows[0].iter().map(|c| parse_real(c)).collect::<Result<_>>()?))
}

fn step_prefix<T: Real>(grid: &TimeGrid<T>, k: usize) -> Vec<String> {
    vec![k.to_string(), fmt_real(grid.times()[k]), fmt_real(grid.times()[k + 1])]
}

/// `step, t_start, t_end, <labels…>` with one row of increments per step.
pub fn write_family_csv<T: Real, W: Write>(w: W, grid: &TimeGrid<T>, family: &IncrementFamily<T>) -> Result<()> {
    if family.steps() != grid.steps() {
        return Err(Error::Dimension("family steps differ from the grid".into()));
    }
    let mut header: Vec<String> = ["step", "t_start", "t_end"].iter().map(|s| s.to_string()).collect();
    header.extend(family.labels().iter().cloned());
    let rows = (0..family.steps()).map(|k| {
        let mut row = step_prefix(grid, k);
        row.extend(family.step(k).iter().map(|&x| fmt_real(x)));
        row
    });
    write_table(w, &header, rows)
}

/// Reads a family together with its grid.
pub fn read_family_csv<T: Real, R: Read>(r: R) -> Result<(TimeGrid<T>, IncrementFamily<T>)> {
    let (header, rows) = read_table(r)?;
    if header.len() < 4 || header[..3] != ["step", "t_start", "t_end"] {
        return Err(Error::Parse("family table needs step, t_start, t_end and label columns".into()));
    }
    if rows.is_empty() {
        return Err(Error::Parse("family table has no steps".into()));
    }
    let mut times = Vec::with_capacity(rows.len() + 1);
    let mut inc = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Parse(format!("row {k} has {} cells, expected {}", row.len(), header.len())));
        }
        let (t0, t1): (T, T) = (parse_real(&row[1])?, parse_real(&row[2])?);
        if k == 0 {
            times.push(t0);
        } else if t0 != times[k] {
            return Err(Error::Parse(format!("row {k} does not start where row {} ends", k - 1)));
        }
        times.push(t1);
        inc.push(row[3..].iter().map(|c| parse_real(c)).collect::<Result<Vec<T>>>()?);
    }
    Ok((TimeGrid::new(times)?, IncrementFamily::new(header[3..].to_vec(), inc)?))
}

/// Kernel increments, one row per step with the upper triangle
/// `c[i,j]`, `i ≤ j`, in row-major order.
pub fn write_kernel_increments_csv<T: Real, W: Write>(w: W, sak: &StochasticAggregateKernel<T>) -> Result<()> {
    let n = sak.dim();
    let labels = sak.labels();
    let mut header: Vec<String> = ["step", "t_start", "t_end"].iter().map(|s| s.to_string()).collect();
    for i in 0..n {
        for j in i..n {
            header.push(format!("c[{},{}]", labels[i], labels[j]));
        }
    }
    let rows = (0..sak.steps()).map(|k| {
        let mut row = step_prefix(sak.grid(), k);
        let e = sak.increment(k).entries();
        for i in 0..n {
            for j in i..n {
                row.push(fmt_real(e[(i, j)]));
            }
        }
        row
    });
    write_table(w, &header, rows)
}

/// Long format `path, step, t, asset, P, A, M`. Path numbers are stream
/// indices, so chunks of one ensemble concatenate to the whole.
pub fn write_ensemble_csv<T: Real, W: Write>(w: W, ensemble: &PathEnsemble<T>) -> Result<()> {
    let header: Vec<String> = ["path", "step", "t", "asset", "P", "A", "M"].iter().map(|s| s.to_string()).collect();
    let times = ensemble.grid().times();
    let rows = ensemble.paths().iter().enumerate().flat_map(|(i, path)| {
        let id = (ensemble.first_index() + i).to_string();
        (0..times.len()).flat_map(move |k| {
            let id = id.clone();
            ensemble.labels().iter().enumerate().map(move |(j, label)| {
                vec![
                    id.clone(),
                    k.to_string(),
                    fmt_real(times[k]),
                    label.clone(),
                    fmt_real(path.p[k][j]),
                    fmt_real(path.a[k][j]),
                    fmt_real(path.m[k][j]),
                ]
            })
        })
    });
    write_table(w, &header, rows)
}

/// Grid of values with a leading key column: rows are keyed by `keys`,
/// columns named by `columns`.
pub fn write_grid_csv<T: Real, W: Write>(w: W, key: &str, keys: &[T], columns: &[String], values: &[Vec<T>]) -> Result<()> {
    if keys.len() != values.len() || values.iter().any(|r| r.len() != columns.len()) {
        return Err(Error::Dimension("grid values are not keys × columns".into()));
    }
    let mut header = vec![key.to_string()];
    header.extend(columns.iter().cloned());
    let rows = keys.iter().zip(values).map(|(&k, row)| {
        let mut out = vec![fmt_real(k)];
        out.extend(row.iter().map(|&x| fmt_real(x)));
        out
    });
    write_table(w, &header, rows)
}

/// Reads a grid written by [`write_grid_csv`]: `(keys, column names,
/// values)`.
pub fn read_grid_csv<T: Real, R: Read>(r: R) -> Result<(Vec<T>, Vec<String>, Vec<Vec<T>>)> {
    let (header, rows) = read_table(r)?;
    if header.len() < 2 {
        return Err(Error::Parse("grid table needs a key column and at least one value column".into()));
    }
    let mut keys = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Parse(format!("grid row {i} has {} cells, expected {}", row.len(), header.len())));
        }
        keys.push(parse_real(&row[0])?);
        values.push(row[1..].iter().map(|c| parse_real(c)).collect::<Result<Vec<T>>>()?);
    }
    Ok((keys, header[1..].to_vec(), values))
}

/// Bond surface of one path as a `t × maturity` grid of prices.
pub fn write_surface_csv<T: Real, W: Write>(w: W, times: &[T], maturities: &[T], surface: &BondSurface<T>) -> Result<()> {
    let cols: Vec<String> = maturities.iter().map(|&m| fmt_real(m)).collect();
    write_grid_csv(w, "t", times, &cols, &surface.p)
}

/// Parses the tree format: one node per line as
/// `id parent prob price…`, root parent `-`, `#` starts a comment.
pub fn parse_tree<T: Real>(text: &str) -> Result<TreeMarket<T>> {
    let mut specs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(Error::Parse(format!("tree line {}: expected id, parent, prob and at least one price", ln + 1)));
        }
        let parent = (fields[1] != "-").then(|| fields[1].to_string());
        let prob = parse_real(fields[2]).map_err(|e| Error::Parse(format!("tree line {}: {e}", ln + 1)))?;
        let prices = fields[3..].iter().map(|c| parse_real(c)).collect::<Result<Vec<T>>>()?;
        specs.push(NodeSpec { id: fields[0].to_string(), parent, prob, prices });
    }
    TreeMarket::from_nodes(specs)
}

/// Writes a tree in the format read by [`parse_tree`].
pub fn write_tree<T: Real>(tree: &TreeMarket<T>) -> String {
    let mut out = String::from("# id parent prob prices\n");
    for node in tree.nodes() {
        let parent = node.parent.map_or("-".to_string(), |p| tree.node(p).id.clone());
        let prices: Vec<String> = node.prices.iter().map(|&p| fmt_real(p)).collect();
        out.push_str(&format!("{} {} {} {}\n", node.id, parent, fmt_real(node.prob), prices.join(" ")));
    }
    out
}

/// Per-node values as `id value` lines; unlisted nodes get zero.
pub fn parse_node_values<T: Real>(text: &str, tree: &TreeMarket<T>) -> Result<Vec<T>> {
    let mut values = vec![T::zero(); tree.len()];
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse(format!("value line {}: expected `id value`", ln + 1)));
        }
        let n = tree.index_of(fields[0]).ok_or_else(|| Error::Parse(format!("value line {}: unknown node {}", ln + 1, fields[0])))?;
        values[n] = parse_real(fields[1])?;
    }
    Ok(values)
}
