use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use netaipw::chainsim::{Covariates, Dataset};
use netaipw::netgraph::{parse_edge_list, Network};
use serde::Serialize;

use crate::error::{io_error, CliError, CliResult};

/// Node table read from CSV, rows in file order.
#[derive(Debug, Clone)]
pub struct NodeTable {
    pub ids: Vec<String>,
    pub covariate_names: Vec<String>,
    pub data: Dataset,
}

impl NodeTable {
    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }
}

fn input_error(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Input {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn binary(path: &Path, column: &str, row: usize, raw: &str) -> CliResult<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(input_error(
            path,
            format!("row {row}: column '{column}' must be 0 or 1, found '{other}'"),
        )),
    }
}

/// Reads `id,y,a,<covariates...>`. With `covariates` given, exactly those
/// columns are used, in that order; otherwise every remaining column is.
pub fn read_nodes(path: &Path, covariates: Option<&[String]>) -> CliResult<NodeTable> {
    let file = File::open(path).map_err(io_error(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| input_error(path, format!("missing column '{name}'")))
    };
    let (id_col, y_col, a_col) = (column("id")?, column("y")?, column("a")?);
    let covariate_names: Vec<String> = match covariates {
        Some(names) => names.to_vec(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(c, _)| ![id_col, y_col, a_col].contains(c))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let cov_cols: Vec<usize> = covariate_names.iter().map(|name| column(name)).collect::<CliResult<_>>()?;

    let (mut ids, mut y, mut a, mut values) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut seen = HashMap::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 2;
        let id = record[id_col].to_string();
        if let Some(first) = seen.insert(id.clone(), row) {
            return Err(input_error(path, format!("row {row}: id '{id}' already used on row {first}")));
        }
        ids.push(id);
        y.push(binary(path, "y", row, &record[y_col])?);
        a.push(binary(path, "a", row, &record[a_col])?);
        for (&c, name) in cov_cols.iter().zip(&covariate_names) {
            let v: f64 = record[c].trim().parse().map_err(|_| {
                input_error(path, format!("row {row}: column '{name}' is not a number: '{}'", &record[c]))
            })?;
            values.push(v);
        }
    }
    if ids.is_empty() {
        return Err(input_error(path, "no rows"));
    }
    let covariates = Covariates::new(covariate_names.len(), values)?;
    Ok(NodeTable {
        ids,
        covariate_names,
        data: Dataset::new(y, a, covariates)?,
    })
}

/// Edge list whose endpoints are resolved against the node table's ids.
pub fn read_network(path: &Path, nodes: &NodeTable) -> CliResult<Network> {
    let file = File::open(path).map_err(io_error(path))?;
    let pairs = parse_edge_list(BufReader::new(file)).map_err(|e| input_error(path, e.to_string()))?;
    let index = nodes.index();
    let resolve = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| input_error(path, format!("node id '{id}' does not appear in the node table")))
    };
    let edges: Vec<(usize, usize)> = pairs
        .iter()
        .map(|(u, v)| Ok((resolve(u)?, resolve(v)?)))
        .collect::<CliResult<_>>()?;
    Network::new(nodes.ids.len(), edges).map_err(|e| input_error(path, e.to_string()))
}

pub fn write_nodes(path: &Path, data: &Dataset) -> CliResult<()> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["id".to_string(), "y".into(), "a".into()];
    header.extend((1..=data.covariates.width()).map(|c| format!("l{c}")));
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row = vec![i.to_string(), data.y[i].to_string(), data.a[i].to_string()];
        row.extend(data.covariates.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_error(path))
}

pub fn write_edges(path: &Path, net: &Network) -> CliResult<()> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = BufWriter::new(file);
    net.write_edge_list(&mut w).map_err(io_error(path))?;
    w.flush().map_err(io_error(path))
}

/// Pretty JSON with a trailing newline; key order follows the types.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_error(path))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_error(path))
}
