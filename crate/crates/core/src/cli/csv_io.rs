use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Group, GroupedDataset};
use crate::error::{Error, Result};

/// Which CSV columns hold the group id, response and covariates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub group_col: String,
    pub y_col: String,
    pub x_cols: Vec<String>,
    pub w_cols: Vec<String>,
    pub z_cols: Vec<String>,
}

impl CsvSchema {
    /// Column names used by [`write_dataset_csv`]: `group, y, x1.., w1.., z1..`.
    pub fn default_names(d: usize, v: usize, q: usize) -> Self {
        let names = |p: &str, n: usize| (1..=n).map(|i| format!("{p}{i}")).collect();
        CsvSchema {
            group_col: "group".into(),
            y_col: "y".into(),
            x_cols: names("x", d),
            w_cols: names("w", v),
            z_cols: names("z", q),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.x_cols.is_empty() || self.w_cols.is_empty() {
            return Err(Error::InvalidConfig("at least one x column and one w column are required".into()));
        }
        let mut seen = HashSet::new();
        let all = [&self.group_col, &self.y_col]
            .into_iter()
            .chain(&self.x_cols)
            .chain(&self.w_cols)
            .chain(&self.z_cols);
        for name in all {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidConfig(format!("column '{name}' is named more than once in the schema")));
            }
        }
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<GroupedDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

struct Accum {
    id: String,
    y: Vec<f64>,
    x: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
}

/// Reads grouped data; groups appear in order of first appearance and rows
/// keep file order within each group.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<GroupedDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &String| index.get(name.as_str()).copied().ok_or_else(|| Error::UnknownColumn(name.clone()));
    let cols = |names: &[String]| names.iter().map(col).collect::<Result<Vec<_>>>();
    let g_idx = col(&schema.group_col)?;
    let y_idx = col(&schema.y_col)?;
    let x_idx = cols(&schema.x_cols)?;
    let w_idx = cols(&schema.w_cols)?;
    let z_idx = cols(&schema.z_cols)?;

    let mut groups: Vec<Accum> = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            let raw = &record[i];
            raw.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
                line,
                column: headers[i].to_string(),
                value: raw.to_string(),
            })
        };
        let id = record[g_idx].to_string();
        let slot = *lookup.entry(id.clone()).or_insert_with(|| {
            groups.push(Accum {
                id,
                y: Vec::new(),
                x: Vec::new(),
                w: Vec::new(),
                z: Vec::new(),
            });
            groups.len() - 1
        });
        let acc = &mut groups[slot];
        acc.y.push(num(y_idx)?);
        for &i in &x_idx {
            acc.x.push(num(i)?);
        }
        for &i in &w_idx {
            acc.w.push(num(i)?);
        }
        for &i in &z_idx {
            acc.z.push(num(i)?);
        }
    }

    let (d, v, q) = (x_idx.len(), w_idx.len(), z_idx.len());
    let groups = groups
        .into_iter()
        .map(|a| {
            let n = a.y.len();
            Group::new(
                a.id,
                DVector::from_vec(a.y),
                DMatrix::from_row_slice(n, d, &a.x),
                DMatrix::from_row_slice(n, v, &a.w),
                DMatrix::from_row_slice(n, q, &a.z),
            )
        })
        .collect();
    GroupedDataset::new(groups)
}

/// Writes one row per observation with the [`CsvSchema::default_names`]
/// header. Floats use the shortest representation that round-trips.
pub fn write_dataset_csv<W: Write>(dataset: &GroupedDataset, out: W) -> Result<CsvSchema> {
    let schema = CsvSchema::default_names(dataset.d(), dataset.v(), dataset.q());
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![schema.group_col.clone(), schema.y_col.clone()];
    header.extend(schema.x_cols.iter().chain(&schema.w_cols).chain(&schema.z_cols).cloned());
    wtr.write_record(&header).map_err(csv_error)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for g in dataset.groups() {
        for r in 0..g.n_obs() {
            row.clear();
            row.push(g.group_id.clone());
            row.push(g.y[r].to_string());
            for m in [&g.x, &g.w, &g.z] {
                row.extend(m.row(r).iter().map(f64::to_string));
            }
            wtr.write_record(&row).map_err(csv_error)?;
        }
    }
    wtr.flush()?;
    Ok(schema)
}
