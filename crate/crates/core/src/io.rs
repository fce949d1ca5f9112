//! CSV block files, labels, key=value run configs and versioned model JSON.
//!
//! A block file has a header row whose first column is the individual id and
//! one row per individual. A row whose value cells are all `NA` (or empty)
//! marks a missing block-row. Lines starting with `#` are comments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::LabelVector;
use crate::dataset::MultiBlockDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: u32 = 1;
const NA_TOKENS: [&str; 3] = ["", "NA", "NaN"];

/// One CSV block as read from disk, rows in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockFile<T> {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    pub values: Array2<T>,
    pub missing: BTreeSet<usize>,
}

fn reader_for(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Reads a block file. Rows mixing `NA` and numbers are rejected, since only
/// whole block-rows may be missing.
pub fn read_block<T: Scalar>(path: &Path) -> Result<BlockFile<T>> {
    let mut rdr = reader_for(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::Parse(format!(
            "{}: expected an id column and at least one variable",
            path.display()
        )));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let p = names.len();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut missing = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record.get(0).unwrap_or_default().to_owned();
        if !seen.insert(id.clone()) {
            return Err(Error::Parse(format!("{}:{line}: duplicate id {id:?}", path.display())));
        }
        let cells: Vec<&str> = record.iter().skip(1).collect();
        let na = cells.iter().filter(|c| NA_TOKENS.contains(c)).count();
        if na == p {
            missing.insert(i);
            data.extend(std::iter::repeat_n(T::nan(), p));
        } else if na > 0 {
            return Err(Error::UnsupportedPattern(format!(
                "{}:{line}: row {id:?} is partially missing",
                path.display()
            )));
        } else {
            for (j, cell) in cells.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Parse(format!(
                        "{}:{line}: column {:?} value {cell:?} is not a number",
                        path.display(),
                        names[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!(
                        "{}:{line}: column {:?} is not finite",
                        path.display(),
                        names[j]
                    )));
                }
                data.push(T::lit(v));
            }
        }
        ids.push(id);
    }
    let n = ids.len();
    let values = Array2::from_shape_vec((n, p), data).expect("rows have header width");
    Ok(BlockFile {
        ids,
        names,
        values,
        missing,
    })
}

fn block_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "block".into())
}

fn align<T: Scalar>(block: BlockFile<T>, order: &[String], path: &Path) -> Result<BlockFile<T>> {
    if block.ids == order {
        return Ok(block);
    }
    let index: HashMap<&str, usize> = block.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(order.len());
    for id in order {
        match index.get(id.as_str()) {
            Some(&i) => rows.push(i),
            None => {
                return Err(Error::Alignment(format!("{}: id {id:?} not found", path.display())));
            }
        }
    }
    if block.ids.len() != order.len() {
        return Err(Error::Alignment(format!(
            "{}: {} rows, expected {}",
            path.display(),
            block.ids.len(),
            order.len()
        )));
    }
    let values = block.values.select(ndarray::Axis(0), &rows);
    let missing = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| block.missing.contains(r))
        .map(|(i, _)| i)
        .collect();
    Ok(BlockFile {
        ids: order.to_vec(),
        names: block.names,
        values,
        missing,
    })
}

/// Loads covariate blocks and an optional fully observed response, aligning
/// every file to the row order of the first block.
pub fn load_multiblock<T: Scalar>(blocks: &[PathBuf], response: Option<&Path>) -> Result<MultiBlockDataset<T>> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidParameter("at least one block file is required".into()))?;
    let head = read_block::<T>(first)?;
    let order = head.ids.clone();
    let mut files = vec![head];
    for path in &blocks[1..] {
        files.push(align(read_block(path)?, &order, path)?);
    }
    let (response, response_names) = match response {
        Some(path) => {
            let y = align(read_block::<T>(path)?, &order, path)?;
            if !y.missing.is_empty() {
                return Err(Error::Precondition(format!(
                    "{}: the response block cannot contain missing values",
                    path.display()
                )));
            }
            (Some(y.values), y.names)
        }
        None => (None, Vec::new()),
    };
    let data = MultiBlockDataset {
        ids: order,
        block_names: blocks.iter().map(|p| block_name(p)).collect(),
        variable_names: files.iter().map(|f| f.names.clone()).collect(),
        missing_rows: files.iter().map(|f| f.missing.clone()).collect(),
        blocks: files.into_iter().map(|f| f.values).collect(),
        response,
        response_names,
    };
    data.validate()?;
    Ok(data)
}

/// Reads an `id,label` file aligned to `ids`.
pub fn load_labels(path: &Path, ids: &[String]) -> Result<LabelVector> {
    let mut rdr = reader_for(path)?;
    let mut by_id = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() < 2 {
            return Err(Error::Parse(format!("{}: expected id,label rows", path.display())));
        }
        by_id.insert(record[0].to_owned(), record[1].to_owned());
    }
    let labels = ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Alignment(format!("{}: no label for id {id:?}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    LabelVector::new(labels)
}

/// Tool, version, seed and configuration digest written as a leading comment.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_hash: String,
}

impl Provenance {
    pub fn comment(&self) -> String {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        format!(
            "# {} {} seed={} config={}",
            self.tool, self.version, seed, self.config_hash
        )
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Formats a block as CSV text; rows listed in `missing` are written as `NA`.
pub fn block_csv<T: Scalar>(
    ids: &[String],
    names: &[String],
    values: &Array2<T>,
    missing: &BTreeSet<usize>,
    provenance: Option<&Provenance>,
) -> Result<String> {
    if ids.len() != values.nrows() || names.len() != values.ncols() {
        return Err(Error::Shape(format!(
            "{} ids and {} names for a {:?} block",
            ids.len(),
            names.len(),
            values.dim()
        )));
    }
    let mut out = String::new();
    if let Some(p) = provenance {
        out.push_str(&p.comment());
        out.push('\n');
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("id").chain(names.iter().map(String::as_str)).collect();
    let io_err = |e: csv::Error| Error::Parse(e.to_string());
    wtr.write_record(&header).map_err(io_err)?;
    for (i, row) in values.outer_iter().enumerate() {
        let mut record = vec![ids[i].clone()];
        if missing.contains(&i) {
            record.extend(std::iter::repeat_n("NA".to_string(), names.len()));
        } else {
            record.extend(row.iter().map(|v| format!("{:.16e}", v.as_f64())));
        }
        wtr.write_record(&record).map_err(io_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

/// Writes `{block_name}.csv` per block and `response.csv` into `dir`;
/// returns the written paths.
pub fn save_multiblock<T: Scalar>(
    dir: &Path,
    data: &MultiBlockDataset<T>,
    provenance: Option<&Provenance>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in 0..data.n_blocks() {
        let path = dir.join(format!("{}.csv", data.block_names[t]));
        let text = block_csv(
            &data.ids,
            &data.variable_names[t],
            &data.blocks[t],
            &data.missing_rows[t],
            provenance,
        )?;
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    if let Some(y) = &data.response {
        let path = dir.join("response.csv");
        let text = block_csv(&data.ids, &data.response_names, y, &BTreeSet::new(), provenance)?;
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    schema_version: u32,
    kind: String,
    model: M,
}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
}

/// Serializes `model` with a schema version and a kind tag.
pub fn save_model<M: Serialize>(path: &Path, kind: &str, model: &M) -> Result<()> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_owned(),
        model,
    };
    write_atomic(path, serde_json::to_string_pretty(&env)?.as_bytes())
}

/// Reads the kind tag of a model file after checking its version.
pub fn model_kind(path: &Path) -> Result<String> {
    let header: Header = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_version(header.schema_version)?;
    Ok(header.kind)
}

fn check_version(found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(())
}

/// Loads a model written by [`save_model`], checking version and kind.
pub fn load_model<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<M> {
    let text = fs::read_to_string(path)?;
    let header: Header = serde_json::from_str(&text)?;
    check_version(header.schema_version)?;
    if header.kind != kind {
        return Err(Error::Parse(format!(
            "{}: holds a {:?} model, expected {kind:?}",
            path.display(),
            header.kind
        )));
    }
    let env: Envelope<M> = serde_json::from_str(&text)?;
    Ok(env.model)
}

/// Parses `key = value` lines; blank lines and `#` comments are ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", no + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse(format!("config line {}: empty key", no + 1)));
        }
        out.insert(key.to_owned(), value.trim().to_owned());
    }
    Ok(out)
}

/// Parses `start:stop:count` into `count` evenly spaced values (both ends included).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Parse(format!("grid {spec:?}: expected start:stop:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let k: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if k == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    if k == 1 {
        return Ok(vec![a]);
    }
    Ok((0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect())
}
