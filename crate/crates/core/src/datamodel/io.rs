//! On-disk dataset format.
//!
//! A dataset directory holds:
//!
//! ```text
//! manifest.json             counts, biomarker names, which blocks exist
//! labels.csv                subject_id,label[,tag]
//! scalars.csv               subject_id,<name 0>,<name 1>,...      (optional)
//! regions/region_<i>.csv    subject_id,v0,v1,...                  (optional)
//! ```
//!
//! Floats are written with the shortest representation that parses back to
//! the identical value, and every file is written atomically (temp file then
//! rename), so saving the same data twice yields byte-identical files.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BiomarkerDataset, DataError, GroundTruth, SubjectLabel};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    subjects: usize,
    biomarkers: usize,
    biomarker_names: Vec<String>,
    has_scalars: bool,
    region_dims: Option<Vec<usize>>,
}

/// Writes `contents` to `path` via a temporary sibling file and a rename, so
/// readers never observe a partially written file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp");
    let write_err = |source| DataError::Write {
        path: path.to_path_buf(),
        source,
    };
    fs::write(&tmp, contents).map_err(write_err)?;
    fs::rename(&tmp, path).map_err(write_err)
}

fn read_file(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Saves a dataset to `dir`, creating it if needed. The dataset is validated
/// before anything is written.
pub fn save_dataset(ds: &BiomarkerDataset, dir: &Path) -> Result<(), DataError> {
    ds.check()?;
    fs::create_dir_all(dir).map_err(|source| DataError::Write {
        path: dir.to_path_buf(),
        source,
    })?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        subjects: ds.n_subjects(),
        biomarkers: ds.n_biomarkers(),
        biomarker_names: ds.biomarker_names.clone(),
        has_scalars: ds.scalars.is_some(),
        region_dims: ds
            .regions
            .as_ref()
            .map(|rs| rs.iter().map(|r| r.ncols()).collect()),
    };
    let manifest_path = dir.join("manifest.json");
    let mut manifest_json =
        serde_json::to_string_pretty(&manifest).map_err(|source| DataError::Json {
            path: manifest_path.clone(),
            source,
        })?;
    manifest_json.push('\n');
    atomic_write(&manifest_path, manifest_json.as_bytes())?;

    atomic_write(&dir.join("labels.csv"), labels_csv(ds).as_bytes())?;

    if let Some(scalars) = &ds.scalars {
        let mut header = vec!["subject_id".to_string()];
        header.extend(ds.biomarker_names.iter().cloned());
        let csv = matrix_csv(&header, &ds.subject_ids, scalars);
        atomic_write(&dir.join("scalars.csv"), csv.as_bytes())?;
    }

    if let Some(regions) = &ds.regions {
        let regions_dir = dir.join("regions");
        fs::create_dir_all(&regions_dir).map_err(|source| DataError::Write {
            path: regions_dir.clone(),
            source,
        })?;
        for (i, region) in regions.iter().enumerate() {
            let mut header = vec!["subject_id".to_string()];
            header.extend((0..region.ncols()).map(|v| format!("v{v}")));
            let csv = matrix_csv(&header, &ds.subject_ids, region);
            atomic_write(&regions_dir.join(format!("region_{i}.csv")), csv.as_bytes())?;
        }
    }
    Ok(())
}

fn labels_csv(ds: &BiomarkerDataset) -> String {
    let has_tags = ds.tags.iter().any(Option::is_some);
    let mut out = String::new();
    out.push_str(if has_tags {
        "subject_id,label,tag\n"
    } else {
        "subject_id,label\n"
    });
    for i in 0..ds.n_subjects() {
        out.push_str(&ds.subject_ids[i]);
        out.push(',');
        out.push_str(ds.labels[i].token());
        if has_tags {
            out.push(',');
            if let Some(tag) = &ds.tags[i] {
                out.push_str(tag);
            }
        }
        out.push('\n');
    }
    out
}

fn matrix_csv(header: &[String], ids: &[String], values: &Array2<f64>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for (i, row) in values.rows().into_iter().enumerate() {
        out.push_str(&ids[i]);
        for v in row.iter() {
            out.push(',');
            // Shortest round-trip formatting keeps save/load/save byte-stable.
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<BiomarkerDataset, DataError> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&read_file(&manifest_path)?).map_err(
        |source| DataError::Json {
            path: manifest_path.clone(),
            source,
        },
    )?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DataError::Malformed {
            path: manifest_path,
            line: 1,
            message: format!(
                "unsupported format_version {} (this build reads {FORMAT_VERSION})",
                manifest.format_version
            ),
        });
    }
    if manifest.biomarker_names.len() != manifest.biomarkers {
        return Err(DataError::Malformed {
            path: manifest_path,
            line: 1,
            message: format!(
                "manifest declares {} biomarkers but names {}",
                manifest.biomarkers,
                manifest.biomarker_names.len()
            ),
        });
    }

    let labels_path = dir.join("labels.csv");
    let (subject_ids, labels, tags) = parse_labels(&labels_path, &read_file(&labels_path)?)?;

    let scalars = if manifest.has_scalars {
        let path = dir.join("scalars.csv");
        let mut expected = vec!["subject_id".to_string()];
        expected.extend(manifest.biomarker_names.iter().cloned());
        Some(parse_matrix(&path, &read_file(&path)?, &expected, &subject_ids)?)
    } else {
        None
    };

    let regions = match &manifest.region_dims {
        Some(dims) => {
            if dims.len() != manifest.biomarkers {
                return Err(DataError::Malformed {
                    path: manifest_path,
                    line: 1,
                    message: format!(
                        "manifest declares {} biomarkers but {} region_dims",
                        manifest.biomarkers,
                        dims.len()
                    ),
                });
            }
            let mut regions = Vec::with_capacity(dims.len());
            for (i, &d) in dims.iter().enumerate() {
                let path = dir.join("regions").join(format!("region_{i}.csv"));
                let mut expected = vec!["subject_id".to_string()];
                expected.extend((0..d).map(|v| format!("v{v}")));
                regions.push(parse_matrix(
                    &path,
                    &read_file(&path)?,
                    &expected,
                    &subject_ids,
                )?);
            }
            Some(regions)
        }
        None => None,
    };

    let ds = BiomarkerDataset {
        subject_ids,
        labels,
        tags,
        biomarker_names: manifest.biomarker_names,
        scalars,
        regions,
    };
    ds.check()?;
    Ok(ds)
}

type LabelRows = (Vec<String>, Vec<SubjectLabel>, Vec<Option<String>>);

/// Reads a standalone `labels.csv` as `(subject ids, labels, tags)`.
pub fn load_labels(path: &Path) -> Result<LabelRows, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_labels(path, &text)
}

fn parse_labels(path: &Path, text: &str) -> Result<LabelRows, DataError> {
    let malformed = |line: usize, message: String| DataError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".to_string()))?;
    let has_tags = match header {
        "subject_id,label" => false,
        "subject_id,label,tag" => true,
        other => {
            return Err(malformed(
                1,
                format!("unexpected header `{other}`, expected `subject_id,label[,tag]`"),
            ))
        }
    };
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if has_tags { 3 } else { 2 };
        if fields.len() != expected {
            return Err(malformed(
                line_no,
                format!("expected {expected} fields, got {}", fields.len()),
            ));
        }
        let label = fields[1]
            .parse::<SubjectLabel>()
            .map_err(|_| DataError::UnknownLabel {
                path: path.to_path_buf(),
                line: line_no,
                token: fields[1].to_string(),
            })?;
        ids.push(fields[0].to_string());
        labels.push(label);
        tags.push(if has_tags && !fields[2].is_empty() {
            Some(fields[2].to_string())
        } else {
            None
        });
    }
    Ok((ids, labels, tags))
}

fn parse_matrix(
    path: &Path,
    text: &str,
    expected_header: &[String],
    subject_ids: &[String],
) -> Result<Array2<f64>, DataError> {
    let malformed = |line: usize, message: String| DataError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".to_string()))?;
    let expected_joined = expected_header.join(",");
    if header != expected_joined {
        return Err(malformed(
            1,
            format!("unexpected header `{header}`, expected `{expected_joined}`"),
        ));
    }
    let cols = expected_header.len() - 1;
    let mut values = Array2::zeros((subject_ids.len(), cols));
    let mut row = 0usize;
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        if row >= subject_ids.len() {
            return Err(malformed(
                line_no,
                format!("more data rows than the {} subjects in labels.csv", subject_ids.len()),
            ));
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default();
        if id != subject_ids[row] {
            return Err(malformed(
                line_no,
                format!(
                    "subject id `{id}` does not match `{}` from labels.csv",
                    subject_ids[row]
                ),
            ));
        }
        let mut col = 0usize;
        for field in fields {
            if col >= cols {
                break;
            }
            values[(row, col)] = field
                .parse::<f64>()
                .map_err(|_| malformed(line_no, format!("cannot parse `{field}` as a number")))?;
            col += 1;
        }
        if col != cols {
            return Err(malformed(
                line_no,
                format!("expected {cols} values, got {col}"),
            ));
        }
        row += 1;
    }
    if row != subject_ids.len() {
        return Err(malformed(
            0,
            format!("expected {} data rows, got {row}", subject_ids.len()),
        ));
    }
    Ok(values)
}

/// Saves ground truth as pretty-printed JSON.
pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<(), DataError> {
    gt.validate()?;
    let mut json = serde_json::to_string_pretty(gt).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    json.push('\n');
    atomic_write(path, json.as_bytes())
}

/// Loads and validates a ground truth file.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, DataError> {
    let gt: GroundTruth =
        serde_json::from_str(&read_file(path)?).map_err(|source| DataError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    gt.validate()?;
    Ok(gt)
}
