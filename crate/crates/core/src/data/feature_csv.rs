//! Precomputed feature files: `sample_id,label,modality,f0..f{d-1}`, one row per
//! (sample, modality).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HospitalDataset;
use crate::error::{Error, Result};
use crate::fmt::float;
use crate::types::{ClassLabel, ModalityId};

/// Writes one modality of a dataset. Rows follow the dataset's sample order.
pub fn write_feature_file(
    path: &Path,
    data: &HospitalDataset<f64>,
    modality: ModalityId,
    modality_name: &str,
) -> Result<()> {
    let rows = data
        .features
        .get(&modality)
        .ok_or_else(|| Error::Data(format!("hospital {} lacks modality {modality_name}", data.hospital)))?;
    let dim = rows.first().map_or(0, Vec::len);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = String::from("sample_id,label,modality");
    for j in 0..dim {
        header.push_str(&format!(",f{j}"));
    }
    header.push('\n');
    let mut body = header;
    for (i, row) in rows.iter().enumerate() {
        body.push_str(&data.sample_ids[i]);
        body.push(',');
        body.push_str(&data.labels[i].to_string());
        body.push(',');
        body.push_str(modality_name);
        for v in row {
            body.push(',');
            body.push_str(&float(*v));
        }
        body.push('\n');
    }
    out.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub label: ClassLabel,
    pub modality: String,
    pub values: Vec<f64>,
}

/// Parses one feature file. `expected_dim` checks the number of feature
/// columns. Errors carry the file and 1-based line number.
pub fn read_feature_file(path: &Path, expected_dim: Option<usize>) -> Result<Vec<FeatureRow>> {
    let file_name = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse { file: file_name.clone(), line, msg };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < 4
        || &header[0] != "sample_id"
        || &header[1] != "label"
        || &header[2] != "modality"
    {
        return Err(parse_err(1, "header must start with sample_id,label,modality,f0".into()));
    }
    for (j, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(1, format!("feature column {j} is named {name:?}, expected f{j}")));
        }
    }
    let dim = header.len() - 3;
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(parse_err(
                1,
                format!("file has {dim} feature columns ({} total), expected {expected}", header.len()),
            ));
        }
    }
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("row has {} columns, header has {}", record.len(), header.len()),
            ));
        }
        let sample_id = record[0].to_string();
        if sample_id.is_empty() {
            return Err(parse_err(line, "empty sample_id".into()));
        }
        if !seen.insert(sample_id.clone()) {
            return Err(parse_err(line, format!("duplicate sample_id {sample_id}")));
        }
        let raw: u8 = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("label {:?} is not an integer", &record[1])))?;
        let label = ClassLabel::new(raw).map_err(|_| {
            Error::Data(format!("{file_name}:{line}: label {raw} outside {{0,1}}"))
        })?;
        let values = record
            .iter()
            .skip(3)
            .enumerate()
            .map(|(j, v)| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(line, format!("f{j} value {v:?} is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow { sample_id, label, modality: record[2].to_string(), values });
    }
    Ok(rows)
}

/// Feature files declared for one hospital, one per held modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalFiles {
    pub hospital: usize,
    pub files: BTreeMap<ModalityId, PathBuf>,
}

/// Loads hospitals from feature files, joining modalities on `sample_id`.
///
/// Every sample of a hospital must appear in every modality file declared for
/// it, with the same label. Samples are returned in `sample_id` order.
pub fn load_feature_csv(
    hospitals: &[HospitalFiles],
    dims: &BTreeMap<ModalityId, usize>,
) -> Result<Vec<HospitalDataset<f64>>> {
    hospitals
        .iter()
        .map(|h| {
            if h.files.is_empty() {
                return Err(Error::Config(format!("hospital {} declares no feature files", h.hospital)));
            }
            let mut tables: BTreeMap<ModalityId, BTreeMap<String, FeatureRow>> = BTreeMap::new();
            for (&m, path) in &h.files {
                let dim = dims.get(&m).copied();
                let rows = read_feature_file(path, dim)?;
                tables.insert(m, rows.into_iter().map(|r| (r.sample_id.clone(), r)).collect());
            }
            let all_ids: BTreeSet<&String> = tables.values().flat_map(|t| t.keys()).collect();
            let mut ids = Vec::with_capacity(all_ids.len());
            let mut labels = Vec::with_capacity(all_ids.len());
            for id in &all_ids {
                let mut label = None;
                for (m, table) in &tables {
                    let row = table.get(*id).ok_or_else(|| {
                        Error::Data(format!(
                            "hospital {}: sample {id} has no row for declared modality {m} ({})",
                            h.hospital,
                            h.files[m].display()
                        ))
                    })?;
                    match label {
                        None => label = Some(row.label),
                        Some(l) if l != row.label => {
                            return Err(Error::Data(format!(
                                "hospital {}: sample {id} has conflicting labels",
                                h.hospital
                            )))
                        }
                        _ => {}
                    }
                }
                ids.push((*id).clone());
                labels.push(label.expect("at least one modality"));
            }
            let features = tables
                .iter()
                .map(|(&m, table)| (m, ids.iter().map(|id| table[id].values.clone()).collect()))
                .collect();
            HospitalDataset::new(h.hospital, ids, labels, features)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&SyntheticSpec::default(), 2).unwrap();
        let names = ["A", "B"];
        let mut decl = Vec::new();
        for h in &data.hospitals {
            let mut files = BTreeMap::new();
            for m in h.mask() {
                let p = dir.path().join(format!("h{}_{}.csv", h.hospital, names[m.0]));
                write_feature_file(&p, h, m, names[m.0]).unwrap();
                files.insert(m, p);
            }
            decl.push(HospitalFiles { hospital: h.hospital, files });
        }
        let dims = BTreeMap::from([(ModalityId(0), 16), (ModalityId(1), 16)]);
        let loaded = load_feature_csv(&decl, &dims).unwrap();
        assert_eq!(loaded, data.hospitals);
    }

    #[test]
    fn duplicate_sample_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "sample_id,label,modality,f0\ns1,0,A,1.0\ns1,1,A,2.0\n");
        let err = read_feature_file(&p, Some(1)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn width_mismatch_names_column_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "sample_id,label,modality,f0,f1\ns1,0,A,1.0,2.0\n");
        let err = read_feature_file(&p, Some(3)).unwrap_err();
        assert!(matches!(err, Error::Parse { ref msg, .. } if msg.contains("2 feature columns")));
        let p = write(dir.path(), "b.csv", "sample_id,label,modality,f0,f1\ns1,0,A,1.0\n");
        assert!(matches!(read_feature_file(&p, None), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn non_binary_label_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "sample_id,label,modality,f0\ns1,2,A,1.0\n");
        assert!(matches!(read_feature_file(&p, None), Err(Error::Data(_))));
    }

    #[test]
    fn missing_declared_modality_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "sample_id,label,modality,f0\ns1,0,A,1.0\ns2,1,A,2.0\n");
        let b = write(dir.path(), "b.csv", "sample_id,label,modality,f0\ns1,0,B,1.0\n");
        let decl = [HospitalFiles {
            hospital: 1,
            files: BTreeMap::from([(ModalityId(0), a), (ModalityId(1), b)]),
        }];
        let err = load_feature_csv(&decl, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("s2")));
    }
}
