use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split, GroupedDataset, SplitSpec};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Task;

/// Column layout of a grouped CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label: String,
    pub group: GroupColumn,
    pub task: Task,
    /// Feature columns; all remaining columns when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    /// Columns to ignore when `features` is absent.
    #[serde(default)]
    pub exclude: Vec<String>,
    /// Labels are divided by this value after loading.
    #[serde(default)]
    pub label_scale: Option<f64>,
    /// Classification: the label value mapped to +1 (everything else → −1).
    #[serde(default)]
    pub label_positive: Option<String>,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub split: SplitSpec,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupColumn {
    pub column: String,
    /// Cells equal to this value are group 1; all others group 0.
    pub positive: String,
}

impl CsvSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }
}

fn same_value(cell: &str, want: &str) -> bool {
    let (c, w) = (cell.trim(), want.trim());
    if c == w {
        return true;
    }
    matches!((c.parse::<f64>(), w.parse::<f64>()), (Ok(a), Ok(b)) if a == b)
}

/// Read a CSV with a header row, split it by `schema.split`, and
/// standardize features on train statistics when configured.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<GroupedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let label_col = col(&schema.label)?;
    let group_col = col(&schema.group.column)?;
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, h)| *i != label_col && *i != group_col && !schema.exclude.contains(h))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let feature_cols = feature_names.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;

    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut group = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = r + 2;
        let numeric = |c: usize| -> Result<f64> {
            let cell = record.get(c).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data(format!(
                    "{}: line {line}, column `{}`: `{cell}` is not a finite number",
                    path.display(),
                    headers[c]
                ))),
            }
        };
        for &c in &feature_cols {
            feats.push(numeric(c)?);
        }
        let y = match (schema.task, &schema.label_positive) {
            (Task::BinaryClassification, Some(pos)) => {
                if same_value(record.get(label_col).unwrap_or(""), pos) {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => numeric(label_col)?,
        };
        labels.push(y);
        group.push(u8::from(same_value(
            record.get(group_col).unwrap_or(""),
            &schema.group.positive,
        )));
    }
    let n = labels.len();
    for g in 0..2u8 {
        if !group.contains(&g) {
            return Err(Error::Data(format!(
                "{}: no rows fall in group {g} (column `{}`, value for group 1 `{}`)",
                path.display(),
                schema.group.column,
                schema.group.positive
            )));
        }
    }
    let x = Tensor::new(vec![n, feature_cols.len()], feats)?;
    let mut ds = GroupedDataset::new(
        x,
        labels,
        group,
        feature_names,
        schema.task,
        path.display().to_string(),
    )?;
    if let Some(scale) = schema.label_scale {
        ds.scale_labels(scale)?;
    }
    let mut ds = split(&ds, &schema.split)?;
    if schema.standardize {
        ds.standardize()?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use sha2::{Digest, Sha256};

    fn schema() -> CsvSchema {
        serde_json::from_str(
            r#"{"label": "y", "group": {"column": "race", "positive": "White"}, "task": "regression",
                "standardize": false, "split": {"fractions": [0.5, 0.0, 0.5], "seed": 1}}"#,
        )
        .unwrap()
    }

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("toy.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    const TOY: &str = "a,race,y,b\n1,White,3.0,10\n2,Black,2.5,20\n3,White,4.0,30\n4,Asian,1.0,40\n";

    #[test]
    fn toy_csv_golden() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_csv(&write(&dir, TOY), &schema()).unwrap();
        assert_eq!(ds.feature_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.features().data(), &[1., 10., 2., 20., 3., 30., 4., 40.]);
        assert_eq!(ds.labels(), &[3.0, 2.5, 4.0, 1.0]);
        assert_eq!(ds.group(), &[1, 0, 1, 0]);

        // Hash the canonical layout assembled by hand.
        let mut bytes = b"FAIRDS v1 n=4 d=2 task=regression features=a,b\n".to_vec();
        let rows = [([1., 10.], 3.0, 1u8), ([2., 20.], 2.5, 0), ([3., 30.], 4.0, 1), ([4., 40.], 1.0, 0)];
        for (i, (x, y, g)) in rows.iter().enumerate() {
            for v in x {
                bytes.extend_from_slice(&f64::to_le_bytes(*v));
            }
            bytes.extend_from_slice(&f64::to_le_bytes(*y));
            bytes.push(*g);
            bytes.push(match ds.splits()[i] {
                Split::Train => 0,
                Split::Val => 1,
                Split::Test => 2,
            });
        }
        assert_eq!(ds.content_hash(), hex::encode(Sha256::digest(&bytes)));
    }

    #[test]
    fn constant_label_still_standardizes() {
        let dir = tempfile::tempdir().unwrap();
        let body = "a,race,y\n1,White,2\n2,Black,2\n3,White,2\n5,Black,2\n";
        let mut s = schema();
        s.standardize = true;
        let ds = load_csv(&write(&dir, body), &s).unwrap();
        assert_eq!(ds.labels(), &[2.0; 4]);
        let train = ds.split_rows(Split::Train);
        let mean: f64 = train.iter().map(|&i| ds.features().get(i, 0)).sum::<f64>() / train.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn label_scale_applies() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = schema();
        s.label_scale = Some(10_000.0);
        let ds = load_csv(&write(&dir, TOY), &s).unwrap();
        assert_eq!(ds.labels()[0], 3.0 / 10_000.0);
    }

    #[test]
    fn diagnostics_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_csv(&write(&dir, "a,race,y\n1,White,2\nx,Black,2\n"), &schema()).unwrap_err();
        assert!(err.to_string().contains("line 3") && err.to_string().contains("`a`"), "{err}");

        let err = load_csv(&write(&dir, "a,race,z\n1,White,2\n"), &schema()).unwrap_err();
        assert!(err.to_string().contains("missing column `y`"), "{err}");

        let err = load_csv(&write(&dir, "a,race,y\n1,Black,2\n2,Black,3\n"), &schema()).unwrap_err();
        assert!(err.to_string().contains("group 1"), "{err}");
    }

    #[test]
    fn idempotent_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_csv(&write(&dir, TOY), &schema()).unwrap();
        let p = dir.path().join("ds.bin");
        ds.save(&p).unwrap();
        let back = GroupedDataset::load(&p).unwrap();
        assert_eq!(back.content_hash(), ds.content_hash());
        back.save(&p).unwrap();
        assert_eq!(GroupedDataset::load(&p).unwrap().content_hash(), ds.content_hash());
    }
}
