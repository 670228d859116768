//! Dataset files: a header CSV `x_0..x_{M-1},y_0..y_{N-1}` with a JSON
//! sidecar carrying the generative truth. Numbers are written with Rust's
//! shortest round-trip formatting, so parse(emit(x)) is lossless.

use crate::config::meta_path_for;
use crate::error::{HarnessError, Result};
use crate::synthetic::{split_rows, DatasetMeta, Split, SyntheticTask};
use alphacal_core::Matrix;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub xs: Matrix,
    pub ys: Matrix,
    pub meta: DatasetMeta,
    pub split: Split,
}

impl Dataset {
    pub fn train_xy(&self) -> (Matrix, Matrix) {
        (self.xs.take_rows(&self.split.train), self.ys.take_rows(&self.split.train))
    }

    pub fn val_xy(&self) -> (Matrix, Matrix) {
        (self.xs.take_rows(&self.split.val), self.ys.take_rows(&self.split.val))
    }

    pub fn test_xy(&self) -> (Matrix, Matrix) {
        (self.xs.take_rows(&self.split.test), self.ys.take_rows(&self.split.test))
    }

    pub fn input_dim(&self) -> usize {
        self.meta.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.meta.output_dim
    }
}

pub fn csv_header(m: usize, n: usize) -> String {
    let mut cols: Vec<String> = (0..m).map(|i| format!("x_{i}")).collect();
    cols.extend((0..n).map(|i| format!("y_{i}")));
    cols.join(",")
}

/// Generate a task's files: `<path>` (CSV) and `<path minus .csv>.meta.json`.
pub fn generate_dataset(task: &SyntheticTask, path: &Path) -> Result<()> {
    let (xs, ys) = task.generate();
    let (m, n) = (task.meta.input_dim, task.meta.output_dim);
    let mut csv = String::with_capacity(xs.rows() * (m + n) * 12);
    csv.push_str(&csv_header(m, n));
    csv.push('\n');
    for i in 0..xs.rows() {
        let mut fields: Vec<String> = Vec::with_capacity(m + n);
        fields.extend(xs.row(i).iter().map(|v| format!("{v}")));
        fields.extend(ys.row(i).iter().map(|v| format!("{v}")));
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, csv)
        .map_err(|e| HarnessError::Io(format!("cannot write {}: {e}", path.display())))?;
    let meta = serde_json::to_string_pretty(&task.meta)
        .map_err(|e| HarnessError::Io(format!("cannot serialize meta: {e}")))?;
    let meta_path = meta_path_for(path);
    std::fs::write(&meta_path, meta)
        .map_err(|e| HarnessError::Io(format!("cannot write {}: {e}", meta_path.display())))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let meta_path = meta_path_for(path);
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| HarnessError::Io(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| HarnessError::Parse {
        path: meta_path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("cannot read {}: {e}", path.display())))?;
    let (m, n) = (meta.input_dim, meta.output_dim);
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| HarnessError::Parse {
        path: path_str.clone(),
        line: 1,
        msg: "empty file".to_string(),
    })?;
    if header != csv_header(m, n) {
        return Err(HarnessError::Parse {
            path: path_str.clone(),
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut xs_data = Vec::new();
    let mut ys_data = Vec::new();
    let mut rows = 0usize;
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m + n {
            return Err(HarnessError::Parse {
                path: path_str.clone(),
                line: idx + 1,
                msg: format!("expected {} fields, found {}", m + n, fields.len()),
            });
        }
        for (col, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|e| HarnessError::Parse {
                path: path_str.clone(),
                line: idx + 1,
                msg: format!("bad number {f:?}: {e}"),
            })?;
            if col < m {
                xs_data.push(v);
            } else {
                ys_data.push(v);
            }
        }
        rows += 1;
    }
    if rows != meta.n_points {
        return Err(HarnessError::Parse {
            path: path_str,
            line: rows + 1,
            msg: format!("meta declares {} points, file has {rows}", meta.n_points),
        });
    }
    let xs = Matrix::from_vec(rows, m, xs_data).map_err(HarnessError::from)?;
    let ys = Matrix::from_vec(rows, n, ys_data).map_err(HarnessError::from)?;
    let split = split_rows(meta.n_points, meta.seed);
    Ok(Dataset { xs, ys, meta, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GenerateConfig;

    fn temp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("alphacal-dataset-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn generate_twice_is_byte_identical() {
        let dir = temp_dir("bytes");
        let config = GenerateConfig { n_points: 120, input_dim: 3, output_dim: 2, ..Default::default() };
        let task = SyntheticTask::new(&config, 11).unwrap();
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        generate_dataset(&task, &a).unwrap();
        generate_dataset(&task, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(
            std::fs::read(dir.join("a.meta.json")).unwrap(),
            std::fs::read(dir.join("b.meta.json")).unwrap()
        );
    }

    #[test]
    fn roundtrip_is_lossless() {
        let dir = temp_dir("roundtrip");
        let config = GenerateConfig { n_points: 80, input_dim: 3, output_dim: 2, ..Default::default() };
        let task = SyntheticTask::new(&config, 12).unwrap();
        let path = dir.join("t.csv");
        generate_dataset(&task, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        let (xs, ys) = task.generate();
        assert_eq!(loaded.xs, xs);
        assert_eq!(loaded.ys, ys);
        assert_eq!(loaded.meta, task.meta);
        assert_eq!(loaded.split, task.split_indices());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = temp_dir("badline");
        let path = dir.join("bad.csv");
        let meta_src = dir.join("bad.meta.json");
        let config = GenerateConfig { n_points: 2, input_dim: 1, output_dim: 1, ..Default::default() };
        let task = SyntheticTask::new(&config, 13).unwrap();
        generate_dataset(&task, &path).unwrap();
        std::fs::write(&path, "x_0,y_0\n0.5,1.0\n0.5,oops\n").unwrap();
        let _ = meta_src;
        match load_dataset(&path) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
