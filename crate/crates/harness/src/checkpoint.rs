//! Model checkpoints and calibrator documents, as versioned JSON.
//!
//! f64 values go through serde_json's shortest round-trip formatting, so a
//! save/load cycle reproduces every parameter bit-exactly.

use crate::error::{HarnessError, Result};
use alphacal_core::{BnnModel, Calibrator, Matrix, Method, VariationalLayer};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub w_mean: Vec<Vec<f64>>,
    pub w_rho: Vec<Vec<f64>>,
    pub b_mean: Vec<f64>,
    pub b_rho: Vec<f64>,
    pub prior_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointDoc {
    pub version: u32,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub layers: Vec<LayerDoc>,
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    Matrix::from_rows(rows).map_err(HarnessError::from)
}

pub fn layer_doc(layer: &VariationalLayer) -> LayerDoc {
    LayerDoc {
        w_mean: matrix_to_rows(layer.w_mean()),
        w_rho: matrix_to_rows(layer.w_rho()),
        b_mean: layer.b_mean().row(0).to_vec(),
        b_rho: layer.b_rho().row(0).to_vec(),
        prior_sigma: layer.prior_sigma(),
    }
}

pub fn layer_from_doc(doc: &LayerDoc) -> Result<VariationalLayer> {
    VariationalLayer::from_parts(
        rows_to_matrix(&doc.w_mean)?,
        rows_to_matrix(&doc.w_rho)?,
        Matrix::row_vec(&doc.b_mean),
        Matrix::row_vec(&doc.b_rho),
        doc.prior_sigma,
    )
    .map_err(HarnessError::from)
}

pub fn checkpoint_doc(model: &BnnModel) -> CheckpointDoc {
    let hidden: Vec<usize> =
        model.layers()[..model.layers().len() - 1].iter().map(|l| l.out_dim()).collect();
    CheckpointDoc {
        version: CHECKPOINT_VERSION,
        input_dim: model.input_dim(),
        output_dim: model.output_dim(),
        hidden,
        layers: model.layers().iter().map(layer_doc).collect(),
    }
}

pub fn save_checkpoint(model: &BnnModel, path: &Path) -> Result<()> {
    let doc = checkpoint_doc(model);
    let text = serde_json::to_string(&doc)
        .map_err(|e| HarnessError::Io(format!("cannot serialize checkpoint: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| HarnessError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<BnnModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("cannot read {}: {e}", path.display())))?;
    let doc: CheckpointDoc = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(HarnessError::Io(format!(
            "unsupported checkpoint version {} in {}",
            doc.version,
            path.display()
        )));
    }
    let layers = doc.layers.iter().map(layer_from_doc).collect::<Result<Vec<_>>>()?;
    BnnModel::from_layers(layers, doc.output_dim).map_err(HarnessError::from)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratorDoc {
    pub version: u32,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub last_layer: Option<LayerDoc>,
}

pub fn calibrator_doc(cal: &Calibrator) -> CalibratorDoc {
    CalibratorDoc {
        version: CHECKPOINT_VERSION,
        method: cal.method().tag().to_string(),
        alpha: cal.alpha(),
        s: cal.scalar_temp(),
        l: cal.tril_temp().map(matrix_to_rows),
        last_layer: cal.replacement_layer().map(layer_doc),
    }
}

pub fn save_calibrator(cal: &Calibrator, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&calibrator_doc(cal))
        .map_err(|e| HarnessError::Io(format!("cannot serialize calibrator: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| HarnessError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn calibrator_from_doc(doc: &CalibratorDoc) -> Result<Calibrator> {
    let method = Method::from_tag(&doc.method)
        .ok_or_else(|| HarnessError::Usage(format!("unknown calibrator method {:?}", doc.method)))?;
    let cal = match method {
        Method::None => Calibrator::none(),
        Method::Sts => Calibrator::sts(
            doc.s.ok_or_else(|| HarnessError::Usage("sTS document missing s".to_string()))?,
        )?,
        Method::TrilTs => Calibrator::trilts(rows_to_matrix(
            doc.l
                .as_ref()
                .ok_or_else(|| HarnessError::Usage("TrilTS document missing l".to_string()))?,
        )?)?,
        _ => {
            let layer = doc.last_layer.as_ref().ok_or_else(|| {
                HarnessError::Usage(format!("{} document missing last_layer", doc.method))
            })?;
            let alpha = doc.alpha.ok_or_else(|| {
                HarnessError::Usage(format!("{} document missing alpha", doc.method))
            })?;
            let l = doc.l.as_ref().map(|rows| rows_to_matrix(rows)).transpose()?;
            Calibrator::last_layer_family(method, alpha, layer_from_doc(layer)?, doc.s, l)?
        }
    };
    Ok(cal)
}

pub fn load_calibrator(path: &Path) -> Result<Calibrator> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("cannot read {}: {e}", path.display())))?;
    let doc: CalibratorDoc = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    calibrator_from_doc(&doc)
}
