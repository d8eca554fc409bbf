//! Model checkpoints: a self-describing JSON container with the architecture,
//! every parameter tensor at full 64-bit precision, the input mask and
//! scaler, the training-config echo, and the loss curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainedModel;
use crate::{Error, Result};

const CHECKPOINT_FORMAT: &str = "sfse-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    #[serde(flatten)]
    model: TrainedModel,
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let doc = CheckpointDoc {
        format: CHECKPOINT_FORMAT.to_string(),
        model: model.clone(),
    };
    let text = serde_json::to_string(&doc)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path)?;
    let doc: CheckpointDoc = serde_json::from_str(&text)?;
    if doc.format != CHECKPOINT_FORMAT {
        return Err(Error::invalid(format!(
            "unsupported checkpoint format '{}'",
            doc.format
        )));
    }
    Ok(doc.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ObservabilityMask;
    use crate::nn::{DnnArchitecture, DnnModel, TrainConfig};
    use crate::standardize::Standardizer;

    #[test]
    fn checkpoint_round_trip() {
        let arch = DnnArchitecture::new(4, 2, 0).unwrap();
        let trained = TrainedModel {
            model: DnnModel::init(arch, 77),
            mask: ObservabilityMask::prefix_observed(4, 2, 0).unwrap(),
            scaler: Standardizer::identity(16),
            train_curve: vec![1.0, 0.5, 0.25],
            val_curve: vec![1.1, 0.6],
            config: TrainConfig::with_lambda(2.0),
            case_label: "case4".to_string(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&trained, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.model.params, trained.model.params);
        assert_eq!(back.mask, trained.mask);
        assert_eq!(back.train_curve, trained.train_curve);
        assert_eq!(back.config, trained.config);
        // identical saves are byte-identical
        let path2 = dir.path().join("model2.json");
        save_model(&trained, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn wrong_format_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"format\": \"something-else\"}").unwrap();
        assert!(load_model(&path).is_err());
    }
}
