//! Downstream time-series classifier with the three-step diversity
//! learning strategy and an ERM control.

pub mod model;
pub mod train;

pub use model::{Classifier, Head, TscConfig};
pub use train::{
    accuracy, erm_train, step_class_origin, step_class_specific, step_origin_specific, train_diversity,
    Evaluation, Optimizers, TscReport,
};

use crate::error::{Error, Result};

/// Joint class-origin label `y_c + y_o·C`.
pub fn encode_labels(y_c: usize, y_o: u8, n_classes: usize) -> Result<usize> {
    if y_c >= n_classes || y_o > 1 {
        return Err(Error::invalid(format!(
            "label (class {y_c}, origin {y_o}) out of range for C={n_classes}"
        )));
    }
    Ok(y_c + y_o as usize * n_classes)
}

/// Inverse of [`encode_labels`].
pub fn decode_labels(y_co: usize, n_classes: usize) -> Result<(usize, u8)> {
    if n_classes == 0 || y_co >= 2 * n_classes {
        return Err(Error::invalid(format!("joint label {y_co} out of range for C={n_classes}")));
    }
    Ok((y_co % n_classes, (y_co / n_classes) as u8))
}
