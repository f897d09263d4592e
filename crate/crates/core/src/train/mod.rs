//! Training transactions for every architecture, and evaluation metrics.

mod dual;
mod metrics;
mod rnn;

pub use dual::{
    dual_gradients, new_optimizer, train_step_autoencoder, train_step_classifier, train_step_dual, DualGrads,
    DualStepConfig, TopLoss,
};
pub use metrics::{
    char_accuracy, classifier_accuracy, hamming_similarity, layer_alignment, mae_mse, probe_hamming,
    reconstruction_mse, sequence_metrics, Crop, MetricsRow, MetricsWriter, METRICS_HEADER, METRICS_SCHEMA,
};
pub use rnn::{new_rnn_optimizer, rnn_gradients, train_step_rnn, Readout, RnnStepConfig, RNN_PARAM_NAMES};

/// Loss values, gradient norms and firing rates of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStepReport {
    /// `L_i` per hidden population.
    pub type1: Vec<f64>,
    /// `L'_i` per population below the top.
    pub type2: Vec<f64>,
    pub top: f64,
    /// Input reconstruction loss (recurrent models only).
    pub recon: f64,
    pub grad_norm_pre: f64,
    pub grad_norm_post: f64,
    pub rates_fwd: Vec<f64>,
    pub rates_bwd: Vec<f64>,
}

impl TrainStepReport {
    pub fn total(&self) -> f64 {
        self.type1.iter().sum::<f64>() + self.type2.iter().sum::<f64>() + self.top + self.recon
    }
}
