use crate::config::{ExperimentConfig, Method};

/// Evaluation and traffic of one round. Round 0 is the untrained state.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: Method,
    pub seed: u64,
    pub round: u32,
    pub mean_accuracy: f64,
    pub client_accuracies: Vec<f64>,
    /// Mean supervised loss over the round's batches.
    pub supervised_loss: Option<f64>,
    pub regularizer_loss: Option<f64>,
    /// Values in each client's update, averaged over clients.
    pub uplink_values: f64,
    /// Frame bytes sent per client, averaged over clients.
    pub uplink_bytes: f64,
    pub downlink_bytes: f64,
    pub round_ms: f64,
    /// Mean per-client encryption time.
    pub encrypt_ms: Option<f64>,
}

impl MetricsRow {
    pub fn new(cfg: &ExperimentConfig, round: u32, client_accuracies: Vec<f64>) -> Self {
        let mean_accuracy = if client_accuracies.is_empty() {
            0.0
        } else {
            client_accuracies.iter().sum::<f64>() / client_accuracies.len() as f64
        };
        Self {
            method: cfg.method,
            seed: cfg.seed,
            round,
            mean_accuracy,
            client_accuracies,
            supervised_loss: None,
            regularizer_loss: None,
            uplink_values: 0.0,
            uplink_bytes: 0.0,
            downlink_bytes: 0.0,
            round_ms: 0.0,
            encrypt_ms: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.last().map(|r| r.mean_accuracy)
    }

    pub fn accuracy_trajectory(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_accuracy).collect()
    }

    /// Rows with the wall-clock columns zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| MetricsRow { round_ms: 0.0, encrypt_ms: r.encrypt_ms.map(|_| 0.0), ..r.clone() })
            .collect();
        Self { rows }
    }
}
