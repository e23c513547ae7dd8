use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::{check_sizes, MATRIX_COLS, MATRIX_ROWS};
use crate::nn::{ConvGeometry, ConvLayer, OptimizerConfig, PoolGeometry};

/// One convolution followed by max pooling (pool stride = pool window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernels: usize,
    pub kernel: [usize; 2],
    #[serde(default = "unit_stride")]
    pub stride: [usize; 2],
    pub pool: [usize; 2],
}

fn unit_stride() -> [usize; 2] {
    [1, 1]
}

impl ConvSpec {
    pub fn new(kernels: usize, kernel: [usize; 2], pool: [usize; 2]) -> Self {
        Self {
            kernels,
            kernel,
            stride: [1, 1],
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HstfConfig {
    pub packet_size: usize,
    pub flow_size: usize,
    /// Top-left crop of the raw matrix fed to the CNN.
    pub matrix_rows: usize,
    pub matrix_cols: usize,
    pub conv: Vec<ConvSpec>,
    pub cnn_dense: usize,
    pub pl_encoder: usize,
    pub pl_dense: usize,
    pub lstm_hidden: usize,
    pub fl_encoder: usize,
    pub head_layers: Vec<usize>,
    /// Multiplies the PL/FL branches; 0 removes them.
    pub statistics_gate: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once validation F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for HstfConfig {
    fn default() -> Self {
        Self {
            packet_size: 400,
            flow_size: 4,
            matrix_rows: MATRIX_ROWS,
            matrix_cols: MATRIX_COLS,
            conv: vec![ConvSpec::new(4, [3, 7], [2, 2]), ConvSpec::new(8, [3, 5], [2, 2])],
            cnn_dense: 128,
            pl_encoder: 20,
            pl_dense: 5,
            lstm_hidden: 128,
            fl_encoder: 30,
            head_layers: vec![64],
            statistics_gate: 1.0,
            optimizer: OptimizerConfig::adam(1e-3),
            batch_size: 32,
            epochs: 10,
            seed: 0,
            target_f1: None,
        }
    }
}

/// Geometry derived from a config.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plan {
    pub stages: Vec<super::cnn::StagePlan>,
    /// Channels and plane size of the last pooled map.
    pub flat: (usize, usize),
}

impl HstfConfig {
    /// Small network used in gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            flow_size: 2,
            matrix_rows: 8,
            matrix_cols: 16,
            conv: vec![ConvSpec::new(2, [3, 3], [2, 2]), ConvSpec::new(3, [2, 3], [2, 2])],
            cnn_dense: 8,
            pl_encoder: 6,
            pl_dense: 3,
            lstm_hidden: 8,
            fl_encoder: 5,
            head_layers: vec![4],
            ..Self::default()
        }
    }

    pub fn embedding_width(&self) -> usize {
        self.cnn_dense + self.pl_dense
    }

    pub fn head_input_width(&self) -> usize {
        self.lstm_hidden + self.fl_encoder
    }

    pub fn learning_rate(&self) -> f64 {
        match self.optimizer {
            OptimizerConfig::Sgd { learning_rate } | OptimizerConfig::Adam { learning_rate, .. } => {
                learning_rate
            }
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        match &mut self.optimizer {
            OptimizerConfig::Sgd { learning_rate } | OptimizerConfig::Adam { learning_rate, .. } => {
                *learning_rate = lr
            }
        }
    }

    pub(crate) fn plan(&self) -> Result<Plan, ModelError> {
        check_sizes(self.packet_size, self.flow_size)?;
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.matrix_rows == 0
            || self.matrix_rows > MATRIX_ROWS
            || self.matrix_cols == 0
            || self.matrix_cols > MATRIX_COLS
        {
            return bad(format!(
                "matrix crop {}x{} outside 1..={MATRIX_ROWS} x 1..={MATRIX_COLS}",
                self.matrix_rows, self.matrix_cols
            ));
        }
        if self.conv.is_empty() {
            return bad("at least one convolution stage is required".into());
        }
        for (name, v) in [
            ("cnn_dense", self.cnn_dense),
            ("pl_encoder", self.pl_encoder),
            ("pl_dense", self.pl_dense),
            ("lstm_hidden", self.lstm_hidden),
            ("fl_encoder", self.fl_encoder),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.head_layers.contains(&0) {
            return bad("head layer widths must be positive".into());
        }
        if !self.statistics_gate.is_finite() {
            return bad("statistics_gate must be finite".into());
        }
        if !(self.learning_rate() > 0.0) {
            return bad("learning rate must be positive".into());
        }
        let mut shape = (1, self.matrix_rows, self.matrix_cols);
        let mut stages = Vec::with_capacity(self.conv.len());
        for (i, spec) in self.conv.iter().enumerate() {
            let layer = ConvLayer::zeros(
                spec.kernels.max(1),
                shape.0,
                spec.kernel[0],
                spec.kernel[1],
                crate::nn::Activation::Relu,
            );
            let conv: ConvGeometry = layer
                .geometry(shape.0, shape.1, shape.2, (spec.stride[0], spec.stride[1]))
                .map_err(|_| {
                    ModelError::InvalidConfig(format!(
                        "convolution stage {i} does not fit a {}x{} map",
                        shape.1, shape.2
                    ))
                })?;
            if spec.kernels == 0 {
                return bad(format!("convolution stage {i} has no kernels"));
            }
            let pool = PoolGeometry::new(
                (spec.kernels, conv.out_h, conv.out_w),
                (spec.pool[0], spec.pool[1]),
                (spec.pool[0], spec.pool[1]),
            )
            .map_err(|_| {
                ModelError::InvalidConfig(format!(
                    "pool of stage {i} does not fit a {}x{} map",
                    conv.out_h, conv.out_w
                ))
            })?;
            shape = (spec.kernels, pool.out_h, pool.out_w);
            stages.push(super::cnn::StagePlan { conv, pool });
        }
        Ok(Plan {
            stages,
            flat: (shape.0, shape.1 * shape.2),
        })
    }
}
