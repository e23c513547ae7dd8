//! The CNN + LSTM flow classifier: training, inference and
//! persistence.

mod cnn;
mod config;
mod network;
mod persist;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ConvSpec, HstfConfig};
pub use network::{check_gradients, loss_and_gradients, HstfParams};
pub use persist::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use train::{train, EpochRecord, TrainHistory};

use crate::features::{encode_flow, normalize_in_place, EncodedFlow, FeatureError, NormalizationStats};
use crate::http::{Flow, Label};
use crate::nn::{sigmoid, NnError};
use network::Engine;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input does not match the model configuration: {0}")]
    ConfigMismatch(String),
    #[error("training data contains a single class")]
    SingleClassDataset,
    #[error("flow has no messages")]
    EmptyFlow,
    #[error("model format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HstfModel {
    pub config: HstfConfig,
    pub params: HstfParams,
    pub stats: NormalizationStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub score: f64,
}

impl HstfModel {
    /// Freshly initialized weights drawn from `config.seed`.
    pub fn new(config: HstfConfig) -> Result<Self, ModelError> {
        let plan = config.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = HstfParams::init(&config, &plan, &mut rng);
        Ok(Self {
            config,
            params,
            stats: NormalizationStats::unit(),
        })
    }

    /// Scales PL/FL with the model's normalization stats.
    pub fn normalize(&self, flow: &EncodedFlow) -> EncodedFlow {
        let mut f = flow.clone();
        normalize_in_place(&mut f, &self.stats);
        f
    }

    /// Scores already-normalized flows.
    pub fn scores_normalized(&self, flows: &[EncodedFlow]) -> Result<Vec<f64>, ModelError> {
        let plan = self.config.plan()?;
        let engine = Engine::new(&self.config, &plan, &self.params);
        flows.iter().map(|f| Ok(sigmoid(engine.logit(f)?))).collect()
    }

    /// Scores raw encoded flows (normalization applied here).
    pub fn scores(&self, flows: &[EncodedFlow]) -> Result<Vec<f64>, ModelError> {
        let plan = self.config.plan()?;
        let engine = Engine::new(&self.config, &plan, &self.params);
        flows
            .iter()
            .map(|f| Ok(sigmoid(engine.logit(&self.normalize(f))?)))
            .collect()
    }

    /// Encodes with the model's sizes and scores one flow.
    pub fn score_flow(&self, flow: &Flow) -> Result<f64, ModelError> {
        if flow.messages.is_empty() {
            return Err(ModelError::EmptyFlow);
        }
        let enc = encode_flow(flow, self.config.packet_size, self.config.flow_size)?;
        Ok(self.scores(std::slice::from_ref(&enc))?[0])
    }
}

/// `flow_forward`: score in [0,1] of a normalized encoded flow.
pub fn flow_forward(encoded: &EncodedFlow, model: &HstfModel) -> Result<f64, ModelError> {
    Ok(model.scores_normalized(std::slice::from_ref(encoded))?[0])
}

/// Label is malicious when `score >= threshold`.
pub fn predict(flow: &Flow, model: &HstfModel, threshold: f64) -> Result<Prediction, ModelError> {
    let score = model.score_flow(flow)?;
    Ok(Prediction {
        label: if score >= threshold {
            Label::Malicious
        } else {
            Label::Benign
        },
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpMessage, HttpVersion};

    fn flow() -> Flow {
        let mut req = HttpMessage::request("GET", "/index.html", HttpVersion::V1_1);
        req.headers = vec![("Host".into(), "example.com".into())];
        Flow {
            flow_id: "f".into(),
            label: Label::Unlabeled,
            lossy: false,
            segments: None,
            messages: vec![req, HttpMessage::response(200, HttpVersion::V1_1)],
        }
    }

    #[test]
    fn threshold_extremes() {
        let model = HstfModel::new(HstfConfig::tiny()).unwrap();
        let f = flow();
        assert_eq!(predict(&f, &model, 0.0).unwrap().label, Label::Malicious);
        assert_eq!(predict(&f, &model, 1.0 + 1e-9).unwrap().label, Label::Benign);
        let s = predict(&f, &model, 0.5).unwrap().score;
        assert!((0.0..=1.0).contains(&s));
        let empty = Flow {
            messages: vec![],
            ..flow()
        };
        assert!(matches!(predict(&empty, &model, 0.5), Err(ModelError::EmptyFlow)));
    }

    #[test]
    fn scoring_is_deterministic() {
        let a = HstfModel::new(HstfConfig::tiny()).unwrap();
        let b = HstfModel::new(HstfConfig::tiny()).unwrap();
        assert_eq!(
            a.score_flow(&flow()).unwrap().to_bits(),
            b.score_flow(&flow()).unwrap().to_bits()
        );
    }
}
