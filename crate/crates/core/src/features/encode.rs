use serde::{Deserialize, Serialize};

use super::{
    build_fl, build_pl, encode_packet_raw, FeatureError, FlowLevelVector, PacketLevelVector,
    RawFeatureMatrix, FL_LEN, MAX_FLOW_PACKETS, PL_LEN,
};
use crate::http::{Flow, Label};

/// Model input for one flow: `flow_size` packet slots plus the FL vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedFlow {
    pub matrices: Vec<RawFeatureMatrix>,
    pub pls: Vec<PacketLevelVector>,
    pub fl: FlowLevelVector,
    pub label: Label,
    /// Leading slots holding real messages; the rest are zero padding.
    pub real_packets: usize,
}

impl EncodedFlow {
    pub fn flow_size(&self) -> usize {
        self.matrices.len()
    }
}

pub fn check_sizes(packet_size: usize, flow_size: usize) -> Result<(), FeatureError> {
    if packet_size == 0 {
        return Err(FeatureError::InvalidParameter("packet_size must be at least 1".into()));
    }
    if !(1..=MAX_FLOW_PACKETS).contains(&flow_size) {
        return Err(FeatureError::InvalidParameter(format!(
            "flow_size must be in 1..={MAX_FLOW_PACKETS}, got {flow_size}"
        )));
    }
    Ok(())
}

/// `encode_flow(flow, packet_size, flow_size)`.
pub fn encode_flow(
    flow: &Flow,
    packet_size: usize,
    flow_size: usize,
) -> Result<EncodedFlow, FeatureError> {
    check_sizes(packet_size, flow_size)?;
    let real = flow.messages.len().min(flow_size);
    let mut matrices = Vec::with_capacity(flow_size);
    let mut pls = Vec::with_capacity(flow_size);
    for msg in &flow.messages[..real] {
        matrices.push(encode_packet_raw(msg, packet_size));
        pls.push(build_pl(msg));
    }
    matrices.resize(flow_size, RawFeatureMatrix::zeros());
    pls.resize(flow_size, PacketLevelVector::zeros());
    Ok(EncodedFlow {
        matrices,
        pls,
        fl: build_fl(flow),
        label: flow.label,
        real_packets: real,
    })
}

/// Per-position minimum and maximum of PL and FL values over a training set.
/// Padding slots do not contribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub pl_min: Vec<f64>,
    pub pl_max: Vec<f64>,
    pub fl_min: Vec<f64>,
    pub fl_max: Vec<f64>,
}

impl NormalizationStats {
    /// Identity-like stats (min 0, max 1) used before any data is seen.
    pub fn unit() -> Self {
        Self {
            pl_min: vec![0.0; PL_LEN],
            pl_max: vec![1.0; PL_LEN],
            fl_min: vec![0.0; FL_LEN],
            fl_max: vec![1.0; FL_LEN],
        }
    }

    /// Single streaming pass over `flows`.
    pub fn fit<'a>(flows: impl IntoIterator<Item = &'a EncodedFlow>) -> Result<Self, FeatureError> {
        let mut s = Self {
            pl_min: vec![f64::INFINITY; PL_LEN],
            pl_max: vec![f64::NEG_INFINITY; PL_LEN],
            fl_min: vec![f64::INFINITY; FL_LEN],
            fl_max: vec![f64::NEG_INFINITY; FL_LEN],
        };
        let mut seen = 0;
        for flow in flows {
            seen += 1;
            for pl in &flow.pls[..flow.real_packets] {
                update(&mut s.pl_min, &mut s.pl_max, pl.values());
            }
            update(&mut s.fl_min, &mut s.fl_max, flow.fl.values());
        }
        if seen == 0 {
            return Err(FeatureError::EmptyTrainingSet);
        }
        // Flows without any real packet leave PL positions unset.
        for (lo, hi) in s.pl_min.iter_mut().zip(s.pl_max.iter_mut()) {
            if !lo.is_finite() {
                *lo = 0.0;
                *hi = 0.0;
            }
        }
        Ok(s)
    }

    /// Positions where min equals max; these always normalize to 0.
    pub fn degenerate_positions(&self) -> (Vec<usize>, Vec<usize>) {
        let deg = |lo: &[f64], hi: &[f64]| {
            lo.iter()
                .zip(hi)
                .enumerate()
                .filter(|(_, (a, b))| a == b)
                .map(|(i, _)| i)
                .collect()
        };
        (deg(&self.pl_min, &self.pl_max), deg(&self.fl_min, &self.fl_max))
    }
}

fn update(lo: &mut [f64], hi: &mut [f64], values: &[f64]) {
    for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(values) {
        *l = l.min(v);
        *h = h.max(v);
    }
}

/// Min-max scaling clamped to [0,1]; degenerate positions map to 0.
fn scale(values: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in values.iter_mut().zip(lo).zip(hi) {
        *v = if h > l {
            ((*v - l) / (h - l)).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
}

/// `normalize_features(encoded, stats)`: PL (real slots only) and FL scaled;
/// raw matrices untouched.
pub fn normalize_features(flow: &EncodedFlow, stats: &NormalizationStats) -> EncodedFlow {
    let mut out = flow.clone();
    normalize_in_place(&mut out, stats);
    out
}

pub fn normalize_in_place(flow: &mut EncodedFlow, stats: &NormalizationStats) {
    for pl in &mut flow.pls[..flow.real_packets] {
        scale(pl.values_mut(), &stats.pl_min, &stats.pl_max);
    }
    scale(flow.fl.values_mut(), &stats.fl_min, &stats.fl_max);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::Timestamp;
    use crate::http::{HttpMessage, HttpVersion};

    fn flow(n: usize) -> Flow {
        Flow {
            flow_id: "x".into(),
            label: Label::Malicious,
            lossy: false,
            segments: None,
            messages: (0..n)
                .map(|i| {
                    let mut m = HttpMessage::request("GET", &"/".repeat(i + 1), HttpVersion::V1_1);
                    m.timestamp = Timestamp::from_micros(i as u64);
                    m.wire_length = 10 * (i + 1);
                    m
                })
                .collect(),
        }
    }

    #[test]
    fn padding_and_truncation() {
        let e = encode_flow(&flow(1), 400, 4).unwrap();
        assert_eq!((e.matrices.len(), e.pls.len(), e.real_packets), (4, 4, 1));
        assert_eq!(e.matrices[1], RawFeatureMatrix::zeros());
        assert!(e.pls[3].values().iter().all(|&v| v == 0.0));

        let e = encode_flow(&flow(8), 400, 4).unwrap();
        assert_eq!(e.matrices.len(), 4);
        assert_eq!(e.fl.at(1), 8.0);
        assert_eq!(e.fl.at(117), 80.0);
        assert!(encode_flow(&flow(1), 0, 4).is_err());
        assert!(encode_flow(&flow(1), 10, 51).is_err());
    }

    #[test]
    fn single_flow_stats_zero_out_degenerate_positions() {
        let e = encode_flow(&flow(1), 400, 2).unwrap();
        let stats = NormalizationStats::fit([&e]).unwrap();
        let n = normalize_features(&e, &stats);
        assert!(n.fl.values().iter().all(|&v| v == 0.0));
        assert!(n.pls[0].values().iter().all(|&v| v == 0.0));
        assert_eq!(n.matrices, e.matrices);
    }

    #[test]
    fn midpoint_maps_to_half() {
        let mut v = [50.0];
        scale(&mut v, &[0.0], &[100.0]);
        assert_eq!(v[0], 0.5);
        let mut out_of_range = [150.0, -3.0];
        scale(&mut out_of_range, &[0.0, 0.0], &[100.0, 100.0]);
        assert_eq!(out_of_range, [1.0, 0.0]);
    }

    #[test]
    fn streaming_fit_equals_two_pass_brute_force() {
        let flows: Vec<EncodedFlow> = (1..12).map(|n| encode_flow(&flow(n), 300, 4).unwrap()).collect();
        let stats = NormalizationStats::fit(&flows).unwrap();
        for p in 0..FL_LEN {
            let column: Vec<f64> = flows.iter().map(|f| f.fl.values()[p]).collect();
            assert_eq!(stats.fl_min[p], column.iter().cloned().fold(f64::INFINITY, f64::min));
            assert_eq!(stats.fl_max[p], column.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        for p in 0..PL_LEN {
            let column: Vec<f64> = flows
                .iter()
                .flat_map(|f| f.pls[..f.real_packets].iter().map(move |pl| pl.values()[p]))
                .collect();
            assert_eq!(stats.pl_min[p], column.iter().cloned().fold(f64::INFINITY, f64::min));
            assert_eq!(stats.pl_max[p], column.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        assert!(NormalizationStats::fit(std::iter::empty()).is_err());
    }
}
