//! Seeded synthetic HTTP traffic with class-conditional profiles, and
//! conversion of generated flows into TCP segments for capture files.

use std::net::Ipv4Addr;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::capture::{
    segment_to_packet, write_capture, FiveTuple, RawPacket, TcpFlags, TcpSegment, Timestamp,
};
use crate::http::{serialize_message, Flow, HttpMessage, HttpVersion, Label};

const DEFAULT_PROFILES: &str = include_str!("../../profiles/default.json");

/// 2026-01-01T00:00:00Z
const BASE_MICROS: u64 = 1_767_225_600_000_000;
pub const DEFAULT_MSS: usize = 1460;

/// Integer-valued distribution, always clamped to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntDist {
    Uniform { min: u64, max: u64 },
    LogNormal { median: f64, sigma: f64, min: u64, max: u64 },
}

impl IntDist {
    fn bounds(&self) -> (u64, u64) {
        match *self {
            IntDist::Uniform { min, max } | IntDist::LogNormal { min, max, .. } => (min, max),
        }
    }

    fn validate(&self, what: &str) -> Result<(), ExperimentError> {
        let (min, max) = self.bounds();
        let ok = min <= max
            && match *self {
                IntDist::Uniform { .. } => true,
                IntDist::LogNormal { median, sigma, .. } => {
                    median > 0.0 && sigma >= 0.0 && median.is_finite() && sigma.is_finite()
                }
            };
        if ok {
            Ok(())
        } else {
            Err(ExperimentError::BadProfile(format!("{what}: improper distribution {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            IntDist::Uniform { min, max } => rng.random_range(min..=max),
            IntDist::LogNormal { median, sigma, min, max } => {
                let d = LogNormal::new(median.ln(), sigma).expect("validated");
                (d.sample(rng).round() as u64).clamp(min, max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weighted<T> {
    pub value: T,
    pub weight: f64,
}

fn check_weights<T>(items: &[Weighted<T>], what: &str) -> Result<(), ExperimentError> {
    let proper = !items.is_empty()
        && items.iter().all(|w| w.weight >= 0.0 && w.weight.is_finite())
        && items.iter().map(|w| w.weight).sum::<f64>() > 0.0;
    if proper {
        Ok(())
    } else {
        Err(ExperimentError::BadProfile(format!("{what}: weights must be non-negative with a positive sum")))
    }
}

fn pick<'a, T, R: Rng + ?Sized>(items: &'a [Weighted<T>], rng: &mut R) -> &'a T {
    let idx = WeightedIndex::new(items.iter().map(|w| w.weight)).expect("validated weights");
    &items[idx.sample(rng)].value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Charset {
    Lower,
    Alnum,
    Hex,
    Base64,
    Text,
    Binary,
}

impl Charset {
    fn string<R: Rng + ?Sized>(self, len: usize, rng: &mut R) -> String {
        String::from_utf8(self.bytes(len, rng)).expect("ascii charsets")
    }

    fn bytes<R: Rng + ?Sized>(self, len: usize, rng: &mut R) -> Vec<u8> {
        const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
        const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
        const HEX: &[u8] = b"0123456789abcdef";
        const B64: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
        const TEXT: &[u8] = b"abcdefghijklmnopqrstuvwxyz      ABCDEFGHIJ0123456789<>/=\".,;:-";
        let table = match self {
            Charset::Lower => LOWER,
            Charset::Alnum => ALNUM,
            Charset::Hex => HEX,
            Charset::Base64 => B64,
            Charset::Text => TEXT,
            Charset::Binary => return (0..len).map(|_| rng.random()).collect(),
        };
        (0..len).map(|_| table[rng.random_range(0..table.len())]).collect()
    }
}

/// A header emitted with some probability, in profile order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeaderRule {
    pub name: String,
    pub probability: f64,
}

/// One family of flows within a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantProfile {
    pub name: String,
    pub weight: f64,
    /// Request/response pairs per flow.
    pub exchanges: Vec<Weighted<usize>>,
    /// Probability that the final request gets no response.
    pub drop_last_response: f64,
    pub methods: Vec<Weighted<String>>,
    pub versions: Vec<Weighted<HttpVersion>>,
    pub server_ports: Vec<Weighted<u16>>,
    pub host_label_len: IntDist,
    pub tlds: Vec<Weighted<String>>,
    pub ip_host_probability: f64,
    pub path_depth: IntDist,
    pub path_segment_len: IntDist,
    pub path_charset: Charset,
    pub extensions: Vec<Weighted<String>>,
    pub query_params: IntDist,
    pub query_key_len: IntDist,
    pub query_value_len: IntDist,
    pub query_charset: Charset,
    /// Probability that a later request repeats the flow's first URL.
    pub reuse_url: f64,
    pub user_agents: Vec<Weighted<String>>,
    pub request_headers: Vec<HeaderRule>,
    /// Body size of requests whose method carries one.
    pub request_body_len: IntDist,
    pub request_body_charset: Charset,
    pub interval_ms: IntDist,
    pub rtt_ms: IntDist,
    pub think_ms: IntDist,
    pub status_codes: Vec<Weighted<u16>>,
    pub response_headers: Vec<HeaderRule>,
    pub response_body_len: IntDist,
    pub response_body_charset: Charset,
    pub client_ttl: Vec<Weighted<u8>>,
    pub server_ttl: IntDist,
}

impl VariantProfile {
    fn validate(&self) -> Result<(), ExperimentError> {
        let ctx = |f: &str| format!("{}.{f}", self.name);
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(ExperimentError::BadProfile(ctx("weight")));
        }
        check_weights(&self.exchanges, &ctx("exchanges"))?;
        if self.exchanges.iter().any(|w| w.value == 0) {
            return Err(ExperimentError::BadProfile(ctx("exchanges must be at least 1")));
        }
        check_weights(&self.methods, &ctx("methods"))?;
        check_weights(&self.versions, &ctx("versions"))?;
        check_weights(&self.server_ports, &ctx("server_ports"))?;
        check_weights(&self.tlds, &ctx("tlds"))?;
        check_weights(&self.extensions, &ctx("extensions"))?;
        check_weights(&self.user_agents, &ctx("user_agents"))?;
        check_weights(&self.status_codes, &ctx("status_codes"))?;
        check_weights(&self.client_ttl, &ctx("client_ttl"))?;
        if self.server_ports.iter().any(|w| w.value == 0) {
            return Err(ExperimentError::BadProfile(ctx("server port 0")));
        }
        for (name, d) in [
            ("host_label_len", &self.host_label_len),
            ("path_depth", &self.path_depth),
            ("path_segment_len", &self.path_segment_len),
            ("query_params", &self.query_params),
            ("query_key_len", &self.query_key_len),
            ("query_value_len", &self.query_value_len),
            ("request_body_len", &self.request_body_len),
            ("interval_ms", &self.interval_ms),
            ("rtt_ms", &self.rtt_ms),
            ("think_ms", &self.think_ms),
            ("response_body_len", &self.response_body_len),
            ("server_ttl", &self.server_ttl),
        ] {
            d.validate(&ctx(name))?;
        }
        if self.server_ttl.bounds().1 > 255 || self.host_label_len.bounds().0 == 0 {
            return Err(ExperimentError::BadProfile(ctx("server_ttl or host_label_len out of range")));
        }
        for p in [self.drop_last_response, self.ip_host_probability, self.reuse_url]
            .into_iter()
            .chain(self.request_headers.iter().map(|h| h.probability))
            .chain(self.response_headers.iter().map(|h| h.probability))
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(ExperimentError::BadProfile(ctx("probability outside [0,1]")));
            }
        }
        for h in self.request_headers.iter().chain(&self.response_headers) {
            if h.name.is_empty() || !h.name.bytes().all(|b| b.is_ascii_graphic() && b != b':') {
                return Err(ExperimentError::BadProfile(ctx(&format!("header name {:?}", h.name))));
            }
        }
        let methods_ok = self
            .methods
            .iter()
            .all(|m| !m.value.is_empty() && m.value.bytes().all(|b| b.is_ascii_uppercase()) && m.value != "HEAD");
        let codes_ok = self.status_codes.iter().all(|c| (200..=599).contains(&c.value));
        let versions_ok = self.versions.iter().all(|v| v.value != HttpVersion::V0_9);
        if !(methods_ok && codes_ok && versions_ok) {
            return Err(ExperimentError::BadProfile(ctx(
                "methods must be uppercase tokens other than HEAD, status codes 200-599, versions 1.0/1.1",
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub variants: Vec<VariantProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorProfiles {
    pub benign: ClassProfile,
    pub trojan: ClassProfile,
}

impl Default for GeneratorProfiles {
    fn default() -> Self {
        Self::from_json(DEFAULT_PROFILES).expect("bundled profiles are valid")
    }
}

impl GeneratorProfiles {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let p: Self = serde_json::from_str(text).map_err(|e| ExperimentError::BadProfile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ExperimentError::BadProfile(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        for (class, c) in [("benign", &self.benign), ("trojan", &self.trojan)] {
            if c.variants.is_empty() || c.variants.iter().map(|v| v.weight).sum::<f64>() <= 0.0 {
                return Err(ExperimentError::BadProfile(format!("{class}: no variant with positive weight")));
            }
            for v in &c.variants {
                v.validate()?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        hex::encode(Sha256::digest(json))
    }
}

/// Endpoints and timing parsed back out of a generated flow id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowEndpoints {
    pub client: (Ipv4Addr, u16),
    pub server: (Ipv4Addr, u16),
    pub start: Timestamp,
}

impl FlowEndpoints {
    pub fn flow_id(&self) -> String {
        format!(
            "{}:{}-{}:{}-{}",
            self.client.0,
            self.client.1,
            self.server.0,
            self.server.1,
            self.start.as_micros()
        )
    }

    pub fn parse(flow_id: &str) -> Option<Self> {
        let mut parts = flow_id.split('-');
        let endpoint = |s: &str| -> Option<(Ipv4Addr, u16)> {
            let (ip, port) = s.rsplit_once(':')?;
            Some((ip.parse().ok()?, port.parse().ok()?))
        };
        let client = endpoint(parts.next()?)?;
        let server = endpoint(parts.next()?)?;
        let start = Timestamp::from_micros(parts.next()?.parse().ok()?);
        if parts.next().is_some() {
            return None;
        }
        Some(Self { client, server, start })
    }
}

const ACCEPT: &[&str] = &[
    "*/*",
    "text/html,application/xhtml+xml,application/xml;q=0.9,*/*;q=0.8",
    "application/json, text/plain, */*",
    "image/avif,image/webp,*/*",
];
const LANGUAGES: &[&str] = &["en-US,en;q=0.9", "zh-CN,zh;q=0.9,en;q=0.8", "de-DE,de;q=0.8,en;q=0.5", "en"];
const ENCODINGS: &[&str] = &["gzip, deflate", "gzip, deflate, br", "identity"];
const DATES: &[&str] = &[
    "Thu, 01 Jan 2026 08:12:44 GMT",
    "Fri, 02 Jan 2026 17:03:09 GMT",
    "Mon, 05 Jan 2026 23:59:01 GMT",
    "Wed, 31 Dec 2025 11:30:00 GMT",
];
const SERVERS: &[&str] = &["nginx/1.18.0", "Apache/2.4.41 (Ubuntu)", "Microsoft-IIS/10.0", "cloudflare", "openresty"];
const CONTENT_TYPES: &[&str] = &[
    "text/html; charset=utf-8",
    "application/json",
    "image/png",
    "application/javascript",
    "text/css",
    "application/octet-stream",
    "text/plain",
];
const REQUEST_TYPES: &[&str] = &["application/x-www-form-urlencoded", "application/json", "application/octet-stream"];

fn choose<'a, R: Rng + ?Sized>(items: &[&'a str], rng: &mut R) -> &'a str {
    items[rng.random_range(0..items.len())]
}

struct FlowContext {
    host: String,
    port: u16,
    user_agent: String,
    cookie: String,
}

fn header_value<R: Rng + ?Sized>(name: &str, ctx: &FlowContext, v: &VariantProfile, rng: &mut R) -> String {
    match name.to_ascii_lowercase().as_str() {
        "host" if ctx.port == 80 => ctx.host.clone(),
        "host" => format!("{}:{}", ctx.host, ctx.port),
        "user-agent" => ctx.user_agent.clone(),
        "accept" => choose(ACCEPT, rng).into(),
        "accept-language" => choose(LANGUAGES, rng).into(),
        "accept-encoding" => choose(ENCODINGS, rng).into(),
        "connection" => "keep-alive".into(),
        "cookie" => ctx.cookie.clone(),
        "referer" => format!("http://{}{}", ctx.host, random_path(v, rng)),
        "cache-control" => choose(&["no-cache", "max-age=0", "no-store", "private, max-age=600"], rng).into(),
        "pragma" => "no-cache".into(),
        "upgrade-insecure-requests" | "dnt" => "1".into(),
        "x-requested-with" => "XMLHttpRequest".into(),
        "if-modified-since" | "date" | "last-modified" | "expires" => choose(DATES, rng).into(),
        "server" => choose(SERVERS, rng).into(),
        "set-cookie" => format!("id={}; Path=/; HttpOnly", Charset::Alnum.string(rng.random_range(12..33), rng)),
        "etag" => format!("\"{}\"", Charset::Hex.string(16, rng)),
        "vary" => "Accept-Encoding".into(),
        "x-powered-by" => choose(&["PHP/7.4.3", "ASP.NET", "Express"], rng).into(),
        "keep-alive" => "timeout=5, max=100".into(),
        "accept-ranges" => "bytes".into(),
        "content-type" => choose(CONTENT_TYPES, rng).into(),
        _ => Charset::Alnum.string(rng.random_range(8..25), rng),
    }
}

fn random_path<R: Rng + ?Sized>(v: &VariantProfile, rng: &mut R) -> String {
    let depth = v.path_depth.sample(rng);
    let mut path = String::new();
    for _ in 0..depth {
        path.push('/');
        let len = v.path_segment_len.sample(rng).max(1) as usize;
        path.push_str(&v.path_charset.string(len, rng));
    }
    let ext = pick(&v.extensions, rng);
    if depth == 0 || ext.is_empty() {
        path.push('/');
    }
    path.push_str(ext);
    path
}

fn random_url<R: Rng + ?Sized>(v: &VariantProfile, rng: &mut R) -> String {
    let mut url = random_path(v, rng);
    let params = v.query_params.sample(rng);
    for i in 0..params {
        url.push(if i == 0 { '?' } else { '&' });
        let key_len = v.query_key_len.sample(rng).max(1) as usize;
        url.push_str(&Charset::Lower.string(key_len, rng));
        url.push('=');
        let len = v.query_value_len.sample(rng) as usize;
        url.push_str(&v.query_charset.string(len, rng));
    }
    url
}

fn random_host<R: Rng + ?Sized>(v: &VariantProfile, server: Ipv4Addr, rng: &mut R) -> String {
    if rng.random_bool(v.ip_host_probability) {
        return server.to_string();
    }
    let mut host = String::new();
    if rng.random_bool(0.6) {
        host.push_str("www.");
    }
    let len = v.host_label_len.sample(rng) as usize;
    host.push_str(&Charset::Lower.string(len, rng));
    host.push('.');
    host.push_str(pick(&v.tlds, rng));
    host
}

fn body_allowed(status: u16) -> bool {
    !(status == 204 || status == 304 || (100..200).contains(&status))
}

fn finish_message(mut m: HttpMessage) -> HttpMessage {
    m.body_len = m.body.len();
    m.wire_length = serialize_message(&m).len();
    m
}

/// Client-side address of the `index`-th generated flow, unique up to 2^24
/// flows.
fn client_ip(index: usize) -> Ipv4Addr {
    let i = index as u32;
    Ipv4Addr::new(10, ((i / 254 / 256) % 256) as u8, ((i / 254) % 256) as u8, (i % 254 + 1) as u8)
}

fn generate_flow<R: Rng + ?Sized>(v: &VariantProfile, label: Label, index: usize, rng: &mut R) -> Flow {
    let server_ip = Ipv4Addr::new(
        rng.random_range(23..=220),
        rng.random(),
        rng.random(),
        rng.random_range(1..=254),
    );
    let endpoints = FlowEndpoints {
        client: (client_ip(index), rng.random_range(49152..=65535)),
        server: (server_ip, *pick(&v.server_ports, rng)),
        start: Timestamp::from_micros(BASE_MICROS + rng.random_range(0..86_400_000_000u64)),
    };
    let ctx = FlowContext {
        host: random_host(v, server_ip, rng),
        port: endpoints.server.1,
        user_agent: pick(&v.user_agents, rng).clone(),
        cookie: format!("sid={}", Charset::Alnum.string(rng.random_range(16..41), rng)),
    };
    let version = *pick(&v.versions, rng);
    let client_ttl = *pick(&v.client_ttl, rng);
    let server_ttl = v.server_ttl.sample(rng) as u8;
    let exchanges = *pick(&v.exchanges, rng);
    let first_url = random_url(v, rng);

    let rtt = |rng: &mut R| v.rtt_ms.sample(rng) * 1000 + rng.random_range(0..1000);
    // Handshake, then the first request.
    let mut t = endpoints.start.as_micros() + rtt(rng) + 1000;
    let mut messages = Vec::with_capacity(2 * exchanges);
    for k in 0..exchanges {
        let method = pick(&v.methods, rng).clone();
        let url = if k == 0 || rng.random_bool(v.reuse_url) {
            first_url.clone()
        } else {
            random_url(v, rng)
        };
        let mut req = HttpMessage::request(&method, &url, version);
        for rule in &v.request_headers {
            if rng.random_bool(rule.probability) {
                let value = header_value(&rule.name, &ctx, v, rng);
                req.headers.push((rule.name.clone(), value));
            }
        }
        if method != "GET" {
            let len = v.request_body_len.sample(rng) as usize;
            req.body = v.request_body_charset.bytes(len, rng);
            if !req.body.is_empty() {
                req.headers.push(("Content-Type".into(), choose(REQUEST_TYPES, rng).into()));
                req.headers.push(("Content-Length".into(), req.body.len().to_string()));
            }
        }
        req.src_port = endpoints.client.1;
        req.dst_port = endpoints.server.1;
        req.ttl = client_ttl;
        req.timestamp = Timestamp::from_micros(t);
        messages.push(finish_message(req));

        let last = k + 1 == exchanges;
        t += rtt(rng) + v.think_ms.sample(rng) * 1000 + 1;
        if !(last && rng.random_bool(v.drop_last_response)) {
            let status = *pick(&v.status_codes, rng);
            let mut resp = HttpMessage::response(status, version);
            for rule in &v.response_headers {
                if !rule.name.eq_ignore_ascii_case("content-length") && rng.random_bool(rule.probability) {
                    let value = header_value(&rule.name, &ctx, v, rng);
                    resp.headers.push((rule.name.clone(), value));
                }
            }
            if body_allowed(status) {
                let len = v.response_body_len.sample(rng) as usize;
                resp.body = v.response_body_charset.bytes(len, rng);
                resp.headers.push(("Content-Length".into(), resp.body.len().to_string()));
            }
            resp.src_port = endpoints.server.1;
            resp.dst_port = endpoints.client.1;
            resp.ttl = server_ttl;
            resp.timestamp = Timestamp::from_micros(t);
            messages.push(finish_message(resp));
        }
        t += v.interval_ms.sample(rng) * 1000 + rng.random_range(1..1000);
    }
    let segments = messages
        .iter()
        .map(|m| m.wire_length.div_ceil(DEFAULT_MSS))
        .sum();
    Flow {
        flow_id: endpoints.flow_id(),
        label,
        lossy: false,
        segments: Some(segments),
        messages,
    }
}

/// `generate_corpus(profiles, n_benign, n_malicious, seed)`: labeled flows in
/// a seeded random order.
pub fn generate_corpus(
    profiles: &GeneratorProfiles,
    n_benign: usize,
    n_malicious: usize,
    seed: u64,
) -> Result<Vec<Flow>, ExperimentError> {
    profiles.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flows = Vec::with_capacity(n_benign + n_malicious);
    for (class, label, n) in [
        (&profiles.benign, Label::Benign, n_benign),
        (&profiles.trojan, Label::Malicious, n_malicious),
    ] {
        let weights = WeightedIndex::new(class.variants.iter().map(|v| v.weight)).expect("validated");
        for _ in 0..n {
            let variant = &class.variants[weights.sample(&mut rng)];
            let index = flows.len();
            flows.push(generate_flow(variant, label, index, &mut rng));
        }
    }
    flows.shuffle(&mut rng);
    Ok(flows)
}

/// Aggregate size statistics of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub flows: usize,
    pub messages: usize,
    pub mean_message_bytes: f64,
    pub mean_flow_messages: f64,
}

pub fn corpus_stats(flows: &[Flow]) -> CorpusStats {
    let messages: usize = flows.iter().map(|f| f.messages.len()).sum();
    let bytes: usize = flows
        .iter()
        .flat_map(|f| f.messages.iter().map(|m| m.wire_length))
        .sum();
    CorpusStats {
        flows: flows.len(),
        messages,
        mean_message_bytes: if messages == 0 { 0.0 } else { bytes as f64 / messages as f64 },
        mean_flow_messages: if flows.is_empty() { 0.0 } else { messages as f64 / flows.len() as f64 },
    }
}

/// Impairments applied while turning flows into segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub mss: usize,
    /// Probability that a data segment is sent twice.
    pub retransmit_probability: f64,
    /// Probability that a data segment swaps places with its successor.
    pub reorder_probability: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            mss: DEFAULT_MSS,
            retransmit_probability: 0.0,
            reorder_probability: 0.0,
        }
    }
}

fn isn(flow_id: &str, direction: u8) -> u32 {
    let d = Sha256::new().chain_update(flow_id.as_bytes()).chain_update([direction]).finalize();
    u32::from_le_bytes([d[0], d[1], d[2], d[3]])
}

/// Full TCP conversation for a generated flow: handshake, data segments of
/// at most `mss` bytes timestamped from their message, and FIN teardown.
pub fn flow_to_segments<R: Rng + ?Sized>(
    flow: &Flow,
    opts: &SynthOptions,
    rng: &mut R,
) -> Result<Vec<TcpSegment>, ExperimentError> {
    let ep = FlowEndpoints::parse(&flow.flow_id)
        .ok_or_else(|| ExperimentError::BadFlow(format!("flow id {:?} carries no endpoints", flow.flow_id)))?;
    if opts.mss == 0 {
        return Err(ExperimentError::BadFlow("mss must be positive".into()));
    }
    let up = FiveTuple {
        src_ip: ep.client.0,
        dst_ip: ep.server.0,
        src_port: ep.client.1,
        dst_port: ep.server.1,
    };
    let down = up.reversed();
    let (mut cseq, mut sseq) = (isn(&flow.flow_id, 0), isn(&flow.flow_id, 1));
    let client_ttl = flow.messages.iter().find(|m| m.src_port == ep.client.1).map_or(64, |m| m.ttl);
    let server_ttl = flow.messages.iter().find(|m| m.src_port == ep.server.1).map_or(64, |m| m.ttl);
    let t0 = ep.start.as_micros();
    let seg = |tuple, seq, ack, flags, ttl, t: u64, payload: Vec<u8>| TcpSegment {
        tuple,
        seq,
        ack,
        flags,
        ip_ttl: ttl,
        timestamp: Timestamp::from_micros(t),
        payload,
    };
    let syn = TcpFlags { syn: true, ..TcpFlags::default() };
    let syn_ack = TcpFlags { syn: true, ack: true, ..TcpFlags::default() };
    let ack = TcpFlags { ack: true, ..TcpFlags::default() };
    let psh = TcpFlags { ack: true, psh: true, ..TcpFlags::default() };
    let fin = TcpFlags { ack: true, fin: true, ..TcpFlags::default() };

    let mut out = vec![
        seg(up, cseq, 0, syn, client_ttl, t0, vec![]),
        seg(down, sseq, cseq.wrapping_add(1), syn_ack, server_ttl, t0 + 1, vec![]),
    ];
    cseq = cseq.wrapping_add(1);
    sseq = sseq.wrapping_add(1);
    out.push(seg(up, cseq, sseq, ack, client_ttl, t0 + 2, vec![]));
    let mut last_t = t0 + 2;
    for m in &flow.messages {
        let from_client = m.src_port == ep.client.1;
        let bytes = serialize_message(m);
        let base = m.timestamp.as_micros();
        let chunks: Vec<&[u8]> = bytes.chunks(opts.mss).collect();
        let mut data = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let flags = if i + 1 == chunks.len() { psh } else { ack };
            let t = base + i as u64;
            let s = if from_client {
                let s = seg(up, cseq, sseq, flags, m.ttl, t, chunk.to_vec());
                cseq = cseq.wrapping_add(chunk.len() as u32);
                s
            } else {
                let s = seg(down, sseq, cseq, flags, m.ttl, t, chunk.to_vec());
                sseq = sseq.wrapping_add(chunk.len() as u32);
                s
            };
            last_t = last_t.max(t);
            data.push(s);
        }
        let mut i = 0;
        while i + 1 < data.len() {
            if rng.random_bool(opts.reorder_probability) {
                data.swap(i, i + 1);
                i += 1;
            }
            i += 1;
        }
        for s in data {
            let again = rng.random_bool(opts.retransmit_probability);
            if again {
                let mut dup = s.clone();
                dup.timestamp = Timestamp::from_micros(s.timestamp.as_micros() + 200_000);
                out.push(s);
                out.push(dup);
            } else {
                out.push(s);
            }
        }
    }
    let t = last_t + 300_000;
    out.push(seg(up, cseq, sseq, fin, client_ttl, t, vec![]));
    out.push(seg(down, sseq, cseq.wrapping_add(1), fin, server_ttl, t + 1, vec![]));
    out.push(seg(up, cseq.wrapping_add(1), sseq.wrapping_add(1), ack, client_ttl, t + 2, vec![]));
    Ok(out)
}

/// Packets of all flows merged in timestamp order (stable).
pub fn flows_to_packets(flows: &[Flow], opts: &SynthOptions, seed: u64) -> Result<Vec<RawPacket>, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    for f in flows {
        segments.extend(flow_to_segments(f, opts, &mut rng)?);
    }
    segments.sort_by_key(|s| s.timestamp);
    Ok(segments.iter().map(segment_to_packet).collect())
}

pub fn write_corpus_pcap(
    path: impl AsRef<Path>,
    flows: &[Flow],
    opts: &SynthOptions,
    seed: u64,
) -> Result<usize, ExperimentError> {
    let packets = flows_to_packets(flows, opts, seed)?;
    write_capture(path, &packets)?;
    Ok(packets.len())
}
