//! HTTP/1.x message parsing over reassembled byte streams.

use std::collections::VecDeque;

use super::{Flow, HttpError, HttpMessage, HttpVersion, Label, MessageKind};
use crate::capture::{DirectionStream, TcpStreamPair};

/// Largest accepted header section, start line included.
pub const MAX_HEADER_SECTION: usize = 64 * 1024;
/// Largest accepted single head line.
pub const MAX_LINE: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Messages skipped for exceeding limits or bad framing.
    pub malformed: usize,
    /// Directions given up on after losing message boundaries.
    pub abandoned: usize,
    /// Directions carrying data that never looked like HTTP.
    pub non_http: usize,
}

fn latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

pub(crate) fn latin1_bytes(s: &str) -> impl Iterator<Item = u8> + '_ {
    s.chars().map(|c| u8::try_from(u32::from(c)).unwrap_or(b'?'))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum StartLine {
    Request {
        method: String,
        url: String,
        version: HttpVersion,
    },
    Response {
        version: HttpVersion,
        status: u16,
    },
}

#[derive(Debug)]
struct Head {
    start: StartLine,
    headers: Vec<(String, String)>,
    len: usize,
}

#[derive(Debug)]
enum HeadOutcome {
    Complete(Head),
    Incomplete,
    /// Limits exceeded; parsing may resume after the next blank line.
    Oversized,
    /// The bytes at this position are not an HTTP start line.
    NotHttp,
}

fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn parse_start_line(line: &str) -> Option<StartLine> {
    if let Some(rest) = line.strip_prefix("HTTP/") {
        let mut parts = rest.splitn(3, ' ');
        let version = HttpVersion::from_token(&format!("HTTP/{}", parts.next()?))?;
        if version == HttpVersion::V0_9 {
            return None;
        }
        let code = parts.next()?;
        if code.len() != 3 {
            return None;
        }
        let status: u16 = code.parse().ok()?;
        return (100..=599)
            .contains(&status)
            .then_some(StartLine::Response { version, status });
    }
    let parts: Vec<&str> = line.split(' ').collect();
    match parts.as_slice() {
        [method, url, version] if is_token(method) && !url.is_empty() => {
            Some(StartLine::Request {
                method: method.to_string(),
                url: url.to_string(),
                version: HttpVersion::from_token(version)?,
            })
        }
        // Simple (0.9) request: no version, no headers.
        [method, url] if *method == "GET" && !url.is_empty() => Some(StartLine::Request {
            method: method.to_string(),
            url: url.to_string(),
            version: HttpVersion::V0_9,
        }),
        _ => None,
    }
}

/// Splits off one line ending in LF, returning it without CR/LF.
fn take_line(buf: &[u8]) -> Option<(&[u8], usize)> {
    let nl = buf.iter().position(|&b| b == b'\n')?;
    let line = &buf[..nl];
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    Some((line, nl + 1))
}

fn parse_head(buf: &[u8]) -> HeadOutcome {
    let Some((first, mut pos)) = take_line(buf) else {
        return if !start_line_prefix_plausible(buf) {
            HeadOutcome::NotHttp
        } else if buf.len() > MAX_LINE {
            HeadOutcome::Oversized
        } else {
            HeadOutcome::Incomplete
        };
    };
    if first.len() > MAX_LINE {
        return HeadOutcome::Oversized;
    }
    let Some(start) = parse_start_line(&latin1(first)) else {
        return HeadOutcome::NotHttp;
    };
    if matches!(
        start,
        StartLine::Request {
            version: HttpVersion::V0_9,
            ..
        }
    ) {
        return HeadOutcome::Complete(Head {
            start,
            headers: Vec::new(),
            len: pos,
        });
    }
    let mut headers = Vec::new();
    loop {
        if pos > MAX_HEADER_SECTION {
            return HeadOutcome::Oversized;
        }
        let Some((line, used)) = take_line(&buf[pos..]) else {
            let rest = buf.len() - pos;
            return if rest > MAX_LINE || buf.len() > MAX_HEADER_SECTION {
                HeadOutcome::Oversized
            } else {
                HeadOutcome::Incomplete
            };
        };
        if line.len() > MAX_LINE {
            return HeadOutcome::Oversized;
        }
        pos += used;
        if line.is_empty() {
            break;
        }
        let text = latin1(line);
        let Some((name, value)) = text.split_once(':') else {
            return HeadOutcome::Oversized;
        };
        headers.push((name.trim().to_string(), value.trim().to_string()));
    }
    if pos > MAX_HEADER_SECTION {
        return HeadOutcome::Oversized;
    }
    HeadOutcome::Complete(Head {
        start,
        headers,
        len: pos,
    })
}

/// Whether an unterminated fragment could still become a start line.
fn start_line_prefix_plausible(buf: &[u8]) -> bool {
    let head = &buf[..buf.len().min(5)];
    if b"HTTP/".starts_with(head) {
        return true;
    }
    let token_end = buf.iter().position(|&b| b == b' ');
    let token = &buf[..token_end.unwrap_or(buf.len())];
    !token.is_empty()
        && token.len() <= 20
        && token.iter().all(|&b| b.is_ascii_uppercase() || b == b'-')
}

fn find_blank_line(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n").map(|p| p + 4)
}

enum BodyFraming {
    None,
    Length(usize),
    Chunked,
    UntilClose,
}

fn header_value<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

fn framing(
    head: &Head,
    request_method: Option<&str>,
) -> Result<BodyFraming, HttpError> {
    if let StartLine::Response { status, .. } = head.start {
        let bodiless = request_method == Some("HEAD")
            || (100..200).contains(&status)
            || status == 204
            || status == 304;
        if bodiless {
            return Ok(BodyFraming::None);
        }
    }
    if header_value(&head.headers, "transfer-encoding")
        .is_some_and(|v| v.to_ascii_lowercase().contains("chunked"))
    {
        return Ok(BodyFraming::Chunked);
    }
    if let Some(v) = header_value(&head.headers, "content-length") {
        let n = v
            .parse::<usize>()
            .map_err(|_| HttpError::MalformedMessage(format!("content-length {v:?}")))?;
        return Ok(BodyFraming::Length(n));
    }
    Ok(match head.start {
        StartLine::Response { .. } => BodyFraming::UntilClose,
        StartLine::Request { .. } => BodyFraming::None,
    })
}

/// Decodes a chunked body, returning (decoded bytes, wire bytes consumed).
/// A body cut off by the end of the stream yields what was available.
fn decode_chunked(buf: &[u8]) -> (Vec<u8>, usize) {
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        let Some((line, used)) = take_line(&buf[pos..]) else {
            return (out, buf.len());
        };
        let text = latin1(line);
        let size_text = text.split(';').next().unwrap_or("").trim();
        let Ok(size) = usize::from_str_radix(size_text, 16) else {
            return (out, buf.len());
        };
        pos += used;
        if size == 0 {
            // Trailers up to the terminating blank line.
            while let Some((line, used)) = take_line(&buf[pos..]) {
                pos += used;
                if line.is_empty() {
                    return (out, pos);
                }
            }
            return (out, buf.len());
        }
        let end = (pos + size).min(buf.len());
        out.extend_from_slice(&buf[pos..end]);
        if end < pos + size {
            return (out, buf.len());
        }
        pos = end;
        match take_line(&buf[pos..]) {
            Some((_, used)) => pos += used,
            None => return (out, buf.len()),
        }
    }
}

struct Parsed {
    message: HttpMessage,
    offset: usize,
}

struct DirectionContext<'a> {
    stream: &'a DirectionStream,
    src_port: u16,
    dst_port: u16,
    fallback: &'a TcpStreamPair,
}

fn parse_direction(
    ctx: &DirectionContext<'_>,
    mut request_methods: Option<&mut VecDeque<String>>,
    report: &mut ParseReport,
) -> Vec<Parsed> {
    let buf = &ctx.stream.bytes[..];
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        // Stray line breaks between messages are tolerated.
        if buf[pos] == b'\r' || buf[pos] == b'\n' {
            pos += 1;
            continue;
        }
        let head = match parse_head(&buf[pos..]) {
            HeadOutcome::Complete(h) => h,
            HeadOutcome::Incomplete => break,
            HeadOutcome::NotHttp => {
                if out.is_empty() && report.malformed == 0 {
                    report.non_http += 1;
                } else {
                    report.abandoned += 1;
                }
                break;
            }
            HeadOutcome::Oversized => {
                report.malformed += 1;
                let skip_from = pos + MAX_LINE.min(buf.len() - pos);
                match find_blank_line(&buf[skip_from..]) {
                    Some(n) => {
                        pos = skip_from + n;
                        continue;
                    }
                    None => {
                        report.abandoned += 1;
                        break;
                    }
                }
            }
        };
        let method_for_response = match (&head.start, request_methods.as_deref_mut()) {
            (StartLine::Response { status, .. }, Some(q)) if *status >= 200 => q.pop_front(),
            _ => None,
        };
        let body_start = pos + head.len;
        let (body, body_wire) = match framing(&head, method_for_response.as_deref()) {
            Err(_) => {
                report.malformed += 1;
                pos = body_start;
                continue;
            }
            Ok(BodyFraming::None) => (Vec::new(), 0),
            Ok(BodyFraming::Length(n)) => {
                let end = (body_start + n).min(buf.len());
                (buf[body_start..end].to_vec(), end - body_start)
            }
            Ok(BodyFraming::Chunked) => decode_chunked(&buf[body_start..]),
            Ok(BodyFraming::UntilClose) => (buf[body_start..].to_vec(), buf.len() - body_start),
        };
        let chunk = ctx.stream.chunk_at(pos);
        let (method, url, status_code, version, kind) = match head.start {
            StartLine::Request {
                method,
                url,
                version,
            } => (Some(method), Some(url), None, version, MessageKind::Request),
            StartLine::Response { version, status } => {
                (None, None, Some(status), version, MessageKind::Response)
            }
        };
        out.push(Parsed {
            message: HttpMessage {
                kind,
                method,
                url,
                status_code,
                version,
                headers: head.headers,
                body_len: body.len(),
                body,
                wire_length: head.len + body_wire,
                src_port: ctx.src_port,
                dst_port: ctx.dst_port,
                ttl: chunk.map_or(0, |c| c.ttl),
                timestamp: chunk.map_or(ctx.fallback.first_timestamp, |c| c.timestamp),
                masked: None,
            },
            offset: pos,
        });
        pos = body_start + body_wire;
    }
    out
}

/// `parse_messages(stream)` together with counts of what was skipped.
pub fn parse_messages_with_report(stream: &TcpStreamPair) -> (Vec<HttpMessage>, ParseReport) {
    let mut report = ParseReport::default();
    let key = stream.key;
    let up = parse_direction(
        &DirectionContext {
            stream: &stream.client_to_server,
            src_port: key.src_port,
            dst_port: key.dst_port,
            fallback: stream,
        },
        None,
        &mut report,
    );
    let mut methods: VecDeque<String> = up
        .iter()
        .filter_map(|p| p.message.method.clone())
        .collect();
    let down = parse_direction(
        &DirectionContext {
            stream: &stream.server_to_client,
            src_port: key.dst_port,
            dst_port: key.src_port,
            fallback: stream,
        },
        Some(&mut methods),
        &mut report,
    );
    let mut all: Vec<(u8, Parsed)> = up
        .into_iter()
        .map(|p| (0, p))
        .chain(down.into_iter().map(|p| (1, p)))
        .collect();
    all.sort_by(|(da, a), (db, b)| {
        (a.message.timestamp, *da, a.offset).cmp(&(b.message.timestamp, *db, b.offset))
    });
    (all.into_iter().map(|(_, p)| p.message).collect(), report)
}

/// `parse_messages(stream)`: both directions merged by (timestamp, capture order).
pub fn parse_messages(stream: &TcpStreamPair) -> Vec<HttpMessage> {
    parse_messages_with_report(stream).0
}

/// `build_flow(stream, label)`.
pub fn build_flow(stream: &TcpStreamPair, label: Label) -> Result<Flow, HttpError> {
    let messages = parse_messages(stream);
    if messages.is_empty() {
        return Err(HttpError::EmptyFlow);
    }
    let k = stream.key;
    Ok(Flow {
        flow_id: format!(
            "{}:{}-{}:{}-{}",
            k.src_ip,
            k.src_port,
            k.dst_ip,
            k.dst_port,
            stream.first_timestamp.as_micros()
        ),
        label,
        lossy: stream.lossy(),
        segments: Some(
            stream.client_to_server.payload_segments + stream.server_to_client.payload_segments,
        ),
        messages,
    })
}

/// Start line, header lines and the blank line, as wire bytes.
pub fn serialize_head(msg: &HttpMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + msg.headers.len() * 32);
    match msg.kind {
        MessageKind::Request => {
            out.extend(latin1_bytes(msg.method.as_deref().unwrap_or("")));
            out.push(b' ');
            out.extend(latin1_bytes(msg.url.as_deref().unwrap_or("")));
            if msg.version == HttpVersion::V0_9 {
                out.extend_from_slice(b"\r\n");
                return out;
            }
            out.push(b' ');
            out.extend_from_slice(msg.version.token().as_bytes());
        }
        MessageKind::Response => {
            out.extend_from_slice(msg.version.token().as_bytes());
            out.extend_from_slice(format!(" {:03}", msg.status_code.unwrap_or(0)).as_bytes());
            out.extend_from_slice(reason_phrase(msg.status_code.unwrap_or(0)).as_bytes());
        }
    }
    out.extend_from_slice(b"\r\n");
    for (name, value) in &msg.headers {
        out.extend(latin1_bytes(name));
        out.extend_from_slice(b": ");
        out.extend(latin1_bytes(value));
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(b"\r\n");
    out
}

fn reason_phrase(status: u16) -> &'static str {
    match status {
        200 => " OK",
        204 => " No Content",
        301 => " Moved Permanently",
        302 => " Found",
        304 => " Not Modified",
        400 => " Bad Request",
        403 => " Forbidden",
        404 => " Not Found",
        500 => " Internal Server Error",
        502 => " Bad Gateway",
        503 => " Service Unavailable",
        _ => "",
    }
}

/// Head followed by the body bytes held in the message.
pub fn serialize_message(msg: &HttpMessage) -> Vec<u8> {
    let mut out = serialize_head(msg);
    out.extend_from_slice(&msg.body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{reassemble, FiveTuple, StreamChunk, TcpFlags, TcpSegment, Timestamp};
    use std::net::Ipv4Addr;

    fn direction(bytes: &[u8], ts: u64, ttl: u8) -> DirectionStream {
        DirectionStream {
            bytes: bytes.to_vec(),
            chunks: if bytes.is_empty() {
                vec![]
            } else {
                vec![StreamChunk {
                    offset: 0,
                    len: bytes.len(),
                    timestamp: Timestamp::from_micros(ts),
                    ttl,
                }]
            },
            payload_segments: usize::from(!bytes.is_empty()),
            lossy: false,
        }
    }

    fn pair(up: &[u8], down: &[u8]) -> TcpStreamPair {
        TcpStreamPair {
            key: FiveTuple {
                src_ip: Ipv4Addr::new(10, 0, 0, 1),
                dst_ip: Ipv4Addr::new(10, 0, 0, 2),
                src_port: 50000,
                dst_port: 80,
            },
            client_to_server: direction(up, 10, 64),
            server_to_client: direction(down, 20, 120),
            first_timestamp: Timestamp::from_micros(10),
        }
    }

    #[test]
    fn minimal_get_request() {
        let msgs = parse_messages(&pair(b"GET /a HTTP/1.1\r\nHost: x\r\n\r\n", b""));
        assert_eq!(msgs.len(), 1);
        let m = &msgs[0];
        assert_eq!(m.method.as_deref(), Some("GET"));
        assert_eq!(m.url.as_deref(), Some("/a"));
        assert_eq!(m.version, HttpVersion::V1_1);
        assert_eq!(m.headers, vec![("Host".to_string(), "x".to_string())]);
        assert_eq!(m.wire_length, 28);
        assert_eq!((m.src_port, m.dst_port, m.ttl), (50000, 80, 64));
    }

    #[test]
    fn empty_and_non_http_streams_yield_nothing() {
        assert!(parse_messages(&pair(b"", b"")).is_empty());
        let (msgs, report) = parse_messages_with_report(&pair(b"\x16\x03\x01\x02\x00binary", b""));
        assert!(msgs.is_empty());
        assert_eq!(report.non_http, 1);
        assert!(matches!(
            build_flow(&pair(b"", b""), Label::Benign),
            Err(HttpError::EmptyFlow)
        ));
    }

    #[test]
    fn content_length_and_chunked_bodies() {
        let up = b"POST /u HTTP/1.1\r\nContent-Length: 5\r\n\r\nhelloGET /b HTTP/1.1\r\n\r\n";
        let down = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n3\r\nabc\r\n2;x=y\r\nde\r\n0\r\n\r\nHTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n";
        let msgs = parse_messages(&pair(up, down));
        assert_eq!(msgs.len(), 4);
        assert_eq!(msgs[0].body, b"hello");
        assert_eq!(msgs[1].url.as_deref(), Some("/b"));
        assert_eq!(msgs[2].status_code, Some(200));
        assert_eq!(msgs[2].body, b"abcde");
        assert_eq!(msgs[2].body_len, 5);
        assert_eq!(msgs[3].status_code, Some(404));
        assert_eq!(msgs[3].src_port, 80);
        assert_eq!(msgs[2].wire_length + msgs[3].wire_length, down.len());
    }

    #[test]
    fn head_and_304_responses_have_no_body() {
        let up = b"HEAD / HTTP/1.1\r\n\r\nGET / HTTP/1.1\r\n\r\n";
        let down = b"HTTP/1.1 200 OK\r\nContent-Length: 999\r\n\r\nHTTP/1.1 304 Not Modified\r\n\r\nHTTP/1.0 200 OK\r\n\r\ntail";
        let msgs = parse_messages(&pair(up, down));
        let responses: Vec<_> = msgs.iter().filter(|m| !m.is_request()).collect();
        assert_eq!(responses.len(), 3);
        assert_eq!(responses[0].body_len, 0);
        assert_eq!(responses[1].status_code, Some(304));
        // No length and no chunking: the body runs to connection close.
        assert_eq!(responses[2].body, b"tail");
    }

    #[test]
    fn status_less_response_is_malformed() {
        let (msgs, report) = parse_messages_with_report(&pair(
            b"GET /x HTTP/1.1\r\n\r\n",
            b"<html>old-style body</html>",
        ));
        assert_eq!(msgs.len(), 1);
        assert_eq!(report.non_http, 1);
    }

    #[test]
    fn oversized_header_is_skipped_to_next_message() {
        let mut up = b"GET /big HTTP/1.1\r\nX: ".to_vec();
        up.extend(std::iter::repeat_n(b'a', MAX_LINE + 10));
        up.extend_from_slice(b"\r\n\r\nGET /ok HTTP/1.1\r\n\r\n");
        let (msgs, report) = parse_messages_with_report(&pair(&up, b""));
        assert_eq!(report.malformed, 1);
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].url.as_deref(), Some("/ok"));
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let mut req = HttpMessage::request("POST", "/api?q=1", HttpVersion::V1_0);
        req.headers = vec![
            ("Host".into(), "h".into()),
            ("Content-Length".into(), "3".into()),
        ];
        req.body = b"x=1".to_vec();
        req.body_len = 3;
        let mut resp = HttpMessage::response(500, HttpVersion::V1_1);
        resp.headers = vec![("Content-Length".into(), "0".into())];
        let up = serialize_message(&req);
        let down = serialize_message(&resp);
        let msgs = parse_messages(&pair(&up, &down));
        req.wire_length = up.len();
        resp.wire_length = down.len();
        for (m, template) in msgs.iter().zip([&req, &resp]) {
            let mut expected = template.clone();
            expected.src_port = m.src_port;
            expected.dst_port = m.dst_port;
            expected.ttl = m.ttl;
            expected.timestamp = m.timestamp;
            assert_eq!(m, &expected);
        }
    }

    #[test]
    fn message_metadata_comes_from_first_segment() {
        let seg = |from_client: bool, seq: u32, payload: &[u8], t: u64, ttl: u8| {
            let (a, b) = (
                (Ipv4Addr::new(1, 1, 1, 1), 40000u16),
                (Ipv4Addr::new(2, 2, 2, 2), 80u16),
            );
            let (s, d) = if from_client { (a, b) } else { (b, a) };
            TcpSegment {
                tuple: FiveTuple {
                    src_ip: s.0,
                    src_port: s.1,
                    dst_ip: d.0,
                    dst_port: d.1,
                },
                seq,
                ack: 0,
                flags: TcpFlags {
                    syn: payload.is_empty() && seq == 0,
                    ack: !from_client || seq != 0,
                    ..Default::default()
                },
                ip_ttl: ttl,
                timestamp: Timestamp::from_micros(t),
                payload: payload.to_vec(),
            }
        };
        let segs = vec![
            seg(true, 0, b"", 0, 64),
            seg(true, 1, b"GET / HTTP/1.1\r\n", 5, 64),
            seg(true, 17, b"\r\nGET /2 HTTP/1.1\r\n\r\n", 7, 63),
            seg(false, 100, b"HTTP/1.1 200 OK\r\nContent-Length: 0\r\n\r\n", 6, 50),
        ];
        let stream = &reassemble(segs)[0];
        let flow = build_flow(stream, Label::Unlabeled).unwrap();
        let order: Vec<_> = flow
            .messages
            .iter()
            .map(|m| (m.timestamp.as_micros(), m.ttl))
            .collect();
        assert_eq!(order, vec![(5, 64), (6, 50), (7, 63)]);
        assert_eq!(flow.segments, Some(3));
    }
}
