//! Per-connection TCP reassembly.
//!
//! Sequence numbers are tracked as signed 64-bit offsets from the first
//! sequence number seen in each direction, unwrapped against the last
//! delivered position so streams may cross the 32-bit wrap. Overlapping data
//! keeps whichever copy arrived first.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::net::Ipv4Addr;

use super::{FiveTuple, TcpSegment, Timestamp};

/// Out-of-order bytes buffered per direction before a gap is given up on.
pub const MAX_PENDING_BYTES: usize = 4 << 20;

/// Metadata of one contiguous run of stream bytes taken from one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamChunk {
    pub offset: usize,
    pub len: usize,
    pub timestamp: Timestamp,
    pub ttl: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirectionStream {
    pub bytes: Vec<u8>,
    /// Ordered by offset, contiguous except across gaps.
    pub chunks: Vec<StreamChunk>,
    /// Segments that contributed at least one retained byte.
    pub payload_segments: usize,
    pub lossy: bool,
}

impl DirectionStream {
    /// The chunk holding stream byte `offset`.
    pub fn chunk_at(&self, offset: usize) -> Option<&StreamChunk> {
        let idx = self
            .chunks
            .partition_point(|c| c.offset + c.len <= offset);
        self.chunks.get(idx).filter(|c| c.offset <= offset)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpStreamPair {
    /// Oriented client → server.
    pub key: FiveTuple,
    pub client_to_server: DirectionStream,
    pub server_to_client: DirectionStream,
    pub first_timestamp: Timestamp,
}

impl TcpStreamPair {
    pub fn lossy(&self) -> bool {
        self.client_to_server.lossy || self.server_to_client.lossy
    }
}

type Endpoint = (Ipv4Addr, u16);

fn endpoints(t: &FiveTuple) -> (Endpoint, Endpoint) {
    ((t.src_ip, t.src_port), (t.dst_ip, t.dst_port))
}

/// Unordered endpoint pair.
fn connection_key(t: &FiveTuple) -> (Endpoint, Endpoint) {
    let (a, b) = endpoints(t);
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone)]
struct Pending {
    data: Vec<u8>,
    timestamp: Timestamp,
    ttl: u8,
}

#[derive(Debug, Default)]
struct Direction {
    /// (raw sequence number, absolute offset) used to unwrap new numbers.
    anchor: Option<(u32, i64)>,
    syn: bool,
    /// Absolute offset of stream byte 0, once known.
    base: Option<i64>,
    next: i64,
    fin: Option<i64>,
    pending: BTreeMap<i64, Pending>,
    pending_bytes: usize,
    out: DirectionStream,
}

impl Direction {
    fn absolute(&mut self, seq: u32) -> i64 {
        match self.anchor {
            None => {
                self.anchor = Some((seq, 0));
                0
            }
            Some((raw, abs)) => abs + i64::from(seq.wrapping_sub(raw) as i32),
        }
    }

    fn complete(&self) -> bool {
        self.syn
            && self.base.is_some()
            && self.pending.is_empty()
            && self.fin.is_some_and(|f| self.next >= f)
    }

    fn push(&mut self, seg: &TcpSegment) {
        let start = self.absolute(seg.seq);
        let mut data_start = start;
        if seg.flags.syn {
            if !self.syn {
                self.syn = true;
                self.set_base(start + 1);
            }
            data_start = start + 1;
        }
        let end = data_start + seg.payload.len() as i64;
        if seg.flags.fin && self.fin.is_none() {
            self.fin = Some(end);
        }
        if !seg.payload.is_empty() {
            self.insert(data_start, &seg.payload, seg.timestamp, seg.ip_ttl);
            self.deliver();
            if self.pending_bytes > MAX_PENDING_BYTES {
                self.force_gap();
            }
        }
    }

    fn set_base(&mut self, base: i64) {
        self.base = Some(base);
        self.next = base;
        // Anything buffered before the stream start is not stream data.
        let stale: Vec<i64> = self.pending.range(..base).map(|(k, _)| *k).collect();
        for k in stale {
            let p = self.pending.remove(&k).expect("present");
            self.pending_bytes -= p.data.len();
            let end = k + p.data.len() as i64;
            if end > base {
                let cut = (base - k) as usize;
                self.pending_bytes += p.data.len() - cut;
                self.pending.insert(
                    base,
                    Pending {
                        data: p.data[cut..].to_vec(),
                        ..p
                    },
                );
            }
        }
        self.deliver();
    }

    /// Adds the parts of `[start, start+len)` not already delivered or buffered.
    fn insert(&mut self, start: i64, data: &[u8], timestamp: Timestamp, ttl: u8) {
        let end = start + data.len() as i64;
        let lower = self.base.map_or(i64::MIN, |_| self.next);
        let mut cursor = start.max(lower);
        let mut pieces = Vec::new();
        // Only entries starting before `end` can overlap; the one starting
        // before `cursor` may reach into the range.
        let overlapping: Vec<(i64, i64)> = self
            .pending
            .range(..end)
            .map(|(k, p)| (*k, *k + p.data.len() as i64))
            .filter(|&(_, e)| e > cursor)
            .collect();
        for (s, e) in overlapping {
            if s > cursor {
                pieces.push((cursor, s.min(end)));
            }
            cursor = cursor.max(e);
            if cursor >= end {
                break;
            }
        }
        if cursor < end {
            pieces.push((cursor, end));
        }
        if pieces.is_empty() {
            return;
        }
        self.out.payload_segments += 1;
        for (s, e) in pieces {
            let slice = &data[(s - start) as usize..(e - start) as usize];
            self.pending_bytes += slice.len();
            self.pending.insert(
                s,
                Pending {
                    data: slice.to_vec(),
                    timestamp,
                    ttl,
                },
            );
        }
    }

    fn deliver(&mut self) {
        if self.base.is_none() {
            return;
        }
        while let Some(entry) = self.pending.first_entry() {
            if *entry.key() != self.next {
                break;
            }
            let p = entry.remove();
            self.pending_bytes -= p.data.len();
            self.append(p);
        }
    }

    fn append(&mut self, p: Pending) {
        let len = p.data.len();
        self.out.chunks.push(StreamChunk {
            offset: self.out.bytes.len(),
            len,
            timestamp: p.timestamp,
            ttl: p.ttl,
        });
        self.out.bytes.extend_from_slice(&p.data);
        self.next += len as i64;
        if let Some((raw, abs)) = self.anchor {
            // Re-anchor at the delivered position to keep unwrapping local.
            self.anchor = Some((raw.wrapping_add((self.next - abs) as u32), self.next));
        }
    }

    /// Skips to the lowest buffered byte, recording the stream as lossy.
    fn force_gap(&mut self) {
        let Some((&first, _)) = self.pending.first_key_value() else {
            return;
        };
        if self.base.is_none() {
            self.set_base(first);
            return;
        }
        if first > self.next {
            self.out.lossy = true;
            self.next = first;
            self.deliver();
        }
    }

    fn finish(mut self) -> DirectionStream {
        while !self.pending.is_empty() {
            self.force_gap();
        }
        if self.fin.is_some_and(|f| self.next < f) {
            self.out.lossy = true;
        }
        self.out
    }
}

#[derive(Debug)]
struct Connection {
    client: Endpoint,
    server: Endpoint,
    client_fixed: bool,
    forward: Direction,
    backward: Direction,
    first_timestamp: Timestamp,
    reset: bool,
}

impl Connection {
    fn new(seg: &TcpSegment) -> Self {
        let (src, dst) = endpoints(&seg.tuple);
        let (client, server, fixed) = if seg.flags.syn && seg.flags.ack {
            (dst, src, true)
        } else {
            (src, dst, seg.flags.syn)
        };
        Self {
            client,
            server,
            client_fixed: fixed,
            forward: Direction::default(),
            backward: Direction::default(),
            first_timestamp: seg.timestamp,
            reset: false,
        }
    }

    fn push(&mut self, seg: &TcpSegment) {
        let (src, _) = endpoints(&seg.tuple);
        if !self.client_fixed && seg.flags.syn {
            // A handshake seen late still decides who the client is.
            let client_is_src = !seg.flags.ack;
            let new_client = if client_is_src {
                src
            } else {
                endpoints(&seg.tuple).1
            };
            if new_client != self.client {
                std::mem::swap(&mut self.client, &mut self.server);
                std::mem::swap(&mut self.forward, &mut self.backward);
            }
            self.client_fixed = true;
        }
        self.first_timestamp = self.first_timestamp.min(seg.timestamp);
        if seg.flags.rst {
            self.reset = true;
        }
        let dir = if src == self.client {
            &mut self.forward
        } else {
            &mut self.backward
        };
        dir.push(seg);
    }

    fn done(&self) -> bool {
        self.reset || (self.forward.complete() && self.backward.complete())
    }

    fn into_pair(self) -> TcpStreamPair {
        TcpStreamPair {
            key: FiveTuple {
                src_ip: self.client.0,
                src_port: self.client.1,
                dst_ip: self.server.0,
                dst_port: self.server.1,
            },
            client_to_server: self.forward.finish(),
            server_to_client: self.backward.finish(),
            first_timestamp: self.first_timestamp,
        }
    }
}

type Key = (Endpoint, Endpoint);

/// Incremental reassembler. Closed connections are emitted as soon as both
/// directions have delivered everything up to their FIN, or on RST.
#[derive(Debug, Default)]
pub struct Reassembler {
    open: HashMap<Key, usize>,
    /// Connections in first-seen order; `None` once emitted.
    slots: Vec<Option<Connection>>,
    closed: HashSet<Key>,
    ready: VecDeque<TcpStreamPair>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, seg: TcpSegment) {
        let key = connection_key(&seg.tuple);
        if self.closed.contains(&key) {
            // Stragglers after close are dropped; a fresh SYN reopens.
            if !(seg.flags.syn && !seg.flags.ack) {
                return;
            }
            self.closed.remove(&key);
        }
        let slot = *self.open.entry(key).or_insert_with(|| {
            self.slots.push(Some(Connection::new(&seg)));
            self.slots.len() - 1
        });
        let conn = self.slots[slot].as_mut().expect("open connection");
        conn.push(&seg);
        if conn.done() {
            let conn = self.slots[slot].take().expect("open connection");
            self.open.remove(&key);
            self.closed.insert(key);
            self.ready.push_back(conn.into_pair());
        }
    }

    pub fn drain_ready(&mut self) -> impl Iterator<Item = TcpStreamPair> + '_ {
        self.ready.drain(..)
    }

    /// Emits everything still pending: closed streams first, then open ones
    /// in first-seen order.
    pub fn finish(mut self) -> Vec<TcpStreamPair> {
        let mut out: Vec<TcpStreamPair> = self.ready.drain(..).collect();
        out.extend(self.slots.into_iter().flatten().map(Connection::into_pair));
        out
    }
}

/// `reassemble(segments)`: all connections in emission order.
pub fn reassemble(segments: impl IntoIterator<Item = TcpSegment>) -> Vec<TcpStreamPair> {
    let mut r = Reassembler::new();
    let mut out = Vec::new();
    for seg in segments {
        r.push(seg);
        out.extend(r.drain_ready());
    }
    out.extend(r.finish());
    out
}
