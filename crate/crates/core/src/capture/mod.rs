//! Capture ingestion: classic pcap files, Ethernet/IPv4/TCP decoding and
//! per-connection TCP stream reassembly.

use std::io;

mod decode;
mod pcap;
mod reassembly;

pub use decode::{
    decode_segment, encode_frame, segment_to_packet, Decoded, FiveTuple, SkipReason, TcpFlags,
    TcpSegment, IPPROTO_TCP,
};
pub use pcap::{
    read_capture, write_capture, ByteOrder, PcapHeader, PcapReader, PcapWriter, LINKTYPE_ETHERNET,
};
pub use reassembly::{
    reassemble, DirectionStream, Reassembler, StreamChunk, TcpStreamPair, MAX_PENDING_BYTES,
};

/// Seconds and microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp {
    pub secs: u64,
    pub micros: u32,
}

impl Timestamp {
    pub fn new(secs: u64, micros: u32) -> Self {
        debug_assert!(micros < 1_000_000);
        Self { secs, micros }
    }

    pub fn from_micros(total: u64) -> Self {
        Self {
            secs: total / 1_000_000,
            micros: (total % 1_000_000) as u32,
        }
    }

    pub fn as_micros(&self) -> u64 {
        self.secs * 1_000_000 + u64::from(self.micros)
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.secs as f64 + f64::from(self.micros) / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub timestamp: Timestamp,
    pub captured: Vec<u8>,
    pub original_len: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("not a pcap file (magic {0:#010x})")]
    UnsupportedMagic(u32),
    #[error("truncated header: expected {expected} bytes, found {actual}")]
    TruncatedHeader { expected: usize, actual: usize },
    #[error("truncated record: expected {expected} bytes, found {actual}")]
    TruncatedRecord { expected: usize, actual: usize },
    #[error("invalid record header (incl_len {incl_len}, orig_len {orig_len})")]
    InvalidRecord { incl_len: u32, orig_len: u32 },
    #[error("unsupported link type {0}; only Ethernet is handled")]
    UnsupportedLinkType(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counters for packets that never became part of a stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    pub packets: usize,
    pub tcp_segments: usize,
    pub not_ip: usize,
    pub ipv6: usize,
    pub not_tcp: usize,
    pub fragments: usize,
    pub malformed: usize,
}

impl DecodeStats {
    pub fn record(&mut self, outcome: &Result<Decoded, CaptureError>) {
        self.packets += 1;
        match outcome {
            Ok(Decoded::Segment(_)) => self.tcp_segments += 1,
            Ok(Decoded::Skip(SkipReason::NotIp)) => self.not_ip += 1,
            Ok(Decoded::Skip(SkipReason::Ipv6)) => self.ipv6 += 1,
            Ok(Decoded::Skip(SkipReason::NotTcp)) => self.not_tcp += 1,
            Ok(Decoded::Skip(SkipReason::Fragment)) => self.fragments += 1,
            Err(_) => self.malformed += 1,
        }
    }
}

/// Reads a whole capture and reassembles every TCP connection in it.
/// Malformed frames are counted and skipped; file-level errors abort.
pub fn streams_from_capture(
    path: impl AsRef<std::path::Path>,
) -> Result<(Vec<TcpStreamPair>, DecodeStats), CaptureError> {
    let mut stats = DecodeStats::default();
    let mut reassembler = Reassembler::new();
    let mut out = Vec::new();
    for packet in read_capture(path)? {
        let packet = packet?;
        let decoded = decode_segment(&packet);
        stats.record(&decoded);
        if let Ok(Decoded::Segment(seg)) = decoded {
            reassembler.push(seg);
            out.extend(reassembler.drain_ready());
        }
    }
    out.extend(reassembler.finish());
    Ok((out, stats))
}
