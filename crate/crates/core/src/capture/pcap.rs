//! Classic libpcap files: a 24-byte global header followed by records with
//! 16-byte headers. Both byte orders are read; microsecond and nanosecond
//! magics are accepted. Only Ethernet (link type 1) captures are supported.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CaptureError, RawPacket, Timestamp};

pub const LINKTYPE_ETHERNET: u32 = 1;
const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
/// Upper bound on a single record, well above any real snaplen.
const MAX_RECORD_LEN: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn read_u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            ByteOrder::Little => u32::from_le_bytes(a),
            ByteOrder::Big => u32::from_be_bytes(a),
        }
    }

    fn read_u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        match self {
            ByteOrder::Little => u16::from_le_bytes(a),
            ByteOrder::Big => u16::from_be_bytes(a),
        }
    }

    fn u32_bytes(self, v: u32) -> [u8; 4] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn u16_bytes(self, v: u16) -> [u8; 2] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapHeader {
    pub byte_order: ByteOrder,
    pub nanosecond: bool,
    pub version_major: u16,
    pub version_minor: u16,
    pub snaplen: u32,
    pub link_type: u32,
}

/// Streaming reader yielding packets in file order.
pub struct PcapReader<R> {
    inner: R,
    header: PcapHeader,
    done: bool,
}

impl PcapReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CaptureError> {
        let file = File::open(path.as_ref())?;
        Self::new(BufReader::new(file))
    }
}

/// Reads as many bytes as are available up to `buf.len()`.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, CaptureError> {
        let mut buf = [0u8; GLOBAL_HEADER_LEN];
        let n = read_full(&mut inner, &mut buf)?;
        if n < 4 {
            return Err(CaptureError::TruncatedHeader {
                expected: GLOBAL_HEADER_LEN,
                actual: n,
            });
        }
        let le = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]);
        let (byte_order, nanosecond) = match le {
            MAGIC_MICROS => (ByteOrder::Little, false),
            MAGIC_NANOS => (ByteOrder::Little, true),
            m if m.swap_bytes() == MAGIC_MICROS => (ByteOrder::Big, false),
            m if m.swap_bytes() == MAGIC_NANOS => (ByteOrder::Big, true),
            m => return Err(CaptureError::UnsupportedMagic(m)),
        };
        if n < GLOBAL_HEADER_LEN {
            return Err(CaptureError::TruncatedHeader {
                expected: GLOBAL_HEADER_LEN,
                actual: n,
            });
        }
        let header = PcapHeader {
            byte_order,
            nanosecond,
            version_major: byte_order.read_u16(&buf[4..6]),
            version_minor: byte_order.read_u16(&buf[6..8]),
            snaplen: byte_order.read_u32(&buf[16..20]),
            link_type: byte_order.read_u32(&buf[20..24]),
        };
        if header.link_type != LINKTYPE_ETHERNET {
            return Err(CaptureError::UnsupportedLinkType(header.link_type));
        }
        Ok(Self {
            inner,
            header,
            done: false,
        })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }

    fn next_packet(&mut self) -> Result<Option<RawPacket>, CaptureError> {
        let mut rec = [0u8; RECORD_HEADER_LEN];
        let n = read_full(&mut self.inner, &mut rec)?;
        if n == 0 {
            return Ok(None);
        }
        if n < RECORD_HEADER_LEN {
            return Err(CaptureError::TruncatedHeader {
                expected: RECORD_HEADER_LEN,
                actual: n,
            });
        }
        let bo = self.header.byte_order;
        let secs = bo.read_u32(&rec[0..4]);
        let frac = bo.read_u32(&rec[4..8]);
        let incl_len = bo.read_u32(&rec[8..12]);
        let orig_len = bo.read_u32(&rec[12..16]);
        if incl_len > orig_len || incl_len > MAX_RECORD_LEN {
            return Err(CaptureError::InvalidRecord { incl_len, orig_len });
        }
        let micros = if self.header.nanosecond {
            frac / 1000
        } else {
            frac
        };
        if micros >= 1_000_000 {
            return Err(CaptureError::InvalidRecord { incl_len, orig_len });
        }
        let mut data = vec![0u8; incl_len as usize];
        let got = read_full(&mut self.inner, &mut data)?;
        if got < data.len() {
            return Err(CaptureError::TruncatedRecord {
                expected: data.len(),
                actual: got,
            });
        }
        Ok(Some(RawPacket {
            timestamp: Timestamp::new(u64::from(secs), micros),
            captured: data,
            original_len: orig_len,
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<RawPacket, CaptureError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_packet() {
            Ok(Some(p)) => Some(Ok(p)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// `read_capture(path)`: packets of a classic pcap file in file order.
pub fn read_capture(path: impl AsRef<Path>) -> Result<PcapReader<BufReader<File>>, CaptureError> {
    PcapReader::open(path)
}

/// Writes microsecond-resolution pcap records.
pub struct PcapWriter<W: Write> {
    inner: W,
    byte_order: ByteOrder,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, byte_order: ByteOrder, snaplen: u32) -> io::Result<Self> {
        let mut header = Vec::with_capacity(GLOBAL_HEADER_LEN);
        header.extend_from_slice(&byte_order.u32_bytes(MAGIC_MICROS));
        header.extend_from_slice(&byte_order.u16_bytes(2));
        header.extend_from_slice(&byte_order.u16_bytes(4));
        header.extend_from_slice(&byte_order.u32_bytes(0)); // thiszone
        header.extend_from_slice(&byte_order.u32_bytes(0)); // sigfigs
        header.extend_from_slice(&byte_order.u32_bytes(snaplen));
        header.extend_from_slice(&byte_order.u32_bytes(LINKTYPE_ETHERNET));
        inner.write_all(&header)?;
        Ok(Self { inner, byte_order })
    }

    pub fn write_packet(&mut self, packet: &RawPacket) -> io::Result<()> {
        let bo = self.byte_order;
        let secs = u32::try_from(packet.timestamp.secs).map_err(|_| {
            io::Error::new(io::ErrorKind::InvalidInput, "timestamp beyond 32-bit seconds")
        })?;
        let mut rec = [0u8; RECORD_HEADER_LEN];
        rec[0..4].copy_from_slice(&bo.u32_bytes(secs));
        rec[4..8].copy_from_slice(&bo.u32_bytes(packet.timestamp.micros));
        rec[8..12].copy_from_slice(&bo.u32_bytes(packet.captured.len() as u32));
        rec[12..16].copy_from_slice(&bo.u32_bytes(packet.original_len));
        self.inner.write_all(&rec)?;
        self.inner.write_all(&packet.captured)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Writes `packets` to a new little-endian capture at `path`.
pub fn write_capture<'a>(
    path: impl AsRef<Path>,
    packets: impl IntoIterator<Item = &'a RawPacket>,
) -> io::Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = PcapWriter::new(BufWriter::new(file), ByteOrder::Little, 65535)?;
    for p in packets {
        writer.write_packet(p)?;
    }
    writer.into_inner().flush()
}
