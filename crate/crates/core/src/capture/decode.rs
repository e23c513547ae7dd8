//! Ethernet → IPv4 → TCP decoding (and the inverse, for writing captures).
//!
//! Header offsets follow RFC 791 and RFC 793.

use std::net::Ipv4Addr;

use super::{CaptureError, RawPacket, Timestamp};

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERNET_HEADER_LEN: usize = 14;
const IPV4_MIN_HEADER: usize = 20;
const TCP_MIN_HEADER: usize = 20;
pub const IPPROTO_TCP: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FiveTuple {
    pub const fn protocol(&self) -> u8 {
        IPPROTO_TCP
    }

    pub fn reversed(&self) -> Self {
        Self {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TcpFlags {
    pub fin: bool,
    pub syn: bool,
    pub rst: bool,
    pub psh: bool,
    pub ack: bool,
}

impl TcpFlags {
    fn from_byte(b: u8) -> Self {
        Self {
            fin: b & 0x01 != 0,
            syn: b & 0x02 != 0,
            rst: b & 0x04 != 0,
            psh: b & 0x08 != 0,
            ack: b & 0x10 != 0,
        }
    }

    fn to_byte(self) -> u8 {
        u8::from(self.fin)
            | u8::from(self.syn) << 1
            | u8::from(self.rst) << 2
            | u8::from(self.psh) << 3
            | u8::from(self.ack) << 4
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSegment {
    pub tuple: FiveTuple,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub ip_ttl: u8,
    pub timestamp: Timestamp,
    pub payload: Vec<u8>,
}

/// Why a packet was not turned into a TCP segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipReason {
    NotIp,
    Ipv6,
    NotTcp,
    Fragment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Segment(TcpSegment),
    Skip(SkipReason),
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn malformed(reason: &'static str) -> CaptureError {
    CaptureError::MalformedHeader(reason)
}

/// `decode_segment(pkt)`: non-IPv4 and non-TCP packets are `Skip`, not errors.
pub fn decode_segment(packet: &RawPacket) -> Result<Decoded, CaptureError> {
    let frame = &packet.captured;
    if frame.len() < ETHERNET_HEADER_LEN {
        return Err(malformed("ethernet header truncated"));
    }
    let mut ethertype = be16(frame, 12);
    let mut offset = ETHERNET_HEADER_LEN;
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < offset + 4 {
            return Err(malformed("vlan tag truncated"));
        }
        ethertype = be16(frame, offset + 2);
        offset += 4;
    }
    match ethertype {
        ETHERTYPE_IPV4 => {}
        ETHERTYPE_IPV6 => return Ok(Decoded::Skip(SkipReason::Ipv6)),
        _ => return Ok(Decoded::Skip(SkipReason::NotIp)),
    }
    let ip = &frame[offset..];
    if ip.len() < IPV4_MIN_HEADER {
        return Err(malformed("ipv4 header truncated"));
    }
    if ip[0] >> 4 != 4 {
        return Err(malformed("ipv4 version field is not 4"));
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    let total_len = usize::from(be16(ip, 2));
    if ihl < IPV4_MIN_HEADER || ihl > ip.len() {
        return Err(malformed("ipv4 header length out of range"));
    }
    if total_len < ihl || total_len > ip.len() {
        return Err(malformed("ipv4 total length exceeds captured bytes"));
    }
    let flags_frag = be16(ip, 6);
    let more_fragments = flags_frag & 0x2000 != 0;
    if more_fragments || flags_frag & 0x1fff != 0 {
        return Ok(Decoded::Skip(SkipReason::Fragment));
    }
    if ip[9] != IPPROTO_TCP {
        return Ok(Decoded::Skip(SkipReason::NotTcp));
    }
    let ttl = ip[8];
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let tcp = &ip[ihl..total_len];
    if tcp.len() < TCP_MIN_HEADER {
        return Err(malformed("tcp header truncated"));
    }
    let data_offset = usize::from(tcp[12] >> 4) * 4;
    if data_offset < TCP_MIN_HEADER || data_offset > tcp.len() {
        return Err(malformed("tcp data offset out of range"));
    }
    let src_port = be16(tcp, 0);
    let dst_port = be16(tcp, 2);
    if src_port == 0 || dst_port == 0 {
        return Err(malformed("tcp port zero"));
    }
    Ok(Decoded::Segment(TcpSegment {
        tuple: FiveTuple {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
        },
        seq: be32(tcp, 4),
        ack: be32(tcp, 8),
        flags: TcpFlags::from_byte(tcp[13]),
        ip_ttl: ttl,
        timestamp: packet.timestamp,
        payload: tcp[data_offset..].to_vec(),
    }))
}

fn ones_complement_sum(mut acc: u32, bytes: &[u8]) -> u32 {
    let mut chunks = bytes.chunks_exact(2);
    for c in &mut chunks {
        acc += u32::from(u16::from_be_bytes([c[0], c[1]]));
    }
    if let [last] = chunks.remainder() {
        acc += u32::from(*last) << 8;
    }
    acc
}

fn fold_checksum(mut acc: u32) -> u16 {
    while acc >> 16 != 0 {
        acc = (acc & 0xffff) + (acc >> 16);
    }
    !(acc as u16)
}

/// Builds an Ethernet/IPv4/TCP frame (no options) carrying `segment`.
pub fn encode_frame(segment: &TcpSegment) -> Vec<u8> {
    let t = &segment.tuple;
    let tcp_len = TCP_MIN_HEADER + segment.payload.len();
    let total_len = IPV4_MIN_HEADER + tcp_len;
    assert!(total_len <= usize::from(u16::MAX), "segment too large for IPv4");
    let mut frame = Vec::with_capacity(ETHERNET_HEADER_LEN + total_len);
    // Locally administered MACs derived from the addresses.
    frame.extend_from_slice(&[0x02, 0x00]);
    frame.extend_from_slice(&t.dst_ip.octets());
    frame.extend_from_slice(&[0x02, 0x00]);
    frame.extend_from_slice(&t.src_ip.octets());
    frame.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_start = frame.len();
    frame.push(0x45);
    frame.push(0);
    frame.extend_from_slice(&(total_len as u16).to_be_bytes());
    frame.extend_from_slice(&[0, 0, 0x40, 0]); // id 0, DF
    frame.push(segment.ip_ttl);
    frame.push(IPPROTO_TCP);
    frame.extend_from_slice(&[0, 0]);
    frame.extend_from_slice(&t.src_ip.octets());
    frame.extend_from_slice(&t.dst_ip.octets());
    let ip_sum = fold_checksum(ones_complement_sum(0, &frame[ip_start..]));
    frame[ip_start + 10..ip_start + 12].copy_from_slice(&ip_sum.to_be_bytes());

    let tcp_start = frame.len();
    frame.extend_from_slice(&t.src_port.to_be_bytes());
    frame.extend_from_slice(&t.dst_port.to_be_bytes());
    frame.extend_from_slice(&segment.seq.to_be_bytes());
    frame.extend_from_slice(&segment.ack.to_be_bytes());
    frame.push(5 << 4);
    frame.push(segment.flags.to_byte());
    frame.extend_from_slice(&65535u16.to_be_bytes());
    frame.extend_from_slice(&[0, 0, 0, 0]); // checksum, urgent pointer
    frame.extend_from_slice(&segment.payload);
    let mut pseudo = Vec::with_capacity(12);
    pseudo.extend_from_slice(&t.src_ip.octets());
    pseudo.extend_from_slice(&t.dst_ip.octets());
    pseudo.extend_from_slice(&[0, IPPROTO_TCP]);
    pseudo.extend_from_slice(&(tcp_len as u16).to_be_bytes());
    let tcp_sum = fold_checksum(ones_complement_sum(
        ones_complement_sum(0, &pseudo),
        &frame[tcp_start..],
    ));
    frame[tcp_start + 16..tcp_start + 18].copy_from_slice(&tcp_sum.to_be_bytes());
    frame
}

/// Wraps an encoded frame as a capture record.
pub fn segment_to_packet(segment: &TcpSegment) -> RawPacket {
    let captured = encode_frame(segment);
    RawPacket {
        timestamp: segment.timestamp,
        original_len: captured.len() as u32,
        captured,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ethernet + IPv4 (TTL 64, 10.0.0.1 → 10.0.0.2) + TCP 49152 → 80 with
    /// PSH|ACK and payload "hi", written out by hand.
    fn hand_frame() -> Vec<u8> {
        let mut f = vec![
            0, 1, 2, 3, 4, 5, // dst mac
            6, 7, 8, 9, 10, 11, // src mac
            0x08, 0x00, // IPv4
        ];
        f.extend_from_slice(&[
            0x45, 0x00, 0x00, 42, // ver/ihl, tos, total length = 20 + 20 + 2
            0x12, 0x34, 0x40, 0x00, // id, DF
            64, 6, 0x00, 0x00, // ttl, proto, checksum (unchecked)
            10, 0, 0, 1, // src
            10, 0, 0, 2, // dst
        ]);
        f.extend_from_slice(&[
            0xc0, 0x00, 0x00, 0x50, // ports 49152 -> 80
            0x00, 0x00, 0x03, 0xe8, // seq 1000
            0x00, 0x00, 0x07, 0xd0, // ack 2000
            0x50, 0x18, 0xff, 0xff, // doff 5, PSH|ACK, window
            0x00, 0x00, 0x00, 0x00, // checksum, urgent
            b'h', b'i',
        ]);
        f
    }

    fn packet(bytes: Vec<u8>) -> RawPacket {
        RawPacket {
            timestamp: Timestamp::new(10, 20),
            original_len: bytes.len() as u32,
            captured: bytes,
        }
    }

    #[test]
    fn hand_assembled_frame_decodes() {
        let Decoded::Segment(seg) = decode_segment(&packet(hand_frame())).unwrap() else {
            panic!("expected a segment");
        };
        assert_eq!(seg.ip_ttl, 64);
        assert_eq!(seg.tuple.src_port, 49152);
        assert_eq!(seg.tuple.dst_port, 80);
        assert_eq!(seg.tuple.src_ip, Ipv4Addr::new(10, 0, 0, 1));
        assert_eq!(seg.seq, 1000);
        assert_eq!(seg.ack, 2000);
        assert!(seg.flags.ack && seg.flags.psh && !seg.flags.syn);
        assert_eq!(seg.payload, b"hi");
        assert_eq!(seg.timestamp, Timestamp::new(10, 20));
    }

    #[test]
    fn ethernet_padding_is_not_payload() {
        let mut f = hand_frame();
        f.extend_from_slice(&[0; 6]);
        let Decoded::Segment(seg) = decode_segment(&packet(f)).unwrap() else {
            panic!()
        };
        assert_eq!(seg.payload, b"hi");
    }

    #[test]
    fn arp_and_ipv6_are_skipped() {
        let mut arp = hand_frame();
        arp[12..14].copy_from_slice(&[0x08, 0x06]);
        assert_eq!(decode_segment(&packet(arp)).unwrap(), Decoded::Skip(SkipReason::NotIp));
        let mut v6 = hand_frame();
        v6[12..14].copy_from_slice(&[0x86, 0xdd]);
        assert_eq!(decode_segment(&packet(v6)).unwrap(), Decoded::Skip(SkipReason::Ipv6));
        let mut udp = hand_frame();
        udp[14 + 9] = 17;
        assert_eq!(decode_segment(&packet(udp)).unwrap(), Decoded::Skip(SkipReason::NotTcp));
    }

    #[test]
    fn total_length_beyond_capture_is_malformed() {
        let mut f = hand_frame();
        f[16..18].copy_from_slice(&200u16.to_be_bytes());
        assert!(matches!(
            decode_segment(&packet(f)),
            Err(CaptureError::MalformedHeader(_))
        ));
    }

    #[test]
    fn encode_then_decode_is_identity() {
        let seg = TcpSegment {
            tuple: FiveTuple {
                src_ip: Ipv4Addr::new(192, 168, 1, 7),
                dst_ip: Ipv4Addr::new(203, 0, 113, 9),
                src_port: 50123,
                dst_port: 8080,
            },
            seq: u32::MAX - 3,
            ack: 17,
            flags: TcpFlags {
                ack: true,
                psh: true,
                ..Default::default()
            },
            ip_ttl: 117,
            timestamp: Timestamp::new(1_700_000_000, 42),
            payload: b"POST /x HTTP/1.1\r\n\r\n".to_vec(),
        };
        let frame = encode_frame(&seg);
        // A correct IPv4 header checksum sums to zero.
        assert_eq!(fold_checksum(ones_complement_sum(0, &frame[14..34])), 0);
        let decoded = decode_segment(&segment_to_packet(&seg)).unwrap();
        assert_eq!(decoded, Decoded::Segment(seg));
    }
}
