//! Wire format for the WSS and Ethernet flow-mod extensions.
//!
//! Every field is big-endian at a fixed offset. A framed message is a 4-byte
//! type tag followed by the body.

use std::fmt;
use std::io::Cursor;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use serde::Serialize;
use thiserror::Error;

use crate::ethernet::{FlowMatch, FlowRule, MacAddr};
use crate::spectrum::Frequency;
use crate::vbvt::CrossConnect;

pub const WSS_BODY_LEN: usize = 12;
pub const ETH_BODY_LEN: usize = 14;
pub const TAG_LEN: usize = 4;

pub const TAG_ETH_ADD: u32 = 0x0000_0001;
pub const TAG_ETH_DEL: u32 = 0x0000_0002;
pub const TAG_WSS_ADD: u32 = 0x0000_0101;
pub const TAG_WSS_DEL: u32 = 0x0000_0102;

pub const WILDCARD_IN_PORT: u16 = 0x0001;
pub const WILDCARD_DST_MAC: u16 = 0x0002;
const WILDCARD_ALL: u16 = WILDCARD_IN_PORT | WILDCARD_DST_MAC;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("{0} must be nonzero")]
    ZeroField(&'static str),
    #[error("unknown message tag {0:#010x}")]
    UnknownTag(u32),
    #[error("unknown wildcard bits {0:#06x}")]
    UnknownWildcard(u16),
    #[error("{0} is wildcarded but not zero")]
    MaskedField(&'static str),
    #[error("bad hex: {0}")]
    Hex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct WssFlowMod {
    pub in_port: u16,
    pub out_port: u16,
    /// 100 kHz units.
    pub center_freq: u32,
    /// MHz.
    pub filter_width: u32,
}

impl WssFlowMod {
    pub fn from_cross_connect(xc: &CrossConnect) -> Result<Self, CodecError> {
        let center_freq = u32::try_from(xc.center.units()).map_err(|_| CodecError::ZeroField("center_freq"))?;
        Ok(WssFlowMod { in_port: xc.in_port, out_port: xc.out_port, center_freq, filter_width: xc.filter_width_mhz })
    }

    pub fn to_cross_connect(&self) -> Result<CrossConnect, CodecError> {
        let center =
            Frequency::from_units(self.center_freq as u64).map_err(|_| CodecError::ZeroField("center_freq"))?;
        Ok(CrossConnect { in_port: self.in_port, out_port: self.out_port, center, filter_width_mhz: self.filter_width })
    }
}

impl fmt::Display for WssFlowMod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let center =
            Frequency::from_units(self.center_freq as u64).map(|c| c.to_string()).unwrap_or_else(|_| "0".into());
        write!(
            f,
            "wss in={} out={} center={} THz width={} GHz",
            self.in_port,
            self.out_port,
            center,
            self.filter_width as f64 / 1000.0
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct EthFlowMod {
    pub in_port: Option<u16>,
    pub dst_mac: Option<MacAddr>,
    pub out_port: u16,
    pub priority: u16,
}

impl From<FlowRule> for EthFlowMod {
    fn from(r: FlowRule) -> Self {
        EthFlowMod {
            in_port: r.matcher.in_port,
            dst_mac: r.matcher.dst_mac,
            out_port: r.out_port,
            priority: r.priority,
        }
    }
}

impl From<EthFlowMod> for FlowRule {
    fn from(m: EthFlowMod) -> Self {
        FlowRule {
            matcher: FlowMatch { in_port: m.in_port, dst_mac: m.dst_mac },
            out_port: m.out_port,
            priority: m.priority,
        }
    }
}

impl fmt::Display for EthFlowMod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "eth {}", FlowRule::from(*self))
    }
}

fn check_len(buf: &[u8], expected: usize) -> Result<(), CodecError> {
    if buf.len() != expected {
        return Err(CodecError::Length { expected, got: buf.len() });
    }
    Ok(())
}

pub fn encode_wss_flowmod(msg: &WssFlowMod) -> Result<Vec<u8>, CodecError> {
    if msg.center_freq == 0 {
        return Err(CodecError::ZeroField("center_freq"));
    }
    if msg.filter_width == 0 {
        return Err(CodecError::ZeroField("filter_width"));
    }
    let mut out = Vec::with_capacity(WSS_BODY_LEN);
    out.write_u16::<BigEndian>(msg.in_port).unwrap();
    out.write_u16::<BigEndian>(msg.out_port).unwrap();
    out.write_u32::<BigEndian>(msg.center_freq).unwrap();
    out.write_u32::<BigEndian>(msg.filter_width).unwrap();
    Ok(out)
}

pub fn decode_wss_flowmod(buf: &[u8]) -> Result<WssFlowMod, CodecError> {
    check_len(buf, WSS_BODY_LEN)?;
    let mut c = Cursor::new(buf);
    let msg = WssFlowMod {
        in_port: c.read_u16::<BigEndian>().unwrap(),
        out_port: c.read_u16::<BigEndian>().unwrap(),
        center_freq: c.read_u32::<BigEndian>().unwrap(),
        filter_width: c.read_u32::<BigEndian>().unwrap(),
    };
    if msg.center_freq == 0 {
        return Err(CodecError::ZeroField("center_freq"));
    }
    if msg.filter_width == 0 {
        return Err(CodecError::ZeroField("filter_width"));
    }
    Ok(msg)
}

pub fn encode_eth_flowmod(msg: &EthFlowMod) -> Vec<u8> {
    let mut wildcards = 0;
    if msg.in_port.is_none() {
        wildcards |= WILDCARD_IN_PORT;
    }
    if msg.dst_mac.is_none() {
        wildcards |= WILDCARD_DST_MAC;
    }
    let mut out = Vec::with_capacity(ETH_BODY_LEN);
    out.write_u16::<BigEndian>(msg.in_port.unwrap_or(0)).unwrap();
    out.extend_from_slice(&msg.dst_mac.map(|m| m.0).unwrap_or([0; 6]));
    out.write_u16::<BigEndian>(wildcards).unwrap();
    out.write_u16::<BigEndian>(msg.out_port).unwrap();
    out.write_u16::<BigEndian>(msg.priority).unwrap();
    out
}

pub fn decode_eth_flowmod(buf: &[u8]) -> Result<EthFlowMod, CodecError> {
    check_len(buf, ETH_BODY_LEN)?;
    let mut c = Cursor::new(buf);
    let in_port = c.read_u16::<BigEndian>().unwrap();
    let mut mac = [0u8; 6];
    std::io::Read::read_exact(&mut c, &mut mac).unwrap();
    let wildcards = c.read_u16::<BigEndian>().unwrap();
    let out_port = c.read_u16::<BigEndian>().unwrap();
    let priority = c.read_u16::<BigEndian>().unwrap();
    if wildcards & !WILDCARD_ALL != 0 {
        return Err(CodecError::UnknownWildcard(wildcards & !WILDCARD_ALL));
    }
    let in_port = if wildcards & WILDCARD_IN_PORT != 0 {
        if in_port != 0 {
            return Err(CodecError::MaskedField("in_port"));
        }
        None
    } else {
        Some(in_port)
    };
    let dst_mac = if wildcards & WILDCARD_DST_MAC != 0 {
        if mac != [0; 6] {
            return Err(CodecError::MaskedField("dst_mac"));
        }
        None
    } else {
        Some(MacAddr(mac))
    };
    Ok(EthFlowMod { in_port, dst_mac, out_port, priority })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Message {
    EthAdd(EthFlowMod),
    EthDel(EthFlowMod),
    WssAdd(WssFlowMod),
    WssDel(WssFlowMod),
}

impl Message {
    pub fn tag(&self) -> u32 {
        match self {
            Message::EthAdd(_) => TAG_ETH_ADD,
            Message::EthDel(_) => TAG_ETH_DEL,
            Message::WssAdd(_) => TAG_WSS_ADD,
            Message::WssDel(_) => TAG_WSS_DEL,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::EthAdd(_) => "ETH_ADD",
            Message::EthDel(_) => "ETH_DEL",
            Message::WssAdd(_) => "WSS_ADD",
            Message::WssDel(_) => "WSS_DEL",
        }
    }

    pub fn is_wss(&self) -> bool {
        matches!(self, Message::WssAdd(_) | Message::WssDel(_))
    }

    pub fn body(&self) -> Result<Vec<u8>, CodecError> {
        match self {
            Message::EthAdd(m) | Message::EthDel(m) => Ok(encode_eth_flowmod(m)),
            Message::WssAdd(m) | Message::WssDel(m) => encode_wss_flowmod(m),
        }
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::EthAdd(m) | Message::EthDel(m) => write!(f, "{} {}", self.kind(), m),
            Message::WssAdd(m) | Message::WssDel(m) => write!(f, "{} {}", self.kind(), m),
        }
    }
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(TAG_LEN + ETH_BODY_LEN);
    out.write_u32::<BigEndian>(msg.tag()).unwrap();
    out.extend(msg.body()?);
    Ok(out)
}

pub fn decode_frame(buf: &[u8]) -> Result<Message, CodecError> {
    if buf.len() < TAG_LEN {
        return Err(CodecError::Length { expected: TAG_LEN, got: buf.len() });
    }
    let tag = Cursor::new(&buf[..TAG_LEN]).read_u32::<BigEndian>().unwrap();
    let body = &buf[TAG_LEN..];
    match tag {
        TAG_ETH_ADD => Ok(Message::EthAdd(decode_eth_flowmod(body)?)),
        TAG_ETH_DEL => Ok(Message::EthDel(decode_eth_flowmod(body)?)),
        TAG_WSS_ADD => Ok(Message::WssAdd(decode_wss_flowmod(body)?)),
        TAG_WSS_DEL => Ok(Message::WssDel(decode_wss_flowmod(body)?)),
        other => Err(CodecError::UnknownTag(other)),
    }
}

/// Upper-case hex, bytes separated by single spaces.
pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ")
}

/// Parses hex with optional whitespace between bytes.
pub fn from_hex(s: &str) -> Result<Vec<u8>, CodecError> {
    let digits: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if !digits.len().is_multiple_of(2) {
        return Err(CodecError::Hex(format!("odd number of digits in '{s}'")));
    }
    (0..digits.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&digits[i..i + 2], 16).map_err(|_| CodecError::Hex(s.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIG_VECTOR: [u8; 12] = [0x00, 0x0A, 0x00, 0x07, 0x76, 0x45, 0xC4, 0x00, 0x00, 0x01, 0xB5, 0x80];

    fn fig_msg() -> WssFlowMod {
        WssFlowMod { in_port: 10, out_port: 7, center_freq: 1_984_283_648, filter_width: 112_000 }
    }

    #[test]
    fn wss_golden_vector() {
        assert_eq!(encode_wss_flowmod(&fig_msg()).unwrap(), FIG_VECTOR);
        assert_eq!(decode_wss_flowmod(&FIG_VECTOR).unwrap(), fig_msg());
        assert_eq!(to_hex(&FIG_VECTOR), "00 0A 00 07 76 45 C4 00 00 01 B5 80");
    }

    #[test]
    fn wss_fields_read_as_physical_values() {
        let xc = fig_msg().to_cross_connect().unwrap();
        assert_eq!(xc.center.to_string(), "198.4283648");
        assert_eq!(xc.filter_width_ghz(), 112.0);
        assert_eq!(WssFlowMod::from_cross_connect(&xc).unwrap(), fig_msg());
    }

    #[test]
    fn wss_rejects_bad_input() {
        assert_eq!(decode_wss_flowmod(&FIG_VECTOR[..11]), Err(CodecError::Length { expected: 12, got: 11 }));
        let mut long = FIG_VECTOR.to_vec();
        long.push(0);
        assert_eq!(decode_wss_flowmod(&long), Err(CodecError::Length { expected: 12, got: 13 }));
        let mut zero = FIG_VECTOR;
        zero[8..].fill(0);
        assert_eq!(decode_wss_flowmod(&zero), Err(CodecError::ZeroField("filter_width")));
        assert!(encode_wss_flowmod(&WssFlowMod { filter_width: 0, ..fig_msg() }).is_err());
        assert!(encode_wss_flowmod(&WssFlowMod { center_freq: 0, ..fig_msg() }).is_err());
    }

    #[test]
    fn eth_round_trip_and_layout() {
        let m = EthFlowMod { in_port: Some(25), dst_mac: None, out_port: 26, priority: 100 };
        let b = encode_eth_flowmod(&m);
        assert_eq!(to_hex(&b), "00 19 00 00 00 00 00 00 00 02 00 1A 00 64");
        assert_eq!(decode_eth_flowmod(&b).unwrap(), m);

        let mac: MacAddr = "59:53:83:2A:06:4C".parse().unwrap();
        let m = EthFlowMod { in_port: None, dst_mac: Some(mac), out_port: 28, priority: 1 };
        let b = encode_eth_flowmod(&m);
        assert_eq!(&b[2..8], &[0x59, 0x53, 0x83, 0x2A, 0x06, 0x4C]);
        assert_eq!(decode_eth_flowmod(&b).unwrap(), m);
        assert_eq!(decode_eth_flowmod(&b[..13]), Err(CodecError::Length { expected: 14, got: 13 }));
    }

    #[test]
    fn eth_rejects_noncanonical() {
        let mut b = encode_eth_flowmod(&EthFlowMod { in_port: None, dst_mac: None, out_port: 1, priority: 0 });
        b[1] = 5;
        assert_eq!(decode_eth_flowmod(&b), Err(CodecError::MaskedField("in_port")));
        b[1] = 0;
        b[9] |= 0x04;
        assert_eq!(decode_eth_flowmod(&b), Err(CodecError::UnknownWildcard(0x04)));
    }

    #[test]
    fn framing() {
        let f = encode_frame(&Message::WssAdd(fig_msg())).unwrap();
        assert_eq!(to_hex(&f[..4]), "00 00 01 01");
        assert_eq!(&f[4..], FIG_VECTOR);
        assert_eq!(decode_frame(&f).unwrap(), Message::WssAdd(fig_msg()));
        assert_eq!(decode_frame(&[0, 0, 9, 9]), Err(CodecError::UnknownTag(0x0909)));
        assert!(decode_frame(&[0, 0]).is_err());
    }

    #[test]
    fn hex_parsing() {
        assert_eq!(from_hex("00 0a 00 07 76 45 c4 00 00 01 b5 80").unwrap(), FIG_VECTOR);
        assert_eq!(from_hex("000A0007").unwrap(), vec![0, 10, 0, 7]);
        assert!(from_hex("0").is_err());
        assert!(from_hex("zz").is_err());
    }

    pub(crate) fn arb_wss() -> impl Strategy<Value = WssFlowMod> {
        (any::<u16>(), any::<u16>(), 1..=u32::MAX, 1..=u32::MAX).prop_map(|(i, o, c, w)| WssFlowMod {
            in_port: i,
            out_port: o,
            center_freq: c,
            filter_width: w,
        })
    }

    pub(crate) fn arb_eth() -> impl Strategy<Value = EthFlowMod> {
        (proptest::option::of(any::<u16>()), proptest::option::of(any::<[u8; 6]>()), any::<u16>(), any::<u16>())
            .prop_map(|(i, m, o, p)| EthFlowMod { in_port: i, dst_mac: m.map(MacAddr), out_port: o, priority: p })
    }

    proptest! {
        #[test]
        fn wss_round_trip(m in arb_wss()) {
            prop_assert_eq!(decode_wss_flowmod(&encode_wss_flowmod(&m).unwrap()).unwrap(), m);
        }

        #[test]
        fn eth_round_trip(m in arb_eth()) {
            prop_assert_eq!(decode_eth_flowmod(&encode_eth_flowmod(&m)).unwrap(), m);
        }

        #[test]
        fn decoding_arbitrary_bytes_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..24)) {
            if let Ok(m) = decode_frame(&bytes) {
                prop_assert_eq!(encode_frame(&m).unwrap(), bytes);
            }
        }
    }
}
