//! Core domain types: packets, flows, class labels, and the fixed-size
//! feature matrix used by the classifiers.
//!
//! All types are immutable after construction; invariants are enforced at the
//! constructors so downstream code never re-validates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flows are cut off after this many packets.
pub const MAX_PACKETS: usize = 20;
/// Features per packet, in fixed matrix-row order.
pub const FEATURE_COUNT: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("direction must be 0 or 1, got {0}")]
    InvalidDirection(u8),
    #[error("flow must contain between 1 and {MAX_PACKETS} packets, got {0}")]
    BadPacketCount(usize),
    #[error("first packet must travel source to destination")]
    FirstPacketDirection,
    #[error("inter-arrival time must be finite and nonnegative, got {0}")]
    InvalidInterArrival(f64),
    #[error("matrix column {0} encodes an invalid {1} value")]
    BadMatrixValue(usize, &'static str),
}

/// Which way a packet travelled; `SrcToDst` is the flow initiator's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    DstToSrc = 0,
    SrcToDst = 1,
}

impl Direction {
    pub fn from_bit(bit: u8) -> Result<Self, FlowError> {
        match bit {
            0 => Ok(Direction::DstToSrc),
            1 => Ok(Direction::SrcToDst),
            other => Err(FlowError::InvalidDirection(other)),
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }
}

/// The six per-packet features of Table-style flow records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketFeatures {
    pub src_port: u16,
    pub dst_port: u16,
    /// Seconds since the previous packet; 0 for the first packet of a flow.
    pub inter_arrival_time: f64,
    pub payload_length: u32,
    pub direction: Direction,
    /// 0 for protocols without a window field (e.g. UDP).
    pub tcp_window_size: u32,
}

impl PacketFeatures {
    pub fn new(
        src_port: u16,
        dst_port: u16,
        inter_arrival_time: f64,
        payload_length: u32,
        direction: Direction,
        tcp_window_size: u32,
    ) -> Result<Self, FlowError> {
        if !inter_arrival_time.is_finite() || inter_arrival_time < 0.0 {
            return Err(FlowError::InvalidInterArrival(inter_arrival_time));
        }
        Ok(PacketFeatures {
            src_port,
            dst_port,
            inter_arrival_time,
            payload_length,
            direction,
            tcp_window_size,
        })
    }
}

/// Dense class identifier; an index into a dataset's label table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: ClassId,
    pub name: String,
}

/// Where a flow came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Real,
    Generated,
    Oversampled,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Generated => "generated",
            Origin::Oversampled => "oversampled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(Origin::Real),
            "generated" => Some(Origin::Generated),
            "oversampled" => Some(Origin::Oversampled),
            _ => None,
        }
    }
}

/// One labeled flow: 1 to 20 packets, first packet always source→destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    packets: Vec<PacketFeatures>,
    pub label: ClassId,
    pub origin: Origin,
}

impl FlowRecord {
    pub fn new(
        packets: Vec<PacketFeatures>,
        label: ClassId,
        origin: Origin,
    ) -> Result<Self, FlowError> {
        if packets.is_empty() || packets.len() > MAX_PACKETS {
            return Err(FlowError::BadPacketCount(packets.len()));
        }
        if packets[0].direction != Direction::SrcToDst {
            return Err(FlowError::FirstPacketDirection);
        }
        Ok(FlowRecord {
            packets,
            label,
            origin,
        })
    }

    pub fn packets(&self) -> &[PacketFeatures] {
        &self.packets
    }

    pub fn packet_count(&self) -> usize {
        self.packets.len()
    }
}

/// 6 x 20 feature matrix; columns beyond the true packet count are zero.
///
/// Row order: src_port, dst_port, inter_arrival_time, payload_length,
/// direction, tcp_window_size.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    pub values: [[f64; MAX_PACKETS]; FEATURE_COUNT],
}

/// Packs a flow into the fixed 6 x 20 matrix, zero-padding short flows.
pub fn to_matrix(flow: &FlowRecord) -> FlowMatrix {
    let mut values = [[0.0; MAX_PACKETS]; FEATURE_COUNT];
    for (j, p) in flow.packets().iter().enumerate() {
        values[0][j] = f64::from(p.src_port);
        values[1][j] = f64::from(p.dst_port);
        values[2][j] = p.inter_arrival_time;
        values[3][j] = f64::from(p.payload_length);
        values[4][j] = f64::from(p.direction.bit());
        values[5][j] = f64::from(p.tcp_window_size);
    }
    FlowMatrix { values }
}

/// Inverse of [`to_matrix`] given the true packet count.
pub fn from_matrix(
    matrix: &FlowMatrix,
    packet_count: usize,
    label: ClassId,
    origin: Origin,
) -> Result<FlowRecord, FlowError> {
    if packet_count == 0 || packet_count > MAX_PACKETS {
        return Err(FlowError::BadPacketCount(packet_count));
    }
    let mut packets = Vec::with_capacity(packet_count);
    for j in 0..packet_count {
        let v = &matrix.values;
        let src = decode_int(v[0][j], j, "src_port", 65535)? as u16;
        let dst = decode_int(v[1][j], j, "dst_port", 65535)? as u16;
        let dir_bits = decode_int(v[4][j], j, "direction", 1)? as u8;
        let payload = decode_int(v[3][j], j, "payload_length", u32::MAX as u64)? as u32;
        let window = decode_int(v[5][j], j, "tcp_window_size", u32::MAX as u64)? as u32;
        packets.push(PacketFeatures::new(
            src,
            dst,
            v[2][j],
            payload,
            Direction::from_bit(dir_bits)?,
            window,
        )?);
    }
    FlowRecord::new(packets, label, origin)
}

fn decode_int(v: f64, col: usize, what: &'static str, max: u64) -> Result<u64, FlowError> {
    if !v.is_finite() || v < 0.0 || v.fract() != 0.0 || v > max as f64 {
        return Err(FlowError::BadMatrixValue(col, what));
    }
    Ok(v as u64)
}
