//! Synthetic flow dataset generation from a declarative TOML spec, standing
//! in for captures that cannot ship with the repository.
//!
//! Spec format (one `[[class]]` table per class, two or more classes):
//!
//! ```toml
//! [[class]]
//! name = "web"
//! count = 6000
//! server_ports = [443, 80]          # or: server_port_range = [10000, 10999]
//! client_port_range = [32768, 60999]
//! pattern = "alternating"           # alternating | download | upload | bursts
//! flip_prob = 0.05
//! min_packets = 4
//! max_packets = 20
//! iat = { dist = "lognormal", mu = -4.0, sigma = 0.8 }
//! payload = { dist = "mix2", mu1 = 300.0, sigma1 = 80.0, mu2 = 1100.0, sigma2 = 150.0, w1 = 0.5 }
//! window = { dist = "normal", mu = 26000.0, sigma = 4000.0 }
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use thiserror::Error;

use crate::flow::{ClassId, ClassLabel, Direction, FlowRecord, Origin, PacketFeatures, MAX_PACKETS};
use crate::ingest::Dataset;
use crate::seeds;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("failed to read spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse spec: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Parametric scalar distribution.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum DistSpec {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { mu: f64, sigma: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// Two-component normal mixture; `w1` is the weight of the first mode.
    Mix2 {
        mu1: f64,
        sigma1: f64,
        mu2: f64,
        sigma2: f64,
        w1: f64,
    },
}

impl DistSpec {
    fn validate(&self, what: &str) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        match self {
            DistSpec::Constant { value } if !value.is_finite() => {
                bad(format!("{what}: constant must be finite"))
            }
            DistSpec::Uniform { lo, hi } if lo > hi => {
                bad(format!("{what}: uniform lo > hi"))
            }
            DistSpec::Normal { sigma, .. } | DistSpec::LogNormal { sigma, .. }
                if *sigma < 0.0 =>
            {
                bad(format!("{what}: sigma must be nonnegative"))
            }
            DistSpec::Mix2 { w1, .. } if !(0.0..=1.0).contains(w1) => {
                bad(format!("{what}: mixture weight outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            DistSpec::Constant { value } => value,
            DistSpec::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
            DistSpec::Normal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            }
            DistSpec::LogNormal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                (mu + sigma * z).exp()
            }
            DistSpec::Mix2 {
                mu1,
                sigma1,
                mu2,
                sigma2,
                w1,
            } => {
                let z: f64 = rng.sample(StandardNormal);
                if rng.gen::<f64>() < w1 {
                    mu1 + sigma1 * z
                } else {
                    mu2 + sigma2 * z
                }
            }
        }
    }
}

/// How packet directions evolve after the mandatory forward first packet.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DirectionPattern {
    /// Strict 1,0,1,0,... with `flip_prob` noise.
    Alternating,
    /// Mostly reverse traffic after the request.
    Download,
    /// Mostly forward traffic.
    Upload,
    /// Runs of forward packets answered by runs of reverse packets.
    Bursts,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub count: usize,
    #[serde(default)]
    pub server_ports: Vec<u16>,
    #[serde(default)]
    pub server_port_range: Option<(u16, u16)>,
    pub client_port_range: (u16, u16),
    pub pattern: DirectionPattern,
    #[serde(default)]
    pub flip_prob: f64,
    pub min_packets: usize,
    pub max_packets: usize,
    pub iat: DistSpec,
    pub payload: DistSpec,
    pub window: DistSpec,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SynthSpec {
    #[serde(rename = "class")]
    pub classes: Vec<ClassSpec>,
}

impl SynthSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self, SynthError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.classes.len() < 2 {
            return Err(SynthError::InvalidSpec(
                "need at least 2 classes".to_string(),
            ));
        }
        for c in &self.classes {
            let ctx = &c.name;
            if c.count == 0 {
                return Err(SynthError::InvalidSpec(format!("{ctx}: count must be > 0")));
            }
            if c.server_ports.is_empty() && c.server_port_range.is_none() {
                return Err(SynthError::InvalidSpec(format!(
                    "{ctx}: need server_ports or server_port_range"
                )));
            }
            if let Some((lo, hi)) = c.server_port_range {
                if lo > hi {
                    return Err(SynthError::InvalidSpec(format!(
                        "{ctx}: server_port_range lo > hi"
                    )));
                }
            }
            if c.client_port_range.0 > c.client_port_range.1 {
                return Err(SynthError::InvalidSpec(format!(
                    "{ctx}: client_port_range lo > hi"
                )));
            }
            if !(0.0..=1.0).contains(&c.flip_prob) {
                return Err(SynthError::InvalidSpec(format!(
                    "{ctx}: flip_prob outside [0, 1]"
                )));
            }
            if c.min_packets == 0 || c.min_packets > c.max_packets || c.max_packets > MAX_PACKETS {
                return Err(SynthError::InvalidSpec(format!(
                    "{ctx}: packet bounds must satisfy 1 <= min <= max <= {MAX_PACKETS}"
                )));
            }
            c.iat.validate(&format!("{ctx}.iat"))?;
            c.payload.validate(&format!("{ctx}.payload"))?;
            c.window.validate(&format!("{ctx}.window"))?;
        }
        Ok(())
    }
}

fn directions<R: Rng>(pattern: DirectionPattern, flip_prob: f64, len: usize, rng: &mut R) -> Vec<Direction> {
    let mut dirs = Vec::with_capacity(len);
    dirs.push(Direction::SrcToDst);
    let mut run_forward = true;
    let mut run_left: usize = 0;
    for i in 1..len {
        let intended = match pattern {
            DirectionPattern::Alternating => i % 2 == 0,
            DirectionPattern::Download => rng.gen::<f64>() < 0.15,
            DirectionPattern::Upload => rng.gen::<f64>() >= 0.15,
            DirectionPattern::Bursts => {
                if run_left == 0 {
                    run_forward = !run_forward;
                    run_left = rng.gen_range(1..=4);
                }
                run_left -= 1;
                run_forward
            }
        };
        let flipped = rng.gen::<f64>() < flip_prob;
        let forward = intended ^ flipped;
        dirs.push(if forward {
            Direction::SrcToDst
        } else {
            Direction::DstToSrc
        });
    }
    dirs
}

fn sample_nonneg_int<R: Rng>(dist: &DistSpec, rng: &mut R, max: u32) -> u32 {
    let v = dist.sample(rng);
    if v <= 0.0 {
        0
    } else if v >= max as f64 {
        max
    } else {
        v.round() as u32
    }
}

/// Generates a deterministic-given-seed dataset from a spec. Class ids follow
/// the spec's listing order.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let labels: Vec<ClassLabel> = spec
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| ClassLabel {
            id: ClassId(i),
            name: c.name.clone(),
        })
        .collect();

    let mut flows = Vec::new();
    for (class_idx, c) in spec.classes.iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive_tagged(seed, "synth", class_idx as u64));
        for _ in 0..c.count {
            let len = rng.gen_range(c.min_packets..=c.max_packets);
            let dirs = directions(c.pattern, c.flip_prob, len, &mut rng);
            let client_port =
                rng.gen_range(c.client_port_range.0..=c.client_port_range.1);
            let server_port = if let Some((lo, hi)) = c.server_port_range {
                rng.gen_range(lo..=hi)
            } else {
                c.server_ports[rng.gen_range(0..c.server_ports.len())]
            };
            let mut packets = Vec::with_capacity(len);
            for (i, dir) in dirs.iter().enumerate() {
                let iat = if i == 0 {
                    0.0
                } else {
                    c.iat.sample(&mut rng).max(0.0)
                };
                let payload = sample_nonneg_int(&c.payload, &mut rng, u32::MAX);
                let window = sample_nonneg_int(&c.window, &mut rng, u32::MAX);
                let (src, dst) = match dir {
                    Direction::SrcToDst => (client_port, server_port),
                    Direction::DstToSrc => (server_port, client_port),
                };
                packets.push(
                    PacketFeatures::new(src, dst, iat, payload, *dir, window)
                        .expect("generated packet is valid"),
                );
            }
            flows.push(
                FlowRecord::new(packets, ClassId(class_idx), Origin::Real)
                    .expect("generated flow is valid"),
            );
        }
    }
    Ok(Dataset::new(flows, labels))
}
