//! Flow-sentence embedding front end: ports become characters via a
//! frequency-based lookup table, each packet becomes a three-character word
//! (source char, destination char, direction digit), and a flow becomes a
//! padded sequence of word indices. A capped one-hot port encoding ships as
//! the comparison baseline.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowRecord, MAX_PACKETS};
use crate::ingest::{ClassStats, Dataset};

/// Character assigned to ports never seen in training.
pub const OOV_CHAR: char = 'Z';
/// Index of the padding word in every vocabulary.
pub const PAD_INDEX: usize = 0;
/// Index of the unknown-word marker in every vocabulary.
pub const OOV_WORD_INDEX: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("class statistics are empty")]
    EmptyStats,
    #[error("at most 25 classes fit the character alphabet (Z is reserved), got {0}")]
    TooManyClasses(usize),
    #[error("direction must be 0 or 1, got {0}")]
    InvalidDirection(u8),
    #[error("corrupt lookup table line: {0}")]
    BadTableLine(String),
}

/// Port → character map. Each observed port gets the character of the class
/// in which it is most frequent (ties toward the lower class id); unseen
/// ports resolve to [`OOV_CHAR`] at encode time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortLookupTable {
    class_chars: Vec<char>,
    #[serde(with = "port_map_serde")]
    assignments: BTreeMap<u16, char>,
}

/// JSON maps need string keys; store port assignments as pairs instead.
mod port_map_serde {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<u16, char>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(u16, char)> = map.iter().map(|(&k, &v)| (k, v)).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<u16, char>, D::Error> {
        let pairs: Vec<(u16, char)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

impl PortLookupTable {
    pub fn build(stats: &ClassStats) -> Result<Self, EmbedError> {
        let k = stats.counts.len();
        if k == 0 || stats.counts.iter().all(|&c| c == 0) {
            return Err(EmbedError::EmptyStats);
        }
        if k > 25 {
            return Err(EmbedError::TooManyClasses(k));
        }
        let class_chars: Vec<char> = (0..k)
            .map(|i| char::from(b'A' + i as u8))
            .collect();

        let mut ports: BTreeSet<u16> = BTreeSet::new();
        for hist in &stats.port_histograms {
            ports.extend(hist.keys().copied());
        }
        let mut assignments = BTreeMap::new();
        for port in ports {
            let mut best_class = 0usize;
            let mut best_count = 0u64;
            for (class, hist) in stats.port_histograms.iter().enumerate() {
                let count = hist.get(&port).copied().unwrap_or(0);
                if count > best_count {
                    best_count = count;
                    best_class = class;
                }
            }
            assignments.insert(port, class_chars[best_class]);
        }
        Ok(PortLookupTable {
            class_chars,
            assignments,
        })
    }

    /// Character of the class with the given id.
    pub fn class_char(&self, class: usize) -> char {
        self.class_chars[class]
    }

    pub fn char_for(&self, port: u16) -> char {
        self.assignments.get(&port).copied().unwrap_or(OOV_CHAR)
    }

    pub fn mapped_port_count(&self) -> usize {
        self.assignments.len()
    }

    /// One `port char` mapping per line, ports ascending. Deterministic for
    /// identical statistics.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (port, ch) in &self.assignments {
            out.push_str(&format!("{port} {ch}\n"));
        }
        out
    }

    pub fn from_text(text: &str, class_count: usize) -> Result<Self, EmbedError> {
        let mut assignments = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let port: u16 = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| EmbedError::BadTableLine(line.to_string()))?;
            let ch = parts
                .next()
                .and_then(|c| c.chars().next())
                .ok_or_else(|| EmbedError::BadTableLine(line.to_string()))?;
            assignments.insert(port, ch);
        }
        Ok(PortLookupTable {
            class_chars: (0..class_count).map(|i| char::from(b'A' + i as u8)).collect(),
            assignments,
        })
    }
}

/// Builds the lookup table from class statistics.
pub fn build_lookup(stats: &ClassStats) -> Result<PortLookupTable, EmbedError> {
    PortLookupTable::build(stats)
}

/// Three-character word for one packet: char(src port), char(dst port),
/// direction digit.
pub fn make_word(
    src_port: u16,
    dst_port: u16,
    direction: u8,
    table: &PortLookupTable,
) -> Result<String, EmbedError> {
    if direction > 1 {
        return Err(EmbedError::InvalidDirection(direction));
    }
    let mut w = String::with_capacity(3);
    w.push(table.char_for(src_port));
    w.push(table.char_for(dst_port));
    w.push(char::from(b'0' + direction));
    Ok(w)
}

/// Word → dense index map over the training words plus padding and
/// unknown-word markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordVocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordVocab {
    /// Collects every word observed in `dataset` under `table`; words are
    /// sorted so rebuilding from the same data is byte-identical.
    pub fn build(dataset: &Dataset, table: &PortLookupTable) -> Self {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for flow in &dataset.flows {
            for p in flow.packets() {
                let w = make_word(p.src_port, p.dst_port, p.direction.bit(), table)
                    .expect("direction bit is 0 or 1");
                seen.insert(w);
            }
        }
        let mut words = vec!["<pad>".to_string(), "<oov>".to_string()];
        words.extend(seen);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        WordVocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV_WORD_INDEX)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// One `index word` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(&format!("{i} {w}\n"));
        }
        out
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }
}

/// Min-max scaler for the three numeric packet features
/// (inter-arrival time, payload length, window size), fit on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    mins: [f64; 3],
    maxs: [f64; 3],
}

impl FeatureScaler {
    pub fn fit(dataset: &Dataset) -> Self {
        let mut mins = [f64::INFINITY; 3];
        let mut maxs = [f64::NEG_INFINITY; 3];
        for flow in &dataset.flows {
            for p in flow.packets() {
                let vals = [
                    p.inter_arrival_time,
                    f64::from(p.payload_length),
                    f64::from(p.tcp_window_size),
                ];
                for i in 0..3 {
                    mins[i] = mins[i].min(vals[i]);
                    maxs[i] = maxs[i].max(vals[i]);
                }
            }
        }
        FeatureScaler { mins, maxs }
    }

    /// Scales into [0, 1]; constant features map to 0.
    pub fn transform(&self, iat: f64, payload: f64, window: f64) -> [f64; 3] {
        let vals = [iat, payload, window];
        let mut out = [0.0; 3];
        for i in 0..3 {
            let range = self.maxs[i] - self.mins[i];
            out[i] = if range > 0.0 {
                ((vals[i] - self.mins[i]) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }
}

/// Top-K most frequent training ports plus an OTHER bucket, for the one-hot
/// baseline. Bucket `k` (the last) is OTHER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortIndexTable {
    ports: Vec<u16>,
    #[serde(skip)]
    index: HashMap<u16, usize>,
}

impl PortIndexTable {
    pub fn build(stats: &ClassStats, cap: usize) -> Result<Self, EmbedError> {
        if stats.counts.is_empty() || stats.counts.iter().all(|&c| c == 0) {
            return Err(EmbedError::EmptyStats);
        }
        let mut pooled: BTreeMap<u16, u64> = BTreeMap::new();
        for hist in &stats.port_histograms {
            for (&port, &count) in hist {
                *pooled.entry(port).or_insert(0) += count;
            }
        }
        let mut by_freq: Vec<(u16, u64)> = pooled.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let ports: Vec<u16> = by_freq.into_iter().take(cap).map(|(p, _)| p).collect();
        let index = ports.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        Ok(PortIndexTable { ports, index })
    }

    /// Number of port buckets excluding OTHER.
    pub fn cap(&self) -> usize {
        self.ports.len()
    }

    pub fn other_bucket(&self) -> usize {
        self.ports.len()
    }

    pub fn bucket(&self, port: u16) -> usize {
        self.index.get(&port).copied().unwrap_or(self.ports.len())
    }

    /// Width of one packet's one-hot feature block: two (cap+1)-wide port
    /// one-hots plus the direction bit.
    pub fn packet_width(&self) -> usize {
        2 * (self.ports.len() + 1) + 1
    }

    fn rebuild_index(&mut self) {
        self.index = self.ports.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    }
}

/// Classifier input encodings. Sequences are padded to [`MAX_PACKETS`];
/// `valid` counts the real packets at the front.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedFlow {
    Fs {
        tokens: Vec<usize>,
        numerics: Vec<[f64; 3]>,
        valid: usize,
    },
    OneHot {
        src_buckets: Vec<usize>,
        dst_buckets: Vec<usize>,
        directions: Vec<u8>,
        numerics: Vec<[f64; 3]>,
        valid: usize,
    },
}

impl EncodedFlow {
    pub fn valid(&self) -> usize {
        match self {
            EncodedFlow::Fs { valid, .. } | EncodedFlow::OneHot { valid, .. } => *valid,
        }
    }
}

/// Flow-sentence encoder: lookup table + word vocabulary + numeric scaler,
/// all fit on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsEncoder {
    pub table: PortLookupTable,
    pub vocab: WordVocab,
    pub scaler: FeatureScaler,
}

impl FsEncoder {
    pub fn fit(train: &Dataset, stats: &ClassStats) -> Result<Self, EmbedError> {
        let table = PortLookupTable::build(stats)?;
        let vocab = WordVocab::build(train, &table);
        let scaler = FeatureScaler::fit(train);
        Ok(FsEncoder {
            table,
            vocab,
            scaler,
        })
    }

    /// One word index per packet (unknown words map to the OOV entry),
    /// padded with PAD to length 20.
    pub fn encode(&self, flow: &FlowRecord) -> EncodedFlow {
        self.encode_padded(flow, MAX_PACKETS)
    }

    /// Same as [`FsEncoder::encode`] with an explicit padded length
    /// (at least the packet count).
    pub fn encode_padded(&self, flow: &FlowRecord, padded_len: usize) -> EncodedFlow {
        let valid = flow.packet_count();
        assert!(padded_len >= valid);
        let mut tokens = vec![PAD_INDEX; padded_len];
        let mut numerics = vec![[0.0; 3]; padded_len];
        for (j, p) in flow.packets().iter().enumerate() {
            let word = make_word(p.src_port, p.dst_port, p.direction.bit(), &self.table)
                .expect("direction bit is 0 or 1");
            tokens[j] = self.vocab.index_of(&word);
            numerics[j] = self.scaler.transform(
                p.inter_arrival_time,
                f64::from(p.payload_length),
                f64::from(p.tcp_window_size),
            );
        }
        EncodedFlow::Fs {
            tokens,
            numerics,
            valid,
        }
    }

    pub fn rebuild_indexes(&mut self) {
        self.vocab.rebuild_index();
    }
}

/// One-hot baseline encoder: capped port index table + numeric scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    pub ports: PortIndexTable,
    pub scaler: FeatureScaler,
}

impl OneHotEncoder {
    pub const DEFAULT_CAP: usize = 1024;

    pub fn fit(train: &Dataset, stats: &ClassStats, cap: usize) -> Result<Self, EmbedError> {
        Ok(OneHotEncoder {
            ports: PortIndexTable::build(stats, cap)?,
            scaler: FeatureScaler::fit(train),
        })
    }

    pub fn encode(&self, flow: &FlowRecord) -> EncodedFlow {
        self.encode_padded(flow, MAX_PACKETS)
    }

    pub fn encode_padded(&self, flow: &FlowRecord, padded_len: usize) -> EncodedFlow {
        let valid = flow.packet_count();
        assert!(padded_len >= valid);
        let other = self.ports.other_bucket();
        let mut src_buckets = vec![other; padded_len];
        let mut dst_buckets = vec![other; padded_len];
        let mut directions = vec![0u8; padded_len];
        let mut numerics = vec![[0.0; 3]; padded_len];
        for (j, p) in flow.packets().iter().enumerate() {
            src_buckets[j] = self.ports.bucket(p.src_port);
            dst_buckets[j] = self.ports.bucket(p.dst_port);
            directions[j] = p.direction.bit();
            numerics[j] = self.scaler.transform(
                p.inter_arrival_time,
                f64::from(p.payload_length),
                f64::from(p.tcp_window_size),
            );
        }
        EncodedFlow::OneHot {
            src_buckets,
            dst_buckets,
            directions,
            numerics,
            valid,
        }
    }

    pub fn rebuild_indexes(&mut self) {
        self.ports.rebuild_index();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{ClassId, ClassLabel, Direction, Origin, PacketFeatures};
    use crate::ingest::class_stats;

    /// Stats where port 80 is most frequent in class 0 ('A') and 443 in
    /// class 4 ('E'), mirroring the worked word-table example.
    fn table_with_a_and_e() -> PortLookupTable {
        let mut hists = vec![BTreeMap::new(); 5];
        hists[0].insert(80u16, 10u64);
        hists[4].insert(443u16, 10u64);
        let stats = ClassStats {
            counts: vec![10, 1, 1, 1, 10],
            fractions: vec![10.0 / 23.0, 1.0 / 23.0, 1.0 / 23.0, 1.0 / 23.0, 10.0 / 23.0],
            port_histograms: hists,
        };
        build_lookup(&stats).unwrap()
    }

    #[test]
    fn port_80_maps_to_class_zero_char() {
        let table = table_with_a_and_e();
        assert_eq!(table.char_for(80), 'A');
        assert_eq!(table.char_for(443), 'E');
    }

    #[test]
    fn word_examples_from_the_lookup_table() {
        let table = table_with_a_and_e();
        assert_eq!(make_word(80, 443, 0, &table).unwrap(), "AE0");
        assert_eq!(make_word(443, 80, 1, &table).unwrap(), "EA1");
    }

    #[test]
    fn unmapped_port_uses_oov_char() {
        let table = table_with_a_and_e();
        assert_eq!(make_word(61999, 80, 1, &table).unwrap(), "ZA1");
    }

    #[test]
    fn direction_outside_binary_is_rejected() {
        let table = table_with_a_and_e();
        assert_eq!(
            make_word(80, 443, 2, &table).unwrap_err(),
            EmbedError::InvalidDirection(2)
        );
    }

    #[test]
    fn ties_break_toward_lower_class_id() {
        let mut hists = vec![BTreeMap::new(); 8];
        hists[3].insert(1234u16, 5u64);
        hists[7].insert(1234u16, 5u64);
        let stats = ClassStats {
            counts: vec![1; 8],
            fractions: vec![0.125; 8],
            port_histograms: hists,
        };
        let table = build_lookup(&stats).unwrap();
        assert_eq!(table.char_for(1234), 'D'); // class 3
    }

    #[test]
    fn empty_stats_are_rejected() {
        let stats = ClassStats {
            counts: vec![],
            fractions: vec![],
            port_histograms: vec![],
        };
        assert_eq!(build_lookup(&stats).unwrap_err(), EmbedError::EmptyStats);
    }

    #[test]
    fn lookup_text_round_trips_and_is_deterministic() {
        let table = table_with_a_and_e();
        let t1 = table.to_text();
        let t2 = table_with_a_and_e().to_text();
        assert_eq!(t1, t2);
        let back = PortLookupTable::from_text(&t1, 5).unwrap();
        assert_eq!(table, back);
    }

    fn toy_dataset() -> Dataset {
        let labels = vec![
            ClassLabel {
                id: ClassId(0),
                name: "web".into(),
            },
            ClassLabel {
                id: ClassId(1),
                name: "dns".into(),
            },
        ];
        let mk = |src, dst, dir: u8, class| {
            let first =
                PacketFeatures::new(src, dst, 0.0, 100, Direction::SrcToDst, 500).unwrap();
            let second = PacketFeatures::new(
                dst,
                src,
                0.1,
                200,
                Direction::from_bit(dir).unwrap(),
                700,
            )
            .unwrap();
            FlowRecord::new(vec![first, second], ClassId(class), Origin::Real).unwrap()
        };
        Dataset::new(
            vec![mk(30000, 80, 0, 0), mk(30001, 80, 0, 0), mk(40000, 53, 1, 1)],
            labels,
        )
    }

    #[test]
    fn encode_flow_pads_to_twenty() {
        let ds = toy_dataset();
        let stats = class_stats(&ds).unwrap();
        let enc = FsEncoder::fit(&ds, &stats).unwrap();
        match enc.encode(&ds.flows[0]) {
            EncodedFlow::Fs {
                tokens,
                numerics,
                valid,
            } => {
                assert_eq!(tokens.len(), MAX_PACKETS);
                assert_eq!(numerics.len(), MAX_PACKETS);
                assert_eq!(valid, 2);
                assert_ne!(tokens[0], PAD_INDEX);
                assert_ne!(tokens[1], PAD_INDEX);
                for &t in &tokens[2..] {
                    assert_eq!(t, PAD_INDEX);
                }
            }
            other => panic!("expected fs encoding, got {other:?}"),
        }
    }

    #[test]
    fn encoding_is_deterministic_and_oov_words_map_to_marker() {
        let ds = toy_dataset();
        let stats = class_stats(&ds).unwrap();
        let enc = FsEncoder::fit(&ds, &stats).unwrap();
        assert_eq!(enc.encode(&ds.flows[0]), enc.encode(&ds.flows[0]));

        // A flow whose word was never seen in training.
        let p = PacketFeatures::new(9999, 8888, 0.0, 1, Direction::SrcToDst, 1).unwrap();
        let unseen = FlowRecord::new(vec![p], ClassId(0), Origin::Real).unwrap();
        match enc.encode(&unseen) {
            EncodedFlow::Fs { tokens, .. } => assert_eq!(tokens[0], OOV_WORD_INDEX),
            other => panic!("expected fs encoding, got {other:?}"),
        }
    }

    #[test]
    fn vocab_size_is_bounded_by_alphabet_squared() {
        let ds = toy_dataset();
        let stats = class_stats(&ds).unwrap();
        let enc = FsEncoder::fit(&ds, &stats).unwrap();
        // 19-class ceiling: (19+1)^2 * 2 + 2.
        assert!(enc.vocab.len() <= 802);
    }

    #[test]
    fn onehot_buckets_and_width() {
        let ds = toy_dataset();
        let stats = class_stats(&ds).unwrap();
        let enc = OneHotEncoder::fit(&ds, &stats, 4).unwrap();
        assert_eq!(enc.ports.packet_width(), 2 * 5 + 1);
        // Unknown port falls into OTHER.
        assert_eq!(enc.ports.bucket(62000), enc.ports.other_bucket());
        // Port 80 is the most frequent and must occupy bucket 0.
        assert_eq!(enc.ports.bucket(80), 0);
        match enc.encode(&ds.flows[0]) {
            EncodedFlow::OneHot {
                src_buckets,
                dst_buckets,
                directions,
                valid,
                ..
            } => {
                assert_eq!(valid, 2);
                assert!(src_buckets[0] < enc.ports.cap());
                assert_eq!(dst_buckets[0], 0);
                assert_eq!(directions[0], 1);
            }
            other => panic!("expected one-hot encoding, got {other:?}"),
        }
    }

    #[test]
    fn scaler_maps_training_range_to_unit_interval() {
        let ds = toy_dataset();
        let scaler = FeatureScaler::fit(&ds);
        let lo = scaler.transform(0.0, 100.0, 500.0);
        let hi = scaler.transform(0.1, 200.0, 700.0);
        assert_eq!(lo, [0.0, 0.0, 0.0]);
        assert_eq!(hi, [1.0, 1.0, 1.0]);
    }
}
