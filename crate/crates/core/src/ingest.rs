//! Dataset loading, writing, stratified splitting, and class statistics.
//!
//! File schema (CSV with header, or JSONL with the same field names):
//! `label,flow_id,pkt_index,src_port,dst_port,inter_arrival_time,payload_length,direction,tcp_window_size[,origin]`
//! One row per packet; rows of a flow are contiguous with `pkt_index`
//! ascending from 0. `origin` is optional on read and always written.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    ClassId, ClassLabel, Direction, FlowRecord, Origin, PacketFeatures, MAX_PACKETS,
};
use crate::seeds;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("dataset contains no flows")]
    EmptyDataset,
    #[error("{rejected} of {total} rows rejected (threshold 10%); first errors: {examples:?}")]
    TooManyRejected {
        rejected: usize,
        total: usize,
        examples: Vec<String>,
    },
    #[error("train fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("class {0} has fewer than 2 flows and cannot be split")]
    ClassTooSmall(String),
}

/// On-disk formats understood by the loader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(FileFormat::Csv),
            "jsonl" => Some(FileFormat::Jsonl),
            _ => None,
        }
    }
}

/// A labeled flow dataset with its class table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub flows: Vec<FlowRecord>,
    pub labels: Vec<ClassLabel>,
    /// Seed recorded by the split that produced this dataset, if any.
    pub split_seed: Option<u64>,
}

impl Dataset {
    pub fn new(flows: Vec<FlowRecord>, labels: Vec<ClassLabel>) -> Self {
        Dataset {
            flows,
            labels,
            split_seed: None,
        }
    }

    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label_name(&self, id: ClassId) -> &str {
        &self.labels[id.0].name
    }

    pub fn counts_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.labels.len()];
        for f in &self.flows {
            counts[f.label.0] += 1;
        }
        counts
    }

    pub fn flows_of_class(&self, id: ClassId) -> impl Iterator<Item = &FlowRecord> {
        self.flows.iter().filter(move |f| f.label == id)
    }
}

/// What the loader accepted, dropped, and why.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub rows_total: usize,
    pub rows_rejected: usize,
    pub flows_loaded: usize,
    pub flows_rejected: usize,
    /// Flows dropped because their first packet travelled dst→src.
    pub first_packet_rejects: usize,
    /// Packets beyond the 20-packet cutoff, silently truncated.
    pub truncated_packets: usize,
    /// First few row errors with line numbers.
    pub errors: Vec<String>,
}

impl LoadReport {
    fn note_error(&mut self, line: usize, msg: impl std::fmt::Display) {
        self.rows_rejected += 1;
        if self.errors.len() < 20 {
            self.errors.push(format!("line {line}: {msg}"));
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRow {
    label: String,
    flow_id: String,
    pkt_index: u32,
    src_port: u16,
    dst_port: u16,
    inter_arrival_time: f64,
    payload_length: u32,
    direction: u8,
    tcp_window_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<String>,
}

/// Loads a dataset, dropping invalid rows/flows with a report. Fails if more
/// than 10% of rows are rejected.
pub fn load_dataset(path: &Path, format: FileFormat) -> Result<(Dataset, LoadReport), IngestError> {
    let rows = read_rows(path, format)?;
    assemble(rows)
}

fn read_rows(
    path: &Path,
    format: FileFormat,
) -> Result<Vec<(usize, Result<RawRow, String>)>, IngestError> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::FileNotFound(path.display().to_string())
        } else {
            IngestError::Io {
                path: path.display().to_string(),
                source: e,
            }
        }
    })?;
    let mut out = Vec::new();
    match format {
        FileFormat::Csv => {
            let mut reader = csv::Reader::from_reader(BufReader::new(file));
            let headers = reader
                .headers()
                .map_err(|e| IngestError::Schema(e.to_string()))?
                .clone();
            const REQUIRED: [&str; 9] = [
                "label",
                "flow_id",
                "pkt_index",
                "src_port",
                "dst_port",
                "inter_arrival_time",
                "payload_length",
                "direction",
                "tcp_window_size",
            ];
            for col in REQUIRED {
                if !headers.iter().any(|h| h == col) {
                    return Err(IngestError::Schema(format!("missing column `{col}`")));
                }
            }
            for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
                // Header is line 1; first record is line 2.
                out.push((i + 2, rec.map_err(|e| e.to_string())));
            }
        }
        FileFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| IngestError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                out.push((
                    i + 1,
                    serde_json::from_str::<RawRow>(&line).map_err(|e| e.to_string()),
                ));
            }
        }
    }
    Ok(out)
}

fn assemble(
    rows: Vec<(usize, Result<RawRow, String>)>,
) -> Result<(Dataset, LoadReport), IngestError> {
    let mut report = LoadReport {
        rows_total: rows.len(),
        ..LoadReport::default()
    };
    let mut label_ids: HashMap<String, ClassId> = HashMap::new();
    let mut labels: Vec<ClassLabel> = Vec::new();
    let mut flows: Vec<FlowRecord> = Vec::new();

    struct Open {
        flow_id: String,
        label: ClassId,
        origin: Origin,
        packets: Vec<PacketFeatures>,
        next_index: u32,
        poisoned: bool,
    }
    let mut open: Option<Open> = None;

    let finalize = |open: &mut Option<Open>,
                        flows: &mut Vec<FlowRecord>,
                        report: &mut LoadReport| {
        if let Some(o) = open.take() {
            if o.poisoned {
                report.flows_rejected += 1;
                return;
            }
            match FlowRecord::new(o.packets, o.label, o.origin) {
                Ok(f) => {
                    flows.push(f);
                    report.flows_loaded += 1;
                }
                Err(crate::flow::FlowError::FirstPacketDirection) => {
                    report.flows_rejected += 1;
                    report.first_packet_rejects += 1;
                }
                Err(_) => report.flows_rejected += 1,
            }
        }
    };

    for (line, row) in rows {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.note_error(line, e);
                if let Some(o) = open.as_mut() {
                    o.poisoned = true;
                }
                continue;
            }
        };

        let starts_new = open.as_ref().map_or(true, |o| o.flow_id != row.flow_id);
        if starts_new {
            finalize(&mut open, &mut flows, &mut report);
            let label = *label_ids.entry(row.label.clone()).or_insert_with(|| {
                let id = ClassId(labels.len());
                labels.push(ClassLabel {
                    id,
                    name: row.label.clone(),
                });
                id
            });
            let origin = row
                .origin
                .as_deref()
                .and_then(Origin::parse)
                .unwrap_or(Origin::Real);
            open = Some(Open {
                flow_id: row.flow_id.clone(),
                label,
                origin,
                packets: Vec::new(),
                next_index: 0,
                poisoned: false,
            });
        }

        let o = open.as_mut().expect("open flow");
        if o.poisoned {
            continue;
        }
        if row.pkt_index != o.next_index {
            report.note_error(
                line,
                format!(
                    "pkt_index {} out of order (expected {})",
                    row.pkt_index, o.next_index
                ),
            );
            o.poisoned = true;
            continue;
        }
        o.next_index += 1;
        if row.pkt_index as usize >= MAX_PACKETS {
            report.truncated_packets += 1;
            continue;
        }
        let direction = match Direction::from_bit(row.direction) {
            Ok(d) => d,
            Err(e) => {
                report.note_error(line, e);
                o.poisoned = true;
                continue;
            }
        };
        match PacketFeatures::new(
            row.src_port,
            row.dst_port,
            row.inter_arrival_time,
            row.payload_length,
            direction,
            row.tcp_window_size,
        ) {
            Ok(p) => o.packets.push(p),
            Err(e) => {
                report.note_error(line, e);
                o.poisoned = true;
            }
        }
    }
    finalize(&mut open, &mut flows, &mut report);

    if report.rows_rejected * 10 > report.rows_total {
        return Err(IngestError::TooManyRejected {
            rejected: report.rows_rejected,
            total: report.rows_total,
            examples: report.errors.clone(),
        });
    }
    if flows.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    Ok((Dataset::new(flows, labels), report))
}

/// Writes a dataset in the flow-record schema (with the `origin` column).
/// Output is byte-deterministic for a given dataset.
pub fn write_dataset(dataset: &Dataset, path: &Path, format: FileFormat) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    };

    match format {
        FileFormat::Csv => {
            writeln!(
                w,
                "label,flow_id,pkt_index,src_port,dst_port,inter_arrival_time,payload_length,direction,tcp_window_size,origin"
            )
            .map_err(io_err)?;
            for (fi, flow) in dataset.flows.iter().enumerate() {
                let label = dataset.label_name(flow.label);
                for (pi, p) in flow.packets().iter().enumerate() {
                    writeln!(
                        w,
                        "{label},f{fi},{pi},{},{},{},{},{},{},{}",
                        p.src_port,
                        p.dst_port,
                        p.inter_arrival_time,
                        p.payload_length,
                        p.direction.bit(),
                        p.tcp_window_size,
                        flow.origin.as_str()
                    )
                    .map_err(io_err)?;
                }
            }
        }
        FileFormat::Jsonl => {
            for (fi, flow) in dataset.flows.iter().enumerate() {
                for (pi, p) in flow.packets().iter().enumerate() {
                    let row = RawRow {
                        label: dataset.label_name(flow.label).to_string(),
                        flow_id: format!("f{fi}"),
                        pkt_index: pi as u32,
                        src_port: p.src_port,
                        dst_port: p.dst_port,
                        inter_arrival_time: p.inter_arrival_time,
                        payload_length: p.payload_length,
                        direction: p.direction.bit(),
                        tcp_window_size: p.tcp_window_size,
                        origin: Some(flow.origin.as_str().to_string()),
                    };
                    let line = serde_json::to_string(&row)
                        .map_err(|e| IngestError::Schema(e.to_string()))?;
                    writeln!(w, "{line}").map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Stratified train/test split: each class contributes
/// `round(train_fraction * n_c)` flows to the train side (clamped so both
/// sides keep at least one flow), shuffled deterministically per class.
pub fn split(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), IngestError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(IngestError::InvalidFraction(train_fraction));
    }
    let counts = dataset.counts_per_class();
    for (id, &n) in counts.iter().enumerate() {
        if n < 2 {
            return Err(IngestError::ClassTooSmall(
                dataset.labels[id].name.clone(),
            ));
        }
    }

    let mut train_idx: Vec<usize> = Vec::new();
    let mut test_idx: Vec<usize> = Vec::new();
    for class in 0..dataset.class_count() {
        let mut indices: Vec<usize> = dataset
            .flows
            .iter()
            .enumerate()
            .filter(|(_, f)| f.label.0 == class)
            .map(|(i, _)| i)
            .collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive_tagged(seed, "split", class as u64));
        indices.shuffle(&mut rng);
        let n = indices.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let (tr, te) = indices.split_at(n_train);
        train_idx.extend_from_slice(tr);
        test_idx.extend_from_slice(te);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let pick = |idx: &[usize]| Dataset {
        flows: idx.iter().map(|&i| dataset.flows[i].clone()).collect(),
        labels: dataset.labels.clone(),
        split_seed: Some(seed),
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Per-class counts, fractions of the total, and pooled src/dst port
/// histograms (each flow counts once per distinct port it uses, taken from
/// its first packet).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    pub port_histograms: Vec<BTreeMap<u16, u64>>,
}

pub fn class_stats(dataset: &Dataset) -> Result<ClassStats, IngestError> {
    if dataset.flows.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    let counts = dataset.counts_per_class();
    let total = dataset.flows.len() as f64;
    let fractions = counts.iter().map(|&c| c as f64 / total).collect();
    let mut port_histograms = vec![BTreeMap::new(); dataset.class_count()];
    for flow in &dataset.flows {
        let first = &flow.packets()[0];
        let ports: BTreeSet<u16> = [first.src_port, first.dst_port].into_iter().collect();
        for port in ports {
            *port_histograms[flow.label.0].entry(port).or_insert(0) += 1;
        }
    }
    Ok(ClassStats {
        counts,
        fractions,
        port_histograms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const HEADER: &str =
        "label,flow_id,pkt_index,src_port,dst_port,inter_arrival_time,payload_length,direction,tcp_window_size\n";

    #[test]
    fn loads_well_formed_csv() {
        let csv = format!(
            "{HEADER}web,a,0,80,443,0,100,1,8192\nweb,a,1,443,80,0.1,200,0,8192\ndns,b,0,53,33000,0,60,1,0\nweb,c,0,80,443,0,10,1,100\n"
        );
        let f = write_tmp(&csv);
        let (ds, report) = load_dataset(f.path(), FileFormat::Csv).unwrap();
        assert_eq!(ds.flows.len(), 3);
        assert_eq!(report.flows_loaded, 3);
        assert_eq!(report.rows_rejected, 0);
        assert_eq!(ds.labels.len(), 2);
        assert_eq!(ds.label_name(ClassId(0)), "web");
    }

    #[test]
    fn bad_direction_rejects_the_row() {
        let csv = format!(
            "{HEADER}web,a,0,80,443,0,100,1,8192\nweb,b,0,80,443,0,100,2,8192\nweb,c,0,80,443,0,100,1,8192\nweb,d,0,80,443,0,100,1,8192\nweb,e,0,80,443,0,100,1,8192\nweb,f,0,80,443,0,100,1,8192\nweb,g,0,80,443,0,100,1,8192\nweb,h,0,80,443,0,100,1,8192\nweb,i,0,80,443,0,100,1,8192\nweb,j,0,80,443,0,100,1,8192\nweb,k,0,80,443,0,100,1,8192\n"
        );
        let f = write_tmp(&csv);
        let (ds, report) = load_dataset(f.path(), FileFormat::Csv).unwrap();
        assert_eq!(report.rows_rejected, 1);
        assert_eq!(report.flows_rejected, 1);
        assert_eq!(ds.flows.len(), 10);
    }

    #[test]
    fn header_only_file_is_empty() {
        let f = write_tmp(HEADER);
        assert!(matches!(
            load_dataset(f.path(), FileFormat::Csv),
            Err(IngestError::EmptyDataset)
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_dataset(Path::new("/nonexistent/flows.csv"), FileFormat::Csv);
        assert!(matches!(err, Err(IngestError::FileNotFound(_))));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let f = write_tmp("label,flow_id\nweb,a\n");
        assert!(matches!(
            load_dataset(f.path(), FileFormat::Csv),
            Err(IngestError::Schema(_))
        ));
    }

    #[test]
    fn too_many_rejects_fails_the_load() {
        let csv = format!(
            "{HEADER}web,a,0,80,443,0,100,2,8192\nweb,b,0,80,443,0,100,2,8192\nweb,c,0,80,443,0,100,1,8192\n"
        );
        let f = write_tmp(&csv);
        assert!(matches!(
            load_dataset(f.path(), FileFormat::Csv),
            Err(IngestError::TooManyRejected { rejected: 2, .. })
        ));
    }

    #[test]
    fn first_packet_reversed_counts_separately() {
        let csv = format!(
            "{HEADER}web,a,0,80,443,0,100,0,8192\nweb,b,0,80,443,0,100,1,8192\nweb,c,0,80,443,0,100,1,8192\nweb,d,0,80,443,0,100,1,8192\nweb,e,0,80,443,0,100,1,8192\nweb,f,0,80,443,0,100,1,8192\nweb,g,0,80,443,0,100,1,8192\nweb,h,0,80,443,0,100,1,8192\nweb,i,0,80,443,0,100,1,8192\nweb,j,0,80,443,0,100,1,8192\n"
        );
        let f = write_tmp(&csv);
        let (_, report) = load_dataset(f.path(), FileFormat::Csv).unwrap();
        assert_eq!(report.first_packet_rejects, 1);
        assert_eq!(report.flows_rejected, 1);
    }

    #[test]
    fn jsonl_round_trips_with_csv_semantics() {
        let csv = format!("{HEADER}web,a,0,80,443,0,100,1,8192\ndns,b,0,53,9,0.5,60,1,0\n");
        let f = write_tmp(&csv);
        let (ds, _) = load_dataset(f.path(), FileFormat::Csv).unwrap();

        let out = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&ds, out.path(), FileFormat::Jsonl).unwrap();
        let (back, _) = load_dataset(out.path(), FileFormat::Jsonl).unwrap();
        assert_eq!(ds.flows, back.flows);
    }

    #[test]
    fn written_csv_is_byte_deterministic() {
        let csv = format!("{HEADER}web,a,0,80,443,0,100,1,8192\ndns,b,0,53,9,0.5,60,1,0\n");
        let f = write_tmp(&csv);
        let (ds, _) = load_dataset(f.path(), FileFormat::Csv).unwrap();
        let o1 = tempfile::NamedTempFile::new().unwrap();
        let o2 = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&ds, o1.path(), FileFormat::Csv).unwrap();
        write_dataset(&ds, o2.path(), FileFormat::Csv).unwrap();
        assert_eq!(
            std::fs::read(o1.path()).unwrap(),
            std::fs::read(o2.path()).unwrap()
        );
    }

    fn toy_dataset(per_class: &[usize]) -> Dataset {
        let labels: Vec<ClassLabel> = per_class
            .iter()
            .enumerate()
            .map(|(i, _)| ClassLabel {
                id: ClassId(i),
                name: format!("c{i}"),
            })
            .collect();
        let mut flows = Vec::new();
        for (i, &n) in per_class.iter().enumerate() {
            for k in 0..n {
                let p = PacketFeatures::new(
                    1000 + k as u16,
                    443,
                    0.0,
                    100,
                    Direction::SrcToDst,
                    10,
                )
                .unwrap();
                flows.push(FlowRecord::new(vec![p], ClassId(i), Origin::Real).unwrap());
            }
        }
        Dataset::new(flows, labels)
    }

    #[test]
    fn split_85_15_on_100_flows() {
        let ds = toy_dataset(&[100]);
        let (train, test) = split(&ds, 0.85, 7).unwrap();
        assert_eq!(train.flows.len(), 85);
        assert_eq!(test.flows.len(), 15);
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let ds = toy_dataset(&[40, 9, 13]);
        let (tr1, te1) = split(&ds, 0.85, 3).unwrap();
        let (tr2, te2) = split(&ds, 0.85, 3).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);

        let mut all: Vec<&FlowRecord> = tr1.flows.iter().chain(te1.flows.iter()).collect();
        assert_eq!(all.len(), ds.flows.len());
        // Every original flow appears exactly once across the two sides.
        for f in &ds.flows {
            let pos = all.iter().position(|g| *g == f).expect("flow lost in split");
            all.remove(pos);
        }
        assert!(all.is_empty());
    }

    #[test]
    fn split_rejects_single_flow_classes() {
        let ds = toy_dataset(&[10, 1]);
        assert!(matches!(
            split(&ds, 0.85, 0),
            Err(IngestError::ClassTooSmall(name)) if name == "c1"
        ));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = toy_dataset(&[4, 4]);
        assert!(matches!(split(&ds, 0.0, 0), Err(IngestError::InvalidFraction(_))));
        assert!(matches!(split(&ds, 1.0, 0), Err(IngestError::InvalidFraction(_))));
    }

    #[test]
    fn stats_fractions_sum_to_one() {
        let ds = toy_dataset(&[30, 60, 10]);
        let stats = class_stats(&ds).unwrap();
        assert!((stats.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(stats.counts, vec![30, 60, 10]);
    }

    #[test]
    fn paper_scale_fractions() {
        // 341846 / 904490 and 1425 / 904490 as checked against the class table.
        assert!((341846.0f64 / 904490.0 - 0.3779).abs() < 1e-4);
        assert!((1425.0f64 / 904490.0 - 0.001576).abs() < 1e-6);
    }

    #[test]
    fn single_class_fraction_is_one() {
        let ds = toy_dataset(&[5]);
        let stats = class_stats(&ds).unwrap();
        assert_eq!(stats.fractions, vec![1.0]);
    }
}
