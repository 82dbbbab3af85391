//! Minority-class augmentation: per-class LSTM generators for the sequential
//! tracks (directions, binned window sizes) combined with per-feature KDE
//! samplers for the numerical features, plus a random-oversampling baseline.
//!
//! Generators are trained on the training split only. Each target class gets
//! its own derived seed, so classes can be processed in any order without
//! changing any class's output.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::flow::{ClassId, Direction, FlowRecord, Origin, PacketFeatures};
use crate::ingest::Dataset;
use crate::kde::{KdeError, KdeModel};
use crate::seeds;
use crate::seqgen::{
    build_training_corpus, train_seqgen, SeqFeatureKind, SeqGenConfig, SeqGenError, SeqGenModel,
    SeqToken, SeqVocab,
};

use ntc_nn::{Archive, ArchiveError};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("class id {0} is not in the dataset")]
    ClassNotFound(usize),
    #[error("target count {target} is below the current count {current} for class {class}")]
    TargetBelowCurrent {
        class: String,
        current: usize,
        target: usize,
    },
    #[error("generator error: {0}")]
    SeqGen(#[from] SeqGenError),
    #[error("density estimation error: {0}")]
    Kde(#[from] KdeError),
    #[error("archive error: {0}")]
    Archive(#[from] ArchiveError),
    #[error("corrupt plan: {0}")]
    BadPlan(String),
}

/// How many flows a class should have after augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetCount {
    Absolute(usize),
    /// Raise to the median class count of the dataset.
    ToMedian,
    /// Raise to this fraction of the largest class.
    MajorityFraction(f64),
}

/// Which classes to augment and how far.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPlan {
    pub targets: Vec<(ClassId, TargetCount)>,
    pub seed: u64,
}

impl AugmentationPlan {
    /// Resolves a target to an absolute count for the given dataset.
    fn resolve(&self, target: TargetCount, counts: &[usize]) -> usize {
        match target {
            TargetCount::Absolute(n) => n,
            TargetCount::ToMedian => median(counts),
            TargetCount::MajorityFraction(f) => {
                let max = counts.iter().copied().max().unwrap_or(0);
                (f * max as f64).round() as usize
            }
        }
    }

    /// Parses the TOML plan format:
    ///
    /// ```toml
    /// seed = 7
    /// [[target]]
    /// class = "voice"
    /// count = "median"        # or an integer, or "majority:0.5"
    /// ```
    pub fn from_toml_str(text: &str, dataset: &Dataset) -> Result<Self, AugmentError> {
        #[derive(serde::Deserialize)]
        struct RawPlan {
            seed: u64,
            #[serde(rename = "target")]
            targets: Vec<RawTarget>,
        }
        #[derive(serde::Deserialize)]
        struct RawTarget {
            class: String,
            count: toml::Value,
        }
        let raw: RawPlan =
            toml::from_str(text).map_err(|e| AugmentError::BadPlan(e.to_string()))?;
        let mut targets = Vec::new();
        for t in raw.targets {
            let id = dataset
                .labels
                .iter()
                .find(|l| l.name == t.class)
                .map(|l| l.id)
                .ok_or_else(|| AugmentError::BadPlan(format!("unknown class `{}`", t.class)))?;
            let count = match &t.count {
                toml::Value::Integer(n) if *n > 0 => TargetCount::Absolute(*n as usize),
                toml::Value::String(s) if s == "median" => TargetCount::ToMedian,
                toml::Value::String(s) if s.starts_with("majority:") => {
                    let f: f64 = s["majority:".len()..]
                        .parse()
                        .map_err(|_| AugmentError::BadPlan(format!("bad count `{s}`")))?;
                    TargetCount::MajorityFraction(f)
                }
                other => return Err(AugmentError::BadPlan(format!("bad count `{other}`"))),
            };
            targets.push((id, count));
        }
        Ok(AugmentationPlan {
            targets,
            seed: raw.seed,
        })
    }
}

fn median(counts: &[usize]) -> usize {
    let mut sorted: Vec<usize> = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n == 0 {
        0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

/// Numeric feature sampler: a fitted KDE, or the constant itself when the
/// class is degenerate in that feature.
#[derive(Debug, Clone, PartialEq)]
pub enum NumericSampler {
    Kde(KdeModel),
    Constant(f64),
}

impl NumericSampler {
    /// Fits on raw values; degenerate inputs collapse to the constant.
    fn fit(values: &[f64]) -> Result<Self, KdeError> {
        debug_assert!(!values.is_empty());
        let first = values[0];
        if values.iter().all(|&v| v == first) {
            return Ok(NumericSampler::Constant(first));
        }
        Ok(NumericSampler::Kde(KdeModel::fit(values.to_vec(), None)?))
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            NumericSampler::Constant(v) => *v,
            NumericSampler::Kde(m) => m.sample_with(1, rng)[0],
        }
    }
}

/// Everything needed to generate flows for one class.
#[derive(Debug, Clone)]
pub struct ClassGenerators {
    pub class: ClassId,
    pub direction: SeqGenModel,
    pub window: SeqGenModel,
    /// Values behind the window vocabulary's OTHER token.
    window_other: NumericSampler,
    src_port: NumericSampler,
    dst_port: NumericSampler,
    /// Fit on log1p of non-first-packet inter-arrival times.
    iat_log: NumericSampler,
    payload: NumericSampler,
}

/// Per-class generator training settings.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub seqgen: SeqGenConfig,
    /// Window vocabulary size before OTHER/End.
    pub window_top_k: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seqgen: SeqGenConfig::default(),
            window_top_k: 64,
        }
    }
}

/// Trains all generators for one class on `train` (callers must pass the
/// training split only).
pub fn train_generators(
    train: &Dataset,
    class: ClassId,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<ClassGenerators, AugmentError> {
    if class.0 >= train.class_count() {
        return Err(AugmentError::ClassNotFound(class.0));
    }
    let flows: Vec<&FlowRecord> = train.flows_of_class(class).collect();
    if flows.is_empty() {
        return Err(SeqGenError::EmptyClass(train.label_name(class).to_string()).into());
    }

    let dir_vocab = SeqVocab::directions();
    let dir_corpus = build_training_corpus(train, class, SeqFeatureKind::Direction, &dir_vocab)?;
    let win_vocab = SeqVocab::windows_from_flows(flows.iter().copied(), cfg.window_top_k);
    let win_corpus = build_training_corpus(train, class, SeqFeatureKind::WindowSize, &win_vocab)?;

    let mut sg = cfg.seqgen.clone();
    sg.seed = seeds::derive_tagged(seed, "gen-direction", class.0 as u64);
    let (direction, _) = train_seqgen(class, SeqFeatureKind::Direction, &dir_vocab, &dir_corpus, &sg)?;
    sg.seed = seeds::derive_tagged(seed, "gen-window", class.0 as u64);
    let (window, _) = train_seqgen(class, SeqFeatureKind::WindowSize, &win_vocab, &win_corpus, &sg)?;

    // Ports are flow-level values: the first packet is always forward, so its
    // src is the initiator port and its dst the responder port.
    let src_ports: Vec<f64> = flows
        .iter()
        .map(|f| f64::from(f.packets()[0].src_port))
        .collect();
    let dst_ports: Vec<f64> = flows
        .iter()
        .map(|f| f64::from(f.packets()[0].dst_port))
        .collect();

    // First-packet inter-arrival is 0 by definition, not a measurement, so
    // the estimator sees only later packets; log1p tames the heavy tail.
    let mut iat_log: Vec<f64> = flows
        .iter()
        .flat_map(|f| f.packets().iter().skip(1))
        .map(|p| p.inter_arrival_time.ln_1p())
        .collect();
    if iat_log.is_empty() {
        // All flows are single-packet; generated ones will be too, but keep a
        // well-formed sampler.
        iat_log.push(0.0);
    }
    let payload: Vec<f64> = flows
        .iter()
        .flat_map(|f| f.packets())
        .map(|p| f64::from(p.payload_length))
        .collect();

    // Window values outside the vocabulary's top-K back the OTHER token; if
    // none exist, fall back to the pooled values.
    let all_windows: Vec<f64> = flows
        .iter()
        .flat_map(|f| f.packets())
        .map(|p| f64::from(p.tcp_window_size))
        .collect();
    let other_windows: Vec<f64> = flows
        .iter()
        .flat_map(|f| f.packets())
        .filter(|p| win_vocab.window_token(p.tcp_window_size) == SeqToken::Other)
        .map(|p| f64::from(p.tcp_window_size))
        .collect();
    let window_other = if other_windows.is_empty() {
        NumericSampler::fit(&all_windows)?
    } else {
        NumericSampler::fit(&other_windows)?
    };

    Ok(ClassGenerators {
        class,
        direction,
        window,
        window_other,
        src_port: NumericSampler::fit(&src_ports)?,
        dst_port: NumericSampler::fit(&dst_ports)?,
        iat_log: NumericSampler::fit(&iat_log)?,
        payload: NumericSampler::fit(&payload)?,
    })
}

fn draw_port<R: Rng>(sampler: &NumericSampler, rng: &mut R) -> u16 {
    let v = sampler.draw(rng);
    v.round().clamp(0.0, 65535.0) as u16
}

fn draw_u32<R: Rng>(sampler: &NumericSampler, rng: &mut R) -> u32 {
    let v = sampler.draw(rng);
    v.round().clamp(0.0, u32::MAX as f64) as u32
}

/// Generates `count` flows for the generators' class. The direction track
/// sets the flow length; the window track is re-sampled up to 3 times to hit
/// that length, then truncated or extended with its last token.
pub fn augment_class(
    generators: &ClassGenerators,
    count: usize,
    seed: u64,
) -> Result<Vec<FlowRecord>, AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_tagged(
        seed,
        "augment-class",
        generators.class.0 as u64,
    ));
    let mut flows = Vec::with_capacity(count);
    for _ in 0..count {
        let dirs = generators.direction.sample_with(&mut rng);
        let len = dirs.len();

        let mut windows = generators.window.sample_with(&mut rng);
        for _ in 0..2 {
            if windows.len() == len {
                break;
            }
            windows = generators.window.sample_with(&mut rng);
        }
        if windows.len() > len {
            windows.truncate(len);
        }
        while windows.len() < len {
            let last = *windows.last().expect("tracks are never empty");
            windows.push(last);
        }

        // Ports are drawn once per flow and oriented per packet: a reverse
        // packet carries the responder port as its source.
        let initiator = draw_port(&generators.src_port, &mut rng);
        let responder = draw_port(&generators.dst_port, &mut rng);

        let mut packets = Vec::with_capacity(len);
        for (i, dir_token) in dirs.iter().enumerate() {
            let dir = match dir_token {
                SeqToken::Value(1) => Direction::SrcToDst,
                SeqToken::Value(0) => Direction::DstToSrc,
                other => unreachable!("direction vocabulary yields bits, got {other:?}"),
            };
            let window = match windows[i] {
                SeqToken::Value(v) => v,
                SeqToken::Other => draw_u32(&generators.window_other, &mut rng),
                SeqToken::End => unreachable!("end tokens never appear in samples"),
            };
            let iat = if i == 0 {
                0.0
            } else {
                generators.iat_log.draw(&mut rng).exp_m1().max(0.0)
            };
            let payload = draw_u32(&generators.payload, &mut rng);
            let (src, dst) = match dir {
                Direction::SrcToDst => (initiator, responder),
                Direction::DstToSrc => (responder, initiator),
            };
            packets.push(
                PacketFeatures::new(src, dst, iat, payload, dir, window)
                    .expect("generated packet satisfies invariants"),
            );
        }
        flows.push(
            FlowRecord::new(packets, generators.class, Origin::Generated)
                .expect("generated flow satisfies invariants"),
        );
    }
    Ok(flows)
}

/// The result of running an augmentation plan.
pub struct AugmentOutcome {
    pub dataset: Dataset,
    pub generators: BTreeMap<ClassId, ClassGenerators>,
    pub added_per_class: BTreeMap<ClassId, usize>,
}

/// Trains generators for each target class on `train` and unions the
/// generated flows with the originals. Original flows are never modified.
pub fn run_plan(
    train: &Dataset,
    plan: &AugmentationPlan,
    cfg: &GeneratorConfig,
) -> Result<AugmentOutcome, AugmentError> {
    let counts = train.counts_per_class();
    let mut generators = BTreeMap::new();
    let mut added_per_class = BTreeMap::new();
    let mut dataset = train.clone();

    for &(class, target) in &plan.targets {
        if class.0 >= train.class_count() {
            return Err(AugmentError::ClassNotFound(class.0));
        }
        let current = counts[class.0];
        let target_count = plan.resolve(target, &counts);
        if target_count < current {
            return Err(AugmentError::TargetBelowCurrent {
                class: train.label_name(class).to_string(),
                current,
                target: target_count,
            });
        }
        let need = target_count - current;
        let gens = train_generators(train, class, cfg, plan.seed)?;
        if need > 0 {
            let generated = augment_class(&gens, need, plan.seed)?;
            dataset.flows.extend(generated);
        }
        added_per_class.insert(class, need);
        generators.insert(class, gens);
    }
    Ok(AugmentOutcome {
        dataset,
        generators,
        added_per_class,
    })
}

/// Random oversampling baseline: duplicates existing minority flows
/// uniformly with replacement up to the target counts.
pub fn oversample(
    train: &Dataset,
    plan: &AugmentationPlan,
) -> Result<Dataset, AugmentError> {
    let counts = train.counts_per_class();
    let mut dataset = train.clone();
    for &(class, target) in &plan.targets {
        if class.0 >= train.class_count() {
            return Err(AugmentError::ClassNotFound(class.0));
        }
        let current = counts[class.0];
        let target_count = plan.resolve(target, &counts);
        if target_count < current {
            return Err(AugmentError::TargetBelowCurrent {
                class: train.label_name(class).to_string(),
                current,
                target: target_count,
            });
        }
        let pool: Vec<FlowRecord> = train.flows_of_class(class).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_tagged(
            plan.seed,
            "oversample",
            class.0 as u64,
        ));
        for _ in 0..(target_count - current) {
            let mut copy = pool[rng.gen_range(0..pool.len())].clone();
            copy.origin = Origin::Oversampled;
            dataset.flows.push(copy);
        }
    }
    Ok(dataset)
}

/// Writes every class's generators into one archive.
pub fn write_generators_archive(
    generators: &BTreeMap<ClassId, ClassGenerators>,
    archive: &mut Archive,
) {
    for (class, g) in generators {
        let p = format!("gen.class{}", class.0);
        g.direction.write_archive(archive, &format!("{p}.direction"));
        g.window.write_archive(archive, &format!("{p}.window"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::ClassLabel;

    fn packet(src: u16, dst: u16, dir: Direction, iat: f64, payload: u32, win: u32) -> PacketFeatures {
        PacketFeatures::new(src, dst, iat, payload, dir, win).unwrap()
    }

    /// Two classes; class 1 is a small alternating-direction class.
    fn toy_dataset() -> Dataset {
        let labels = vec![
            ClassLabel {
                id: ClassId(0),
                name: "big".into(),
            },
            ClassLabel {
                id: ClassId(1),
                name: "small".into(),
            },
        ];
        let mut flows = Vec::new();
        for i in 0..30 {
            let p0 = packet(20000 + i, 80, Direction::SrcToDst, 0.0, 500, 1000);
            let p1 = packet(80, 20000 + i, Direction::DstToSrc, 0.01, 1400, 1000);
            flows.push(FlowRecord::new(vec![p0, p1], ClassId(0), Origin::Real).unwrap());
        }
        for i in 0..10 {
            let p0 = packet(30000 + i, 5000, Direction::SrcToDst, 0.0, 100, 2000);
            let p1 = packet(5000, 30000 + i, Direction::DstToSrc, 0.02, 120, 2048);
            let p2 = packet(30000 + i, 5000, Direction::SrcToDst, 0.03, 140, 2000);
            flows.push(FlowRecord::new(vec![p0, p1, p2], ClassId(1), Origin::Real).unwrap());
        }
        Dataset::new(flows, labels)
    }

    fn quick_cfg() -> GeneratorConfig {
        GeneratorConfig {
            seqgen: SeqGenConfig {
                hidden: 8,
                epochs: 10,
                lr: 0.02,
                batch_size: 8,
                seed: 0,
            },
            window_top_k: 8,
        }
    }

    #[test]
    fn generated_flows_satisfy_contracts() {
        let ds = toy_dataset();
        let gens = train_generators(&ds, ClassId(1), &quick_cfg(), 11).unwrap();
        let flows = augment_class(&gens, 10, 11).unwrap();
        assert_eq!(flows.len(), 10);
        for f in &flows {
            assert_eq!(f.label, ClassId(1));
            assert_eq!(f.origin, Origin::Generated);
            assert!(f.packet_count() <= 20);
            assert_eq!(f.packets()[0].direction, Direction::SrcToDst);
            assert_eq!(f.packets()[0].inter_arrival_time, 0.0);
        }
    }

    #[test]
    fn degenerate_payload_class_reproduces_the_constant() {
        let labels = vec![
            ClassLabel {
                id: ClassId(0),
                name: "a".into(),
            },
            ClassLabel {
                id: ClassId(1),
                name: "fixed".into(),
            },
        ];
        let mut flows = Vec::new();
        for i in 0..8 {
            let p0 = packet(1000 + i, 9, Direction::SrcToDst, 0.0, 100, 50);
            let p1 = packet(9, 1000 + i, Direction::DstToSrc, 0.01 * f64::from(i + 1), 100, 50);
            flows.push(FlowRecord::new(vec![p0, p1], ClassId(1), Origin::Real).unwrap());
            flows.push(
                FlowRecord::new(
                    vec![packet(2000 + i, 7, Direction::SrcToDst, 0.0, 10 + u32::from(i), 60)],
                    ClassId(0),
                    Origin::Real,
                )
                .unwrap(),
            );
        }
        let ds = Dataset::new(flows, labels);
        let gens = train_generators(&ds, ClassId(1), &quick_cfg(), 3).unwrap();
        let generated = augment_class(&gens, 20, 3).unwrap();
        for f in &generated {
            for p in f.packets() {
                assert_eq!(p.payload_length, 100);
            }
        }
    }

    #[test]
    fn run_plan_adds_exactly_the_missing_flows() {
        let ds = toy_dataset();
        let plan = AugmentationPlan {
            targets: vec![(ClassId(1), TargetCount::Absolute(25))],
            seed: 4,
        };
        let out = run_plan(&ds, &plan, &quick_cfg()).unwrap();
        assert_eq!(out.dataset.flows.len(), 30 + 10 + 15);
        assert_eq!(out.added_per_class[&ClassId(1)], 15);
        // Originals unchanged, in order, at the front.
        assert_eq!(&out.dataset.flows[..40], &ds.flows[..]);
    }

    #[test]
    fn empty_plan_is_identity() {
        let ds = toy_dataset();
        let plan = AugmentationPlan {
            targets: vec![],
            seed: 4,
        };
        let out = run_plan(&ds, &plan, &quick_cfg()).unwrap();
        assert_eq!(out.dataset, ds);
    }

    #[test]
    fn unknown_class_is_rejected() {
        let ds = toy_dataset();
        let plan = AugmentationPlan {
            targets: vec![(ClassId(9), TargetCount::Absolute(5))],
            seed: 0,
        };
        assert!(matches!(
            run_plan(&ds, &plan, &quick_cfg()),
            Err(AugmentError::ClassNotFound(9))
        ));
        assert!(matches!(
            oversample(&ds, &plan),
            Err(AugmentError::ClassNotFound(9))
        ));
    }

    #[test]
    fn oversample_duplicates_existing_flows() {
        let labels = vec![
            ClassLabel {
                id: ClassId(0),
                name: "a".into(),
            },
            ClassLabel {
                id: ClassId(1),
                name: "b".into(),
            },
        ];
        let f0 = FlowRecord::new(
            vec![packet(1, 2, Direction::SrcToDst, 0.0, 1, 1)],
            ClassId(1),
            Origin::Real,
        )
        .unwrap();
        let f1 = FlowRecord::new(
            vec![packet(3, 4, Direction::SrcToDst, 0.0, 2, 2)],
            ClassId(1),
            Origin::Real,
        )
        .unwrap();
        let other = FlowRecord::new(
            vec![packet(5, 6, Direction::SrcToDst, 0.0, 3, 3)],
            ClassId(0),
            Origin::Real,
        )
        .unwrap();
        let ds = Dataset::new(vec![f0.clone(), f1.clone(), other], labels);
        let plan = AugmentationPlan {
            targets: vec![(ClassId(1), TargetCount::Absolute(6))],
            seed: 5,
        };
        let out = oversample(&ds, &plan).unwrap();
        let dups: Vec<&FlowRecord> = out
            .flows
            .iter()
            .filter(|f| f.origin == Origin::Oversampled)
            .collect();
        assert_eq!(dups.len(), 4);
        for d in dups {
            // Every duplicate matches one of the two originals feature-wise.
            assert!(d.packets() == f0.packets() || d.packets() == f1.packets());
        }
        // Determinism.
        assert_eq!(oversample(&ds, &plan).unwrap(), out);
    }

    #[test]
    fn median_target_resolution() {
        assert_eq!(median(&[5, 1, 9]), 5);
        assert_eq!(median(&[8, 2, 4, 6]), 5);
    }

    #[test]
    fn plan_parses_from_toml() {
        let ds = toy_dataset();
        let plan = AugmentationPlan::from_toml_str(
            "seed = 7\n[[target]]\nclass = \"small\"\ncount = \"median\"\n",
            &ds,
        )
        .unwrap();
        assert_eq!(plan.seed, 7);
        assert_eq!(plan.targets, vec![(ClassId(1), TargetCount::ToMedian)]);

        assert!(AugmentationPlan::from_toml_str(
            "seed = 1\n[[target]]\nclass = \"nope\"\ncount = 10\n",
            &ds
        )
        .is_err());
    }
}
