//! Dataset ingestion, synthetic generation and checkpoint files.
//!
//! Binary formats (all little-endian):
//!
//! * `TSF1` segment features — magic `"TSF1"`, `u32` version = 1, `u32` video
//!   count, `u32` d_in; then per video: `u32` id length, UTF-8 id, `u32`
//!   class id, `u32` N, and `N * d_in` IEEE-754 `f64` values row-major.
//! * `TSV1` semantic vectors — magic `"TSV1"`, `u32` version = 1, `u32`
//!   count, `u32` d_sem; then per class: `u32` class id and `d_sem` `f64`s.
//! * `TCK1` checkpoints — magic `"TCK1"`, `u32` version = 1, `u32` tensor
//!   count; then per tensor: `u32` name length, UTF-8 name, `u32` rows,
//!   `u32` cols, and `rows * cols` `f64`s. The names and shapes are the
//!   checkpoint's manifest.

use crate::error::{Result, TarnError};
use crate::matrix::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const TSF_MAGIC: &[u8; 4] = b"TSF1";
const TSV_MAGIC: &[u8; 4] = b"TSV1";
const TCK_MAGIC: &[u8; 4] = b"TCK1";
const FORMAT_VERSION: u32 = 1;

/// One video: per-segment feature rows plus its label.
#[derive(Debug, Clone)]
pub struct SegmentFeatures {
    pub video_id: String,
    pub class_id: u32,
    /// `N x d_in`, one row per fixed-length segment.
    pub features: Matrix,
}

/// One class-level semantic vector.
#[derive(Debug, Clone)]
pub struct SemanticVector {
    pub class_id: u32,
    pub vec: Matrix,
}

/// Videos grouped by class, with optional class-level semantic vectors.
#[derive(Debug, Clone)]
pub struct Dataset {
    d_in: usize,
    videos: Vec<SegmentFeatures>,
    by_class: BTreeMap<u32, Vec<usize>>,
    semantics: BTreeMap<u32, Matrix>,
    d_sem: Option<usize>,
}

impl Dataset {
    pub fn new(videos: Vec<SegmentFeatures>) -> Result<Self> {
        if videos.is_empty() {
            return Err(TarnError::Data("dataset has no videos".into()));
        }
        let d_in = videos[0].features.cols();
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, v) in videos.iter().enumerate() {
            if v.features.cols() != d_in {
                return Err(TarnError::Data(format!(
                    "video {} has feature width {}, dataset uses {}",
                    v.video_id,
                    v.features.cols(),
                    d_in
                )));
            }
            if !v.features.is_finite() {
                return Err(TarnError::Data(format!(
                    "video {} contains non-finite features",
                    v.video_id
                )));
            }
            by_class.entry(v.class_id).or_default().push(i);
        }
        Ok(Dataset {
            d_in,
            videos,
            by_class,
            semantics: BTreeMap::new(),
            d_sem: None,
        })
    }

    pub fn with_semantics(mut self, sems: Vec<SemanticVector>) -> Result<Self> {
        if sems.is_empty() {
            return Err(TarnError::Data("semantic vector list is empty".into()));
        }
        let d_sem = sems[0].vec.cols();
        for s in &sems {
            if s.vec.rows() != 1 || s.vec.cols() != d_sem {
                return Err(TarnError::Data(format!(
                    "semantic vector for class {} has shape {}x{}, expected 1x{}",
                    s.class_id,
                    s.vec.rows(),
                    s.vec.cols(),
                    d_sem
                )));
            }
            self.semantics.insert(s.class_id, s.vec.clone());
        }
        self.d_sem = Some(d_sem);
        Ok(self)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_sem(&self) -> Option<usize> {
        self.d_sem
    }

    pub fn n_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn video(&self, idx: usize) -> &SegmentFeatures {
        &self.videos[idx]
    }

    pub fn videos(&self) -> &[SegmentFeatures] {
        &self.videos
    }

    /// Class ids in ascending order.
    pub fn class_ids(&self) -> Vec<u32> {
        self.by_class.keys().copied().collect()
    }

    pub fn n_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn examples_of(&self, class_id: u32) -> &[usize] {
        self.by_class
            .get(&class_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn semantic(&self, class_id: u32) -> Option<&Matrix> {
        self.semantics.get(&class_id)
    }

    pub fn semantic_vectors(&self) -> Vec<SemanticVector> {
        self.semantics
            .iter()
            .map(|(&class_id, vec)| SemanticVector {
                class_id,
                vec: vec.clone(),
            })
            .collect()
    }
}

// ---- binary reading helpers ------------------------------------------------

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(TarnError::Load {
                offset: self.offset,
                reason: "truncated file".into(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn read_string(&mut self, len: usize) -> Result<String> {
        let start = self.offset;
        let mut b = vec![0u8; len];
        self.read_exact(&mut b)?;
        String::from_utf8(b).map_err(|_| TarnError::Load {
            offset: start,
            reason: "invalid UTF-8 in id".into(),
        })
    }

    /// Reads `n` doubles, rejecting non-finite values with their byte offset.
    fn read_finite_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let pos = self.offset;
            let v = self.read_f64()?;
            if !v.is_finite() {
                return Err(TarnError::Load {
                    offset: pos,
                    reason: format!("non-finite value {v}"),
                });
            }
            out.push(v);
        }
        Ok(out)
    }
}

fn check_magic<R: Read>(r: &mut CountingReader<R>, expected: &[u8; 4]) -> Result<()> {
    let start = r.offset;
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != expected {
        return Err(TarnError::Load {
            offset: start,
            reason: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            ),
        });
    }
    let vstart = r.offset;
    let version = r.read_u32()?;
    if version != FORMAT_VERSION {
        return Err(TarnError::Load {
            offset: vstart,
            reason: format!("unsupported version {version}"),
        });
    }
    Ok(())
}

// ---- TSF segment features ----------------------------------------------------

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(TSF_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.videos.len() as u32).to_le_bytes())?;
    w.write_all(&(dataset.d_in as u32).to_le_bytes())?;
    for v in &dataset.videos {
        w.write_all(&(v.video_id.len() as u32).to_le_bytes())?;
        w.write_all(v.video_id.as_bytes())?;
        w.write_all(&v.class_id.to_le_bytes())?;
        w.write_all(&(v.features.rows() as u32).to_le_bytes())?;
        for x in v.features.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a `TSF1` file; feature values round-trip bit-exactly.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = CountingReader::new(BufReader::new(std::fs::File::open(path)?));
    check_magic(&mut r, TSF_MAGIC)?;
    let count = r.read_u32()? as usize;
    let d_in_pos = r.offset;
    let d_in = r.read_u32()? as usize;
    if d_in == 0 {
        return Err(TarnError::Load {
            offset: d_in_pos,
            reason: "d_in must be >= 1".into(),
        });
    }
    let mut videos = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.read_u32()? as usize;
        let video_id = r.read_string(id_len)?;
        let class_id = r.read_u32()?;
        let n_pos = r.offset;
        let n = r.read_u32()? as usize;
        if n == 0 {
            return Err(TarnError::Load {
                offset: n_pos,
                reason: format!("video {video_id} has zero segments"),
            });
        }
        let data = r.read_finite_f64s(n * d_in)?;
        videos.push(SegmentFeatures {
            video_id,
            class_id,
            features: Matrix::from_vec(n, d_in, data),
        });
    }
    Dataset::new(videos)
}

/// Exact byte size of the `TSF1` encoding of a dataset.
pub fn tsf_file_size(dataset: &Dataset) -> u64 {
    let mut size = 4 + 4 + 4 + 4u64;
    for v in dataset.videos() {
        size += 4 + v.video_id.len() as u64 + 4 + 4 + 8 * v.features.len() as u64;
    }
    size
}

// ---- TSV semantic vectors -----------------------------------------------------

pub fn save_semantics(path: impl AsRef<Path>, sems: &[SemanticVector]) -> Result<()> {
    if sems.is_empty() {
        return Err(TarnError::Data("no semantic vectors to save".into()));
    }
    let d_sem = sems[0].vec.cols();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(TSV_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(sems.len() as u32).to_le_bytes())?;
    w.write_all(&(d_sem as u32).to_le_bytes())?;
    for s in sems {
        w.write_all(&s.class_id.to_le_bytes())?;
        for x in s.vec.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_semantics(path: impl AsRef<Path>) -> Result<Vec<SemanticVector>> {
    let mut r = CountingReader::new(BufReader::new(std::fs::File::open(path)?));
    check_magic(&mut r, TSV_MAGIC)?;
    let count = r.read_u32()? as usize;
    let pos = r.offset;
    let d_sem = r.read_u32()? as usize;
    if d_sem == 0 {
        return Err(TarnError::Load {
            offset: pos,
            reason: "d_sem must be >= 1".into(),
        });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = r.read_u32()?;
        let data = r.read_finite_f64s(d_sem)?;
        out.push(SemanticVector {
            class_id,
            vec: Matrix::from_vec(1, d_sem, data),
        });
    }
    Ok(out)
}

// ---- checkpoints ----------------------------------------------------------------

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    names: &[String],
    mats: &[Matrix],
) -> Result<()> {
    assert_eq!(names.len(), mats.len());
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(TCK_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(names.len() as u32).to_le_bytes())?;
    for (name, m) in names.iter().zip(mats) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for x in m.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Matrix)>> {
    let mut r = CountingReader::new(BufReader::new(std::fs::File::open(path)?));
    check_magic(&mut r, TCK_MAGIC)?;
    let count = r.read_u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u32()? as usize;
        let name = r.read_string(name_len)?;
        let pos = r.offset;
        let rows = r.read_u32()? as usize;
        let cols = r.read_u32()? as usize;
        if rows == 0 || cols == 0 {
            return Err(TarnError::Load {
                offset: pos,
                reason: format!("tensor {name} has a zero dimension"),
            });
        }
        let data = r.read_finite_f64s(rows * cols)?;
        out.push((name, Matrix::from_vec(rows, cols, data)));
    }
    Ok(out)
}

// ---- synthetic generation -----------------------------------------------------

/// Temporal structure of the synthetic classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalPattern {
    /// Every segment of a class is one cluster plus noise.
    StaticCluster,
    /// Each class is a fixed order of shared clusters (a motif of length
    /// `N_min`); examples traverse the motif at varying speed when the
    /// segment-count range allows longer videos. Classes share segment
    /// content and differ only in temporal order.
    OrderedMotif,
}

/// Specification of a synthetic dataset; generation is a pure function of
/// this value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub examples_per_class: usize,
    pub d_in: usize,
    /// Inclusive `[min, max]` segment counts per video.
    pub segment_count_range: [usize; 2],
    pub cluster_separation: f64,
    pub temporal_pattern: TemporalPattern,
    pub noise_std: f64,
    pub seed: u64,
    /// Probability that a segment's cluster is replaced by a random one
    /// (occlusion-style temporal glitches; ordered-motif only).
    #[serde(default)]
    pub glitch_rate: f64,
    /// When set, also emit one semantic vector per class: the class's mean
    /// segment under a fixed random projection to this width, plus noise.
    #[serde(default)]
    pub semantic_dim: Option<usize>,
    #[serde(default)]
    pub semantic_noise_std: f64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let [n_min, n_max] = self.segment_count_range;
        if self.n_classes < 1 || self.examples_per_class < 1 || self.d_in < 1 {
            return Err(TarnError::Config(
                "synthetic spec needs n_classes, examples_per_class, d_in >= 1".into(),
            ));
        }
        if n_min < 1 || n_min > n_max {
            return Err(TarnError::Config(format!(
                "segment_count_range [{n_min}, {n_max}] is not a valid range"
            )));
        }
        if !(self.cluster_separation > 0.0) {
            return Err(TarnError::Config("cluster_separation must be > 0".into()));
        }
        if self.noise_std < 0.0 || self.semantic_noise_std < 0.0 {
            return Err(TarnError::Config("noise_std must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.glitch_rate) {
            return Err(TarnError::Config("glitch_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Distinct hypercube corners with half-width `sep / 2` per coordinate, so
/// any two differ by at least `sep` in Euclidean distance.
fn sample_corners(
    count: usize,
    d: usize,
    sep: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let capacity_ok = d >= 64 || count as u128 <= (1u128 << d);
    if !capacity_ok {
        return Err(TarnError::Config(format!(
            "cannot place {count} clusters at separation {sep} in {d} dimensions \
             (only {} sign patterns exist)",
            1u128 << d
        )));
    }
    let half = sep / 2.0;
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut corners = Vec::with_capacity(count);
    while corners.len() < count {
        let signs: Vec<bool> = (0..d).map(|_| rng.random::<bool>()).collect();
        if seen.insert(signs.clone()) {
            corners.push(
                signs
                    .iter()
                    .map(|&s| if s { half } else { -half })
                    .collect(),
            );
        }
    }
    Ok(corners)
}

/// Composition of `n` into `parts` positive integers. Every phase gets one
/// segment; the surplus lands on later phases with probability growing
/// quadratically in phase position, the way actions linger around their
/// final state. The tail-heavy law is part of what makes the motif family
/// hard for single-vector sequence summaries: early order information has
/// to survive a long, class-independent tail.
fn random_composition(n: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(n >= parts && parts >= 1);
    let mut out = vec![1usize; parts];
    let weights: Vec<f64> = (0..parts).map(|i| ((i + 1) * (i + 1)) as f64).collect();
    let total: f64 = weights.iter().sum();
    for _ in 0..n - parts {
        let mut u = rng.random_range(0.0..total);
        let mut chosen = parts - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                chosen = i;
                break;
            }
            u -= w;
        }
        out[chosen] += 1;
    }
    out
}

fn factorial_at_least(n: usize, bound: usize) -> bool {
    let mut acc: u128 = 1;
    for i in 2..=n as u128 {
        acc = acc.saturating_mul(i);
        if acc >= bound as u128 {
            return true;
        }
    }
    acc >= bound as u128
}

/// Generates a dataset with planted class structure. Identical specs produce
/// bit-identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| TarnError::Config(e.to_string()))?;
    let draw_noise = |rng: &mut ChaCha8Rng, std: f64| -> f64 {
        if std == 0.0 {
            0.0
        } else {
            noise.sample(rng)
        }
    };
    let [n_min, n_max] = spec.segment_count_range;

    // class_means[c] is the centroid of class c's mean segment, used for
    // semantic vectors.
    let mut videos = Vec::with_capacity(spec.n_classes * spec.examples_per_class);
    let mut class_means: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes);

    match spec.temporal_pattern {
        TemporalPattern::StaticCluster => {
            let centroids = sample_corners(
                spec.n_classes,
                spec.d_in,
                spec.cluster_separation,
                &mut rng,
            )?;
            for (c, centroid) in centroids.iter().enumerate() {
                class_means.push(centroid.clone());
                for e in 0..spec.examples_per_class {
                    let n = rng.random_range(n_min..=n_max);
                    let mut data = Vec::with_capacity(n * spec.d_in);
                    for _ in 0..n {
                        for &mu in centroid {
                            data.push(mu + draw_noise(&mut rng, spec.noise_std));
                        }
                    }
                    videos.push(SegmentFeatures {
                        video_id: format!("c{c}_e{e}"),
                        class_id: c as u32,
                        features: Matrix::from_vec(n, spec.d_in, data),
                    });
                }
            }
        }
        TemporalPattern::OrderedMotif => {
            let motif_len = n_min;
            if motif_len < 2 {
                return Err(TarnError::Config(
                    "ordered-motif needs at least 2 segments per video".into(),
                ));
            }
            let alphabet =
                sample_corners(motif_len, spec.d_in, spec.cluster_separation, &mut rng)?;
            // Distinct permutations of the same cluster multiset. From
            // length 4 up, every class starts and ends with the same anchor
            // clusters, so no class is identifiable from its first or last
            // segments alone; the discriminative order is internal.
            let anchored = motif_len >= 4;
            let free_len = if anchored { motif_len - 2 } else { motif_len };
            if !factorial_at_least(free_len, spec.n_classes) {
                return Err(TarnError::Config(format!(
                    "cannot make {} order-distinct classes from motifs of length {motif_len}",
                    spec.n_classes
                )));
            }
            let mut motifs: Vec<Vec<usize>> = Vec::with_capacity(spec.n_classes);
            let mut seen: HashSet<Vec<usize>> = HashSet::new();
            while motifs.len() < spec.n_classes {
                let motif = if anchored {
                    let mut middle: Vec<usize> = (1..motif_len - 1).collect();
                    middle.shuffle(&mut rng);
                    let mut m = Vec::with_capacity(motif_len);
                    m.push(0);
                    m.extend(middle);
                    m.push(motif_len - 1);
                    m
                } else {
                    let mut order: Vec<usize> = (0..motif_len).collect();
                    order.shuffle(&mut rng);
                    order
                };
                if seen.insert(motif.clone()) {
                    motifs.push(motif);
                }
            }
            for (c, motif) in motifs.iter().enumerate() {
                let mut mean = vec![0.0; spec.d_in];
                for &slot in motif {
                    for (m, &v) in mean.iter_mut().zip(&alphabet[slot]) {
                        *m += v / motif_len as f64;
                    }
                }
                class_means.push(mean);
                for e in 0..spec.examples_per_class {
                    // order-preserving random time warp: each motif phase
                    // lasts >= 1 segment, so position alone never
                    // identifies the phase; a glitched segment reads a
                    // random cluster instead of its phase's
                    let n = rng.random_range(n_min..=n_max);
                    let durations = random_composition(n, motif_len, &mut rng);
                    let mut data = Vec::with_capacity(n * spec.d_in);
                    for (slot_pos, &slot) in motif.iter().enumerate() {
                        for _ in 0..durations[slot_pos] {
                            let read = if spec.glitch_rate > 0.0
                                && rng.random_range(0.0..1.0) < spec.glitch_rate
                            {
                                rng.random_range(0..motif_len)
                            } else {
                                slot
                            };
                            for &mu in &alphabet[read] {
                                data.push(mu + draw_noise(&mut rng, spec.noise_std));
                            }
                        }
                    }
                    videos.push(SegmentFeatures {
                        video_id: format!("c{c}_e{e}"),
                        class_id: c as u32,
                        features: Matrix::from_vec(n, spec.d_in, data),
                    });
                }
            }
        }
    }

    let dataset = Dataset::new(videos)?;
    if let Some(d_sem) = spec.semantic_dim {
        if d_sem < 1 {
            return Err(TarnError::Config("semantic_dim must be >= 1".into()));
        }
        // fixed random projection shared by all classes
        let proj_gain = 1.0 / (spec.d_in as f64).sqrt();
        let proj: Vec<f64> = (0..spec.d_in * d_sem)
            .map(|_| rng.random_range(-1.0..1.0) * proj_gain)
            .collect();
        let mut sems = Vec::with_capacity(spec.n_classes);
        for (c, mean) in class_means.iter().enumerate() {
            let mut vec = Vec::with_capacity(d_sem);
            for j in 0..d_sem {
                let mut s = 0.0;
                for (i, &mu) in mean.iter().enumerate() {
                    s += mu * proj[i * d_sem + j];
                }
                vec.push(s + draw_noise(&mut rng, spec.semantic_noise_std));
            }
            sems.push(SemanticVector {
                class_id: c as u32,
                vec: Matrix::from_vec(1, d_sem, vec),
            });
        }
        return dataset.with_semantics(sems);
    }
    Ok(dataset)
}

// ---- class splits ---------------------------------------------------------------

/// Seeded partition of the dataset's classes into (seen, unseen); both sides
/// are returned sorted.
pub fn split_classes(
    dataset: &Dataset,
    seen_fraction: f64,
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let classes = dataset.class_ids();
    let n = classes.len();
    if n < 2 {
        return Err(TarnError::Data(
            "split_classes needs at least 2 classes".into(),
        ));
    }
    if !(seen_fraction > 0.0 && seen_fraction < 1.0) {
        return Err(TarnError::Config(format!(
            "seen_fraction {seen_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n_seen = ((seen_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut shuffled = classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut seen: Vec<u32> = shuffled[..n_seen].to_vec();
    let mut unseen: Vec<u32> = shuffled[n_seen..].to_vec();
    seen.sort_unstable();
    unseen.sort_unstable();
    Ok((seen, unseen))
}
