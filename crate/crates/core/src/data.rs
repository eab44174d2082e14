//! Synthetic multi-latent-domain data, JSON-lines dataset I/O, IDX digit
//! loading and mini-batch composition.
//!
//! The generator shares class prototype Gaussians across domains and
//! applies a per-domain transform (rotation of the first two feature
//! dimensions, scale, translation) so class semantics transfer while the
//! domains induce covariate shift.

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainTransform {
    pub rotation_deg: f64,
    #[serde(default)]
    pub translation: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub source_transforms: Vec<DomainTransform>,
    pub target_transforms: Vec<DomainTransform>,
    /// mixing proportions over source domains; must sum to 1
    pub source_mix: Vec<f64>,
    pub target_mix: Vec<f64>,
    pub noise_std: f64,
    /// class prototypes sit on a circle of this radius in the informative plane
    #[serde(default = "default_radius")]
    pub proto_radius: f64,
    /// angular spacing between consecutive class prototypes, degrees
    #[serde(default = "default_angle_step")]
    pub proto_angle_step_deg: f64,
    /// geometric radius growth per class; values > 1 spread classes
    /// radially so class identity stays orthogonal to rotation
    #[serde(default = "one")]
    pub proto_radius_growth: f64,
    /// rotation applied to the whole prototype constellation, degrees
    #[serde(default)]
    pub proto_base_angle_deg: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_target_eval: usize,
    pub seed: u64,
}

fn default_radius() -> f64 {
    3.0
}

fn default_angle_step() -> f64 {
    120.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.feature_dim < 2 {
            return Err(Error::Config("need >=1 class and feature_dim >= 2".into()));
        }
        if self.source_transforms.is_empty() || self.target_transforms.is_empty() {
            return Err(Error::Config("need at least one domain per split".into()));
        }
        for (name, mix, k) in [
            ("source_mix", &self.source_mix, self.source_transforms.len()),
            ("target_mix", &self.target_mix, self.target_transforms.len()),
        ] {
            if mix.len() != k {
                return Err(Error::Config(format!("{} length {} vs {} domains", name, mix.len(), k)));
            }
            if mix.iter().any(|&p| p < 0.0) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{} must be a distribution", name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Source,
    Target,
}

/// One dataset record, exactly the JSON-lines schema on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub split: Split,
    /// ground-truth domain; evaluation only, hidden from training
    pub domain: Option<usize>,
    /// revealed supervision for the partial-labels experiments
    pub known_domain: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn source_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == Split::Source)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == Split::Target)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map(|s| s.features.len()).unwrap_or(0)
    }

    pub fn num_classes(&self) -> usize {
        self.samples
            .iter()
            .filter_map(|s| s.label)
            .max()
            .map(|l| l + 1)
            .unwrap_or(0)
    }

    /// Reveal `frac` of the source samples' true domains as known_domain,
    /// chosen uniformly with the given seed.
    pub fn reveal_domain_labels(&mut self, frac: f64, seed: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::Config(format!("domain label fraction {}", frac)));
        }
        use rand::SeedableRng;
        let mut src = self.source_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        src.shuffle(&mut rng);
        let reveal = ((src.len() as f64) * frac).round() as usize;
        for &i in src.iter().take(reveal) {
            self.samples[i].known_domain = self.samples[i].domain;
        }
        Ok(())
    }
}

fn apply_transform(xy: [f64; 2], t: &DomainTransform, out: &mut [f64]) {
    let th = t.rotation_deg.to_radians();
    let (s, c) = th.sin_cos();
    let rx = c * xy[0] - s * xy[1];
    let ry = s * xy[0] + c * xy[1];
    out[0] = t.scale * rx;
    out[1] = t.scale * ry;
    for (j, &tv) in t.translation.iter().enumerate() {
        if j < out.len() {
            out[j] += tv;
        }
    }
}

fn sample_categorical<R: Rng>(mix: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    mix.len() - 1
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deterministic synthetic dataset: `(train, eval)` sample vectors.
/// Train holds labeled source and unlabeled target records; eval holds
/// labeled target records for scoring.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let step = spec.proto_angle_step_deg.to_radians();
    let protos: Vec<[f64; 2]> = (0..spec.num_classes)
        .map(|c| {
            let a = spec.proto_base_angle_deg.to_radians() + step * c as f64;
            let r = spec.proto_radius * spec.proto_radius_growth.powi(c as i32);
            [r * a.cos(), r * a.sin()]
        })
        .collect();
    let draw = |split: Split,
                    transforms: &[DomainTransform],
                    mix: &[f64],
                    keep_label: bool,
                    rng: &mut ChaCha8Rng|
     -> Sample {
        let d = sample_categorical(mix, rng);
        let class = rng.gen_range(0..spec.num_classes);
        let p = protos[class];
        let noisy = [
            p[0] + spec.noise_std * gaussian(rng),
            p[1] + spec.noise_std * gaussian(rng),
        ];
        let mut features = vec![0.0; spec.feature_dim];
        apply_transform(noisy, &transforms[d], &mut features);
        for v in features.iter_mut().skip(2) {
            *v += spec.noise_std * gaussian(rng);
        }
        Sample {
            features,
            label: keep_label.then_some(class),
            split,
            domain: Some(d),
            known_domain: None,
        }
    };
    let mut train = Dataset::default();
    for _ in 0..spec.n_source {
        train
            .samples
            .push(draw(Split::Source, &spec.source_transforms, &spec.source_mix, true, &mut rng));
    }
    for _ in 0..spec.n_target {
        train
            .samples
            .push(draw(Split::Target, &spec.target_transforms, &spec.target_mix, false, &mut rng));
    }
    let mut eval = Dataset::default();
    for _ in 0..spec.n_target_eval {
        eval.samples
            .push(draw(Split::Target, &spec.target_transforms, &spec.target_mix, true, &mut rng));
    }
    Ok((train, eval))
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in &dataset.samples {
        let line = serde_json::to_string(s).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {}", path.display(), ln + 1, e)))?;
        samples.push(s);
    }
    Ok(Dataset { samples })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Classic big-endian IDX image file: magic, dims, u8 pixels scaled to [0,1].
/// Returns an `[n, rows*cols]` tensor.
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let mut f = std::fs::File::open(path)?;
    let magic = f.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse(format!("bad image magic 0x{:08x}", magic)));
    }
    let n = f.read_u32::<BigEndian>()? as usize;
    let rows = f.read_u32::<BigEndian>()? as usize;
    let cols = f.read_u32::<BigEndian>()? as usize;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() != n * rows * cols {
        return Err(Error::Parse(format!(
            "truncated image payload: {} bytes for {}x{}x{}",
            payload.len(),
            n,
            rows,
            cols
        )));
    }
    let data: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, rows * cols], data)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut f = std::fs::File::open(path)?;
    let magic = f.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse(format!("bad label magic 0x{:08x}", magic)));
    }
    let n = f.read_u32::<BigEndian>()? as usize;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() != n {
        return Err(Error::Parse(format!(
            "truncated label payload: {} bytes for {}",
            payload.len(),
            n
        )));
    }
    Ok(payload.into_iter().map(|b| b as usize).collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(Tensor, Vec<usize>)> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.rows() != labels.len() {
        return Err(Error::Parse(format!(
            "{} images vs {} labels",
            images.rows(),
            labels.len()
        )));
    }
    Ok((images, labels))
}

/// One optimization step's worth of samples: the first `n_src` rows of
/// `features` are labeled source samples, the rest unlabeled target.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor,
    pub n_src: usize,
    pub source_labels: Vec<usize>,
    pub known_domains: Vec<Option<usize>>,
    /// ground-truth domains per row (source then target); evaluation and
    /// oracle mode only
    pub true_domains: Vec<Option<usize>>,
    /// dataset indices per row, for per-sample deterministic assignments
    pub indices: Vec<usize>,
}

/// Without-replacement epoch sampler over the pooled source and target
/// splits; latent domains are not used for stratification.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    src: Vec<usize>,
    tgt: Vec<usize>,
    src_pos: usize,
    tgt_pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchIter<'a> {
    pub fn new(dataset: &'a Dataset, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let src = dataset.source_indices();
        let tgt = dataset.target_indices();
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::Usage("dataset needs both source and target samples".into()));
        }
        let mut it = BatchIter {
            dataset,
            src,
            tgt,
            src_pos: 0,
            tgt_pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        it.src.shuffle(&mut it.rng);
        it.tgt.shuffle(&mut it.rng);
        Ok(it)
    }

    fn next_index(
        pool: &mut Vec<usize>,
        pos: &mut usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        if *pos >= pool.len() {
            pool.shuffle(rng);
            *pos = 0;
        }
        let i = pool[*pos];
        *pos += 1;
        i
    }

    /// Half source, half target.
    pub fn next_batch(&mut self, batch_size: usize) -> Result<Batch> {
        if batch_size < 2 || batch_size % 2 != 0 {
            return Err(Error::Usage(format!("batch size {} must be even and >= 2", batch_size)));
        }
        let half = batch_size / 2;
        let mut rows = Vec::with_capacity(batch_size);
        let mut indices = Vec::with_capacity(batch_size);
        let mut source_labels = Vec::with_capacity(half);
        let mut known = Vec::with_capacity(half);
        let mut true_domains = Vec::with_capacity(batch_size);
        for _ in 0..half {
            let i = Self::next_index(&mut self.src, &mut self.src_pos, &mut self.rng);
            let s = &self.dataset.samples[i];
            rows.push(s.features.clone());
            indices.push(i);
            source_labels.push(
                s.label
                    .ok_or_else(|| Error::Usage(format!("source sample {} lacks a label", i)))?,
            );
            known.push(s.known_domain);
            true_domains.push(s.domain);
        }
        for _ in 0..half {
            let i = Self::next_index(&mut self.tgt, &mut self.tgt_pos, &mut self.rng);
            let s = &self.dataset.samples[i];
            rows.push(s.features.clone());
            indices.push(i);
            true_domains.push(s.domain);
        }
        Ok(Batch {
            features: Tensor::from_rows(&rows)?,
            n_src: half,
            source_labels,
            known_domains: known,
            true_domains,
            indices,
        })
    }
}
