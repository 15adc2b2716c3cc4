//! Datasets: raw feature vectors with class labels and train / validation
//! / test split tags, synthetic cluster generation, and file round trips.
//!
//! The text format is the primary one for diffability: a header line
//! `N dim num_classes` followed by one `label v1 .. vdim` line per point.
//! A parallel binary format (32-bit little-endian floats) serves large
//! sets. Split tags are not stored; loading assigns the canonical
//! class-disjoint split (first half of the classes train, second half
//! test).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"SMDS";

/// Which portion of the pipeline a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Feature table with labels and per-point split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub num_classes: usize,
}

/// Materialised view of one split with contiguous local indices.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Original dataset index of each local point.
    pub original: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the first uniform is kept away from zero.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl Dataset {
    /// Gaussian class clusters around unit-norm centres drawn uniformly on
    /// the sphere. The first half of the classes is tagged train, the
    /// second half test.
    pub fn generate_synthetic(
        num_classes: usize,
        per_class: usize,
        input_dim: usize,
        cluster_spread: f64,
        seed: u64,
    ) -> Result<Dataset> {
        if num_classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if per_class < 2 {
            return Err(Error::config("each class needs at least 2 samples"));
        }
        if input_dim == 0 {
            return Err(Error::config("input dimension must be positive"));
        }
        if cluster_spread < 0.0 {
            return Err(Error::config("cluster spread must be non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train_classes = num_classes / 2;
        let mut features = Vec::with_capacity(num_classes * per_class);
        let mut labels = Vec::with_capacity(num_classes * per_class);
        let mut splits = Vec::with_capacity(num_classes * per_class);
        for class in 0..num_classes {
            let centre = loop {
                let v: Vec<f64> = (0..input_dim).map(|_| gaussian(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-9 {
                    break v.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
                }
            };
            for _ in 0..per_class {
                let point: Vec<f64> =
                    centre.iter().map(|c| c + cluster_spread * gaussian(&mut rng)).collect();
                features.push(point);
                labels.push(class);
                splits.push(if class < train_classes { Split::Train } else { Split::Test });
            }
        }
        Ok(Dataset { features, labels, splits, num_classes })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map(|f| f.len()).unwrap_or(0)
    }

    /// Structural validation: consistent lengths, labels in range, finite
    /// features.
    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() || self.features.len() != self.splits.len() {
            return Err(Error::config("features, labels and splits differ in length"));
        }
        if self.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        let dim = self.dim();
        for (i, f) in self.features.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::config(format!("point {i} has width {}, expected {dim}", f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("point {i} has a non-finite feature")));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::config(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Ensures the spec a training run relies on: at least two train
    /// classes, each with at least two samples, and train/test class
    /// disjointness.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        let mut train_counts = vec![0usize; self.num_classes];
        let mut test_classes = vec![false; self.num_classes];
        for (i, &split) in self.splits.iter().enumerate() {
            match split {
                Split::Train => train_counts[self.labels[i]] += 1,
                Split::Test => test_classes[self.labels[i]] = true,
                Split::Validation => {}
            }
        }
        let populated: Vec<usize> =
            (0..self.num_classes).filter(|&c| train_counts[c] > 0).collect();
        if populated.len() < 2 {
            return Err(Error::config("training needs at least two train classes"));
        }
        if let Some(&c) = populated.iter().find(|&&c| train_counts[c] < 2) {
            return Err(Error::config(format!("train class {c} has fewer than 2 samples")));
        }
        if let Some(&c) = populated.iter().find(|&&c| test_classes[c]) {
            return Err(Error::config(format!("class {c} appears in both train and test splits")));
        }
        Ok(())
    }

    /// Moves the highest-labelled `fraction` of train classes to the
    /// validation split. At least two classes are held out because the
    /// validation error needs both positives and negatives; datasets with
    /// fewer than four train classes are left untouched. No-op when a
    /// validation split already exists or the fraction is zero.
    pub fn hold_out_validation_classes(&mut self, fraction: f64) -> Result<()> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::config("validation fraction must be in [0, 1)"));
        }
        if fraction == 0.0 || self.splits.iter().any(|&s| s == Split::Validation) {
            return Ok(());
        }
        let mut train_classes: Vec<usize> = Vec::new();
        for (i, &split) in self.splits.iter().enumerate() {
            if split == Split::Train && !train_classes.contains(&self.labels[i]) {
                train_classes.push(self.labels[i]);
            }
        }
        train_classes.sort_unstable();
        if train_classes.len() < 4 {
            return Ok(());
        }
        let hold = ((train_classes.len() as f64 * fraction).ceil() as usize)
            .max(2)
            .min(train_classes.len() - 2);
        let held: Vec<usize> = train_classes[train_classes.len() - hold..].to_vec();
        for (i, split) in self.splits.iter_mut().enumerate() {
            if *split == Split::Train && held.contains(&self.labels[i]) {
                *split = Split::Validation;
            }
        }
        Ok(())
    }

    pub fn split_data(&self, split: Split) -> SplitData {
        let original: Vec<usize> =
            (0..self.len()).filter(|&i| self.splits[i] == split).collect();
        SplitData {
            features: original.iter().map(|&i| self.features[i].clone()).collect(),
            labels: original.iter().map(|&i| self.labels[i]).collect(),
            original,
        }
    }

    fn canonical_splits(labels: &[usize], num_classes: usize) -> Vec<Split> {
        let train_classes = num_classes / 2;
        labels
            .iter()
            .map(|&y| if y < train_classes { Split::Train } else { Split::Test })
            .collect()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.len(), self.dim(), self.num_classes)?;
        for (label, feature) in self.labels.iter().zip(&self.features) {
            write!(w, "{label}")?;
            for v in feature {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(r: R) -> Result<Dataset> {
        let mut reader = BufReader::new(r);
        let mut offset = 0u64;
        let mut line = String::new();

        let n_read = reader.read_line(&mut line)?;
        if n_read == 0 {
            return Err(Error::parse(0, "empty dataset file"));
        }
        let header: Vec<&str> = line.split_whitespace().collect();
        if header.len() != 3 {
            return Err(Error::parse(offset, "header must be 'N dim num_classes'"));
        }
        let parse_usize = |s: &str, what: &str, off: u64| {
            s.parse::<usize>().map_err(|_| Error::parse(off, format!("bad {what}: {s:?}")))
        };
        let n = parse_usize(header[0], "point count", offset)?;
        let dim = parse_usize(header[1], "dimension", offset)?;
        let num_classes = parse_usize(header[2], "class count", offset)?;
        offset += n_read as u64;

        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            line.clear();
            let n_read = reader.read_line(&mut line)?;
            if n_read == 0 {
                return Err(Error::parse(
                    offset,
                    format!("file truncated: expected {n} points, found {i}"),
                ));
            }
            let mut tokens = line.split_whitespace();
            let label_tok = tokens
                .next()
                .ok_or_else(|| Error::parse(offset, "empty data line"))?;
            let label = parse_usize(label_tok, "label", offset)?;
            if label >= num_classes {
                return Err(Error::parse(
                    offset,
                    format!("label {label} out of range for {num_classes} classes"),
                ));
            }
            let mut feature = Vec::with_capacity(dim);
            for tok in tokens {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(offset, format!("bad value {tok:?}")))?;
                feature.push(v);
            }
            if feature.len() != dim {
                return Err(Error::parse(
                    offset,
                    format!("point {i} has {} values, header says {dim}", feature.len()),
                ));
            }
            features.push(feature);
            labels.push(label);
            offset += n_read as u64;
        }
        let splits = Self::canonical_splits(&labels, num_classes);
        let ds = Dataset { features, labels, splits, num_classes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.num_classes as u32).to_le_bytes())?;
        for (label, feature) in self.labels.iter().zip(&self.features) {
            w.write_all(&(*label as u32).to_le_bytes())?;
            for &v in feature {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Dataset> {
        let mut offset = 0u64;
        let mut magic = [0u8; 4];
        read_exact_at(&mut r, &mut magic, &mut offset)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::parse(0, "bad dataset magic"));
        }
        let n = read_u32_at(&mut r, &mut offset)? as usize;
        let dim = read_u32_at(&mut r, &mut offset)? as usize;
        let num_classes = read_u32_at(&mut r, &mut offset)? as usize;
        if dim == 0 {
            return Err(Error::parse(8, "zero dimension"));
        }
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = read_u32_at(&mut r, &mut offset)? as usize;
            if label >= num_classes {
                return Err(Error::parse(
                    offset - 4,
                    format!("label {label} out of range for {num_classes} classes"),
                ));
            }
            let mut feature = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut buf = [0u8; 4];
                read_exact_at(&mut r, &mut buf, &mut offset)?;
                feature.push(f32::from_le_bytes(buf) as f64);
            }
            features.push(feature);
            labels.push(label);
        }
        let splits = Self::canonical_splits(&labels, num_classes);
        let ds = Dataset { features, labels, splits, num_classes };
        ds.validate()?;
        Ok(ds)
    }

    /// Saves in the text format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_text(BufWriter::new(file))
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_binary(BufWriter::new(file))
    }

    /// Loads either format, sniffing the binary magic.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_text(bytes.as_slice())
        }
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    r.read_exact(buf).map_err(|_| {
        Error::parse(*offset, format!("file truncated while reading {} bytes", buf.len()))
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u32_at<R: Read>(r: &mut R, offset: &mut u64) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_at(r, &mut buf, offset)?;
    Ok(u32::from_le_bytes(buf))
}
