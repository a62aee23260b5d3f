//! Gaussian phonetic category models: the embedded twelve-vowel American
//! English table, CSV loading and saving, and random adult-directed samples.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bayes::NiwParams;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// Default CRP concentration.
pub const DEFAULT_ALPHA: f64 = 1.0;

/// The three corner vowels, as IPA labels.
pub const CORNER_VOWELS: [&str; 3] = ["ɑ", "i", "u"];

/// One Gaussian category: mean formants (Hz) and covariance (Hz²).
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeSpec {
    pub label: String,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_source: usize,
}

impl PhonemeSpec {
    pub fn new(label: impl Into<String>, mean: DVector<f64>, cov: DMatrix<f64>, n_source: usize) -> Result<Self> {
        let label = label.into();
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidParameter(format!("`{label}` has an empty mean")));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("`{label}` has non-finite entries")));
        }
        if (0..d).any(|i| (0..i).any(|j| cov[(i, j)] != cov[(j, i)])) {
            return Err(Error::NonPositiveDefiniteCovariance { label });
        }
        SpdFactor::strict(&cov, &label)?;
        Ok(PhonemeSpec {
            label,
            mean,
            cov,
            n_source,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// The target concept: labeled Gaussian categories plus the learner's prior.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryModel {
    phonemes: Vec<PhonemeSpec>,
    prior: NiwParams,
    alpha: f64,
}

impl CategoryModel {
    /// Build a model and derive its prior: `mu0` is the unweighted mean of
    /// the category means, `Lambda0` the average category covariance,
    /// `kappa0 = 1` and `nu0 = d`.
    pub fn new(phonemes: Vec<PhonemeSpec>) -> Result<Self> {
        let first = phonemes
            .first()
            .ok_or_else(|| Error::InvalidParameter("a model needs at least one phoneme".into()))?;
        let d = first.dim();
        for p in &phonemes {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.dim(),
                });
            }
        }
        for (i, p) in phonemes.iter().enumerate() {
            if phonemes[..i].iter().any(|q| q.label == p.label) {
                return Err(Error::InvalidParameter(format!("duplicate label `{}`", p.label)));
            }
        }
        let k = phonemes.len() as f64;
        let mu0 = phonemes.iter().fold(DVector::zeros(d), |acc, p| acc + &p.mean) / k;
        let lambda0 = phonemes.iter().fold(DMatrix::zeros(d, d), |acc, p| acc + &p.cov) / k;
        let prior = NiwParams::new(mu0, 1.0, d as f64, lambda0)?;
        Ok(CategoryModel {
            phonemes,
            prior,
            alpha: DEFAULT_ALPHA,
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    /// Override the prior degrees of freedom.
    pub fn with_nu0(mut self, nu0: f64) -> Result<Self> {
        let p = &self.prior;
        self.prior = NiwParams::new(p.mu0.clone(), p.kappa0, nu0, p.lambda0.clone())?;
        Ok(self)
    }

    pub fn phonemes(&self) -> &[PhonemeSpec] {
        &self.phonemes
    }

    pub fn prior(&self) -> &NiwParams {
        &self.prior
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.phonemes.iter().map(|p| p.label.as_str()).collect()
    }

    /// Index of a phoneme by IPA label or X-SAMPA alias.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        let ipa = xsampa_to_ipa(label).unwrap_or(label);
        self.phonemes.iter().position(|p| p.label == ipa || p.label == label)
    }

    pub fn phoneme(&self, label: &str) -> Option<&PhonemeSpec> {
        self.index_of(label).map(|i| &self.phonemes[i])
    }

    /// Keep only the listed coordinates, re-deriving the prior in the
    /// reduced space. `alpha` is preserved.
    pub fn project(&self, dims: &[usize]) -> Result<Self> {
        let d = self.dim();
        if dims.is_empty() || dims.iter().any(|&c| c >= d) {
            return Err(Error::InvalidParameter(format!("projection {dims:?} out of range for d={d}")));
        }
        let phonemes = self
            .phonemes
            .iter()
            .map(|p| PhonemeSpec {
                label: p.label.clone(),
                mean: DVector::from_fn(dims.len(), |i, _| p.mean[dims[i]]),
                cov: DMatrix::from_fn(dims.len(), dims.len(), |i, j| p.cov[(dims[i], dims[j])]),
                n_source: p.n_source,
            })
            .collect();
        CategoryModel::new(phonemes)?.with_alpha(self.alpha)
    }
}

const XSAMPA: [(&str, &str); 12] = [
    ("{", "æ"),
    ("A", "ɑ"),
    ("O", "ɔ"),
    ("E", "ɛ"),
    ("e", "e"),
    ("3`", "ɝ"),
    ("I", "ɪ"),
    ("i", "i"),
    ("o", "o"),
    ("U", "ʊ"),
    ("V", "ʌ"),
    ("u", "u"),
];

fn xsampa_to_ipa(label: &str) -> Option<&'static str> {
    XSAMPA.iter().find(|(x, _)| *x == label).map(|(_, ipa)| *ipa)
}

/// Hillenbrand et al. (1995) female-speaker vowels: label, token count,
/// means (F1, F2, F3), variances (F1, F2, F3), covariances (F1F2, F1F3, F2F3).
#[rustfmt::skip]
const BUILTIN_TABLE: [(&str, usize, [f64; 3], [f64; 3], [f64; 3]); 12] = [
    ("æ", 47, [678.06, 2332.47, 2972.68], [4627.84, 25475.73, 40006.61], [-4247.73, -1274.09, 21255.98]),
    ("ɑ", 47, [916.36, 1525.83, 2822.57], [8449.84, 15615.80, 27556.25], [4354.50, 1197.37, 448.93]),
    ("ɔ", 47, [801.02, 1188.28, 2819.21], [5172.15, 16614.68, 44701.74], [6057.43, 128.67, 99.29]),
    ("ɛ", 48, [726.67, 2062.54, 2952.35], [5454.06, 20402.51, 36093.30], [-854.33, 3539.42, 11775.23]),
    ("e", 44, [536.86, 2517.09, 3049.86], [3807.70, 24872.41, 32855.10], [-1656.22, -1608.30, 19084.57]),
    ("ɝ", 40, [526.60, 1589.35, 1929.85], [2193.73, 12356.90, 17234.28], [-402.32, 989.35, 10092.08]),
    ("ɪ", 48, [484.31, 2369.10, 3057.12], [1181.03, 22330.69, 36138.92], [-182.84, 1726.00, 19153.52]),
    ("i", 45, [435.47, 2755.96, 3372.76], [1662.21, 20746.41, 56255.83], [967.00, 1010.07, 18241.44]),
    ("o", 48, [555.46, 1035.52, 2828.29], [6496.21, 15020.30, 35040.38], [6953.69, -16.69, 771.31]),
    ("ʊ", 48, [518.65, 1228.56, 2829.44], [1695.72, 20907.53, 33424.00], [2399.33, 232.84, 1976.00]),
    ("ʌ", 48, [760.19, 1415.67, 2900.92], [3312.88, 13318.10, 29810.38], [2538.87, 3730.06, 6977.70]),
    ("u", 48, [459.67, 1105.52, 2735.40], [1496.06, 42130.34, 19576.20], [-417.93, -57.95, 2436.00]),
];

/// The embedded twelve-vowel, three-formant model with `alpha = 1`.
pub fn builtin_model() -> CategoryModel {
    let phonemes = BUILTIN_TABLE
        .iter()
        .map(|&(label, n, mean, var, cov)| {
            let c = DMatrix::from_row_slice(
                3,
                3,
                &[var[0], cov[0], cov[1], cov[0], var[1], cov[2], cov[1], cov[2], var[2]],
            );
            PhonemeSpec::new(label, DVector::from_row_slice(&mean), c, n).expect("embedded table is valid")
        })
        .collect();
    CategoryModel::new(phonemes).expect("embedded table is valid")
}

fn model_header(d: usize) -> Vec<String> {
    let mut h = vec!["label".to_string()];
    h.extend((1..=d).map(|i| format!("mf{i}")));
    h.extend((1..=d).map(|i| format!("vf{i}")));
    for i in 1..=d {
        for j in (i + 1)..=d {
            h.push(format!("cf{i}f{j}"));
        }
    }
    h.push("n".to_string());
    h
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a category model from CSV (`label,mf1..,vf1..,cf1f2..,n`).
pub fn load_model(path: &Path) -> Result<CategoryModel> {
    read_model(open(path)?).map_err(|e| e.with_path(path))
}

pub fn read_model<R: Read>(reader: R) -> Result<CategoryModel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let d = header.iter().filter(|h| h.starts_with("mf")).count();
    if d == 0 || header != model_header(d) {
        return Err(Error::csv(format!(
            "expected header `{}`, found `{}`",
            model_header(d.max(1)).join(","),
            header.join(",")
        )));
    }
    let mut phonemes = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line());
        let num = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| Error::MalformedCsv {
                path: None,
                line,
                message: format!("column `{}`: {e}", header[i]),
            })
        };
        let label = record[0].to_string();
        let mean = DVector::from_iterator(d, (1..=d).map(num).collect::<Result<Vec<_>>>()?);
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            cov[(i, i)] = num(1 + d + i)?;
        }
        let mut col = 1 + 2 * d;
        for i in 0..d {
            for j in (i + 1)..d {
                let v = num(col)?;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
                col += 1;
            }
        }
        let n = record[col].parse::<usize>().map_err(|e| Error::MalformedCsv {
            path: None,
            line,
            message: format!("column `n`: {e}"),
        })?;
        phonemes.push(PhonemeSpec::new(label, mean, cov, n)?);
    }
    CategoryModel::new(phonemes)
}

/// Save in the same schema `load_model` reads, at full round-trip precision.
pub fn save_model(model: &CategoryModel, path: &Path) -> Result<()> {
    write_model(model, create(path)?)
}

pub fn write_model<W: Write>(model: &CategoryModel, writer: W) -> Result<()> {
    let d = model.dim();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(model_header(d))?;
    for p in model.phonemes() {
        let mut row = vec![p.label.clone()];
        row.extend(p.mean.iter().map(f64::to_string));
        row.extend((0..d).map(|i| p.cov[(i, i)].to_string()));
        for i in 0..d {
            for j in (i + 1)..d {
                row.push(p.cov[(i, j)].to_string());
            }
        }
        row.push(p.n_source.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<model>".into(),
        source,
    })
}

/// Where a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Ads,
    Teaching,
    Custom,
}

/// Which formants an analysis sees: all of them, or only F1 and F2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FormantSet {
    F123,
    F12,
}

impl FormantSet {
    /// Coordinates kept for a `d`-dimensional model.
    pub fn dims(self, d: usize) -> Vec<usize> {
        match self {
            FormantSet::F123 => (0..d).collect(),
            FormantSet::F12 => vec![0, 1],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FormantSet::F123 => "F123",
            FormantSet::F12 => "F12",
        }
    }

    /// The model seen under this formant set; F12 re-derives the prior.
    pub fn apply(self, model: &CategoryModel) -> Result<CategoryModel> {
        match self {
            FormantSet::F123 => Ok(model.clone()),
            FormantSet::F12 => model.project(&[0, 1]),
        }
    }
}

impl std::fmt::Display for FormantSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FormantSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f123" | "f1f2f3" => Ok(FormantSet::F123),
            "f12" | "f1f2" => Ok(FormantSet::F12),
            other => Err(Error::InvalidParameter(format!("unknown formant set `{other}`"))),
        }
    }
}

/// Labeled points (rows, Hz) with category indices into the originating model.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keep only the listed coordinates.
    pub fn project(&self, dims: &[usize]) -> LabeledDataset {
        LabeledDataset {
            points: DMatrix::from_fn(self.points.nrows(), dims.len(), |i, j| self.points[(i, dims[j])]),
            labels: self.labels.clone(),
            provenance: self.provenance,
        }
    }
}

/// Draw `per_phoneme` points from each category, phoneme-major order.
pub fn sample_ads(model: &CategoryModel, per_phoneme: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_ads_with(model, per_phoneme, &mut rng)
}

pub fn sample_ads_with<R: Rng + ?Sized>(model: &CategoryModel, per_phoneme: usize, rng: &mut R) -> LabeledDataset {
    let d = model.dim();
    let k = model.len();
    let mut points = DMatrix::zeros(k * per_phoneme, d);
    let mut labels = Vec::with_capacity(k * per_phoneme);
    let mut z = vec![0.0; d];
    for (j, p) in model.phonemes().iter().enumerate() {
        let factor = SpdFactor::new(&p.cov, &p.label).expect("validated at construction");
        for r in 0..per_phoneme {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let draw = factor.mul_lower(&z);
            let row = j * per_phoneme + r;
            for c in 0..d {
                points[(row, c)] = p.mean[c] + draw[c];
            }
            labels.push(j);
        }
    }
    LabeledDataset {
        points,
        labels,
        provenance: Provenance::Ads,
    }
}

/// Write `label,f1,..,fd` rows.
pub fn write_dataset<W: Write>(model: &CategoryModel, data: &LabeledDataset, writer: W) -> Result<()> {
    let d = data.points.ncols();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string()];
    header.extend((1..=d).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (i, &l) in data.labels.iter().enumerate() {
        let mut row = vec![model.phonemes()[l].label.clone()];
        row.extend((0..d).map(|c| data.points[(i, c)].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<dataset>".into(),
        source,
    })
}

pub fn save_dataset(model: &CategoryModel, data: &LabeledDataset, path: &Path) -> Result<()> {
    write_dataset(model, data, create(path)?)
}

/// Read `label,f1,..,fd` rows; labels must exist in `model`.
pub fn read_dataset<R: Read>(model: &CategoryModel, reader: R) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let d = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("label".to_string())
        .chain((1..=d).map(|i| format!("f{i}")))
        .collect();
    if d == 0 || header != expected {
        return Err(Error::csv(format!("expected dataset header `label,f1,...`, found `{}`", header.join(","))));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line());
        let label = model.index_of(&record[0]).ok_or_else(|| Error::MalformedCsv {
            path: None,
            line,
            message: format!("unknown label `{}`", &record[0]),
        })?;
        labels.push(label);
        for c in 1..=d {
            values.push(record[c].parse::<f64>().map_err(|e| Error::MalformedCsv {
                path: None,
                line,
                message: format!("column `{}`: {e}", header[c]),
            })?);
        }
    }
    if labels.is_empty() {
        return Err(Error::csv("dataset has no rows"));
    }
    Ok(LabeledDataset {
        points: DMatrix::from_row_slice(labels.len(), d, &values),
        labels,
        provenance: Provenance::Custom,
    })
}

pub fn load_dataset(model: &CategoryModel, path: &Path) -> Result<LabeledDataset> {
    read_dataset(model, open(path)?).map_err(|e| e.with_path(path))
}
