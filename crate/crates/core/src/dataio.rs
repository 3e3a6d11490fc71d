//! Dataset model, on-disk CSV formats, deterministic splitting and
//! Gaussian-noise augmentation.
//!
//! On disk a dataset is a manifest CSV plus one waveform CSV per record.
//! Manifest columns:
//!
//! `id, waveform_file, sample_rate_hz, energy_j, mass_kg, diameter_mm,
//! location_id, loc_x_mm, loc_y_mm, state, provenance, source_id, noise_seed`
//!
//! Waveform CSV: header `t_s,ch1..chC`, one row per sample. All reals are
//! written with 17 significant digits so a write/load cycle is exact.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_COLUMNS: [&str; 13] = [
    "id",
    "waveform_file",
    "sample_rate_hz",
    "energy_j",
    "mass_kg",
    "diameter_mm",
    "location_id",
    "loc_x_mm",
    "loc_y_mm",
    "state",
    "provenance",
    "source_id",
    "noise_seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum State {
    Pristine,
    Damaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Synthetic,
    Augmented,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim() {
                    $($text => Ok($ty::$variant),)+
                    other => Err(format!("unknown {} `{}`", stringify!($ty), other)),
                }
            }
        }
    };
}

text_enum!(State { Pristine => "pristine", Damaged => "damaged" });
text_enum!(Provenance { Measured => "measured", Synthetic => "synthetic", Augmented => "augmented" });

/// One impact event: multichannel waveform plus its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRecord {
    pub id: String,
    /// `waveforms[c][n]` is sample `n` of channel `c`, in volts.
    pub waveforms: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub energy: f64,
    pub impactor_mass: f64,
    pub impactor_diameter: f64,
    pub location_id: String,
    pub location_xy: (f64, f64),
    pub state: State,
    pub provenance: Provenance,
    /// Set on augmented copies only.
    pub source_id: Option<String>,
    pub noise_seed: Option<u64>,
}

impl ImpactRecord {
    pub fn n_channels(&self) -> usize {
        self.waveforms.len()
    }

    pub fn n_samples(&self) -> usize {
        self.waveforms.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.waveforms.is_empty() {
            return Err("record has no channels".into());
        }
        let len = self.waveforms[0].len();
        if len < 2 {
            return Err(format!("channels need at least 2 samples, got {len}"));
        }
        if let Some((c, ch)) = self
            .waveforms
            .iter()
            .enumerate()
            .find(|(_, ch)| ch.len() != len)
        {
            return Err(format!(
                "channel {} has {} samples, channel 1 has {len}",
                c + 1,
                ch.len()
            ));
        }
        if self.waveforms.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite sample".into());
        }
        if !(self.sample_rate > 0.0) {
            return Err(format!("sample_rate must be > 0, got {}", self.sample_rate));
        }
        if !(self.energy >= 0.0) {
            return Err(format!("energy must be >= 0, got {}", self.energy));
        }
        if !(self.impactor_mass > 0.0) {
            return Err(format!("impactor mass must be > 0, got {}", self.impactor_mass));
        }
        if !(self.impactor_diameter > 0.0) {
            return Err(format!(
                "impactor diameter must be > 0, got {}",
                self.impactor_diameter
            ));
        }
        if self.provenance == Provenance::Augmented
            && (self.source_id.is_none() || self.noise_seed.is_none())
        {
            return Err("augmented record must carry source_id and noise_seed".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<ImpactRecord>,
    pub manifest_path: String,
    pub schema_version: u32,
}

impl Dataset {
    /// Builds a dataset after checking every record and the shared-shape
    /// invariants (unique ids, common sample rate and channel count).
    pub fn new(records: Vec<ImpactRecord>) -> Result<Self> {
        let ds = Dataset {
            records,
            manifest_path: String::new(),
            schema_version: SCHEMA_VERSION,
        };
        ds.validate(Path::new(""))?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        let first = self.records.first();
        for r in &self.records {
            let fail = |message: String| Error::Record {
                record: r.id.clone(),
                path: path.to_path_buf(),
                message,
            };
            r.validate().map_err(&fail)?;
            if !seen.insert(r.id.as_str()) {
                return Err(fail("duplicate record id".into()));
            }
            if let Some(f) = first {
                if r.sample_rate != f.sample_rate {
                    return Err(fail(format!(
                        "sample rate {} differs from dataset rate {}",
                        r.sample_rate, f.sample_rate
                    )));
                }
                if r.n_channels() != f.n_channels() {
                    return Err(fail(format!(
                        "{} channels, dataset has {}",
                        r.n_channels(),
                        f.n_channels()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn waveform_file_name(index: usize, id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("waveforms/{index:04}_{safe}.csv")
}

/// Writes `dataset` under `dir` and returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.csv");
    let csv_err = |path: &Path, e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };

    let mut manifest =
        csv::Writer::from_path(&manifest_path).map_err(|e| csv_err(&manifest_path, e))?;
    manifest
        .write_record(MANIFEST_COLUMNS)
        .map_err(|e| csv_err(&manifest_path, e))?;

    if !dataset.records.is_empty() {
        let wf_dir = dir.join("waveforms");
        fs::create_dir_all(&wf_dir).map_err(|e| Error::io(&wf_dir, e))?;
    }

    for (i, r) in dataset.records.iter().enumerate() {
        let rel = waveform_file_name(i, &r.id);
        let wf_path = dir.join(&rel);
        let mut w = csv::Writer::from_path(&wf_path).map_err(|e| csv_err(&wf_path, e))?;
        let mut header = vec!["t_s".to_string()];
        header.extend((1..=r.n_channels()).map(|c| format!("ch{c}")));
        w.write_record(&header).map_err(|e| csv_err(&wf_path, e))?;
        for n in 0..r.n_samples() {
            let mut row = Vec::with_capacity(r.n_channels() + 1);
            row.push(fmt_real(n as f64 / r.sample_rate));
            row.extend(r.waveforms.iter().map(|ch| fmt_real(ch[n])));
            w.write_record(&row).map_err(|e| csv_err(&wf_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&wf_path, e))?;

        manifest
            .write_record([
                r.id.clone(),
                rel,
                fmt_real(r.sample_rate),
                fmt_real(r.energy),
                fmt_real(r.impactor_mass),
                fmt_real(r.impactor_diameter),
                r.location_id.clone(),
                fmt_real(r.location_xy.0),
                fmt_real(r.location_xy.1),
                r.state.to_string(),
                r.provenance.to_string(),
                r.source_id.clone().unwrap_or_default(),
                r.noise_seed.map(|s| s.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| csv_err(&manifest_path, e))?;
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Loads a dataset from its manifest; waveform paths resolve relative to
/// the manifest's directory. Record order follows the manifest.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    if !manifest_path.is_file() {
        return Err(Error::io(
            manifest_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        ));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(manifest_path)
        .map_err(|e| Error::Csv {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| Error::Csv {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let header_vec: Vec<&str> = headers.iter().map(str::trim).collect();
    if header_vec != MANIFEST_COLUMNS {
        return Err(Error::Csv {
            path: manifest_path.to_path_buf(),
            message: format!("manifest header {header_vec:?} != {MANIFEST_COLUMNS:?}"),
        });
    }

    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Csv {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
        let id = row.get(0).unwrap_or("").trim().to_string();
        let fail = |message: String| Error::Record {
            record: if id.is_empty() {
                format!("<row {}>", line + 1)
            } else {
                id.clone()
            },
            path: manifest_path.to_path_buf(),
            message,
        };
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let real = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| fail(format!("column `{}`: not a number: `{}`", MANIFEST_COLUMNS[i], field(i))))
        };

        let wf_rel = field(1);
        let wf_path = base.join(wf_rel);
        let waveforms = read_waveform(&wf_path, &id)?;
        let source_id = Some(field(11).to_string()).filter(|s| !s.is_empty());
        let noise_seed = match field(12) {
            "" => None,
            s => Some(
                s.parse::<u64>()
                    .map_err(|_| fail(format!("noise_seed not an integer: `{s}`")))?,
            ),
        };
        records.push(ImpactRecord {
            id: id.clone(),
            waveforms,
            sample_rate: real(2)?,
            energy: real(3)?,
            impactor_mass: real(4)?,
            impactor_diameter: real(5)?,
            location_id: field(6).to_string(),
            location_xy: (real(7)?, real(8)?),
            state: field(9).parse().map_err(&fail)?,
            provenance: field(10).parse().map_err(&fail)?,
            source_id,
            noise_seed,
        });
    }

    let ds = Dataset {
        records,
        manifest_path: manifest_path.to_string_lossy().into_owned(),
        schema_version: SCHEMA_VERSION,
    };
    ds.validate(manifest_path)?;
    Ok(ds)
}

fn read_waveform(path: &Path, id: &str) -> Result<Vec<Vec<f64>>> {
    let fail = |message: String| Error::Record {
        record: id.to_string(),
        path: path.to_path_buf(),
        message,
    };
    if !path.is_file() {
        return Err(fail("waveform file not found".into()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let n_cols = reader.headers().map_err(|e| fail(e.to_string()))?.len();
    if n_cols < 2 {
        return Err(fail("waveform needs a time column and at least one channel".into()));
    }
    let mut channels = vec![Vec::new(); n_cols - 1];
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| fail(format!("row {}: {e}", n + 1)))?;
        if row.len() != n_cols {
            return Err(fail(format!(
                "row {} has {} columns, header has {n_cols}",
                n + 1,
                row.len()
            )));
        }
        for (c, ch) in channels.iter_mut().enumerate() {
            let text = row[c + 1].trim();
            let v = text
                .parse::<f64>()
                .map_err(|_| fail(format!("row {}, ch{}: non-numeric sample `{text}`", n + 1, c + 1)))?;
            ch.push(v);
        }
    }
    Ok(channels)
}

/// Fractions for a train/validation/test partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train", self.train_frac),
            ("val", self.val_frac),
            ("test", self.test_frac),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("{name} fraction {f} not in (0,1)")));
            }
        }
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Partition sizes for `k` items: validation and test get
    /// `round(frac * k)`, training absorbs the remainder.
    pub fn sizes(&self, k: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let val = (self.val_frac * k as f64).round() as usize;
        let test = (self.test_frac * k as f64).round() as usize;
        if k < 3 || val == 0 || test == 0 || val + test >= k {
            return Err(Error::invalid(format!(
                "{k} records cannot fill three non-empty partitions"
            )));
        }
        Ok((k - val - test, val, test))
    }

    /// Seeded permutation of `0..k` cut into (train, val, test) index sets.
    pub fn partition_indices(&self, k: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let (n_train, n_val, _) = self.sizes(k)?;
        let mut idx: Vec<usize> = (0..k).collect();
        SeededRng::new(self.seed).shuffle(&mut idx);
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Ok((idx, val, test))
    }
}

pub fn split_dataset(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = spec.partition_indices(dataset.len())?;
    let pick = |ix: &[usize]| Dataset {
        records: ix.iter().map(|&i| dataset.records[i].clone()).collect(),
        manifest_path: String::new(),
        schema_version: dataset.schema_version,
    };
    Ok((pick(&tr), pick(&va), pick(&te)))
}

/// What the noise standard deviation is relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseReference {
    /// Peak absolute amplitude of the channel.
    #[default]
    Peak,
    /// Root mean square of the channel.
    Rms,
}

text_enum!(NoiseReference { Peak => "peak", Rms => "rms" });

/// Adds zero-mean Gaussian noise to one channel, std = `level * reference`.
pub fn add_noise(channel: &[f64], level: f64, reference: NoiseReference, rng: &mut SeededRng) -> Vec<f64> {
    let scale = match reference {
        NoiseReference::Peak => channel.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        NoiseReference::Rms => {
            (channel.iter().map(|v| v * v).sum::<f64>() / channel.len() as f64).sqrt()
        }
    };
    let std = level * scale;
    channel.iter().map(|v| v + std * rng.gaussian()).collect()
}

/// Returns the originals followed by one noisy copy per record. Copy `i`
/// uses noise seed `derive_seed(seed, i)`, id `<source>_aug`, and keeps the
/// source's metadata.
pub fn augment_with_noise(dataset: &Dataset, level: f64, seed: u64) -> Result<Dataset> {
    augment_with_noise_ref(dataset, level, NoiseReference::Peak, seed)
}

pub fn augment_with_noise_ref(
    dataset: &Dataset,
    level: f64,
    reference: NoiseReference,
    seed: u64,
) -> Result<Dataset> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("noise level {level} not in (0,1)")));
    }
    let mut records = dataset.records.clone();
    for (i, src) in dataset.records.iter().enumerate() {
        let noise_seed = derive_seed(seed, i as u64);
        let mut rng = SeededRng::new(noise_seed);
        let waveforms = src
            .waveforms
            .iter()
            .map(|ch| add_noise(ch, level, reference, &mut rng))
            .collect();
        records.push(ImpactRecord {
            id: format!("{}_aug", src.id),
            waveforms,
            provenance: Provenance::Augmented,
            source_id: Some(src.id.clone()),
            noise_seed: Some(noise_seed),
            ..src.clone()
        });
    }
    let mut out = Dataset::new(records)?;
    out.schema_version = dataset.schema_version;
    Ok(out)
}
