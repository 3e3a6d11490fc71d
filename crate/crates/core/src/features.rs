//! The eighteen candidate impact descriptors, channel aggregation and
//! min-max scaling.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, ImpactRecord};
use crate::dsp::{self, Spectrum, WptConfig, WptNodes};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Time,
    Frequency,
    TimeFrequency,
}

impl Domain {
    /// Cluster label prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Domain::Time => "T",
            Domain::Frequency => "F",
            Domain::TimeFrequency => "W",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::Time => "Time",
            Domain::Frequency => "Frequency",
            Domain::TimeFrequency => "Time-Frequency",
        }
    }
}

/// Candidate descriptor ids, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureId {
    PA,
    TE,
    RT,
    CTP,
    RA,
    RMS,
    EPR,
    NDA,
    CF,
    PF,
    WPF,
    PCR,
    RON,
    ROFF,
    AM,
    DM,
    AME,
    DME,
}

impl FeatureId {
    pub const ALL: [FeatureId; 18] = [
        FeatureId::PA,
        FeatureId::TE,
        FeatureId::RT,
        FeatureId::CTP,
        FeatureId::RA,
        FeatureId::RMS,
        FeatureId::EPR,
        FeatureId::NDA,
        FeatureId::CF,
        FeatureId::PF,
        FeatureId::WPF,
        FeatureId::PCR,
        FeatureId::RON,
        FeatureId::ROFF,
        FeatureId::AM,
        FeatureId::DM,
        FeatureId::AME,
        FeatureId::DME,
    ];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn as_str(&self) -> &'static str {
        use FeatureId::*;
        match self {
            PA => "PA",
            TE => "TE",
            RT => "RT",
            CTP => "CTP",
            RA => "RA",
            RMS => "RMS",
            EPR => "EPR",
            NDA => "NDA",
            CF => "CF",
            PF => "PF",
            WPF => "WPF",
            PCR => "PCR",
            RON => "RON",
            ROFF => "ROFF",
            AM => "AM",
            DM => "DM",
            AME => "AME",
            DME => "DME",
        }
    }

    pub fn domain(&self) -> Domain {
        use FeatureId::*;
        match self {
            PA | TE | RT | CTP | RA | RMS | EPR | NDA => Domain::Time,
            CF | PF | WPF | PCR | RON | ROFF => Domain::Frequency,
            AM | DM | AME | DME => Domain::TimeFrequency,
        }
    }

    pub fn unit(&self) -> &'static str {
        use FeatureId::*;
        match self {
            PA | RMS | AM | DM => "V",
            TE => "V·s",
            RT | EPR => "s",
            CTP => "count",
            RA => "V/s",
            NDA | PCR => "dimensionless",
            CF | PF | WPF | RON | ROFF => "Hz",
            AME | DME => "V²",
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown feature id `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPolicy {
    /// Features from the single channel with the largest peak amplitude.
    #[default]
    MaxPa,
    /// Each feature averaged over channels.
    ChannelMean,
}

impl ChannelPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelPolicy::MaxPa => "max-PA",
            ChannelPolicy::ChannelMean => "channel-mean",
        }
    }
}

impl FromStr for ChannelPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max-pa" => Ok(ChannelPolicy::MaxPa),
            "channel-mean" => Ok(ChannelPolicy::ChannelMean),
            other => Err(Error::invalid(format!("unknown channel policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Onset threshold as a fraction of the peak amplitude.
    pub onset_frac: f64,
    /// Count threshold fraction; `None` reuses the onset threshold.
    pub count_frac: Option<f64>,
    pub channel_policy: ChannelPolicy,
    pub wpt: WptConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            onset_frac: 0.05,
            count_frac: None,
            channel_policy: ChannelPolicy::MaxPa,
            wpt: WptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFeatures {
    pub pa: f64,
    pub te: f64,
    pub rt: f64,
    pub ctp: f64,
    pub ra: f64,
    pub rms: f64,
    pub epr: f64,
    pub nda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqFeatures {
    pub cf: f64,
    pub pf: f64,
    pub wpf: f64,
    pub pcr: f64,
    pub ron: f64,
    pub roff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfFeatures {
    pub am: f64,
    pub dm: f64,
    pub ame: f64,
    pub dme: f64,
}

pub fn extract_time(x: &[f64], sample_rate: f64, frac: f64) -> Result<TimeFeatures> {
    extract_time_with(x, sample_rate, frac, frac)
}

/// Time-domain descriptors over the window `x[onset..]`.
///
/// CTP counts the onset crossing itself plus every later positive-going
/// crossing of the rectified signal up to the peak, so it is at least 1.
pub fn extract_time_with(x: &[f64], sample_rate: f64, onset_frac: f64, count_frac: f64) -> Result<TimeFeatures> {
    let onset = dsp::detect_onset(x, onset_frac)?;
    let peak = dsp::argmax_abs(x);
    let pa = x[peak].abs();
    let dt = 1.0 / sample_rate;

    let env = dsp::envelope(x)?;
    let window = &x[onset..];
    let te = env[onset..].iter().sum::<f64>() * dt;
    let rt = ((peak.saturating_sub(onset)) as f64 * dt).max(dt);

    let count_threshold = count_frac * pa;
    let ctp = if peak > onset {
        1 + dsp::count_crossings(x, count_threshold, onset, peak)?
    } else {
        1
    };

    let n = window.len() as f64;
    let rms = (window.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mean_abs = window.iter().map(|v| v.abs()).sum::<f64>() / n;

    Ok(TimeFeatures {
        pa,
        te,
        rt,
        ctp: ctp as f64,
        ra: pa / rt,
        rms,
        epr: te / pa,
        nda: pa / mean_abs,
    })
}

pub fn extract_freq(s: &Spectrum) -> Result<FreqFeatures> {
    let total: f64 = s.psd.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Signal("spectral features undefined for a zero spectrum".into()));
    }
    let cf = s.freqs.iter().zip(&s.psd).map(|(f, p)| f * p).sum::<f64>() / total;

    // Strict comparison keeps the lowest-frequency bin on ties.
    let mut k_peak = 0;
    for (k, p) in s.psd.iter().enumerate() {
        if *p > s.psd[k_peak] {
            k_peak = k;
        }
    }
    let pf = s.freqs[k_peak];

    let rolloff = |frac: f64| {
        let target = frac * total;
        let mut acc = 0.0;
        for (f, p) in s.freqs.iter().zip(&s.psd) {
            acc += p;
            if acc >= target {
                return *f;
            }
        }
        *s.freqs.last().unwrap()
    };

    Ok(FreqFeatures {
        cf,
        pf,
        wpf: (pf * cf).sqrt(),
        pcr: pf / cf,
        ron: rolloff(0.1),
        roff: rolloff(0.9),
    })
}

/// Node 0 is the approximation (lowest band), node 7 the detail (highest).
pub fn extract_tf(w: &WptNodes) -> TfFeatures {
    let last = w.nodes.len() - 1;
    let max_abs = |i: usize| w.nodes[i].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    TfFeatures {
        am: max_abs(0),
        dm: max_abs(last),
        ame: w.node_energy(0),
        dme: w.node_energy(last),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: [f64; 18],
}

impl FeatureVector {
    pub fn get(&self, id: FeatureId) -> f64 {
        self.values[id.index()]
    }

    pub fn set(&mut self, id: FeatureId, v: f64) {
        self.values[id.index()] = v;
    }

    pub fn values(&self) -> &[f64; 18] {
        &self.values
    }

    pub fn from_parts(t: &TimeFeatures, f: &FreqFeatures, w: &TfFeatures) -> Self {
        Self {
            values: [
                t.pa, t.te, t.rt, t.ctp, t.ra, t.rms, t.epr, t.nda, f.cf, f.pf, f.wpf, f.pcr,
                f.ron, f.roff, w.am, w.dm, w.ame, w.dme,
            ],
        }
    }
}

/// All eighteen descriptors of one channel.
pub fn extract_channel(x: &[f64], sample_rate: f64, cfg: &FeatureConfig) -> Result<FeatureVector> {
    let t = extract_time_with(
        x,
        sample_rate,
        cfg.onset_frac,
        cfg.count_frac.unwrap_or(cfg.onset_frac),
    )?;
    let f = extract_freq(&dsp::psd(x, sample_rate)?)?;
    let w = extract_tf(&dsp::wpt3_with(x, &cfg.wpt)?);
    Ok(FeatureVector::from_parts(&t, &f, &w))
}

pub fn extract_record(r: &ImpactRecord, cfg: &FeatureConfig) -> Result<FeatureVector> {
    let fail = |e: Error| Error::Record {
        record: r.id.clone(),
        path: Default::default(),
        message: e.to_string(),
    };
    match cfg.channel_policy {
        ChannelPolicy::MaxPa => {
            let mut best = 0;
            let mut best_pa = -1.0;
            for (c, ch) in r.waveforms.iter().enumerate() {
                let pa = dsp::peak_abs(ch);
                if pa > best_pa {
                    best = c;
                    best_pa = pa;
                }
            }
            extract_channel(&r.waveforms[best], r.sample_rate, cfg).map_err(fail)
        }
        ChannelPolicy::ChannelMean => {
            let mut acc = [0.0; 18];
            for ch in &r.waveforms {
                let fv = extract_channel(ch, r.sample_rate, cfg).map_err(fail)?;
                for (a, v) in acc.iter_mut().zip(fv.values()) {
                    *a += v;
                }
            }
            let n = r.waveforms.len() as f64;
            Ok(FeatureVector {
                values: acc.map(|v| v / n),
            })
        }
    }
}

/// Per-feature `(min, max)` used by min-max scaling.
pub type NormParams = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<FeatureId>,
    pub row_ids: Vec<String>,
    /// `k × m`, rows follow `row_ids`, columns follow `ids`.
    pub values: Array2<f64>,
    pub normalized: bool,
    pub norm_params: Option<NormParams>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<FeatureId>, row_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != row_ids.len() || values.ncols() != ids.len() {
            return Err(Error::invalid(format!(
                "matrix shape {:?} does not match {} rows x {} features",
                values.dim(),
                row_ids.len(),
                ids.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite values"));
        }
        Ok(Self {
            ids,
            row_ids,
            values,
            normalized: false,
            norm_params: None,
        })
    }

    pub fn from_vectors(row_ids: Vec<String>, rows: &[FeatureVector]) -> Result<Self> {
        let k = rows.len();
        let mut values = Array2::zeros((k, 18));
        for (i, fv) in rows.iter().enumerate() {
            for (j, v) in fv.values().iter().enumerate() {
                values[[i, j]] = *v;
            }
        }
        Self::new(FeatureId::ALL.to_vec(), row_ids, values)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn col_index(&self, id: FeatureId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn column(&self, id: FeatureId) -> Option<Vec<f64>> {
        self.col_index(id).map(|j| self.values.column(j).to_vec())
    }

    /// Column subset in the order given.
    pub fn select(&self, ids: &[FeatureId]) -> Result<FeatureMatrix> {
        let cols = ids
            .iter()
            .map(|id| {
                self.col_index(*id)
                    .ok_or_else(|| Error::invalid(format!("feature {id} not in matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = self.values.select(Axis(1), &cols);
        Ok(FeatureMatrix {
            ids: ids.to_vec(),
            row_ids: self.row_ids.clone(),
            values,
            normalized: self.normalized,
            norm_params: self
                .norm_params
                .as_ref()
                .map(|p| cols.iter().map(|&j| p[j]).collect()),
        })
    }

    /// Row subset in the order given.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            ids: self.ids.clone(),
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            values: self.values.select(Axis(0), rows),
            normalized: self.normalized,
            norm_params: self.norm_params.clone(),
        }
    }

    /// Per-column `(min, max)` of the current values.
    pub fn column_ranges(&self) -> NormParams {
        self.values
            .columns()
            .into_iter()
            .map(|c| {
                c.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            })
            .collect()
    }

    /// Scales with externally supplied `(min, max)` per column; constant
    /// ranges map to 0. Values outside the range are not clipped.
    pub fn apply_norm(&self, params: &[(f64, f64)]) -> Result<FeatureMatrix> {
        if params.len() != self.n_features() {
            return Err(Error::invalid(format!(
                "{} norm params for {} features",
                params.len(),
                self.n_features()
            )));
        }
        let mut values = self.values.clone();
        for (mut col, &(lo, hi)) in values.columns_mut().into_iter().zip(params) {
            let span = hi - lo;
            col.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
        }
        Ok(FeatureMatrix {
            ids: self.ids.clone(),
            row_ids: self.row_ids.clone(),
            values,
            normalized: true,
            norm_params: Some(params.to_vec()),
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<&str> = std::iter::once("id").chain(self.ids.iter().map(|i| i.as_str())).collect();
        writeln!(out, "{}", header.join(","))?;
        for (row_id, row) in self.row_ids.iter().zip(self.values.rows()) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{}", row_id, cells.join(","))?;
        }
        Ok(())
    }

    /// Companion metadata: units, extraction policy and norm params.
    pub fn metadata_json(&self, cfg: &FeatureConfig) -> serde_json::Value {
        let features: Vec<_> = self
            .ids
            .iter()
            .enumerate()
            .map(|(j, id)| {
                let mut v = serde_json::json!({
                    "id": id.as_str(),
                    "domain": id.domain().name(),
                    "unit": id.unit(),
                });
                if let Some(p) = &self.norm_params {
                    v["norm_min"] = p[j].0.into();
                    v["norm_max"] = p[j].1.into();
                }
                v
            })
            .collect();
        serde_json::json!({
            "rows": self.n_rows(),
            "normalized": self.normalized,
            "window": "from onset to end of record",
            "onset_frac": cfg.onset_frac,
            "count_frac": cfg.count_frac.unwrap_or(cfg.onset_frac),
            "channel_policy": cfg.channel_policy.as_str(),
            "wavelet": cfg.wpt.wavelet,
            "wpt_node_order": cfg.wpt.order,
            "wpt_boundary": "periodic",
            "features": features,
        })
    }
}

pub fn minmax_normalize(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.n_rows() < 2 {
        return Err(Error::invalid("min-max scaling needs at least 2 rows"));
    }
    m.apply_norm(&m.column_ranges())
}

/// Features of every record, rows in record order.
pub fn extract_dataset(ds: &Dataset, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    let rows = ds
        .records
        .iter()
        .map(|r| extract_record(r, cfg))
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_vectors(ds.records.iter().map(|r| r.id.clone()).collect(), &rows)
}
