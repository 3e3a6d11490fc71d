//! Redundancy clustering, PCA importance, noise robustness and the final
//! choice of one indicator per correlated cluster.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Domain, FeatureId, FeatureMatrix};
use crate::linalg;

pub fn pearson(s: &[f64], q: &[f64]) -> Result<f64> {
    if s.len() != q.len() || s.len() < 2 {
        return Err(Error::invalid(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            s.len(),
            q.len()
        )));
    }
    let n = s.len() as f64;
    let ms = s.iter().sum::<f64>() / n;
    let mq = q.iter().sum::<f64>() / n;
    let mut sq = 0.0;
    let mut ss = 0.0;
    let mut qq = 0.0;
    for (a, b) in s.iter().zip(q) {
        sq += (a - ms) * (b - mq);
        ss += (a - ms) * (a - ms);
        qq += (b - mq) * (b - mq);
    }
    if ss == 0.0 || qq == 0.0 {
        return Err(Error::invalid("pearson undefined for a constant sequence"));
    }
    Ok((sq / (ss.sqrt() * qq.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub label: String,
    pub members: Vec<FeatureId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    /// Non-constant features, in input order; indexes `matrix`.
    pub ids: Vec<FeatureId>,
    pub matrix: Array2<f64>,
    pub clusters: Vec<Cluster>,
    pub threshold: f64,
    /// Constant columns left out of the analysis.
    pub dropped: Vec<FeatureId>,
}

impl CorrelationResult {
    pub fn cluster_of(&self, id: FeatureId) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.members.contains(&id))
    }

    pub fn coefficient(&self, a: FeatureId, b: FeatureId) -> Option<f64> {
        let i = self.ids.iter().position(|&x| x == a)?;
        let j = self.ids.iter().position(|&x| x == b)?;
        Some(self.matrix[[i, j]])
    }

    /// First member of every cluster, in cluster order.
    pub fn representatives(&self) -> Vec<FeatureId> {
        self.clusters.iter().map(|c| c.members[0]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let names: Vec<&str> = self.ids.iter().map(|i| i.as_str()).collect();
        writeln!(out, "id,{}", names.join(","))?;
        for (id, row) in self.ids.iter().zip(self.matrix.rows()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{},{}", id, cells.join(","))?;
        }
        Ok(())
    }
}

fn non_constant(m: &FeatureMatrix) -> (Vec<usize>, Vec<FeatureId>) {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in m.values.columns().into_iter().enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            log::warn!("feature {} is constant and is left out of selection", m.ids[j]);
            dropped.push(m.ids[j]);
        } else {
            keep.push(j);
        }
    }
    (keep, dropped)
}

pub fn correlation_clusters(m: &FeatureMatrix, threshold: f64) -> Result<CorrelationResult> {
    correlation_clusters_with(m, threshold, true)
}

/// Single-linkage grouping on `|p| >= threshold`. With `by_domain` only
/// features of the same domain can join; labels then carry the domain
/// code (T1, F1, W1), otherwise `G1, G2, ...`.
pub fn correlation_clusters_with(m: &FeatureMatrix, threshold: f64, by_domain: bool) -> Result<CorrelationResult> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("correlation threshold {threshold} outside [0, 1]")));
    }
    let (keep, dropped) = non_constant(m);
    let ids: Vec<FeatureId> = keep.iter().map(|&j| m.ids[j]).collect();
    let cols: Vec<Vec<f64>> = keep.iter().map(|&j| m.values.column(j).to_vec()).collect();
    let p = ids.len();

    let mut matrix = Array2::eye(p);
    for i in 0..p {
        for j in (i + 1)..p {
            let c = pearson(&cols[i], &cols[j])?;
            matrix[[i, j]] = c;
            matrix[[j, i]] = c;
        }
    }

    // Union-find over linked pairs.
    let mut parent: Vec<usize> = (0..p).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let same_domain = ids[i].domain() == ids[j].domain();
            if matrix[[i, j]].abs() >= threshold && (same_domain || !by_domain) {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut label_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut per_domain: BTreeMap<Domain, usize> = BTreeMap::new();
    for i in 0..p {
        let r = root(&mut parent, i);
        match label_of_root.get(&r) {
            Some(&c) => clusters[c].members.push(ids[i]),
            None => {
                let label = if by_domain {
                    let n = per_domain.entry(ids[i].domain()).or_insert(0);
                    *n += 1;
                    format!("{}{}", ids[i].domain().code(), n)
                } else {
                    format!("G{}", clusters.len() + 1)
                };
                label_of_root.insert(r, clusters.len());
                clusters.push(Cluster { label, members: vec![ids[i]] });
            }
        }
    }

    Ok(CorrelationResult { ids, matrix, clusters, threshold, dropped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub ids: Vec<FeatureId>,
    pub mean: Array1<f64>,
    /// `m × m`, columns are components.
    pub loadings: Array2<f64>,
    /// `k × m` projections of the centred data.
    pub scores: Array2<f64>,
    pub eigenvalues: Array1<f64>,
    pub explained_variance_ratio: Array1<f64>,
    pub n_retained: usize,
    pub retain_fraction: f64,
}

pub fn pca(m: &FeatureMatrix) -> Result<PcaResult> {
    pca_with(m, 0.95)
}

/// Principal components of the column-centred data from the covariance
/// matrix. Each loading column is signed so its largest-magnitude entry
/// is positive.
pub fn pca_with(m: &FeatureMatrix, retain_fraction: f64) -> Result<PcaResult> {
    let k = m.n_rows();
    let p = m.n_features();
    if k < 2 || p == 0 {
        return Err(Error::invalid(format!("PCA needs >= 2 rows and >= 1 feature, got {k} x {p}")));
    }
    let mean = m.values.mean_axis(Axis(0)).expect("non-empty");
    let centred = &m.values - &mean;
    let cov = centred.t().dot(&centred) / (k as f64 - 1.0);
    let (eig, mut vecs) = linalg::symmetric_eigen(cov.view())?;
    let eig = eig.mapv(|v| v.max(0.0));

    for mut col in vecs.columns_mut() {
        let big = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if big < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }

    let total: f64 = eig.sum();
    if total <= 0.0 {
        return Err(Error::invalid("PCA undefined: all features constant"));
    }
    let evr = eig.mapv(|v| v / total);
    let mut acc = 0.0;
    let mut n_retained = p;
    for (i, r) in evr.iter().enumerate() {
        acc += r;
        if acc >= retain_fraction - 1e-12 {
            n_retained = i + 1;
            break;
        }
    }
    let scores = centred.dot(&vecs);
    Ok(PcaResult {
        ids: m.ids.clone(),
        mean,
        loadings: vecs,
        scores,
        eigenvalues: eig,
        explained_variance_ratio: evr,
        n_retained,
        retain_fraction,
    })
}

/// `w[m] = Σ_{i < n_retained} evr[i] · |P[m, i]|`.
pub fn importance_scores(p: &PcaResult) -> Vec<f64> {
    (0..p.ids.len())
        .map(|m| {
            (0..p.n_retained)
                .map(|i| p.explained_variance_ratio[i] * p.loadings[[m, i]].abs())
                .sum()
        })
        .collect()
}

/// `r = max(0, 1 − RMSE(clean, noisy))` per feature. Both matrices must
/// already share the clean scaling.
pub fn robustness_scores(clean: &FeatureMatrix, noisy: &FeatureMatrix) -> Result<Vec<f64>> {
    if clean.values.dim() != noisy.values.dim() || clean.ids != noisy.ids {
        return Err(Error::invalid(format!(
            "clean {:?} and noisy {:?} feature matrices differ in shape or features",
            clean.values.dim(),
            noisy.values.dim()
        )));
    }
    let k = clean.n_rows() as f64;
    Ok(clean
        .values
        .columns()
        .into_iter()
        .zip(noisy.values.columns())
        .map(|(c, n)| {
            let mse = c.iter().zip(n.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k;
            (1.0 - mse.sqrt()).max(0.0)
        })
        .collect())
}

pub fn selection_scores(w: &[f64], r: &[f64]) -> Vec<f64> {
    w.iter().zip(r).map(|(a, b)| a * b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub correlation: f64,
    pub variance: f64,
    pub r_min: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self {
            correlation: 0.9,
            variance: 0.95,
            r_min: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub id: FeatureId,
    pub cluster: String,
    pub w: f64,
    pub r: f64,
    pub s: f64,
    pub rank: usize,
    pub independent: bool,
    pub relevant: bool,
    pub stable: bool,
    pub selected: bool,
}

impl FeatureScore {
    /// Table legend: `*` correlated, `**` independent; `••` most relevant,
    /// `•` relevant, `◇` not stable.
    pub fn evaluation(&self) -> String {
        let independence = if self.independent { "**" } else { "*" };
        let relevance = if !self.stable {
            "◇"
        } else if self.rank == 1 {
            "••"
        } else {
            "•"
        };
        format!("{independence} / {relevance}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Grouped by cluster, rank order within a cluster.
    pub scores: Vec<FeatureScore>,
    pub selected: Vec<FeatureId>,
    pub r_min: f64,
    pub dropped: Vec<FeatureId>,
}

impl SelectionReport {
    pub fn get(&self, id: FeatureId) -> Option<&FeatureScore> {
        self.scores.iter().find(|s| s.id == id)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "domain,group,id,w,r,s,rank,evaluation,independent,relevant,stable,selected")?;
        for f in &self.scores {
            writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.4},{},{},{},{},{},{}",
                f.id.domain().name(),
                f.cluster,
                f.id,
                f.w,
                f.r,
                f.s,
                f.rank,
                f.evaluation(),
                f.independent,
                f.relevant,
                f.stable,
                f.selected
            )?;
        }
        Ok(())
    }
}

/// Ranks each cluster by `s` (ties by id name) and keeps its rank-1
/// feature when `r >= r_min`. `w` and `r` align with `cr.ids`.
pub fn select_indicators(cr: &CorrelationResult, w: &[f64], r: &[f64], r_min: f64) -> Result<SelectionReport> {
    if w.len() != cr.ids.len() || r.len() != cr.ids.len() {
        return Err(Error::invalid(format!(
            "{} importance and {} robustness scores for {} features",
            w.len(),
            r.len(),
            cr.ids.len()
        )));
    }
    if cr.ids.is_empty() {
        return Err(Error::NoIndicators);
    }
    let s = selection_scores(w, r);
    let pos = |id: FeatureId| cr.ids.iter().position(|&x| x == id).expect("clustered id");

    let mut scores = Vec::with_capacity(cr.ids.len());
    let mut selected = Vec::new();
    for c in &cr.clusters {
        let mut members = c.members.clone();
        members.sort_by(|&a, &b| s[pos(b)].total_cmp(&s[pos(a)]).then_with(|| a.as_str().cmp(b.as_str())));
        for (rank0, id) in members.iter().enumerate() {
            let i = pos(*id);
            let stable = r[i] >= r_min;
            let relevant = rank0 == 0;
            let pick = relevant && stable;
            if pick {
                selected.push(*id);
            }
            scores.push(FeatureScore {
                id: *id,
                cluster: c.label.clone(),
                w: w[i],
                r: r[i],
                s: s[i],
                rank: rank0 + 1,
                independent: c.members.len() == 1,
                relevant,
                stable,
                selected: pick,
            });
        }
    }
    if selected.is_empty() {
        return Err(Error::NoIndicators);
    }
    Ok(SelectionReport {
        scores,
        selected,
        r_min,
        dropped: cr.dropped.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub correlation: CorrelationResult,
    pub pca: PcaResult,
    pub report: SelectionReport,
}

/// Full ranking pass on normalized clean and noisy matrices.
pub fn run_selection(clean: &FeatureMatrix, noisy: &FeatureMatrix, th: &SelectionThresholds) -> Result<SelectionOutcome> {
    let correlation = correlation_clusters(clean, th.correlation)?;
    let clean_kept = clean.select(&correlation.ids)?;
    let noisy_kept = noisy.select(&correlation.ids)?;
    let pca = pca_with(&clean_kept, th.variance)?;
    let w = importance_scores(&pca);
    let r = robustness_scores(&clean_kept, &noisy_kept)?;
    let report = select_indicators(&correlation, &w, &r, th.r_min)?;
    Ok(SelectionOutcome { correlation, pca, report })
}

/// Quantile by linear interpolation between closest ranks (`h = (n−1)p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaRow {
    pub feature: FeatureId,
    pub energy: f64,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    /// Most extreme observations inside the fences.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Range-plot statistics per feature and distinct energy, energies
/// ascending.
pub fn emit_eda(m: &FeatureMatrix, energies: &[f64]) -> Result<Vec<EdaRow>> {
    if energies.len() != m.n_rows() {
        return Err(Error::invalid(format!("{} energies for {} rows", energies.len(), m.n_rows())));
    }
    let mut levels: Vec<f64> = energies.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    let mut rows = Vec::new();
    for (j, &feature) in m.ids.iter().enumerate() {
        let col = m.values.column(j);
        for &e in &levels {
            let mut v: Vec<f64> = energies
                .iter()
                .zip(col.iter())
                .filter(|(x, _)| **x == e)
                .map(|(_, v)| *v)
                .collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            let q1 = quantile(&v, 0.25);
            let q3 = quantile(&v, 0.75);
            let iqr = q3 - q1;
            let lower_fence = q1 - 1.5 * iqr;
            let upper_fence = q3 + 1.5 * iqr;
            let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lower_fence && *x <= upper_fence).collect();
            rows.push(EdaRow {
                feature,
                energy: e,
                n: v.len(),
                median: quantile(&v, 0.5),
                q1,
                q3,
                lower_fence,
                upper_fence,
                lower_whisker: inside.first().copied().unwrap_or(q1),
                upper_whisker: inside.last().copied().unwrap_or(q3),
                outliers: v.iter().copied().filter(|x| *x < lower_fence || *x > upper_fence).collect(),
            });
        }
    }
    Ok(rows)
}

pub fn write_eda_csv<W: Write>(rows: &[EdaRow], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "feature,energy,n,median,q1,q3,lower_fence,upper_fence,lower_whisker,upper_whisker,outliers"
    )?;
    for r in rows {
        let outliers: Vec<String> = r.outliers.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.feature,
            r.energy,
            r.n,
            r.median,
            r.q1,
            r.q3,
            r.lower_fence,
            r.upper_fence,
            r.lower_whisker,
            r.upper_whisker,
            outliers.join(";")
        )?;
    }
    Ok(())
}
