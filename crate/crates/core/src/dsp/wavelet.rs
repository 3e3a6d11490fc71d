//! Three-level wavelet packet transform with periodic extension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WPT_LEVEL: usize = 3;
const N_NODES: usize = 1 << WPT_LEVEL;

/// Orthogonal Daubechies family members available for the packet tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Haar,
    Db2,
    /// Four vanishing moments, 8 taps.
    #[default]
    Db4,
}

impl Wavelet {
    /// Decomposition low-pass filter.
    pub fn lowpass(&self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
            Wavelet::Db2 => &[
                -0.129_409_522_550_921_45,
                0.224_143_868_041_857_35,
                0.836_516_303_737_469,
                0.482_962_913_144_690_25,
            ],
            Wavelet::Db4 => &[
                -0.010_597_401_784_997_278,
                0.032_883_011_666_982_945,
                0.030_841_381_835_986_965,
                -0.187_034_811_718_881_14,
                -0.027_983_769_416_983_85,
                0.630_880_767_929_590_4,
                0.714_846_570_552_541_5,
                0.230_377_813_308_855_23,
            ],
        }
    }

    /// Quadrature-mirror high-pass: `hi[n] = (-1)^(n+1) lo[L-1-n]`.
    pub fn highpass(&self) -> Vec<f64> {
        let lo = self.lowpass();
        let l = lo.len();
        (0..l)
            .map(|n| if n % 2 == 0 { -lo[l - 1 - n] } else { lo[l - 1 - n] })
            .collect()
    }

    pub fn filter_len(&self) -> usize {
        self.lowpass().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeOrder {
    /// Sequency order: node 0 is the lowest band, node 7 the highest.
    #[default]
    Frequency,
    /// Filter-bank (Paley) order as produced by the recursion.
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WptConfig {
    pub wavelet: Wavelet,
    pub order: NodeOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WptNodes {
    pub level: usize,
    pub nodes: Vec<Vec<f64>>,
}

impl WptNodes {
    pub fn node_energy(&self, i: usize) -> f64 {
        self.nodes[i].iter().map(|c| c * c).sum()
    }

    pub fn total_energy(&self) -> f64 {
        (0..self.nodes.len()).map(|i| self.node_energy(i)).sum()
    }
}

/// Periodic analysis step: `out[k] = Σ_n h[n] x[(2k + n) mod N]`.
fn analyze(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2)
        .map(|k| {
            h.iter()
                .enumerate()
                .map(|(j, c)| c * x[(2 * k + j) % n])
                .sum()
        })
        .collect()
}

pub fn wpt3(x: &[f64]) -> Result<WptNodes> {
    wpt3_with(x, &WptConfig::default())
}

/// Level-3 packet decomposition. Inputs whose length is not a multiple of
/// 8 are zero-padded at the end, which leaves the signal energy unchanged.
pub fn wpt3_with(x: &[f64], cfg: &WptConfig) -> Result<WptNodes> {
    let min_len = N_NODES * cfg.wavelet.filter_len();
    if x.len() < min_len {
        return Err(Error::Signal(format!(
            "wavelet packet transform needs >= {min_len} samples, got {}",
            x.len()
        )));
    }
    let lo = cfg.wavelet.lowpass();
    let hi = cfg.wavelet.highpass();

    let mut padded = x.to_vec();
    padded.resize(x.len().div_ceil(N_NODES) * N_NODES, 0.0);

    let mut level = vec![padded];
    for _ in 0..WPT_LEVEL {
        level = level
            .iter()
            .flat_map(|node| [analyze(node, lo), analyze(node, &hi)])
            .collect();
    }

    let nodes = match cfg.order {
        NodeOrder::Natural => level,
        // The high-pass branch mirrors the spectrum, so the band at
        // frequency index g sits at natural index gray(g).
        NodeOrder::Frequency => (0..N_NODES)
            .map(|g| std::mem::take(&mut level[g ^ (g >> 1)]))
            .collect(),
    };
    Ok(WptNodes {
        level: WPT_LEVEL,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use std::f64::consts::PI;

    #[test]
    fn filters_are_orthonormal() {
        for w in [Wavelet::Haar, Wavelet::Db2, Wavelet::Db4] {
            let lo = w.lowpass();
            let hi = w.highpass();
            let l = lo.len();
            for shift in (0..l).step_by(2) {
                let ll: f64 = (0..l - shift).map(|n| lo[n] * lo[n + shift]).sum();
                let hh: f64 = (0..l - shift).map(|n| hi[n] * hi[n + shift]).sum();
                let expect = if shift == 0 { 1.0 } else { 0.0 };
                assert!((ll - expect).abs() < 1e-12, "{w:?} lo shift {shift}: {ll}");
                assert!((hh - expect).abs() < 1e-12, "{w:?} hi shift {shift}: {hh}");
            }
            let dot: f64 = lo.iter().zip(&hi).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_signal_all_nodes_zero() {
        let w = wpt3(&[0.0; 128]).unwrap();
        assert_eq!(w.nodes.len(), 8);
        assert!(w.nodes.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn too_short_rejected() {
        assert!(wpt3(&[1.0; 63]).is_err());
    }

    #[test]
    fn energy_conserved_random() {
        let mut rng = SeededRng::new(9);
        for len in [64usize, 1000, 1003] {
            let x: Vec<f64> = (0..len).map(|_| rng.gaussian()).collect();
            let e: f64 = x.iter().map(|v| v * v).sum();
            let w = wpt3(&x).unwrap();
            assert!((w.total_energy() / e - 1.0).abs() < 1e-6, "len {len}");
        }
    }

    #[test]
    fn low_tone_lands_in_node_zero() {
        let fs = 8000.0;
        let x: Vec<f64> = (0..2048)
            .map(|i| (2.0 * PI * 100.0 * i as f64 / fs).sin())
            .collect();
        let w = wpt3(&x).unwrap();
        assert!(w.node_energy(0) / w.total_energy() > 0.9);
    }

    #[test]
    fn frequency_order_is_monotone_in_band() {
        // A tone centred in band g should peak at frequency node g.
        let fs = 16000.0;
        let n = 4096;
        for g in 0..8 {
            let f = (g as f64 + 0.5) * fs / 16.0;
            let x: Vec<f64> = (0..n)
                .map(|i| (2.0 * PI * f * i as f64 / fs).sin())
                .collect();
            let w = wpt3(&x).unwrap();
            let best = (0..8)
                .max_by(|&a, &b| w.node_energy(a).total_cmp(&w.node_energy(b)))
                .unwrap();
            assert_eq!(best, g, "tone at {f} Hz");
        }
    }
}
