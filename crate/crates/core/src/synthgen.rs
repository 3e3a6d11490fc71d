//! Modal-superposition simulator of a simply supported rectangular plate
//! struck by a spring–mass impactor. Stands in for measured or finite
//! element waveforms; produces labelled [`ImpactRecord`]s.
//!
//! Contact is a linear spring of stiffness `k_c = k_ref · d / d_ref`, so a
//! mass `m` arriving at `v0 = sqrt(2E/m)` produces a half-sine force of
//! peak `v0 · sqrt(k_c m)` lasting `π sqrt(m / k_c)`. Each mode
//! `φ_pq = sin(pπx/a) sin(qπy/b)` responds through the damped SDOF
//! impulse response `e^(-ζωt) sin(ω_d t) / (M ω_d)` with `M = ρh·a·b/4`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, ImpactRecord, Provenance, State};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

/// Effective in-plane modulus of the quasi-isotropic laminate, Pa.
pub const LAMINATE_MODULUS_PA: f64 = 50.0e9;
pub const LAMINATE_POISSON: f64 = 0.3;
/// Laminate density, kg/m³.
pub const LAMINATE_DENSITY: f64 = 1550.0;
pub const PANEL_THICKNESS_MM: f64 = 3.55;
pub const PANEL_SIDE_MM: f64 = 1000.0;

/// Exponent of the energy draw `E = lo + (hi - lo) u^γ`; γ > 1 skews the
/// draw toward low energies (median < mean).
pub const ENERGY_SKEW_EXPONENT: f64 = 3.5;

pub const SENSOR_LAYOUT_MM: [(f64, f64); 6] = [
    (188.0, 786.0),
    (478.0, 780.0),
    (779.0, 781.0),
    (779.0, 481.0),
    (188.0, 172.0),
    (768.0, 174.0),
];

pub const IMPACT_LOCATIONS_MM: [(&str, (f64, f64)); 6] = [
    ("IC1", (477.0, 600.0)),
    ("IC2", (328.0, 629.0)),
    ("IC3", (402.0, 555.0)),
    ("IC4", (479.0, 480.0)),
    ("IC5", (349.0, 348.0)),
    ("IC6", (574.0, 282.0)),
];

pub const TRAINING_DIAMETERS_MM: [f64; 3] = [16.0, 25.0, 50.0];
pub const TRAINING_MASSES_KG: [f64; 3] = [0.776, 1.154, 2.356];

pub fn impact_location(id: &str) -> Option<(f64, f64)> {
    IMPACT_LOCATIONS_MM
        .iter()
        .find(|(name, _)| *name == id)
        .map(|(_, xy)| *xy)
}

/// Flexural rigidity `E h³ / (12 (1 - ν²))` in N·m for thickness in mm.
pub fn bending_stiffness(modulus_pa: f64, poisson: f64, thickness_mm: f64) -> f64 {
    let h = thickness_mm * 1e-3;
    modulus_pa * h.powi(3) / (12.0 * (1.0 - poisson * poisson))
}

/// Physical quantity the sensor channel is proportional to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorQuantity {
    /// Out-of-plane displacement `w`.
    Displacement,
    /// Surface strain sum `ε_x + ε_y = -(h/2) ∇²w`, what a bonded
    /// piezoelectric disc responds to.
    #[default]
    Strain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub a_mm: f64,
    pub b_mm: f64,
    pub thickness_mm: f64,
    /// Flexural rigidity D, N·m.
    pub bending_stiffness: f64,
    /// ρh, kg/m².
    pub areal_density: f64,
    pub damping: f64,
    pub n_modes_x: usize,
    pub n_modes_y: usize,
    pub sensors_mm: Vec<(f64, f64)>,
    /// Contact stiffness at the reference impactor diameter, N/m.
    pub contact_k_ref: f64,
    pub contact_d_ref_mm: f64,
    pub sensor_quantity: SensorQuantity,
    /// Volts per unit of the sensed quantity (m or strain).
    pub sensor_gain: f64,
    pub sample_rate: f64,
    pub duration: f64,
    /// Relative (log-normal) spread of the contact stiffness per impact.
    pub stiffness_jitter: f64,
    /// Standard deviation of the impact point scatter, mm.
    pub location_jitter_mm: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            a_mm: PANEL_SIDE_MM,
            b_mm: PANEL_SIDE_MM,
            thickness_mm: PANEL_THICKNESS_MM,
            bending_stiffness: bending_stiffness(
                LAMINATE_MODULUS_PA,
                LAMINATE_POISSON,
                PANEL_THICKNESS_MM,
            ),
            areal_density: LAMINATE_DENSITY * PANEL_THICKNESS_MM * 1e-3,
            damping: 0.02,
            n_modes_x: 5,
            n_modes_y: 5,
            sensors_mm: SENSOR_LAYOUT_MM.to_vec(),
            contact_k_ref: 1.0e6,
            contact_d_ref_mm: 16.0,
            sensor_quantity: SensorQuantity::Strain,
            sensor_gain: 1.0e3,
            sample_rate: 200_000.0,
            duration: 0.02,
            stiffness_jitter: 0.05,
            location_jitter_mm: 2.0,
        }
    }
}

impl PanelConfig {
    /// Same panel with per-impact scatter switched off.
    pub fn noise_free(mut self) -> Self {
        self.stiffness_jitter = 0.0;
        self.location_jitter_mm = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a", self.a_mm),
            ("b", self.b_mm),
            ("thickness", self.thickness_mm),
            ("bending stiffness", self.bending_stiffness),
            ("areal density", self.areal_density),
            ("contact k_ref", self.contact_k_ref),
            ("contact d_ref", self.contact_d_ref_mm),
            ("sensor gain", self.sensor_gain),
            ("sample rate", self.sample_rate),
            ("duration", self.duration),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("panel {name} must be > 0, got {v}")));
            }
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::invalid(format!("damping {} not in (0,1)", self.damping)));
        }
        if self.n_modes_x == 0 || self.n_modes_y == 0 {
            return Err(Error::invalid("panel needs at least one mode per direction"));
        }
        if self.sensors_mm.is_empty() {
            return Err(Error::invalid("panel needs at least one sensor"));
        }
        for &(x, y) in &self.sensors_mm {
            if !(x > 0.0 && x < self.a_mm && y > 0.0 && y < self.b_mm) {
                return Err(Error::invalid(format!("sensor ({x}, {y}) not inside the plate")));
            }
        }
        if self.stiffness_jitter < 0.0 || self.location_jitter_mm < 0.0 {
            return Err(Error::invalid("jitter must be >= 0"));
        }
        Ok(())
    }

    fn modal_mass(&self) -> f64 {
        self.areal_density * (self.a_mm * 1e-3) * (self.b_mm * 1e-3) / 4.0
    }

    /// Undamped natural frequency of mode (p, q), rad/s.
    pub fn natural_frequency(&self, p: usize, q: usize) -> f64 {
        let (a, b) = (self.a_mm * 1e-3, self.b_mm * 1e-3);
        let (p, q) = (p as f64, q as f64);
        PI * PI * (p * p / (a * a) + q * q / (b * b)) * (self.bending_stiffness / self.areal_density).sqrt()
    }

    pub fn mode_shape(&self, p: usize, q: usize, xy_mm: (f64, f64)) -> f64 {
        (p as f64 * PI * xy_mm.0 / self.a_mm).sin() * (q as f64 * PI * xy_mm.1 / self.b_mm).sin()
    }

    /// Volts per metre of modal coordinate for mode (p, q).
    fn output_gain(&self, p: usize, q: usize) -> f64 {
        match self.sensor_quantity {
            SensorQuantity::Displacement => self.sensor_gain,
            SensorQuantity::Strain => {
                let (a, b) = (self.a_mm * 1e-3, self.b_mm * 1e-3);
                let curvature = (p as f64 * PI / a).powi(2) + (q as f64 * PI / b).powi(2);
                self.sensor_gain * 0.5 * self.thickness_mm * 1e-3 * curvature
            }
        }
    }

    fn modes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.n_modes_x).flat_map(move |p| (1..=self.n_modes_y).map(move |q| (p, q)))
    }

    fn highest_mode_hz(&self) -> f64 {
        self.natural_frequency(self.n_modes_x, self.n_modes_y) / (2.0 * PI)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactScenario {
    pub energy: f64,
    pub mass: f64,
    pub diameter_mm: f64,
    pub location_id: String,
    pub location_mm: (f64, f64),
    pub duration: f64,
    pub sample_rate: f64,
}

impl ImpactScenario {
    /// Scenario at a named impact location using the panel's acquisition
    /// settings.
    pub fn at(panel: &PanelConfig, energy: f64, mass: f64, diameter_mm: f64, location_id: &str) -> Result<Self> {
        let location_mm = impact_location(location_id)
            .ok_or_else(|| Error::invalid(format!("unknown impact location `{location_id}`")))?;
        Ok(Self {
            energy,
            mass,
            diameter_mm,
            location_id: location_id.to_string(),
            location_mm,
            duration: panel.duration,
            sample_rate: panel.sample_rate,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy >= 0.0 && self.energy.is_finite()) {
            return Err(Error::invalid(format!("energy must be >= 0, got {}", self.energy)));
        }
        for (name, v) in [
            ("mass", self.mass),
            ("diameter", self.diameter_mm),
            ("duration", self.duration),
            ("sample rate", self.sample_rate),
            ("location x", self.location_mm.0),
            ("location y", self.location_mm.1),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("scenario {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        ((self.duration * self.sample_rate).round() as usize).max(2)
    }
}

/// Half-sine contact pulse `f(t) = f_max sin(π t / t_c)` on `[0, t_c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactForce {
    pub f_max: f64,
    pub t_c: f64,
}

impl ContactForce {
    pub fn at(&self, t: f64) -> f64 {
        if (0.0..=self.t_c).contains(&t) {
            self.f_max * (PI * t / self.t_c).sin()
        } else {
            0.0
        }
    }

    pub fn sampled(&self, sample_rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.at(i as f64 / sample_rate)).collect()
    }
}

pub fn contact_force(scenario: &ImpactScenario, panel: &PanelConfig) -> Result<ContactForce> {
    scenario.validate()?;
    Ok(contact_with_stiffness(scenario, contact_stiffness(scenario, panel)))
}

fn contact_stiffness(scenario: &ImpactScenario, panel: &PanelConfig) -> f64 {
    panel.contact_k_ref * scenario.diameter_mm / panel.contact_d_ref_mm
}

fn contact_with_stiffness(scenario: &ImpactScenario, k_c: f64) -> ContactForce {
    let m = scenario.mass;
    let v0 = (2.0 * scenario.energy / m).sqrt();
    ContactForce {
        f_max: v0 * (k_c * m).sqrt(),
        t_c: PI * (m / k_c).sqrt(),
    }
}

/// Sampled unit-impulse response of mode (p, q), pre-multiplied by `dt` so
/// that discrete convolution with the force samples approximates the
/// Duhamel integral.
fn impulse_response(panel: &PanelConfig, p: usize, q: usize, sample_rate: f64, n: usize) -> Vec<f64> {
    let omega = panel.natural_frequency(p, q);
    let zeta = panel.damping;
    let omega_d = omega * (1.0 - zeta * zeta).sqrt();
    let scale = 1.0 / (panel.modal_mass() * omega_d * sample_rate);
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            scale * (-zeta * omega * t).exp() * (omega_d * t).sin()
        })
        .collect()
}

/// FFT-backed linear convolution helper: holds the forward transform of
/// one operand zero-padded to `size`.
struct Convolver {
    size: usize,
    planner: FftPlanner<f64>,
}

impl Convolver {
    fn new(n: usize) -> Self {
        Self {
            size: (2 * n).next_power_of_two(),
            planner: FftPlanner::new(),
        }
    }

    fn spectrum(&mut self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.size];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.planner.plan_fft_forward(self.size).process(&mut buf);
        buf
    }

    /// First `n` samples of the inverse transform.
    fn inverse(&mut self, mut buf: Vec<Complex<f64>>, n: usize) -> Vec<f64> {
        self.planner.plan_fft_inverse(self.size).process(&mut buf);
        let scale = 1.0 / self.size as f64;
        buf[..n].iter().map(|c| c.re * scale).collect()
    }
}

/// Modal coordinate `q_pq(t)` (metres) for a unit mode-shape participation,
/// i.e. the response of mode (p, q) to the contact force alone.
pub fn modal_response(scenario: &ImpactScenario, panel: &PanelConfig, p: usize, q: usize) -> Result<Vec<f64>> {
    panel.validate()?;
    let force = contact_force(scenario, panel)?;
    let n = scenario.n_samples();
    let f = force.sampled(scenario.sample_rate, n);
    let h = impulse_response(panel, p, q, scenario.sample_rate, n);
    let mut conv = Convolver::new(n);
    let fs = conv.spectrum(&f);
    let hs = conv.spectrum(&h);
    let prod = fs.iter().zip(&hs).map(|(a, b)| a * b).collect();
    Ok(conv.inverse(prod, n))
}

/// Simulates all sensor channels for one impact.
///
/// `seed` drives the per-impact scatter (contact stiffness and impact
/// point); with both jitters at zero the output is seed-independent.
pub fn generate_impact(scenario: &ImpactScenario, panel: &PanelConfig, seed: u64) -> Result<ImpactRecord> {
    scenario.validate()?;
    panel.validate()?;
    let nyquist_guard = 4.0 * panel.highest_mode_hz();
    if scenario.sample_rate < nyquist_guard {
        return Err(Error::invalid(format!(
            "sample rate {} Hz below 4x highest modal frequency ({nyquist_guard:.1} Hz)",
            scenario.sample_rate
        )));
    }

    let mut rng = SeededRng::new(seed);
    let mut k_c = contact_stiffness(scenario, panel);
    let mut loc = scenario.location_mm;
    if panel.stiffness_jitter > 0.0 {
        k_c *= (panel.stiffness_jitter * rng.gaussian()).exp();
    }
    if panel.location_jitter_mm > 0.0 {
        let eps = 1e-6;
        loc.0 = (loc.0 + panel.location_jitter_mm * rng.gaussian()).clamp(eps, panel.a_mm - eps);
        loc.1 = (loc.1 + panel.location_jitter_mm * rng.gaussian()).clamp(eps, panel.b_mm - eps);
    }
    let force = contact_with_stiffness(scenario, k_c);
    let waveforms = synthesize(panel, &force, loc, scenario.sample_rate, scenario.n_samples());

    Ok(ImpactRecord {
        id: format!("sim-{seed}"),
        waveforms,
        sample_rate: scenario.sample_rate,
        energy: scenario.energy,
        impactor_mass: scenario.mass,
        impactor_diameter: scenario.diameter_mm,
        location_id: scenario.location_id.clone(),
        location_xy: scenario.location_mm,
        state: State::Pristine,
        provenance: Provenance::Synthetic,
        source_id: None,
        noise_seed: None,
    })
}

/// Channel `s` = Σ_pq φ_pq(impact) φ_pq(sensor_s) G_pq (h_pq * f), where
/// `G_pq` converts the modal coordinate to volts.
fn synthesize(panel: &PanelConfig, force: &ContactForce, impact_mm: (f64, f64), sample_rate: f64, n: usize) -> Vec<Vec<f64>> {
    if force.f_max == 0.0 {
        return vec![vec![0.0; n]; panel.sensors_mm.len()];
    }
    let mut conv = Convolver::new(n);
    let f_spec = conv.spectrum(&force.sampled(sample_rate, n));
    let mut transfer = vec![vec![Complex::new(0.0, 0.0); conv.size]; panel.sensors_mm.len()];
    for (p, q) in panel.modes() {
        let h_spec = conv.spectrum(&impulse_response(panel, p, q, sample_rate, n));
        let drive = panel.mode_shape(p, q, impact_mm) * panel.output_gain(p, q);
        for (acc, &sensor) in transfer.iter_mut().zip(&panel.sensors_mm) {
            let w = drive * panel.mode_shape(p, q, sensor);
            for (a, h) in acc.iter_mut().zip(&h_spec) {
                *a += h * w;
            }
        }
    }
    transfer
        .into_iter()
        .map(|t| {
            let prod = t.iter().zip(&f_spec).map(|(a, b)| a * b).collect();
            conv.inverse(prod, n)
        })
        .collect()
}

/// One row of the confirmation test matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfirmationRun {
    pub id: usize,
    pub energy: f64,
    pub diameter_mm: f64,
    pub mass: f64,
    pub location_id: &'static str,
}

/// The eight-run two-level orthogonal array used for sensitivity screening.
pub const CONFIRMATION_RUNS: [ConfirmationRun; 8] = [
    ConfirmationRun { id: 1, energy: 2.0, diameter_mm: 16.0, mass: 0.5, location_id: "IC4" },
    ConfirmationRun { id: 2, energy: 20.0, diameter_mm: 50.0, mass: 0.5, location_id: "IC4" },
    ConfirmationRun { id: 3, energy: 2.0, diameter_mm: 50.0, mass: 2.0, location_id: "IC4" },
    ConfirmationRun { id: 4, energy: 20.0, diameter_mm: 16.0, mass: 2.0, location_id: "IC4" },
    ConfirmationRun { id: 5, energy: 2.0, diameter_mm: 50.0, mass: 0.5, location_id: "IC2" },
    ConfirmationRun { id: 6, energy: 20.0, diameter_mm: 16.0, mass: 0.5, location_id: "IC2" },
    ConfirmationRun { id: 7, energy: 2.0, diameter_mm: 16.0, mass: 2.0, location_id: "IC2" },
    ConfirmationRun { id: 8, energy: 20.0, diameter_mm: 50.0, mass: 2.0, location_id: "IC2" },
];

pub fn generate_confirmation_dataset(panel: &PanelConfig, seed: u64) -> Result<Dataset> {
    let records = CONFIRMATION_RUNS
        .iter()
        .map(|run| {
            let sc = ImpactScenario::at(panel, run.energy, run.mass, run.diameter_mm, run.location_id)?;
            let mut rec = generate_impact(&sc, panel, derive_seed(seed, run.id as u64))?;
            rec.id = format!("ID{}", run.id);
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

/// `n` impacts with right-skewed energies over `energy_range`, impactor
/// and location drawn uniformly from the training sets.
pub fn generate_training_dataset(panel: &PanelConfig, n: usize, energy_range: (f64, f64), seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::invalid(format!("training dataset needs n >= 10, got {n}")));
    }
    let (lo, hi) = energy_range;
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::invalid(format!("bad energy range ({lo}, {hi})")));
    }
    let mut rng = SeededRng::new(seed);
    let width = (n.to_string()).len().max(3);
    let records = (0..n)
        .map(|i| {
            let energy = lo + (hi - lo) * rng.uniform().powf(ENERGY_SKEW_EXPONENT);
            let (loc_id, _) = IMPACT_LOCATIONS_MM[rng.index(IMPACT_LOCATIONS_MM.len())];
            let mass = TRAINING_MASSES_KG[rng.index(TRAINING_MASSES_KG.len())];
            let diameter = TRAINING_DIAMETERS_MM[rng.index(TRAINING_DIAMETERS_MM.len())];
            let sc = ImpactScenario::at(panel, energy, mass, diameter, loc_id)?;
            let mut rec = generate_impact(&sc, panel, derive_seed(seed ^ 0x5EED, i as u64))?;
            rec.id = format!("T{:0width$}", i + 1);
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(panel: &PanelConfig, e: f64, m: f64, d: f64) -> ImpactScenario {
        ImpactScenario::at(panel, e, m, d, "IC2").unwrap()
    }

    #[test]
    fn default_panel_is_valid() {
        let p = PanelConfig::default();
        p.validate().unwrap();
        // 3.55 mm laminate: D ≈ 205 N·m, ρh ≈ 5.5 kg/m².
        assert!((p.bending_stiffness - 204.9).abs() < 0.5, "{}", p.bending_stiffness);
        assert!((p.areal_density - 5.5025).abs() < 1e-9);
    }

    #[test]
    fn contact_scaling() {
        let p = PanelConfig::default();
        let zero = contact_force(&scenario(&p, 0.0, 1.0, 16.0), &p).unwrap();
        assert_eq!(zero.f_max, 0.0);

        let base = contact_force(&scenario(&p, 2.0, 1.0, 16.0), &p).unwrap();
        let e4 = contact_force(&scenario(&p, 8.0, 1.0, 16.0), &p).unwrap();
        assert!((e4.f_max / base.f_max - 2.0).abs() < 1e-12);
        assert_eq!(e4.t_c, base.t_c);

        let m4 = contact_force(&scenario(&p, 2.0, 4.0, 16.0), &p).unwrap();
        assert!((m4.t_c / base.t_c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_energy_is_silent() {
        let p = PanelConfig::default();
        let r = generate_impact(&scenario(&p, 0.0, 1.0, 16.0), &p, 1).unwrap();
        assert_eq!(r.n_channels(), 6);
        assert!(r.waveforms.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn aliasing_guard() {
        let p = PanelConfig::default();
        let mut sc = scenario(&p, 2.0, 1.0, 16.0);
        sc.sample_rate = 1000.0;
        assert!(generate_impact(&sc, &p, 0).is_err());
    }

    #[test]
    fn seed_changes_output_only_with_jitter() {
        let p = PanelConfig::default();
        let sc = scenario(&p, 5.0, 1.0, 25.0);
        let a = generate_impact(&sc, &p, 1).unwrap();
        let b = generate_impact(&sc, &p, 2).unwrap();
        assert_ne!(a.waveforms, b.waveforms);
        let q = p.clone().noise_free();
        let a = generate_impact(&sc, &q, 1).unwrap();
        let b = generate_impact(&sc, &q, 2).unwrap();
        assert_eq!(a.waveforms, b.waveforms);
    }

    #[test]
    fn centre_impact_excites_only_odd_modes() {
        let full = PanelConfig::default().noise_free();
        let mut sc = scenario(&full, 5.0, 1.0, 16.0);
        sc.location_mm = (500.0, 500.0);
        let rec = generate_impact(&sc, &full, 0).unwrap();

        // Sum the odd-odd modes by hand.
        let n = sc.n_samples();
        let mut odd = vec![vec![0.0; n]; full.sensors_mm.len()];
        for p in (1..=5).step_by(2) {
            for q in (1..=5).step_by(2) {
                let qpq = modal_response(&sc, &full, p, q).unwrap();
                let drive = full.mode_shape(p, q, sc.location_mm) * full.output_gain(p, q);
                for (ch, &s) in odd.iter_mut().zip(&full.sensors_mm) {
                    let w = drive * full.mode_shape(p, q, s);
                    for (o, v) in ch.iter_mut().zip(&qpq) {
                        *o += w * v;
                    }
                }
            }
        }
        for (got, want) in rec.waveforms.iter().zip(&odd) {
            let peak = crate::dsp::peak_abs(want);
            let err = got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-9 * peak, "err {err} peak {peak}");
        }
    }

    /// Undamped SDOF `M q'' + M ω² q = F0 sin(Ωt)` on `[0, t_c]`, free
    /// vibration afterwards; evaluated in closed form.
    fn half_sine_oscillator(f0: f64, t_c: f64, mass: f64, omega: f64, t: f64) -> f64 {
        let big = PI / t_c;
        let amp = f0 / (mass * (omega * omega - big * big));
        let forced = |t: f64| amp * ((big * t).sin() - big / omega * (omega * t).sin());
        if t <= t_c {
            forced(t)
        } else {
            let q0 = forced(t_c);
            let v0 = amp * (big * (big * t_c).cos() - big * (omega * t_c).cos());
            let tau = t - t_c;
            q0 * (omega * tau).cos() + v0 / omega * (omega * tau).sin()
        }
    }

    #[test]
    fn single_mode_matches_closed_form_peak() {
        let mut p = PanelConfig::default().noise_free();
        p.n_modes_x = 1;
        p.n_modes_y = 1;
        p.damping = 1e-9;
        p.duration = 0.06;
        let mut sc = scenario(&p, 10.0, 1.0, 16.0);
        sc.duration = 0.06;
        let q = modal_response(&sc, &p, 1, 1).unwrap();
        let sim_peak = crate::dsp::peak_abs(&q);

        let force = contact_force(&sc, &p).unwrap();
        let omega = p.natural_frequency(1, 1);
        let fine = 200_000;
        let exact_peak = (0..fine)
            .map(|i| {
                let t = sc.duration * i as f64 / fine as f64;
                half_sine_oscillator(force.f_max, force.t_c, p.modal_mass(), omega, t).abs()
            })
            .fold(0.0, f64::max);
        assert!((sim_peak / exact_peak - 1.0).abs() < 0.005, "{sim_peak} vs {exact_peak}");
    }

    #[test]
    fn linear_in_force() {
        let p = PanelConfig::default().noise_free();
        let sc = scenario(&p, 3.0, 1.0, 16.0);
        let force = contact_force(&sc, &p).unwrap();
        let scaled = ContactForce { f_max: 3.7 * force.f_max, ..force };
        let n = sc.n_samples();
        let a = synthesize(&p, &force, sc.location_mm, sc.sample_rate, n);
        let b = synthesize(&p, &scaled, sc.location_mm, sc.sample_rate, n);
        for (ca, cb) in a.iter().zip(&b) {
            let peak = crate::dsp::peak_abs(cb);
            for (x, y) in ca.iter().zip(cb) {
                assert!((3.7 * x - y).abs() <= 1e-9 * peak);
            }
        }
    }

    #[test]
    fn reciprocity() {
        let mut p = PanelConfig::default().noise_free();
        let sensor = p.sensors_mm[0];
        let impact = (328.0, 629.0);
        let sc = scenario(&p, 3.0, 1.0, 16.0);
        let force = contact_force(&sc, &p).unwrap();
        let n = sc.n_samples();
        p.sensors_mm = vec![sensor];
        let forward = synthesize(&p, &force, impact, sc.sample_rate, n);
        p.sensors_mm = vec![impact];
        let swapped = synthesize(&p, &force, sensor, sc.sample_rate, n);
        let peak = crate::dsp::peak_abs(&forward[0]);
        for (x, y) in forward[0].iter().zip(&swapped[0]) {
            assert!((x - y).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn peak_amplitude_increases_with_energy() {
        let p = PanelConfig::default().noise_free();
        let mut last = vec![0.0; p.sensors_mm.len()];
        for e in [1.0, 2.0, 5.0, 10.0, 20.0] {
            let r = generate_impact(&scenario(&p, e, 1.154, 25.0), &p, 0).unwrap();
            for (ch, prev) in r.waveforms.iter().zip(last.iter_mut()) {
                let pa = crate::dsp::peak_abs(ch);
                assert!(pa > *prev);
                *prev = pa;
            }
            assert!(r.waveforms.iter().all(|c| c.len() == 4000));
        }
    }

    #[test]
    fn confirmation_dataset_matches_matrix() {
        let p = PanelConfig::default();
        let ds = generate_confirmation_dataset(&p, 1).unwrap();
        assert_eq!(ds.len(), 8);
        let r1 = &ds.records[0];
        assert_eq!((r1.energy, r1.impactor_diameter, r1.impactor_mass, r1.location_id.as_str()), (2.0, 16.0, 0.5, "IC4"));
        let r8 = &ds.records[7];
        assert_eq!((r8.energy, r8.impactor_diameter, r8.impactor_mass, r8.location_id.as_str()), (20.0, 50.0, 2.0, "IC2"));
        assert_eq!(r8.location_xy, (328.0, 629.0));
        assert_eq!(ds.records[3].location_xy, (479.0, 480.0));
        for (i, a) in ds.records.iter().enumerate() {
            assert!(a.waveforms.iter().flatten().any(|&v| v != 0.0));
            for b in &ds.records[i + 1..] {
                assert_ne!(a.waveforms, b.waveforms);
            }
        }
    }

    #[test]
    fn training_dataset_ranges_and_determinism() {
        let p = PanelConfig::default();
        let a = generate_training_dataset(&p, 66, (3.81, 85.37), 4).unwrap();
        assert_eq!(a.len(), 66);
        for r in &a.records {
            assert!(r.energy >= 3.81 && r.energy <= 85.37);
            assert!(TRAINING_MASSES_KG.contains(&r.impactor_mass));
            assert!(TRAINING_DIAMETERS_MM.contains(&r.impactor_diameter));
        }
        let b = generate_training_dataset(&p, 66, (3.81, 85.37), 4).unwrap();
        assert_eq!(a, b);
        assert!(generate_training_dataset(&p, 9, (3.81, 85.37), 4).is_err());
    }
}
