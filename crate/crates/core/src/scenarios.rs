//! Channel ensembles: an indoor line-of-sight VLC room with a randomly
//! placed and oriented user device, and i.i.d. lognormal gains.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{epsilon_rank_from_singular_values, reduce, ChannelMatrix, IntensityProfile, DEFAULT_RANK_TOL};
use crate::low_snr;
use crate::maxent::{gamma_b, gamma_e, QuadratureConfig};
use crate::{Error, Result};

/// Room, transmitters and device height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomLayout {
    /// Width, depth and height, centered on the origin in the floor plane.
    pub room: [f64; 3],
    /// LED positions; every LED faces straight down.
    pub leds: Vec<[f64; 3]>,
    pub lambert_order: f64,
    /// Receiver field of view, degrees.
    pub fov_deg: f64,
    pub ue_height: f64,
}

impl Default for RoomLayout {
    fn default() -> Self {
        Self {
            room: [6.0, 4.0, 3.2],
            leds: vec![[2.0, 1.0, 3.2], [2.0, -1.0, 3.2], [-2.0, 1.0, 3.2], [-2.0, -1.0, 3.2]],
            lambert_order: 1.0,
            fov_deg: 60.0,
            ue_height: 1.0,
        }
    }
}

impl RoomLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg <= 90.0) {
            return Err(Error::InvalidArgument(format!("field of view {} outside (0, 90]", self.fov_deg)));
        }
        for led in &self.leds {
            let inside = led[0].abs() <= self.room[0] / 2.0 && led[1].abs() <= self.room[1] / 2.0;
            if !inside || led[2] < 0.0 || led[2] > self.room[2] {
                return Err(Error::InvalidArgument(format!("LED {led:?} outside the room")));
            }
        }
        Ok(())
    }
}

/// Photodiode arrangement on the user device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiverKind {
    /// Four coplanar photodiodes facing up.
    Sr,
    /// Photodiodes on several faces of the device.
    Mdr,
}

impl ReceiverKind {
    /// Photodiode offsets and normals in the device frame.
    pub fn photodiodes(self) -> Vec<([f64; 3], [f64; 3])> {
        match self {
            ReceiverKind::Sr => vec![
                ([0.03, 0.03, 0.0], [0.0, 0.0, 1.0]),
                ([0.03, -0.03, 0.0], [0.0, 0.0, 1.0]),
                ([-0.03, 0.03, 0.0], [0.0, 0.0, 1.0]),
                ([-0.03, -0.03, 0.0], [0.0, 0.0, 1.0]),
            ],
            ReceiverKind::Mdr => vec![
                ([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
                ([0.03, 0.0, -0.005], [1.0, 0.0, 0.0]),
                ([-0.03, 0.0, -0.005], [-1.0, 0.0, 0.0]),
                ([0.0, 0.005, -0.005], [0.0, 1.0, 0.0]),
            ],
        }
    }

    /// Largest raw gain seen over 10⁵ random poses of the default layout
    /// (seed 2024); dividing by it puts the maximum entry near 1.
    pub fn calibration_scale(self) -> f64 {
        match self {
            ReceiverKind::Sr => SR_SCALE,
            ReceiverKind::Mdr => MDR_SCALE,
        }
    }
}

const SR_SCALE: f64 = 0.065_083_133;
const MDR_SCALE: f64 = 0.064_634_452;

impl FromStr for ReceiverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(ReceiverKind::Sr),
            "mdr" => Ok(ReceiverKind::Mdr),
            other => Err(Error::Parse(format!("unknown receiver {other:?}, expected SR or MDR"))),
        }
    }
}

impl fmt::Display for ReceiverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReceiverKind::Sr => "SR",
            ReceiverKind::Mdr => "MDR",
        })
    }
}

/// Device position and Euler angles (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UePose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Pitch distribution: Laplace with this location and scale, degrees.
pub const PITCH_MEAN_DEG: f64 = 41.39;
pub const PITCH_SCALE_DEG: f64 = 5.43;

/// Device-to-room rotation: yaw about z, then pitch about the new x, then roll about the new y.
pub fn rotation_matrix(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sz, cz) = yaw.sin_cos();
    let (sx, cx) = pitch.sin_cos();
    let (sy, cy) = roll.sin_cos();
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    rz * rx * ry
}

/// Line-of-sight gain `(m+1)/(2πd²)·cosᵐφ·cosψ` from a downward LED to a photodiode.
pub fn lambertian_gain(led: [f64; 3], pd: [f64; 3], normal: [f64; 3], m: f64, fov_deg: f64) -> Result<f64> {
    let d = Vector3::from(pd) - Vector3::from(led);
    let dist = d.norm();
    if dist <= 0.0 {
        return Err(Error::InvalidArgument("LED and photodiode coincide".into()));
    }
    let cos_phi = -d.z / dist;
    let n = Vector3::from(normal);
    let cos_psi = -d.dot(&n) / (dist * n.norm());
    if cos_phi < 0.0 || cos_psi <= 0.0 || cos_psi < fov_deg.to_radians().cos() {
        return Ok(0.0);
    }
    Ok((m + 1.0) / (2.0 * PI * dist * dist) * cos_phi.powf(m) * cos_psi)
}

fn laplace<R: Rng + ?Sized>(rng: &mut R, loc: f64, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn sample_pose<R: Rng + ?Sized>(layout: &RoomLayout, rng: &mut R) -> UePose {
    let x = rng.random_range(-layout.room[0] / 2.0..=layout.room[0] / 2.0);
    let y = rng.random_range(-layout.room[1] / 2.0..=layout.room[1] / 2.0);
    let yaw = rng.random_range(0.0..2.0 * PI);
    let pitch = laplace(rng, PITCH_MEAN_DEG, PITCH_SCALE_DEG).to_radians();
    UePose { position: [x, y, layout.ue_height], yaw, pitch, roll: 0.0 }
}

/// Unscaled gains, rows are photodiodes and columns LEDs.
pub fn raw_indoor(layout: &RoomLayout, kind: ReceiverKind, pose: &UePose) -> Result<DMatrix<f64>> {
    let rot = rotation_matrix(pose.yaw, pose.pitch, pose.roll);
    let origin = Vector3::from(pose.position);
    let pds = kind.photodiodes();
    let mut h = DMatrix::zeros(pds.len(), layout.leds.len());
    for (r, (offset, normal)) in pds.iter().enumerate() {
        let p = origin + rot * Vector3::from(*offset);
        let n = rot * Vector3::from(*normal);
        for (c, led) in layout.leds.iter().enumerate() {
            h[(r, c)] = lambertian_gain(*led, p.into(), n.into(), layout.lambert_order, layout.fov_deg)?;
        }
    }
    Ok(h)
}

/// Scaled gain matrix; all-zero matrices (nothing in view) are returned as is for the caller to flag.
pub fn gen_indoor(layout: &RoomLayout, kind: ReceiverKind, pose: &UePose) -> Result<DMatrix<f64>> {
    Ok(raw_indoor(layout, kind, pose)? / kind.calibration_scale())
}

/// Largest raw entry over `n` random poses.
pub fn calibrate(layout: &RoomLayout, kind: ReceiverKind, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..n {
        let pose = sample_pose(layout, &mut rng);
        best = best.max(raw_indoor(layout, kind, &pose)?.max());
    }
    Ok(best)
}

/// Gains `exp(N)` with `N` standard normal.
pub fn gen_lognormal<R: Rng + ?Sized>(n_r: usize, n_t: usize, rng: &mut R) -> Result<ChannelMatrix> {
    if n_r == 0 || n_t == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    let dist = LogNormal::new(0.0, 1.0).expect("valid parameters");
    let data: Vec<f64> = (0..n_r * n_t).map(|_| dist.sample(rng)).collect();
    ChannelMatrix::new(DMatrix::from_row_slice(n_r, n_t, &data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ChannelModel {
    Indoor { receiver: ReceiverKind },
    Lognormal { n_r: usize, n_t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// ε-rank at the configured `eps`.
    EpsRank,
    /// Share of energy in the leading singular value.
    EnergyRatio,
    /// Equal-cost low-SNR slope.
    SlopeEc,
    /// Bounded-cost low-SNR slope.
    SlopeBc,
    /// Ladder over optimal bounded-cost trace.
    RatioRl,
    GammaE,
    GammaB,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::EpsRank,
        Metric::EnergyRatio,
        Metric::SlopeEc,
        Metric::SlopeBc,
        Metric::RatioRl,
        Metric::GammaE,
        Metric::GammaB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::EpsRank => "eps_rank",
            Metric::EnergyRatio => "energy_ratio",
            Metric::SlopeEc => "slope_ec",
            Metric::SlopeBc => "slope_bc",
            Metric::RatioRl => "ratio_rl",
            Metric::GammaE => "gamma_e",
            Metric::GammaB => "gamma_b",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub model: ChannelModel,
    pub samples: usize,
    pub alpha: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub metrics: Vec<Metric>,
    pub seed: u64,
    #[serde(default)]
    pub layout: RoomLayout,
    #[serde(default = "QuadratureConfig::coarse")]
    pub quadrature: QuadratureConfig,
}

fn default_eps() -> f64 {
    0.95
}

impl EnsembleConfig {
    pub fn new(model: ChannelModel, samples: usize, alpha: Vec<f64>, metrics: Vec<Metric>, seed: u64) -> Self {
        Self {
            model,
            samples,
            alpha,
            eps: default_eps(),
            metrics,
            seed,
            layout: RoomLayout::default(),
            quadrature: QuadratureConfig::coarse(),
        }
    }

    fn n_t(&self) -> usize {
        match self.model {
            ChannelModel::Indoor { .. } => self.layout.leds.len(),
            ChannelModel::Lognormal { n_t, .. } => n_t,
        }
    }
}

/// Metrics of one channel draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub rank: usize,
    /// No photodiode sees any LED.
    pub zero: bool,
    pub values: BTreeMap<Metric, f64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub records: Vec<SampleRecord>,
    /// Sorted values with empirical CDF levels `(i + 1)/n`.
    pub cdfs: BTreeMap<Metric, Vec<(f64, f64)>>,
}

/// Random stream of sample `index` under a master seed.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// The channel drawn for sample `index`.
pub fn draw_channel(cfg: &EnsembleConfig, index: usize) -> Result<DMatrix<f64>> {
    let mut rng = sample_rng(cfg.seed, index);
    match cfg.model {
        ChannelModel::Indoor { receiver } => {
            let pose = sample_pose(&cfg.layout, &mut rng);
            gen_indoor(&cfg.layout, receiver, &pose)
        }
        ChannelModel::Lognormal { n_r, n_t } => Ok(gen_lognormal(n_r, n_t, &mut rng)?.matrix().clone()),
    }
}

fn evaluate(cfg: &EnsembleConfig, index: usize) -> SampleRecord {
    let mut rec = SampleRecord { index, rank: 0, zero: false, values: BTreeMap::new(), failures: Vec::new() };
    let h = match draw_channel(cfg, index).and_then(ChannelMatrix::new) {
        Ok(h) => h,
        Err(Error::ZeroChannel) => {
            rec.zero = true;
            return rec;
        }
        Err(e) => {
            rec.failures.push(format!("channel: {e}"));
            return rec;
        }
    };
    let rc = match reduce(&h, DEFAULT_RANK_TOL) {
        Ok(rc) => rc,
        Err(e) => {
            rec.failures.push(format!("reduce: {e}"));
            return rec;
        }
    };
    rec.rank = rc.r;
    let g = h.gram();
    let alpha = &cfg.alpha;
    for &metric in &cfg.metrics {
        let value: Result<Option<f64>> = match metric {
            Metric::EpsRank => epsilon_rank_from_singular_values(rc.sigma.as_slice(), cfg.eps).map(|k| Some(k as f64)),
            Metric::EnergyRatio => {
                let total: f64 = rc.sigma.iter().map(|s| s * s).sum();
                Ok(Some(rc.sigma[0] * rc.sigma[0] / total))
            }
            Metric::SlopeEc => Ok(Some(0.5 * low_snr::v_max_ec(&g, alpha))),
            Metric::SlopeBc => low_snr::solve_bc_allocation(&g, alpha).map(|a| Some(0.5 * a.value)),
            Metric::RatioRl => low_snr::ratio_rl(&g, alpha).map(Some),
            Metric::GammaE | Metric::GammaB if rc.r + 1 != rc.n_t() => Ok(None),
            Metric::GammaE | Metric::GammaB => IntensityProfile::new(alpha.clone()).and_then(|p| {
                let sol = if metric == Metric::GammaE {
                    gamma_e(&rc, &p, &cfg.quadrature)?
                } else {
                    gamma_b(&rc, &p, &cfg.quadrature)?
                };
                if sol.is_converged() {
                    Ok(Some(sol.gamma))
                } else {
                    Err(Error::Infeasible(format!("solver status {:?}", sol.status)))
                }
            }),
        };
        match value {
            Ok(Some(v)) => {
                rec.values.insert(metric, v);
            }
            Ok(None) => {}
            Err(e) => rec.failures.push(format!("{}: {e}", metric.name())),
        }
    }
    rec
}

/// Draws the ensemble and evaluates the requested metrics on every sample.
pub fn ensemble_run(cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    if cfg.alpha.len() != cfg.n_t() {
        return Err(Error::DimensionMismatch { expected: cfg.n_t(), found: cfg.alpha.len() });
    }
    IntensityProfile::new(cfg.alpha.clone())?;
    cfg.layout.validate()?;
    cfg.quadrature.validate()?;
    if !(cfg.eps > 0.0 && cfg.eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {}", cfg.eps)));
    }
    let records: Vec<SampleRecord> = (0..cfg.samples).into_par_iter().map(|i| evaluate(cfg, i)).collect();
    let mut cdfs = BTreeMap::new();
    for &metric in &cfg.metrics {
        let mut vals: Vec<f64> = records.iter().filter_map(|r| r.values.get(&metric).copied()).collect();
        vals.sort_by(f64::total_cmp);
        let n = vals.len() as f64;
        cdfs.insert(metric, vals.into_iter().enumerate().map(|(i, v)| (v, (i + 1) as f64 / n)).collect());
    }
    Ok(EnsembleResult { records, cdfs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotations() {
        assert!((rotation_matrix(0.0, 0.0, 0.0) - Matrix3::identity()).norm() < 1e-15);
        let r = rotation_matrix(PI, 0.0, 0.0);
        let v = r * Vector3::new(1.0, 0.0, 0.0);
        assert!((v - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
        let r = rotation_matrix(0.3, 1.1, -0.7);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambertian_examples() {
        let g = lambertian_gain([0.0, 0.0, 3.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 1.0, 60.0).unwrap();
        assert!((g - 2.0 / (2.0 * PI * 4.0)).abs() < 1e-15);
        let grazing = lambertian_gain([0.0, 0.0, 3.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 1.0, 90.0).unwrap();
        assert_eq!(grazing, 0.0);
        let far = lambertian_gain([0.0, 0.0, 5.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 1.0, 60.0).unwrap();
        assert!((g / far - 4.0).abs() < 1e-12);
        assert!(lambertian_gain([0.0; 3], [0.0; 3], [0.0, 0.0, 1.0], 1.0, 60.0).is_err());
    }

    #[test]
    fn center_pose_sees_all_leds() {
        let layout = RoomLayout::default();
        let pose = UePose { position: [0.0, 0.0, 1.0], yaw: 0.0, pitch: 0.0, roll: 0.0 };
        let h = gen_indoor(&layout, ReceiverKind::Sr, &pose).unwrap();
        assert!(h.iter().all(|&g| g > 0.0));
        let down = UePose { pitch: PI, ..pose };
        assert!(gen_indoor(&layout, ReceiverKind::Sr, &down).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn frozen_scales_match_calibration() {
        let layout = RoomLayout::default();
        for kind in [ReceiverKind::Sr, ReceiverKind::Mdr] {
            let fresh = calibrate(&layout, kind, 5_000, 7).unwrap();
            assert!(fresh <= kind.calibration_scale() * 1.05, "{kind}: {fresh}");
            assert!(fresh >= kind.calibration_scale() * 0.7, "{kind}: {fresh}");
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }

    #[test]
    fn empty_metric_list() {
        let cfg = EnsembleConfig::new(ChannelModel::Lognormal { n_r: 2, n_t: 2 }, 5, vec![0.5, 0.5], vec![], 1);
        let out = ensemble_run(&cfg).unwrap();
        assert!(out.cdfs.is_empty());
        assert_eq!(out.records.len(), 5);
    }
}
