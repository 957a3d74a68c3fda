//! Synthetic grasp-and-lift trials with known ground truth.
//!
//! Each grasp yields one trial per finger: a force/torque log on the sensor
//! clock, a video on the camera clock shifted by a fixed offset, a random
//! telegraph LED recorded in both streams, and marker angles. The metadata
//! keeps the exact fingertip targets, contact point, warp and offsets.

pub mod profile;
pub mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alignment::{ControlGrid, DisplacementField};
use crate::calibration::{rotate_forces, torque_shift, ContactPoint};
use crate::error::{Error, Result};
use crate::frame::{ImageFrame, CANONICAL_SIZE};
use crate::imaging::Mask;
use crate::surface::SurfaceSpec;
use crate::trial::{Finger, Trial, TrialKey, WEIGHTS_G};
use crate::wrench::{TargetVector, Wrench};
pub use profile::GraspProfile;
pub use render::{NailStyle, RenderMaps};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_participants: u32,
    pub weights: Vec<u32>,
    pub surfaces: Vec<u8>,
    pub repetitions: u32,
    /// Recording sessions per participant; later sessions drift in appearance.
    pub sessions: u32,
    pub frame_rate: f64,
    pub force_rate: f64,
    /// `[height, width]` of every frame.
    pub image_size: [usize; 2],
    pub pixel_noise_sigma: f64,
    pub force_noise_sigma: f64,
    pub torque_noise_sigma: f64,
    pub led_mean_rate: f64,
    /// Video length in seconds.
    pub trial_duration: f64,
    /// Camera clock lag behind the force clock, seconds.
    pub true_camera_offset: f64,
    pub gravity: f64,
    /// Largest non-rigid displacement of the nail per trial (px).
    pub warp_max_px: f64,
    /// Largest rigid offset of the finger per trial (px).
    pub translation_max_px: f64,
    /// Amplitude of slow per-frame finger drift (px).
    pub drift_px: f64,
    /// Marker mounting error added to every recorded angle (degrees).
    pub mount_offset_deg: f64,
    /// Strength of the appearance change between sessions.
    pub session_drift: f64,
    /// Radius around the surface apex within which contact lands (mm).
    pub contact_radius_mm: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_participants: 5,
            weights: WEIGHTS_G.to_vec(),
            surfaces: (1..=12).collect(),
            repetitions: 5,
            sessions: 1,
            frame_rate: 24.0,
            force_rate: 100.0,
            image_size: [CANONICAL_SIZE.0, CANONICAL_SIZE.1],
            pixel_noise_sigma: 0.02,
            force_noise_sigma: 0.01,
            torque_noise_sigma: 0.02,
            led_mean_rate: 4.0,
            trial_duration: 6.0,
            true_camera_offset: 0.25,
            gravity: 9.82,
            warp_max_px: 2.0,
            translation_max_px: 3.0,
            drift_px: 0.5,
            mount_offset_deg: 0.0,
            session_drift: 1.0,
            contact_radius_mm: 3.0,
        }
    }
}

/// Idle time before the reach starts, drawn per trial.
const LEAD_S: (f64, f64) = (0.2, 0.4);
/// Force log beyond the end of the video.
const FORCE_TAIL_S: f64 = 0.5;

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.frame_rate > 0.0 && self.frame_rate < self.force_rate) {
            return bad(format!(
                "frame rate {} must be positive and below force rate {}",
                self.frame_rate, self.force_rate
            ));
        }
        let sigmas = [
            self.pixel_noise_sigma,
            self.force_noise_sigma,
            self.torque_noise_sigma,
            self.drift_px,
            self.warp_max_px,
            self.translation_max_px,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise levels and warp amplitudes must be ≥ 0".into());
        }
        if let Some(w) = self.weights.iter().find(|w| !WEIGHTS_G.contains(w)) {
            return bad(format!("weight {w} g not in {WEIGHTS_G:?}"));
        }
        if let Some(s) = self.surfaces.iter().find(|s| !(1..=12).contains(*s)) {
            return bad(format!("surface id {s} outside 1..12"));
        }
        if self.weights.is_empty() || self.surfaces.is_empty() {
            return bad("need at least one weight and one surface".into());
        }
        if self.n_participants == 0 || self.repetitions == 0 || self.sessions == 0 {
            return bad("participants, repetitions and sessions must be ≥ 1".into());
        }
        if self.image_size[0] < 16 || self.image_size[1] < 16 {
            return bad("image size must be at least 16×16".into());
        }
        if !(self.led_mean_rate > 0.0) || !(self.gravity > 0.0) {
            return bad("LED rate and gravity must be positive".into());
        }
        if !(0.0..=2.0).contains(&self.true_camera_offset) {
            return bad("camera offset must lie in [0, 2] s".into());
        }
        if !(self.mount_offset_deg.abs() <= 45.0) {
            return bad("marker mounting offset must lie in [−45, 45]°".into());
        }
        profile::check_feasible(self.trial_duration, LEAD_S.1)
    }

    pub fn n_frames(&self) -> usize {
        (self.trial_duration * self.frame_rate).round() as usize
    }

    pub fn n_force_samples(&self) -> usize {
        ((self.true_camera_offset + self.trial_duration + FORCE_TAIL_S) * self.force_rate).ceil() as usize
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image_size[0], self.image_size[1])
    }
}

/// One grasp: both fingers share the object and the load profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraspKey {
    pub participant: u32,
    pub session: u32,
    pub weight_g: u32,
    pub surface_id: u8,
    pub repetition: u32,
}

impl GraspKey {
    pub fn trial_key(&self, finger: Finger) -> TrialKey {
        TrialKey {
            participant: self.participant,
            finger,
            weight_g: self.weight_g,
            surface_id: self.surface_id,
            repetition: self.repetition,
            session: self.session,
        }
    }

    /// Surface under the given finger.
    pub fn surface(&self, finger: Finger) -> SurfaceSpec {
        match finger {
            Finger::Thumb => SurfaceSpec::thumb(),
            Finger::Index => SurfaceSpec::catalog(self.surface_id).expect("validated surface id"),
        }
    }
}

/// Random telegraph on the force clock. The state flips between samples
/// `m` and `m + 1` for every stored `m`, i.e. at time `(m + ½)/rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telegraph {
    pub initial: u8,
    pub switches: Vec<u64>,
    pub rate: f64,
}

impl Telegraph {
    pub fn sample<R: Rng>(rng: &mut R, mean_switch_rate: f64, rate: f64, n: usize) -> Self {
        let initial = rng.random_range(0..=1u8);
        let mut switches = Vec::new();
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            t += -u.ln() / mean_switch_rate;
            let m = (t * rate).floor() as u64;
            if m + 1 >= n as u64 {
                break;
            }
            if switches.last() != Some(&m) {
                switches.push(m);
            }
        }
        Self {
            initial,
            switches,
            rate,
        }
    }

    fn state_before(&self, count: usize) -> u8 {
        self.initial ^ (count % 2) as u8
    }

    /// State recorded at force sample `k`.
    pub fn at_sample(&self, k: usize) -> u8 {
        self.state_before(self.switches.partition_point(|&m| m < k as u64))
    }

    /// State seen at time `t` on the force clock.
    pub fn at_time(&self, t: f64) -> u8 {
        // a time exactly on a switch reads the earlier state
        let x = t * self.rate - 1e-9 * (t * self.rate).abs().max(1.0);
        self.state_before(self.switches.partition_point(|&m| m as f64 + 0.5 < x))
    }
}

/// Everything the generator knows about a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub contact: ContactPoint,
    pub camera_offset: f64,
    pub mount_offset_deg: f64,
    /// Frame times on the force clock.
    pub frame_times: Vec<f64>,
    /// Exact fingertip targets at every frame.
    pub targets: Vec<TargetVector>,
    /// LED state visible in every frame.
    pub led_frames: Vec<u8>,
    pub telegraph: Telegraph,
    pub warp: ControlGrid,
    /// Rigid part of the warp `(rows, cols)` in px.
    pub translation: (f64, f64),
    /// Per-frame drift `(rows, cols)` in px.
    pub drift: Vec<(f64, f64)>,
    pub profile: GraspProfile,
    /// Exact marker angle (without mounting error) per frame.
    pub true_marker_angles: Vec<f64>,
}

impl TrialTruth {
    /// Displacement `d` with frame `= template(p + d(p))` before drift.
    pub fn warp_field(&self) -> DisplacementField {
        let mut f = self.warp.field();
        f.dy.iter_mut().for_each(|v| *v += self.translation.0);
        f.dx.iter_mut().for_each(|v| *v += self.translation.1);
        f
    }

    /// Frame indices whose time lies inside `[a, b]` on the force clock.
    pub fn frames_within(&self, window: (f64, f64)) -> Vec<usize> {
        (0..self.frame_times.len())
            .filter(|&i| self.frame_times[i] >= window.0 && self.frame_times[i] <= window.1)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTrial {
    pub trial: Trial,
    pub truth: TrialTruth,
    /// Finger mask of the warped template before drift.
    pub mask: Mask,
}

/// Region holding the LED in every raw frame: `(row0, col0, size)`.
pub fn led_roi(size: (usize, usize)) -> (usize, usize, usize) {
    (0, 0, (size.0 / 28).max(2))
}

/// Smooth random B-spline warp whose largest pixel displacement is `max_px`.
pub fn random_warp<R: Rng>(rng: &mut R, height: usize, width: usize, max_px: f64) -> ControlGrid {
    let spacing = (height as f64 / 3.5).max(4.0);
    let mut warp = ControlGrid::zeros(height, width, spacing);
    for v in warp.dy.iter_mut().chain(warp.dx.iter_mut()) {
        *v = rng.random_range(-1.0..=1.0);
    }
    let peak = warp.field().max_magnitude();
    let scale = if peak > 0.0 { max_px / peak } else { 0.0 };
    warp.dy.iter_mut().chain(warp.dx.iter_mut()).for_each(|v| *v *= scale);
    warp
}

/// Draws the force profile of one grasp.
pub fn generate_wrench_profile<R: Rng>(
    config: &GeneratorConfig,
    weight_g: u32,
    surface: &SurfaceSpec,
    start: f64,
    rng: &mut R,
) -> Result<GraspProfile> {
    if !config.weights.contains(&weight_g) {
        return Err(Error::Config(format!("weight {weight_g} g not configured")));
    }
    Ok(GraspProfile::sample(rng, start, weight_g, surface.material, config.gravity))
}

/// Noisy canonical frame of `target` for a style (no warp, no LED).
pub fn render_nail_frame<R: Rng>(
    target: &TargetVector,
    style: &NailStyle,
    size: (usize, usize),
    noise_sigma: f64,
    rng: &mut R,
) -> ImageFrame {
    RenderMaps::new(style, size.0, size.1, None).render(target, noise_sigma, rng, 0.0)
}

pub struct Generator {
    config: GeneratorConfig,
    /// `styles[participant][session]`.
    styles: Vec<Vec<NailStyle>>,
}

const STYLE_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const ORACLE_SEED_SALT: u64 = 0xC2B2_AE3D_27D4_EB4F;

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut styles = Vec::new();
        for p in 0..config.n_participants {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ STYLE_SEED_SALT);
            rng.set_stream(p as u64);
            let base = NailStyle::sample(&mut rng);
            let mut per = vec![base.clone()];
            for _ in 1..config.sessions {
                per.push(base.perturbed(&mut rng, config.session_drift));
            }
            styles.push(per);
        }
        Ok(Self { config, styles })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn style(&self, participant: u32, session: u32) -> &NailStyle {
        &self.styles[participant as usize][session as usize]
    }

    /// Unwarped render maps of a participant's session.
    pub fn canonical_maps(&self, participant: u32, session: u32) -> RenderMaps {
        let (h, w) = self.config.size();
        RenderMaps::new(self.style(participant, session), h, w, None)
    }

    /// All grasps, ordered by participant, session, weight, surface, repetition.
    pub fn grasps(&self) -> Vec<GraspKey> {
        (0..self.config.n_participants)
            .flat_map(|p| self.grasps_of(p))
            .collect()
    }

    pub fn grasps_of(&self, participant: u32) -> Vec<GraspKey> {
        let c = &self.config;
        let mut out = Vec::new();
        for session in 0..c.sessions {
            for &weight_g in &c.weights {
                for &surface_id in &c.surfaces {
                    for repetition in 0..c.repetitions {
                        out.push(GraspKey {
                            participant,
                            session,
                            weight_g,
                            surface_id,
                            repetition,
                        });
                    }
                }
            }
        }
        out
    }

    /// Stable index of a grasp, independent of which subsets are configured.
    pub fn grasp_index(&self, key: &GraspKey) -> u64 {
        let w = WEIGHTS_G.iter().position(|&x| x == key.weight_g).unwrap_or(0) as u64;
        let s = key.surface_id as u64 - 1;
        (((key.participant as u64 * 64 + key.session as u64) * 3 + w) * 12 + s) * 1024 + key.repetition as u64
    }

    /// Noisy canonical green plane for a target, from a stream separate from
    /// the trial's own noise. Used to evaluate the ideal inverse.
    pub fn oracle_green(&self, maps: &RenderMaps, key: &GraspKey, finger: Finger, frame: usize, target: &TargetVector) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ ORACLE_SEED_SALT);
        rng.set_stream(self.grasp_index(key) * 2 + finger as u64);
        rng.set_word_pos(frame as u128 * 4 * (maps.height * maps.width) as u128);
        let mut g = maps.green(target);
        let normal = Normal::new(0.0, self.config.pixel_noise_sigma.max(0.0)).expect("finite sigma");
        for v in &mut g {
            if self.config.pixel_noise_sigma > 0.0 {
                *v += normal.sample(&mut rng);
            }
            *v = v.clamp(0.0, 1.0);
        }
        g
    }

    /// Generates both fingers of a grasp.
    pub fn generate(&self, key: &GraspKey) -> Result<[SyntheticTrial; 2]> {
        let c = &self.config;
        if key.participant >= c.n_participants || key.session >= c.sessions {
            return Err(Error::InvalidInput(format!("grasp {key:?} outside the configuration")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(self.grasp_index(key));
        let index_surface = key.surface(Finger::Index);
        let start = c.true_camera_offset + rng.random_range(LEAD_S.0..=LEAD_S.1);
        let profile = generate_wrench_profile(c, key.weight_g, &index_surface, start, &mut rng)?;
        let thumb = self.finger_trial(key, Finger::Thumb, &profile, &mut rng)?;
        let index = self.finger_trial(key, Finger::Index, &profile, &mut rng)?;
        Ok([thumb, index])
    }

    fn finger_trial(&self, key: &GraspKey, finger: Finger, profile: &GraspProfile, rng: &mut ChaCha8Rng) -> Result<SyntheticTrial> {
        let c = &self.config;
        let (h, w) = c.size();
        let surface = key.surface(finger);
        let curv = (surface.c1, surface.c2);

        let radius = c.contact_radius_mm;
        let contact = ContactPoint::on_surface(
            rng.random_range(-radius..=radius),
            rng.random_range(-radius..=radius),
            &surface,
        );
        let theta_r: f64 = rng.random_range(-15.0..=15.0);
        let wobble_amp: f64 = rng.random_range(0.0..=3.0);
        let wobble_period: f64 = rng.random_range(3.0..=6.0);
        let wobble_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let true_theta = |t: f64| theta_r + wobble_amp * (std::f64::consts::TAU * t / wobble_period + wobble_phase).sin();

        let n_force = c.n_force_samples();
        let telegraph = Telegraph::sample(rng, c.led_mean_rate, c.force_rate, n_force);

        // force/torque log on the sensor clock
        let fnoise = Normal::new(0.0, c.force_noise_sigma).expect("finite sigma");
        let tnoise = Normal::new(0.0, c.torque_noise_sigma).expect("finite sigma");
        let mut wrenches = Vec::with_capacity(n_force);
        let mut led_force = Vec::with_capacity(n_force);
        for k in 0..n_force {
            let t = k as f64 / c.force_rate;
            let f_tip = profile.tip_force(finger, t);
            let f_sensor = rotate_forces(f_tip, 0.0, true_theta(t) - theta_r);
            let tau_tip = profile.tip_torque(finger, t);
            let shift = torque_shift(f_sensor, &contact);
            let mut f = f_sensor;
            let mut tau: [f64; 3] = std::array::from_fn(|i| tau_tip[i] + shift[i]);
            if c.force_noise_sigma > 0.0 {
                f.iter_mut().for_each(|v| *v += fnoise.sample(rng));
            }
            if c.torque_noise_sigma > 0.0 {
                tau.iter_mut().for_each(|v| *v += tnoise.sample(rng));
            }
            wrenches.push(Wrench::new(f, tau, t));
            led_force.push(telegraph.at_sample(k));
        }

        // per-trial geometry: smooth non-rigid warp plus a rigid offset
        let want = c.warp_max_px * rng.random_range(0.5..=1.0);
        let warp = random_warp(rng, h, w, want);
        let tmax = c.translation_max_px;
        let translation = (rng.random_range(-tmax..=tmax), rng.random_range(-tmax..=tmax));
        let drift_phase: [f64; 2] = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];
        let drift_period: [f64; 2] = [rng.random_range(2.0..=4.0), rng.random_range(2.0..=4.0)];

        let mut truth = TrialTruth {
            contact,
            camera_offset: c.true_camera_offset,
            mount_offset_deg: c.mount_offset_deg,
            frame_times: Vec::new(),
            targets: Vec::new(),
            led_frames: Vec::new(),
            telegraph,
            warp,
            translation,
            drift: Vec::new(),
            profile: profile.clone(),
            true_marker_angles: Vec::new(),
        };
        let maps = RenderMaps::new(self.style(key.participant, key.session), h, w, Some(&truth.warp_field()));
        let (lr, lc, ls) = led_roi((h, w));
        let pnoise = c.pixel_noise_sigma;

        let n_frames = c.n_frames();
        let mut frames = Vec::with_capacity(n_frames);
        let mut marker_angles = Vec::with_capacity(n_frames);
        let mut led_video = Vec::with_capacity(n_frames);
        for i in 0..n_frames {
            let camera_t = i as f64 / c.frame_rate;
            let t = camera_t + c.true_camera_offset;
            let target = TargetVector::new(profile.tip_force(finger, t), profile.tip_torque(finger, t), curv.0, curv.1);
            let drift = (
                c.drift_px * (std::f64::consts::TAU * t / drift_period[0] + drift_phase[0]).sin(),
                c.drift_px * (std::f64::consts::TAU * t / drift_period[1] + drift_phase[1]).sin(),
            );
            let led = truth.telegraph.at_time(t);
            let mut planes = maps.planes(&target);
            for p in planes.iter_mut() {
                *p = render::translate_plane(p, h, w, drift);
                let level = if led == 1 { 0.95 } else { 0.05 };
                for r in lr..lr + ls {
                    for col in lc..lc + ls {
                        p[r * w + col] = level;
                    }
                }
            }
            render::add_noise(&mut planes, pnoise, rng);
            frames.push(ImageFrame::from_planes(h, w, &planes, camera_t)?);
            let theta = true_theta(t);
            truth.true_marker_angles.push(theta);
            marker_angles.push(theta - c.mount_offset_deg);
            led_video.push(led);
            truth.frame_times.push(t);
            truth.targets.push(target);
            truth.led_frames.push(led);
            truth.drift.push(drift);
        }

        let trial = Trial {
            key: key.trial_key(finger),
            surface,
            marker_angles,
            theta_r_deg: theta_r,
            frames,
            wrenches,
            led_video,
            led_force,
            frame_rate: c.frame_rate,
            force_rate: c.force_rate,
        };
        trial.validate()?;
        Ok(SyntheticTrial {
            trial,
            truth,
            mask: maps.mask.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            n_participants: 1,
            weights: vec![330],
            surfaces: vec![2, 12],
            repetitions: 1,
            image_size: [40, 38],
            ..Default::default()
        }
    }

    #[test]
    fn frame_count_follows_duration() {
        assert_eq!(GeneratorConfig::default().n_frames(), 144);
    }

    #[test]
    fn counts_per_participant() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        assert_eq!(g.grasps_of(0).len(), 180);
    }

    #[test]
    fn rejects_bad_rates_and_short_trials() {
        let mut c = GeneratorConfig::default();
        c.frame_rate = 200.0;
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::default();
        c.trial_duration = 3.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let g = Generator::new(small_config()).unwrap();
        let key = g.grasps()[1];
        let a = g.generate(&key).unwrap();
        let b = g.generate(&key).unwrap();
        assert_eq!(a[1].trial, b[1].trial);
    }

    #[test]
    fn telegraph_sample_and_time_views_agree_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Telegraph::sample(&mut rng, 4.0, 100.0, 2000);
        for k in 0..2000 {
            assert_eq!(t.at_sample(k), t.at_time(k as f64 / 100.0));
        }
    }
}
