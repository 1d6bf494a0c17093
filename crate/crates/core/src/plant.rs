//! Simulated Lorentz-force actuator: a mass-spring-damper driven through a
//! saturated voltage command, opposed by LuGre friction and observed through a
//! noisy position sensor.

use nalgebra::Vector2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{c2d_zoh, StateSpaceModel};

/// Mechanical and electrical constants of the actuator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Moving mass, kg.
    pub mass: f64,
    /// Viscous damping, N s/m.
    pub damping: f64,
    /// Spring stiffness, N/m.
    pub stiffness: f64,
    /// Force constant Kt, N/A.
    pub force_constant: f64,
    /// Servo amplifier gain Ka, A/V.
    pub amplifier_gain: f64,
    /// Command saturation, V.
    pub u_max: f64,
    /// Integration substeps per control period.
    pub substeps: usize,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mass: 0.5,
            damping: 2.0,
            stiffness: 200.0,
            force_constant: 25.0,
            amplifier_gain: 2.0,
            u_max: 1.5,
            substeps: 10,
        }
    }
}

impl PlantParams {
    /// Force per volt, `Kt * Ka`.
    pub fn voltage_gain(&self) -> f64 {
        self.force_constant * self.amplifier_gain
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.stiffness >= 0.0
            && self.damping >= 0.0
            && self.u_max > 0.0
            && self.substeps >= 1
            && [self.mass, self.damping, self.stiffness, self.force_constant, self.amplifier_gain, self.u_max]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "plant needs mass > 0, stiffness >= 0, damping >= 0, u_max > 0, substeps >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn saturate(&self, u: f64) -> f64 {
        u.clamp(-self.u_max, self.u_max)
    }

    /// Exact ZOH model of the frictionless dynamics.
    pub fn discretize(&self, dt: f64) -> Result<StateSpaceModel> {
        c2d_zoh(self.mass, self.damping, self.stiffness, self.voltage_gain(), dt)
    }
}

/// LuGre friction parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LuGreParams {
    /// Bristle stiffness, N/m.
    pub sigma0: f64,
    /// Bristle damping, N s/m.
    pub sigma1: f64,
    /// Viscous coefficient, N s/m.
    pub sigma2: f64,
    /// Coulomb level, N.
    pub fc: f64,
    /// Stiction level, N.
    pub fs: f64,
    /// Stribeck velocity, m/s.
    pub vs: f64,
}

impl LuGreParams {
    /// Tabulated bristle damping. Read in SI units it gives a bristle time
    /// constant `sigma1 / sigma0` of about 1200 s, which locks the default
    /// actuator in place; see [`LuGreParams::default`].
    pub const TABULATED_SIGMA1: f64 = 1_264_911.0;

    pub fn validate(&self) -> Result<()> {
        let ok = self.fs >= self.fc
            && self.fc > 0.0
            && self.sigma0 > 0.0
            && self.vs > 0.0
            && self.sigma1 >= 0.0
            && self.sigma2 >= 0.0
            && [self.sigma0, self.sigma1, self.sigma2, self.fc, self.fs, self.vs].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "LuGre needs fs >= fc > 0, sigma0 > 0, vs > 0, sigma1 >= 0, sigma2 >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    /// Stribeck curve scaled by the bristle stiffness:
    /// `g(v) = (fc + (fs - fc) exp(-(v/vs)^2)) / sigma0`.
    pub fn g(&self, v: f64) -> f64 {
        let r = v / self.vs;
        (self.fc + (self.fs - self.fc) * (-r * r).exp()) / self.sigma0
    }

    /// Steady-state friction at constant sliding velocity.
    pub fn steady_state_friction(&self, v: f64) -> f64 {
        self.sigma0 * self.g(v) * sign(v) + self.sigma2 * v
    }

    /// Exact bristle update with `v` held over `dt`.
    fn advance_bristle(&self, y: f64, v: f64, dt: f64) -> f64 {
        if v == 0.0 {
            return y;
        }
        let g = self.g(v);
        let decay = (-(v.abs() / g) * dt).exp();
        y * decay + g * sign(v) * (1.0 - decay)
    }

    /// Bristle deflection rate `v - |v| y / g(v)`.
    pub fn bristle_rate(&self, y: f64, v: f64) -> f64 {
        v - v.abs() * y / self.g(v)
    }
}

impl Default for LuGreParams {
    /// Tabulated levels with the bristle critically damped against the
    /// default 0.5 kg mass, `sigma1 = 2 sqrt(sigma0 M)`.
    fn default() -> Self {
        Self { sigma0: 1067.0, sigma1: 46.2, sigma2: 0.7, fc: 40.0, fs: 60.0, vs: 0.001 }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn lugre_g(params: &LuGreParams, v: f64) -> f64 {
    params.g(v)
}

/// Advances the bristle state one step at constant velocity and returns
/// `(new_y, friction)` with the friction evaluated at the updated state.
pub fn lugre_step(params: &LuGreParams, state_y: f64, v: f64, dt: f64) -> (f64, f64) {
    let y = params.advance_bristle(state_y, v, dt);
    let friction = params.sigma0 * y + params.sigma1 * params.bristle_rate(y, v) + params.sigma2 * v;
    (y, friction)
}

/// Mechanical and bristle state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlantState {
    /// m
    pub x: f64,
    /// m/s
    pub v: f64,
    /// Bristle deflection, m.
    pub y_bristle: f64,
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite() && self.y_bristle.is_finite()
    }
}

/// Advances the actuator one control period with the command held constant.
///
/// Each substep moves the bristle exactly at the current velocity, then
/// integrates the mechanics kick-drift-kick. The bristle-rate damping
/// `sigma1 * (1 - sgn(v) y / g(v))` is stiff and is taken implicitly in both
/// half-kicks; the linear viscous terms are explicit in the first half-kick
/// and implicit in the second. Pass `lugre = None` for a frictionless actuator.
pub fn plant_step(
    plant: &PlantParams,
    lugre: Option<&LuGreParams>,
    state: PlantState,
    u: f64,
    dt: f64,
) -> PlantState {
    let drive = plant.voltage_gain() * plant.saturate(u);
    let h = dt / plant.substeps as f64;
    let half = 0.5 * h / plant.mass;
    let PlantState { mut x, mut v, mut y_bristle } = state;
    for _ in 0..plant.substeps {
        // (static force, explicit bristle damping coefficient, implicit bristle damping, viscous)
        let (bristle_force, stiff_explicit, stiff_implicit, viscous) = match lugre {
            Some(p) => {
                y_bristle = p.advance_bristle(y_bristle, v, h);
                // Bristle rate is kappa * v with kappa = 1 - sgn(v) y / g(v).
                let kappa = if v == 0.0 { 1.0 } else { 1.0 - sign(v) * y_bristle / p.g(v) };
                let kappa_pos = kappa.max(0.0);
                (p.sigma0 * y_bristle, p.sigma1 * (kappa - kappa_pos), p.sigma1 * kappa_pos, plant.damping + p.sigma2)
            }
            None => (0.0, 0.0, 0.0, plant.damping),
        };
        let v_half = (v + half * (drive - plant.stiffness * x - bristle_force - (viscous + stiff_explicit) * v))
            / (1.0 + half * stiff_implicit);
        x += h * v_half;
        v = (v_half + half * (drive - plant.stiffness * x - bristle_force - stiff_explicit * v_half))
            / (1.0 + half * (viscous + stiff_implicit));
    }
    PlantState { x, v, y_bristle }
}

/// White Gaussian position noise with a replayable per-sample stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    /// m^2
    pub noise_variance: f64,
    pub rng_seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { noise_variance: 1e-9, rng_seed: 0 }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be >= 0, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Noise sample `k`. Each sample uses four fixed ChaCha words, so random
    /// access agrees with [`SensorModel::stream`].
    pub fn noise(&self, k: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_word_pos(4 * k as u128);
        self.scale() * standard_normal(&mut rng)
    }

    pub fn measure(&self, true_position: f64, k: usize) -> f64 {
        true_position + self.noise(k)
    }

    /// Sequential noise samples starting at `k = 0`.
    pub fn stream(&self) -> NoiseStream {
        NoiseStream { rng: ChaCha8Rng::seed_from_u64(self.rng_seed), scale: self.scale() }
    }

    fn scale(&self) -> f64 {
        self.noise_variance.sqrt()
    }
}

pub struct NoiseStream {
    rng: ChaCha8Rng,
    scale: f64,
}

impl Iterator for NoiseStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.scale * standard_normal(&mut self.rng))
    }
}

/// Box-Muller from exactly two `u64` draws.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = 1.0 - (rng.next_u64() >> 11) as f64 * SCALE; // (0, 1]
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A steppable actuator: either the nonlinear substep simulation (with or
/// without friction) or the exact discrete linear model.
#[derive(Clone, Debug)]
pub enum Actuator {
    Nonlinear { plant: PlantParams, lugre: Option<LuGreParams>, state: PlantState, dt: f64, step: usize },
    Linear { model: StateSpaceModel, u_max: f64, state: Vector2<f64>, step: usize },
}

impl Actuator {
    pub fn nonlinear(plant: PlantParams, lugre: Option<LuGreParams>, dt: f64) -> Self {
        Actuator::Nonlinear { plant, lugre, state: PlantState::default(), dt, step: 0 }
    }

    pub fn linear(plant: &PlantParams, dt: f64) -> Result<Self> {
        Ok(Actuator::Linear { model: plant.discretize(dt)?, u_max: plant.u_max, state: Vector2::zeros(), step: 0 })
    }

    /// Back to rest at step 0.
    pub fn reset(&mut self) {
        match self {
            Actuator::Nonlinear { state, step, .. } => {
                *state = PlantState::default();
                *step = 0;
            }
            Actuator::Linear { state, step, .. } => {
                *state = Vector2::zeros();
                *step = 0;
            }
        }
    }

    pub fn position(&self) -> f64 {
        match self {
            Actuator::Nonlinear { state, .. } => state.x,
            Actuator::Linear { state, .. } => state[0],
        }
    }

    pub fn velocity(&self) -> f64 {
        match self {
            Actuator::Nonlinear { state, .. } => state.v,
            Actuator::Linear { state, .. } => state[1],
        }
    }

    pub fn saturate(&self, u: f64) -> f64 {
        match self {
            Actuator::Nonlinear { plant, .. } => plant.saturate(u),
            Actuator::Linear { u_max, .. } => u.clamp(-*u_max, *u_max),
        }
    }

    /// Applies `u` (saturated internally) for one control period.
    pub fn apply(&mut self, u: f64) -> Result<()> {
        let (finite, k) = match self {
            Actuator::Nonlinear { plant, lugre, state, dt, step } => {
                *state = plant_step(plant, lugre.as_ref(), *state, u, *dt);
                *step += 1;
                (state.is_finite(), *step)
            }
            Actuator::Linear { model, u_max, state, step } => {
                *state = model.step(state, u.clamp(-*u_max, *u_max));
                *step += 1;
                (state.iter().all(|v| v.is_finite()), *step)
            }
        };
        if !finite {
            return Err(Error::Diverged { step: k - 1 });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    const DT: f64 = 0.001;

    #[test]
    fn defaults_are_valid() {
        PlantParams::default().validate().unwrap();
        LuGreParams::default().validate().unwrap();
        SensorModel::default().validate().unwrap();
        assert_eq!(PlantParams::default().voltage_gain(), 50.0);
        let bad = LuGreParams { fc: 70.0, ..LuGreParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn g_examples() {
        let p = LuGreParams::default();
        assert_abs_diff_eq!(lugre_g(&p, 0.0), 60.0 / 1067.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lugre_g(&p, 0.0), 0.056232, epsilon = 1e-6);
        assert_abs_diff_eq!(lugre_g(&p, 0.001), (40.0 + 20.0 * (-1.0f64).exp()) / 1067.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lugre_g(&p, 0.001), 0.044384, epsilon = 1e-6);
        assert_abs_diff_eq!(lugre_g(&p, 1.0), 40.0 / 1067.0, epsilon = 1e-9);
        assert_abs_diff_eq!(lugre_g(&p, -1.0), lugre_g(&p, 1.0), epsilon = 0.0);
    }

    #[test]
    fn g_positive_and_decreasing() {
        let p = LuGreParams::default();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let v = i as f64 * 2e-5;
            let g = p.g(v);
            assert!(g > 0.0 && g <= prev);
            prev = g;
        }
    }

    #[test]
    fn zero_velocity_holds_bristle() {
        let p = LuGreParams::default();
        let (y, f) = lugre_step(&p, 0.01, 0.0, 1e-3);
        assert_eq!(y, 0.01);
        assert_eq!(f, p.sigma0 * 0.01);
    }

    #[test]
    fn constant_velocity_reaches_fixed_point() {
        let p = LuGreParams::default();
        let v = 0.001;
        let mut y = 0.0;
        let mut f = 0.0;
        for _ in 0..100_000 {
            (y, f) = lugre_step(&p, y, v, 0.1);
        }
        assert_relative_eq!(y, p.g(v), max_relative = 1e-12);
        let expected = 40.0 + 20.0 * (-1.0f64).exp() + 0.0007;
        assert_relative_eq!(f, expected, max_relative = 1e-9);
        assert_abs_diff_eq!(f, 47.358, epsilon = 1e-3);
    }

    #[test]
    fn one_step_matches_fine_euler() {
        let p = LuGreParams::default();
        let (v, dt) = (0.01, 1e-4);
        let (y, f) = lugre_step(&p, 0.0, v, dt);
        let mut y_ref: f64 = 0.0;
        let h = dt / 1000.0;
        for _ in 0..1000 {
            y_ref += h * (v - v.abs() * y_ref / p.g(v));
        }
        assert_relative_eq!(y, y_ref, max_relative = 1e-6);
        let f_ref = p.sigma0 * y_ref + p.sigma1 * (v - v.abs() * y_ref / p.g(v)) + p.sigma2 * v;
        assert_relative_eq!(f, f_ref, max_relative = 1e-6);
    }

    #[test]
    fn steady_friction_curve() {
        let p = LuGreParams::default();
        for &v in &[1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, -1e-3, -1e-2] {
            let mut y = 0.0;
            let mut f = 0.0;
            // The update is exact for constant v, so large steps reach steady state quickly.
            for _ in 0..100_000 {
                (y, f) = lugre_step(&p, y, v, 1.0);
            }
            let stribeck = (p.fc + (p.fs - p.fc) * (-(v / p.vs).powi(2)).exp()) * v.signum() + p.sigma2 * v;
            assert_relative_eq!(f, stribeck, max_relative = 1e-3);
            assert_relative_eq!(f, p.steady_state_friction(v), max_relative = 1e-9);
        }
    }

    #[test]
    fn rest_is_equilibrium() {
        let s = plant_step(&PlantParams::default(), Some(&LuGreParams::default()), PlantState::default(), 0.0, DT);
        assert_eq!(s, PlantState::default());
    }

    #[test]
    fn command_is_clamped() {
        let plant = PlantParams::default();
        let lugre = LuGreParams::default();
        let s0 = PlantState { x: 0.01, v: 0.02, y_bristle: 0.003 };
        let a = plant_step(&plant, Some(&lugre), s0, 10.0, DT);
        let b = plant_step(&plant, Some(&lugre), s0, 1.5, DT);
        assert_eq!(a, b);
        let c = plant_step(&plant, Some(&lugre), s0, -7.0, DT);
        let d = plant_step(&plant, Some(&lugre), s0, -1.5, DT);
        assert_eq!(c, d);
    }

    #[test]
    fn frictionless_step_matches_zoh_model() {
        let plant = PlantParams::default();
        let model = plant.discretize(DT).unwrap();
        let mut s = PlantState::default();
        let mut x = Vector2::zeros();
        let mut worst: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for _ in 0..1000 {
            s = plant_step(&plant, None, s, 1.0, DT);
            x = model.step(&x, 1.0);
            worst = worst.max((s.x - x[0]).abs());
            peak = peak.max(x[0].abs());
        }
        assert!(worst / peak < 1e-4, "relative error {}", worst / peak);
    }

    #[test]
    fn verbatim_sigma1_stays_finite() {
        let plant = PlantParams::default();
        let lugre = LuGreParams { sigma1: LuGreParams::TABULATED_SIGMA1, ..LuGreParams::default() };
        let mut s = PlantState::default();
        for k in 0..6000 {
            let u = 1.5 * (k as f64 * 0.003).sin();
            s = plant_step(&plant, Some(&lugre), s, u, DT);
            assert!(s.is_finite());
        }
        // The stiff bristle damping keeps the mass essentially stuck.
        assert!(s.x.abs() < 1e-3);
    }

    /// Mechanical plus bristle energy never grows beyond the integrator's
    /// O((h w)^2) wobble, which shrinks as substeps are added.
    #[test]
    fn energy_including_bristle_is_non_increasing() {
        let lugre = LuGreParams::default();
        for &(substeps, tol) in &[(10, 5e-4), (40, 1e-7)] {
            let plant = PlantParams { substeps, ..PlantParams::default() };
            let energy = |s: &PlantState| {
                0.5 * plant.mass * s.v * s.v
                    + 0.5 * plant.stiffness * s.x * s.x
                    + 0.5 * lugre.sigma0 * s.y_bristle.powi(2)
            };
            for &v0 in &[0.05, 0.3, -0.8] {
                let mut s = PlantState { x: 0.0, v: v0, y_bristle: 0.0 };
                let e0 = energy(&s);
                let mut e = e0;
                for k in 0..3000 {
                    s = plant_step(&plant, Some(&lugre), s, 0.0, DT);
                    let e_new = energy(&s);
                    assert!(e_new <= e * (1.0 + tol), "substeps={substeps} v0={v0} k={k}: {e_new} > {e}");
                    e = e_new;
                }
                assert!(e < 0.5 * e0);
            }
        }
    }

    #[test]
    fn noise_is_deterministic_and_random_access() {
        let sensor = SensorModel { noise_variance: 1e-8, rng_seed: 42 };
        let seq: Vec<f64> = sensor.stream().take(50).collect();
        for (k, &n) in seq.iter().enumerate() {
            assert_eq!(sensor.noise(k), n);
            assert_eq!(sensor.measure(0.25, k), 0.25 + n);
        }
        let other: Vec<f64> = sensor.with_seed(43).stream().take(50).collect();
        assert_ne!(seq, other);
        let silent = SensorModel { noise_variance: 0.0, rng_seed: 1 };
        assert_eq!(silent.measure(0.123, 7), 0.123);
    }

    #[test]
    fn noise_variance_statistics() {
        let sensor = SensorModel { noise_variance: 1e-8, rng_seed: 7 };
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for x in sensor.stream().take(n) {
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((var - 1e-8).abs() < 0.05 * 1e-8, "var {var}");
        assert!(mean.abs() < 5.0 * 1e-4 / (n as f64).sqrt());
    }

    #[test]
    fn actuator_reports_divergence() {
        let mut act = Actuator::nonlinear(PlantParams::default(), None, DT);
        for _ in 0..3 {
            act.apply(0.5).unwrap();
        }
        assert_eq!(act.apply(f64::NAN), Err(Error::Diverged { step: 3 }));
    }

    #[test]
    fn linear_actuator_matches_model() {
        let plant = PlantParams::default();
        let model = plant.discretize(DT).unwrap();
        let mut act = Actuator::linear(&plant, DT).unwrap();
        let mut x = Vector2::zeros();
        for k in 0..100 {
            let u = (k as f64 * 0.1).cos();
            act.apply(u).unwrap();
            x = model.step(&x, u);
            assert_eq!(act.position(), x[0]);
        }
        act.reset();
        assert_eq!(act.position(), 0.0);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn applied_command_never_exceeds_limit(inputs in prop::collection::vec(-100.0f64..100.0, 1..50)) {
            let plant = PlantParams::default();
            let lugre = LuGreParams::default();
            let mut clamped = PlantState::default();
            let mut raw = PlantState::default();
            for &u in &inputs {
                prop_assert!(plant.saturate(u).abs() <= plant.u_max);
                raw = plant_step(&plant, Some(&lugre), raw, u, 1e-3);
                clamped = plant_step(&plant, Some(&lugre), clamped, plant.saturate(u), 1e-3);
                prop_assert_eq!(raw, clamped);
            }
        }

        #[test]
        fn identical_inputs_give_identical_trajectories(inputs in prop::collection::vec(-2.0f64..2.0, 1..40)) {
            let run = || {
                let mut act = Actuator::nonlinear(PlantParams::default(), Some(LuGreParams::default()), 1e-3);
                inputs.iter().map(|&u| { act.apply(u).unwrap(); act.position().to_bits() }).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
