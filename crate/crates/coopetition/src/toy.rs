//! Gradient-descent simulator for the minimal model of two mechanisms that
//! share sub-circuits: learned vectors a, b, c, d against fixed targets, with
//! loss (mech1 + mu1) * mech2 + alpha * competition, where
//!   mech1 = || a* (x) b* (x) c*  -  a (x) b (x) c ||^2
//!   mech2 = || d* (x) b* (x) c*  -  d (x) b (x) c ||^2
//!   competition = || a (x) d ||^2
//! using scaled (per-element) Frobenius norms by default. Losses and
//! gradients use the closed forms ||x(x)y(x)z||^2 = |x|^2 |y|^2 |z|^2 and
//! <u(x)v(x)w, x(x)y(x)z> = (u.x)(v.y)(w.z).

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rngutil::rng_from;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    /// Dimensions of a, b, c, d.
    pub dims: [usize; 4],
    pub mu1: f64,
    pub alpha: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub scaled_norm: bool,
    pub record_norms: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dims: [20, 20, 20, 160],
            mu1: 0.1,
            alpha: 0.1,
            lr: 1.0,
            steps: 40_000,
            seed: 0,
            scaled_norm: true,
            record_norms: false,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("toy dims must all be at least 1"));
        }
        if self.mu1 < 0.0 || self.alpha < 0.0 {
            return Err(Error::invalid("mu1 and alpha must be nonnegative"));
        }
        Ok(())
    }
}

/// Learned vectors plus fixed targets.
#[derive(Clone, Debug)]
pub struct ToyState {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub a_star: Vec<f64>,
    pub b_star: Vec<f64>,
    pub c_star: Vec<f64>,
    pub d_star: Vec<f64>,
}

impl ToyState {
    /// All eight vectors i.i.d. standard normal.
    pub fn init(config: &ToyConfig) -> Self {
        let mut rng = rng_from(config.seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let [da, db, dc, dd] = config.dims;
        ToyState {
            a: draw(da),
            b: draw(db),
            c: draw(dc),
            d: draw(dd),
            a_star: draw(da),
            b_star: draw(db),
            c_star: draw(dc),
            d_star: draw(dd),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyLosses {
    pub total: f64,
    pub mech1: f64,
    pub mech2: f64,
    pub competition: f64,
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// || x* (x) b* (x) c* - x (x) b (x) c ||^2 / scale via the closed form.
#[allow(clippy::too_many_arguments)]
fn mech_loss(
    x: &[f64],
    xs: &[f64],
    b: &[f64],
    bs: &[f64],
    c: &[f64],
    cs: &[f64],
    scale: f64,
) -> f64 {
    let target = sq_norm(xs) * sq_norm(bs) * sq_norm(cs);
    let learned = sq_norm(x) * sq_norm(b) * sq_norm(c);
    let cross = dot(x, xs) * dot(b, bs) * dot(c, cs);
    (target + learned - 2.0 * cross) * scale
}

fn scales(config: &ToyConfig) -> (f64, f64, f64) {
    let [da, db, dc, dd] = config.dims;
    if config.scaled_norm {
        (
            1.0 / (da * db * dc) as f64,
            1.0 / (dd * db * dc) as f64,
            1.0 / (da * dd) as f64,
        )
    } else {
        (1.0, 1.0, 1.0)
    }
}

pub fn toy_loss(state: &ToyState, config: &ToyConfig) -> ToyLosses {
    let (s1, s2, s3) = scales(config);
    let mech1 = mech_loss(
        &state.a, &state.a_star, &state.b, &state.b_star, &state.c, &state.c_star, s1,
    );
    let mech2 = mech_loss(
        &state.d, &state.d_star, &state.b, &state.b_star, &state.c, &state.c_star, s2,
    );
    let competition = sq_norm(&state.a) * sq_norm(&state.d) * s3;
    let total = (mech1 + config.mu1) * mech2 + config.alpha * competition;
    ToyLosses { total, mech1, mech2, competition }
}

/// The a->0 plateau of mech1: scaled ||a* (x) b* (x) c*||^2, exact from the
/// targets.
pub fn mech1_plateau(state: &ToyState, config: &ToyConfig) -> f64 {
    let (s1, _, _) = scales(config);
    sq_norm(&state.a_star) * sq_norm(&state.b_star) * sq_norm(&state.c_star) * s1
}

/// The d->0 plateau of mech2 (the mirror-image quantity).
pub fn mech2_plateau(state: &ToyState, config: &ToyConfig) -> f64 {
    let (_, s2, _) = scales(config);
    sq_norm(&state.d_star) * sq_norm(&state.b_star) * sq_norm(&state.c_star) * s2
}

/// d(mech)/dx for the leading vector: 2*scale*(|b|^2 |c|^2 x - (b.bs)(c.cs) xs).
fn mech_grad_lead(x: &[f64], xs: &[f64], pb: f64, pc: f64, db_: f64, dc_: f64, scale: f64) -> Vec<f64> {
    let live = 2.0 * scale * pb * pc;
    let tgt = 2.0 * scale * db_ * dc_;
    x.iter().zip(xs).map(|(&xi, &xsi)| live * xi - tgt * xsi).collect()
}

/// Analytic gradients of the total loss w.r.t. (a, b, c, d).
pub fn toy_grads(state: &ToyState, config: &ToyConfig) -> [Vec<f64>; 4] {
    let (s1, s2, s3) = scales(config);
    let (pa, pb, pc, pd) = (
        sq_norm(&state.a),
        sq_norm(&state.b),
        sq_norm(&state.c),
        sq_norm(&state.d),
    );
    let (da_, db_, dc_, dd_) = (
        dot(&state.a, &state.a_star),
        dot(&state.b, &state.b_star),
        dot(&state.c, &state.c_star),
        dot(&state.d, &state.d_star),
    );
    let losses = toy_loss(state, config);
    let w1 = losses.mech2; // d total / d mech1
    let w2 = losses.mech1 + config.mu1; // d total / d mech2

    let dm1_da = mech_grad_lead(&state.a, &state.a_star, pb, pc, db_, dc_, s1);
    let dm2_dd = mech_grad_lead(&state.d, &state.d_star, pb, pc, db_, dc_, s2);
    let dm1_db = mech_grad_lead(&state.b, &state.b_star, pa, pc, da_, dc_, s1);
    let dm2_db = mech_grad_lead(&state.b, &state.b_star, pd, pc, dd_, dc_, s2);
    let dm1_dc = mech_grad_lead(&state.c, &state.c_star, pa, pb, da_, db_, s1);
    let dm2_dc = mech_grad_lead(&state.c, &state.c_star, pd, pb, dd_, db_, s2);

    let comp_a = 2.0 * s3 * pd * config.alpha;
    let comp_d = 2.0 * s3 * pa * config.alpha;

    let ga: Vec<f64> = state
        .a
        .iter()
        .zip(&dm1_da)
        .map(|(&ai, &g)| w1 * g + comp_a * ai)
        .collect();
    let gd: Vec<f64> = state
        .d
        .iter()
        .zip(&dm2_dd)
        .map(|(&di, &g)| w2 * g + comp_d * di)
        .collect();
    let gb: Vec<f64> = dm1_db
        .iter()
        .zip(&dm2_db)
        .map(|(&g1, &g2)| w1 * g1 + w2 * g2)
        .collect();
    let gc: Vec<f64> = dm1_dc
        .iter()
        .zip(&dm2_dc)
        .map(|(&g1, &g2)| w1 * g1 + w2 * g2)
        .collect();
    [ga, gb, gc, gd]
}

/// One simultaneous full-gradient descent step. Errors on non-finite values.
pub fn toy_step(state: &mut ToyState, config: &ToyConfig) -> Result<()> {
    let [ga, gb, gc, gd] = toy_grads(state, config);
    let lr = config.lr;
    for (x, g) in state.a.iter_mut().zip(&ga) {
        *x -= lr * g;
    }
    for (x, g) in state.b.iter_mut().zip(&gb) {
        *x -= lr * g;
    }
    for (x, g) in state.c.iter_mut().zip(&gc) {
        *x -= lr * g;
    }
    for (x, g) in state.d.iter_mut().zip(&gd) {
        *x -= lr * g;
    }
    let finite = state.a.iter().chain(&state.b).chain(&state.c).chain(&state.d).all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite { op: "toy_step".into() })
    }
}

#[derive(Clone, Debug)]
pub struct ToyTrace {
    pub config: ToyConfig,
    /// Losses recorded before each step, plus one final record.
    pub records: Vec<ToyLosses>,
    /// Vector norms per record when `record_norms` is on.
    pub norms: Vec<[f64; 4]>,
    pub diverged: bool,
    pub final_state: ToyState,
    pub mech1_plateau: f64,
    pub mech2_plateau: f64,
}

pub fn toy_run(config: &ToyConfig) -> Result<ToyTrace> {
    config.validate()?;
    let mut state = ToyState::init(config);
    let plateau1 = mech1_plateau(&state, config);
    let plateau2 = mech2_plateau(&state, config);
    let mut records = Vec::with_capacity(config.steps + 1);
    let mut norms = Vec::new();
    let mut diverged = false;
    for _ in 0..config.steps {
        let losses = toy_loss(&state, config);
        if !losses.total.is_finite() {
            diverged = true;
            break;
        }
        records.push(losses);
        if config.record_norms {
            norms.push([
                sq_norm(&state.a).sqrt(),
                sq_norm(&state.b).sqrt(),
                sq_norm(&state.c).sqrt(),
                sq_norm(&state.d).sqrt(),
            ]);
        }
        if toy_step(&mut state, config).is_err() {
            diverged = true;
            break;
        }
    }
    if !diverged {
        let losses = toy_loss(&state, config);
        if losses.total.is_finite() {
            records.push(losses);
        } else {
            diverged = true;
        }
        if config.record_norms && !diverged {
            norms.push([
                sq_norm(&state.a).sqrt(),
                sq_norm(&state.b).sqrt(),
                sq_norm(&state.c).sqrt(),
                sq_norm(&state.d).sqrt(),
            ]);
        }
    }
    Ok(ToyTrace {
        config: config.clone(),
        records,
        norms,
        diverged,
        final_state: state,
        mech1_plateau: plateau1,
        mech2_plateau: plateau2,
    })
}

/// Signature detector thresholds (config-exposed; defaults pinned).
#[derive(Clone, Copy, Debug)]
pub struct SignatureThresholds {
    /// A mechanism dips below this to count as a phase exit / deep learning.
    pub theta_low: f64,
    /// Final mech1 must exceed theta_high * plateau for the transience flag.
    pub theta_high: f64,
    /// Divot: some t after first descent with m2[t+w] > m2[t] * divot_factor.
    pub divot_window: usize,
    pub divot_factor: f64,
    /// First descent marker: m2 has dropped below this fraction of m2[0].
    pub descent_frac: f64,
}

impl Default for SignatureThresholds {
    fn default() -> Self {
        SignatureThresholds {
            theta_low: 0.5,
            theta_high: 0.9,
            divot_window: 100,
            divot_factor: 1.02,
            descent_frac: 0.98,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Signatures {
    pub exited_plateau: bool,
    pub transient: bool,
    pub divot: bool,
    pub mech1_persistent: bool,
    pub min_mech1: f64,
    pub final_mech1: f64,
    pub final_mech2: f64,
    pub final_competition: f64,
    pub mech1_plateau: f64,
    pub mech2_plateau: f64,
}

pub fn detect_signatures(trace: &ToyTrace, th: &SignatureThresholds) -> Signatures {
    let m1: Vec<f64> = trace.records.iter().map(|r| r.mech1).collect();
    let m2: Vec<f64> = trace.records.iter().map(|r| r.mech2).collect();
    let min_mech1 = m1.iter().copied().fold(f64::INFINITY, f64::min);
    let min_mech2 = m2.iter().copied().fold(f64::INFINITY, f64::min);
    let final_mech1 = *m1.last().unwrap_or(&f64::NAN);
    let final_mech2 = *m2.last().unwrap_or(&f64::NAN);
    let final_competition = trace.records.last().map(|r| r.competition).unwrap_or(f64::NAN);

    let exited_plateau = min_mech1 < th.theta_low || min_mech2 < th.theta_low;
    let transient =
        min_mech1 < th.theta_low && final_mech1 > th.theta_high * trace.mech1_plateau;

    // divot: local increase of mech2 after its first descent
    let mut divot = false;
    if let Some(descent_at) = m2.iter().position(|&v| v < th.descent_frac * m2[0]) {
        let w = th.divot_window;
        for t in descent_at..m2.len().saturating_sub(w) {
            if m2[t + w] > m2[t] * th.divot_factor {
                divot = true;
                break;
            }
        }
    }

    let mech1_persistent = final_mech1 < 0.05
        && (final_mech2 > m2[0] || final_mech2 > 0.9 * trace.mech2_plateau);

    Signatures {
        exited_plateau,
        transient,
        divot,
        mech1_persistent,
        min_mech1,
        final_mech1,
        final_mech2,
        final_competition,
        mech1_plateau: trace.mech1_plateau,
        mech2_plateau: trace.mech2_plateau,
    }
}

/// Run many configs (pure and independent; parallel across seeds).
pub fn toy_sweep(configs: &[ToyConfig]) -> Result<Vec<(ToyTrace, Signatures)>> {
    let th = SignatureThresholds::default();
    configs
        .par_iter()
        .map(|cfg| {
            let trace = toy_run(cfg)?;
            let sig = detect_signatures(&trace, &th);
            Ok((trace, sig))
        })
        .collect()
}

pub fn write_trace_csv(path: &Path, trace: &ToyTrace) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,mech1,mech2,competition,total")?;
    for (i, r) in trace.records.iter().enumerate() {
        writeln!(f, "{},{},{},{},{}", i, r.mech1, r.mech2, r.competition, r.total)?;
    }
    Ok(())
}

pub fn write_sweep_summary_csv(path: &Path, results: &[(ToyTrace, Signatures)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "seed,exited_plateau,transient,divot,mech1_persistent,min_mech1,final_mech1,final_mech2,final_competition,mech1_plateau,diverged"
    )?;
    for (trace, s) in results {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            trace.config.seed,
            s.exited_plateau,
            s.transient,
            s.divot,
            s.mech1_persistent,
            s.min_mech1,
            s.final_mech1,
            s.final_mech2,
            s.final_competition,
            s.mech1_plateau,
            trace.diverged,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ToyConfig {
        ToyConfig { dims: [3, 2, 2, 4], steps: 10, ..Default::default() }
    }

    #[test]
    fn loss_zero_at_mech2_optimum_with_a_zero() {
        // a = 0, b = b*, c = c*, d = d*: mech2 = 0, competition = 0, so
        // total = (mech1 + mu1) * 0 + 0 = 0 for any mu1, alpha.
        let config = tiny_config();
        let mut state = ToyState::init(&config);
        state.a.iter_mut().for_each(|v| *v = 0.0);
        state.b = state.b_star.clone();
        state.c = state.c_star.clone();
        state.d = state.d_star.clone();
        let l = toy_loss(&state, &config);
        assert_eq!(l.total, 0.0);
        assert_eq!(l.mech2, 0.0);
        assert_eq!(l.competition, 0.0);
        assert!(l.mech1 > 0.0);

        // gradient is zero there: a step leaves the state unchanged
        let before = state.clone();
        let mut config2 = config;
        config2.lr = 1.0;
        toy_step(&mut state, &config2).unwrap();
        assert_eq!(state.a, before.a);
        assert_eq!(state.b, before.b);
        assert_eq!(state.c, before.c);
        assert_eq!(state.d, before.d);
    }

    #[test]
    fn scalar_hand_computed_case() {
        // scalars, all targets 1, all learned 0, mu1 = 0.1, alpha = 0:
        // mech1 = mech2 = 1, total = (1 + 0.1) * 1 = 1.1
        let config = ToyConfig {
            dims: [1, 1, 1, 1],
            mu1: 0.1,
            alpha: 0.0,
            scaled_norm: true,
            ..Default::default()
        };
        let state = ToyState {
            a: vec![0.0],
            b: vec![0.0],
            c: vec![0.0],
            d: vec![0.0],
            a_star: vec![1.0],
            b_star: vec![1.0],
            c_star: vec![1.0],
            d_star: vec![1.0],
        };
        let l = toy_loss(&state, &config);
        assert!((l.mech1 - 1.0).abs() < 1e-15);
        assert!((l.mech2 - 1.0).abs() < 1e-15);
        assert!((l.total - 1.1).abs() < 1e-15);
    }

    #[test]
    fn trace_identity_holds_everywhere() {
        let config = ToyConfig { steps: 200, ..Default::default() };
        let trace = toy_run(&config).unwrap();
        assert!(!trace.diverged);
        for r in &trace.records {
            let recomposed = (r.mech1 + config.mu1) * r.mech2 + config.alpha * r.competition;
            assert!((recomposed - r.total).abs() <= 1e-10);
        }
    }

    #[test]
    fn swap_symmetry_mirrors_trajectories_exactly() {
        // with alpha = 0 and mu1 = 0, swapping (a, a*) <-> (d, d*) together
        // with the dim swap mirrors trajectories bitwise
        let config = ToyConfig {
            dims: [6, 4, 4, 9],
            mu1: 0.0,
            alpha: 0.0,
            lr: 0.3,
            steps: 50,
            seed: 5,
            ..Default::default()
        };
        let mut s1 = ToyState::init(&config);
        let swapped_config = ToyConfig { dims: [9, 4, 4, 6], ..config.clone() };
        let mut s2 = ToyState {
            a: s1.d.clone(),
            d: s1.a.clone(),
            a_star: s1.d_star.clone(),
            d_star: s1.a_star.clone(),
            b: s1.b.clone(),
            b_star: s1.b_star.clone(),
            c: s1.c.clone(),
            c_star: s1.c_star.clone(),
        };
        for _ in 0..config.steps {
            toy_step(&mut s1, &config).unwrap();
            toy_step(&mut s2, &swapped_config).unwrap();
        }
        assert_eq!(s1.a, s2.d);
        assert_eq!(s1.d, s2.a);
        assert_eq!(s1.b, s2.b);
        assert_eq!(s1.c, s2.c);
    }

    #[test]
    fn run_is_seed_deterministic() {
        let config = ToyConfig { steps: 100, ..Default::default() };
        let t1 = toy_run(&config).unwrap();
        let t2 = toy_run(&config).unwrap();
        assert_eq!(t1.records.last(), t2.records.last());
    }
}
