use super::TrainError;
use serde::{Deserialize, Serialize};

pub const SMOOTHING_BETA: f64 = 0.98;
/// Stop once the smoothed loss exceeds this multiple of its minimum.
pub const DIVERGENCE_FACTOR: f64 = 4.0;
/// `suggest_lr` needs at least this many points.
pub const MIN_CURVE_POINTS: usize = 10;

/// Something that can take a training step at a given learning rate and be
/// rolled back afterwards.
pub trait LrProbe {
    type State;
    fn snapshot(&self) -> Self::State;
    fn restore(&mut self, state: Self::State);
    /// Loss of mini-batch `iter` before the update, then one step at `lr`.
    fn train_step(&mut self, iter: usize, lr: f64) -> Result<f64, TrainError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrFindConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub iters: usize,
}

impl Default for LrFindConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-7,
            lr_end: 10.0,
            iters: 100,
        }
    }
}

impl LrFindConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr_start > 0.0 && self.lr_end > self.lr_start && self.iters >= 2) {
            return Err(TrainError::InvalidPlan(format!("invalid lr range test {self:?}")));
        }
        Ok(())
    }

    /// Geometric sweep value at iteration `i`.
    pub fn lr_at(&self, i: usize) -> f64 {
        let frac = i as f64 / (self.iters - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrCurve {
    /// `(lr, smoothed loss)`, lr strictly increasing.
    pub points: Vec<(f64, f64)>,
    pub lr_start: f64,
}

impl LrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lr,smoothed_loss\n");
        for (lr, loss) in &self.points {
            s.push_str(&format!("{lr:e},{loss}\n"));
        }
        s
    }

    pub fn lr_at_min_loss(&self) -> Option<f64> {
        self.points
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|p| p.0)
    }
}

/// LR range test. The probe is restored to its pre-call state on every path.
pub fn lr_find<P: LrProbe>(probe: &mut P, config: &LrFindConfig) -> Result<LrCurve, TrainError> {
    config.validate()?;
    let saved = probe.snapshot();
    let result = sweep(probe, config);
    probe.restore(saved);
    result
}

fn sweep<P: LrProbe>(probe: &mut P, config: &LrFindConfig) -> Result<LrCurve, TrainError> {
    let mut points = Vec::with_capacity(config.iters);
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    for i in 0..config.iters {
        let lr = config.lr_at(i);
        let loss = probe.train_step(i, lr)?;
        if !loss.is_finite() {
            if i == 0 {
                return Err(TrainError::DivergedImmediately);
            }
            break;
        }
        avg = SMOOTHING_BETA * avg + (1.0 - SMOOTHING_BETA) * loss;
        let smoothed = avg / (1.0 - SMOOTHING_BETA.powi(i as i32 + 1));
        points.push((lr, smoothed));
        best = best.min(smoothed);
        if smoothed > DIVERGENCE_FACTOR * best {
            break;
        }
    }
    Ok(LrCurve {
        points,
        lr_start: config.lr_start,
    })
}

/// Half-width, in ln(lr), of the window used to estimate the slope: one
/// decade, narrowed to a quarter of the sweep on short sweeps.
fn slope_half_width(points: &[(f64, f64)]) -> f64 {
    let span = points[points.len() - 1].0.ln() - points[0].0.ln();
    std::f64::consts::LN_10.min(span / 4.0)
}

/// Least-squares slope of loss against ln(lr) over `points`.
fn fitted_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0.ln()).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(lr, loss) in points {
        let dx = lr.ln() - mx;
        sxy += dx * (loss - my);
        sxx += dx * dx;
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Steepest negative slope of loss against log-lr, divided by ten and
/// clamped to `[lr_start, lr at minimum loss]`.
///
/// The slope at each point is a least-squares fit over the points within
/// one window half-width on either side; only points whose whole window
/// lies inside the sweep are candidates.
pub fn suggest_lr(curve: &LrCurve) -> Result<f64, TrainError> {
    let p = &curve.points;
    if p.len() < MIN_CURVE_POINTS {
        return Err(TrainError::TooFewPoints(p.len()));
    }
    let half = slope_half_width(p);
    let (lo, hi) = (p[0].0.ln(), p[p.len() - 1].0.ln());
    let tol = 1e-9 * half.max(1.0);
    let mut steepest: Option<(usize, f64)> = None;
    let (mut a, mut b) = (0usize, 0usize);
    for (i, &(lr, _)) in p.iter().enumerate() {
        let x = lr.ln();
        if x - lo < half - tol || hi - x < half - tol {
            continue;
        }
        while p[a].0.ln() < x - half - tol {
            a += 1;
        }
        while b < p.len() && p[b].0.ln() <= x + half + tol {
            b += 1;
        }
        let slope = fitted_slope(&p[a..b]);
        if slope < 0.0 && steepest.is_none_or(|(_, s)| slope < s) {
            steepest = Some((i, slope));
        }
    }
    let (i, _) = steepest.ok_or(TrainError::NoDescent)?;
    let upper = curve.lr_at_min_loss().expect("non-empty curve");
    Ok((p[i].0 / 10.0).min(upper).max(curve.lr_start))
}
