//! The synthetic loss families.
//!
//! All values are reported relative to the clean minimum of the agent's risk,
//! so a local risk of zero means "at the clean minimizer". Offsets shift
//! values only; gradients and Hessians are unaffected.

use nalgebra::{DMatrix, DVector};

use super::DatasetShard;

/// Scalar two-basin well used along the first model coordinate.
///
/// Two parabolic basins joined by a C² quintic blend: the sharp basin
/// `½·sharp_curv·u²` around `u = 0` and the lifted flat basin
/// `flat_lift + ½·flat_curv·(u − flat)²` around `u = flat`, blended over
/// `[blend_lo, blend_hi]`. Both minima keep their exact curvatures, so
/// Hessian-trace ratios are exact by construction, and both basins are
/// genuinely deep (averaging shifted copies keeps the two-basin shape —
/// unlike a quartic, whose ratio constraint forces a paper-thin flat valley).
/// The second coordinate carries an independent quadratic of curvature
/// `cross`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleWell {
    pub sharp_curv: f64,
    pub flat_curv: f64,
    pub flat: f64,
    pub flat_lift: f64,
    pub cross: f64,
    /// Cubic coefficient of the sharp piece; a nonzero skew makes the
    /// Hessian vary near the sharp minimum (the short-term model's error
    /// source) and, when negative, softens the escape side.
    pub skew: f64,
    blend_lo: f64,
    blend_hi: f64,
    barrier: f64,
}

/// Quintic smootherstep and derivatives: C² at both ends.
fn smoother(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let b = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
        let db = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        let ddb = 60.0 * t * (1.0 - 3.0 * t + 2.0 * t * t);
        (b, db, ddb)
    }
}

impl DoubleWell {
    /// Build a well whose sharp/flat Hessian-trace ratio is exactly `ratio`:
    /// the flat curvature is `(sharp_curv + cross)/ratio − cross`.
    ///
    /// Panics if the parameters do not yield a two-basin shape (exactly one
    /// interior maximum between the minima).
    pub fn with_trace_ratio(
        sharp_curv: f64,
        cross: f64,
        flat: f64,
        flat_lift: f64,
        ratio: f64,
        skew: f64,
    ) -> Self {
        assert!(sharp_curv > 0.0 && cross > 0.0 && flat > 0.0 && ratio > 1.0);
        let flat_curv = (sharp_curv + cross) / ratio - cross;
        assert!(
            flat_curv > 0.0,
            "cross curvature {cross} too large for trace ratio {ratio}"
        );
        let mut well = DoubleWell {
            sharp_curv,
            flat_curv,
            flat,
            flat_lift,
            cross,
            skew,
            blend_lo: 0.25 * flat,
            blend_hi: 0.75 * flat,
            barrier: 0.0,
        };
        well.barrier = well.validate_two_basins();
        well
    }

    /// Scan for stationary points; assert min/max/min and return the barrier.
    fn validate_two_basins(&self) -> f64 {
        let grid = 4000;
        let lo = -0.75 * self.flat;
        let hi = 1.6 * self.flat;
        let mut crossings = Vec::new();
        let mut prev_u = lo;
        let mut prev_g = self.df(lo);
        for i in 1..=grid {
            let u = lo + (hi - lo) * i as f64 / grid as f64;
            let g = self.df(u);
            if prev_g == 0.0 {
                crossings.push(prev_u);
            } else if prev_g.signum() != g.signum() {
                let (mut a, mut b) = (prev_u, u);
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    if self.df(a).signum() == self.df(mid).signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                crossings.push(0.5 * (a + b));
            }
            prev_u = u;
            prev_g = g;
        }
        crossings.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        assert_eq!(
            crossings.len(),
            3,
            "well parameters do not give two basins (stationary points {crossings:?})"
        );
        assert!(self.ddf(crossings[0]) > 0.0 && self.ddf(crossings[2]) > 0.0);
        assert!(self.ddf(crossings[1]) < 0.0);
        crossings[1]
    }

    /// Position of the interior maximum separating the basins.
    pub fn barrier(&self) -> f64 {
        self.barrier
    }

    /// Barrier height above the sharp minimum.
    pub fn barrier_height(&self) -> f64 {
        self.f(self.barrier)
    }

    fn sharp_piece(&self, u: f64) -> (f64, f64, f64) {
        (
            0.5 * self.sharp_curv * u * u + self.skew * u * u * u,
            self.sharp_curv * u + 3.0 * self.skew * u * u,
            self.sharp_curv + 6.0 * self.skew * u,
        )
    }

    fn flat_piece(&self, u: f64) -> (f64, f64, f64) {
        let d = u - self.flat;
        (self.flat_lift + 0.5 * self.flat_curv * d * d, self.flat_curv * d, self.flat_curv)
    }

    /// Well value along the first coordinate, `f(0) = 0`.
    pub fn f(&self, u: f64) -> f64 {
        let (ps, _, _) = self.sharp_piece(u);
        let (pf, _, _) = self.flat_piece(u);
        let t = (u - self.blend_lo) / (self.blend_hi - self.blend_lo);
        let (b, _, _) = smoother(t);
        (1.0 - b) * ps + b * pf
    }

    pub fn df(&self, u: f64) -> f64 {
        let (ps, dps, _) = self.sharp_piece(u);
        let (pf, dpf, _) = self.flat_piece(u);
        let w = self.blend_hi - self.blend_lo;
        let t = (u - self.blend_lo) / w;
        let (b, db, _) = smoother(t);
        (1.0 - b) * dps + b * dpf + db / w * (pf - ps)
    }

    pub fn ddf(&self, u: f64) -> f64 {
        let (ps, dps, ddps) = self.sharp_piece(u);
        let (pf, dpf, ddpf) = self.flat_piece(u);
        let w = self.blend_hi - self.blend_lo;
        let t = (u - self.blend_lo) / w;
        let (b, db, ddb) = smoother(t);
        (1.0 - b) * ddps + b * ddpf + 2.0 * db / w * (dpf - dps) + ddb / (w * w) * (pf - ps)
    }

    pub fn trace_sharp(&self) -> f64 {
        self.sharp_curv + self.cross
    }

    pub fn trace_flat(&self) -> f64 {
        self.flat_curv + self.cross
    }
}

/// Parameters distinguishing the loss families.
#[derive(Debug, Clone)]
pub enum ModelKind {
    /// `Q = ½(y − xᵀw)²`; model and data dimensions coincide.
    RobustLinearRegression,
    /// `Q = ½(w−θ)ᵀH(w−θ) − (w−θ)ᵀC·x`; data enters linearly through `C`.
    QuadraticHeterogeneous {
        hessian: DMatrix<f64>,
        minimizer: DVector<f64>,
        coupling: DMatrix<f64>,
    },
    /// Two-basin landscape in `w ∈ ℝ²`, shifted by `shift`, with linear data
    /// coupling `wᵀC·x`.
    DoubleWell2d {
        well: DoubleWell,
        shift: DVector<f64>,
        coupling: DMatrix<f64>,
    },
}

/// An agent's loss over its data shard.
#[derive(Debug, Clone)]
pub struct LossModel {
    kind: ModelKind,
    shard: DatasetShard,
    offset: f64,
}

impl LossModel {
    pub fn robust_linear_regression(shard: DatasetShard) -> Self {
        let mut m = LossModel { kind: ModelKind::RobustLinearRegression, shard, offset: 0.0 };
        m.offset = m.clean_minimum_value();
        m
    }

    pub fn quadratic(
        hessian: DMatrix<f64>,
        minimizer: DVector<f64>,
        coupling: DMatrix<f64>,
        shard: DatasetShard,
    ) -> Self {
        assert_eq!(hessian.nrows(), minimizer.len());
        assert_eq!(coupling.nrows(), minimizer.len());
        assert_eq!(coupling.ncols(), shard.data_dim());
        let kind = ModelKind::QuadraticHeterogeneous { hessian, minimizer, coupling };
        let mut m = LossModel { kind, shard, offset: 0.0 };
        m.offset = m.clean_minimum_value();
        m
    }

    pub fn double_well(well: DoubleWell, shift: DVector<f64>, coupling: DMatrix<f64>, shard: DatasetShard) -> Self {
        assert_eq!(shift.len(), 2);
        assert_eq!(coupling.nrows(), 2);
        assert_eq!(coupling.ncols(), shard.data_dim());
        let kind = ModelKind::DoubleWell2d { well, shift, coupling };
        let mut m = LossModel { kind, shard, offset: 0.0 };
        m.offset = m.clean_minimum_value();
        m
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn shard(&self) -> &DatasetShard {
        &self.shard
    }

    pub fn model_dim(&self) -> usize {
        match &self.kind {
            ModelKind::RobustLinearRegression => self.shard.data_dim(),
            ModelKind::QuadraticHeterogeneous { minimizer, .. } => minimizer.len(),
            ModelKind::DoubleWell2d { .. } => 2,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.shard.data_dim()
    }

    pub fn supports_exact_attack(&self) -> bool {
        !matches!(self.kind, ModelKind::DoubleWell2d { .. })
    }

    /// Loss at an explicit input point (pass `x + δ` for perturbed values).
    pub fn loss_at(&self, w: &DVector<f64>, x: &DVector<f64>, y: f64) -> f64 {
        let raw = match &self.kind {
            ModelKind::RobustLinearRegression => {
                let r = y - x.dot(w);
                0.5 * r * r
            }
            ModelKind::QuadraticHeterogeneous { hessian, minimizer, coupling } => {
                let e = w - minimizer;
                0.5 * (hessian * &e).dot(&e) - e.dot(&(coupling * x))
            }
            ModelKind::DoubleWell2d { well, shift, coupling } => {
                let u = w[0] - shift[0];
                let v = w[1] - shift[1];
                well.f(u) + 0.5 * well.cross * v * v + w.dot(&(coupling * x))
            }
        };
        raw - self.offset
    }

    /// `∇_w Q` at an explicit input point.
    pub fn grad_w_at(&self, w: &DVector<f64>, x: &DVector<f64>, y: f64) -> DVector<f64> {
        match &self.kind {
            ModelKind::RobustLinearRegression => {
                let r = y - x.dot(w);
                -r * x
            }
            ModelKind::QuadraticHeterogeneous { hessian, minimizer, coupling } => {
                hessian * (w - minimizer) - coupling * x
            }
            ModelKind::DoubleWell2d { well, shift, coupling } => {
                let mut g = coupling * x;
                g[0] += well.df(w[0] - shift[0]);
                g[1] += well.cross * (w[1] - shift[1]);
                g
            }
        }
    }

    /// `∇_x Q` at an explicit input point (the attack direction source).
    pub fn grad_x_at(&self, w: &DVector<f64>, x: &DVector<f64>, _y: f64) -> DVector<f64> {
        match &self.kind {
            ModelKind::RobustLinearRegression => {
                let r = _y - x.dot(w);
                -r * w
            }
            ModelKind::QuadraticHeterogeneous { minimizer, coupling, .. } => {
                -(coupling.transpose() * (w - minimizer))
            }
            ModelKind::DoubleWell2d { coupling, .. } => coupling.transpose() * w,
        }
    }

    /// Hessian of the clean per-sample loss in `w` (input-independent for the
    /// quadratic and double-well kinds).
    pub fn clean_hessian_at(&self, w: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            ModelKind::RobustLinearRegression => x * x.transpose(),
            ModelKind::QuadraticHeterogeneous { hessian, .. } => hessian.clone(),
            ModelKind::DoubleWell2d { well, shift, .. } => DMatrix::from_row_slice(
                2,
                2,
                &[well.ddf(w[0] - shift[0]), 0.0, 0.0, well.cross],
            ),
        }
    }

    /// Clean empirical risk (shard average, offset applied).
    pub fn clean_risk(&self, w: &DVector<f64>) -> f64 {
        self.shard.samples().iter().map(|s| self.loss_at(w, &s.x, s.y)).sum::<f64>()
            / self.shard.len() as f64
    }

    /// Gradient of the clean empirical risk.
    pub fn clean_risk_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.model_dim());
        for s in self.shard.samples() {
            g += self.grad_w_at(w, &s.x, s.y);
        }
        g / self.shard.len() as f64
    }

    /// Value of the clean risk at its minimizer, before offsetting.
    fn clean_minimum_value(&self) -> f64 {
        match &self.kind {
            ModelKind::RobustLinearRegression => {
                // Least-squares solution via SVD handles rank deficiency.
                let n = self.shard.len();
                let d = self.shard.data_dim();
                let mut xt = DMatrix::zeros(n, d);
                let mut y = DVector::zeros(n);
                for (i, s) in self.shard.samples().iter().enumerate() {
                    xt.row_mut(i).copy_from(&s.x.transpose());
                    y[i] = s.y;
                }
                let w = xt
                    .clone()
                    .svd(true, true)
                    .solve(&y, 1e-12)
                    .expect("least-squares solve");
                let resid = xt * w - y;
                0.5 * resid.norm_squared() / n as f64
            }
            ModelKind::QuadraticHeterogeneous { hessian, coupling, .. } => {
                // min over e of ½eᵀHe − eᵀC·x̄ is −½ x̄ᵀCᵀH⁻¹Cx̄.
                let cx = coupling * self.shard.mean_x();
                let sol = hessian
                    .clone()
                    .cholesky()
                    .expect("quadratic Hessian must be positive definite")
                    .solve(&cx);
                -0.5 * cx.dot(&sol)
            }
            ModelKind::DoubleWell2d { well, shift, coupling } => {
                let tilt = coupling * self.shard.mean_x();
                // Separable: the second coordinate is a tilted quadratic.
                let v_star = shift[1] - tilt[1] / well.cross;
                let quad_part = 0.5 * well.cross * (v_star - shift[1]).powi(2) + v_star * tilt[1];
                // First coordinate: minimize f(u) + (u + shift_0)·t over the
                // stationary points of the tilted cubic derivative.
                let t = tilt[0];
                let g = |u: f64| well.df(u) + t;
                let value = |u: f64| well.f(u) + (u + shift[0]) * t;
                let mut lo = -well.flat;
                let mut hi = 2.0 * well.flat;
                while g(lo) > 0.0 {
                    lo -= well.flat;
                }
                while g(hi) < 0.0 {
                    hi += well.flat;
                }
                let mut best = f64::INFINITY;
                let grid = 400;
                let mut prev_u = lo;
                let mut prev_g = g(lo);
                for i in 1..=grid {
                    let u = lo + (hi - lo) * i as f64 / grid as f64;
                    let gu = g(u);
                    if prev_g == 0.0 {
                        best = best.min(value(prev_u));
                    } else if prev_g.signum() != gu.signum() {
                        let mut a = prev_u;
                        let mut b = u;
                        for _ in 0..80 {
                            let mid = 0.5 * (a + b);
                            if g(a).signum() == g(mid).signum() {
                                a = mid;
                            } else {
                                b = mid;
                            }
                        }
                        best = best.min(value(0.5 * (a + b)));
                    }
                    prev_u = u;
                    prev_g = gu;
                }
                best + quad_part
            }
        }
    }
}
