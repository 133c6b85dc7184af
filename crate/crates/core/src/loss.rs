//! Per-point loss models: values, local gradient sets and class prediction.
//!
//! A loss `l_i(w)` is piecewise smooth. At a given `w` a point exposes the
//! set of pieces active there ([`Pieces`]); the absolute loss has two pieces
//! (`+x` and `-x`) and both are active at a kink, the softmax loss is smooth
//! and always reports the single piece `0`. Solvers combine pieces into
//! selection gradients without materializing per-point gradient vectors.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::par;

/// Number of classes for the multiclass softmax model.
pub const NUM_CLASSES: usize = 10;

/// Value and local gradients of one loss at one weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub value: f64,
    pub local_gradients: Vec<Vec<f64>>,
}

/// Indices of the smooth pieces active for a point (one or two).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pieces {
    ids: [u8; 2],
    len: u8,
}

impl Pieces {
    pub const fn one(id: u8) -> Self {
        Pieces { ids: [id, 0], len: 1 }
    }

    pub const fn two(a: u8, b: u8) -> Self {
        Pieces { ids: [a, b], len: 2 }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, k: usize) -> u8 {
        debug_assert!(k < self.len());
        self.ids[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        self.ids[..self.len()].iter().copied()
    }
}

/// A family of per-point losses `l_i(w)`, `i = 0..num_points()`.
pub trait LossModel: Sync {
    fn num_params(&self) -> usize;

    fn num_points(&self) -> usize;

    /// Loss value and the pieces active at `w`.
    fn point(&self, w: &[f64], i: usize) -> Result<(f64, Pieces)>;

    /// `out += scale * grad_w piece(w)` for piece `piece` of point `i`.
    fn add_piece_gradient(&self, w: &[f64], i: usize, piece: u8, scale: f64, out: &mut [f64]);

    fn loss(&self, w: &[f64], i: usize) -> Result<f64> {
        self.point(w, i).map(|(v, _)| v)
    }

    /// Loss values of the listed points, in order.
    fn losses(&self, w: &[f64], indices: &[usize]) -> Result<Vec<f64>> {
        par::map_slice(indices, |&i| self.loss(w, i)).into_iter().collect()
    }

    /// Values and active pieces of the listed points, in order.
    fn points(&self, w: &[f64], indices: &[usize]) -> Result<Vec<(f64, Pieces)>> {
        par::map_slice(indices, |&i| self.point(w, i)).into_iter().collect()
    }

    /// Losses of every point.
    fn all_losses(&self, w: &[f64]) -> Result<Vec<f64>> {
        par::map_range(self.num_points(), |i| self.loss(w, i))
            .into_iter()
            .collect()
    }

    fn evaluate(&self, w: &[f64], i: usize) -> Result<LossEvaluation> {
        let (value, pieces) = self.point(w, i)?;
        let local_gradients = pieces
            .iter()
            .map(|p| {
                let mut g = vec![0.0; self.num_params()];
                self.add_piece_gradient(w, i, p, 1.0, &mut g);
                g
            })
            .collect();
        Ok(LossEvaluation {
            value,
            local_gradients,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative kink tolerance `1e-8 * (1 + |w.x| + |y|)`.
pub fn default_kink_tol(prediction: f64, y: f64) -> f64 {
    1e-8 * (1.0 + prediction.abs() + y.abs())
}

/// Piece id of the `+x` branch of the absolute loss.
pub const ABS_POSITIVE: u8 = 0;
/// Piece id of the `-x` branch of the absolute loss.
pub const ABS_NEGATIVE: u8 = 1;

fn abs_pieces(residual: f64, kink_tol: f64) -> Pieces {
    if residual.abs() <= kink_tol {
        Pieces::two(ABS_POSITIVE, ABS_NEGATIVE)
    } else if residual > 0.0 {
        Pieces::one(ABS_POSITIVE)
    } else {
        Pieces::one(ABS_NEGATIVE)
    }
}

/// Absolute loss `|w.x - y|` with its local gradients.
///
/// Within `kink_tol` of the kink both `+x` and `-x` are returned.
pub fn abs_loss_eval(w: &[f64], x: &[f64], y: f64, kink_tol: f64) -> Result<LossEvaluation> {
    if w.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    if !(kink_tol >= 0.0) {
        return Err(Error::invalid("kink_tol must be nonnegative"));
    }
    let r = dot(w, x) - y;
    let local_gradients = abs_pieces(r, kink_tol)
        .iter()
        .map(|p| {
            let s = if p == ABS_POSITIVE { 1.0 } else { -1.0 };
            x.iter().map(|v| s * v).collect()
        })
        .collect();
    Ok(LossEvaluation {
        value: r.abs(),
        local_gradients,
    })
}

fn check_softmax_shapes(w: &[f64], x: &[f64]) -> Result<()> {
    if w.len() != NUM_CLASSES * x.len() {
        return Err(Error::DimensionMismatch {
            expected: NUM_CLASSES * x.len(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Logits `W x` for the row-major `10 x dim` weight layout.
fn logits(w: &[f64], x: &[f64]) -> [f64; NUM_CLASSES] {
    let dim = x.len();
    let mut z = [0.0; NUM_CLASSES];
    for (c, zc) in z.iter_mut().enumerate() {
        *zc = dot(&w[c * dim..(c + 1) * dim], x);
    }
    z
}

/// Max-shifted softmax probabilities and the log-partition of the shifted
/// logits. Errors on non-finite logits.
fn softmax(z: &[f64; NUM_CLASSES]) -> Result<([f64; NUM_CLASSES], f64, f64)> {
    if let Some(c) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: c,
            what: "logit",
        });
    }
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (pc, zc) in p.iter_mut().zip(z) {
        *pc = (zc - zmax).exp();
        sum += *pc;
    }
    for pc in &mut p {
        *pc /= sum;
    }
    Ok((p, zmax, sum.ln()))
}

fn softmax_value(z: &[f64; NUM_CLASSES], class: usize) -> Result<(f64, [f64; NUM_CLASSES])> {
    let (p, zmax, log_sum) = softmax(z)?;
    // -log p_c = log sum exp(z - zmax) - (z_c - zmax)
    let value = (log_sum - (z[class] - zmax)).max(0.0);
    Ok((value, p))
}

/// Multiclass softmax (cross-entropy) loss of class `class` with gradient
/// `(p - onehot(class)) (x) x` in the row-major weight layout.
pub fn softmax_loss_eval(w: &[f64], x: &[f64], class: usize) -> Result<LossEvaluation> {
    check_softmax_shapes(w, x)?;
    if class >= NUM_CLASSES {
        return Err(Error::invalid(format!("class index {class} out of range")));
    }
    let z = logits(w, x);
    let (value, p) = softmax_value(&z, class)?;
    let mut g = vec![0.0; w.len()];
    add_softmax_gradient(&p, class, x, 1.0, &mut g);
    Ok(LossEvaluation {
        value,
        local_gradients: vec![g],
    })
}

fn add_softmax_gradient(p: &[f64; NUM_CLASSES], class: usize, x: &[f64], scale: f64, out: &mut [f64]) {
    let dim = x.len();
    for c in 0..NUM_CLASSES {
        let coef = scale * (p[c] - if c == class { 1.0 } else { 0.0 });
        if coef == 0.0 {
            continue;
        }
        for (o, xj) in out[c * dim..(c + 1) * dim].iter_mut().zip(x) {
            *o += coef * xj;
        }
    }
}

/// Argmax of `W x`; ties go to the lowest class index.
pub fn predict_class(w: &[f64], x: &[f64]) -> Result<usize> {
    check_softmax_shapes(w, x)?;
    let z = logits(w, x);
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if z[c] > z[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Trimmed linear regression with absolute loss over a real-target dataset.
#[derive(Debug, Clone, Copy)]
pub struct AbsRegression<'a> {
    data: &'a LabeledDataset,
}

impl<'a> AbsRegression<'a> {
    pub fn new(data: &'a LabeledDataset) -> Result<Self> {
        if !data.targets().is_real() {
            return Err(Error::invalid("absolute-loss regression needs real targets"));
        }
        Ok(AbsRegression { data })
    }

    pub fn residual(&self, w: &[f64], i: usize) -> f64 {
        dot(w, self.data.row(i)) - self.data.target(i)
    }
}

impl LossModel for AbsRegression<'_> {
    fn num_params(&self) -> usize {
        self.data.dim()
    }

    fn num_points(&self) -> usize {
        self.data.len()
    }

    fn point(&self, w: &[f64], i: usize) -> Result<(f64, Pieces)> {
        let pred = dot(w, self.data.row(i));
        let y = self.data.target(i);
        let r = pred - y;
        if !r.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                what: "residual",
            });
        }
        Ok((r.abs(), abs_pieces(r, default_kink_tol(pred, y))))
    }

    fn loss(&self, w: &[f64], i: usize) -> Result<f64> {
        let r = self.residual(w, i);
        if !r.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                what: "residual",
            });
        }
        Ok(r.abs())
    }

    fn add_piece_gradient(&self, _w: &[f64], i: usize, piece: u8, scale: f64, out: &mut [f64]) {
        let s = if piece == ABS_POSITIVE { scale } else { -scale };
        for (o, xj) in out.iter_mut().zip(self.data.row(i)) {
            *o += s * xj;
        }
    }
}

/// Multiclass softmax classification over a class-target dataset.
#[derive(Debug, Clone, Copy)]
pub struct SoftmaxClassifier<'a> {
    data: &'a LabeledDataset,
}

impl<'a> SoftmaxClassifier<'a> {
    pub fn new(data: &'a LabeledDataset) -> Result<Self> {
        if data.targets().is_real() {
            return Err(Error::invalid("softmax classification needs class targets"));
        }
        Ok(SoftmaxClassifier { data })
    }
}

impl LossModel for SoftmaxClassifier<'_> {
    fn num_params(&self) -> usize {
        NUM_CLASSES * self.data.dim()
    }

    fn num_points(&self) -> usize {
        self.data.len()
    }

    fn point(&self, w: &[f64], i: usize) -> Result<(f64, Pieces)> {
        let z = logits(w, self.data.row(i));
        let (value, _) = softmax_value(&z, self.data.class(i)).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                index: i,
                what: "logit",
            },
            other => other,
        })?;
        Ok((value, Pieces::one(0)))
    }

    fn add_piece_gradient(&self, w: &[f64], i: usize, _piece: u8, scale: f64, out: &mut [f64]) {
        let x = self.data.row(i);
        let z = logits(w, x);
        if let Ok((p, _, _)) = softmax(&z) {
            add_softmax_gradient(&p, self.data.class(i), x, scale, out);
        }
    }
}

/// Affine losses `l_i(w) = a_i . w + c_i`, handy for constructing
/// objectives with known active-set geometry.
#[derive(Debug, Clone)]
pub struct AffineLosses {
    pub slopes: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl LossModel for AffineLosses {
    fn num_params(&self) -> usize {
        self.slopes.first().map_or(0, Vec::len)
    }

    fn num_points(&self) -> usize {
        self.intercepts.len()
    }

    fn point(&self, w: &[f64], i: usize) -> Result<(f64, Pieces)> {
        Ok((dot(&self.slopes[i], w) + self.intercepts[i], Pieces::one(0)))
    }

    fn add_piece_gradient(&self, _w: &[f64], i: usize, _piece: u8, scale: f64, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(&self.slopes[i]) {
            *o += scale * a;
        }
    }
}
