//! Weighted composite detection loss.
//!
//! ```text
//! L = α·L_cls + β·L_obj + (3 − α − β)·L_bbox
//! ```
//!
//! * `L_cls`: softmax cross-entropy over class logits, mean over positive slots.
//! * `L_obj`: binary cross-entropy on objectness logits, mean over all slots.
//! * `L_bbox`: squared error on `(tx, ty, tw, th)`, mean over the `4·P`
//!   offset entries of the `P` positive slots.
//!
//! A term whose support is empty contributes 0. Gradients are closed-form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::{log_sum_exp, sigmoid, softmax, softplus, Real};
use crate::yolo_head::{cell_of, encode_box, AnchorSet, GridTensor, BOX_CHANNELS};

/// Sum of the three loss coefficients.
const COEFFICIENT_TOTAL: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> LossWeights<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.alpha >= T::zero()
            && self.beta >= T::zero()
            && self.alpha + self.beta <= T::lit(COEFFICIENT_TOTAL);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "loss weights alpha={} beta={} must be nonnegative with alpha + beta <= 3",
                self.alpha, self.beta
            )))
        }
    }

    /// Coefficient of the box term, `3 − α − β`.
    pub fn bbox_coefficient(&self) -> T {
        T::lit(COEFFICIENT_TOTAL) - self.alpha - self.beta
    }
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(1.25),
            beta: T::lit(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents<T> {
    pub cls: T,
    pub obj: T,
    pub bbox: T,
}

impl<T: Real> LossComponents<T> {
    pub fn new(cls: T, obj: T, bbox: T) -> Self {
        Self { cls, obj, bbox }
    }
}

pub fn weighted_loss<T: Real>(c: &LossComponents<T>, w: &LossWeights<T>) -> Result<T> {
    w.validate()?;
    Ok(w.alpha * c.cls + w.beta * c.obj + w.bbox_coefficient() * c.bbox)
}

/// Regression and class targets for one positive slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTarget<T> {
    pub offsets: [T; 4],
    pub class_id: usize,
    /// Index of the ground truth in the list given to [`assign_targets`].
    pub truth_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment<T> {
    pub grid_size: usize,
    pub boxes_per_cell: usize,
    pub num_classes: usize,
    /// One entry per `(row, col, box)` slot, in grid order; `None` is a negative.
    pub slots: Vec<Option<SlotTarget<T>>>,
    /// Ground truths that lost their slot to a larger one.
    pub collisions: usize,
}

impl<T: Real> TargetAssignment<T> {
    pub fn positives(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    fn slot_index(&self, row: usize, col: usize, slot: usize) -> usize {
        (row * self.grid_size + col) * self.boxes_per_cell + slot
    }

    pub fn get(&self, row: usize, col: usize, slot: usize) -> Option<&SlotTarget<T>> {
        self.slots[self.slot_index(row, col, slot)].as_ref()
    }
}

/// Assigns each ground truth to the cell holding its center and to the
/// anchor whose shape overlaps it most.
///
/// When two truths land in the same slot the larger one is kept (the
/// earlier one on equal area) and the collision is counted.
pub fn assign_targets<T: Real>(
    truth: &[(BBox<T>, usize)],
    grid_size: usize,
    anchors: &AnchorSet<T>,
    num_classes: usize,
) -> Result<TargetAssignment<T>> {
    if grid_size == 0 {
        return Err(Error::config("grid size must be at least 1"));
    }
    let b = anchors.len();
    let mut out = TargetAssignment {
        grid_size,
        boxes_per_cell: b,
        num_classes,
        slots: vec![None; grid_size * grid_size * b],
        collisions: 0,
    };
    let mut areas = vec![T::zero(); out.slots.len()];

    for (i, (bbox, class_id)) in truth.iter().enumerate() {
        if !bbox.is_valid() {
            return Err(Error::InvalidAnnotation(format!(
                "truth {i} box {bbox:?} is not a valid unit box"
            )));
        }
        if bbox.width() <= T::zero() || bbox.height() <= T::zero() {
            return Err(Error::InvalidAnnotation(format!("truth {i} has zero width or height")));
        }
        if *class_id >= num_classes {
            return Err(Error::InvalidAnnotation(format!(
                "truth {i} class {class_id} outside {num_classes} classes"
            )));
        }
        let (cx, cy) = bbox.center();
        let (w, h) = (bbox.width(), bbox.height());
        let (row, col) = cell_of(cx, cy, grid_size);
        let slot = anchors.best_match(w, h);
        let idx = out.slot_index(row, col, slot);
        let target = SlotTarget {
            offsets: encode_box((cx, cy), (w, h), (row, col), grid_size, anchors.get(slot)),
            class_id: *class_id,
            truth_index: i,
        };
        let area = bbox.area();
        match out.slots[idx] {
            None => {
                out.slots[idx] = Some(target);
                areas[idx] = area;
            }
            Some(_) => {
                out.collisions += 1;
                if area > areas[idx] {
                    out.slots[idx] = Some(target);
                    areas[idx] = area;
                }
            }
        }
    }
    Ok(out)
}

fn check_shapes<T: Real>(pred: &GridTensor<T>, targets: &TargetAssignment<T>) -> Result<()> {
    let same = pred.grid_size == targets.grid_size
        && pred.boxes_per_cell == targets.boxes_per_cell
        && pred.num_classes == targets.num_classes
        && pred.values.len() == pred.slot_count() * pred.channels();
    if same {
        Ok(())
    } else {
        Err(Error::config(format!(
            "prediction grid {}x{}x{}x{} does not match targets {}x{}x{}x{}",
            pred.grid_size,
            pred.grid_size,
            pred.boxes_per_cell,
            pred.channels(),
            targets.grid_size,
            targets.grid_size,
            targets.boxes_per_cell,
            BOX_CHANNELS + targets.num_classes
        )))
    }
}

pub fn loss_components<T: Real>(pred: &GridTensor<T>, targets: &TargetAssignment<T>) -> Result<LossComponents<T>> {
    check_shapes(pred, targets)?;
    let ch = pred.channels();
    let mut cls = T::zero();
    let mut obj = T::zero();
    let mut bbox = T::zero();
    for (raw, target) in pred.values.chunks_exact(ch).zip(&targets.slots) {
        let o = raw[4];
        match target {
            Some(t) => {
                // BCE with label 1: softplus(o) − o
                obj += softplus(o) - o;
                let logits = &raw[BOX_CHANNELS..];
                cls += log_sum_exp(logits) - logits[t.class_id];
                bbox += raw[..4]
                    .iter()
                    .zip(&t.offsets)
                    .map(|(&p, &q)| (p - q) * (p - q))
                    .sum::<T>();
            }
            None => obj += softplus(o),
        }
    }
    let positives = targets.positives();
    let slots = targets.slots.len();
    let mean = |total: T, n: usize| if n == 0 { T::zero() } else { total / T::of_usize(n) };
    Ok(LossComponents {
        cls: mean(cls, positives),
        obj: mean(obj, slots),
        bbox: mean(bbox, 4 * positives),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation<T> {
    pub components: LossComponents<T>,
    pub total: T,
    /// `∂L/∂pred`, laid out like `pred.values`.
    pub gradient: Vec<T>,
}

/// Weighted loss together with its analytic gradient.
pub fn weighted_loss_with_gradient<T: Real>(
    pred: &GridTensor<T>,
    targets: &TargetAssignment<T>,
    weights: &LossWeights<T>,
) -> Result<LossEvaluation<T>> {
    weights.validate()?;
    let components = loss_components(pred, targets)?;
    let total = weighted_loss(&components, weights)?;

    let ch = pred.channels();
    let positives = targets.positives();
    let slots = targets.slots.len();
    let obj_scale = if slots == 0 {
        T::zero()
    } else {
        weights.beta / T::of_usize(slots)
    };
    let (cls_scale, box_scale) = if positives == 0 {
        (T::zero(), T::zero())
    } else {
        let p = T::of_usize(positives);
        (
            weights.alpha / p,
            weights.bbox_coefficient() * T::lit(2.0) / (T::lit(4.0) * p),
        )
    };

    let mut gradient = vec![T::zero(); pred.values.len()];
    for ((raw, grad), target) in pred
        .values
        .chunks_exact(ch)
        .zip(gradient.chunks_exact_mut(ch))
        .zip(&targets.slots)
    {
        let label = if target.is_some() { T::one() } else { T::zero() };
        grad[4] = obj_scale * (sigmoid(raw[4]) - label);
        if let Some(t) = target {
            for k in 0..4 {
                grad[k] = box_scale * (raw[k] - t.offsets[k]);
            }
            let probs = softmax(&raw[BOX_CHANNELS..]);
            for (j, p) in probs.into_iter().enumerate() {
                let onehot = if j == t.class_id { T::one() } else { T::zero() };
                grad[BOX_CHANNELS + j] = cls_scale * (p - onehot);
            }
        }
    }
    Ok(LossEvaluation {
        components,
        total,
        gradient,
    })
}

/// Result of comparing the analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub entries: usize,
}

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is exactly zero compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference verification of [`weighted_loss_with_gradient`].
pub fn check_gradient(
    pred: &GridTensor<f64>,
    targets: &TargetAssignment<f64>,
    weights: &LossWeights<f64>,
    step: f64,
) -> Result<GradientCheck> {
    let eval = weighted_loss_with_gradient(pred, targets, weights)?;
    let mut probe = pred.clone();
    let mut worst = (0.0, 0);
    for i in 0..pred.values.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + step;
        let up = weighted_loss(&loss_components(&probe, targets)?, weights)?;
        probe.values[i] = orig - step;
        let down = weighted_loss(&loss_components(&probe, targets)?, weights)?;
        probe.values[i] = orig;
        let err = relative_error(eval.gradient[i], (up - down) / (2.0 * step));
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst.0,
        worst_index: worst.1,
        entries: pred.values.len(),
    })
}

/// A random prediction grid with random ground truth, for gradient checks.
pub fn random_problem(
    seed: u64,
    grid_size: usize,
    anchors: &AnchorSet<f64>,
    num_classes: usize,
) -> Result<(GridTensor<f64>, TargetAssignment<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = GridTensor::zeros(grid_size, anchors.len(), num_classes);
    for v in grid.values.iter_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    let n_truth = rng.random_range(1..=3);
    let truth: Vec<(BBox<f64>, usize)> = (0..n_truth)
        .map(|_| {
            let w = rng.random_range(0.05..0.5);
            let h = rng.random_range(0.05..0.5);
            let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
            let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
            (BBox::from_center(cx, cy, w, h), rng.random_range(0..num_classes))
        })
        .collect();
    let targets = assign_targets(&truth, grid_size, anchors, num_classes)?;
    Ok((grid, targets))
}
