//! Central finite-difference verification of the analytic head gradients.

use super::batch::Minibatch;
use super::head::{HeadGradients, ParamTensor, UncertaintyHead};
use super::{head_gradients, objective};
use crate::error::Result;

/// Below this magnitude a coordinate is compared on the absolute scale.
pub const ABS_SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    /// Coordinate with the largest error.
    pub worst: Option<(ParamTensor, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_error < tolerance
    }

    pub fn describe_worst(&self) -> String {
        match self.worst {
            Some((t, i)) => format!(
                "{}[{i}]: analytic {:e} vs numeric {:e} (error {:e})",
                t.name(),
                self.analytic,
                self.numeric,
                self.max_error
            ),
            None => "no coordinates".into(),
        }
    }
}

/// Relative error, or absolute error when both sides are tiny.
pub fn coordinate_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale > ABS_SCALE_FLOOR {
        diff / scale
    } else {
        diff
    }
}

/// Checks [`head_gradients`] against central differences with step `epsilon`.
pub fn gradient_check(
    head: &UncertaintyHead,
    batch: &Minibatch,
    epsilon: f64,
    weight_decay: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = head_gradients(head, &batch.inputs, &batch.mus, &batch.pairs, weight_decay)?;
    gradient_check_against(head, batch, &grads, epsilon, weight_decay)
}

/// Checks an arbitrary gradient record; used to confirm the check catches faults.
pub fn gradient_check_against(
    head: &UncertaintyHead,
    batch: &Minibatch,
    grads: &HeadGradients,
    epsilon: f64,
    weight_decay: f64,
) -> Result<GradCheckReport> {
    let mut probe = head.clone();
    let mut report = GradCheckReport {
        max_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for t in ParamTensor::ORDER {
        for i in 0..head.tensor(t).len() {
            let orig = head.tensor(t)[i];
            probe.tensor_mut(t)[i] = orig + epsilon;
            let up = objective(&probe, &batch.inputs, &batch.mus, &batch.pairs, weight_decay)?;
            probe.tensor_mut(t)[i] = orig - epsilon;
            let down = objective(&probe, &batch.inputs, &batch.mus, &batch.pairs, weight_decay)?;
            probe.tensor_mut(t)[i] = orig;

            let numeric = (up - down) / (2.0 * epsilon);
            let analytic = grads.tensor(t)[i];
            let err = coordinate_error(analytic, numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_error {
                report.max_error = err;
                report.worst = Some((t, i));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
