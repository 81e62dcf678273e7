//! Central finite-difference gradient checking.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;

/// Compare tape gradients of a scalar-valued function against central finite
/// differences.
///
/// `f` rebuilds the loss from scratch on the tape it is given; it must be a
/// pure function of the parameter values. Returns the maximum over all
/// parameter elements of `|analytic - central| / max(1, |analytic|)`. An
/// empty parameter set vacuously checks out at 0.
pub fn check_gradients<F>(f: F, params: &ParamSet, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Tensor>,
{
    if !(h > 0.0 && h <= 1e-3) {
        return Err(CoreError::Contract(alloc::format!(
            "step size h must lie in (0, 1e-3], got {h}"
        )));
    }
    if params.is_empty() {
        return Ok(0.0);
    }

    // Analytic gradients through the tape.
    let mut tracked = params.clone();
    let mut tape = Tape::new();
    tracked.watch_all(&mut tape);
    let loss = f(&mut tape, &tracked)?;
    if !loss.is_scalar() {
        return Err(CoreError::Contract(alloc::format!(
            "gradient check requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let grads = tape.backward(&loss)?;
    tracked.write_gradients(&grads);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut probe_tape = Tape::new();
        f(&mut probe_tape, p)?.value()
    };

    let names: Vec<String> = params.names().map(String::from).collect();
    let mut max_rel = 0.0f64;
    for name in &names {
        let analytic: Vec<f64> = tracked
            .get(name)?
            .grad()
            .expect("gradients were just written")
            .to_vec();
        for (i, &g) in analytic.iter().enumerate() {
            let mut probe = params.clone();
            probe.get_mut(name)?.nudge(i, h);
            let plus = eval(&probe)?;
            probe.get_mut(name)?.nudge(i, -2.0 * h);
            let minus = eval(&probe)?;
            let fd = (plus - minus) / (2.0 * h);
            let rel = crate::numerics::fmath::abs(g - fd)
                / f64::max(1.0, crate::numerics::fmath::abs(g));
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
