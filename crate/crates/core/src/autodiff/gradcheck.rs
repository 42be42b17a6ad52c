use super::tape::{Fault, Tape, Var};
use super::{AutodiffError, ParamStore};

/// The worst-agreeing component of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// One entry per parameter, in store order.
    pub per_param: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamError> {
        self.per_param
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_error < threshold
    }
}

/// Central-difference gradient checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDifference {
    pub step: f64,
    /// Applied to the tape that computes the analytic gradient only.
    pub fault: Option<Fault>,
}

impl Default for FiniteDifference {
    fn default() -> Self {
        FiniteDifference {
            step: 1e-5,
            fault: None,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

impl FiniteDifference {
    /// Compares tape gradients of `f` with `(f(p+h) - f(p-h)) / 2h` for every
    /// component of every parameter in `store`. Parameter values are restored
    /// afterwards; gradient accumulators hold the analytic gradient.
    pub fn check<F>(&self, store: &mut ParamStore, f: F) -> Result<GradCheckReport, AutodiffError>
    where
        F: Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
    {
        let h = self.step;
        store.zero_grad();
        let mut tape = match self.fault {
            Some(fault) => Tape::with_fault(fault),
            None => Tape::new(),
        };
        let loss = f(&mut tape, store)?;
        tape.backward(loss, store)?;

        let eval = |store: &ParamStore| -> Result<f64, AutodiffError> {
            let mut tape = Tape::new();
            let loss = f(&mut tape, store)?;
            tape.value(loss)
                .item()
                .ok_or_else(|| AutodiffError::NotScalarLoss(tape.value(loss).shape().to_vec()))
        };

        let ids: Vec<_> = store.ids().collect();
        let mut per_param = Vec::with_capacity(ids.len());
        for id in ids {
            let n = store.get(id).value.len();
            let mut worst = ParamError {
                name: store.get(id).name.clone(),
                index: 0,
                analytic: 0.0,
                numeric: 0.0,
                rel_error: 0.0,
            };
            for i in 0..n {
                let orig = store.get(id).value.data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + h;
                let plus = eval(store)?;
                store.get_mut(id).value.data_mut()[i] = orig - h;
                let minus = eval(store)?;
                store.get_mut(id).value.data_mut()[i] = orig;

                let numeric = (plus - minus) / (2.0 * h);
                let analytic = store.get(id).grad.data()[i];
                let err = relative_error(analytic, numeric);
                if err > worst.rel_error || i == 0 {
                    worst.index = i;
                    worst.analytic = analytic;
                    worst.numeric = numeric;
                    worst.rel_error = err;
                }
            }
            per_param.push(worst);
        }
        let max_rel_error = per_param.iter().map(|p| p.rel_error).fold(0.0, f64::max);
        Ok(GradCheckReport {
            max_rel_error,
            per_param,
        })
    }
}

/// [`FiniteDifference::check`] with step `h` and no fault.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    h: f64,
    f: F,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
{
    FiniteDifference {
        step: h,
        fault: None,
    }
    .check(store, f)
}
