use super::{NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

/// Anything that owns a [`ParamStore`] and can be evaluated with it.
pub trait HasParams {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl HasParams for ParamStore {
    fn params(&self) -> &ParamStore {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self
    }
}

fn loss_value<M, E, F>(model: &M, f: &mut F) -> Result<f64, E>
where
    F: FnMut(&mut Tape, &M) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, model)?;
    Ok(tape.value(loss).item())
}

fn analytic_grads<M: HasParams, E, F>(model: &mut M, f: &mut F) -> Result<Vec<Tensor>, E>
where
    F: FnMut(&mut Tape, &M) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let saved: Vec<Tensor> = model.params().iter().map(|(_, p)| p.grad.clone()).collect();
    model.params_mut().zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, model)?;
    tape.backward(loss, model.params_mut())?;
    let analytic = model.params().iter().map(|(_, p)| p.grad.clone()).collect();
    for (p, g) in model.params_mut().iter_mut().zip(saved) {
        p.grad = g;
    }
    Ok(analytic)
}

fn set_entry<M: HasParams>(model: &mut M, param: ParamId, i: usize, v: f64) {
    model.params_mut().get_mut(param).value.data_mut()[i] = v;
}

fn check_entries<M: HasParams, E, F>(
    model: &mut M,
    param: ParamId,
    analytic: &Tensor,
    step: f64,
    f: &mut F,
) -> Result<(f64, usize), E>
where
    F: FnMut(&mut Tape, &M) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let mut worst = (0.0, 0);
    for i in 0..analytic.numel() {
        let original = model.params().value(param).data()[i];
        set_entry(model, param, i, original + step);
        let plus = loss_value(model, f);
        set_entry(model, param, i, original - step);
        let minus = loss_value(model, f);
        set_entry(model, param, i, original);
        let (plus, minus) = (plus?, minus?);
        for value in [plus, minus] {
            if !value.is_finite() {
                return Err(NumericsError::NonFinite {
                    param: model.params().get(param).name.clone(),
                    entry: i,
                    value,
                }
                .into());
            }
        }
        let central = (plus - minus) / (2.0 * step);
        let exact = analytic.data()[i];
        let rel = (exact - central).abs() / exact.abs().max(central.abs()).max(1e-8);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(worst)
}

/// Compares the tape gradient of `f` with respect to `param` against central
/// differences. Returns the maximum relative error over the parameter's entries:
/// `|analytic - cd| / max(|analytic|, |cd|, 1e-8)`.
///
/// Parameter gradients held by the model are left untouched.
pub fn grad_check<M: HasParams, E, F>(model: &mut M, param: ParamId, step: f64, mut f: F) -> Result<f64, E>
where
    F: FnMut(&mut Tape, &M) -> Result<Var, E>,
    E: From<NumericsError>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(NumericsError::InvalidStep(step).into());
    }
    let analytic = analytic_grads(model, &mut f)?;
    let (worst, _) = check_entries(model, param, &analytic[param.index()], step, &mut f)?;
    Ok(worst)
}

/// Result of [`grad_check_all`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_entry: usize,
}

/// Runs [`grad_check`] over every parameter with a single analytic pass.
pub fn grad_check_all<M: HasParams, E, F>(model: &mut M, step: f64, mut f: F) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape, &M) -> Result<Var, E>,
    E: From<NumericsError>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(NumericsError::InvalidStep(step).into());
    }
    let analytic = analytic_grads(model, &mut f)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_entry: 0,
    };
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        let (err, entry) = check_entries(model, id, &analytic[id.index()], step, &mut f)?;
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report = GradCheckReport {
                max_rel_error: err,
                worst_param: model.params().get(id).name.clone(),
                worst_entry: entry,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Tensor::new(vec![2, 2], vec![0.3, -1.7, 2.5, 0.9]).unwrap())
            .unwrap();
        let err = grad_check::<_, NumericsError, _>(&mut store, w, 1e-5, |tape, store| {
            let wv = tape.param(store, w);
            let sq = tape.mul(wv, wv)?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(&[1])).unwrap();
        let res = grad_check::<_, NumericsError, _>(&mut store, w, 0.0, |tape, store| {
            let wv = tape.param(store, w);
            tape.sum(wv)
        });
        assert_eq!(res, Err(NumericsError::InvalidStep(0.0)));
    }

    #[test]
    fn non_finite_perturbation_names_entry() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![1, 2], vec![1.0, 709.78]).unwrap()).unwrap();
        let res = grad_check::<_, NumericsError, _>(&mut store, w, 1e-2, |tape, store| {
            let wv = tape.param(store, w);
            let e = tape.exp(wv)?;
            tape.sum(e)
        });
        match res {
            Err(NumericsError::NonFinite { param, entry, .. }) => {
                assert_eq!(param, "w");
                assert_eq!(entry, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn preserves_existing_grads() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[3], 0.5)).unwrap();
        store.get_mut(w).grad = Tensor::full(&[3], 7.0);
        grad_check::<_, NumericsError, _>(&mut store, w, 1e-5, |tape, store| {
            let wv = tape.param(store, w);
            let t = tape.tanh(wv)?;
            tape.sum(t)
        })
        .unwrap();
        assert_eq!(store.grad(w), &Tensor::full(&[3], 7.0));
    }
}
