use super::{AutodiffError, Graph, Tensor, Var};

/// Denominator floor for [`relative_error`], so coordinates whose true gradient
/// is zero are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares backward gradients of a scalar loss against five-point central
/// finite differences for every coordinate of every parameter and returns the
/// largest relative error.
///
/// Stop-gradient nodes are pinned to their values at the unperturbed point, so
/// the finite differences see the same function backward differentiates.
///
/// `build` receives a fresh graph and one variable per parameter, in order.
pub fn grad_check<F>(build: F, params: &[Tensor], delta: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    if !(1e-7..=1e-4).contains(&delta) {
        return Err(AutodiffError::InvalidArgument {
            op: "grad_check",
            msg: format!("step {delta} outside [1e-7, 1e-4]"),
        });
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.variable(p.clone())).collect();
    let root = build(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let pinned = g.detached_values().to_vec();

    let eval = |ps: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::with_pinned(pinned.clone());
        let vars: Vec<Var> = ps.iter().map(|p| g.variable(p.clone())).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.item(root))
    };

    let first = g.item(root);
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(AutodiffError::NonDeterministic { first, second });
    }

    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(&g, v)).collect();

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, a) in analytic.iter().enumerate() {
        for k in 0..a.len() {
            let orig = work[pi].data()[k];
            let mut at = |x: f64| -> Result<f64, AutodiffError> {
                work[pi].data_mut()[k] = x;
                eval(&work)
            };
            let (p1, m1) = (at(orig + delta)?, at(orig - delta)?);
            let (p2, m2) = (at(orig + 2.0 * delta)?, at(orig - 2.0 * delta)?);
            work[pi].data_mut()[k] = orig;
            // Five-point central stencil, truncation error O(delta^4).
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * delta);
            worst = worst.max(relative_error(a.data()[k], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn quadratic_is_exact() {
        let p = vec![Tensor::from_rows(&[&[0.3, -1.2], &[2.0, 0.7]])];
        let err = grad_check(|g, v| g.frobenius_sq(v[0]), &p, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detached_inputs_are_held_fixed() {
        let p = vec![
            Tensor::from_rows(&[&[0.3, -1.2]]),
            Tensor::from_rows(&[&[0.5, 0.1]]),
        ];
        let build = |g: &mut Graph, v: &[Var]| {
            let d = g.stop_gradient(v[1]);
            let dd = g.mul(d, v[1])?;
            let s = g.mul(v[0], dd)?;
            g.sum(s)
        };
        let err = grad_check(build, &p, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");

        let mut g = Graph::new();
        let v: Vec<Var> = p.iter().map(|t| g.variable(t.clone())).collect();
        let root = build(&mut g, &v).unwrap();
        let grads = g.backward(root).unwrap();
        // d/dv1 of sum(v0 * sg(v1) * v1) is v0 * v1 only.
        assert_eq!(grads.get_or_zeros(&g, v[1]).data(), &[0.3 * 0.5, -1.2 * 0.1]);
    }

    #[test]
    fn nondeterministic_builder_rejected() {
        let counter = Cell::new(0.0);
        let p = vec![Tensor::scalar(1.0)];
        let res = grad_check(
            |g, v| {
                counter.set(counter.get() + 1.0);
                let c = g.constant(Tensor::scalar(counter.get()));
                g.add(v[0], c)
            },
            &p,
            1e-5,
        );
        assert!(matches!(res, Err(AutodiffError::NonDeterministic { .. })));
    }

    #[test]
    fn step_bounds_enforced() {
        let p = vec![Tensor::scalar(1.0)];
        assert!(grad_check(|g, v| g.square(v[0]), &p, 1e-3).is_err());
    }
}
