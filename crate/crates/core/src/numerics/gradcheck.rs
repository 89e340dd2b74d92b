use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the taped gradient of a scalar function against central
/// differences and returns the largest
/// `|autodiff - numeric| / max(1, |numeric|)` over coordinates of `x`.
///
/// `f` must be smooth at `x`; inputs sitting exactly on a rectifier kink
/// are outside the contract.
pub fn gradcheck<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!("gradcheck step {h} outside [1e-7, 1e-3]")));
    }
    let eval = |input: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(input);
        let out = f(&mut tape, v);
        let val = tape.value(out);
        if val.len() != 1 {
            return Err(Error::Contract("gradcheck requires a scalar function".into()));
        }
        if !val[0].is_finite() {
            return Err(Error::Numeric("non-finite function value".into()));
        }
        Ok(val[0])
    };

    let mut tape = Tape::new();
    let xv = tape.param(x);
    let out = f(&mut tape, xv);
    if tape.value(out).len() != 1 {
        return Err(Error::Contract("gradcheck requires a scalar function".into()));
    }
    let analytic = tape.backward(out)?.get_or_zeros(xv, x.numel());
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite autodiff gradient".into()));
    }

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    probe.set_requires_grad(false);
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::from_vec(vec![0.3, -1.2, 2.5]);
        let err = gradcheck(
            |t, v| {
                let s = t.square(v);
                t.sum(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let x = Tensor::from_vec(vec![1.0]);
        assert!(gradcheck(|t, v| t.sum(v), &x, 1e-2).is_err());
        assert!(gradcheck(|t, v| t.sum(v), &x, 1e-9).is_err());
    }

    #[test]
    fn non_finite_values_are_reported() {
        let x = Tensor::from_vec(vec![-1.0]);
        let r = gradcheck(
            |t, v| {
                let l = t.ln(v);
                t.sum(l)
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
