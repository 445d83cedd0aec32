use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

/// `|a − b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g, |_| false);
    let out = f(&mut g, &bound)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compare reverse-mode gradients of the scalar objective `f` against
/// central differences with step `eps`, over every element of every
/// parameter. Returns the largest relative error.
///
/// `f` must be deterministic: disable dropout and fix any rng it uses.
pub fn finite_difference_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, |_| true);
    let loss = f(&mut g, &bound)?;
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {v}")));
    }
    g.backward(loss)?;
    let analytic = bound.grads(&g);

    let names: Vec<String> = params.names().cloned().collect();
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for name in names {
        let grad = &analytic[&name];
        for i in 0..grad.len() {
            let orig = work.get(&name)?.data()[i];
            work.get_mut(&name).expect("present").data_mut()[i] = orig + eps;
            let up = evaluate(&f, &work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig - eps;
            let down = evaluate(&f, &work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_form_matches() {
        // f(x) = xᵀ A x with a fixed non-symmetric A
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![3, 1], vec![0.3, -1.2, 2.0]).unwrap());
        let a = Tensor::new(vec![3, 3], vec![2.0, 0.5, 0.0, -1.0, 3.0, 0.25, 0.0, 1.5, 1.0]).unwrap();
        let f = |g: &mut Graph, b: &Bound| {
            let x = b.var("x")?;
            let a = g.constant(a.clone());
            let ax = g.matmul(a, x)?;
            let prod = g.mul(x, ax)?;
            Ok(g.sum(prod))
        };
        let err = finite_difference_check(f, &p, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let f = |g: &mut Graph, _: &Bound| Ok(g.constant(Tensor::scalar(4.0)));
        assert_eq!(finite_difference_check(f, &p, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_objective_is_numeric_error() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::scalar(1.0));
        let f = |g: &mut Graph, _: &Bound| Ok(g.constant(Tensor::scalar(f64::NAN)));
        assert_eq!(finite_difference_check(f, &p, 1e-5).unwrap_err().category(), "numeric");
    }

    #[test]
    fn every_op_passes_on_a_small_composite() {
        let mut p = ParamStore::new();
        let vals = |n: usize, s: f64| (0..n).map(|i| ((i as f64 + 1.0) * s).sin()).collect::<Vec<_>>();
        p.insert("x", Tensor::new(vec![2, 3, 4], vals(24, 0.7)).unwrap());
        p.insert("w", Tensor::new(vec![4, 4], vals(16, 1.3)).unwrap());
        p.insert("b", Tensor::new(vec![4], vals(4, 2.1)).unwrap());
        p.insert("gamma", Tensor::new(vec![4], vals(4, 0.4)).unwrap());
        p.insert("beta", Tensor::new(vec![4], vals(4, 0.9)).unwrap());
        p.insert("table", Tensor::new(vec![5, 4], vals(20, 0.33)).unwrap());
        let f = |g: &mut Graph, b: &Bound| {
            let x = b.var("x")?;
            let flat = g.reshape(x, &[6, 4])?;
            let lin = g.matmul(flat, b.var("w")?)?;
            let lin = g.add_bias(lin, b.var("b")?)?;
            let act = g.gelu(lin);
            let ln = g.layer_norm(act, b.var("gamma")?, b.var("beta")?, 1e-5)?;
            let r3 = g.reshape(ln, &[2, 3, 4])?;
            let perm = g.permute(r3, &[0, 2, 1])?; // [2,4,3]
            let scores = g.batch_matmul(r3, perm, false)?; // [2,3,3]
            let masked = g.mask_keys(scores, &[true, true, false, true, false, true], 2)?;
            let sm = g.softmax(masked)?;
            let ctx = g.batch_matmul(sm, r3, false)?; // [2,3,4]
            let ctx2 = g.batch_matmul(sm, r3, false)?;
            let both = g.concat(&[ctx, ctx2])?; // [2,3,8]
            let rows = g.reshape(both, &[6, 8])?;
            let emb = g.rows(b.var("table")?, &[0, 3, 3, 1, 4, 2])?;
            let emb_t = g.permute(emb, &[1, 0])?; // [4,6]
            let mixed = g.matmul(emb_t, rows)?; // [4,8]
            let m3 = g.reshape(mixed, &[1, 4, 8])?;
            let r8 = g.relu(m3);
            let tt = g.batch_matmul(m3, r8, true)?; // [1,4,4]
            let logits = g.reshape(tt, &[4, 4])?;
            let lsm = g.log_softmax(logits)?;
            let m = g.mean(lsm);
            let ce = g.cross_entropy(logits, &[0, 3, 1, 2], &[1.0, 2.0, 0.5, 1.0])?;
            let sc = g.scale(m, 0.1);
            let both = g.add(ce, sc)?;
            Ok(both)
        };
        let err = finite_difference_check(f, &p, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
