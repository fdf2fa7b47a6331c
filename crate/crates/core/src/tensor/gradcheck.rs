use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub h: f64,
    pub rel_tol: f64,
    /// Coordinates whose absolute error is at or below this pass regardless of relative error.
    pub abs_floor: f64,
    /// Evenly spaced coordinates checked per parameter.
    pub max_coords: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            h: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
            max_coords: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,max_rel_err,pass\n");
        for c in &self.checks {
            s.push_str(&format!("{},{:e},{}\n", c.name, c.max_rel_err, c.pass));
        }
        s
    }
}

fn loss_at(store: &ParamStore, f: &impl Fn(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new(store);
    let v = f(&mut g)?;
    Ok(g.scalar(v))
}

/// Coordinates `0..len` subsampled to at most `max` evenly spaced indices.
pub(crate) fn spaced_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut out: Vec<usize> = (0..max).map(|i| i * len / max).collect();
    out.dedup();
    out
}

/// Compares reverse-mode gradients of the scalar built by `f` against central differences.
pub fn gradcheck(
    store: &mut ParamStore,
    f: impl Fn(&mut Graph) -> Result<Var>,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let a = loss_at(store, &f)?;
    let b = loss_at(store, &f)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::Gradcheck(format!(
            "forward pass is not deterministic: {a} vs {b}"
        )));
    }

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut checks = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.get(id).value.len();
        let coords = spaced_indices(len, opts.max_coords);
        let mut max_rel: f64 = 0.0;
        let mut pass = true;
        for &c in &coords {
            let orig = store.get(id).value.data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + opts.h;
            let plus = loss_at(store, &f);
            store.get_mut(id).value.data_mut()[c] = orig - opts.h;
            let minus = loss_at(store, &f);
            store.get_mut(id).value.data_mut()[c] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.h);
            let ana = analytic.get(id).map_or(0.0, |t| t.data()[c]);
            let abs = (ana - numeric).abs();
            let rel = if abs <= opts.abs_floor {
                0.0
            } else {
                abs / ana.abs().max(numeric.abs())
            };
            max_rel = max_rel.max(rel);
            if rel > opts.rel_tol {
                pass = false;
            }
        }
        checks.push(ParamCheck {
            name: store.get(id).name.clone(),
            coords_checked: coords.len(),
            max_rel_err: max_rel,
            pass,
        });
    }
    Ok(GradcheckReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamGroup, Tensor};

    #[test]
    fn spacing_caps_and_covers() {
        assert_eq!(spaced_indices(5, 200), vec![0, 1, 2, 3, 4]);
        let s = spaced_indices(1000, 200);
        assert_eq!(s.len(), 200);
        assert_eq!(s[1], 5);
    }

    #[test]
    fn small_network_passes() {
        let mut store = ParamStore::new();
        let w = store
            .add(
                "w",
                Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
                ParamGroup::Head,
            )
            .unwrap();
        let gain = store.add("gain", Tensor::filled(&[1, 4], 1.1), ParamGroup::Head).unwrap();
        let bias = store.add("bias", Tensor::filled(&[1, 4], 0.1), ParamGroup::Head).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 0.3, 0.9, 0.2, -0.4]).unwrap();
        let report = gradcheck(
            &mut store,
            |g| {
                let x = g.constant(x.clone());
                let wv = g.param(w);
                let h = g.matmul(x, wv)?;
                let (gv, bv) = (g.param(gain), g.param(bias));
                let h = g.layer_norm(h, gv, bv)?;
                let h = g.gelu(h)?;
                let p = g.log_softmax(h)?;
                let picked = g.pick(p, &[1, 6])?;
                let l = g.log_sum_exp(picked)?;
                g.scale(l, -1.0)
            },
            &GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.all_pass(), "{}", report.to_csv());
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(2.0), ParamGroup::Head).unwrap();
        let mut g = Graph::new(&store);
        let v = g.param(w);
        let l = g.mul(v, v).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[4.0]);
        assert!(g.backward(l).is_err());
    }

    #[test]
    fn detached_loss_is_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let c = g.constant(Tensor::scalar(1.0));
        assert!(g.backward(c).is_err());
    }
}
