use super::{ParamStore, RngStream};
use crate::error::{Error, Result};

/// A scalar function of a parameter store with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &ParamStore) -> Result<f64>;

    /// Returns the value and fills the store's gradient slots.
    fn value_and_grad(&self, params: &mut ParamStore) -> Result<f64>;
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Gradients whose magnitudes are both below this are treated as agreeing.
const ABS_FLOOR: f64 = 1e-7;

/// Compares analytic gradients to central differences at `n_coords`
/// uniformly sampled parameter coordinates.
///
/// Perturbations are applied to the `f32` weights, so the step actually
/// taken is the difference of the two rounded values rather than `2 * eps`.
pub fn grad_check(
    f: &dyn Objective,
    params: &ParamStore,
    eps: f64,
    tol: f64,
    n_coords: usize,
    rng: &mut RngStream,
) -> Result<GradCheckReport> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("grad_check eps must be positive".into()));
    }
    let mut work = params.clone();
    work.zero_grads();
    f.value_and_grad(&mut work)?;
    let analytic = work.clone();

    let sizes: Vec<(String, usize)> = params.iter().map(|(n, w)| (n.to_string(), w.len())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("grad_check on an empty parameter store".into()));
    }

    let mut coords = Vec::with_capacity(n_coords);
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..n_coords {
        let mut flat = rng.below(total);
        let (name, index) = sizes
            .iter()
            .find_map(|(n, len)| {
                if flat < *len {
                    Some((n.clone(), flat))
                } else {
                    flat -= len;
                    None
                }
            })
            .expect("coordinate within total");

        let w0 = params.get(&name).expect("sampled name exists").data()[index];
        let wp = (w0 as f64 + eps) as f32;
        let wm = (w0 as f64 - eps) as f32;
        set_coord(&mut work, &name, index, wp);
        let fp = f.value(&work)?;
        set_coord(&mut work, &name, index, wm);
        let fm = f.value(&work)?;
        set_coord(&mut work, &name, index, w0);
        let numeric = (fp - fm) / (wp as f64 - wm as f64);

        let a = match analytic.grad(&name) {
            Some(g) => g[index],
            None if numeric.abs() < ABS_FLOOR => 0.0,
            None => return Err(Error::MissingGradient(name)),
        };
        let scale = a.abs().max(numeric.abs());
        let rel_err = if scale < ABS_FLOOR { 0.0 } else { (a - numeric).abs() / scale };
        max_rel_err = max_rel_err.max(rel_err);
        coords.push(CoordCheck {
            name,
            index,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    Ok(GradCheckReport {
        coords,
        max_rel_err,
        tol,
    })
}

fn set_coord(p: &mut ParamStore, name: &str, index: usize, v: f32) {
    p.get_mut(name).expect("sampled name exists").data_mut()[index] = v;
}
