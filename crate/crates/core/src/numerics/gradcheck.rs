use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

/// One perturbed coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Denominator floor for [`GradCheckReport::floored_error`].
///
/// Central differences resolve a gradient only to about
/// `ulp(loss) / epsilon`: roughly 1e-10 for losses of order ten. Relative
/// error is meaningless far below that, so coordinates whose gradients sum to
/// less than this floor are held to an absolute error of `tolerance * floor`.
pub const GRADIENT_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub params: Vec<ParamCheck>,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    /// Every checked coordinate; `param` indexes `params`.
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    /// Largest `|a - n| / max(floor, |a| + |n|)` over checked coordinates.
    pub fn floored_error(&self, floor: f64) -> f64 {
        self.coords
            .iter()
            .map(|c| (c.analytic - c.numeric).abs() / (c.analytic.abs() + c.numeric.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    /// Largest absolute gap between analytic and numeric gradients.
    pub fn max_abs_error(&self) -> f64 {
        self.coords
            .iter()
            .map(|c| (c.analytic - c.numeric).abs())
            .fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients against central differences.
///
/// For every trainable parameter, up to `coords_per_param` coordinates
/// (all of them for small tensors) are perturbed by `+-epsilon`. The error
/// of one coordinate is `|a - n| / max(1e-8, |a| + |n|)`; the report carries
/// the maximum. `loss_fn` must build the same scalar from the same
/// parameters every time.
pub fn grad_check<F, E>(
    store: &ParamStore,
    loss_fn: F,
    epsilon: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, E>,
    E: From<NumericsError>,
{
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(NumericsError::Contract(format!("epsilon {epsilon} outside [1e-6, 1e-4]")).into());
    }
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::inference(s);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item()?)
    };
    let first = eval(store)?;
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::Determinism { first, second }.into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        params: Vec::new(),
        worst: None,
        coords: Vec::new(),
    };
    for (id, param) in store.iter() {
        if !param.trainable {
            continue;
        }
        let n = param.tensor.len();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, coords_per_param).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst_here = 0.0f64;
        for &k in &coords {
            let original = param.tensor.data()[k];
            work.tensor_mut(id).data_mut()[k] = original + epsilon;
            let plus = eval(&work)?;
            work.tensor_mut(id).data_mut()[k] = original - epsilon;
            let minus = eval(&work)?;
            work.tensor_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.get(id).data()[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst_here = worst_here.max(rel);
            report.coords.push(CoordCheck {
                param: report.params.len(),
                index: k,
                analytic: a,
                numeric,
            });
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((param.name.clone(), k, a, numeric));
            }
        }
        report.coords_checked += coords.len();
        report.params.push(ParamCheck {
            name: param.name.clone(),
            coords_checked: coords.len(),
            max_rel_error: worst_here,
        });
    }
    Ok(report)
}
