use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Upper bound on coordinates probed per parameter; `None` probes all.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tolerance: 1e-4,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<CoordError>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.error)
    }
}

/// `|a - n| / max(1, |a|)`: relative for large gradients, absolute near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences on every selected parameter coordinate.
pub fn gradient_check<F>(params: &ParamStore, f: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);

    let eval = |store: &ParamStore| -> f64 {
        let mut t = Tape::new();
        let v = store.bind(&mut t);
        let o = f(&mut t, &v);
        t.value(o).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut checked = 0;
    let mut worst: Option<CoordError> = None;
    for id in params.ids() {
        let n = params.get(id).len();
        let mut coords: Vec<usize> = (0..n).collect();
        if let Some(limit) = opts.max_coords_per_param {
            if limit < n {
                coords.shuffle(&mut rng);
                coords.truncate(limit);
                coords.sort_unstable();
            }
        }
        let analytic_all = grads.get(vars[id.index()]);
        for k in coords {
            let original = params.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + opts.eps;
            let plus = eval(&probe);
            probe.get_mut(id).data_mut()[k] = original - opts.eps;
            let minus = eval(&probe);
            probe.get_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let analytic = analytic_all.map_or(0.0, |g| g.data()[k]);
            let error = relative_error(analytic, numeric);
            checked += 1;
            if worst.as_ref().is_none_or(|w| error > w.error) {
                worst = Some(CoordError {
                    param: params.name(id).to_string(),
                    index: k,
                    analytic,
                    numeric,
                    error,
                });
            }
        }
    }
    let passed = worst.as_ref().is_none_or(|w| w.error <= opts.tolerance);
    GradCheckReport {
        checked,
        worst,
        passed,
    }
}
