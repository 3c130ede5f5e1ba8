//! Gauss–Legendre rules shared by the quadrature routines.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;

type RuleCache = Mutex<HashMap<usize, &'static [(f64, f64)]>>;

/// Nodes and weights of the `degree`-point Gauss–Legendre rule on [-1, 1].
pub(crate) fn gauss_legendre(degree: usize) -> &'static [(f64, f64)] {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    map.entry(degree).or_insert_with(|| {
        let rule = GaussLegendre::new(NonZeroUsize::new(degree).expect("degree must be positive"));
        Box::leak(rule.as_node_weight_pairs().to_vec().into_boxed_slice())
    })
}

/// Integrates `f` over [a, b] with a single Gauss–Legendre panel.
pub(crate) fn panel<F: FnMut(f64) -> f64>(degree: usize, a: f64, b: f64, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    gauss_legendre(degree)
        .iter()
        .map(|&(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Nodes and weights mapped onto [a, b].
pub(crate) fn mapped(degree: usize, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    gauss_legendre(degree)
        .iter()
        .map(move |&(x, w)| (mid + half * x, w * half))
}
