//! The trimmed objective `h(l) = (1/q) * sum of the q smallest losses`, its
//! active q-tuples, selection functions and selection gradients.
//!
//! Indices here are positions in the loss vector handed in. Callers working
//! on a subsample map them back to dataset indices themselves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retained count `q` out of `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimSpec {
    q: usize,
    n: usize,
}

impl TrimSpec {
    pub fn new(q: usize, n: usize) -> Result<Self> {
        if q == 0 || q > n {
            return Err(Error::invalid(format!("need 1 <= q <= N, got q={q}, N={n}")));
        }
        Ok(TrimSpec { q, n })
    }

    /// `q = floor(fraction * n)`; decimal fractions like 0.6 land exactly.
    pub fn from_fraction(fraction: f64, n: usize) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!("trim fraction {fraction} outside (0, 1]")));
        }
        Self::new(floor_count(fraction, n), n)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fraction(&self) -> f64 {
        self.q as f64 / self.n as f64
    }

    /// Retained count for a subsample: `floor(q * size / n)`, in integers.
    pub fn for_sample(&self, size: usize) -> usize {
        ((self.q as u128 * size as u128) / self.n as u128) as usize
    }
}

/// `floor(x * n)` with a guard against binary rounding of decimal `x`.
pub fn floor_count(x: f64, n: usize) -> usize {
    ((x * n as f64 + 1e-9).floor().max(0.0)) as usize
}

fn check_q(q: usize, n: usize) -> Result<()> {
    if q == 0 || q > n {
        return Err(Error::invalid(format!("need 1 <= q <= N, got q={q}, N={n}")));
    }
    Ok(())
}

fn check_finite(losses: &[f64]) -> Result<()> {
    match losses.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index, what: "loss" }),
        None => Ok(()),
    }
}

/// Indices sorted by `(loss, index)`.
pub fn order(losses: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    idx
}

/// Mean of the `q` smallest losses.
pub fn trimmed_value(losses: &[f64], q: usize) -> Result<f64> {
    check_q(q, losses.len())?;
    check_finite(losses)?;
    let mut v = losses.to_vec();
    v.select_nth_unstable_by(q - 1, f64::total_cmp);
    Ok(v[..q].iter().sum::<f64>() / q as f64)
}

/// The `q`-th smallest loss.
fn kth_smallest(losses: &[f64], q: usize) -> f64 {
    let mut v = losses.to_vec();
    *v.select_nth_unstable_by(q - 1, f64::total_cmp).1
}

/// Relative tie tolerance `1e-8 * (1 + |threshold|)`.
pub fn default_tie_tol(threshold: f64) -> f64 {
    1e-8 * (1.0 + threshold.abs())
}

/// Compact form of the set of active q-tuples: every tuple is `below` plus
/// any `slots`-subset of `boundary`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTupleSet {
    pub below: Vec<usize>,
    pub boundary: Vec<usize>,
    pub slots: usize,
    pub threshold: f64,
    pub tie_tol: f64,
}

impl ActiveTupleSet {
    pub fn q(&self) -> usize {
        self.below.len() + self.slots
    }

    /// Number of implied tuples, saturating.
    pub fn count(&self) -> u128 {
        binomial(self.boundary.len(), self.slots)
    }

    /// Implied tuples in lexicographic order of boundary subsets, each
    /// sorted ascending.
    pub fn tuples(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        Combinations::new(self.boundary.len(), self.slots).map(move |combo| {
            let mut t = self.below.clone();
            t.extend(combo.iter().map(|&k| self.boundary[k]));
            t.sort_unstable();
            t
        })
    }

    /// The tuple chosen by `(loss, index)` order.
    pub fn first_tuple(&self) -> Vec<usize> {
        let mut t = self.below.clone();
        t.extend(&self.boundary[..self.slots]);
        t.sort_unstable();
        t
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lexicographic k-subsets of `0..n` as index vectors.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().expect("checked above");
        let k = cur.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if cur[i] < self.n - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Active q-tuples of `losses` with ties detected within `tie_tol`.
pub fn active_tuples(losses: &[f64], q: usize, tie_tol: f64) -> Result<ActiveTupleSet> {
    check_q(q, losses.len())?;
    check_finite(losses)?;
    if !(tie_tol >= 0.0) {
        return Err(Error::invalid("tie_tol must be nonnegative"));
    }
    let threshold = kth_smallest(losses, q);
    let mut below = Vec::new();
    let mut boundary = Vec::new();
    for (i, &l) in losses.iter().enumerate() {
        if l < threshold - tie_tol {
            below.push(i);
        } else if (l - threshold).abs() <= tie_tol {
            boundary.push(i);
        }
    }
    // Members of the q smallest that sit in the tolerance band fall in the
    // boundary pool, so it always holds enough candidates.
    let slots = q - below.len();
    debug_assert!(slots >= 1 && boundary.len() >= slots);
    Ok(ActiveTupleSet {
        below,
        boundary,
        slots,
        threshold,
        tie_tol,
    })
}

/// Active tuples with the default relative tie tolerance.
pub fn active_tuples_default(losses: &[f64], q: usize) -> Result<ActiveTupleSet> {
    check_q(q, losses.len())?;
    check_finite(losses)?;
    active_tuples(losses, q, default_tie_tol(kth_smallest(losses, q)))
}

/// Selection function value `(1/q) * sum_{i in tuple} losses_i`.
pub fn selection_value(tuple: &[usize], losses: &[f64], q: usize) -> Result<f64> {
    if tuple.len() != q {
        return Err(Error::invalid(format!("tuple has {} indices, q = {q}", tuple.len())));
    }
    let mut sorted = tuple.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("tuple has duplicate indices"));
    }
    if sorted.last().is_some_and(|&i| i >= losses.len()) {
        return Err(Error::invalid("tuple index out of range"));
    }
    Ok(tuple.iter().map(|&i| losses[i]).sum::<f64>() / q as f64)
}

/// The `q` smallest losses under `(loss, index)` order, ascending by index.
pub fn lexicographic_tuple(losses: &[f64], q: usize) -> Result<Vec<usize>> {
    check_q(q, losses.len())?;
    let mut t = order(losses)[..q].to_vec();
    t.sort_unstable();
    Ok(t)
}

/// Per-index local gradient sets (`branch_count(i) >= 1`).
pub trait LocalGradientSource {
    fn dim(&self) -> usize;
    fn branch_count(&self, i: usize) -> usize;
    /// `out += scale * (branch b of index i)`.
    fn add_branch(&self, i: usize, branch: usize, scale: f64, out: &mut [f64]);
}

/// Explicit local gradient sets, one list per index.
impl LocalGradientSource for [Vec<Vec<f64>>] {
    fn dim(&self) -> usize {
        self.iter().flatten().next().map_or(0, Vec::len)
    }

    fn branch_count(&self, i: usize) -> usize {
        self[i].len()
    }

    fn add_branch(&self, i: usize, branch: usize, scale: f64, out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self[i][branch]) {
            *o += scale * g;
        }
    }
}

/// Gradient `grad(g^a o l)` of one selection function, its offset
/// `g^a(l) - h(l)`, and the tuple / branch choice that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionGradient {
    pub gradient: Vec<f64>,
    pub offset: f64,
    pub tuple: Vec<usize>,
    /// Chosen local-gradient branch of each tuple member, in tuple order.
    pub branches: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct GeneratorSet {
    pub generators: Vec<SelectionGradient>,
    /// Enumeration stopped at the cap with tuples left over.
    pub truncated: bool,
}

/// Componentwise tolerance under which two gradients count as the same.
pub const DUPLICATE_TOL: f64 = 1e-12;

pub fn same_gradient(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= DUPLICATE_TOL)
}

/// Enumerate selection gradients of the tuples implied by `active`.
///
/// Boundary subsets are walked lexicographically and, inside each, branch
/// choices at multi-branch members (absolute-loss kinks) lexicographically,
/// until `cap` generators have been produced. Gradients come from `source`;
/// offsets from `offset_losses`, which is usually the loss vector `active`
/// was built from. Generators with duplicate gradients are dropped.
pub fn selection_gradients<S: LocalGradientSource + ?Sized>(
    active: &ActiveTupleSet,
    source: &S,
    offset_losses: &[f64],
    q: usize,
    cap: usize,
) -> Result<GeneratorSet> {
    if cap == 0 {
        return Err(Error::invalid("generator cap must be at least 1"));
    }
    if active.q() != q {
        return Err(Error::invalid(format!("active set holds {}-tuples, q = {q}", active.q())));
    }
    let h = trimmed_value(offset_losses, q)?;
    let dim = source.dim();
    let scale = 1.0 / q as f64;

    let mut below_fixed = vec![0.0; dim];
    let mut below_kinked = Vec::new();
    for &i in &active.below {
        if source.branch_count(i) > 1 {
            below_kinked.push(i);
        } else {
            source.add_branch(i, 0, scale, &mut below_fixed);
        }
    }

    let mut out = GeneratorSet::default();
    'combos: for combo in Combinations::new(active.boundary.len(), active.slots) {
        let mut tuple = active.below.clone();
        tuple.extend(combo.iter().map(|&k| active.boundary[k]));
        tuple.sort_unstable();

        let mut fixed = below_fixed.clone();
        let mut kinked = below_kinked.clone();
        for &k in &combo {
            let i = active.boundary[k];
            if source.branch_count(i) > 1 {
                kinked.push(i);
            } else {
                source.add_branch(i, 0, scale, &mut fixed);
            }
        }
        kinked.sort_unstable();
        let offset = selection_value(&tuple, offset_losses, q)? - h;

        // Odometer over branch choices, last kinked index varying fastest.
        let mut choice = vec![0usize; kinked.len()];
        loop {
            if out.generators.len() == cap {
                out.truncated = true;
                break 'combos;
            }
            let mut g = fixed.clone();
            for (&i, &b) in kinked.iter().zip(&choice) {
                source.add_branch(i, b, scale, &mut g);
            }
            if !out.generators.iter().any(|s| same_gradient(&s.gradient, &g)) {
                let branches = tuple
                    .iter()
                    .map(|i| kinked.binary_search(i).map_or(0, |k| choice[k] as u8))
                    .collect();
                out.generators.push(SelectionGradient {
                    gradient: g,
                    offset,
                    tuple: tuple.clone(),
                    branches,
                });
            }
            let mut pos = kinked.len();
            loop {
                if pos == 0 {
                    continue 'combos;
                }
                pos -= 1;
                choice[pos] += 1;
                if choice[pos] < source.branch_count(kinked[pos]) {
                    break;
                }
                choice[pos] = 0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    impl Ord for OrdF64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }

    impl PartialOrd for OrdF64 {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    impl PartialEq for OrdF64 {
        fn eq(&self, other: &Self) -> bool {
            self.cmp(other) == std::cmp::Ordering::Equal
        }
    }

    impl Eq for OrdF64 {}

    #[derive(Debug, Clone, Copy)]
    struct OrdF64(f64);

    #[test]
    fn trimmed_value_examples() {
        assert_eq!(trimmed_value(&[3.0, 1.0, 2.0], 2).unwrap(), 1.5);
        assert_eq!(trimmed_value(&[3.0, 1.0, 2.0], 3).unwrap(), 2.0);
        assert_eq!(trimmed_value(&[5.0, 5.0, 5.0, 1.0], 2).unwrap(), 3.0);
        assert!(trimmed_value(&[1.0], 0).is_err());
        assert!(trimmed_value(&[1.0], 2).is_err());
        assert!(trimmed_value(&[f64::NAN], 1).is_err());
    }

    #[test]
    fn active_tuple_examples() {
        let a = active_tuples(&[1.0, 2.0, 3.0], 2, 1e-8).unwrap();
        assert_eq!((a.below.clone(), a.boundary.clone(), a.slots), (vec![0], vec![1], 1));
        assert_eq!(a.tuples().collect::<Vec<_>>(), vec![vec![0, 1]]);

        let a = active_tuples(&[1.0, 2.0, 2.0, 3.0], 2, 1e-8).unwrap();
        assert_eq!((a.below.clone(), a.boundary.clone(), a.slots), (vec![0], vec![1, 2], 1));
        assert_eq!(a.tuples().collect::<Vec<_>>(), vec![vec![0, 1], vec![0, 2]]);

        let losses = [2.0, 2.0, 2.0];
        let a = active_tuples(&losses, 2, 1e-8).unwrap();
        assert!(a.below.is_empty());
        assert_eq!((a.boundary.len(), a.slots, a.count()), (3, 2, 3));
        for t in a.tuples() {
            assert_eq!(selection_value(&t, &losses, 2).unwrap(), 2.0);
        }
    }

    #[test]
    fn selection_value_examples() {
        assert_eq!(selection_value(&[0, 1], &[1.0, 2.0, 3.0], 2).unwrap(), 1.5);
        assert_eq!(selection_value(&[0, 2], &[1.0, 2.0, 2.0, 3.0], 2).unwrap(), 1.5);
        assert_eq!(selection_value(&[1, 2], &[1.0, 2.0, 3.0], 2).unwrap(), 2.5);
        assert!(selection_value(&[1, 1], &[1.0, 2.0, 3.0], 2).is_err());
        assert!(selection_value(&[1, 5], &[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn lexicographic_examples() {
        assert_eq!(lexicographic_tuple(&[2.0, 1.0, 2.0], 2).unwrap(), vec![0, 1]);
        assert_eq!(lexicographic_tuple(&[1.0, 2.0, 3.0], 2).unwrap(), vec![0, 1]);
        assert_eq!(lexicographic_tuple(&[7.0; 4], 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn selection_gradient_examples() {
        let grads: Vec<Vec<Vec<f64>>> = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]], vec![vec![5.0, 5.0]]];
        let losses = [1.0, 2.0, 3.0];
        let a = active_tuples(&losses, 2, 1e-8).unwrap();
        let g = selection_gradients(&a, grads.as_slice(), &losses, 2, 50).unwrap();
        assert_eq!(g.generators.len(), 1);
        assert_eq!(g.generators[0].gradient, vec![0.5, 0.5]);
        assert_eq!(g.generators[0].offset, 0.0);

        let losses = [1.0, 2.0, 2.0];
        let a = active_tuples(&losses, 2, 1e-8).unwrap();
        let g = selection_gradients(&a, grads.as_slice(), &losses, 2, 50).unwrap();
        assert_eq!(g.generators.len(), 2);
        assert!(g.generators.iter().all(|s| s.offset == 0.0));

        let kink: Vec<Vec<Vec<f64>>> = vec![vec![vec![2.0, 3.0], vec![-2.0, -3.0]], vec![vec![1.0, 1.0]]];
        let losses = [0.0, 4.0];
        let a = active_tuples(&losses, 1, 1e-8).unwrap();
        let g = selection_gradients(&a, kink.as_slice(), &losses, 1, 50).unwrap();
        let got: Vec<_> = g.generators.iter().map(|s| s.gradient.clone()).collect();
        assert_eq!(got, vec![vec![2.0, 3.0], vec![-2.0, -3.0]]);
        assert_eq!(g.generators[1].branches, vec![1]);
    }

    #[test]
    fn generator_cap_truncates_but_keeps_an_active_tuple() {
        let n = 12;
        let losses = vec![1.0; n];
        let grads: Vec<Vec<Vec<f64>>> = (0..n).map(|i| vec![vec![i as f64, 1.0]]).collect();
        let a = active_tuples(&losses, 6, 1e-8).unwrap();
        let g = selection_gradients(&a, grads.as_slice(), &losses, 6, 5).unwrap();
        assert!(g.truncated);
        assert_eq!(g.generators.len(), 5);
        assert_eq!(g.generators[0].tuple, vec![0, 1, 2, 3, 4, 5]);
        assert!(selection_gradients(&a, grads.as_slice(), &losses, 6, 0).is_err());
    }

    #[test]
    fn full_q_returns_mean_gradient() {
        let grads: Vec<Vec<Vec<f64>>> = vec![vec![vec![1.0, 2.0]], vec![vec![3.0, -2.0]], vec![vec![2.0, 3.0]]];
        let losses = [0.3, 0.1, 0.2];
        let a = active_tuples(&losses, 3, 1e-8).unwrap();
        let g = selection_gradients(&a, grads.as_slice(), &losses, 3, 50).unwrap();
        assert_eq!(g.generators.len(), 1);
        assert_relative_eq!(g.generators[0].gradient[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(g.generators[0].gradient[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn combinations_are_lexicographic() {
        let all: Vec<_> = Combinations::new(4, 2).collect();
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(Combinations::new(3, 3).count(), 1);
        assert_eq!(Combinations::new(2, 3).count(), 0);
        assert_eq!(binomial(50, 25), 126_410_606_437_752);
    }

    #[test]
    fn trim_spec_counts() {
        let t = TrimSpec::from_fraction(0.6, 2000).unwrap();
        assert_eq!(t.q(), 1200);
        assert_eq!(t.for_sample(20), 12);
        assert_eq!(TrimSpec::from_fraction(0.6, 500).unwrap().q(), 300);
        assert_eq!(floor_count(1.0 - 0.2 - 0.05, 2000), 1500);
        assert!(TrimSpec::new(0, 3).is_err());
        assert!(TrimSpec::from_fraction(0.1, 5).is_err());
    }

    /// Loss vectors built from a few distinct levels so ties are common.
    fn tied_losses() -> impl Strategy<Value = (Vec<f64>, usize)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..4, -1e-10f64..1e-10), n)
                    .prop_map(|v| v.into_iter().map(|(l, jitter)| l as f64 * 1.5 + 2.0 + jitter).collect()),
                1..=n,
            )
        })
    }

    proptest! {
        #[test]
        fn singleton_value((losses, q) in tied_losses()) {
            let h = trimmed_value(&losses, q).unwrap();
            let a = active_tuples_default(&losses, q).unwrap();
            prop_assert_eq!(a.q(), q);
            for t in a.tuples().take(500) {
                prop_assert_eq!(t.len(), q);
                let v = selection_value(&t, &losses, q).unwrap();
                prop_assert!((v - h).abs() <= q as f64 * a.tie_tol);
            }
        }

        #[test]
        fn trimmed_value_monotone_in_q((losses, _q) in tied_losses()) {
            let n = losses.len();
            for q in 1..n {
                prop_assert!(trimmed_value(&losses, q).unwrap() <= trimmed_value(&losses, q + 1).unwrap() + 1e-15);
            }
            let mean = losses.iter().sum::<f64>() / n as f64;
            prop_assert!((trimmed_value(&losses, n).unwrap() - mean).abs() <= 1e-12);
        }

        #[test]
        fn offsets_nonnegative_and_zero_on_active((losses, q) in tied_losses()) {
            let grads: Vec<Vec<Vec<f64>>> = (0..losses.len()).map(|i| vec![vec![i as f64, 1.0]]).collect();
            let a = active_tuples_default(&losses, q).unwrap();
            let g = selection_gradients(&a, grads.as_slice(), &losses, q, 50).unwrap();
            prop_assert!(!g.generators.is_empty());
            for s in &g.generators {
                prop_assert!(s.offset >= -a.tie_tol);
                prop_assert!(s.offset <= q as f64 * a.tie_tol);
            }
        }

        #[test]
        fn permutation_equivariance(
            (losses, q) in tied_losses(),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = losses.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&p| losses[p]).collect();
            let grads: Vec<Vec<Vec<f64>>> = (0..n).map(|i| vec![vec![i as f64, (i * i) as f64]]).collect();
            let pgrads: Vec<Vec<Vec<f64>>> = perm.iter().map(|&p| grads[p].clone()).collect();
            let (h1, h2) = (trimmed_value(&losses, q).unwrap(), trimmed_value(&permuted, q).unwrap());
            prop_assert!((h1 - h2).abs() <= 1e-12 * (1.0 + h1.abs()));

            let a = active_tuples(&losses, q, 1e-6).unwrap();
            let b = active_tuples(&permuted, q, 1e-6).unwrap();
            prop_assume!(a.count() <= 50);
            let mut ga: Vec<Vec<f64>> = selection_gradients(&a, grads.as_slice(), &losses, q, 50).unwrap().generators.into_iter().map(|s| s.gradient).collect();
            let mut gb: Vec<Vec<f64>> = selection_gradients(&b, pgrads.as_slice(), &permuted, q, 50).unwrap().generators.into_iter().map(|s| s.gradient).collect();
            // Sums taken in a different order differ in the last bits, so sort on
            // rounded components.
            let key = |v: &Vec<f64>| (OrdF64((v[0] * 1e6).round()), OrdF64((v[1] * 1e6).round()));
            ga.sort_by_key(key);
            gb.sort_by_key(key);
            prop_assert_eq!(ga.len(), gb.len());
            for (x, y) in ga.iter().zip(&gb) {
                prop_assert!(x.iter().zip(y).all(|(u, v)| (u - v).abs() <= 1e-9));
            }
        }
    }
}
