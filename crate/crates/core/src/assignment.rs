//! Minimum-cost bipartite assignment (Kuhn-Munkres family) via the
//! shortest-augmenting-path formulation with dual potentials, O(n^3).
//!
//! Used to pin defenders to zones at the first frame of every sequence and
//! to match zone sets when comparing trained models. The solver is fully
//! deterministic: ties are resolved by the lowest column index encountered,
//! so equal-cost inputs always produce the same assignment.

use crate::error::{Error, Result};
use ndarray::Array2;

/// Solve the square assignment problem, returning `col[row]` minimizing
/// `sum(cost[(row, col[row])])`.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n == 0 || n != m {
        return Err(Error::Validation(format!(
            "assignment requires a non-empty square cost matrix, got {n}x{m}"
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Validation("assignment cost matrix contains non-finite entries".into()));
    }

    // 1-based rows/columns with a virtual column 0, after the classic
    // potentials formulation. p[j] is the row currently assigned to column
    // j (0 = none); way[j] remembers the augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    Ok(result)
}

/// Total cost of an assignment, summed in row order (the canonical order
/// used when comparing against enumeration).
pub fn assignment_cost(cost: &Array2<f64>, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum()
}

/// Visit every permutation of `0..n` (test oracles; n! growth).
pub fn for_each_permutation<F: FnMut(&[usize])>(n: usize, mut f: F) {
    fn heap(k: usize, arr: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k <= 1 {
            f(arr);
            return;
        }
        for i in 0..k {
            heap(k - 1, arr, f);
            if k.is_multiple_of(2) {
                arr.swap(i, k - 1);
            } else {
                arr.swap(0, k - 1);
            }
        }
    }
    let mut arr: Vec<usize> = (0..n).collect();
    heap(n, &mut arr, &mut f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_min(cost: &Array2<f64>) -> f64 {
        let n = cost.nrows();
        let mut best = f64::INFINITY;
        for_each_permutation(n, |perm| {
            let c = assignment_cost(cost, perm);
            if c < best {
                best = c;
            }
        });
        best
    }

    #[test]
    fn hand_example() {
        let cost = Array2::from_shape_vec((3, 3), vec![4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0])
            .unwrap();
        let a = min_cost_assignment(&cost).unwrap();
        assert_eq!(a, vec![1, 0, 2]);
        assert_eq!(assignment_cost(&cost, &a), 5.0);
    }

    #[test]
    fn single_cell() {
        let cost = Array2::from_shape_vec((1, 1), vec![7.5]).unwrap();
        assert_eq!(min_cost_assignment(&cost).unwrap(), vec![0]);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let n = rng.random_range(1..=5usize);
            let cost = Array2::from_shape_fn((n, n), |_| {
                // Dyadic values: every assignment cost is exactly representable.
                rng.random_range(0..4096) as f64 / 64.0
            });
            let a = min_cost_assignment(&cost).unwrap();
            let mut seen = vec![false; n];
            for &c in &a {
                assert!(!seen[c], "trial {trial}: column used twice");
                seen[c] = true;
            }
            assert_eq!(assignment_cost(&cost, &a), brute_force_min(&cost), "trial {trial}");
        }
    }

    #[test]
    fn ties_resolve_deterministically() {
        // Two rows equidistant from two columns: any bijection is optimal;
        // the solver must always return the same one.
        let cost = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let first = min_cost_assignment(&cost).unwrap();
        for _ in 0..5 {
            assert_eq!(min_cost_assignment(&cost).unwrap(), first);
        }
        assert_eq!(assignment_cost(&cost, &first), 2.0);
    }

    #[test]
    fn rejects_bad_matrices() {
        let rect = Array2::from_shape_vec((2, 3), vec![0.0; 6]).unwrap();
        assert!(min_cost_assignment(&rect).is_err());
        let nan = Array2::from_shape_vec((1, 1), vec![f64::NAN]).unwrap();
        assert!(min_cost_assignment(&nan).is_err());
        let empty = Array2::<f64>::zeros((0, 0));
        assert!(min_cost_assignment(&empty).is_err());
    }
}
