//! Upper envelope of hyperplanes: potential evaluation, cell assignment and
//! the transport map.
//!
//! The potential at `x` is `max_i (x . y_i + h_i)`. Its gradient is the atom
//! whose hyperplane attains the max, which is exactly the transport map. Cell
//! `i` is the region of source space where atom `i` wins.
//!
//! Tie-break rule: the smallest atom index attaining the maximum wins. Ties
//! are measure-zero for continuous sources; fixing the rule keeps results
//! deterministic and platform-independent.

use rayon::prelude::*;

use crate::error::{invalid_input, Result};
use crate::target::{DiscreteTarget, HeightVector};

/// Hyperplane score of atom `i` at `x`.
#[inline]
fn plane_score(x: &[f64], atom: &[f64], h: f64) -> f64 {
    let mut dot = 0.0;
    for (a, b) in x.iter().zip(atom) {
        dot += a * b;
    }
    dot + h
}

/// Winner among atoms `lo..hi` (smallest index wins ties). Caller guarantees
/// a non-empty range and matching dimensions.
#[inline]
pub(crate) fn winner_in_range(
    x: &[f64],
    target: &DiscreteTarget,
    heights: &[f64],
    lo: usize,
    hi: usize,
) -> (usize, f64) {
    let mut best = f64::NEG_INFINITY;
    let mut winner = lo;
    for i in lo..hi {
        let s = plane_score(x, target.atom(i), heights[i]);
        if s > best {
            best = s;
            winner = i;
        }
    }
    (winner, best)
}

fn check_inputs(x_len: usize, target: &DiscreteTarget, h: &HeightVector) -> Result<()> {
    if x_len != target.dim() {
        return Err(invalid_input(format!(
            "point has dimension {}, target has dimension {}",
            x_len,
            target.dim()
        )));
    }
    h.check_pairing(target)
}

/// Evaluate the Brenier potential at `x`: the envelope value and the winning
/// atom index.
pub fn eval_potential(
    x: &[f64],
    target: &DiscreteTarget,
    h: &HeightVector,
) -> Result<(f64, usize)> {
    check_inputs(x.len(), target, h)?;
    let (winner, value) = winner_in_range(x, target, h.values(), 0, target.len());
    Ok((value, winner))
}

/// Assign every point of a flat row-major batch to its winning atom.
///
/// The result is a pure function of the inputs: points are evaluated
/// independently, so internal parallel chunking cannot change the output.
/// An empty batch yields an empty result.
pub fn assign_cells(
    points: &[f64],
    target: &DiscreteTarget,
    h: &HeightVector,
) -> Result<Vec<usize>> {
    h.check_pairing(target)?;
    let d = target.dim();
    if points.len() % d != 0 {
        return Err(invalid_input(format!(
            "point buffer length {} is not a multiple of dim {}",
            points.len(),
            d
        )));
    }
    let heights = h.values();
    let n = target.len();
    Ok(points
        .par_chunks_exact(d)
        .map(|x| winner_in_range(x, target, heights, 0, n).0)
        .collect())
}

/// Transport map `T(x) = grad u_h(x)`: the winning atom's coordinates.
pub fn transport_map<'t>(
    x: &[f64],
    target: &'t DiscreteTarget,
    h: &HeightVector,
) -> Result<&'t [f64]> {
    let (_, winner) = eval_potential(x, target, h)?;
    Ok(target.atom(winner))
}

/// Map a whole batch of points, returning the mapped coordinates flat
/// row-major alongside the winner indices.
pub fn map_points(
    points: &[f64],
    target: &DiscreteTarget,
    h: &HeightVector,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let winners = assign_cells(points, target, h)?;
    let d = target.dim();
    let mut mapped = Vec::with_capacity(winners.len() * d);
    for &w in &winners {
        mapped.extend_from_slice(target.atom(w));
    }
    Ok((mapped, winners))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_atoms_2d() -> DiscreteTarget {
        DiscreteTarget::new(vec![1.0, 0.0, -1.0, 0.0], vec![0.5, 0.5], 2).unwrap()
    }

    #[test]
    fn potential_examples() {
        let t = two_atoms_2d();
        let h = HeightVector::new(vec![0.0, 0.0]);
        let (v, w) = eval_potential(&[0.5, 0.0], &t, &h).unwrap();
        assert_eq!((v, w), (0.5, 0));

        // Exact tie at the origin: lowest index wins.
        let (v, w) = eval_potential(&[0.0, 0.0], &t, &h).unwrap();
        assert_eq!((v, w), (0.0, 0));

        // Height dominates.
        let h = HeightVector::new(vec![0.0, 0.5]);
        let (v, w) = eval_potential(&[0.0, 0.0], &t, &h).unwrap();
        assert_eq!((v, w), (0.5, 1));
    }

    #[test]
    fn potential_rejects_dimension_mismatch() {
        let t = two_atoms_2d();
        let h = HeightVector::new(vec![0.0, 0.0]);
        assert!(eval_potential(&[0.5], &t, &h).is_err());
        let short = HeightVector::new(vec![0.0]);
        assert!(eval_potential(&[0.5, 0.0], &t, &short).is_err());
    }

    #[test]
    fn assignment_boundaries_1d() {
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.5, 0.5], 1).unwrap();
        // Scores are (0, x): atom 1 wins for every x > 0.
        let h = HeightVector::new(vec![0.0, 0.0]);
        assert_eq!(assign_cells(&[0.2, 0.7], &t, &h).unwrap(), vec![1, 1]);
        // Boundary moves to x = 0.5.
        let h = HeightVector::new(vec![0.5, 0.0]);
        assert_eq!(assign_cells(&[0.2, 0.7], &t, &h).unwrap(), vec![0, 1]);
    }

    #[test]
    fn empty_batch_is_empty_result() {
        let t = two_atoms_2d();
        let h = HeightVector::new(vec![0.0, 0.0]);
        assert_eq!(assign_cells(&[], &t, &h).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn transport_map_examples() {
        let t = two_atoms_2d();
        let h = HeightVector::new(vec![0.0, 0.0]);
        assert_eq!(transport_map(&[0.5, 0.0], &t, &h).unwrap(), &[1.0, 0.0]);

        let single = DiscreteTarget::new(vec![3.0, -2.0], vec![1.0], 2).unwrap();
        let h1 = HeightVector::new(vec![-7.0]);
        assert_eq!(transport_map(&[100.0, 100.0], &single, &h1).unwrap(), &[3.0, -2.0]);
    }

    #[test]
    fn transport_matches_optimal_1d_heights() {
        // Analytic optimum for nu = (0.3, 0.7), uniform source on [0, 1]:
        // boundary where h1 - h2 = x, i.e. x = 0.3.
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.3, 0.7], 1).unwrap();
        let h = HeightVector::new(vec![0.15, -0.15]);
        assert_eq!(transport_map(&[0.29], &t, &h).unwrap(), &[0.0]);
        assert_eq!(transport_map(&[0.31], &t, &h).unwrap(), &[1.0]);
    }

    #[test]
    fn transport_composes_with_assignment() {
        let t = two_atoms_2d();
        let h = HeightVector::new(vec![0.1, -0.3]);
        for x in [[0.3, 0.8], [-0.2, 0.1], [0.05, -0.9]] {
            let w = assign_cells(&x, &t, &h).unwrap()[0];
            assert_eq!(transport_map(&x, &t, &h).unwrap(), t.atom(w));
        }
    }

    #[test]
    fn envelope_dominates_every_plane() {
        let t = DiscreteTarget::new(
            vec![0.3, 1.2, -0.7, 0.4, 0.0, -1.0, 2.0, 0.1],
            vec![0.25; 4],
            2,
        )
        .unwrap();
        let h = HeightVector::new(vec![0.2, -0.1, 0.0, 0.4]);
        for x in [[0.0, 0.0], [1.0, -1.0], [-0.5, 2.0]] {
            let (value, winner) = eval_potential(&x, &t, &h).unwrap();
            for i in 0..t.len() {
                let s = plane_score(&x, t.atom(i), h.values()[i]);
                assert!(value >= s);
                if i == winner {
                    assert_eq!(value, s);
                }
            }
        }
    }

    proptest! {
        // Shift invariance: adding a constant to every height changes nothing.
        #[test]
        fn assignment_is_shift_invariant(
            xs in proptest::collection::vec(-3.0f64..3.0, 2..40),
            hs in proptest::collection::vec(-1.0f64..1.0, 4),
            c in -10.0f64..10.0,
        ) {
            let n_pts = xs.len() / 2;
            let pts = &xs[..n_pts * 2];
            let t = DiscreteTarget::new(
                vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
                vec![0.25; 4],
                2,
            ).unwrap();
            let h = HeightVector::new(hs.clone());
            let shifted = HeightVector::new(hs.iter().map(|v| v + c).collect());
            prop_assert_eq!(
                assign_cells(pts, &t, &h).unwrap(),
                assign_cells(pts, &t, &shifted).unwrap()
            );
        }

        // Cells are convex: the midpoint of two points in cell i stays in a
        // cell whose score ties atom i's (and is i itself for generic heights).
        #[test]
        fn cells_are_convex(
            seed_pts in proptest::collection::vec(-2.0f64..2.0, 16),
            hs in proptest::collection::vec(-0.5f64..0.5, 4),
        ) {
            let t = DiscreteTarget::new(
                vec![1.0, 0.3, -1.0, 0.2, 0.1, 1.0, -0.2, -1.0],
                vec![0.25; 4],
                2,
            ).unwrap();
            let h = HeightVector::new(hs);
            let winners = assign_cells(&seed_pts, &t, &h).unwrap();
            for a in 0..winners.len() {
                for b in (a + 1)..winners.len() {
                    if winners[a] != winners[b] {
                        continue;
                    }
                    let i = winners[a];
                    let mid = [
                        0.5 * (seed_pts[a * 2] + seed_pts[b * 2]),
                        0.5 * (seed_pts[a * 2 + 1] + seed_pts[b * 2 + 1]),
                    ];
                    let (value, w) = eval_potential(&mid, &t, &h).unwrap();
                    let si = plane_score(&mid, t.atom(i), h.values()[i]);
                    prop_assert!(w == i || (value - si).abs() <= 1e-12 * value.abs().max(1.0));
                }
            }
        }
    }
}
