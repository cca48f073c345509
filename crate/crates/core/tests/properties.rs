//! Randomized invariants of the tensor core, the NeoCell operator and
//! NeoInit.

use neonext_core::bench::{flops_dwconv, flops_neocell};
use neonext_core::neocell::{forward_blockdiag, forward_patchwise};
use neonext_core::neoinit::neoinit_pattern;
use neonext_core::{roll2d, GroupSpec, NeoCellParams, NeoCellSpec, Rng, Tensor4};
use proptest::prelude::*;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn random_tensor(seed: u64, dims: [usize; 4]) -> Tensor4 {
    let mut rng = Rng::new(seed);
    Tensor4::from_fn(dims, |_, _, _, _| rng.normal())
}

/// Square groups of sizes `ks` with per-group shifts, channel counts
/// `counts`, on a plane whose sides are multiples of every size.
fn square_spec(ks: &[usize], shifts: &[usize], counts: &[usize], bias: bool) -> NeoCellSpec {
    let mut start = 0;
    let groups = ks
        .iter()
        .zip(shifts)
        .zip(counts)
        .map(|((&k, &s), &n)| {
            let g = GroupSpec::square(start..start + n, k, s % k).unwrap();
            start += n;
            g
        })
        .collect();
    NeoCellSpec::new(groups, bias).unwrap()
}

fn square_case() -> impl Strategy<Value = (NeoCellSpec, [usize; 4], u64)> {
    (
        prop::collection::vec((1usize..=5, 0usize..5, 1usize..=3), 1..=3),
        1usize..=2,
        1usize..=2,
        1usize..=2,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(groups, mh, mw, batch, bias, seed)| {
            let ks: Vec<usize> = groups.iter().map(|g| g.0).collect();
            let lcm = ks.iter().fold(1, |l, &k| l / gcd(l, k) * k);
            let shifts: Vec<usize> = groups.iter().map(|g| g.1).collect();
            let counts: Vec<usize> = groups.iter().map(|g| g.2).collect();
            let spec = square_spec(&ks, &shifts, &counts, bias);
            let c = counts.iter().sum();
            (spec, [batch, c, lcm * mh, lcm * mw], seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blockdiag_matches_patchwise((spec, dims, seed) in square_case()) {
        let params = NeoCellParams::random_normal(&spec, &mut Rng::new(seed)).unwrap();
        let x = random_tensor(seed ^ 1, dims);
        let a = forward_patchwise(&x, &spec, &params).unwrap();
        let b = forward_blockdiag(&x, &spec, &params).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn resampling_blockdiag_matches_patchwise(
        (h, ho) in prop_oneof![Just((2usize, 1usize)), Just((2, 3)), Just((4, 2)), Just((3, 1))],
        mh in 1usize..=4,
        mw in 1usize..=4,
        c in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let spec = NeoCellSpec::uniform(c, (h, h), (ho, ho), true).unwrap();
        let params = NeoCellParams::random_normal(&spec, &mut Rng::new(seed)).unwrap();
        let x = random_tensor(seed ^ 2, [1, c, h * mh, h * mw]);
        let a = forward_patchwise(&x, &spec, &params).unwrap();
        prop_assert_eq!(a.dims(), [1, c, ho * mh, ho * mw]);
        let b = forward_blockdiag(&x, &spec, &params).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn linear_in_the_input((spec, dims, seed) in square_case(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let spec = NeoCellSpec { use_bias: false, ..spec };
        let params = NeoCellParams::random_normal(&spec, &mut Rng::new(seed)).unwrap();
        let x = random_tensor(seed ^ 3, dims);
        let y = random_tensor(seed ^ 4, dims);
        let combo = Tensor4::from_vec(dims, x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect()).unwrap();
        let fx = forward_patchwise(&x, &spec, &params).unwrap();
        let fy = forward_patchwise(&y, &spec, &params).unwrap();
        let fc = forward_patchwise(&combo, &spec, &params).unwrap();
        for ((c, a), b) in fc.data().iter().zip(fx.data()).zip(fy.data()) {
            prop_assert!((c - (alpha * a + beta * b)).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn shift_is_conjugation_by_roll(k in 1usize..=5, s in 0usize..5, m in 1usize..=3, c in 1usize..=2, seed in any::<u64>()) {
        let s = s % k;
        let shifted = square_spec(&[k], &[s], &[c], false);
        let plain = square_spec(&[k], &[0], &[c], false);
        let params = NeoCellParams::random_normal(&plain, &mut Rng::new(seed)).unwrap();
        let x = random_tensor(seed ^ 5, [1, c, k * m, k * (m + 1)]);
        let direct = forward_patchwise(&x, &shifted, &params).unwrap();
        let s = s as isize;
        let via_roll = roll2d(&forward_patchwise(&roll2d(&x, -s, -s), &plain, &params).unwrap(), s, s);
        prop_assert_eq!(direct, via_roll);
    }

    #[test]
    fn identity_params_are_identity((spec, dims, seed) in square_case()) {
        let spec = NeoCellSpec { use_bias: false, ..spec };
        let x = random_tensor(seed, dims);
        let params = NeoCellParams::identity(&spec).unwrap();
        prop_assert_eq!(forward_patchwise(&x, &spec, &params).unwrap(), x.clone());
        prop_assert_eq!(forward_blockdiag(&x, &spec, &params).unwrap(), x);
    }

    #[test]
    fn binary_round_trip(n in 1usize..=3, c in 1usize..=3, h in 1usize..=6, w in 1usize..=6, seed in any::<u64>()) {
        let x = random_tensor(seed, [n, c, h, w]);
        let bytes = x.to_bytes();
        prop_assert_eq!(bytes.len(), 16 + 8 * x.len());
        prop_assert_eq!(Tensor4::read_from(&bytes[..]).unwrap(), x);
    }

    #[test]
    fn roll_then_unroll(h in 1usize..=7, w in 1usize..=7, sh in -20isize..20, sw in -20isize..20, seed in any::<u64>()) {
        let x = random_tensor(seed, [1, 2, h, w]);
        prop_assert_eq!(roll2d(&roll2d(&x, sh, sw), -sh, -sw), x.clone());
        prop_assert_eq!(roll2d(&x, sh + h as isize, sw - w as isize), roll2d(&x, sh, sw));
    }

    #[test]
    fn neoinit_short_axis_lines_are_averages(rows in 1usize..=12, cols in 1usize..=12) {
        let m = neoinit_pattern(rows, cols);
        prop_assert_eq!(neoinit_pattern(cols, rows), m.transpose());
        if rows == cols {
            prop_assert_eq!(m, neonext_core::Matrix::identity(rows));
            return Ok(());
        }
        // Each row of a wide pattern (each column of a tall one) is either
        // empty or a run of equal weights summing to one.
        let wide = if rows < cols { m } else { m.transpose() };
        for i in 0..wide.rows() {
            let nz: Vec<(usize, f64)> = (0..wide.cols()).map(|j| (j, wide.get(i, j))).filter(|p| p.1 != 0.0).collect();
            if let (Some(first), Some(last)) = (nz.first(), nz.last()) {
                prop_assert_eq!(last.0 - first.0 + 1, nz.len());
                prop_assert!(nz.iter().all(|p| p.1 == first.1));
                prop_assert!((first.1 * nz.len() as f64 - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cost_ratio_identity(c in 1usize..200, mh in 1usize..20, mw in 1usize..20, k in 1usize..12) {
        let (h, w) = (mh * k, mw * k);
        let neo = flops_neocell(c, h, w, k).unwrap().multiplies;
        prop_assert_eq!(neo * k as u64, 2 * flops_dwconv(c, h, w, k).multiplies);
    }
}
