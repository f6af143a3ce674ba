use fdns_core::fields::{uniform_times, wrap_unit, DomainDescriptor, Grid, SpaceTimeField};
use fdns_core::rng::{RngContract, StreamKey, StreamTag};
use fdns_core::stats::{linear_fit, Moments};
use proptest::prelude::*;

proptest! {
    #[test]
    fn wrap_lands_in_unit_interval(x in -1e6f64..1e6) {
        let w = wrap_unit(x);
        prop_assert!((0.0..1.0).contains(&w));
        let k = x - w;
        prop_assert!((k - k.round()).abs() < 1e-6);
    }

    #[test]
    fn stencil_is_a_partition_of_unity(n in 2usize..40, d in 1usize..4, seed in any::<u64>()) {
        let grid = Grid::new(DomainDescriptor::torus(d), n).unwrap();
        let x: Vec<f64> = (0..d).map(|a| ((seed >> (a * 16)) & 0xffff) as f64 / 65536.0 * 3.0 - 1.0).collect();
        let st = grid.stencil(&x).unwrap();
        let total: f64 = st.weights[..st.corners].iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(st.weights[..st.corners].iter().all(|w| *w >= -1e-15));
        prop_assert!(st.nodes[..st.corners].iter().all(|&i| i < grid.nodes()));
    }

    #[test]
    fn interpolation_reproduces_nodes(n in 2usize..16, steps in 1usize..6, node in 0usize..256, m in 0usize..6) {
        let grid = Grid::new(DomainDescriptor::torus(2), n).unwrap();
        let f = SpaceTimeField::from_fn(grid, 1.0, steps, 2, |t, x, o| {
            o[0] = (6.0 * x[0]).sin() + t;
            o[1] = x[1] * x[0] - t * t;
        }).unwrap();
        let (node, m) = (node % grid.nodes(), m % (steps + 1));
        let x = grid.node_coords(node);
        let got = f.interpolate(f.times[m], &x).unwrap();
        let want = f.value(m, node);
        for c in 0..2 {
            prop_assert!((got[c] - want[c]).abs() <= 1e-12 * (1.0 + want[c].abs()));
        }
    }

    #[test]
    fn moments_merge_matches_sequential(samples in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut % samples.len();
        let mut all = Moments::new(1);
        samples.iter().for_each(|s| all.push(&[*s]));
        let (mut a, mut b) = (Moments::new(1), Moments::new(1));
        samples[..cut].iter().for_each(|s| a.push(&[*s]));
        samples[cut..].iter().for_each(|s| b.push(&[*s]));
        a.merge(&b);
        prop_assert_eq!(a.count(), all.count());
        let (ea, eb) = (a.estimate(), all.estimate());
        prop_assert!((ea.value[0] - eb.value[0]).abs() < 1e-9);
        prop_assert!((ea.std_error[0] - eb.std_error[0]).abs() < 1e-9 * (1.0 + eb.std_error[0]));
    }

    #[test]
    fn noise_is_addressed_by_step(seed in any::<u64>(), particle in 0u64..1000, dim in 1usize..4, step in 0u64..64) {
        let rng = RngContract::new(seed);
        let key = StreamKey::new(StreamTag::PICARD, 3);
        let mut seq = rng.stream(key, particle, dim);
        let mut expected = vec![0.0; dim];
        for k in 0..=step {
            seq.normals(k, &mut expected);
        }
        let mut jump = rng.stream(key, particle, dim);
        let mut got = vec![0.0; dim];
        jump.normals(step, &mut got);
        prop_assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), expected.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn line_fit_is_exact_on_lines(slope in -5f64..5.0, icpt in -5f64..5.0, n in 2usize..30) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + icpt).collect();
        let (s, c) = linear_fit(&x, &y).unwrap();
        prop_assert!((s - slope).abs() < 1e-9 && (c - icpt).abs() < 1e-9);
    }

    #[test]
    fn time_grid_is_uniform_and_closed(horizon in 1e-3f64..10.0, steps in 1usize..500) {
        let t = uniform_times(horizon, steps);
        prop_assert_eq!(t.len(), steps + 1);
        prop_assert_eq!(t[0], 0.0);
        prop_assert_eq!(t[steps], horizon);
        prop_assert!(t.windows(2).all(|w| w[1] > w[0]));
    }
}
