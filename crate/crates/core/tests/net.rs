use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sli_fodf::estimation::{AtomSmoother, LossWeights, Objective};
use sli_fodf::forward::{AtomSet, KernelBank};
use sli_fodf::healpix::{CapMask, GridResolution, HealpixGrid};
use sli_fodf::net::{cheb_conv, train, ChebLayer, NetParams, Pooling, SphereGraph, SphericalUNet, TrainConfig, UNetConfig};

fn dense(l: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(l.len(), l.len(), |i, j| l[i][j])
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn hops(graph: &SphereGraph, from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.n_nodes()];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(i) = queue.pop_front() {
        for (j, _) in graph.edges(i) {
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    dist
}

#[test]
fn full_sphere_base_graph() {
    let grid = HealpixGrid::with_n_side(1).unwrap();
    let g = SphereGraph::build(&grid, &CapMask::full(&grid), None).unwrap();
    assert_eq!(g.n_nodes(), 12);
    assert_eq!(g.components(), 1);
    for i in 0..12 {
        let expect: Vec<usize> = {
            let mut v = grid.neighbors(i).unwrap();
            v.sort_unstable();
            v.dedup();
            v
        };
        let got: Vec<usize> = g.edges(i).map(|(j, _)| j).collect();
        assert_eq!(got, expect);
        for (j, w) in g.edges(i) {
            let back = g.edges(j).find(|&(k, _)| k == i).expect("edge missing in reverse");
            assert_eq!(back.1, w);
            assert!(w > 0.0 && w <= 1.0);
        }
    }
    for row in g.laplacian_dense() {
        assert!(row.iter().sum::<f64>().abs() < 1e-14);
    }
}

#[test]
fn laplacian_is_symmetric_with_explicit_weights() {
    let grid = HealpixGrid::with_n_side(4).unwrap();
    let mask = CapMask::cap(&grid, 1.0).unwrap();
    let rho = 0.3;
    let g = SphereGraph::build(&grid, &mask, Some(rho)).unwrap();
    let l = g.laplacian_dense();
    for i in 0..g.n_nodes() {
        for j in 0..g.n_nodes() {
            assert_eq!(l[i][j], l[j][i]);
        }
        for (j, w) in g.edges(i) {
            let (a, b) = (grid.vector(g.pixels()[i]), grid.vector(g.pixels()[j]));
            let d2: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum();
            assert!((w - (-d2 / (2.0 * rho * rho)).exp()).abs() < 1e-15);
        }
    }
}

fn dense_lambda_max(g: &SphereGraph) -> f64 {
    SymmetricEigen::new(dense(&g.laplacian_dense())).eigenvalues.max()
}

#[test]
fn power_iteration_matches_dense_eigensolver() {
    for theta in [60f64, 180.0] {
        let grid = HealpixGrid::with_n_side(2).unwrap();
        let mask = CapMask::cap(&grid, theta.to_radians()).unwrap();
        let g = SphereGraph::build(&grid, &mask, None).unwrap();
        let top = dense_lambda_max(&g);
        let rel = (g.lambda_max() - top).abs() / top;
        assert!(rel <= 0.01, "cap {theta}: {} vs {top}", g.lambda_max());
    }
}

#[test]
fn power_iteration_on_network_levels() {
    // a Rayleigh quotient never overshoots; 100 steps leave the coarsest
    // level about 2.5% short, so its rescaled spectrum reaches about 1.05
    let grid = HealpixGrid::with_n_side(16).unwrap();
    let mask = CapMask::annulus(&grid, 10f64.to_radians(), 60f64.to_radians()).unwrap();
    let net = SphericalUNet::new(&grid, &mask, 96, UNetConfig::default()).unwrap();
    let bounds = [0.005, 0.01, 0.06];
    for (level, bound) in bounds.iter().enumerate() {
        let g = net.graph(level);
        let top = dense_lambda_max(g);
        assert!(g.lambda_max() <= top * (1.0 + 1e-12));
        let scaled_top = 2.0 * top / g.lambda_max() - 1.0;
        assert!(scaled_top - 1.0 <= *bound, "level {level}: rescaled top eigenvalue {scaled_top}");
    }
}

/// `sum_k T_k(L~) x Theta_k + b` with dense matrix products.
fn dense_cheb(g: &SphereGraph, x: &DMatrix<f64>, layer: &ChebLayer, params: &[f64]) -> DMatrix<f64> {
    let n = g.n_nodes();
    let lt = dense(&g.laplacian_dense()) * (2.0 / g.lambda_max()) - DMatrix::identity(n, n);
    let mut t = vec![DMatrix::identity(n, n)];
    if layer.order > 1 {
        t.push(lt.clone());
    }
    for k in 2..layer.order {
        let next = &lt * &t[k - 1] * 2.0 - &t[k - 2];
        t.push(next);
    }
    let mut y = DMatrix::zeros(n, layer.c_out);
    for (k, tk) in t.iter().enumerate() {
        let theta = DMatrix::from_fn(layer.c_in, layer.c_out, |i, o| params[(k * layer.c_in + i) * layer.c_out + o] * layer.gain);
        y += tk * x * theta;
    }
    let bias = &params[layer.n_theta()..];
    for o in 0..layer.c_out {
        y.column_mut(o).add_scalar_mut(bias[o]);
    }
    y
}

#[test]
fn chebyshev_recurrence_matches_dense_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = [(1u32, None), (4, Some(1.0)), (8, Some(0.6))];
    for (n_side, cap) in cases {
        let grid = HealpixGrid::with_n_side(n_side).unwrap();
        let mask = match cap {
            Some(t) => CapMask::cap(&grid, t).unwrap(),
            None => CapMask::full(&grid),
        };
        let g = SphereGraph::build(&grid, &mask, None).unwrap();
        assert!(g.n_nodes() <= 200);
        for order in 1..=6 {
            for layer in [ChebLayer::new(order, 3, 2).unwrap(), ChebLayer::scaled(order, 3, 2).unwrap()] {
                let x = random_matrix(&mut rng, g.n_nodes(), 3);
                let p: Vec<f64> = (0..layer.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (y, _) = cheb_conv(&g, &x, &layer, &p).unwrap();
                let oracle = dense_cheb(&g, &x, &layer, &p);
                let err = (&y - &oracle).amax();
                assert!(err <= 1e-10, "n_side {n_side} K {order}: {err}");
            }
        }
    }
}

#[test]
fn order_one_is_a_pointwise_linear_map() {
    let grid = HealpixGrid::with_n_side(2).unwrap();
    let g = SphereGraph::build(&grid, &CapMask::full(&grid), None).unwrap();
    let layer = ChebLayer::new(1, 4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, 48, 4);
    let p: Vec<f64> = (0..layer.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (y, _) = cheb_conv(&g, &x, &layer, &p).unwrap();
    let w = DMatrix::from_row_slice(4, 3, &p[..12]);
    let expect = &x * w + DMatrix::from_fn(48, 3, |_, o| p[12 + o]);
    assert!((y - expect).amax() < 1e-14);
}

#[test]
fn first_order_term_negates_constants() {
    let grid = HealpixGrid::with_n_side(4).unwrap();
    let g = SphereGraph::build(&grid, &CapMask::full(&grid), None).unwrap();
    let layer = ChebLayer::new(2, 1, 1).unwrap();
    // Theta_0 = 0, Theta_1 = 1, no bias
    let (y, _) = cheb_conv(&g, &DMatrix::from_element(192, 1, 2.5), &layer, &[0.0, 1.0, 0.0]).unwrap();
    assert!(y.iter().all(|v| (v + 2.5).abs() < 1e-12));
}

#[test]
fn shape_mismatch_is_rejected() {
    let grid = HealpixGrid::with_n_side(1).unwrap();
    let g = SphereGraph::build(&grid, &CapMask::full(&grid), None).unwrap();
    let layer = ChebLayer::new(2, 2, 1).unwrap();
    assert!(cheb_conv(&g, &DMatrix::zeros(12, 3), &layer, &[0.0; 5]).is_err());
    assert!(cheb_conv(&g, &DMatrix::zeros(11, 2), &layer, &[0.0; 5]).is_err());
    assert!(cheb_conv(&g, &DMatrix::zeros(12, 2), &layer, &[0.0; 4]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chebyshev_filters_are_local(seed in 0u64..10_000, order in 1usize..6) {
        let grid = HealpixGrid::with_n_side(8).unwrap();
        let mask = CapMask::cap(&grid, 1.0).unwrap();
        let g = SphereGraph::build(&grid, &mask, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = ChebLayer::new(order, 2, 2).unwrap();
        let p: Vec<f64> = (0..layer.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = random_matrix(&mut rng, g.n_nodes(), 2);
        let node = rng.random_range(0..g.n_nodes());
        let mut x2 = x.clone();
        x2[(node, 0)] += 1.0;
        x2[(node, 1)] -= 0.5;
        let (a, _) = cheb_conv(&g, &x, &layer, &p).unwrap();
        let (b, _) = cheb_conv(&g, &x2, &layer, &p).unwrap();
        let dist = hops(&g, node);
        for i in 0..g.n_nodes() {
            if dist[i] >= order {
                prop_assert_eq!(a.row(i), b.row(i), "node {} at {} hops changed", i, dist[i]);
            }
        }
        prop_assert!(a.row(node) != b.row(node));
    }

    #[test]
    fn pooling_identities(seed in 0u64..10_000, theta in 0.3f64..3.2) {
        let grid = HealpixGrid::with_n_side(8).unwrap();
        let fine = CapMask::cap(&grid, theta.min(std::f64::consts::PI)).unwrap();
        let coarse = fine.coarsen().unwrap();
        let pool = Pooling::new(&fine, &coarse).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xc: Vec<f64> = (0..pool.n_coarse()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xf: Vec<f64> = (0..pool.n_fine()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let back = pool.pool(&pool.unpool(&xc));
        for (a, b) in back.iter().zip(&xc) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
        let once = pool.unpool(&pool.pool(&xf));
        let twice = pool.unpool(&pool.pool(&once));
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
        let c = rng.random_range(-3.0..3.0);
        prop_assert!(pool.pool(&vec![c; pool.n_fine()]).iter().all(|v| (v - c).abs() <= 1e-14));
        // brute-force: mean over the masked nested children of each parent pixel
        let fpos = fine.positions();
        for (ci, &parent_pixel) in coarse.pixels().iter().enumerate() {
            let vals: Vec<f64> = (0..4).filter_map(|k| fpos[4 * parent_pixel + k]).map(|i| xf[i]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            prop_assert!((pool.pool(&xf)[ci] - mean).abs() <= 1e-14);
        }
        // adjoints
        let g_c: Vec<f64> = (0..pool.n_coarse()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = pool.pool(&xf).iter().zip(&g_c).map(|(a, b)| a * b).sum();
        let rhs: f64 = xf.iter().zip(pool.pool_adjoint(&g_c)).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
        let lhs: f64 = pool.unpool(&xc).iter().zip(&xf).map(|(a, b)| a * b).sum();
        let rhs: f64 = xc.iter().zip(pool.unpool_adjoint(&xf)).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }
}

#[test]
fn pooling_needs_consecutive_levels() {
    let g8 = HealpixGrid::with_n_side(8).unwrap();
    let g2 = HealpixGrid::with_n_side(2).unwrap();
    assert!(Pooling::new(&CapMask::full(&g8), &CapMask::full(&g2)).is_err());
    let g1 = HealpixGrid::with_n_side(1).unwrap();
    assert!(CapMask::full(&g1).coarsen().is_err());
}

fn tiny_net() -> (HealpixGrid, CapMask, SphericalUNet) {
    let grid = HealpixGrid::with_n_side(4).unwrap();
    let mask = CapMask::cap(&grid, 70f64.to_radians()).unwrap();
    let cfg = UNetConfig { widths: vec![2, 2], order: 3, leaky_slope: 0.1, rho: None };
    let net = SphericalUNet::new(&grid, &mask, 6, cfg).unwrap();
    (grid, mask, net)
}

#[test]
fn network_shapes_and_zero_parameters() {
    let grid = HealpixGrid::with_n_side(16).unwrap();
    let mask = CapMask::annulus(&grid, 10f64.to_radians(), 60f64.to_radians()).unwrap();
    let net = SphericalUNet::new(&grid, &mask, 96, UNetConfig::default()).unwrap();
    assert_eq!(net.n_side_chain(), vec![16, 8, 4]);
    assert_eq!(net.n_inputs(), mask.len());
    let x: Vec<f64> = (0..mask.len()).map(|i| (i as f64 * 0.1).sin()).collect();
    let out = net.forward(&NetParams::zeros(net.n_params()), &x).unwrap();
    assert_eq!(out.len(), 96);
    assert!(out.iter().all(|v| *v == 0.0));
    let p = net.init_params(4);
    assert_eq!(net.forward(&p, &x).unwrap(), net.forward(&p, &x).unwrap());
    assert_eq!(net.init_params(4), p);
    assert_ne!(net.init_params(5), p);
    assert!(net.forward(&p, &x[1..]).is_err());
    for level in 1..net.n_levels() {
        assert_eq!(net.mask(level).n_side() * 2, net.mask(level - 1).n_side());
        assert_eq!(net.pooling(level - 1).n_fine(), net.graph(level - 1).n_nodes());
    }
}

#[test]
fn parameter_gradient_matches_central_differences() {
    let (_, mask, net) = tiny_net();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for trial in 0..3 {
        let params = net.init_params(trial);
        let x: Vec<f64> = (0..mask.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let d_out: Vec<f64> = (0..net.n_outputs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |p: &NetParams| -> f64 { net.forward(p, &x).unwrap().iter().zip(&d_out).map(|(a, b)| a * b).sum() };
        let cache = net.forward_cached(&params, &x).unwrap();
        assert_eq!(cache.output, net.forward(&params, &x).unwrap());
        let grad = net.backward(&params, &cache, &d_out).unwrap();
        assert_eq!(grad.len(), net.n_params());
        for i in 0..net.n_params() {
            let mut a = params.clone();
            a.values[i] += h;
            let mut b = params.clone();
            b.values[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let (grid, mask, net) = tiny_net();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    let p = net.init_params(9);
    net.write_checkpoint(&p, &path).unwrap();
    assert_eq!(net.read_checkpoint(&path).unwrap(), p);

    let other = SphericalUNet::new(&grid, &mask, 6, UNetConfig { widths: vec![2, 3], order: 3, leaky_slope: 0.1, rho: None }).unwrap();
    assert!(other.read_checkpoint(&path).is_err());
    let other = SphericalUNet::new(&grid, &mask, 6, UNetConfig { widths: vec![2, 2], order: 4, leaky_slope: 0.1, rho: None }).unwrap();
    assert!(other.read_checkpoint(&path).is_err());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(net.read_checkpoint(&path).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    std::fs::write(&path, &extra).unwrap();
    assert!(net.read_checkpoint(&path).is_err());
    let mut bad = bytes;
    bad[0] ^= 0xff;
    std::fs::write(&path, &bad).unwrap();
    assert!(net.read_checkpoint(&path).is_err());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let grid = HealpixGrid::with_n_side(8).unwrap();
    let mask = CapMask::annulus(&grid, 10f64.to_radians(), 60f64.to_radians()).unwrap();
    let atoms = AtomSet::new(GridResolution::new(2).unwrap());
    let bank = KernelBank::build(atoms.directions(), &Default::default(), &grid, &mask).unwrap();
    let smoother = AtomSmoother::new(&atoms, 4).unwrap();
    let obj = Objective::new(&bank, &smoother, LossWeights::default());
    let net = SphericalUNet::new(&grid, &mask, atoms.len(), UNetConfig { widths: vec![4, 4], order: 3, leaky_slope: 0.1, rho: None })
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<Vec<f64>> = (0..24)
        .map(|_| {
            let w: Vec<f64> = (0..atoms.len()).map(|_| if rng.random_bool(0.1) { rng.random_range(0.2..1.0) } else { 0.0 }).collect();
            bank.apply(&w).unwrap().iter().map(|v| v + 0.01).collect()
        })
        .collect();
    let cfg = TrainConfig { epochs: 8, batch_size: 8, seed: 3, ..Default::default() };
    let a = train(&net, net.init_params(1), &data, &obj, &cfg).unwrap();
    let b = train(&net, net.init_params(1), &data, &obj, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    assert_eq!(a.history.len(), 8);
    assert!(a.history.last().unwrap().l_total < a.history[0].l_total);
    let c = train(&net, net.init_params(1), &data, &obj, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.history, c.history);

    assert!(train(&net, net.init_params(1), &[], &obj, &cfg).is_err());
    assert!(train(&net, net.init_params(1), &data, &obj, &TrainConfig { epochs: 0, ..cfg }).is_err());
}
