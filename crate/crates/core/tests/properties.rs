//! Randomized invariants of the Fock space, assembly, oracles and file formats.

use std::collections::HashMap;
use std::sync::Arc;

use ibc_core::experiments::{export_matrix, import_matrix, ExperimentConfig, GridLevel, HamiltonianSpec};
use ibc_core::fock::{inner_product, FockSpace, FockVector, ModelParams, RadialGrid};
use ibc_core::hamiltonian::{
    assemble_ibc, assemble_robin_unchecked, hermiticity_defect, robin_admissible, sample_admissible_robin, IbcSpec,
};
use ibc_core::oracles::{ibc_residual_multicenter, CenterSet};
use ibc_core::spectral::{dense_eigenpairs, richardson_extrapolate, Order};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space(h: f64, nodes: usize, n_max: usize) -> Arc<FockSpace> {
    FockSpace::new(RadialGrid::new(h, nodes, 0.0).unwrap(), n_max).unwrap()
}

fn random_vector(space: &Arc<FockSpace>, seed: u64) -> FockVector {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..space.dim()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    FockVector::from_coefficients(space.clone(), coeffs).unwrap()
}

/// `Σ_n h^n Σ_{T ∈ {1..M}^n} conj(u(T)) w(T)` over ordered tuples.
fn ordered_inner_product(u: &FockVector, w: &FockVector) -> Complex64 {
    let space = u.space();
    let (h, m) = (space.grid().h, space.grid().nodes as u32);
    let mut index = HashMap::new();
    for n in 0..=space.n_max() {
        for (i, entry) in space.sector(n).iter().enumerate() {
            index.insert(entry.to_vec(), space.offset(n) + i);
        }
    }
    let mut total = Complex64::new(0.0, 0.0);
    for n in 0..=space.n_max() {
        let mut tuple = vec![1u32; n];
        loop {
            let mut key = tuple.clone();
            key.sort_unstable();
            let i = index[&key];
            total += u.coefficients()[i].conj() * w.coefficients()[i] * h.powi(n as i32);
            // odometer increment
            let mut j = 0;
            while j < n && tuple[j] == m {
                tuple[j] = 1;
                j += 1;
            }
            if j == n {
                break;
            }
            tuple[j] += 1;
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inner_product_matches_ordered_sum(nodes in 1usize..=4, n_max in 0usize..=3, h in 0.05f64..1.0, seed in any::<u64>()) {
        let s = space(h, nodes, n_max);
        let u = random_vector(&s, seed);
        let w = random_vector(&s, seed.wrapping_add(1));
        let fast = inner_product(&u, &w).unwrap();
        let slow = ordered_inner_product(&u, &w);
        prop_assert!((fast - slow).norm() <= 1e-12 * slow.norm().max(1.0));
    }

    #[test]
    fn inner_product_is_conjugate_symmetric(nodes in 1usize..=8, n_max in 0usize..=3, seed in any::<u64>()) {
        let s = space(0.3, nodes, n_max);
        let u = random_vector(&s, seed);
        let w = random_vector(&s, seed ^ 0x55);
        let a = inner_product(&u, &w).unwrap();
        let b = inner_product(&w, &u).unwrap();
        prop_assert!((a - b.conj()).norm() <= 1e-12 * a.norm().max(1.0));
        prop_assert!((inner_product(&u, &u).unwrap().re - u.norm_sqr()).abs() <= 1e-12 * u.norm_sqr());
    }

    #[test]
    fn coupling_sign_leaves_spectrum_unchanged(g in 0.1f64..3.0, e0 in 0.2f64..2.0, nodes in 3usize..=8) {
        let s = space(0.25, nodes, 2);
        for spec in [IbcSpec::Dirichlet, IbcSpec::Neumann] {
            let plus = assemble_ibc(&ModelParams::new(g, e0, 2).unwrap(), &spec, &s).unwrap();
            let minus = assemble_ibc(&ModelParams::new(-g, e0, 2).unwrap(), &spec, &s).unwrap();
            let ep = dense_eigenpairs(&plus, s.dim()).unwrap().eigenvalues;
            let em = dense_eigenpairs(&minus, s.dim()).unwrap().eigenvalues;
            for (a, b) in ep.iter().zip(&em) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{spec:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn robin_hermitian_iff_admissible(
        seed in any::<u64>(),
        index in 0usize..40,
        raw in prop::array::uniform8(-2.0f64..2.0),
        use_sample in any::<bool>(),
    ) {
        let s = space(0.25, 5, 2);
        let model = ModelParams::new(1.0, 1.0, 2).unwrap();
        let spec = if use_sample {
            sample_admissible_robin(&mut ChaCha8Rng::seed_from_u64(seed), index, 0.25)
        } else {
            IbcSpec::Robin {
                alpha: Complex64::new(raw[0], raw[1]),
                beta: Complex64::new(raw[2], raw[3]),
                gamma: Complex64::new(raw[4], raw[5]),
                delta: Complex64::new(raw[6], raw[7]),
            }
        };
        let IbcSpec::Robin { alpha, beta, gamma, delta } = spec else { unreachable!() };
        let pivot = alpha - beta / 0.25;
        prop_assume!(pivot.norm() > 1e-3);
        let report = robin_admissible(alpha, beta, gamma, delta).unwrap();
        let a = assemble_robin_unchecked(&model, alpha, beta, gamma, delta, &s).unwrap();
        let defect = hermiticity_defect(&a);
        let scale = a.triplets().map(|t| t.2.norm()).fold(0.0, f64::max);
        if report.admissible() {
            prop_assert!(defect <= 1e-12 * scale, "admissible but defect {defect}");
        } else {
            prop_assert!(defect > 1e-10 * scale, "inadmissible but defect {defect}");
        }
    }

    #[test]
    fn multicenter_residual_is_translation_invariant(
        r in 0.5f64..3.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
        points in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 2),
    ) {
        let model = ModelParams::new(1.0, 1.0, 2).unwrap();
        let centers = CenterSet::pair(r).unwrap();
        for p in &points {
            for c in centers.positions() {
                let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
                prop_assume!(d > 0.05);
            }
        }
        let moved: Vec<[f64; 3]> = points.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        let a = ibc_residual_multicenter(&model, &centers, std::slice::from_ref(&points), 2).unwrap();
        let b = ibc_residual_multicenter(&model, &centers.translated(shift), &[moved], 2).unwrap();
        prop_assert!(a.max() <= 1e-8 && b.max() <= 1e-8);
        prop_assert!((a.max() - b.max()).abs() <= 1e-10);
    }

    #[test]
    fn config_round_trips_through_toml(
        g in -3.0f64..3.0,
        n_max in 1usize..5,
        h in 0.01f64..0.5,
        nodes in 1usize..300,
        sigma in prop::collection::vec(0.01f64..2.0, 1..5),
        // TOML integers are signed 64-bit
        seed in 0u64..=i64::MAX as u64,
        shell in any::<bool>(),
    ) {
        let mut config = ExperimentConfig::standard("renorm-sweep").unwrap();
        config.model = ModelParams::new(g, 1.0, n_max).unwrap();
        config.grid.ladder = vec![GridLevel { h, nodes }];
        config.sweep.sigma = sigma;
        config.seed = seed;
        config.hamiltonian = if shell { HamiltonianSpec::Shell { radius: h } } else {
            HamiltonianSpec::Robin {
                alpha: Complex64::new(g, 0.5),
                beta: Complex64::new(0.0, g),
                gamma: Complex64::new(1.0, -g),
                delta: Complex64::new(0.25, 0.0),
            }
        };
        let back = ExperimentConfig::from_toml(&config.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, config);
    }

    #[test]
    fn exported_matrix_reads_back_bit_exact(g in -2.0f64..2.0, h in 0.05f64..0.5, nodes in 2usize..10, neumann in any::<bool>()) {
        let s = space(h, nodes, 2);
        let spec = if neumann { IbcSpec::Neumann } else { IbcSpec::Dirichlet };
        let a = assemble_ibc(&ModelParams::new(g, 1.0, 2).unwrap(), &spec, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        export_matrix(&a, &path).unwrap();
        let back = import_matrix(&path).unwrap();
        prop_assert_eq!(back.dim, a.dim());
        prop_assert_eq!(back.entries, a.triplets().collect::<Vec<_>>());
    }

    #[test]
    fn series_extrapolation_is_exact_on_its_model(l in -2.0f64..2.0, a in -5.0f64..5.0, b in -5.0f64..5.0, h0 in 0.05f64..0.2) {
        let samples: Vec<(f64, f64)> = [1.0, 0.5, 0.25].iter().map(|f| {
            let h = h0 * f;
            (h, l + a * h + b * h * h)
        }).collect();
        let fit = richardson_extrapolate(&samples, &Order::Series { powers: vec![1.0, 2.0] }).unwrap();
        prop_assert!((fit.limit - l).abs() <= 1e-9 * (1.0 + a.abs() + b.abs()));
        let fixed = richardson_extrapolate(&[samples[0], samples[1], samples[2], (h0 * 0.125, l + a * h0 * 0.125)], &Order::Fixed { p: 1.0 });
        prop_assert!(fixed.is_ok());
    }
}
