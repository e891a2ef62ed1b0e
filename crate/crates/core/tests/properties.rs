//! Randomized invariants across modules.

use invnet3d::accounting::{count_flops, count_params, memory_ledger};
use invnet3d::arch::{build_plan, desk_profile, InputGeometry, ModelVariant, PlanOp, VariantKind};
use invnet3d::invertible::InvertibleModule;
use invnet3d::nn::{channel_shuffle, channel_shuffle_backward, ConvSpec, NormMode};
use invnet3d::seismic::{denormalize, minmax_normalize, subsample_indices};
use invnet3d::tensor::{randn, Rng, Tensor};
use invnet3d::train::{lr_at_epoch, mae, rmse, ssim_2d, TrainConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coupling_stack_inverts_and_keeps_shape(
        seed in any::<u64>(),
        layers in 1usize..4,
        half in prop::sample::select(vec![2usize, 4]),
        n in 1usize..3,
        d in 2usize..5,
    ) {
        let dims = [n + 1, 2 * half, d, d + 1, d];
        let mut rng = Rng::new(seed);
        let mut m = InvertibleModule::<f64>::new(2 * half, layers, 1, seed % 2 == 0, &mut rng).unwrap();
        let x: Tensor<f64> = randn(&mut rng, &dims, 0.0, 1.0).unwrap();
        let y = m.forward(&x, NormMode::TRAIN).unwrap();
        prop_assert_eq!(y.dims(), x.dims());
        let back = m.inverse(&y, NormMode::RECOMPUTE).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() <= 1e-10);
    }

    #[test]
    fn shuffle_backward_undoes_shuffle(seed in any::<u64>(), groups in 1usize..5, per in 1usize..5) {
        let x: Tensor<f64> = randn(&mut Rng::new(seed), &[2, groups * per, 2, 1, 3], 0.0, 1.0).unwrap();
        let y = channel_shuffle(&x, groups).unwrap();
        prop_assert_eq!(channel_shuffle_backward(&y, groups).unwrap(), x);
    }

    #[test]
    fn grouping_divides_cost(
        g in 1usize..5,
        per_in in 1usize..4,
        per_out in 1usize..4,
        k in prop::sample::select(vec![1usize, 3, 5]),
        s in 1usize..4,
        extent in 4usize..12,
    ) {
        let (ci, co) = (g * per_in, g * per_out);
        let plain = ConvSpec::conv(ci, co, [k; 3], [s; 3]);
        let grouped = plain.with_groups(g);
        let input = [extent, extent + 1, extent + 2];
        prop_assert_eq!(count_params(&plain).unwrap(), g as u64 * count_params(&grouped).unwrap());
        prop_assert_eq!(count_flops(&plain, input).unwrap(), g as u64 * count_flops(&grouped, input).unwrap());
        prop_assert_eq!(plain.output_dims(input).unwrap(), grouped.output_dims(input).unwrap());
    }

    #[test]
    fn subsample_is_monotone_with_endpoints(t in 2usize..6000, frac in 0.0f64..1.0) {
        let k = 2 + ((t - 2) as f64 * frac) as usize;
        let idx = subsample_indices(t, k).unwrap();
        prop_assert_eq!(idx.len(), k);
        prop_assert_eq!(idx[0], 0);
        prop_assert_eq!(idx[k - 1], t - 1);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn normalization_round_trips(seed in any::<u64>(), scale in 1e-3f64..1e4, shift in -1e3f64..1e3) {
        let x: Tensor<f64> = randn(&mut Rng::new(seed), &[5, 7], shift, scale).unwrap();
        let (z, lo, hi) = minmax_normalize(&x).unwrap();
        prop_assert!(z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = denormalize(&z, lo, hi);
        let tol = 1e-12 * (hi - lo).max(lo.abs()).max(hi.abs());
        prop_assert!(back.max_abs_diff(&x).unwrap() <= tol);
    }

    #[test]
    fn ssim_is_symmetric_and_one_on_itself(seed in any::<u64>(), h in 11usize..16, w in 11usize..16) {
        let mut rng = Rng::new(seed);
        let a: Vec<f64> = (0..h * w).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let b: Vec<f64> = (0..h * w).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        prop_assert_eq!(ssim_2d(&a, &a, h, w).unwrap(), 1.0);
        prop_assert!((ssim_2d(&a, &b, h, w).unwrap() - ssim_2d(&b, &a, h, w).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn rmse_bounds_mae(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = Rng::new(seed);
        let a: Tensor<f64> = randn(&mut rng, &[n], 0.0, 1.0).unwrap();
        let b: Tensor<f64> = randn(&mut rng, &[n], 0.0, 3.0).unwrap();
        prop_assert!(rmse(&a, &b).unwrap() >= mae(&a, &b).unwrap());
    }

    #[test]
    fn learning_rate_steps_down_after_warmup(
        total in 2usize..100,
        warm_frac in 0.0f64..0.5,
        cuts in prop::collection::btree_set(1usize..100, 0..4),
    ) {
        let warmup_epochs = (total as f64 * warm_frac) as usize;
        let decay_epochs: Vec<usize> = cuts.into_iter().filter(|&e| e > warmup_epochs && e < total).collect();
        let cfg = TrainConfig { base_lr: 1e-3, warmup_epochs, decay_epochs: decay_epochs.clone(), total_epochs: total, ..Default::default() };
        let lrs: Vec<f64> = (0..total).map(|e| lr_at_epoch(&cfg, e).unwrap()).collect();
        for e in warmup_epochs.max(1)..total {
            prop_assert!(lrs[e] <= lrs[e - 1] || e == warmup_epochs);
            if !decay_epochs.contains(&e) && e > warmup_epochs {
                prop_assert_eq!(lrs[e], lrs[e - 1]);
            }
        }
    }

    #[test]
    fn plain_and_grouped_variants_share_geometry(t in 20usize..40, r in 4usize..9, n in 1usize..4) {
        let input = InputGeometry { channels: 4, dims: [t, r, r] };
        let Ok(profile) = desk_profile(16, input, [6, 6, 6]) else { return Ok(()) };
        let shapes = |kind| -> Vec<(String, [usize; 4])> {
            build_plan(ModelVariant::new(kind, n), &profile)
                .unwrap()
                .nodes
                .into_iter()
                .filter(|node| !matches!(node.op, PlanOp::Shuffle { .. }))
                .map(|node| (node.name, node.output))
                .collect()
        };
        prop_assert_eq!(shapes(VariantKind::S), shapes(VariantKind::G));
        prop_assert_eq!(shapes(VariantKind::I), shapes(VariantKind::Full));
    }

    #[test]
    fn stored_activations_flat_for_invertible_and_linear_for_stacked(t in 20usize..40, batch in 1usize..4) {
        let input = InputGeometry { channels: 4, dims: [t, 4, 4] };
        let Ok(profile) = desk_profile(16, input, [6, 6, 6]) else { return Ok(()) };
        let total = |kind, n| memory_ledger(&build_plan(ModelVariant::new(kind, n), &profile).unwrap(), batch).total_elements;
        let full: Vec<u64> = (1..=4).map(|n| total(VariantKind::Full, n)).collect();
        prop_assert!(full.windows(2).all(|w| w[0] == w[1]));
        let g: Vec<u64> = (1..=4).map(|n| total(VariantKind::G, n)).collect();
        let step = g[1] - g[0];
        prop_assert!(step > 0 && g.windows(2).all(|w| w[1] - w[0] == step));
    }
}
