//! Property tests for the solver, the integration pipeline, the autodiff
//! core, and the generator.

use proptest::prelude::*;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use tpareto::integrate::{
    integrate_module_gradient, relative_weights, weight_truncate, LossLevel, ModuleGradientSet,
    TParetoConfig,
};
use tpareto::model::FusionLevel;
use tpareto::pareto::{
    analytic_two_task, frank_wolfe_minnorm, ParetoProblem, ParetoWeights, SolverConfig,
};
use tpareto::synth::{generate, GenConfig};
use tpareto::tensor::{
    backward, finite_diff, grad_relative_error, softmax, GradientVector, GroupId, ParamBinding,
    ParameterGroup, Tape, Tensor,
};

fn gv(values: Vec<f64>) -> GradientVector {
    GradientVector { group: GroupId::Theta1, values }
}

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Reverse-mode gradients agree with central differences on a graph
    /// mixing matmul, bias, softmax attention, pooling, slicing, scaling,
    /// and cross-entropy (inputs of dimension ≤ 64).
    #[test]
    fn backward_matches_finite_differences(
        seed in 0u64..1_000_000,
        rows in 2usize..5,
        cols in 2usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterGroup::new(GroupId::Theta1);
        let t = |rng: &mut ChaCha8Rng, m: usize, n: usize| {
            Tensor::new(vec![m, n], (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap()
        };
        p.push("w", t(&mut rng, rows, 2 * cols));
        p.push("b", t(&mut rng, 1, 2 * cols));
        let x = t(&mut rng, 2, rows);
        let labels = vec![rng.random_range(0..cols), rng.random_range(0..cols)];

        let eval = |q: &ParameterGroup| -> (f64, Option<std::collections::BTreeMap<GroupId, GradientVector>>) {
            let mut tape = Tape::new();
            let binding = ParamBinding::register(&mut tape, &[q]);
            let w = binding.named(q.id, "w");
            let b = binding.named(q.id, "b");
            let xn = tape.leaf(x.clone());
            let h = tape.matmul(xn, w);
            let h = tape.add_bias_row(h, b);
            let ht = tape.transpose(h);
            let scores = tape.matmul(h, ht);
            let scaled = tape.scale(scores, 0.5);
            let attn = tape.softmax_rows(scaled);
            let mixed = tape.matmul(attn, h);
            let res = tape.add(mixed, h);
            let left = tape.slice_cols(res, 0, cols);
            let right = tape.slice_cols(res, cols, cols);
            let prod = tape.mul(left, right);
            let pooled = tape.mean_rows(prod);
            let wide = tape.concat_cols(&[pooled; 2]);
            let logits = tape.reshape(wide, vec![2, cols]);
            let loss = tape.cross_entropy_logits(logits, &labels);
            let grads = backward(&tape, loss, &binding).unwrap();
            (tape.value(loss).data[0], Some(grads))
        };

        let (_, grads) = eval(&p);
        let analytic = grads.unwrap().remove(&p.id).unwrap();
        let fd = finite_diff(|q| Ok(eval(q).0), &p, 1e-5).unwrap();
        let err = grad_relative_error(&analytic, &fd);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    /// The two-task closed form is invariant to rescaling both gradients.
    #[test]
    fn two_task_weight_is_scale_invariant(
        a in finite_vec(6),
        b in finite_vec(6),
        c in 1e-3f64..1e3,
    ) {
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        prop_assume!(dist > 1e-6);
        let w1 = analytic_two_task(&gv(a.clone()), &gv(b.clone())).unwrap();
        let w2 = analytic_two_task(&gv(a).scaled(c), &gv(b).scaled(c)).unwrap();
        prop_assert!((w1 - w2).abs() < 1e-9);
    }

    /// Solver outputs always satisfy the simplex invariants exactly and
    /// certify first-order optimality.
    #[test]
    fn solver_weights_lie_on_the_simplex(
        entries in prop::collection::vec(finite_vec(5), 2..4),
    ) {
        let problem = ParetoProblem::new(entries.into_iter().map(gv).collect()).unwrap();
        let w = frank_wolfe_minnorm(&problem, &SolverConfig::default()).unwrap();
        prop_assert!(w.alpha.iter().all(|a| *a >= 0.0));
        let sum: f64 = w.alpha.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        let star = problem.combine(&w.alpha);
        let ns = star.norm_sq();
        for g in problem.gradients() {
            prop_assert!(star.dot(g) >= ns - 1e-6);
        }
    }

    /// Truncation caps the non-all-modal mass at k, preserves proportions,
    /// and never touches the all-modal entry.
    #[test]
    fn truncation_caps_non_all_modal_mass(
        mut weights in prop::collection::vec(0.0f64..100.0, 2..5),
        k in 0.1f64..5.0,
    ) {
        let all_idx = weights.len() - 1;
        weights[all_idx] = 1.0;
        let (out, fired) = weight_truncate(&weights, all_idx, k);
        prop_assert_eq!(out[all_idx], 1.0);
        let before: f64 = weights[..all_idx].iter().sum();
        let after: f64 = out[..all_idx].iter().sum();
        prop_assert!(after <= k + 1e-9);
        prop_assert_eq!(fired, before > k);
        if fired && before > 0.0 {
            for (w, o) in weights[..all_idx].iter().zip(&out[..all_idx]) {
                prop_assert!((o - w * k / before).abs() < 1e-9);
            }
        }
    }

    /// Relative weights pin the all-modal entry to exactly 1 and scale the
    /// rest by the floored all-modal simplex weight.
    #[test]
    fn relative_weights_pin_all_modal_entry(
        mut alpha in prop::collection::vec(0.0f64..1.0, 2..5),
        eps in 1e-6f64..1e-2,
    ) {
        let sum: f64 = alpha.iter().sum();
        prop_assume!(sum > 0.0);
        for a in &mut alpha {
            *a /= sum;
        }
        let all_idx = alpha.len() - 1;
        let w = relative_weights(&ParetoWeights { alpha: alpha.clone() }, all_idx, eps);
        prop_assert_eq!(w[all_idx], 1.0);
        let denom = alpha[all_idx].max(eps);
        for (i, wi) in w.iter().enumerate() {
            if i != all_idx {
                prop_assert!((wi - alpha[i] / denom).abs() < 1e-12);
            }
        }
    }

    /// For γ ≥ 0 the integrated gradient never ascends the all-modal
    /// direction, and excluded entries always violate the cosine rule.
    #[test]
    fn integration_respects_the_all_modal_direction(
        entries in prop::collection::vec(finite_vec(6), 3),
        gamma in 0.0f64..0.9,
    ) {
        let gradients: Vec<GradientVector> = entries.into_iter().map(gv).collect();
        prop_assume!(!gradients[2].is_zero());
        let set = ModuleGradientSet {
            module: FusionLevel::I,
            gradients,
            levels: vec![LossLevel::L1, LossLevel::L2, LossLevel::All],
            all_modal_index: 2,
        };
        let cfg = TParetoConfig { gamma, ..TParetoConfig::default() };
        let out = integrate_module_gradient(&set, &cfg).unwrap();
        prop_assert!(out.values.dot(set.all_modal()) > 0.0);
        for r in &out.report {
            prop_assert_eq!(r.included, r.cosine > gamma);
        }
    }

    /// Softmax rows are distributions and invariant to per-row shifts.
    #[test]
    fn softmax_rows_are_shift_invariant_distributions(
        data in prop::collection::vec(-30.0f64..30.0, 12),
        shift in -5.0f64..5.0,
    ) {
        let t = Tensor::new(vec![3, 4], data.clone()).unwrap();
        let shifted =
            Tensor::new(vec![3, 4], data.iter().map(|v| v + shift).collect()).unwrap();
        let a = softmax(&t, 1).unwrap();
        let b = softmax(&shifted, 1).unwrap();
        for i in 0..3 {
            let row = &a.data[i * 4..(i + 1) * 4];
            prop_assert!(row.iter().all(|p| *p >= 0.0));
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Generated datasets stay label-balanced to within one sample.
    #[test]
    fn generated_labels_are_balanced(n in 2usize..120, seed in 0u64..1000) {
        let cfg = GenConfig {
            n_samples: n,
            seed,
            dim: 4,
            text_len: 1,
            audio_len: 1,
            image_count: 1,
            comment_count: (1, 1),
            ..GenConfig::default()
        };
        let data = generate(&cfg).unwrap();
        let fake = data.iter().filter(|s| s.label == 1).count() as i64;
        let real = data.len() as i64 - fake;
        prop_assert!((fake - real).abs() <= 1);
    }
}
