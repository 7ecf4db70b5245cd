use std::path::Path;

use proptest::collection::vec;
use proptest::prelude::*;

use incindex_core::store::{self, QueryKind, QueryRecord, Split};
use incindex_core::{
    add_document, check_feasibility, f_beta_target, hits_at_k, minimize, mrr_at_k, top_k,
    Hyperparams, IndexState, LossVariant, Matrix, Objective, ObjectiveContext, OptimizerConfig,
    RankedResult,
};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    vec(-2.0f32..2.0, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

/// A state with `m` rows of width `h` plus a query of the same width.
fn state_and_query() -> impl Strategy<Value = (IndexState, Vec<f32>)> {
    (1usize..12, 1usize..6).prop_flat_map(|(m, h)| {
        (matrix(m, h), matrix(m, h), vec(-2.0f32..2.0, h)).prop_map(move |(v, z, q)| {
            let ids: Vec<String> = (0..m).map(|i| format!("d{i}")).collect();
            (IndexState::new(&v, &z, &ids).unwrap(), q)
        })
    })
}

fn hyperparams() -> impl Strategy<Value = Hyperparams> {
    (0.05f64..0.95, 0.0f64..1e-2, 0.01f64..3.0, 0.01f64..3.0, any::<bool>()).prop_map(
        |(lambda1, lambda2, gamma1, gamma2, squared)| Hyperparams {
            lambda1,
            lambda2,
            gamma1,
            gamma2,
            loss_variant: if squared {
                LossVariant::SquaredHinge
            } else {
                LossVariant::Hinge
            },
        },
    )
}

fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn dot(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * y).sum()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn appends_keep_diag_coherent_and_prior_rows_fixed(
        (mut state, _) in state_and_query(),
        extra in vec(vec(-2.0f32..2.0, 6), 1..20),
    ) {
        let h = state.dim();
        for (n, row) in extra.iter().enumerate() {
            let before_v = state.vectors().to_matrix();
            let before_z = state.queries().to_matrix();
            let before_d = state.diag_values();
            let len = state.len();
            state.append_document(&format!("x{n}"), &row[..h], &row[6 - h..]).unwrap();
            prop_assert_eq!(state.len(), len + 1);
            let (after_v, after_z) = (state.vectors().to_matrix(), state.queries().to_matrix());
            prop_assert_eq!(&after_v.as_slice()[..len * h], before_v.as_slice());
            prop_assert_eq!(&after_z.as_slice()[..len * h], before_z.as_slice());
            prop_assert_eq!(&state.diag_values()[..len], &before_d[..]);
        }
        for (stored, fresh) in state.diag_values().iter().zip(state.recompute_diag()) {
            prop_assert!((stored - fresh).abs() <= 1e-5);
        }
        for (row, id) in state.doc_ids().enumerate() {
            prop_assert_eq!(state.row_of(id), Some(row));
        }
        prop_assert!(state.append_document("d0", &extra[0][..h], &extra[0][..h]).is_err());
    }

    #[test]
    fn losses_are_nonnegative_and_zero_exactly_when_met(
        (state, q) in state_and_query(),
        hp in hyperparams(),
        v in vec(-3.0f64..3.0, 5),
    ) {
        let v = &v[..state.dim().min(5)];
        prop_assume!(v.len() == state.dim());
        let ctx = ObjectiveContext::new(&state, &q, hp).unwrap();
        let (l1, l2) = (ctx.loss_l1(v), ctx.loss_l2(v));
        prop_assert!(l1 >= 0.0 && l2 >= 0.0 && ctx.total_loss(v) >= 0.0);

        let c = ctx.max_score();
        let l1_met = dot(&q, v) >= c + hp.gamma1;
        prop_assert_eq!(l1 == 0.0, l1_met);
        let l2_met = (0..state.len())
            .all(|j| dot(state.query(j), v) <= f64::from(state.diag(j)) - hp.gamma2);
        prop_assert_eq!(l2 == 0.0, l2_met);
    }

    #[test]
    fn total_loss_is_convex(
        (state, q) in state_and_query(),
        hp in hyperparams(),
        a in vec(-3.0f64..3.0, 5),
        b in vec(-3.0f64..3.0, 5),
        t in 0.0f64..1.0,
    ) {
        let h = state.dim();
        let (a, b) = (&a[..h], &b[..h]);
        let ctx = ObjectiveContext::new(&state, &q, hp).unwrap();
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let lhs = ctx.total_loss(&mid);
        let rhs = t * ctx.total_loss(a) + (1.0 - t) * ctx.total_loss(b);
        prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()), "{lhs} > {rhs}");
    }

    #[test]
    fn stale_max_score_matches_fresh(
        (state, q) in state_and_query(),
        hp in hyperparams(),
        v in vec(-3.0f64..3.0, 5),
    ) {
        let v = &v[..state.dim()];
        let fresh = ObjectiveContext::new(&state, &q, hp).unwrap();
        let stale = ObjectiveContext::with_max_score(&state, &q, fresh.max_score(), hp).unwrap();
        prop_assert_eq!(fresh.total_loss(v), stale.total_loss(v));
        let mut g1 = vec![0.0; v.len()];
        let mut g2 = vec![0.0; v.len()];
        prop_assert_eq!(fresh.evaluate(v, &mut g1), stale.evaluate(v, &mut g2));
        prop_assert_eq!(g1, g2);
    }

    #[test]
    fn minimize_descends_monotonically_and_deterministically(
        (state, q) in state_and_query(),
        hp in hyperparams(),
        x0 in vec(-1.0f64..1.0, 5),
    ) {
        let x0 = &x0[..state.dim()];
        let ctx = ObjectiveContext::new(&state, &q, hp).unwrap();
        let mut g = vec![0.0; x0.len()];
        let mut prev = ctx.evaluate(x0, &mut g);
        let mut last = None;
        // Runs with a growing cap share their prefix, so final values trace
        // the accepted iterates.
        for cap in 1..=12 {
            let cfg = OptimizerConfig { max_iterations: cap, ..Default::default() };
            let res = minimize(&ctx, x0, &cfg).unwrap();
            prop_assert!(res.final_value <= prev, "{} > {prev}", res.final_value);
            prop_assert!(res.iterations <= cap);
            prev = res.final_value;
            let again = minimize(&ctx, x0, &cfg).unwrap();
            prop_assert_eq!(&res, &again);
            last = Some(res);
        }
        prop_assert!(last.is_some());
    }

    #[test]
    fn feasible_add_retrieves_itself_and_leaves_old_argmax(
        (mut state, _) in state_and_query(),
        queries in vec(vec(-2.0f32..2.0, 5), 1..4),
        seed in any::<u64>(),
    ) {
        let h = state.dim();
        let queries: Vec<Vec<f32>> = queries.iter().map(|q| q[..h].to_vec()).collect();
        let before: Vec<usize> = (0..state.len())
            .map(|j| top_k(&state, state.query(j), 1).unwrap().entries[0].doc.row)
            .collect();
        let hp = Hyperparams { gamma1: 0.1, gamma2: 0.1, ..Default::default() };
        let report = add_document(&mut state, "new", &queries, &hp, &OptimizerConfig::default(), seed).unwrap();
        let row = report.doc_id.row;
        if report.feasible {
            let top = top_k(&state, state.query(row), 1).unwrap();
            prop_assert_eq!(top.entries[0].doc.row, row);
            for (j, &old) in before.iter().enumerate() {
                let new_score = dot(state.query(j), &to64(state.vector(row)));
                prop_assert!(new_score < f64::from(state.diag(j)));
                prop_assert_eq!(top_k(&state, state.query(j), 1).unwrap().entries[0].doc.row, old);
            }
        }
        prop_assert_eq!(
            report.feasible,
            report.new_margin > 0.0 && report.min_old_margin > 0.0
        );
    }

    #[test]
    fn zero_hinge_losses_imply_feasible(
        (state, q) in state_and_query(),
        hp in hyperparams(),
        v in vec(-3.0f32..3.0, 5),
    ) {
        let v = &v[..state.dim()];
        let ctx = ObjectiveContext::new(&state, &q, hp).unwrap();
        let v64 = to64(v);
        if ctx.loss_l1(&v64) == 0.0 && ctx.loss_l2(&v64) == 0.0 {
            prop_assert!(check_feasibility(&state, v, &q).unwrap().feasible);
        }
    }

    #[test]
    fn ranking_ignores_positive_query_scale(
        (state, q) in state_and_query(),
        scale in 0.01f32..100.0,
    ) {
        let scaled: Vec<f32> = q.iter().map(|x| x * scale).collect();
        let k = state.len();
        let a = top_k(&state, &q, k).unwrap();
        let b = top_k(&state, &scaled, k).unwrap();
        // Rescaling can only merge or split near-ties through rounding;
        // exact ties aside, the order is the same.
        let order = |r: &RankedResult| r.entries.iter().map(|e| e.doc.row).collect::<Vec<_>>();
        let scores: Vec<f64> = a.entries.iter().map(|e| e.score).collect();
        let distinct = scores.windows(2).all(|w| (w[0] - w[1]).abs() > 1e-4 * (1.0 + w[0].abs()));
        if distinct {
            prop_assert_eq!(order(&a), order(&b));
        }
    }

    #[test]
    fn hit_rate_grows_with_k_and_bounds_mrr(
        (state, _) in state_and_query(),
        queries in vec(vec(-2.0f32..2.0, 5), 1..10),
        golds in vec(any::<prop::sample::Index>(), 10),
    ) {
        let h = state.dim();
        let m = state.len();
        let results: Vec<RankedResult> = queries
            .iter()
            .map(|q| top_k(&state, &q[..h], m).unwrap())
            .collect();
        let golds: Vec<_> = golds[..results.len()].iter().map(|i| state.doc_id(i.index(m))).collect();
        let mut prev = 0.0;
        for k in 1..=m {
            let hk = hits_at_k(&golds, &results, k).unwrap();
            prop_assert!(hk >= prev);
            prev = hk;
        }
        let h10 = hits_at_k(&golds, &results, 10).unwrap();
        let mrr = mrr_at_k(&golds, &results, 10).unwrap();
        prop_assert!(mrr >= h10 / 10.0 - 1e-12 && mrr <= h10 + 1e-12);
    }

    #[test]
    fn larger_beta_pulls_target_toward_orig(yt in 0.01f64..1.0, yo in 0.01f64..1.0) {
        prop_assume!((yt - yo).abs() > 1e-9);
        let far = (f_beta_target(yt, yo, 1.0) - yo).abs();
        let near = (f_beta_target(yt, yo, 100.0) - yo).abs();
        prop_assert!(near < far);
        prop_assert!((f_beta_target(yt, yo, 1e-6) - yt).abs() < 1e-4);
    }

    #[test]
    fn embedding_files_round_trip(m in matrix(3, 4)) {
        let bytes = store::encode_matrix(&m).unwrap();
        prop_assert_eq!(bytes.len(), 20 + 4 * 12);
        let back = store::decode_matrix(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(store::encode_matrix(&back).unwrap(), bytes);
    }

    #[test]
    fn manifests_round_trip(
        rows in vec((0usize..5, any::<bool>(), 0u8..3), 0..20),
    ) {
        let records: Vec<QueryRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(doc, natural, split))| QueryRecord {
                row_index: i,
                doc_id: format!("doc-{doc}"),
                kind: if natural { QueryKind::Natural } else { QueryKind::Generated },
                split: [Split::Train, Split::Val, Split::Test][split as usize],
            })
            .collect();
        let text = store::format_query_manifest(&records).unwrap();
        let back = store::parse_query_manifest(&text, records.len(), Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &records);
        prop_assert_eq!(store::format_query_manifest(&back).unwrap(), text);
    }

    #[test]
    fn snapshots_round_trip((state, _) in state_and_query(), hp in hyperparams()) {
        let bytes = store::encode_snapshot(&state, &hp).unwrap();
        let (back, hp_back) = store::decode_snapshot(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(hp_back, hp);
        prop_assert_eq!(back.vectors().to_matrix(), state.vectors().to_matrix());
        prop_assert_eq!(back.queries().to_matrix(), state.queries().to_matrix());
        prop_assert_eq!(back.diag_values(), state.diag_values());
        prop_assert_eq!(back.n0(), state.n0());
        prop_assert!(back.doc_ids().eq(state.doc_ids()));
        prop_assert_eq!(store::encode_snapshot(&back, &hp_back).unwrap(), bytes);
    }
}
