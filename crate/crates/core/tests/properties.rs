use std::path::Path;

use chrono::DateTime;
use proptest::prelude::*;

use triderm::corpus::{
    decode_feature_bytes, encode_containers, judgments_to_jsonl, pairwise_distances, parse_judgments,
    sequential_ids, synth_dataset, Choice, DistanceMatrix, EmbeddingSet, FeatureContainer, FeatureFile, ItemId,
    Metric, Source, SynthConfig, TripletJudgment, WoundMask,
};
use triderm::fusion::{minmax_normalize, modality_confidence, similarity_fuse, uncertainty_fuse};
use triderm::metrics::evaluate_report;
use triderm::oracle::{plan_queries, run_oracle_blocking, synthetic_descriptions, MockMode, MockServer, OracleConfig};
use triderm::pool::{attention_pool, ssl_loss, HeadParams, HeadShape, LossKind, Pooling, SslConfig, TokenSet};
use triderm::soe::{soe_loss_and_grad, TripletConstraint};

fn origin() -> &'static Path {
    Path::new("prop")
}

fn embedding() -> impl Strategy<Value = EmbeddingSet> {
    (1usize..8, 1usize..5).prop_flat_map(|(n, dim)| {
        prop::collection::vec(-1e6f64..1e6, n * dim)
            .prop_map(move |coords| EmbeddingSet::new(sequential_ids("e", n), dim, coords).unwrap())
    })
}

fn distances(max_n: usize) -> impl Strategy<Value = DistanceMatrix> {
    (2usize..max_n).prop_flat_map(|n| {
        prop::collection::vec(0.0f64..100.0, n * (n - 1) / 2).prop_map(move |upper| {
            let mut it = upper.into_iter();
            DistanceMatrix::from_upper(sequential_ids("d", n), |_, _| it.next().unwrap()).unwrap()
        })
    })
}

fn choice() -> impl Strategy<Value = Choice> {
    prop_oneof![Just(Choice::Left), Just(Choice::Right), Just(Choice::Skipped)]
}

fn judgment(n: usize) -> impl Strategy<Value = TripletJudgment> {
    (
        prop::sample::subsequence((0..n).collect::<Vec<_>>(), 3).prop_shuffle(),
        choice(),
        prop_oneof![Just(Source::Human), Just(Source::Oracle), Just(Source::Synthetic)],
        prop::option::of("[a-z][a-z0-9_]{0,7}"),
        0i64..4_000_000_000,
        0u32..1_000_000_000,
    )
        .prop_map(move |(idx, choice, source, annotator, secs, nanos)| {
            let ids = sequential_ids("j", n);
            TripletJudgment::new(
                ids[idx[0]].clone(),
                ids[idx[1]].clone(),
                ids[idx[2]].clone(),
                choice,
                source,
                annotator,
                DateTime::from_timestamp(secs, nanos).unwrap(),
            )
            .unwrap()
        })
}

fn container() -> impl Strategy<Value = FeatureContainer> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..3).prop_flat_map(|(c, h, w, n_wounds)| {
        (
            prop::collection::vec(-1e3f32..1e3, c * h * w),
            prop::collection::vec(prop::collection::vec(any::<bool>(), h * w), n_wounds),
            "[a-z]{1,6}",
        )
            .prop_map(move |(values, masks, item)| {
                let wounds = masks
                    .into_iter()
                    .enumerate()
                    .map(|(k, mut cells)| {
                        let at = k % cells.len();
                        cells[at] = true;
                        WoundMask {
                            id: format!("w{k}"),
                            cells,
                        }
                    })
                    .collect();
                FeatureContainer::new(ItemId::new(item).unwrap(), c, h, w, values, wounds).unwrap()
            })
    })
}

fn constraints(n: usize, len: usize) -> impl Strategy<Value = Vec<TripletConstraint>> {
    prop::collection::vec(
        prop::sample::subsequence((0..n).collect::<Vec<_>>(), 3).prop_shuffle(),
        1..len,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|t| TripletConstraint {
                anchor: t[0],
                closer: t[1],
                farther: t[2],
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn embedding_csv_round_trips(e in embedding()) {
        let back = EmbeddingSet::parse_csv(&e.to_csv_string(), origin()).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn distance_csv_round_trips(d in distances(9)) {
        let back = DistanceMatrix::parse_csv(&d.to_csv_string(), origin()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn judgments_jsonl_round_trips(js in prop::collection::vec(judgment(7), 1..20)) {
        let back = parse_judgments(&judgments_to_jsonl(&js), origin()).unwrap();
        prop_assert_eq!(back, js);
    }

    #[test]
    fn feature_binary_round_trips(cs in prop::collection::vec(container(), 1..4)) {
        let back = decode_feature_bytes(&encode_containers(&cs)).unwrap();
        prop_assert_eq!(back, FeatureFile::Containers(cs));
    }

    #[test]
    fn euclidean_distances_obey_triangle_inequality(e in embedding()) {
        prop_assume!(e.len() >= 2);
        let d = pairwise_distances(&e, Metric::Euclidean).unwrap();
        let n = d.len();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-9 * (1.0 + d.get(i, k)));
                }
            }
        }
    }

    #[test]
    fn attention_pooling_ignores_token_order(
        (c, tokens, perm) in (1usize..5, 1usize..10).prop_flat_map(|(c, n)| (
            Just(c),
            prop::collection::vec(-3.0f64..3.0, n * c),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )),
        seed in any::<u64>(),
        mean in any::<bool>(),
    ) {
        let pooling = if mean { Pooling::Mean } else { Pooling::Attention };
        let p = HeadParams::init(HeadShape { channels: c, hidden: 3, dim: 4 }, pooling, 1e-5, seed).unwrap();
        let permuted: Vec<f64> = perm.iter().flat_map(|&r| tokens[r * c..][..c].to_vec()).collect();
        let item = ItemId::new("x").unwrap();
        let a = attention_pool(&TokenSet::new(item.clone(), "w", c, tokens).unwrap(), &p).unwrap();
        let b = attention_pool(&TokenSet::new(item, "w", c, permuted).unwrap(), &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn soe_loss_is_rigid_invariant(
        coords in prop::collection::vec(-2.0f64..2.0, 16),
        batch in constraints(8, 30),
        theta in 0.0f64..std::f64::consts::TAU,
        shift in (-5.0f64..5.0, -5.0f64..5.0),
        margin in 0.0f64..1.0,
    ) {
        let (s, c) = theta.sin_cos();
        let moved: Vec<f64> = coords
            .chunks(2)
            .flat_map(|p| [c * p[0] - s * p[1] + shift.0, s * p[0] + c * p[1] + shift.1])
            .collect();
        let a = soe_loss_and_grad(&coords, 2, &batch, margin).unwrap().0;
        let b = soe_loss_and_grad(&moved, 2, &batch, margin).unwrap().0;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn soe_loss_grows_with_margin(
        coords in prop::collection::vec(-2.0f64..2.0, 24),
        batch in constraints(8, 30),
        m1 in 0.0f64..1.0,
        dm in 0.0f64..1.0,
    ) {
        let a = soe_loss_and_grad(&coords, 3, &batch, m1).unwrap().0;
        let b = soe_loss_and_grad(&coords, 3, &batch, m1 + dm).unwrap().0;
        prop_assert!(b >= a);
    }

    #[test]
    fn balanced_equals_micro_for_even_anchors(
        d in distances(8),
        per_anchor in 1usize..5,
        seed in any::<u64>(),
    ) {
        let n = d.len();
        prop_assume!(n >= 3);
        let ids = d.ids().to_vec();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut js = Vec::new();
        for a in 0..n {
            for _ in 0..per_anchor {
                let others: Vec<usize> = (0..n).filter(|&i| i != a).collect();
                let pick = rand::seq::index::sample(&mut rng, others.len(), 2);
                let choice = if rand::Rng::random_bool(&mut rng, 0.5) { Choice::Left } else { Choice::Right };
                js.push(TripletJudgment::new(
                    ids[a].clone(),
                    ids[others[pick.index(0)]].clone(),
                    ids[others[pick.index(1)]].clone(),
                    choice,
                    Source::Synthetic,
                    None,
                    triderm::corpus::synthetic_epoch(),
                ).unwrap());
            }
        }
        let r = evaluate_report(&d, &js).unwrap();
        prop_assert!((r.balanced_agreement - r.micro_agreement).abs() < 1e-12);
    }

    #[test]
    fn scores_ignore_judgment_order(
        d in distances(8),
        js in prop::collection::vec(judgment(7), 1..40),
        seed in any::<u64>(),
    ) {
        prop_assume!(d.len() >= 7 && js.iter().any(|j| j.choice != Choice::Skipped));
        let ids = d.ids().to_vec();
        let remap = |id: &ItemId| ids[id.as_str()[1..].parse::<usize>().unwrap()].clone();
        let js: Vec<TripletJudgment> = js
            .into_iter()
            .map(|j| TripletJudgment { anchor: remap(&j.anchor), left: remap(&j.left), right: remap(&j.right), ..j })
            .collect();
        let mut shuffled = js.clone();
        rand::seq::SliceRandom::shuffle(
            shuffled.as_mut_slice(),
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
        );
        let a = evaluate_report(&d, &js).unwrap();
        let b = evaluate_report(&d, &shuffled).unwrap();
        prop_assert_eq!(a.kappa.to_bits(), b.kappa.to_bits());
        prop_assert_eq!(a.balanced_agreement.to_bits(), b.balanced_agreement.to_bits());
        prop_assert_eq!(a.macro_f1.to_bits(), b.macro_f1.to_bits());
        prop_assert_eq!(a.confusion, b.confusion);
    }

    #[test]
    fn fusion_stays_between_and_above(
        (v, t) in (3usize..9).prop_flat_map(|n| {
            let m = move || prop::collection::vec(0.0f64..10.0, n * (n - 1) / 2).prop_map(move |u| {
                let mut it = u.into_iter();
                DistanceMatrix::from_upper(sequential_ids("f", n), |_, _| it.next().unwrap()).unwrap()
            });
            (m(), m())
        }),
        alpha in 0.0f64..=1.0,
    ) {
        let (Ok(v), Ok(t)) = (minmax_normalize(&v), minmax_normalize(&t)) else {
            return Ok(());
        };
        let u = uncertainty_fuse(&v, &t, alpha).unwrap();
        let s = similarity_fuse(&v, &t).unwrap();
        for ((&f, &g), (&a, &b)) in u.values().iter().zip(s.values()).zip(v.values().iter().zip(t.values())) {
            prop_assert!(f >= a.min(b) - 1e-15 && f <= a.max(b) + 1e-15);
            prop_assert!(g >= a.max(b) && g <= 1.0);
        }
        prop_assert!(modality_confidence(&v).unwrap().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn vicreg_terms_are_nonnegative(
        (d, fa, fb) in (2usize..6, 1usize..6).prop_flat_map(|(b, d)| (
            Just(d),
            prop::collection::vec(-3.0f64..3.0, b * d),
            prop::collection::vec(-3.0f64..3.0, b * d),
        )),
    ) {
        let cfg = SslConfig::for_loss(LossKind::Vicreg);
        let parts = ssl_loss(&fa, &fb, d, &cfg).unwrap();
        prop_assert!(parts.invariance >= 0.0 && parts.variance >= 0.0 && parts.covariance >= 0.0);
        let total = cfg.lambda * parts.invariance + cfg.mu * parts.variance + cfg.nu * parts.covariance;
        prop_assert!((parts.total - total).abs() <= 1e-12 * (1.0 + total));
    }
}

#[test]
fn oracle_output_does_not_depend_on_parallelism() {
    let c = synth_dataset(&SynthConfig {
        n_items: 7,
        ..SynthConfig::default()
    })
    .unwrap();
    let descriptions = synthetic_descriptions(&c.latents);
    let server = MockServer::start(MockMode::Latent).unwrap();
    let runs: Vec<_> = [1, 3, 16]
        .into_iter()
        .map(|max_parallel| {
            let cfg = OracleConfig {
                endpoint: server.endpoint(),
                max_parallel,
                budget_fraction: 0.6,
                seed: 4,
                ..OracleConfig::default()
            };
            let queries = plan_queries(&descriptions, &cfg).unwrap();
            run_oracle_blocking(&descriptions, &queries, &cfg)
                .unwrap()
                .judgments
                .into_iter()
                .map(|j| (j.anchor, j.left, j.right, j.choice))
                .collect::<Vec<_>>()
        })
        .collect();
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}
