use jointslu::data::{parse_str, write_corpus, CorpusFormat, Example};
use jointslu::eval::{extract_spans, slot_f1, spans_to_bio};
use jointslu::model::layers::{kl_divergence, kl_sparsity};
use proptest::prelude::*;

const KINDS: [&str; 3] = ["FromCity", "ToCity", "Date"];

/// Legal BIO sequence of length 1..12.
fn bio() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0usize..3, 0usize..3), 1..12).prop_map(|cells| {
        let mut out: Vec<String> = Vec::new();
        let mut open: Option<usize> = None;
        for (action, kind) in cells {
            match (action, open) {
                (0, _) => {
                    out.push("O".into());
                    open = None;
                }
                (1, Some(k)) => out.push(format!("I-{}", KINDS[k])),
                _ => {
                    out.push(format!("B-{}", KINDS[kind]));
                    open = Some(kind);
                }
            }
        }
        out
    })
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,8}"
}

proptest! {
    #[test]
    fn kl_nonnegative_and_zero_only_at_rho(rho in 0.01f64..0.99, hat in 0.001f64..0.999) {
        let kl = kl_divergence(rho, hat);
        prop_assert!(kl >= 0.0);
        if (rho - hat).abs() > 1e-6 {
            prop_assert!(kl > 0.0);
        }
        prop_assert_eq!(kl_divergence(rho, rho), 0.0);
    }

    #[test]
    fn kl_grows_away_from_rho(rho in 0.05f64..0.95, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(far - near > 1e-3);
        // both points on the same side, scaled into (0, 1)
        let up = |t: f64| rho + t * (0.999 - rho);
        let down = |t: f64| rho - t * (rho - 0.001);
        prop_assert!(kl_divergence(rho, up(far)) > kl_divergence(rho, up(near)));
        prop_assert!(kl_divergence(rho, down(far)) > kl_divergence(rho, down(near)));
    }

    #[test]
    fn penalty_sums_positions(rho in 0.01f64..0.5, hats in prop::collection::vec(0.01f64..0.99, 1..10)) {
        let total = kl_sparsity(rho, &hats).unwrap();
        let direct: f64 = hats.iter().map(|&h| kl_divergence(rho, h)).sum();
        prop_assert!((total - direct).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn spans_and_bio_are_inverse(tags in bio()) {
        let set = extract_spans(&tags);
        prop_assert_eq!(set.repaired, 0);
        prop_assert_eq!(spans_to_bio(&set.spans, tags.len()).unwrap(), tags);
    }

    #[test]
    fn f1_is_symmetric(gold in bio(), seed in any::<u64>()) {
        // random prediction of the same length
        let pred: Vec<String> = gold
            .iter()
            .enumerate()
            .map(|(i, g)| if (seed >> (i % 64)) & 1 == 1 { "O".to_string() } else { g.clone() })
            .collect();
        let ab = slot_f1(&[&gold], &[&pred]).unwrap();
        let ba = slot_f1(&[&pred], &[&gold]).unwrap();
        prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
        prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
        prop_assert!(ab.f1 >= 0.0 && ab.f1 <= 1.0);
        let perfect = slot_f1(&[&gold], &[&gold]).unwrap();
        prop_assert!(perfect.gold_spans == 0 || perfect.f1 == 1.0);
    }

    #[test]
    fn fixing_a_span_never_lowers_f1(gold in bio()) {
        // predict nothing, then restore gold spans one at a time
        let spans = extract_spans(&gold).spans;
        let mut last = -1.0;
        for keep in 0..=spans.len() {
            let pred = spans_to_bio(&spans[..keep], gold.len()).unwrap();
            let f1 = slot_f1(&[&gold], &[&pred]).unwrap().f1;
            prop_assert!(f1 >= last);
            last = f1;
        }
    }

    #[test]
    fn corpus_round_trips(
        rows in prop::collection::vec((prop::collection::vec(word(), 1..8), prop::option::of(0usize..3)), 0..6),
        jsonl in any::<bool>(),
    ) {
        let corpus: Vec<Example> = rows
            .into_iter()
            .map(|(tokens, intent)| {
                let tags = vec!["O".to_string(); tokens.len()];
                Example::new(tokens, Some(tags), intent.map(|i| KINDS[i].to_string()))
            })
            .collect();
        let format = if jsonl { CorpusFormat::Jsonl } else { CorpusFormat::Columns };
        let text = write_corpus(&corpus, format);
        prop_assert_eq!(parse_str(&text, format).unwrap(), corpus);
    }
}
