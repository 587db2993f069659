use std::collections::HashSet;

use glosslink::corpus::sample_dev_split;
use glosslink::eval::score_f1;
use glosslink::inventory::{Pos, SenseKey};
use glosslink::nn::softmax;
use glosslink::transfer::Alignment;
use glosslink::{Corpus, Instance};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = Instance> {
    (
        prop::collection::vec("[a-zà-ü]{1,8}", 1..8),
        prop::sample::select(vec![Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv]),
        prop::collection::vec("[a-z]{1,4}\\.[0-9]{1,2}", 0..3),
        "[a-z]{2}",
        any::<prop::sample::Index>(),
    )
        .prop_map(|(tokens, pos, gold, language, at)| {
            let head = at.index(tokens.len());
            Instance {
                id: String::new(),
                language,
                lemma: tokens[head].clone(),
                span: (head, head),
                tokens,
                pos,
                gold: gold.into_iter().map(|g| SenseKey::new(g).unwrap()).collect(),
            }
        })
}

fn corpus() -> impl Strategy<Value = Corpus> {
    prop::collection::vec(instance(), 1..30).prop_map(|mut v| {
        for (k, inst) in v.iter_mut().enumerate() {
            inst.id = format!("i{k}");
        }
        Corpus::new(v).unwrap()
    })
}

proptest! {
    #[test]
    fn corpus_jsonl_round_trip(c in corpus()) {
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let back = Corpus::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn softmax_is_a_distribution(scores in prop::collection::vec(-50.0f64..50.0, 1..12), shift in -100.0f64..100.0) {
        let p = softmax(&scores);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dev_split_partitions(c in corpus(), seed in any::<u64>(), fraction in 0.05f64..0.95) {
        prop_assume!(fraction * c.len() as f64 >= 1.0);
        let (dev, test) = sample_dev_split(&c, fraction, seed).unwrap();
        prop_assert_eq!(dev.len(), ((fraction * c.len() as f64).round() as usize).min(c.len()));
        let dev_ids: HashSet<&str> = dev.instances().iter().map(|i| i.id.as_str()).collect();
        prop_assert!(test.instances().iter().all(|i| !dev_ids.contains(i.id.as_str())));
        prop_assert_eq!(dev.len() + test.len(), c.len());
    }

    #[test]
    fn scoring_ignores_prediction_order(c in corpus(), seed in any::<u64>()) {
        let mut preds: Vec<(String, SenseKey)> = c
            .instances()
            .iter()
            .filter(|i| !i.gold.is_empty())
            .map(|i| (i.id.clone(), i.gold[0].clone()))
            .collect();
        let before = score_f1(&c, &preds).unwrap();
        use rand::{seq::SliceRandom, SeedableRng};
        preds.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(score_f1(&c, &preds).unwrap(), before);
    }

    #[test]
    fn pharaoh_round_trip(links in prop::collection::btree_set((0usize..40, 0usize..40), 0..30)) {
        let a = Alignment::new(links);
        let text = a.to_string();
        prop_assert_eq!(text.parse::<Alignment>().unwrap(), a);
    }
}
