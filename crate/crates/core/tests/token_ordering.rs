mod common;

use byoc_core::classifier::BaselineKind;
use byoc_core::corpus::{Dataset, LabeledSample, Sample, SplitTag};
use byoc_core::evalharness::{evaluate, EvalInputs, EvalReport};
use byoc_core::llm::ScriptEntry;

const TOPICS: [(&str, &str); 4] = [
    ("Important", "the quarterly budget review and the slides for the client meeting"),
    ("Unimportant", "a seasonal clearance sale with free shipping on every order"),
    ("Important", "the contract renewal that legal needs signed before the deadline"),
    ("Unimportant", "a newsletter roundup of trending recipes and travel ideas"),
];

/// Ten test emails of a few sentences each, deterministic.
fn test_split() -> Dataset {
    let samples = (0..10)
        .map(|i| {
            let (label, topic) = TOPICS[i % 4];
            let text = format!(
                "Hello team, this message {i} is about {topic}. Please read it when you have a moment. \
                 There are a few details below that matter for the week ahead. Thanks, Sam."
            );
            LabeledSample::new(Sample::new(format!("t{i}"), text), label)
        })
        .collect();
    Dataset::new(SplitTag::Test, samples).unwrap()
}

fn run(method: BaselineKind, inputs: &EvalInputs) -> EvalReport {
    let engine = common::engine(
        (0..20)
            .map(|_| ScriptEntry::any("Thoughts: t\nClass: Important\nReflection: r"))
            .collect(),
    );
    evaluate(method, inputs, &test_split(), &engine).unwrap().report
}

fn per_sample_prompt_tokens(r: &EvalReport) -> f64 {
    r.run_prompt_tokens as f64 / r.n as f64
}

#[test]
fn prompt_sizes_follow_the_expected_order() {
    let engine = common::engine(common::training_script(4, 3));
    let session = common::run_training(&engine, 3);
    let artifact = common::finalize(&session);
    let inputs = EvalInputs {
        artifact: Some(artifact),
        spec: Some(common::email_spec()),
        demos: session.demonstrations(),
        baseline: Default::default(),
    };
    let tokens = |m| per_sample_prompt_tokens(&run(m, &inputs));
    let zero = tokens(BaselineKind::ZeroShot);
    let few = tokens(BaselineKind::FewShot);
    let expl = tokens(BaselineKind::FewShotExplanation);
    let qa = tokens(BaselineKind::FewShotQa);
    let byoc = tokens(BaselineKind::Byoc);
    assert!(zero < few, "zero {zero} few {few}");
    assert!(few <= expl, "few {few} expl {expl}");
    assert!(expl <= qa, "expl {expl} qa {qa}");
    assert!(byoc < few, "byoc {byoc} few {few}");
}

mod packing {
    use super::common;
    use byoc_core::classifier::{build_baseline_prompt, demonstrations_included, BaselineKind, Demonstration};
    use byoc_core::llm::PurposeTag;
    use byoc_core::promptkit::{render, RenderContext};
    use byoc_core::textbudget::TokenCounter;

    fn demo_block(demos: &[Demonstration]) -> String {
        demos
            .iter()
            .enumerate()
            .map(|(i, d)| format!("--- Example {} ---\nText: {}\nClass: {}", i + 1, d.text, d.label))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    fn size_with(demos: &[Demonstration], x: &str, counter: &TokenCounter) -> usize {
        let spec = common::email_spec();
        let block = demo_block(demos);
        let b = render(
            PurposeTag::Baseline,
            &RenderContext {
                spec: Some(&spec),
                text: Some(x),
                demonstrations: Some(&block),
                ..Default::default()
            },
        )
        .unwrap();
        counter.count(&format!("{}{}", b.system(), b.user()))
    }

    /// The longest prefix that fits, found by trying every prefix.
    fn oracle(demos: &[Demonstration], x: &str, budget: usize, counter: &TokenCounter) -> usize {
        (0..=demos.len())
            .take_while(|&k| size_with(&demos[..k], x, counter) <= budget)
            .last()
            .unwrap_or(0)
    }

    #[test]
    fn greedy_prefix_matches_the_oracle() {
        let counter = TokenCounter::default();
        let lengths = [30, 80, 10, 200, 5, 5, 60];
        let demos: Vec<Demonstration> = lengths
            .iter()
            .enumerate()
            .map(|(i, n)| Demonstration::new(format!("demo{i} {}", "word ".repeat(*n)), "Important"))
            .collect();
        let x = "The text to classify.";
        let base = size_with(&[], x, &counter);
        for extra in (0..600).step_by(7) {
            let budget = base + extra;
            let b = build_baseline_prompt(BaselineKind::FewShot, &common::email_spec(), &demos, x, budget, &counter).unwrap();
            let want = oracle(&demos, x, budget, &counter);
            assert_eq!(demonstrations_included(&b), want, "budget {budget}");
            assert!(counter.count(&format!("{}{}", b.system(), b.user())) <= budget);
            assert!(b.user().contains(&demo_block(&demos[..want])));
        }
    }

    #[test]
    fn a_long_demo_stops_packing_even_if_later_ones_fit() {
        let counter = TokenCounter::default();
        let demos = vec![
            Demonstration::new("short one", "Important"),
            Demonstration::new("long ".repeat(400), "Unimportant"),
            Demonstration::new("tiny", "Important"),
        ];
        let x = "Text.";
        let budget = size_with(&demos[..1], x, &counter) + 20;
        let b = build_baseline_prompt(BaselineKind::FewShot, &common::email_spec(), &demos, x, budget, &counter).unwrap();
        assert_eq!(demonstrations_included(&b), 1);
        assert!(!b.user().contains("tiny"));
    }
}
