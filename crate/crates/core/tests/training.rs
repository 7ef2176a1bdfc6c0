mod common;

use byoc_core::llm::{PurposeTag, TranscriptEntry};
use byoc_core::trainer::{Phase, TrainingSession};

fn user_msg(e: &TranscriptEntry) -> &str {
    &e.request.messages[1].content
}

#[test]
fn scripted_run_makes_the_expected_calls() {
    let engine = common::engine(common::training_script(4, 3));
    let s = common::run_training(&engine, 3);
    assert!(s.is_complete());
    let t = s.transcript();
    assert_eq!(t.count(PurposeTag::GenQuestion), 12);
    assert_eq!(t.count(PurposeTag::InteractivePredict), 4);
    assert_eq!(t.count(PurposeTag::Update), 4);
    assert_eq!(t.len(), 20);
    assert!(s.states().iter().all(|st| st.phase == Phase::Updated));
    assert_eq!(s.history().len(), 5);
}

#[test]
fn artifact_is_byte_identical_across_runs() {
    let run = || {
        let engine = common::engine(common::training_script(4, 3));
        let a = common::finalize(&common::run_training(&engine, 3));
        serde_json::to_string_pretty(&a).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    let a: byoc_core::classifier::ClassifierArtifact = serde_json::from_str(&first).unwrap();
    assert_eq!(a.provenance.calls[&PurposeTag::GenQuestion], 12);
    assert_eq!(a.provenance.samples, 4);
}

#[test]
fn only_the_true_class_is_rewritten() {
    let engine = common::engine(common::training_script(4, 3));
    let s = common::run_training(&engine, 3);
    let samples = common::training_samples();
    for (k, step) in s.history().iter().skip(1).enumerate() {
        let before = s.spec_at(k).unwrap();
        let after = s.spec_at(k + 1).unwrap();
        assert_eq!(step.updated_class.as_deref(), Some(samples[k].1));
        for c in &before.classes {
            let now = &after.class(&c.name).unwrap().description;
            if Some(c.name.as_str()) == step.updated_class.as_deref() {
                assert_eq!(now, &common::updated_description(k, &c.name));
            } else {
                assert_eq!(now, &c.description);
            }
        }
    }
}

#[test]
fn recurrence_is_visible_in_the_transcript() {
    let m = 3;
    let engine = common::engine(common::training_script(4, m));
    let s = common::run_training(&engine, m);
    let entries = s.transcript().entries();
    let samples = common::training_samples();
    let mut k = 0;
    for (i, (sample, label)) in samples.iter().enumerate() {
        for t in 1..=m {
            let e = &entries[k];
            assert_eq!(e.request.purpose, PurposeTag::GenQuestion);
            let prompt = user_msg(e);
            assert!(prompt.contains(&sample.text));
            let embedded = (1..=m).filter(|j| prompt.contains(&common::answer(i, *j))).count();
            assert_eq!(embedded, t - 1, "sample {i} call {t}");
            for j in 1..t {
                assert!(prompt.contains(&format!("Question {i}.{j}?\n{}", common::answer(i, j))));
            }
            k += 1;
        }
        let e = &entries[k];
        assert_eq!(e.request.purpose, PurposeTag::InteractivePredict);
        for j in 1..=m {
            assert!(user_msg(e).contains(&format!("Question {i}.{j}?\n{}", common::answer(i, j))));
        }
        k += 1;
        let e = &entries[k];
        assert_eq!(e.request.purpose, PurposeTag::Update);
        let prompt = user_msg(e);
        let predicted = common::SCRIPTED_PREDICTIONS[i];
        assert!(prompt.contains(&format!("Our initial classification was {predicted}.")));
        assert!(prompt.contains(&format!("The actual class of the text is {label} ")));
        assert!(prompt.contains(&format!("better class description for the class: {label}")));
        assert!(prompt.contains(&common::user_explanation(i)));
        for j in 1..=m {
            assert!(prompt.contains(&common::answer(i, j)));
        }
        k += 1;
    }
    assert_eq!(k, entries.len());
}

#[test]
fn update_prompt_shows_the_previous_step_descriptions() {
    let engine = common::engine(common::training_script(4, 3));
    let s = common::run_training(&engine, 3);
    let updates: Vec<_> = s
        .transcript()
        .entries()
        .iter()
        .filter(|e| e.request.purpose == PurposeTag::Update)
        .collect();
    for (k, e) in updates.iter().enumerate() {
        for c in &s.spec_at(k).unwrap().classes {
            assert!(user_msg(e).contains(&format!("{}: {}", c.name, c.description)));
        }
    }
}

#[test]
fn checkpoint_round_trip_mid_session() {
    let engine = common::engine(common::training_script(4, 3));
    let samples = common::training_samples();
    let mut s = TrainingSession::start(
        common::email_spec(),
        samples.iter().map(|(s, _)| s.clone()).collect(),
        common::train_config(3),
        &engine,
    )
    .unwrap();
    s.next_question(&engine).unwrap();
    s.submit_answer(&common::answer(0, 1), &engine).unwrap();
    let text = s.to_checkpoint();
    let restored = TrainingSession::from_checkpoint(&text).unwrap();
    assert_eq!(restored.to_checkpoint(), text);
    assert_eq!(restored.snapshot(), s.snapshot());
}
