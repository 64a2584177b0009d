use gramprompt::corpus::{Dataset, MinimalPair};
use gramprompt::explain::GrammarExplanation;
use gramprompt::templates::{shot_order, ConditionSpec, Order, RenderContext, TemplateSet};
use proptest::prelude::*;

fn pair(good: &str, bad: &str) -> MinimalPair {
    MinimalPair {
        id: "p:0".into(),
        dataset: Dataset::Blimp,
        language: "en".into(),
        paradigm: "p".into(),
        category: "c".into(),
        good: good.into(),
        bad: bad.into(),
    }
}

/// Indices of lines that differ between two texts of equal line count.
fn differing_lines(a: &str, b: &str) -> Vec<usize> {
    let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    assert_eq!(la.len(), lb.len());
    (0..la.len()).filter(|&i| la[i] != lb[i]).collect()
}

fn sentence_line_indices(text: &str) -> Vec<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.starts_with("Sentence A:") || l.starts_with("Sentence B:"))
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn swapping_order_changes_only_sentence_lines() {
    let t = TemplateSet::bundled();
    let p = pair("The dog barks.", "The dog bark.");
    for render in [TemplateSet::render_base, TemplateSet::render_cot] {
        let g = render(&t, &p, Order::GoodFirst).user_text;
        let b = render(&t, &p, Order::BadFirst).user_text;
        assert_eq!(differing_lines(&g, &b), sentence_line_indices(&g));
        assert!(g.contains("Sentence A: The dog barks."));
        assert!(b.contains("Sentence A: The dog bark."));
    }
}

#[test]
fn cot_differs_from_base_only_around_the_question() {
    let t = TemplateSet::bundled();
    let p = pair("The dog barks.", "The dog bark.");
    let base = t.render_base(&p, Order::GoodFirst).user_text;
    let cot = t.render_cot(&p, Order::GoodFirst).user_text;
    // Base body without its final answer-format line must appear verbatim
    // inside the CoT render; everything else in CoT is preamble or suffix.
    let base_lines: Vec<&str> = base.lines().collect();
    let core = base_lines[..base_lines.len() - 1].join("\n");
    let start = cot.find(&core).expect("question block preserved");
    let preamble = &cot[..start];
    let suffix = &cot[start + core.len()..];
    assert!(!preamble.contains("Sentence"));
    assert!(!suffix.contains("Sentence A:") && !suffix.contains("Sentence B:"));
    assert!(suffix.contains("***"));
    assert!(!base.contains("***"));
}

#[test]
fn gp_is_explanation_blank_line_then_base() {
    let t = TemplateSet::bundled();
    let p = pair("The dog barks.", "The dog bark.");
    let e = GrammarExplanation::for_test("p", "Verbs agree with\ntheir subjects.");
    for order in [Order::GoodFirst, Order::BadFirst] {
        let gp = t.render_with_explanation(&p, order, &e, false).unwrap().user_text;
        let base = t.render_base(&p, order).user_text;
        assert_eq!(gp, format!("{}\n\n{}", e.text, base));
        let gp_cot = t.render_with_explanation(&p, order, &e, true).unwrap().user_text;
        assert!(gp_cot.starts_with(&e.text));
        assert_eq!(gp_cot.matches("***").count(), 1);
    }
}

#[test]
fn control_has_gp_line_structure() {
    let t = TemplateSet::bundled();
    let p = pair("The dog barks.", "The dog bark.");
    let e = GrammarExplanation::for_test("p", "Line one.\nLine two.");
    let c = GrammarExplanation::for_test("null_quotative", "Other one.\nOther two.");
    let gp = t.render_with_explanation(&p, Order::BadFirst, &e, false).unwrap().user_text;
    let control = t.render_control(&p, Order::BadFirst, &c).unwrap().user_text;
    let strip = |text: &str, body: &str| text.replacen(body, "<EXPLANATION>", 1);
    assert_eq!(strip(&gp, &e.text), strip(&control, &c.text));
}

fn explanations(n: usize) -> Vec<GrammarExplanation> {
    (0..n)
        .map(|i| GrammarExplanation::for_test(&format!("paradigm_{i:02}"), &format!("Rule number {i}.")))
        .collect()
}

#[test]
fn textbook_compiles_every_explanation() {
    let t = TemplateSet::bundled();
    let p = pair("The dog barks.", "The dog bark.");
    let all = explanations(67);
    let text = t.render_textbook(&p, Order::GoodFirst, &all).unwrap().user_text;
    assert_eq!(text.lines().filter(|l| l.starts_with("## Explanation: ")).count(), 67);
    assert!(text.ends_with(&t.render_base(&p, Order::GoodFirst).user_text));
}

proptest! {
    #[test]
    fn textbook_ignores_input_order(seed in any::<u64>()) {
        let t = TemplateSet::bundled();
        let p = pair("The dog barks.", "The dog bark.");
        let all = explanations(12);
        let mut shuffled = all.clone();
        // Fisher-Yates driven by a simple LCG so the permutation is seed-determined.
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = t.render_textbook(&p, Order::BadFirst, &all).unwrap();
        let b = t.render_textbook(&p, Order::BadFirst, &shuffled).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn one_sentence_line_each(
        good in "[A-Za-z][A-Za-z ,]{0,40}\\.",
        bad in "[A-Za-z][A-Za-z ,]{0,40}\\.",
        bad_first in any::<bool>(),
    ) {
        prop_assume!(good != bad);
        let t = TemplateSet::bundled();
        let p = pair(&good, &bad);
        let order = if bad_first { Order::BadFirst } else { Order::GoodFirst };
        let e = GrammarExplanation::for_test("p", "A rule.");
        let c = GrammarExplanation::for_test("null_quotative", "Another rule.");
        let book = explanations(3);
        let shots = vec![
            ("Shot good one.".to_string(), "Shot bad one.".to_string()),
            ("Shot good two.".to_string(), "Shot bad two.".to_string()),
            ("Shot good three.".to_string(), "Shot bad three.".to_string()),
        ];
        let ctx = RenderContext { explanation: Some(&e), control: Some(&c), textbook: &book, shots: &shots };
        let (a, b) = order.arrange(&p.good, &p.bad);
        for label in ["base", "cot", "gp:g", "gp+cot:g", "gpx:g", "control", "textbook", "fewshot3"] {
            let cond: ConditionSpec = label.parse().unwrap();
            let bundle = t.render_condition(&cond, &p, order, &ctx).unwrap();
            let text = &bundle.user_text;
            let a_lines: Vec<&str> = text.lines().filter(|l| l.starts_with("Sentence A:")).collect();
            let b_lines: Vec<&str> = text.lines().filter(|l| l.starts_with("Sentence B:")).collect();
            let (want_a, want_b) = (format!("Sentence A: {a}"), format!("Sentence B: {b}"));
            prop_assert_eq!(a_lines, vec![want_a.as_str()]);
            prop_assert_eq!(b_lines, vec![want_b.as_str()]);
            let again = t.render_condition(&cond, &p, order, &ctx).unwrap();
            prop_assert_eq!(&bundle.render_digest, &again.render_digest);
        }
    }
}

#[test]
fn shot_answers_follow_shot_orders() {
    let t = TemplateSet::bundled();
    let p = pair("Eval good.", "Eval bad.");
    let shots: Vec<(String, String)> = (0..5)
        .map(|i| (format!("Good shot {i}."), format!("Bad shot {i}.")))
        .collect();
    let text = t.render_few_shot(&p, Order::GoodFirst, &shots).unwrap().user_text;
    let answers: Vec<&str> = text
        .lines()
        .filter_map(|l| l.strip_prefix("Answer: "))
        .collect();
    assert_eq!(answers.len(), 5);
    for (i, (good, _)) in shots.iter().enumerate() {
        // Oracle: the letter is whichever slot holds the good sentence.
        let a_line = text
            .lines()
            .skip_while(|l| *l != format!("Example {}:", i + 1))
            .nth(1)
            .unwrap();
        let expected = if a_line == format!("A: {good}") { "A" } else { "B" };
        assert_eq!(answers[i], expected);
        assert_eq!(expected.chars().next(), Some(shot_order(i).correct_letter()));
    }
    let question = text.find("Sentence A:").unwrap();
    assert!(text.rfind("Answer: ").unwrap() < question);
}

#[test]
fn scaffolding_stays_english_for_other_languages() {
    let t = TemplateSet::bundled();
    let en = pair("The dog barks.", "The dog bark.");
    let mut zh = pair("他们都来了。", "他们都来过了了。");
    zh.language = "zh".into();
    zh.dataset = Dataset::Sling;
    let strip = |text: String, p: &MinimalPair| text.replace(&p.good, "<G>").replace(&p.bad, "<B>");
    for order in [Order::GoodFirst, Order::BadFirst] {
        assert_eq!(
            strip(t.render_cot(&en, order).user_text, &en),
            strip(t.render_cot(&zh, order).user_text, &zh)
        );
    }
}
