//! Acceptance suite: one PASS/FAIL line per criterion. Oracles here are
//! written independently of the library code they check.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{core_fixture, gen, sweep_workspace};
use framemix_core::annoparse::{
    from_sequence_records, parse_transcript, read_records, render_transcript, to_sequence_records, write_records,
    AnnoParseError, SeqRecord,
};
use framemix_core::budget::{plan_grid, plan_mixture, ratio_grid, CostModel, PoolSizes};
use framemix_core::corpus::{read_corpus, read_sessions, ArgumentEntity, TriggerEntity};
use framemix_core::evaluation::{empty_predictions, evaluate, EvalOptions, EvalReport};
use framemix_core::llm::ReplayClient;
use framemix_core::similarity::{dedup_to_size, max_pairwise, pairwise_matrix, rouge_l_tokens};
use framemix_core::synthesis::{generate_pseudo_dialogues, AttemptOutcome, GenerationConfig};
use framemix_core::tokenize::{CharTokenizer, WhitespaceTokenizer};
use framemix_core::{
    AnnotatedSession, DialogueSession, Money, Source, Span, Speaker, Taxonomy, Utterance, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

// ---------------------------------------------------------------------------
// 1. Per-variant cost table

fn table_1() -> Outcome {
    let start = Instant::now();
    let cost = CostModel::default();
    // (variant, sessions, text $, label $, total $, display tolerance for the text/label columns)
    let table = [
        (Variant::HumanHuman, 1472u64, 6_400.0, 6_400.0, 12_800i64, 50.0),
        (Variant::HumanPseudo, 2858, 12_400.0, 370.0, 12_800, 50.0),
        (Variant::PseudoPseudo, 4293, 280.0, 560.0, 840, 5.0),
    ];
    let mut notes = Vec::new();
    for (variant, sessions, text, label, total, display) in table {
        let budget = Money::from_dollars(total);
        let n = match variant {
            Variant::HumanHuman => plan_mixture(budget, 1.0, Variant::HumanPseudo, &cost).unwrap().n_hh,
            v => plan_mixture(budget, 0.0, v, &cost).unwrap().n_pseudo,
        };
        let c = cost.variant(variant).unwrap();
        let spent = (c.total() * n).as_dollars_f64();
        check(n.abs_diff(sessions) <= 1, || format!("{}: {n} sessions, table {sessions}", variant.short_name()))?;
        check((spent - total as f64).abs() <= 10.0, || format!("{}: ${spent:.2}", variant.short_name()))?;
        let t = (c.text * n).as_dollars_f64();
        let l = (c.label * n).as_dollars_f64();
        check((t - text).abs() <= display && (l - label).abs() <= display, || {
            format!("{}: text ${t:.2} label ${l:.2}", variant.short_name())
        })?;
        notes.push(format!("{} {n} ${spent:.2}", variant.short_name()));
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------------------
// 2. ROUGE-L

fn all_lists(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for l in &frontier {
            for s in 0..3u8 {
                let mut x: Vec<u8> = l.clone();
                x.push(s);
                next.push(x);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|c| it.any(|h| h == c))
}

/// LCS length by trying subsets of the shorter list, largest first.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut masks: Vec<u32> = (0..1u32 << short.len()).collect();
    masks.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
    for m in masks {
        let sub: Vec<u8> = (0..short.len()).filter(|i| m >> i & 1 == 1).map(|i| short[i]).collect();
        if is_subsequence(&sub, long) {
            return sub.len();
        }
    }
    0
}

fn brute_rouge(a: &[u8], b: &[u8]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    2.0 * brute_lcs(a, b) as f64 / (a.len() + b.len()) as f64
}

fn rouge_oracle() -> Outcome {
    let start = Instant::now();
    let lists = all_lists(9);
    let mut pairs = 0usize;
    let mut worst = 0.0f64;
    for a in &lists {
        for b in lists.iter().filter(|b| a.len() + b.len() <= 9) {
            let diff = (rouge_l_tokens(a, b).value() - brute_rouge(a, b)).abs();
            worst = worst.max(diff);
            pairs += 1;
        }
    }
    // longer lists, up to 12 each
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sampled = 0usize;
    for _ in 0..2_000 {
        let a: Vec<u8> = (0..rng.random_range(0..=12)).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<u8> = (0..rng.random_range(0..=12)).map(|_| rng.random_range(0..3)).collect();
        worst = worst.max((rouge_l_tokens(&a, &b).value() - brute_rouge(&a, &b)).abs());
        sampled += 1;
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{pairs} exhaustive pairs (|a|+|b| <= 9) + {sampled} sampled pairs up to 12, max deviation {worst:e}"))
}

// ---------------------------------------------------------------------------
// 3. Round trips

fn round_trips() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let taxonomy = Taxonomy::default();
    let mut failures = Vec::new();
    for i in 0..10_000 {
        let x = gen::random_session(&mut rng, &format!("rt{i}"));
        let back = parse_transcript(&render_transcript(&x), &x.session, &taxonomy, x.label_source);
        if back.as_ref() != Ok(&x.canonicalize()) {
            failures.push(format!("transcript {i}"));
        }
        let rows = to_sequence_records(&x, &CharTokenizer).unwrap();
        let mut tsv = Vec::new();
        write_records(&rows, &mut tsv).unwrap();
        let rows = read_records(tsv.as_slice()).unwrap();
        let back = from_sequence_records(&rows, std::slice::from_ref(&x.session), x.label_source)
            .map(|mut v| gen::span_sorted(v.remove(0)));
        if back != Ok(gen::span_sorted(gen::without_ecr(x))) {
            failures.push(format!("records {i}"));
        }
    }
    check(failures.is_empty(), || format!("{} failures, first {}", failures.len(), failures[0]))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok("10000 sessions; transcript ids compared after reading-order renumbering, records without ECR ids (no TSV column)".into())
}

// ---------------------------------------------------------------------------
// 4. Rejection suite

fn gyoza() -> DialogueSession {
    DialogueSession {
        id: "g#0".into(),
        parent_dialogue_id: "g".into(),
        index_in_dialogue: 0,
        utterances: vec![
            Utterance::new(Speaker::Expert, "餃子をフライパンに並べます。"),
            Utterance::new(Speaker::Interviewer, "何個ですか？"),
        ],
        source: Source::Human,
    }
}

const GOOD: &str = "Step 1:\nE: <E1>餃子</E1>をフライパンに<E2>並べます</E2>。\nI: 何個ですか？\nStep 2:\nE2: PLACE\nStep 3:\n(E1, Object, E2)\n";

fn transcript_error(reply: &str) -> Option<AnnoParseError> {
    parse_transcript(reply, &gyoza(), &Taxonomy::default(), Source::Pseudo).err()
}

fn record_error(rows: &[SeqRecord], session: &DialogueSession) -> Option<AnnoParseError> {
    from_sequence_records(rows, std::slice::from_ref(session), Source::Pseudo).err()
}

fn rejection_suite() -> Outcome {
    check(transcript_error(GOOD).is_none(), || "well-formed transcript rejected".into())?;
    let good_rows = {
        let a = parse_transcript(GOOD, &gyoza(), &Taxonomy::default(), Source::Pseudo).unwrap();
        to_sequence_records(&a, &CharTokenizer).unwrap()
    };
    let misaligned = {
        let session = DialogueSession {
            utterances: vec![Utterance::new(Speaker::Expert, "line up the Gyozas")],
            ..gyoza()
        };
        let mut a = AnnotatedSession::unlabeled(session, Source::Pseudo);
        a.triggers.push(TriggerEntity {
            entity_id: 1,
            span: Span::new(0, 0, 4),
            trigger_type: "PLACE".into(),
            ecr_chain_id: None,
        });
        a.arguments.push(ArgumentEntity {
            entity_id: 2,
            span: Span::new(0, 12, 16),
            argument_type: "Object".into(),
            trigger_entity_id: 1,
        });
        to_sequence_records(&a, &WhitespaceTokenizer).err()
    };
    let unknown_session = {
        let mut rows = good_rows.clone();
        rows[0].session_id = "other#0".into();
        record_error(&rows, &gyoza())
    };
    let dangling_head = {
        let rows: Vec<SeqRecord> = good_rows
            .iter()
            .cloned()
            .map(|mut r| {
                if r.head_entity_id.is_some() {
                    r.head_entity_id = Some(9);
                }
                r
            })
            .collect();
        record_error(&rows, &gyoza())
    };

    let cases: Vec<(&str, Option<AnnoParseError>, fn(&AnnoParseError) -> bool)> = vec![
        ("MissingStepHeader", transcript_error(&GOOD.replace("Step 2:\n", "")), |e| {
            *e == AnnoParseError::MissingStepHeader { step: 2 }
        }),
        ("MalformedTag", transcript_error(&GOOD.replace("餃子</E1>", "餃子")), |e| {
            matches!(e, AnnoParseError::MalformedTag { utterance: 0, .. })
        }),
        ("DuplicateTagId", transcript_error(&GOOD.replace("<E2>並べます</E2>", "<E1>並べます</E1>")), |e| {
            *e == AnnoParseError::DuplicateTagId { id: 1 }
        }),
        ("ContextAltered", transcript_error(&GOOD.replace("何個ですか", "何個焼きますか")), |e| {
            *e == AnnoParseError::ContextAltered { utterance: 1 }
        }),
        ("UnknownType", transcript_error(&GOOD.replace("E2: PLACE", "E2: JUGGLE")), |e| {
            matches!(e, AnnoParseError::UnknownType { entity: 2, ty } if ty == "JUGGLE")
        }),
        ("DanglingReference", transcript_error(&GOOD.replace("(E1, Object, E2)", "(E1, Object, E9)")), |e| {
            matches!(e, AnnoParseError::DanglingReference { entity: 1, .. })
        }),
        ("OrphanEntity", transcript_error(&GOOD.replace("(E1, Object, E2)\n", "")), |e| {
            *e == AnnoParseError::OrphanEntity { entity: 1 }
        }),
        ("UtteranceCountMismatch", transcript_error(&GOOD.replace("I: 何個ですか？\n", "")), |e| {
            *e == AnnoParseError::UtteranceCountMismatch { expected: 2, found: 1 }
        }),
        ("MalformedLine", transcript_error(&GOOD.replace("(E1, Object, E2)", "E1 Object E2")), |e| {
            *e == AnnoParseError::MalformedLine {
                step: 3,
                line: "E1 Object E2".into(),
            }
        }),
        ("ConflictingRole", transcript_error(&GOOD.replace("E2: PLACE\n", "E2: PLACE\nE1: MIX\n")), |e| {
            *e == AnnoParseError::ConflictingRole { entity: 1 }
        }),
        ("MisalignedEntity", misaligned, |e| {
            *e == AnnoParseError::MisalignedEntity {
                session_id: "g#0".into(),
                entity: 2,
            }
        }),
        ("UnknownSessionId", unknown_session, |e| {
            *e == AnnoParseError::UnknownSessionId {
                session_id: "other#0".into(),
            }
        }),
        ("InconsistentLinks", dangling_head, |e| {
            matches!(e, AnnoParseError::InconsistentLinks { session_id, .. } if session_id == "g#0")
        }),
    ];
    for (kind, got, ok) in &cases {
        let Some(err) = got else {
            return Err(format!("{kind}: accepted"));
        };
        check(err.kind() == *kind && ok(err), || format!("{kind}: got {err:?}"))?;
    }
    Ok(format!("{} error classes, each raised as documented", cases.len()))
}

// ---------------------------------------------------------------------------
// 5. Evaluator oracle

#[derive(Clone)]
struct Ent {
    id: u32,
    span: Span,
    label: String,
}

fn overlap(a: &Span, b: &Span) -> usize {
    if a.utterance_index != b.utterance_index {
        return 0;
    }
    a.end_char.min(b.end_char).saturating_sub(a.start_char.max(b.start_char))
}

fn jaccard(a: &Span, b: &Span) -> f64 {
    let i = overlap(a, b);
    i as f64 / ((a.end_char - a.start_char) + (b.end_char - b.start_char) - i) as f64
}

type Edge = (usize, usize);

/// Every one-to-one set of same-label, overlapping pairs.
fn all_matchings(gold: &[Ent], pred: &[Ent]) -> Vec<Vec<Edge>> {
    fn rec(g: usize, gold: &[Ent], pred: &[Ent], used: &mut Vec<bool>, cur: &mut Vec<Edge>, out: &mut Vec<Vec<Edge>>) {
        if g == gold.len() {
            out.push(cur.clone());
            return;
        }
        rec(g + 1, gold, pred, used, cur, out);
        for p in 0..pred.len() {
            if !used[p] && gold[g].label == pred[p].label && overlap(&gold[g].span, &pred[p].span) > 0 {
                used[p] = true;
                cur.push((g, p));
                rec(g + 1, gold, pred, used, cur, out);
                cur.pop();
                used[p] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, gold, pred, &mut vec![false; pred.len()], &mut Vec::new(), &mut out);
    out
}

/// The matching favoured by the priority order (larger overlap, then gold
/// position, pred position, gold id, pred id): between two matchings, the
/// one holding the highest-priority edge of their symmetric difference wins.
fn priority_matching(gold: &[Ent], pred: &[Ent]) -> (Vec<Edge>, f64) {
    let pos = |s: &Span| (s.utterance_index, s.start_char, s.end_char);
    let key = |&(g, p): &Edge| {
        (
            std::cmp::Reverse(overlap(&gold[g].span, &pred[p].span)),
            pos(&gold[g].span),
            pos(&pred[p].span),
            gold[g].id,
            pred[p].id,
        )
    };
    let all = all_matchings(gold, pred);
    let credit = |m: &[Edge]| m.iter().map(|&(g, p)| jaccard(&gold[g].span, &pred[p].span)).sum::<f64>();
    let best_total = all.iter().map(|m| credit(m)).fold(0.0, f64::max);
    let chosen = all
        .into_iter()
        .reduce(|a, b| {
            let top = a
                .iter()
                .filter(|e| !b.contains(e))
                .chain(b.iter().filter(|e| !a.contains(e)))
                .min_by_key(|e| key(e))
                .copied();
            match top {
                Some(e) if b.contains(&e) => b,
                _ => a,
            }
        })
        .unwrap();
    let gap = best_total - credit(&chosen);
    (chosen, gap)
}

#[derive(Default, Clone, Copy)]
struct Tally {
    tp: f64,
    gold: usize,
    pred: usize,
}

struct OracleScores {
    triggers: BTreeMap<String, Tally>,
    arguments: BTreeMap<String, Tally>,
    gap: f64,
}

fn ents_t(a: &AnnotatedSession) -> Vec<Ent> {
    a.triggers
        .iter()
        .map(|t| Ent {
            id: t.entity_id,
            span: t.span,
            label: t.trigger_type.clone(),
        })
        .collect()
}

fn ents_a(a: &AnnotatedSession) -> Vec<Ent> {
    a.arguments
        .iter()
        .map(|t| Ent {
            id: t.entity_id,
            span: t.span,
            label: t.argument_type.clone(),
        })
        .collect()
}

fn oracle_scores(gold: &[AnnotatedSession], pred: &[AnnotatedSession], ecr: bool) -> OracleScores {
    let mut out = OracleScores {
        triggers: BTreeMap::new(),
        arguments: BTreeMap::new(),
        gap: 0.0,
    };
    for g in gold {
        let p = pred.iter().find(|p| p.session.id == g.session.id).unwrap();
        let (gt, pt) = (ents_t(g), ents_t(p));
        let (tm, tgap) = priority_matching(&gt, &pt);
        let (ga, pa) = (ents_a(g), ents_a(p));
        let (am, agap) = priority_matching(&ga, &pa);
        out.gap += tgap + agap;

        for e in &gt {
            out.triggers.entry(e.label.clone()).or_default().gold += 1;
        }
        for e in &pt {
            out.triggers.entry(e.label.clone()).or_default().pred += 1;
        }
        for &(gi, pi) in &tm {
            out.triggers.get_mut(&gt[gi].label).unwrap().tp += jaccard(&gt[gi].span, &pt[pi].span);
        }

        // gold trigger id matched to each predicted trigger id
        let t_match: HashMap<u32, u32> = tm.iter().map(|&(gi, pi)| (pt[pi].id, gt[gi].id)).collect();
        let chain = |id: u32| g.triggers.iter().find(|t| t.entity_id == id).and_then(|t| t.ecr_chain_id);
        for e in &ga {
            out.arguments.entry(e.label.clone()).or_default().gold += 1;
        }
        for e in &pa {
            out.arguments.entry(e.label.clone()).or_default().pred += 1;
        }
        for &(gi, pi) in &am {
            let gold_head = g.arguments.iter().find(|a| a.entity_id == ga[gi].id).unwrap().trigger_entity_id;
            let pred_head = p.arguments.iter().find(|a| a.entity_id == pa[pi].id).unwrap().trigger_entity_id;
            let linked = match t_match.get(&pred_head) {
                None => false,
                Some(&m) => m == gold_head || (ecr && chain(m).is_some() && chain(m) == chain(gold_head)),
            };
            if linked {
                out.arguments.get_mut(&ga[gi].label).unwrap().tp += jaccard(&ga[gi].span, &pa[pi].span);
            }
        }
    }
    out
}

fn prf(t: &Tally) -> (f64, f64, f64) {
    let p = if t.pred == 0 { 0.0 } else { t.tp / t.pred as f64 };
    let r = if t.gold == 0 { 0.0 } else { t.tp / t.gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn weighted(m: &BTreeMap<String, Tally>) -> f64 {
    let total: usize = m.values().map(|t| t.gold).sum();
    if total == 0 {
        return 0.0;
    }
    m.values().map(|t| t.gold as f64 * prf(t).2).sum::<f64>() / total as f64
}

fn compare(report: &EvalReport, oracle: &OracleScores) -> Result<(), String> {
    for (name, got, want) in [
        ("trigger", &report.triggers, &oracle.triggers),
        ("argument", &report.arguments, &oracle.arguments),
    ] {
        check(got.len() == want.len(), || format!("{name} class sets differ"))?;
        for (label, t) in want {
            let c = got.get(label).ok_or_else(|| format!("{name} {label} missing"))?;
            let (p, r, f) = prf(t);
            let ok = (c.precision - p).abs() <= 1e-9 && (c.recall - r).abs() <= 1e-9 && (c.f1 - f).abs() <= 1e-9;
            check(ok, || format!("{name} {label}: got p{} r{} f{}, oracle p{p} r{r} f{f}", c.precision, c.recall, c.f1))?;
        }
    }
    check((report.trigger_weighted_f1 - weighted(&oracle.triggers)).abs() <= 1e-9, || "trigger weighted F1".into())?;
    check((report.argument_weighted_f1 - weighted(&oracle.arguments)).abs() <= 1e-9, || "argument weighted F1".into())
}

fn session(id: &str, texts: &[&str]) -> DialogueSession {
    DialogueSession {
        id: id.into(),
        parent_dialogue_id: id.into(),
        index_in_dialogue: 0,
        utterances: texts.iter().map(|t| Utterance::new(Speaker::Expert, *t)).collect(),
        source: Source::Human,
    }
}

fn trig(id: u32, u: usize, s: usize, e: usize, ty: &str, ecr: Option<i64>) -> TriggerEntity {
    TriggerEntity {
        entity_id: id,
        span: Span::new(u, s, e),
        trigger_type: ty.into(),
        ecr_chain_id: ecr,
    }
}

fn arg(id: u32, u: usize, s: usize, e: usize, ty: &str, head: u32) -> ArgumentEntity {
    ArgumentEntity {
        entity_id: id,
        span: Span::new(u, s, e),
        argument_type: ty.into(),
        trigger_entity_id: head,
    }
}

fn annotated(s: &DialogueSession, triggers: Vec<TriggerEntity>, arguments: Vec<ArgumentEntity>) -> AnnotatedSession {
    let a = AnnotatedSession {
        session: s.clone(),
        triggers,
        arguments,
        label_source: Source::Human,
    };
    a.validate(Some(&Taxonomy::default())).unwrap();
    a
}

/// Exact, partial, wrong-type, wrong-link, chain-mate and spurious cases.
fn micro_fixture() -> (Vec<AnnotatedSession>, Vec<AnnotatedSession>) {
    const LINE: &str = "あいうえおかきくけこさしすせそたちつてとなにぬねのはひふへほ";
    let s1 = session("m1#0", &[LINE]);
    let s2 = session("m2#0", &[LINE]);
    let s3 = session("m3#0", &[LINE, LINE]);
    let gold = vec![
        annotated(
            &s1,
            vec![
                trig(1, 0, 0, 4, "PLACE", None),
                trig(2, 0, 10, 14, "BAKE_FRY", Some(1)),
                trig(3, 0, 20, 23, "BAKE_FRY", Some(1)),
            ],
            vec![
                arg(4, 0, 5, 8, "Object", 1),
                arg(5, 0, 15, 18, "Time", 2),
                arg(6, 0, 24, 27, "Temperature", 3),
            ],
        ),
        annotated(
            &s2,
            vec![trig(1, 0, 0, 6, "MIX", None), trig(2, 0, 6, 8, "MIX", None), trig(3, 0, 12, 15, "SIMMER", None)],
            vec![arg(4, 0, 16, 19, "Object", 3), arg(5, 0, 20, 22, "Time", 3)],
        ),
        annotated(
            &s3,
            vec![trig(1, 0, 0, 3, "SIMMER", None), trig(2, 1, 4, 7, "PLACE", None)],
            vec![
                arg(3, 0, 4, 6, "Object", 1),
                arg(4, 1, 0, 3, "Object", 2),
                arg(5, 1, 8, 12, "Instrument", 2),
                arg(6, 1, 14, 16, "Manner", 2),
            ],
        ),
    ];
    let pred = vec![
        annotated(
            &s1,
            vec![
                trig(11, 0, 0, 3, "PLACE", None),
                trig(12, 0, 11, 14, "BAKE_FRY", None),
                trig(13, 0, 20, 23, "BAKE_FRY", None),
            ],
            vec![
                arg(14, 0, 5, 8, "Object", 11),
                arg(15, 0, 15, 18, "Time", 13),
                arg(16, 0, 24, 26, "Temperature", 12),
            ],
        ),
        annotated(
            &s2,
            // greedy takes the 4-char overlap first and loses the second pair
            vec![trig(21, 0, 2, 8, "MIX", None), trig(22, 0, 0, 2, "MIX", None), trig(23, 0, 12, 15, "BAKE_FRY", None)],
            vec![arg(24, 0, 16, 19, "Object", 23), arg(25, 0, 20, 22, "Temperature", 21)],
        ),
        annotated(
            &s3,
            vec![trig(31, 0, 0, 3, "SIMMER", None), trig(32, 1, 4, 6, "PLACE", None), trig(33, 1, 18, 20, "MIX", None)],
            vec![
                arg(34, 0, 4, 6, "Object", 31),
                arg(35, 1, 0, 2, "Object", 32),
                arg(36, 1, 9, 12, "Instrument", 33),
            ],
        ),
    ];
    (gold, pred)
}

fn evaluator_oracle() -> Outcome {
    let (gold, pred) = micro_fixture();
    check(gold.iter().chain(&pred).all(|s| s.entity_count() <= 6), || "fixture exceeds 6 entities".into())?;
    let mut gap = 0.0;
    for ecr in [true, false] {
        let options = EvalOptions {
            ecr_allowance: ecr,
            exact_trigger: false,
        };
        let oracle = oracle_scores(&gold, &pred, ecr);
        gap = oracle.gap;
        compare(&evaluate(&gold, &pred, &options).unwrap(), &oracle)?;
    }
    let fixtures = [
        gold.clone(),
        ecr_fixture().0,
        read_corpus(&core_fixture("corpus.jsonl"), None).unwrap(),
    ];
    for g in &fixtures {
        let perfect = evaluate(g, g, &EvalOptions::default()).unwrap();
        check(perfect.trigger_weighted_f1 == 1.0 && perfect.argument_weighted_f1 == 1.0, || {
            "evaluate(g, g) != 1".into()
        })?;
        let empty = evaluate(g, &empty_predictions(g), &EvalOptions::default()).unwrap();
        check(empty.trigger_weighted_f1 == 0.0 && empty.argument_weighted_f1 == 0.0, || {
            "evaluate(g, empty) != 0".into()
        })?;
    }
    Ok(format!(
        "3-session fixture agrees with exhaustive matching (with and without ECR); greedy trails the best assignment by {gap:.4} credit; g/g = 1 and g/empty = 0 on {} fixtures",
        fixtures.len()
    ))
}

// ---------------------------------------------------------------------------
// 6. ECR gate

fn ecr_fixture() -> (Vec<AnnotatedSession>, Vec<AnnotatedSession>) {
    let s = session("ecr#0", &["中火で三分焼きます。", "蓋をして焼き続けます。"]);
    let triggers = vec![
        trig(1, 0, 5, 9, "BAKE_FRY", Some(1)),
        trig(3, 1, 4, 10, "BAKE_FRY", Some(1)),
    ];
    let gold = annotated(&s, triggers.clone(), vec![arg(2, 0, 3, 5, "Time", 1)]);
    // the argument is attached to the other mention of the same event
    let pred = annotated(&s, triggers, vec![arg(2, 0, 3, 5, "Time", 3)]);
    (vec![gold], vec![pred])
}

fn ecr_gate() -> Outcome {
    let (gold, pred) = ecr_fixture();
    let with = evaluate(&gold, &pred, &EvalOptions::default()).unwrap();
    let without = evaluate(
        &gold,
        &pred,
        &EvalOptions {
            ecr_allowance: false,
            exact_trigger: false,
        },
    )
    .unwrap();
    check(with.argument_weighted_f1 == 1.0, || format!("with gate: {}", with.argument_weighted_f1))?;
    check(without.argument_weighted_f1 == 0.0, || format!("without gate: {}", without.argument_weighted_f1))?;
    Ok("chain-mate attachment scores 1.0 with the ECR allowance and 0.0 without".into())
}

// ---------------------------------------------------------------------------
// 7. Self-instruct replay

fn self_instruct() -> Outcome {
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(core_fixture("expected.json")).unwrap()).unwrap();
    let want: Vec<String> = expected["selfinstruct"]["accepted_attempts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| format!("pd-s0-a{:05}", a.as_u64().unwrap()))
        .collect();
    let client = ReplayClient::from_path(&core_fixture("selfinstruct_replay.jsonl")).unwrap();
    let humans = read_sessions(&core_fixture("corpus.jsonl")).unwrap();
    let config = GenerationConfig {
        max_attempts: Some(10),
        ..GenerationConfig::default()
    };
    let mut pool = Vec::new();
    let report = generate_pseudo_dialogues(&humans, &mut pool, &client, &config, want.len(), &CharTokenizer)
        .map_err(|e| e.to_string())?;
    check(report.attempts.len() == 10, || format!("{} attempts", report.attempts.len()))?;
    let got: Vec<String> = report.accepted.iter().map(|d| d.id.clone()).collect();
    check(got == want, || format!("accepted {got:?}, expected {want:?}"))?;
    for a in &report.attempts {
        if let AttemptOutcome::Accepted { max_similarity, .. } = a.outcome {
            check(max_similarity < 0.7, || format!("attempt {} accepted at {max_similarity}", a.attempt))?;
        }
    }

    // dedup over everything that parsed, accepted or not
    let candidates: Vec<String> =
        serde_json::from_str(&std::fs::read_to_string(core_fixture("selfinstruct_candidates.json")).unwrap()).unwrap();
    let mut all: Vec<DialogueSession> = humans.clone();
    for (i, c) in candidates.iter().enumerate() {
        if let Ok(utterances) = framemix_core::synthesis::parse_dialogue_reply(c) {
            all.push(DialogueSession {
                id: format!("c{i}#0"),
                parent_dialogue_id: format!("c{i}"),
                index_in_dialogue: 0,
                utterances,
                source: Source::Pseudo,
            });
        }
    }
    let max_sim = |sessions: &[DialogueSession]| {
        let texts: Vec<String> = sessions.iter().map(DialogueSession::text).collect();
        let idx: Vec<usize> = (0..texts.len()).collect();
        max_pairwise(&pairwise_matrix(&texts, &CharTokenizer), &idx)
    };
    let mut prev = max_sim(&all);
    for target in (2..all.len()).rev() {
        let kept = dedup_to_size(all.clone(), target, &CharTokenizer).unwrap();
        let now = max_sim(&kept);
        check(kept.len() == target && now <= prev, || format!("dedup to {target}: {now} > {prev}"))?;
        prev = now;
    }
    Ok(format!("accepted {} of 10 ({}), all below 0.7; dedup monotone over {} sessions", got.len(), got.join(" "), all.len()))
}

// ---------------------------------------------------------------------------
// 8. Sweep determinism

fn run_cli(out: &Path, files: &common::SweepFiles) -> i32 {
    framemix::cli::run([
        "framemix",
        "--out",
        out.to_str().unwrap(),
        "--config",
        files.config.to_str().unwrap(),
        "sweep",
        "--hh",
        files.hh.to_str().unwrap(),
        "--pseudo",
        files.pseudo.to_str().unwrap(),
        "--valid",
        files.valid.to_str().unwrap(),
        "--test",
        files.test.to_str().unwrap(),
    ])
}

fn sweep_determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::TempDir::new().unwrap();
    let files = sweep_workspace(dir.path(), "identity");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    check(run_cli(&a, &files) == 0 && run_cli(&b, &files) == 0, || "sweep failed".into())?;
    for name in ["aggregates.csv", "rows.csv", "manifest.json"] {
        let x = std::fs::read(a.join("report").join(name)).unwrap();
        let y = std::fs::read(b.join("report").join(name)).unwrap();
        check(x == y, || format!("{name} differs between runs"))?;
    }
    let mut reader = csv::Reader::from_path(a.join("report/rows.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    check(rows.len() == 12, || format!("{} rows", rows.len()))?;
    check(rows.iter().all(|r| &r[7] == "1.000000" && &r[8] == "1.000000"), || "F1 below 1".into())?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok("2 budgets x 3 ratios x 2 seeds, identity trainer: 12 rows at F1 1.0, byte-identical reports".into())
}

// ---------------------------------------------------------------------------
// 9. PP infeasibility

fn pp_feasibility() -> Outcome {
    let budgets: Vec<Money> = [200, 400, 800, 1_200, 1_600].map(Money::from_dollars).to_vec();
    let plans = plan_grid(
        &budgets,
        &ratio_grid(0.1),
        Variant::PseudoPseudo,
        &CostModel::default(),
        &PoolSizes::default(),
    )
    .unwrap();
    check(plans.len() == 55, || format!("{} plans", plans.len()))?;
    let mut flagged = 0;
    for plan in &plans {
        // integer arithmetic on whole-dollar budgets and tenth ratios
        let tenths = (plan.hh_ratio * 10.0).round() as i64;
        let micros = plan.budget.micros();
        let pseudo_demand = (micros * (10 - tenths) / 10) / 195_667;
        let hh_demand = (micros * tenths / 10) / 8_695_652;
        let infeasible = pseudo_demand > 4_293 || hh_demand > 1_472;
        check(plan.feasible != infeasible, || {
            format!("budget {} ratio {:.1}: flag {} demand {pseudo_demand}", plan.budget, plan.hh_ratio, !plan.feasible)
        })?;
        flagged += infeasible as usize;
    }
    let example = plans
        .iter()
        .find(|p| p.budget == Money::from_dollars(1_600) && p.hh_ratio == 0.0)
        .unwrap();
    check(!example.feasible && example.n_pseudo == 8_177, || "$1,600 at ratio 0.0 should demand 8177".into())?;
    Ok(format!("{flagged} of 55 PP plans infeasible, each exactly where demand exceeds 4293 ($1,600 @ 0.0 needs 8177)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("cost table reproduction", table_1),
        ("ROUGE-L vs exhaustive LCS", rouge_oracle),
        ("transcript and record round trips", round_trips),
        ("malformed transcript rejection", rejection_suite),
        ("evaluator vs brute-force matching", evaluator_oracle),
        ("ECR gate", ecr_gate),
        ("self-instruct replay", self_instruct),
        ("sweep determinism", sweep_determinism),
        ("PP budget feasibility", pp_feasibility),
    ];
    // keep library panics from cluttering the report
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({elapsed:.2?}) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({elapsed:.2?}) {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
