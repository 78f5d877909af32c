//! Span-overlap scoring for triggers and arguments.
//!
//! A predicted entity pairs with a gold entity of the same type when their
//! character ranges overlap in the same utterance. Pairs are chosen
//! greedily by descending overlap (ties: earlier gold start, then earlier
//! predicted start) and credited with the Jaccard ratio of the two ranges,
//! so an exact match earns 1 and partial overlaps earn a fraction.
//!
//! A matched argument only keeps its credit when its predicted trigger is
//! matched to the gold argument's trigger, or, with the ECR allowance, to
//! any gold trigger on the same coreference chain.
//!
//! Per-class F1 values are averaged with weights equal to gold instance
//! counts, separately for triggers and arguments.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedSession, Span};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold session '{gold}' compared with predicted session '{pred}'")]
    SessionMismatch { gold: String, pred: String },
    #[error("session sets differ: {missing} gold sessions lack predictions, {extra} predictions lack gold (first: '{example}')")]
    SessionSetMismatch {
        missing: usize,
        extra: usize,
        example: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Accept an argument whose predicted trigger matches any gold trigger
    /// on the gold trigger's coreference chain.
    pub ecr_allowance: bool,
    /// Require the predicted trigger to match exactly (credit 1) rather
    /// than with any overlap.
    pub exact_trigger: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ecr_allowance: true,
            exact_trigger: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalEntity<'a> {
    pub id: u32,
    pub span: Span,
    pub label: &'a str,
}

pub fn trigger_entities(s: &AnnotatedSession) -> Vec<EvalEntity<'_>> {
    s.triggers
        .iter()
        .map(|t| EvalEntity {
            id: t.entity_id,
            span: t.span,
            label: &t.trigger_type,
        })
        .collect()
}

pub fn argument_entities(s: &AnnotatedSession) -> Vec<EvalEntity<'_>> {
    s.arguments
        .iter()
        .map(|a| EvalEntity {
            id: a.entity_id,
            span: a.span,
            label: &a.argument_type,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchPair {
    pub gold: u32,
    pub pred: u32,
    pub credit: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_gold: Vec<u32>,
    pub unmatched_pred: Vec<u32>,
}

impl MatchResult {
    pub fn pair_for_pred(&self, pred: u32) -> Option<&MatchPair> {
        self.pairs.iter().find(|p| p.pred == pred)
    }
}

/// Jaccard ratio of two character ranges (0 when disjoint).
pub fn span_credit(a: &Span, b: &Span) -> f64 {
    let inter = a.overlap(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

pub fn match_entities(gold: &[EvalEntity], pred: &[EvalEntity]) -> MatchResult {
    let pos = |s: &Span| (s.utterance_index, s.start_char, s.end_char);
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (gi, g) in gold.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            if g.label == p.label {
                let ov = g.span.overlap(&p.span);
                if ov > 0 {
                    candidates.push((ov, gi, pi));
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| pos(&gold[a.1].span).cmp(&pos(&gold[b.1].span)))
            .then_with(|| pos(&pred[a.2].span).cmp(&pos(&pred[b.2].span)))
            .then_with(|| gold[a.1].id.cmp(&gold[b.1].id))
            .then_with(|| pred[a.2].id.cmp(&pred[b.2].id))
    });
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut pairs = Vec::new();
    for (_, gi, pi) in candidates {
        if gold_used[gi] || pred_used[pi] {
            continue;
        }
        gold_used[gi] = true;
        pred_used[pi] = true;
        pairs.push(MatchPair {
            gold: gold[gi].id,
            pred: pred[pi].id,
            credit: span_credit(&gold[gi].span, &pred[pi].span),
        });
    }
    MatchResult {
        pairs,
        unmatched_gold: gold.iter().zip(&gold_used).filter(|(_, u)| !**u).map(|(g, _)| g.id).collect(),
        unmatched_pred: pred.iter().zip(&pred_used).filter(|(_, u)| !**u).map(|(p, _)| p.id).collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassTally {
    /// Sum of pair credits.
    pub true_positive: f64,
    pub gold: usize,
    pub pred: usize,
}

pub type Tallies = BTreeMap<String, ClassTally>;

fn count_into(tallies: &mut Tallies, gold: &[EvalEntity], pred: &[EvalEntity]) {
    for g in gold {
        tallies.entry(g.label.to_string()).or_default().gold += 1;
    }
    for p in pred {
        tallies.entry(p.label.to_string()).or_default().pred += 1;
    }
}

fn credit_into(tallies: &mut Tallies, gold: &[EvalEntity], pairs: &[MatchPair]) {
    let label_of: HashMap<u32, &str> = gold.iter().map(|g| (g.id, g.label)).collect();
    for p in pairs {
        tallies.entry(label_of[&p.gold].to_string()).or_default().true_positive += p.credit;
    }
}

fn check_aligned(gold: &AnnotatedSession, pred: &AnnotatedSession) -> Result<(), EvalError> {
    if gold.session.id != pred.session.id {
        return Err(EvalError::SessionMismatch {
            gold: gold.session.id.clone(),
            pred: pred.session.id.clone(),
        });
    }
    Ok(())
}

pub fn score_triggers(
    gold: &AnnotatedSession,
    pred: &AnnotatedSession,
) -> Result<(Tallies, MatchResult), EvalError> {
    check_aligned(gold, pred)?;
    let g = trigger_entities(gold);
    let p = trigger_entities(pred);
    let matches = match_entities(&g, &p);
    let mut tallies = Tallies::new();
    count_into(&mut tallies, &g, &p);
    credit_into(&mut tallies, &g, &matches.pairs);
    Ok((tallies, matches))
}

/// Scores arguments, gating each span match on the trigger link.
pub fn score_arguments(
    gold: &AnnotatedSession,
    pred: &AnnotatedSession,
    trigger_matches: &MatchResult,
    options: &EvalOptions,
) -> Result<(Tallies, MatchResult), EvalError> {
    check_aligned(gold, pred)?;
    let g = argument_entities(gold);
    let p = argument_entities(pred);
    let raw = match_entities(&g, &p);

    let gold_link: HashMap<u32, u32> = gold.arguments.iter().map(|a| (a.entity_id, a.trigger_entity_id)).collect();
    let pred_link: HashMap<u32, u32> = pred.arguments.iter().map(|a| (a.entity_id, a.trigger_entity_id)).collect();
    let chain: HashMap<u32, i64> = gold
        .triggers
        .iter()
        .filter_map(|t| t.ecr_chain_id.map(|c| (t.entity_id, c)))
        .collect();

    let link_ok = |pair: &MatchPair| -> bool {
        let Some(m) = trigger_matches.pair_for_pred(pred_link[&pair.pred]) else {
            return false;
        };
        if options.exact_trigger && m.credit < 1.0 {
            return false;
        }
        let wanted = gold_link[&pair.gold];
        if m.gold == wanted {
            return true;
        }
        options.ecr_allowance
            && matches!((chain.get(&m.gold), chain.get(&wanted)), (Some(a), Some(b)) if a == b)
    };

    let mut result = MatchResult {
        pairs: Vec::new(),
        unmatched_gold: raw.unmatched_gold,
        unmatched_pred: raw.unmatched_pred,
    };
    for pair in raw.pairs {
        if link_ok(&pair) {
            result.pairs.push(pair);
        } else {
            result.unmatched_gold.push(pair.gold);
            result.unmatched_pred.push(pair.pred);
        }
    }
    let mut tallies = Tallies::new();
    count_into(&mut tallies, &g, &p);
    credit_into(&mut tallies, &g, &result.pairs);
    Ok((tallies, result))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_count: usize,
    pub pred_count: usize,
    pub true_positive: f64,
}

impl ClassScore {
    pub fn from_tally(t: &ClassTally) -> Self {
        let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
        let precision = ratio(t.true_positive, t.pred);
        let recall = ratio(t.true_positive, t.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            gold_count: t.gold,
            pred_count: t.pred,
            true_positive: t.true_positive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub triggers: BTreeMap<String, ClassScore>,
    pub arguments: BTreeMap<String, ClassScore>,
    pub trigger_weighted_f1: f64,
    pub argument_weighted_f1: f64,
}

/// Gold-count-weighted mean F1; classes without gold instances carry no
/// weight, and no gold at all gives 0.
pub fn weighted_f1(classes: &BTreeMap<String, ClassScore>) -> f64 {
    let total: usize = classes.values().map(|c| c.gold_count).sum();
    if total == 0 {
        return 0.0;
    }
    classes.values().map(|c| c.gold_count as f64 * c.f1).sum::<f64>() / total as f64
}

fn merge(into: &mut Tallies, from: Tallies) {
    for (k, v) in from {
        let e = into.entry(k).or_default();
        e.true_positive += v.true_positive;
        e.gold += v.gold;
        e.pred += v.pred;
    }
}

/// Scores predictions against gold; both sides must hold the same set of
/// session ids.
pub fn evaluate(
    gold: &[AnnotatedSession],
    pred: &[AnnotatedSession],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let pred_by_id: HashMap<&str, &AnnotatedSession> = pred.iter().map(|p| (p.id(), p)).collect();
    let gold_ids: HashSet<&str> = gold.iter().map(|g| g.id()).collect();
    let missing: Vec<&str> = gold.iter().map(|g| g.id()).filter(|id| !pred_by_id.contains_key(id)).collect();
    let extra: Vec<&str> = pred.iter().map(|p| p.id()).filter(|id| !gold_ids.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::SessionSetMismatch {
            missing: missing.len(),
            extra: extra.len(),
            example: missing.first().or(extra.first()).unwrap().to_string(),
        });
    }

    let mut trig = Tallies::new();
    let mut args = Tallies::new();
    for g in gold {
        let p = pred_by_id[g.id()];
        let (t, matches) = score_triggers(g, p)?;
        let (a, _) = score_arguments(g, p, &matches, options)?;
        merge(&mut trig, t);
        merge(&mut args, a);
    }
    let finish = |t: Tallies| -> BTreeMap<String, ClassScore> {
        t.iter().map(|(k, v)| (k.clone(), ClassScore::from_tally(v))).collect()
    };
    let triggers = finish(trig);
    let arguments = finish(args);
    Ok(EvalReport {
        trigger_weighted_f1: weighted_f1(&triggers),
        argument_weighted_f1: weighted_f1(&arguments),
        triggers,
        arguments,
    })
}

/// A prediction set with no entities for each gold session.
pub fn empty_predictions(gold: &[AnnotatedSession]) -> Vec<AnnotatedSession> {
    gold.iter()
        .map(|g| AnnotatedSession::unlabeled(g.session.clone(), g.label_source))
        .collect()
}
