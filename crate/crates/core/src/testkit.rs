//! Independent reference implementations used as oracles by the verification
//! suites, plus seeded scenario generators.
//!
//! The reasoner pipeline is checked against a *pointwise* reference that
//! never builds resolved intervals: it slices the window at every candidate
//! boundary and asks, for each slice midpoint, which measurement's
//! persistence governs that instant. The crisp reference evaluates constraint
//! trees in classical boolean logic for zero-deviation libraries. Both are
//! deliberately naive — clarity over speed.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::fuzzy::{coalesce_scored, evaluate_node, negate_node, FuzzyError, Partition, ScoredInterval};
use crate::ingest::{DataItem, PatientRecord};
use crate::knowledge::{
    CmpOp, Concept, ConceptId, ConceptKind, ConstraintNode, FuzzyComparison, GuidelinePlan,
    KnowledgeLibrary, PersistenceSpec, ValueDomain,
};
use crate::time::{add_secs, parse_timestamp, Span, Time};
use crate::value::Value;

// ── Pointwise value reference ───────────────────────────────────────────────

/// The value governing instant `t` for one parameter, by direct application
/// of the precedence rule: scan measurements in `(valid_start, source_row)`
/// order; each makes a claim `[max(extrapolated start, covered frontier),
/// cut end)`, where the cut end is the extrapolated end cut at the earliest
/// later different-valued measurement. The first nonempty claim whose cut
/// end exceeds `t` decides the instant: covered when reached, otherwise a
/// gap no later measurement may reach back into. A claim annihilated by the
/// clipping (empty) neither covers nor blocks — that past stays open for
/// later backward extrapolation.
pub fn pointwise_value_oracle(
    items: &[DataItem],
    persistence: PersistenceSpec,
    t: Time,
) -> Option<Value> {
    let mut sorted: Vec<&DataItem> = items.iter().collect();
    sorted.sort_by_key(|i| (i.valid_start, i.source_row));
    let usable: Vec<(&DataItem, (Time, Time))> = sorted
        .iter()
        .filter_map(|item| Some((*item, raw_bounds(item, persistence)?)))
        .collect();

    let mut frontier: Option<Time> = None;
    for (idx, (item, (start, end))) in usable.iter().enumerate() {
        let mut cut_end = *end;
        for (later, _) in &usable[idx + 1..] {
            if !later.value.approx_eq(&item.value) {
                cut_end = cut_end.min(later.valid_start);
                break;
            }
        }
        let claim_start = match frontier {
            Some(f) => (*start).max(f),
            None => *start,
        };
        if claim_start >= cut_end {
            continue;
        }
        if t < cut_end {
            return (claim_start <= t).then(|| item.value.clone());
        }
        frontier = Some(cut_end);
    }
    None
}

fn raw_bounds(item: &DataItem, persistence: PersistenceSpec) -> Option<(Time, Time)> {
    let (start, end) = match item.valid_stop {
        Some(stop) => (item.valid_start, stop),
        None => (
            add_secs(item.valid_start, -persistence.good_before_s),
            add_secs(item.valid_start, persistence.good_after_s),
        ),
    };
    (end > start).then_some((start, end))
}

// ── Pipeline references ─────────────────────────────────────────────────────

/// Window slices at every candidate boundary (window bounds, measurement
/// times, raw extrapolated endpoints), with each parameter's value resolved
/// pointwise at the slice midpoint.
fn oracle_slices(
    lib: &KnowledgeLibrary,
    expr: &ConstraintNode,
    record: &PatientRecord,
    window: Span,
) -> Result<Vec<Partition>, FuzzyError> {
    let mut params = BTreeSet::new();
    expr.collect_params(lib, &mut params);

    let mut items_by_param: BTreeMap<&ConceptId, Vec<DataItem>> = BTreeMap::new();
    let mut cuts = BTreeSet::new();
    cuts.insert(window.start);
    cuts.insert(window.end);
    for param in &params {
        let persistence = lib
            .persistence(param)
            .ok_or_else(|| FuzzyError::MissingPersistence(param.clone()))?;
        let items: Vec<DataItem> = record
            .items
            .iter()
            .filter(|i| i.concept_id == *param)
            .cloned()
            .collect();
        for item in &items {
            cuts.insert(item.valid_start);
            if let Some((start, end)) = raw_bounds(item, persistence) {
                cuts.insert(start);
                cuts.insert(end);
            }
        }
        items_by_param.insert(param, items);
    }

    let cuts: Vec<Time> = cuts
        .into_iter()
        .filter(|&t| t >= window.start && t <= window.end)
        .collect();

    let mut slices = Vec::new();
    for pair in cuts.windows(2) {
        let span = Span::new(pair[0], pair[1]).expect("cuts strictly increase");
        let mid = span.midpoint();
        let mut values = BTreeMap::new();
        for (param, items) in &items_by_param {
            let persistence = lib.persistence(param).expect("checked above");
            if let Some(value) = pointwise_value_oracle(items, persistence, mid) {
                values.insert((*param).clone(), value);
            }
        }
        slices.push(Partition { span, values });
    }
    Ok(slices)
}

/// Full-pipeline reference: pointwise slicing plus per-slice fuzzy
/// evaluation, coalesced with the production rule. Must agree exactly with
/// [`crate::fuzzy::evaluate_expr`].
pub fn pointwise_pipeline_oracle(
    lib: &KnowledgeLibrary,
    expr: &ConstraintNode,
    record: &PatientRecord,
    window: Span,
) -> Result<Vec<ScoredInterval>, FuzzyError> {
    let mut scored = Vec::new();
    for slice in oracle_slices(lib, expr, record, window)? {
        if let Some(membership) = evaluate_node(lib, expr, &slice)? {
            scored.push(ScoredInterval { span: slice.span, membership });
        }
    }
    Ok(coalesce_scored(scored))
}

/// Classical boolean evaluation of a constraint tree over one value map,
/// with the same definedness rules as the fuzzy evaluator: AND needs every
/// operand, OR needs at least one, NOT rewrites through operator inversion.
pub fn boolean_evaluate(
    lib: &KnowledgeLibrary,
    node: &ConstraintNode,
    values: &BTreeMap<ConceptId, Value>,
) -> Result<Option<bool>, FuzzyError> {
    match node {
        ConstraintNode::Cmp(cmp) => Ok(values.get(&cmp.param).and_then(|v| crisp_holds(v, cmp))),
        ConstraintNode::And(children) => {
            let mut all = true;
            for child in children {
                match boolean_evaluate(lib, child, values)? {
                    Some(b) => all &= b,
                    None => return Ok(None),
                }
            }
            Ok(if children.is_empty() { None } else { Some(all) })
        }
        ConstraintNode::Or(children) => {
            let mut any: Option<bool> = None;
            for child in children {
                if let Some(b) = boolean_evaluate(lib, child, values)? {
                    any = Some(any.unwrap_or(false) | b);
                }
            }
            Ok(any)
        }
        ConstraintNode::Not(child) => {
            let rewritten = negate_node(lib, child)?;
            boolean_evaluate(lib, &rewritten, values)
        }
        ConstraintNode::Ref(id) => {
            let definition = lib
                .concept(id)
                .and_then(|c| c.definition.as_ref())
                .ok_or_else(|| FuzzyError::UnresolvedConcept(id.clone()))?;
            boolean_evaluate(lib, definition, values)
        }
    }
}

fn crisp_holds(value: &Value, cmp: &FuzzyComparison) -> Option<bool> {
    match (value, &cmp.threshold) {
        (Value::Num(v), Value::Num(t)) => Some(match cmp.op {
            CmpOp::Gt => v > t,
            CmpOp::Ge => v >= t,
            CmpOp::Lt => v < t,
            CmpOp::Le => v <= t,
            CmpOp::Eq => v == t,
        }),
        (Value::Cat(v), Value::Cat(t)) if cmp.op == CmpOp::Eq => Some(v == t),
        _ => None,
    }
}

/// Boolean full-pipeline reference for zero-deviation libraries: pointwise
/// slicing with classical per-slice evaluation, `true` ↦ 1.0, `false` ↦ 0.0.
pub fn boolean_pipeline_oracle(
    lib: &KnowledgeLibrary,
    expr: &ConstraintNode,
    record: &PatientRecord,
    window: Span,
) -> Result<Vec<ScoredInterval>, FuzzyError> {
    let mut scored = Vec::new();
    for slice in oracle_slices(lib, expr, record, window)? {
        if let Some(holds) = boolean_evaluate(lib, expr, &slice.values)? {
            scored.push(ScoredInterval {
                span: slice.span,
                membership: if holds { 1.0 } else { 0.0 },
            });
        }
    }
    Ok(coalesce_scored(scored))
}

/// Copy of a constraint tree with every comparison deviation forced to zero,
/// turning every leaf crisp.
pub fn crispify_tree(node: &ConstraintNode) -> ConstraintNode {
    match node {
        ConstraintNode::Cmp(cmp) => {
            ConstraintNode::Cmp(FuzzyComparison { deviation: 0.0, ..cmp.clone() })
        }
        ConstraintNode::And(children) => {
            ConstraintNode::And(children.iter().map(crispify_tree).collect())
        }
        ConstraintNode::Or(children) => {
            ConstraintNode::Or(children.iter().map(crispify_tree).collect())
        }
        ConstraintNode::Not(child) => ConstraintNode::Not(Box::new(crispify_tree(child))),
        ConstraintNode::Ref(id) => ConstraintNode::Ref(id.clone()),
    }
}

/// Copy of a library with every constraint tree — concept definitions, plan
/// conditions, intention targets, recursively through sub-plans — crispified
/// via [`crispify_tree`].
pub fn crispify_library(lib: &KnowledgeLibrary) -> KnowledgeLibrary {
    fn crispify_plan(plan: &mut GuidelinePlan) {
        for condition in &mut plan.conditions {
            condition.expr = crispify_tree(&condition.expr);
        }
        for intention in &mut plan.intentions {
            intention.target = crispify_tree(&intention.target);
        }
        for sub in &mut plan.sub_plans {
            crispify_plan(sub);
        }
    }

    let mut out = lib.clone();
    for concept in &mut out.concepts {
        if let Some(def) = &concept.definition {
            concept.definition = Some(crispify_tree(def));
        }
    }
    for plan in &mut out.plans {
        crispify_plan(plan);
    }
    out
}

// ── Seeded scenario generation ──────────────────────────────────────────────

/// One randomized reasoner scenario: a small library, a patient record, a
/// constraint tree over its parameters, and an analysis window.
pub struct OracleScenario {
    pub lib: KnowledgeLibrary,
    pub record: PatientRecord,
    pub expr: ConstraintNode,
    pub window: Span,
}

/// Generate a scenario with up to 6 parameters × up to 8 measurements each
/// (integer values, so merge tolerance never blurs scores), occasional
/// explicit-stop interval items, and a random constraint tree of depth ≤ 3
/// without equality leaves (negation stays expressible everywhere).
pub fn random_oracle_scenario(rng: &mut impl Rng) -> OracleScenario {
    let base = parse_timestamp("2024-01-01T00:00:00Z").unwrap();
    let n_params = rng.gen_range(1..=6);
    let param_ids: Vec<ConceptId> = (0..n_params).map(|i| format!("p{i}")).collect();

    let mut concepts = Vec::new();
    for id in &param_ids {
        let good_before_s = [0i64, 1_800, 3_600, 7_200][rng.gen_range(0..4)];
        let good_after_s = [1_800i64, 3_600, 14_400, 86_400][rng.gen_range(0..4)];
        concepts.push(Concept {
            id: id.clone(),
            kind: ConceptKind::Primitive,
            unit: None,
            value_domain: ValueDomain::Numeric,
            persistence: Some(PersistenceSpec { good_before_s, good_after_s }),
            definition: None,
        });
    }
    let lib = KnowledgeLibrary { concepts, plans: vec![] };

    let mut items = Vec::new();
    let mut row = 2;
    for id in &param_ids {
        for _ in 0..rng.gen_range(0..=8) {
            let valid_start = add_secs(base, rng.gen_range(0..720) * 60);
            let valid_stop = rng
                .gen_bool(0.25)
                .then(|| add_secs(valid_start, rng.gen_range(0..=360) * 60));
            items.push(DataItem {
                patient_id: "p".into(),
                concept_id: id.clone(),
                kind: ConceptKind::Primitive,
                value: Value::Num(rng.gen_range(0..5) as f64),
                unit: None,
                dose: None,
                valid_start,
                valid_stop,
                source_row: row,
            });
            row += 1;
        }
    }
    items.sort_by(|a, b| {
        (a.valid_start, &a.concept_id, a.source_row).cmp(&(b.valid_start, &b.concept_id, b.source_row))
    });
    let record = PatientRecord { patient_id: "p".into(), demographics: BTreeMap::new(), items };

    let expr = random_tree(rng, &param_ids, 3);
    let window = Span::new(
        add_secs(base, rng.gen_range(-120..120) * 60),
        add_secs(base, rng.gen_range(400..900) * 60),
    )
    .expect("window end is always after start");

    OracleScenario { lib, record, expr, window }
}

/// Random constraint tree over `params` up to the given depth: AND/OR/NOT
/// internals, ordered comparison leaves (no equality, so negation stays
/// expressible everywhere), small integer thresholds, ramp widths 0/1/2.
pub fn random_constraint_tree(
    rng: &mut impl Rng,
    params: &[ConceptId],
    max_depth: usize,
) -> ConstraintNode {
    random_tree(rng, params, max_depth)
}

/// Random partition over `params`: each parameter is present with
/// probability 3/4 (absences exercise definedness propagation) and takes a
/// small integer value matching the random trees' threshold range.
pub fn random_partition(rng: &mut impl Rng, params: &[ConceptId]) -> Partition {
    let base = parse_timestamp("2024-01-01T00:00:00Z").unwrap();
    let start = add_secs(base, rng.gen_range(0..600) * 60);
    let span = Span::new(start, add_secs(start, rng.gen_range(1..600) * 60))
        .expect("positive length by construction");
    let mut values = BTreeMap::new();
    for id in params {
        if rng.gen_bool(0.75) {
            values.insert(id.clone(), Value::Num(rng.gen_range(0..5) as f64));
        }
    }
    Partition { span, values }
}

fn random_tree(rng: &mut impl Rng, params: &[ConceptId], depth: usize) -> ConstraintNode {
    if depth == 0 || rng.gen_bool(0.4) {
        let op = [CmpOp::Gt, CmpOp::Ge, CmpOp::Lt, CmpOp::Le][rng.gen_range(0..4)];
        return ConstraintNode::Cmp(FuzzyComparison {
            param: params[rng.gen_range(0..params.len())].clone(),
            op,
            threshold: Value::Num(rng.gen_range(0..5) as f64),
            deviation: [0.0, 1.0, 2.0][rng.gen_range(0..3)],
            unit: None,
        });
    }
    match rng.gen_range(0..3) {
        0 => ConstraintNode::And(
            (0..rng.gen_range(2..=3)).map(|_| random_tree(rng, params, depth - 1)).collect(),
        ),
        1 => ConstraintNode::Or(
            (0..rng.gen_range(2..=3)).map(|_| random_tree(rng, params, depth - 1)).collect(),
        ),
        _ => ConstraintNode::Not(Box::new(random_tree(rng, params, depth - 1))),
    }
}
