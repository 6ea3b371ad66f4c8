//! Flattening of the plan hierarchy into per-leaf path plans.
//!
//! The compliance engine never reasons about the tree directly: every leaf of
//! the hierarchy becomes one [`PathPlan`] whose conditions are the merge of
//! all conditions on the root-to-leaf chain — entry roles (filter, setup,
//! restart) conjoined, stop roles (complete, abort, suspend) disjoined — and
//! whose intentions are concatenated ancestors-first. Bodies are taken from
//! the leaf alone.
//!
//! The module also builds the [`RoleIndex`]: for every concept, the list of
//! (path plan, role, step) relations it participates in. The index drives
//! explanation generation and the specificity score.

use std::collections::{BTreeMap, BTreeSet};

use super::*;

/// Flatten the hierarchy into leaf paths, in document order.
pub fn flatten_guideline_paths(lib: &KnowledgeLibrary) -> Vec<PathPlan> {
    let mut paths = Vec::new();
    for plan in &lib.plans {
        let mut chain = Vec::new();
        walk(plan, &mut chain, &mut paths);
    }
    paths
}

fn walk<'a>(
    plan: &'a GuidelinePlan,
    chain: &mut Vec<&'a GuidelinePlan>,
    out: &mut Vec<PathPlan>,
) {
    chain.push(plan);
    if plan.sub_plans.is_empty() {
        out.push(flatten_chain(chain));
    } else {
        for sub in &plan.sub_plans {
            walk(sub, chain, out);
        }
    }
    chain.pop();
}

fn flatten_chain(chain: &[&GuidelinePlan]) -> PathPlan {
    let leaf = *chain.last().expect("chain is never empty");
    let source_plan_ids: Vec<PlanId> = chain.iter().map(|p| p.id.clone()).collect();

    let mut conditions = Vec::new();
    for role in ConditionRole::ALL {
        let exprs: Vec<ConstraintNode> = chain
            .iter()
            .flat_map(|p| p.conditions.iter())
            .filter(|c| c.role == role)
            .map(|c| c.expr.clone())
            .collect();
        if exprs.is_empty() {
            continue;
        }
        let expr = if role.is_entry() {
            // Every ancestor's gate must hold for the leaf to apply.
            ConstraintNode::and_all(exprs)
        } else {
            // Any ancestor's stop reason stops the leaf.
            ConstraintNode::or_all(exprs)
        };
        conditions.push(Condition { role, expr });
    }

    PathPlan {
        id: source_plan_ids.join("/"),
        name: leaf.name.clone(),
        max_start_delay_s: leaf.max_start_delay_s,
        conditions,
        intentions: chain.iter().flat_map(|p| p.intentions.iter().cloned()).collect(),
        body: leaf.body.clone(),
        source_plan_ids,
    }
}

// ── Role index ──────────────────────────────────────────────────────────────

/// Reverse index from concept ids to the roles they play across all flattened
/// paths. Roles are deduplicated and sorted, so lookups are deterministic.
#[derive(Debug, Default, Clone)]
pub struct RoleIndex {
    by_concept: BTreeMap<ConceptId, Vec<KnowledgeRole>>,
}

impl RoleIndex {
    pub fn build(lib: &KnowledgeLibrary, paths: &[PathPlan]) -> RoleIndex {
        let mut by_concept: BTreeMap<ConceptId, BTreeSet<KnowledgeRole>> = BTreeMap::new();
        let mut add = |concept: ConceptId, role: KnowledgeRole| {
            by_concept.entry(concept).or_default().insert(role);
        };

        for path in paths {
            for condition in &path.conditions {
                let kind = if condition.role.is_entry() {
                    RoleKind::EntryCondition
                } else {
                    RoleKind::StopCondition
                };
                let mut mentions = BTreeSet::new();
                condition.expr.collect_mentions(lib, &mut mentions);
                for concept in mentions {
                    add(
                        concept,
                        KnowledgeRole {
                            path_plan_id: path.id.clone(),
                            role: kind,
                            step_id: None,
                        },
                    );
                }
            }
            for intention in &path.intentions {
                let kind = match intention.kind {
                    IntentionKind::Outcome => RoleKind::OutcomeIntention,
                    IntentionKind::Process => RoleKind::ProcessIntention,
                };
                let mut mentions = BTreeSet::new();
                intention.target.collect_mentions(lib, &mut mentions);
                for concept in mentions {
                    add(
                        concept,
                        KnowledgeRole {
                            path_plan_id: path.id.clone(),
                            role: kind,
                            step_id: None,
                        },
                    );
                }
            }
            for step in &path.body {
                add(
                    step.action_concept.clone(),
                    KnowledgeRole {
                        path_plan_id: path.id.clone(),
                        role: RoleKind::BodyStep,
                        step_id: Some(step.id.clone()),
                    },
                );
            }
        }

        RoleIndex {
            by_concept: by_concept
                .into_iter()
                .map(|(concept, roles)| (concept, roles.into_iter().collect()))
                .collect(),
        }
    }

    /// All roles of a concept, sorted; empty for concepts with none.
    pub fn roles_for_concept(&self, id: &str) -> &[KnowledgeRole] {
        self.by_concept.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of distinct path plans in which the concept plays any role.
    /// This is the denominator of the specificity score: a concept tied to a
    /// single path is maximally specific evidence for it.
    pub fn distinct_plan_count(&self, id: &str) -> usize {
        self.roles_for_concept(id)
            .iter()
            .map(|r| &r.path_plan_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn concepts(&self) -> impl Iterator<Item = &ConceptId> {
        self.by_concept.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_cmp(param: &str, op: CmpOp, threshold: f64) -> ConstraintNode {
        ConstraintNode::Cmp(FuzzyComparison {
            param: param.into(),
            op,
            threshold: Value::Num(threshold),
            deviation: 0.0,
            unit: None,
        })
    }

    fn cond(role: ConditionRole, expr: ConstraintNode) -> Condition {
        Condition { role, expr }
    }

    fn step(id: &str, concept: &str) -> PlanStepSpec {
        PlanStepSpec {
            id: id.into(),
            action_concept: concept.into(),
            code: None,
            kind: StepKind::Once,
            earliest_offset_s: 0,
            latest_offset_s: 3600,
            period_s: None,
            timing_deviation_s: 0,
            min_repeat_gap_s: 0,
            max_dose: None,
        }
    }

    fn plan(id: &str, conditions: Vec<Condition>, body: Vec<PlanStepSpec>, subs: Vec<GuidelinePlan>) -> GuidelinePlan {
        GuidelinePlan {
            id: id.into(),
            name: id.into(),
            max_start_delay_s: DEFAULT_MAX_START_DELAY_S,
            conditions,
            intentions: vec![],
            body,
            sub_plans: subs,
        }
    }

    fn lib_with(plans: Vec<GuidelinePlan>) -> KnowledgeLibrary {
        KnowledgeLibrary { concepts: vec![], plans }
    }

    #[test]
    fn entry_conditions_conjoin_and_stop_conditions_disjoin_down_the_path() {
        let fa = leaf_cmp("a", CmpOp::Gt, 1.0);
        let fb = leaf_cmp("b", CmpOp::Gt, 2.0);
        let fc = leaf_cmp("c", CmpOp::Gt, 3.0);
        let xa = leaf_cmp("x", CmpOp::Lt, 1.0);
        let xc = leaf_cmp("y", CmpOp::Lt, 2.0);

        let lib = lib_with(vec![plan(
            "root",
            vec![cond(ConditionRole::Filter, fa.clone()), cond(ConditionRole::Abort, xa.clone())],
            vec![],
            vec![plan(
                "mid",
                vec![cond(ConditionRole::Filter, fb.clone())],
                vec![],
                vec![plan(
                    "tip",
                    vec![cond(ConditionRole::Filter, fc.clone()), cond(ConditionRole::Abort, xc.clone())],
                    vec![step("s", "c")],
                    vec![],
                )],
            )],
        )]);

        let paths = flatten_guideline_paths(&lib);
        assert_eq!(paths.len(), 1);
        let path = &paths[0];
        assert_eq!(path.id, "root/mid/tip");
        assert_eq!(path.source_plan_ids, vec!["root", "mid", "tip"]);
        assert_eq!(path.parent_prefix().as_deref(), Some("root/mid"));
        assert_eq!(
            path.condition(ConditionRole::Filter),
            Some(&ConstraintNode::And(vec![fa.clone(), fb.clone(), fc.clone()]))
        );
        assert_eq!(
            path.condition(ConditionRole::Abort),
            Some(&ConstraintNode::Or(vec![xa, xc]))
        );
        assert_eq!(path.body, vec![step("s", "c")]);
    }

    #[test]
    fn flattening_is_associative_across_hierarchy_shapes() {
        // Merging (root → mid) first and then adding the leaf must equal
        // merging the whole chain at once. Exercised by pre-combining the two
        // upper filters into one plan level.
        let fa = leaf_cmp("a", CmpOp::Gt, 1.0);
        let fb = leaf_cmp("b", CmpOp::Gt, 2.0);
        let fc = leaf_cmp("c", CmpOp::Gt, 3.0);

        let three_level = lib_with(vec![plan(
            "p",
            vec![cond(ConditionRole::Filter, fa.clone())],
            vec![],
            vec![plan(
                "q",
                vec![cond(ConditionRole::Filter, fb.clone())],
                vec![],
                vec![plan("r", vec![cond(ConditionRole::Filter, fc.clone())], vec![], vec![])],
            )],
        )]);
        let pre_combined = lib_with(vec![plan(
            "p",
            vec![cond(
                ConditionRole::Filter,
                ConstraintNode::and_all(vec![fa, fb]),
            )],
            vec![],
            vec![plan("q-r", vec![cond(ConditionRole::Filter, fc)], vec![], vec![])],
        )]);

        let direct = flatten_guideline_paths(&three_level);
        let stepwise = flatten_guideline_paths(&pre_combined);
        assert_eq!(
            direct[0].condition(ConditionRole::Filter),
            stepwise[0].condition(ConditionRole::Filter)
        );
    }

    #[test]
    fn sibling_leaves_become_separate_paths_and_nonleaf_bodies_are_dropped() {
        let lib = lib_with(vec![plan(
            "parent",
            vec![],
            vec![step("ignored", "z")],
            vec![
                plan("left", vec![], vec![step("l", "a")], vec![]),
                plan("right", vec![], vec![step("r", "b")], vec![]),
            ],
        )]);
        let paths = flatten_guideline_paths(&lib);
        assert_eq!(
            paths.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(),
            vec!["parent/left", "parent/right"]
        );
        assert!(paths.iter().all(|p| p.body.len() == 1));
        assert!(paths.iter().all(|p| p.step("ignored").is_none()));
    }

    #[test]
    fn role_index_maps_concepts_to_their_relations() {
        let mut body_plan = plan(
            "care",
            vec![cond(ConditionRole::Filter, leaf_cmp("hba1c", CmpOp::Gt, 6.5))],
            vec![step("test", "hba1c"), step("treat", "metformin")],
            vec![],
        );
        body_plan.intentions.push(Intention {
            kind: IntentionKind::Outcome,
            mode: IntentionMode::Maintain,
            target: leaf_cmp("hba1c", CmpOp::Le, 7.0),
            monitoring_delay_s: 0,
            max_gap_s: 3600,
        });
        let other = plan(
            "other",
            vec![cond(ConditionRole::Filter, leaf_cmp("hba1c", CmpOp::Gt, 9.0))],
            vec![],
            vec![],
        );
        let lib = lib_with(vec![body_plan, other]);

        let paths = flatten_guideline_paths(&lib);
        let index = RoleIndex::build(&lib, &paths);

        let roles = index.roles_for_concept("hba1c");
        assert_eq!(
            roles,
            &[
                KnowledgeRole {
                    path_plan_id: "care".into(),
                    role: RoleKind::EntryCondition,
                    step_id: None
                },
                KnowledgeRole {
                    path_plan_id: "care".into(),
                    role: RoleKind::OutcomeIntention,
                    step_id: None
                },
                KnowledgeRole {
                    path_plan_id: "care".into(),
                    role: RoleKind::BodyStep,
                    step_id: Some("test".into())
                },
                KnowledgeRole {
                    path_plan_id: "other".into(),
                    role: RoleKind::EntryCondition,
                    step_id: None
                },
            ]
        );
        assert_eq!(index.distinct_plan_count("hba1c"), 2);
        assert_eq!(index.distinct_plan_count("metformin"), 1);
        assert_eq!(index.distinct_plan_count("unseen"), 0);
    }
}
