//! Affected-device binding and assertion evaluation for one policy.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::directory::DirectorySnapshot;
use crate::expr::{eval_expr, AttributeView, Binding, Bindings, EvalError, FunctionRegistry, AFFECTED_ROOT};
use crate::model::{PolicySpec, Quantifier, OBJECT_ROOT, SUBJECT_ROOT};
use crate::store::Policy;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundDevice {
    pub id: String,
    pub view: AttributeView,
}

/// Affected key → devices kept by the relationship, id-ordered.
pub type AffectedBindings = BTreeMap<String, Vec<BoundDevice>>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BindOutcome {
    pub bindings: AffectedBindings,
    /// Keys whose relationship pass was skipped because it names another affected key.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssertionError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0} binding combinations exceed the evaluation limit")]
    TooManyCombinations(u128),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssertionOutcome {
    NotFired,
    /// Fired; per affected key, the devices that took part in a satisfying combination.
    Fired(BTreeMap<String, BTreeSet<String>>),
}

pub(crate) fn base_bindings(subject: &AttributeView, object: &AttributeView) -> Bindings {
    Bindings::new()
        .with(SUBJECT_ROOT, Binding::One(subject.clone()))
        .with(OBJECT_ROOT, Binding::One(object.clone()))
}

/// Filters each affected key's candidates (same type, object excluded) through the relationship.
///
/// Each key is evaluated on its own, with other affected keys unbound. A relationship that names a
/// different affected key cannot be evaluated in that pass, so the pass is skipped and every
/// candidate is kept.
pub fn bind_affected(
    policy: &Policy,
    subject: &AttributeView,
    object: &AttributeView,
    object_id: &str,
    directory: &DirectorySnapshot,
    functions: &FunctionRegistry,
) -> Result<BindOutcome, EvalError> {
    let relationship_roots = policy.relationship.roots();
    let base = base_bindings(subject, object);
    let mut out = BindOutcome::default();
    for (key, affected) in &policy.spec.affected_device {
        let own_root = PolicySpec::affected_root(key);
        let names_other_key = relationship_roots
            .iter()
            .any(|r| r.starts_with(AFFECTED_ROOT) && *r != own_root);
        if names_other_key {
            out.skipped.push(key.clone());
        }
        let mut kept = Vec::new();
        for (record, view) in directory.find_by_selector(&affected.selector) {
            if record.id == object_id {
                continue;
            }
            let keep = names_other_key || {
                let bindings = base.clone().with(own_root.clone(), Binding::One(view.clone()));
                eval_expr(&policy.relationship, &bindings, functions)?.truthy()
            };
            if keep {
                kept.push(BoundDevice {
                    id: record.id.clone(),
                    view,
                });
            }
        }
        out.bindings.insert(key.clone(), kept);
    }
    Ok(out)
}

/// Evaluates the assertion over the bound devices.
///
/// EACH keys range over the cartesian product of their lists and the policy fires if any
/// combination is truthy; SET keys are bound whole. Every combination is evaluated, and any
/// evaluation error fails the policy, so the outcome never depends on device order.
pub fn evaluate_assertion(
    policy: &Policy,
    subject: &AttributeView,
    object: &AttributeView,
    bound: &AffectedBindings,
    functions: &FunctionRegistry,
    max_combinations: usize,
) -> Result<AssertionOutcome, AssertionError> {
    let mut base = base_bindings(subject, object);
    let mut each: Vec<(&String, String, &Vec<BoundDevice>)> = Vec::new();
    for (key, affected) in &policy.spec.affected_device {
        let devices = bound.get(key).map(Vec::as_slice).unwrap_or_default();
        let root = PolicySpec::affected_root(key);
        match affected.quantifier {
            Quantifier::Set => {
                base.bind(root, Binding::Many(devices.iter().map(|d| d.view.clone()).collect()));
            }
            Quantifier::Each => each.push((key, root, bound.get(key).expect("every affected key is bound"))),
        }
    }

    let combinations: u128 = each.iter().map(|(_, _, devs)| devs.len() as u128).product();
    if combinations == 0 {
        return Ok(AssertionOutcome::NotFired);
    }
    if combinations > max_combinations as u128 {
        return Err(AssertionError::TooManyCombinations(combinations));
    }

    let set_participants = || -> BTreeMap<String, BTreeSet<String>> {
        policy
            .spec
            .affected_device
            .iter()
            .filter(|(_, a)| a.quantifier == Quantifier::Set)
            .map(|(k, _)| (k.clone(), bound[k].iter().map(|d| d.id.clone()).collect()))
            .collect()
    };

    let Some(assertion) = &policy.assertion else {
        // Relationship alone gates: every EACH key has at least one binding.
        let mut matched = set_participants();
        for (key, _, devs) in &each {
            matched.insert((*key).clone(), devs.iter().map(|d| d.id.clone()).collect());
        }
        return Ok(AssertionOutcome::Fired(matched));
    };

    let mut matched: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut fired = false;
    let mut odometer = vec![0usize; each.len()];
    loop {
        let mut bindings = base.clone();
        for ((_, root, devs), &i) in each.iter().zip(&odometer) {
            bindings.bind(root.clone(), Binding::One(devs[i].view.clone()));
        }
        if eval_expr(assertion, &bindings, functions)?.truthy() {
            fired = true;
            for ((key, _, devs), &i) in each.iter().zip(&odometer) {
                matched.entry((*key).clone()).or_default().insert(devs[i].id.clone());
            }
        }
        // Advance the odometer; done when it wraps.
        let mut digit = 0;
        loop {
            if digit == odometer.len() {
                return Ok(if fired {
                    matched.extend(set_participants());
                    AssertionOutcome::Fired(matched)
                } else {
                    AssertionOutcome::NotFired
                });
            }
            odometer[digit] += 1;
            if odometer[digit] < each[digit].2.len() {
                break;
            }
            odometer[digit] = 0;
            digit += 1;
        }
    }
}
