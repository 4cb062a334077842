//! Policy validation: hard errors that keep a policy out of the store, plus
//! authoring-guideline warnings.

use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, FunctionRegistry, AFFECTED_ROOT, AGGREGATE_FUNCTIONS};
use crate::model::{
    DeviceSelector, PolicySpec, Quantifier, ResponseType, LOWEST_PRIORITY, OBJECT_ROOT, SUBJECT_ROOT, WILDCARD,
};

/// Expirations closer than this draw a warning.
pub const MIN_EXPIRATION: Duration = Duration::days(30);
/// Assertions deeper than this many AST levels draw a warning.
pub const MAX_ASSERTION_DEPTH: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticCode {
    EmptyId,
    IdFormat,
    EmptyAction,
    MissingDescription,
    DescriptionFormat,
    PriorityOutOfRange,
    InvalidSelector,
    RelationshipSyntax,
    AssertionSyntax,
    UndeclaredAffectedKey,
    UnknownRoot,
    UnmappedKeyword,
    BareDeviceReference,
    UnknownFunction,
    ArityMismatch,
    AggregateNeedsSetQuantifier,
    InvalidAlertTarget,
    GuidelineConfirmationPreferred,
    GuidelineShortExpiration,
    GuidelineComplexAssertion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    /// Policy field the diagnostic is about.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{:?}] {}: {}", self.code, self.field, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

struct Lint<'a> {
    policy: &'a PolicySpec,
    functions: &'a FunctionRegistry,
    out: Vec<Diagnostic>,
}

impl Lint<'_> {
    fn push(&mut self, severity: Severity, code: DiagnosticCode, field: &str, message: impl Into<String>) {
        self.out.push(Diagnostic {
            severity,
            code,
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn error(&mut self, code: DiagnosticCode, field: &str, message: impl Into<String>) {
        self.push(Severity::Error, code, field, message);
    }

    fn warn(&mut self, code: DiagnosticCode, field: &str, message: impl Into<String>) {
        self.push(Severity::Warning, code, field, message);
    }

    fn selector(&mut self, field: &str, sel: &DeviceSelector) {
        if sel.device_type.trim().is_empty() {
            self.error(DiagnosticCode::InvalidSelector, field, "type must not be empty");
        }
        if sel.device_type != WILDCARD && sel.type_path().is_none() {
            self.error(
                DiagnosticCode::InvalidSelector,
                field,
                "matchingAttribute must map `type` unless type is \"*\"",
            );
        }
        for (keyword, path) in &sel.matching_attribute {
            if !is_identifier(keyword) {
                self.error(
                    DiagnosticCode::InvalidSelector,
                    field,
                    format!("keyword `{keyword}` is not an identifier"),
                );
            }
            if !is_ontology_path(path) {
                self.error(
                    DiagnosticCode::InvalidSelector,
                    field,
                    format!("`{keyword}` maps to malformed path `{path}`"),
                );
            }
        }
    }

    /// Keywords available under a root, or `None` if the root is not declared.
    fn keywords_for(&self, root: &str) -> Option<Vec<&str>> {
        let p = self.policy;
        fn keys(sel: &DeviceSelector) -> Vec<&str> {
            sel.matching_attribute.keys().map(String::as_str).collect()
        }
        if root == SUBJECT_ROOT {
            return Some(p.subject_device.as_ref().map(keys).unwrap_or_default());
        }
        if root == OBJECT_ROOT {
            return Some(keys(&p.object_device));
        }
        let key = root.strip_prefix(AFFECTED_ROOT)?.strip_prefix('.')?;
        p.affected_device.get(key).map(|a| keys(&a.selector))
    }

    fn expression(&mut self, field: &str, expr: &Expr) {
        let mut found = Vec::new();
        expr.walk(&mut |e| found.push(e));
        for e in found {
            match e {
                Expr::Path { root, segments } => self.path(field, root, segments),
                Expr::Call(name, args) => match self.functions.get(name) {
                    None => self.error(DiagnosticCode::UnknownFunction, field, format!("unknown function `{name}`")),
                    Some(def) if !def.arity.accepts(args.len()) => self.error(
                        DiagnosticCode::ArityMismatch,
                        field,
                        format!("`{name}` takes {} argument(s), got {}", def.arity, args.len()),
                    ),
                    Some(_) => {}
                },
                _ => {}
            }
        }
    }

    fn path(&mut self, field: &str, root: &str, segments: &[String]) {
        let Some(keywords) = self.keywords_for(root) else {
            if root.starts_with(AFFECTED_ROOT) {
                self.error(
                    DiagnosticCode::UndeclaredAffectedKey,
                    field,
                    format!("`{root}` is not declared in affectedDevice"),
                );
            } else {
                self.error(DiagnosticCode::UnknownRoot, field, format!("unknown identifier `{root}`"));
            }
            return;
        };
        match segments {
            [] => self.error(
                DiagnosticCode::BareDeviceReference,
                field,
                format!("`{root}` must be followed by an attribute keyword"),
            ),
            [keyword, rest @ ..] => {
                if !keywords.contains(&keyword.as_str()) {
                    self.error(
                        DiagnosticCode::UnmappedKeyword,
                        field,
                        format!("`{root}.{keyword}` is not mapped in matchingAttribute"),
                    );
                } else if !rest.is_empty() {
                    self.error(
                        DiagnosticCode::UnmappedKeyword,
                        field,
                        format!("`{root}.{keyword}` is a leaf attribute; map the nested path as its own keyword"),
                    );
                }
            }
        }
    }

    fn aggregates(&mut self, expr: &Expr) {
        let mut offending = Vec::new();
        expr.walk(&mut |e| {
            let Expr::Call(name, args) = e else { return };
            if !AGGREGATE_FUNCTIONS.contains(&name.as_str()) {
                return;
            }
            for arg in args {
                // sum(affectedDevice.k.x) or sum(set(affectedDevice.k.x))
                let target = match arg {
                    Expr::Call(inner, inner_args) if inner == "set" && inner_args.len() == 1 => &inner_args[0],
                    other => other,
                };
                if let Expr::Path { root, .. } = target {
                    offending.push((name.clone(), root.clone()));
                }
            }
        });
        for (func, root) in offending {
            let Some(key) = root.strip_prefix(AFFECTED_ROOT).and_then(|r| r.strip_prefix('.')) else {
                continue;
            };
            if let Some(a) = self.policy.affected_device.get(key) {
                if a.quantifier == Quantifier::Each {
                    self.error(
                        DiagnosticCode::AggregateNeedsSetQuantifier,
                        "assertion",
                        format!("`{func}` aggregates over `{root}`; declare affectedDevice.{key} with quantifier SET"),
                    );
                }
            }
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_ontology_path(path: &str) -> bool {
    !path.is_empty()
        && path
            .split('.')
            .all(|seg| !seg.is_empty() && !seg.chars().any(char::is_whitespace))
}

/// Checks a policy for errors and guideline violations. Never fails; the diagnostics are the result.
pub fn validate_policy(policy: &PolicySpec, functions: &FunctionRegistry, now: DateTime<Utc>) -> Vec<Diagnostic> {
    use DiagnosticCode::*;
    let mut lint = Lint {
        policy,
        functions,
        out: Vec::new(),
    };

    if policy.id.trim().is_empty() {
        lint.error(EmptyId, "id", "id must not be empty");
    } else if !policy
        .id
        .split_once('-')
        .is_some_and(|(org, local)| !org.is_empty() && !local.is_empty())
    {
        lint.warn(IdFormat, "id", "expected `[organization id]-[policy id]`");
    }
    if policy.action.trim().is_empty() {
        lint.error(EmptyAction, "action", "action must not be empty");
    }
    if policy.priority > LOWEST_PRIORITY {
        lint.error(
            PriorityOutOfRange,
            "priority",
            format!("priority {} outside 0..={LOWEST_PRIORITY}", policy.priority),
        );
    }
    if policy.description.trim().is_empty() {
        lint.warn(MissingDescription, "description", "description is empty");
    } else {
        let prefix = policy.description.split_once(':').map(|(p, _)| p.trim());
        if prefix.and_then(|p| p.parse::<ResponseType>().ok()) != Some(policy.response) {
            lint.warn(
                DescriptionFormat,
                "description",
                format!("expected `{}: <description>`", policy.response),
            );
        }
    }

    if let Some(sel) = &policy.subject_device {
        lint.selector("subjectDevice", sel);
    }
    lint.selector("objectDevice", &policy.object_device);
    for (key, affected) in &policy.affected_device {
        let field = format!("affectedDevice.{key}");
        if !is_identifier(key) {
            lint.error(InvalidSelector, &field, format!("key `{key}` is not an identifier"));
        }
        lint.selector(&field, &affected.selector);
    }

    match policy.parse_relationship() {
        Ok(expr) => lint.expression("relationship", &expr),
        Err(e) => lint.error(RelationshipSyntax, "relationship", e.to_string()),
    }
    match policy.parse_assertion() {
        Some(Ok(expr)) => {
            lint.expression("assertion", &expr);
            lint.aggregates(&expr);
            if expr.depth() > MAX_ASSERTION_DEPTH {
                lint.warn(
                    GuidelineComplexAssertion,
                    "assertion",
                    format!(
                        "assertion is {} levels deep (over {MAX_ASSERTION_DEPTH}); keep assertions short",
                        expr.depth()
                    ),
                );
            }
        }
        Some(Err(e)) => lint.error(AssertionSyntax, "assertion", e.to_string()),
        None => {}
    }

    for target in &policy.alert_targets {
        if lint.keywords_for(target).is_none() {
            lint.error(InvalidAlertTarget, "alertTargets", format!("unknown alert target `{target}`"));
        }
    }

    if matches!(policy.response, ResponseType::Approve | ResponseType::Deny) {
        lint.warn(
            GuidelineConfirmationPreferred,
            "response",
            format!("{} is final; prefer DOUBLE_CHECK, WARN or NOTIFY", policy.response),
        );
    }
    if let Some(exp) = policy.expiration {
        if exp - now < MIN_EXPIRATION {
            lint.warn(
                GuidelineShortExpiration,
                "expiration",
                format!("expires {exp}, less than {} days away", MIN_EXPIRATION.num_days()),
            );
        }
    }
    lint.out
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::model::{AffectedSelector, DeviceSelector};

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap()
    }

    fn heater_policy() -> PolicySpec {
        let ac = DeviceSelector::new("ac")
            .attr("type", "wot.type")
            .attr("feeds", "brick.links.feeds")
            .attr("on", "wot.property.on.status");
        PolicySpec {
            id: "bldg-0001".into(),
            description: "Double Check: turn on heater when AC is on for the same zone.".into(),
            category: None,
            subject_device: None,
            action: "turn on".into(),
            object_device: DeviceSelector::new("heater")
                .attr("type", "wot.type")
                .attr("feeds", "brick.links.feeds"),
            affected_device: [("ac".to_string(), AffectedSelector::each(ac))].into(),
            relationship: "set(objectDevice.feeds) & set(affectedDevice.ac.feeds)".into(),
            assertion: Some("affectedDevice.ac.on == True".into()),
            response: ResponseType::DoubleCheck,
            expiration: None,
            alert: Some("AC is on. Confirm to proceed.".into()),
            alert_targets: vec![],
            priority: 6,
        }
    }

    fn codes(p: &PolicySpec) -> Vec<DiagnosticCode> {
        validate_policy(p, &FunctionRegistry::default(), now())
            .into_iter()
            .map(|d| d.code)
            .collect()
    }

    #[test]
    fn heater_policy_is_clean() {
        assert_eq!(codes(&heater_policy()), vec![]);
    }

    #[test]
    fn undeclared_affected_key() {
        let mut p = heater_policy();
        p.assertion = Some("affectedDevice.xyz.on == True".into());
        let diags = validate_policy(&p, &FunctionRegistry::default(), now());
        assert!(has_errors(&diags));
        assert_eq!(diags[0].code, DiagnosticCode::UndeclaredAffectedKey);
    }

    #[test]
    fn deny_draws_guideline_warning() {
        let mut p = heater_policy();
        p.response = ResponseType::Deny;
        p.description = "Deny: no heating while cooling".into();
        let diags = validate_policy(&p, &FunctionRegistry::default(), now());
        assert!(!has_errors(&diags));
        assert_eq!(
            diags.iter().map(|d| d.code).collect::<Vec<_>>(),
            vec![DiagnosticCode::GuidelineConfirmationPreferred]
        );
    }

    #[test]
    fn expiration_and_depth_warnings() {
        let mut p = heater_policy();
        p.expiration = Some(now() + Duration::days(10));
        assert_eq!(codes(&p), vec![DiagnosticCode::GuidelineShortExpiration]);
        p.expiration = Some(now() + Duration::days(31));
        assert_eq!(codes(&p), vec![]);

        p.assertion = Some(format!("{}affectedDevice.ac.on{}", "not (".repeat(12), ")".repeat(12)));
        assert_eq!(codes(&p), vec![DiagnosticCode::GuidelineComplexAssertion]);
        p.assertion = Some(format!("{}affectedDevice.ac.on{}", "not (".repeat(11), ")".repeat(11)));
        assert_eq!(codes(&p), vec![]);
    }

    #[test]
    fn structural_errors() {
        let mut p = heater_policy();
        p.priority = 12;
        p.relationship = "set(objectDevice.feeds) &".into();
        p.assertion = Some("weather() == 'rain' and objectDevice.colour == 1".into());
        let c = codes(&p);
        assert!(c.contains(&DiagnosticCode::PriorityOutOfRange));
        assert!(c.contains(&DiagnosticCode::RelationshipSyntax));
        assert!(c.contains(&DiagnosticCode::UnknownFunction));
        assert!(c.contains(&DiagnosticCode::UnmappedKeyword));

        let mut p = heater_policy();
        p.object_device.matching_attribute.remove("type");
        p.affected_device.get_mut("ac").unwrap().selector.matching_attribute.insert("x".into(), "a..b".into());
        p.relationship = "objectDevice and foo.bar".into();
        let c = codes(&p);
        assert_eq!(
            c.iter().filter(|c| **c == DiagnosticCode::InvalidSelector).count(),
            2,
            "{c:?}"
        );
        assert!(c.contains(&DiagnosticCode::BareDeviceReference));
        assert!(c.contains(&DiagnosticCode::UnknownRoot));

        let mut p = heater_policy();
        p.id = "".into();
        p.action = " ".into();
        p.alert_targets = vec!["affectedDevice.ac".into(), "operator".into()];
        p.assertion = Some("len(affectedDevice.ac.on, 1)".into());
        let c = codes(&p);
        assert!(c.contains(&DiagnosticCode::EmptyId));
        assert!(c.contains(&DiagnosticCode::EmptyAction));
        assert!(c.contains(&DiagnosticCode::ArityMismatch));
        assert_eq!(c.iter().filter(|c| **c == DiagnosticCode::InvalidAlertTarget).count(), 1);
    }

    #[test]
    fn aggregates_need_set_quantifier() {
        let mut p = heater_policy();
        p.assertion = Some("sum(affectedDevice.ac.on) > 1".into());
        assert!(codes(&p).contains(&DiagnosticCode::AggregateNeedsSetQuantifier));
        p.affected_device.get_mut("ac").unwrap().quantifier = Quantifier::Set;
        assert!(!codes(&p).contains(&DiagnosticCode::AggregateNeedsSetQuantifier));
    }

    #[test]
    fn id_and_description_format() {
        let mut p = heater_policy();
        p.id = "noorg".into();
        p.description = "turn on heater".into();
        assert_eq!(
            codes(&p),
            vec![DiagnosticCode::IdFormat, DiagnosticCode::DescriptionFormat]
        );
    }
}
