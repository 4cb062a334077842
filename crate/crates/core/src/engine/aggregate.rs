use super::types::FiredPolicy;
use crate::model::ResponseType;

/// Combines fired responses: the most urgent priority tier wins, and within it the most severe
/// response. Nothing fired means APPROVE.
pub fn aggregate_responses(fired: &[FiredPolicy]) -> ResponseType {
    let Some(top) = fired.iter().map(|f| f.priority).min() else {
        return ResponseType::Approve;
    };
    fired
        .iter()
        .filter(|f| f.priority == top)
        .map(|f| f.response)
        .max()
        .unwrap_or(ResponseType::Approve)
}
