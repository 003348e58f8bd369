//! Functions shipped with the server binary.

use chainanno_core::engine::{Content, InstanceRef, SavedAnswer};
use chainanno_core::ApiRegistry;
use serde_json::{json, Value};

/// Stand-in for a detection model: four line boxes on the chosen page, in
/// page-relative coordinates.
pub fn predict_boxes(instance: &InstanceRef, answers: &[SavedAnswer]) -> Result<Value, String> {
    let payload = instance.payload.as_ref().ok_or("instance has no content")?;
    let Content::File(pages) = &payload.content else {
        return Err("predict_boxes needs a file instance".into());
    };
    let page = answers
        .iter()
        .rev()
        .find_map(|a| match &a.answer {
            chainanno_core::Answer::Page { index } => Some(*index),
            _ => None,
        })
        .unwrap_or(0);
    if page >= pages.len() {
        return Err(format!("page {page} does not exist"));
    }
    let boxes: Vec<Value> = (0..4)
        .map(|i| json!({"x": 0.1, "y": 0.1 + 0.2 * i as f64, "w": 0.8, "h": 0.1}))
        .collect();
    Ok(Value::Array(boxes))
}

pub fn default_registry() -> ApiRegistry {
    let mut registry = ApiRegistry::new();
    registry
        .register("predict_boxes", predict_boxes)
        .expect("fresh registry");
    registry
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_for_file_instances_only() {
        let r = default_registry();
        let ok = r
            .call("predict_boxes", &InstanceRef::pages(1, vec!["a.png".into()]), &[])
            .unwrap();
        assert_eq!(ok.as_array().unwrap().len(), 4);
        assert!(r.call("predict_boxes", &InstanceRef::text(1, "t"), &[]).is_err());
    }
}
