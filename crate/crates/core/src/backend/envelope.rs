use serde_json::Value;

/// First valid JSON object embedded in `text`.
///
/// Tolerates code fences and prose around the object. Arrays and scalars
/// are skipped; only objects count.
pub fn extract_json_object(text: &str) -> Option<Value> {
    for (pos, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}
