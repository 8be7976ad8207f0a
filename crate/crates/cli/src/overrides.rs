use serde_json::Value;

/// Applies a `key=value` override to a JSON document. Keys are dotted paths;
/// numeric segments index arrays. The value is parsed as JSON when it can be,
/// and taken as a plain string otherwise.
pub fn apply(doc: &mut Value, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override {assignment:?} is not key=value"))?;
    if key.is_empty() {
        return Err(format!("override {assignment:?} has an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));

    let segments: Vec<&str> = key.split('.').collect();
    let (last, parents) = segments.split_last().expect("split yields one segment");
    let mut node = doc;
    for seg in parents {
        node = match node {
            Value::Object(map) => map
                .entry(seg.to_string())
                .or_insert_with(|| Value::Object(Default::default())),
            Value::Array(items) => {
                let i = index(seg, items.len(), key)?;
                &mut items[i]
            }
            _ => return Err(format!("{key}: {seg:?} is not inside an object or array")),
        };
    }
    match node {
        Value::Object(map) => {
            map.insert(last.to_string(), value);
        }
        Value::Array(items) => {
            let i = index(last, items.len(), key)?;
            items[i] = value;
        }
        _ => return Err(format!("{key}: parent of {last:?} is a scalar")),
    }
    Ok(())
}

fn index(seg: &str, len: usize, key: &str) -> Result<usize, String> {
    match seg.parse::<usize>() {
        Ok(i) if i < len => Ok(i),
        Ok(i) => Err(format!("{key}: index {i} out of range (length {len})")),
        Err(_) => Err(format!("{key}: {seg:?} is not an array index")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_and_indexed() {
        let mut doc = json!({"seeds": {"base": 0}, "agents": [{"kind": "mdbe"}]});
        apply(&mut doc, "seeds.base=7").unwrap();
        apply(&mut doc, "agents.0.constant_scale=0.5").unwrap();
        apply(&mut doc, "out_dir=runs/a").unwrap();
        apply(&mut doc, "env.params.period=100").unwrap();
        assert_eq!(
            doc,
            json!({
                "seeds": {"base": 7},
                "agents": [{"kind": "mdbe", "constant_scale": 0.5}],
                "out_dir": "runs/a",
                "env": {"params": {"period": 100}}
            })
        );
    }

    #[test]
    fn rejects_malformed() {
        let mut doc = json!({"agents": [], "schema": 1});
        assert!(apply(&mut doc, "schema").is_err());
        assert!(apply(&mut doc, "=3").is_err());
        assert!(apply(&mut doc, "agents.0.kind=x").is_err());
        assert!(apply(&mut doc, "schema.x=1").is_err());
    }
}
