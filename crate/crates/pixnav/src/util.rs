//! Small shared helpers: PNG codecs, hashing, and layered-config JSON merge.

use std::io::Cursor;

use sha2::{Digest, Sha256};

pub fn rgb_to_png(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    let img: image::RgbImage =
        image::ImageBuffer::from_raw(width, height, rgb.to_vec()).expect("rgb buffer size");
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("png encoding to memory cannot fail");
    bytes
}

pub fn png_to_rgb(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?
        .into_rgb8();
    Ok((img.width(), img.height(), img.into_raw()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Recursively merges `patch` into `base`: objects merge key-wise, any other
/// value replaces. Used for config layering (file < env < flags).
pub fn json_merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(base_map), serde_json::Value::Object(patch_map)) => {
            for (k, v) in patch_map {
                match base_map.get_mut(k) {
                    Some(slot) => json_merge(slot, v),
                    None => {
                        base_map.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Key paths present in `value` but absent from `schema` (schema = a fully
/// populated default document). Arrays and leaves are not descended.
pub fn unknown_key_paths(schema: &serde_json::Value, value: &serde_json::Value) -> Vec<String> {
    let mut out = Vec::new();
    collect_unknown(schema, value, String::new(), &mut out);
    out
}

fn collect_unknown(
    schema: &serde_json::Value,
    value: &serde_json::Value,
    prefix: String,
    out: &mut Vec<String>,
) {
    if let (serde_json::Value::Object(smap), serde_json::Value::Object(vmap)) = (schema, value) {
        for (k, v) in vmap {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match smap.get(k) {
                None => out.push(path),
                Some(sv) => collect_unknown(sv, v, path, out),
            }
        }
    }
}

/// Parses "a.b.c=value" into a nested JSON object, guessing the value type
/// (JSON literal first, bare string otherwise).
pub fn set_expr_to_json(expr: &str) -> Result<serde_json::Value, String> {
    let (path, raw) = expr
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {expr:?}"))?;
    let value: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(raw.to_string()),
    };
    let mut node = value;
    for key in path.trim().split('.').rev() {
        if key.is_empty() {
            return Err(format!("empty key segment in {expr:?}"));
        }
        let mut map = serde_json::Map::new();
        map.insert(key.to_string(), node);
        node = serde_json::Value::Object(map);
    }
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let rgb: Vec<u8> = (0..12 * 8 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let png = rgb_to_png(12, 8, &rgb);
        let (w, h, back) = png_to_rgb(&png).unwrap();
        assert_eq!((w, h), (12, 8));
        assert_eq!(back, rgb);
    }

    #[test]
    fn merge_and_unknown_keys() {
        let mut base: serde_json::Value =
            serde_json::json!({"a": {"b": 1, "c": 2}, "d": [1, 2]});
        let patch = serde_json::json!({"a": {"c": 9}, "d": [3]});
        json_merge(&mut base, &patch);
        assert_eq!(base, serde_json::json!({"a": {"b": 1, "c": 9}, "d": [3]}));

        let schema = serde_json::json!({"a": {"b": 0}, "d": 0});
        let bad = serde_json::json!({"a": {"b": 1, "zz": 2}, "q": 3});
        let mut unknown = unknown_key_paths(&schema, &bad);
        unknown.sort();
        assert_eq!(unknown, vec!["a.zz".to_string(), "q".to_string()]);
    }

    #[test]
    fn set_exprs() {
        assert_eq!(
            set_expr_to_json("train.lr=0.001").unwrap(),
            serde_json::json!({"train": {"lr": 0.001}})
        );
        assert_eq!(
            set_expr_to_json("eval.band=1-3m").unwrap(),
            serde_json::json!({"eval": {"band": "1-3m"}})
        );
        assert!(set_expr_to_json("nonsense").is_err());
    }
}
