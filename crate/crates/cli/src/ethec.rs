//! ETHEC metadata → hierarchy and instance label files.
//!
//! The metadata is a JSON object keyed by image (or a list of records) whose
//! entries carry `family`, `subfamily`, `genus` and `specific_epithet`.
//! Species are named `<genus>_<specific_epithet>`. Node ids are assigned
//! level by level in name order, so the output does not depend on the
//! record order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::Value;

use hierembed::hierarchy::{Hierarchy, Node};
use hierembed::{io, Error, Result};

use crate::commands::{ConvertEthecArgs, EDGES, INSTANCE_LEVELS, NODES};

const LEVEL_KEYS: [&str; 3] = ["family", "subfamily", "genus"];

/// Label names on the four levels for one record.
fn record_path(key: &str, v: &Value) -> Result<[String; 4]> {
    let field = |name: &str| -> Result<String> {
        v.get(name)
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .ok_or_else(|| Error::Format(format!("record {key}: missing '{name}'")))
    };
    let [f, s, g] = LEVEL_KEYS.map(field);
    let (f, s, g) = (f?, s?, g?);
    let species = format!("{g}_{}", field("specific_epithet")?);
    Ok([f, s, g, species])
}

fn records(root: &Value) -> Result<Vec<(String, &Value)>> {
    match root {
        Value::Object(map) => Ok(map.iter().map(|(k, v)| (k.clone(), v)).collect()),
        Value::Array(items) => Ok(items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let key = ["token", "image_name", "image_path"]
                    .iter()
                    .find_map(|k| v.get(*k).and_then(Value::as_str))
                    .map_or_else(|| i.to_string(), String::from);
                (key, v)
            })
            .collect()),
        _ => Err(Error::Format("ETHEC metadata must be a JSON object or array".into())),
    }
}

pub struct Converted {
    pub hierarchy: Hierarchy,
    /// (record key, node index per level), sorted by key.
    pub instances: Vec<(String, [usize; 4])>,
}

pub fn convert_value(root: &Value) -> Result<Converted> {
    let recs = records(root)?;
    if recs.is_empty() {
        return Err(Error::Format("ETHEC metadata has no records".into()));
    }
    let mut paths = Vec::with_capacity(recs.len());
    let mut names: [BTreeSet<String>; 4] = Default::default();
    let mut parent_of: [BTreeMap<String, String>; 4] = Default::default();
    for (key, v) in &recs {
        let p = record_path(key, v)?;
        for l in 0..4 {
            names[l].insert(p[l].clone());
            if l > 0 {
                if let Some(prev) = parent_of[l].insert(p[l].clone(), p[l - 1].clone()) {
                    if prev != p[l - 1] {
                        return Err(Error::Structure(format!(
                            "label '{}' has two parents: '{prev}' and '{}'",
                            p[l],
                            p[l - 1]
                        )));
                    }
                }
            }
        }
        paths.push((key.clone(), p));
    }

    let mut id_of: [BTreeMap<String, u32>; 4] = Default::default();
    let mut nodes = Vec::new();
    let mut next = 0u32;
    for l in 0..4 {
        for name in &names[l] {
            id_of[l].insert(name.clone(), next);
            nodes.push(Node {
                id: next,
                level: l + 1,
                name: name.clone(),
            });
            next += 1;
        }
    }
    let mut edges = Vec::new();
    for l in 1..4 {
        for (child, parent) in &parent_of[l] {
            edges.push((id_of[l - 1][parent], id_of[l][child]));
        }
    }
    let hierarchy = Hierarchy::new(nodes, &edges)?;
    let mut instances: Vec<(String, [usize; 4])> = paths
        .into_iter()
        .map(|(key, p)| {
            let idx = std::array::from_fn(|l| hierarchy.index_of(id_of[l][&p[l]]).expect("node was inserted"));
            (key, idx)
        })
        .collect();
    instances.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(Converted { hierarchy, instances })
}

fn write_levels(path: &Path, c: &Converted) -> Result<()> {
    let mut text = String::from("instance_id\tkey\tl1\tl2\tl3\tl4\n");
    for (i, (key, idx)) in c.instances.iter().enumerate() {
        text.push_str(&format!("{i}\t{key}"));
        for &n in idx {
            text.push_str(&format!("\t{}", c.hierarchy.id_of(n)));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn convert(a: &ConvertEthecArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", a.input.display())))?;
    let c = convert_value(&root)?;
    io::write_hierarchy(&c.hierarchy, &a.out.join(NODES), &a.out.join(EDGES))?;
    write_levels(&a.out.join(INSTANCE_LEVELS), &c)?;
    eprintln!(
        "[hierembed] {} labels per level {:?}, {} instances",
        c.hierarchy.len(),
        c.hierarchy.level_sizes(),
        c.instances.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn ids_are_level_wise_and_order_independent() {
        let a = json!({
            "img2": {"family": "Pieridae", "subfamily": "Pierinae", "genus": "Pieris", "specific_epithet": "rapae"},
            "img1": {"family": "Nymphalidae", "subfamily": "Satyrinae", "genus": "Erebia", "specific_epithet": "aethiops"},
            "img3": {"family": "Pieridae", "subfamily": "Pierinae", "genus": "Pieris", "specific_epithet": "napi"},
        });
        let c = convert_value(&a).unwrap();
        let h = &c.hierarchy;
        assert_eq!(h.level_sizes(), vec![2, 2, 2, 3]);
        assert_eq!(h.node(0).name, "Nymphalidae");
        assert_eq!(h.node(7).name, "Pieris_napi");
        assert_eq!(c.instances[0].0, "img1");
        assert_eq!(c.instances[2].1, [1, 2, 5, 7]);

        let b = Value::Array(a.as_object().unwrap().values().rev().cloned().collect());
        let c2 = convert_value(&b).unwrap();
        assert_eq!(c2.hierarchy.nodes(), h.nodes());
    }

    #[test]
    fn conflicting_parent_is_rejected() {
        let a = json!([
            {"family": "A", "subfamily": "S", "genus": "G", "specific_epithet": "x"},
            {"family": "B", "subfamily": "S", "genus": "G", "specific_epithet": "y"},
        ]);
        assert_eq!(convert_value(&a).err().unwrap().kind(), "structure");
        let missing = json!([{"family": "A", "genus": "G", "specific_epithet": "x"}]);
        assert_eq!(convert_value(&missing).err().unwrap().kind(), "format");
    }
}
