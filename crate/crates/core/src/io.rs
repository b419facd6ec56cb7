//! Text and binary file formats.
//!
//! Tab-separated files carry a header row naming their columns. Binary
//! blocks are little-endian: `EMB1` label points in node-id order, `FEAT`
//! single-precision features, `LMAP` instance maps, and `JMDL` joint models
//! wrapping an `EMB1` and an `LMAP` block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::embed::{EdgeEval, EmbeddingTable, EpochLog};
use crate::error::{Error, Result};
use crate::geometry::{ConeParams, Geometry};
use crate::heads::ClassifierEval;
use crate::hierarchy::{Edge, EdgeSet, Hierarchy, Negative, Node, Polarity, SplitResult};
use crate::joint::{FeatureMatrix, JointEval, JointModel, LinearMap, Prediction};

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const FEAT_MAGIC: &[u8; 4] = b"FEAT";
const LMAP_MAGIC: &[u8; 4] = b"LMAP";
const MODEL_MAGIC: &[u8; 4] = b"JMDL";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)
}

fn delimited_writer(path: &Path, delimiter: u8) -> Result<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .delimiter(delimiter)
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)
        .map_err(csv_err)
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<File>> {
    delimited_writer(path, b'\t')
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    delimited_writer(path, b',')
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::Format(format!("{}: missing column {}", path.display(), i + 1)))?;
    raw.trim().parse().map_err(|_| {
        Error::Format(format!(
            "{}: cannot parse '{raw}' in column {} at line {}",
            path.display(),
            i + 1,
            rec.position().map_or(0, |p| p.line())
        ))
    })
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    tsv_reader(path)?.records().map(|r| r.map_err(csv_err)).collect()
}

fn finish(mut w: csv::Writer<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

pub fn write_hierarchy(h: &Hierarchy, nodes_path: &Path, edges_path: &Path) -> Result<()> {
    let mut w = tsv_writer(nodes_path)?;
    w.write_record(["node_id", "level", "name"]).map_err(csv_err)?;
    for n in h.nodes() {
        if n.name.contains(['\t', '\n']) {
            return Err(Error::Format(format!("node name {:?} contains a tab or newline", n.name)));
        }
        w.write_record([n.id.to_string(), n.level.to_string(), n.name.clone()])
            .map_err(csv_err)?;
    }
    finish(w)?;
    write_edges(h, h.basic_edges().pairs(), edges_path)
}

pub fn read_hierarchy(nodes_path: &Path, edges_path: &Path) -> Result<Hierarchy> {
    let nodes = records(nodes_path)?
        .iter()
        .map(|r| {
            Ok(Node {
                id: field(r, 0, nodes_path)?,
                level: field(r, 1, nodes_path)?,
                name: r.get(2).unwrap_or("").to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let edges = records(edges_path)?
        .iter()
        .map(|r| Ok((field(r, 0, edges_path)?, field(r, 1, edges_path)?)))
        .collect::<Result<Vec<(u32, u32)>>>()?;
    Hierarchy::new(nodes, &edges)
}

/// Writes node-index edges as `parent_id<TAB>child_id`.
pub fn write_edges(h: &Hierarchy, edges: &[Edge], path: &Path) -> Result<()> {
    let mut w = tsv_writer(path)?;
    w.write_record(["parent_id", "child_id"]).map_err(csv_err)?;
    for &(u, v) in edges {
        w.write_record([h.id_of(u).to_string(), h.id_of(v).to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

fn index(h: &Hierarchy, id: u32, path: &Path) -> Result<usize> {
    h.index_of(id)
        .ok_or_else(|| Error::Inconsistent(format!("{}: unknown node id {id}", path.display())))
}

pub fn read_edges(h: &Hierarchy, path: &Path, polarity: Polarity) -> Result<EdgeSet> {
    let pairs = records(path)?
        .iter()
        .map(|r| Ok((index(h, field(r, 0, path)?, path)?, index(h, field(r, 1, path)?, path)?)))
        .collect::<Result<Vec<_>>>()?;
    EdgeSet::new(pairs, polarity)
}

/// Split file names inside a split directory.
pub const SPLIT_FILES: [&str; 4] = ["train.tsv", "val.tsv", "test.tsv", "negatives.tsv"];

pub fn write_split(h: &Hierarchy, split: &SplitResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_edges(h, split.train.pairs(), &dir.join(SPLIT_FILES[0]))?;
    write_edges(h, split.val.pairs(), &dir.join(SPLIT_FILES[1]))?;
    write_edges(h, split.test.pairs(), &dir.join(SPLIT_FILES[2]))?;
    let mut w = tsv_writer(&dir.join(SPLIT_FILES[3]))?;
    w.write_record(["split", "parent_id", "child_id", "pos_ref"]).map_err(csv_err)?;
    for (name, negs) in [("val", &split.val_neg), ("test", &split.test_neg)] {
        for n in negs {
            w.write_record([
                name.to_string(),
                h.id_of(n.edge.0).to_string(),
                h.id_of(n.edge.1).to_string(),
                n.pos_ref.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn read_split(h: &Hierarchy, dir: &Path, seed: u64) -> Result<SplitResult> {
    let train = read_edges(h, &dir.join(SPLIT_FILES[0]), Polarity::Positive)?;
    let val = read_edges(h, &dir.join(SPLIT_FILES[1]), Polarity::Positive)?;
    let test = read_edges(h, &dir.join(SPLIT_FILES[2]), Polarity::Positive)?;
    let neg_path = dir.join(SPLIT_FILES[3]);
    let mut val_neg = Vec::new();
    let mut test_neg = Vec::new();
    for r in records(&neg_path)? {
        let n = Negative {
            edge: (
                index(h, field(&r, 1, &neg_path)?, &neg_path)?,
                index(h, field(&r, 2, &neg_path)?, &neg_path)?,
            ),
            pos_ref: field(&r, 3, &neg_path)?,
        };
        match r.get(0) {
            Some("val") if n.pos_ref < val.len() => val_neg.push(n),
            Some("test") if n.pos_ref < test.len() => test_neg.push(n),
            other => {
                return Err(Error::Format(format!(
                    "{}: bad negative row (split {other:?}, pos_ref {})",
                    neg_path.display(),
                    n.pos_ref
                )))
            }
        }
    }
    Ok(SplitResult {
        train,
        val,
        test,
        val_neg,
        test_neg,
        seed,
    })
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "expected block {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&b)
        )));
    }
    Ok(())
}

fn geometry_tag(tag: u8) -> Result<Geometry> {
    Geometry::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown geometry tag {tag}")))
}

/// Node indices sorted by node id: the row order of `EMB1` blocks.
fn id_order(h: &Hierarchy) -> Vec<usize> {
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by_key(|&i| h.id_of(i));
    order
}

fn write_emb_block(w: &mut impl Write, h: &Hierarchy, t: &EmbeddingTable) -> Result<()> {
    if t.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            got: t.len(),
        });
    }
    w.write_all(EMB_MAGIC)?;
    put_u32(w, t.len())?;
    put_u32(w, t.dim())?;
    w.write_all(&[t.geometry.tag()])?;
    for i in id_order(h) {
        for v in t.row(i) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_emb_block(r: &mut impl Read, h: &Hierarchy) -> Result<EmbeddingTable> {
    expect_magic(r, EMB_MAGIC)?;
    let n = get_u32(r)?;
    let dim = get_u32(r)?;
    let geometry = geometry_tag(get_u8(r)?)?;
    if n != h.len() {
        return Err(Error::Inconsistent(format!(
            "embedding has {n} rows but the hierarchy has {} nodes",
            h.len()
        )));
    }
    let mut data = vec![0.0; n * dim];
    for i in id_order(h) {
        for v in &mut data[i * dim..(i + 1) * dim] {
            *v = get_f64(r)?;
        }
    }
    EmbeddingTable::from_rows(geometry, dim, data)
}

/// Sidecar written next to an embedding file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".rows.tsv");
    PathBuf::from(s)
}

/// Writes an `EMB1` file plus its `node_id<TAB>row` sidecar.
pub fn write_embedding(path: &Path, h: &Hierarchy, t: &EmbeddingTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_emb_block(&mut w, h, t)?;
    w.flush()?;
    let mut s = tsv_writer(&sidecar_path(path))?;
    s.write_record(["node_id", "row"]).map_err(csv_err)?;
    for (row, i) in id_order(h).into_iter().enumerate() {
        s.write_record([h.id_of(i).to_string(), row.to_string()])
            .map_err(csv_err)?;
    }
    finish(s)
}

pub fn read_embedding(path: &Path, h: &Hierarchy) -> Result<EmbeddingTable> {
    let mut r = BufReader::new(File::open(path)?);
    read_emb_block(&mut r, h)
}

/// Writes `FEAT` features and the `instance_id<TAB>row<TAB>leaf_label_id`
/// sidecar.
pub fn write_features(feat_path: &Path, instances_path: &Path, f: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(feat_path)?);
    w.write_all(FEAT_MAGIC)?;
    put_u32(&mut w, f.len())?;
    put_u32(&mut w, f.dim())?;
    for v in f.as_slice() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let mut s = tsv_writer(instances_path)?;
    s.write_record(["instance_id", "row", "leaf_label_id"]).map_err(csv_err)?;
    for i in 0..f.len() {
        s.write_record([f.ids[i].to_string(), i.to_string(), f.leaf[i].to_string()])
            .map_err(csv_err)?;
    }
    finish(s)
}

pub fn read_features(feat_path: &Path, instances_path: &Path) -> Result<FeatureMatrix> {
    let mut r = BufReader::new(File::open(feat_path)?);
    expect_magic(&mut r, FEAT_MAGIC)?;
    let n = get_u32(&mut r)?;
    let dim = get_u32(&mut r)?;
    let mut bytes = vec![0u8; n * dim * 4];
    r.read_exact(&mut bytes)?;
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut ids = vec![None; n];
    let mut leaf = vec![0; n];
    for rec in records(instances_path)? {
        let row: usize = field(&rec, 1, instances_path)?;
        if row >= n || ids[row].is_some() {
            return Err(Error::Format(format!(
                "{}: row {row} is out of range or listed twice",
                instances_path.display()
            )));
        }
        ids[row] = Some(field::<u32>(&rec, 0, instances_path)?);
        leaf[row] = field(&rec, 2, instances_path)?;
    }
    let ids = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| id.ok_or_else(|| Error::Format(format!("feature row {i} has no instance"))))
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(dim, data, ids, leaf)
}

/// `instance_id<TAB>l1<TAB>…<TAB>lL` with the label node id on each level.
pub fn write_instance_levels(path: &Path, h: &Hierarchy, f: &FeatureMatrix) -> Result<()> {
    let leaves = f.leaf_indices(h)?;
    let mut w = tsv_writer(path)?;
    let mut header = vec!["instance_id".to_string()];
    header.extend((1..=h.n_levels()).map(|l| format!("l{l}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, &leaf) in leaves.iter().enumerate() {
        let mut row = vec![f.ids[i].to_string()];
        row.extend(h.path(leaf).iter().map(|&v| h.id_of(v).to_string()));
        row.resize(header.len(), String::new());
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

fn write_map_block(w: &mut impl Write, m: &LinearMap) -> Result<()> {
    w.write_all(LMAP_MAGIC)?;
    put_u32(w, m.input_dim())?;
    put_u32(w, m.output_dim())?;
    for v in m.weights() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_map_block(r: &mut impl Read, geometry: Geometry) -> Result<LinearMap> {
    expect_magic(r, LMAP_MAGIC)?;
    let d = get_u32(r)?;
    let n = get_u32(r)?;
    let w = (0..d * n).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
    LinearMap::from_weights(geometry, d, n, w)
}

/// `JMDL`, geometry tag, K, α, then the label and map blocks.
pub fn write_model(path: &Path, h: &Hierarchy, m: &JointModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&[m.params.geometry.tag()])?;
    w.write_all(&m.params.k.to_le_bytes())?;
    w.write_all(&m.margin.to_le_bytes())?;
    write_emb_block(&mut w, h, &m.labels)?;
    write_map_block(&mut w, &m.map)?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path, h: &Hierarchy) -> Result<JointModel> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, MODEL_MAGIC)?;
    let geometry = geometry_tag(get_u8(&mut r)?)?;
    let k = get_f64(&mut r)?;
    let margin = get_f64(&mut r)?;
    let params = ConeParams::new(geometry, k)?;
    let labels = read_emb_block(&mut r, h)?;
    let map = read_map_block(&mut r, geometry)?;
    if labels.geometry != geometry || labels.dim() != map.output_dim() {
        return Err(Error::Inconsistent("model blocks disagree on geometry or dimension".into()));
    }
    Ok(JointModel {
        labels,
        map,
        params,
        margin,
    })
}

pub fn write_predictions(path: &Path, h: &Hierarchy, f: &FeatureMatrix, preds: &[Prediction]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    w.write_record(["instance_id", "level", "pred_label_id", "energy"])
        .map_err(csv_err)?;
    for p in preds {
        w.write_record([
            f.ids[p.instance].to_string(),
            p.level.to_string(),
            h.id_of(p.label).to_string(),
            p.energy.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "loss", "val_f1", "threshold"]).map_err(csv_err)?;
    for l in log {
        w.write_record([l.epoch.to_string(), l.loss.to_string(), opt(l.val_f1), opt(l.threshold)])
            .map_err(csv_err)?;
    }
    finish(w)
}

/// Generic CSV writer for small numeric reports.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    finish(w)
}

/// `TPR,TNR,full-F1,threshold`.
pub fn write_reconstruction(path: &Path, ev: &EdgeEval) -> Result<()> {
    write_csv(
        path,
        &["TPR", "TNR", "full-F1", "threshold"].map(String::from),
        &[vec![ev.tpr.to_string(), ev.tnr.to_string(), ev.f1.to_string(), ev.threshold.to_string()]],
    )
}

/// One row per split: `split,m-F1,L1..LL,hit@3 (last),hit@5 (last),hit@3
/// (mean),hit@5 (mean)`.
pub fn write_joint_metrics(path: &Path, rows: &[(&str, &JointEval)]) -> Result<()> {
    let levels = rows.first().map_or(0, |r| r.1.level_accuracy.len());
    let mut header = vec!["split".to_string(), "m-F1".to_string()];
    header.extend((1..=levels).map(|l| format!("L{l}")));
    header.extend(["hit@3-last", "hit@5-last", "hit@3-mean", "hit@5-mean"].map(String::from));
    let body = rows
        .iter()
        .map(|(name, e)| {
            let mut r = vec![name.to_string(), e.m_f1.to_string()];
            r.extend(e.level_accuracy.iter().map(|v| v.to_string()));
            r.extend([e.hit3_last, e.hit5_last, e.hit3_mean, e.hit5_mean].map(|v| v.to_string()));
            r
        })
        .collect::<Vec<_>>();
    write_csv(path, &header, &body)
}

/// `head,m-F1,m-F1-level-mean,L1..LL,min,max,mean,std`; the count columns
/// are empty for single-label heads.
pub fn write_classifier_metrics(path: &Path, rows: &[(&str, &ClassifierEval)]) -> Result<()> {
    let levels = rows.first().map_or(0, |r| r.1.level_f1.len());
    let mut header = vec!["head".to_string(), "m-F1".to_string(), "m-F1-level-mean".to_string()];
    header.extend((1..=levels).map(|l| format!("L{l}")));
    header.extend(["min", "max", "mean", "std"].map(String::from));
    let body = rows
        .iter()
        .map(|(name, e)| {
            let mut r = vec![name.to_string(), e.m_f1.to_string(), e.m_f1_level_mean.to_string()];
            r.extend(e.level_f1.iter().map(|v| v.to_string()));
            match e.counts {
                Some(c) => r.extend([c.min.to_string(), c.max.to_string(), c.mean.to_string(), c.std.to_string()]),
                None => r.extend(std::iter::repeat_n(String::new(), 4)),
            }
            r
        })
        .collect::<Vec<_>>();
    write_csv(path, &header, &body)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::hierarchy::{augment_eval_negatives, generate_synthetic_tree, split_edges};
    use crate::SeededRng;

    fn tree() -> Hierarchy {
        // ids deliberately out of level order
        let nodes = vec![
            Node { id: 7, level: 1, name: "root".into() },
            Node { id: 3, level: 2, name: "a b".into() },
            Node { id: 9, level: 2, name: "c".into() },
            Node { id: 1, level: 3, name: "leaf".into() },
        ];
        Hierarchy::new(nodes, &[(7, 3), (7, 9), (3, 1)]).unwrap()
    }

    #[test]
    fn hierarchy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = tree();
        let (n, e) = (dir.path().join("nodes.tsv"), dir.path().join("edges.tsv"));
        write_hierarchy(&h, &n, &e).unwrap();
        let back = read_hierarchy(&n, &e).unwrap();
        assert_eq!(back.nodes(), h.nodes());
        assert_eq!(back.basic_edges(), h.basic_edges());
        let text = std::fs::read_to_string(&n).unwrap();
        assert!(text.starts_with("node_id\tlevel\tname\n7\t1\troot\n"));
    }

    #[test]
    fn split_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = generate_synthetic_tree(3, 3).unwrap();
        let closure = h.transitive_closure().unwrap();
        let split = augment_eval_negatives(split_edges(&h, 0.5, 2).unwrap(), &closure, h.len(), 2).unwrap();
        write_split(&h, &split, dir.path()).unwrap();
        let back = read_split(&h, dir.path(), 2).unwrap();
        assert_eq!(back.train, split.train);
        assert_eq!(back.val, split.val);
        assert_eq!(back.test, split.test);
        assert_eq!(back.val_neg, split.val_neg);
        assert_eq!(back.test_neg, split.test_neg);
    }

    #[test]
    fn embedding_round_trip_in_id_order() {
        let dir = tempfile::tempdir().unwrap();
        let h = tree();
        let t = EmbeddingTable::from_rows(Geometry::Hc, 2, (0..8).map(|i| i as f64 * 0.05).collect()).unwrap();
        let p = dir.path().join("labels.emb");
        write_embedding(&p, &h, &t).unwrap();
        assert_eq!(read_embedding(&p, &h).unwrap(), t);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 1 + 8 * 8);
        // first stored row belongs to the smallest id (1, the leaf)
        let first = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
        assert_eq!(first, t.row(h.index_of(1).unwrap())[0]);
        let side = std::fs::read_to_string(sidecar_path(&p)).unwrap();
        assert_eq!(side, "node_id\trow\n1\t0\n3\t1\n7\t2\n9\t3\n");
    }

    #[test]
    fn features_and_model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = tree();
        let f = FeatureMatrix::new(3, vec![0.5, -1.0, 2.25, 0.0, 1.5, -0.125], vec![10, 11], vec![1, 9]).unwrap();
        let (fp, ip) = (dir.path().join("f.bin"), dir.path().join("instances.tsv"));
        write_features(&fp, &ip, &f).unwrap();
        assert_eq!(read_features(&fp, &ip).unwrap(), f);

        let lp = dir.path().join("levels.tsv");
        write_instance_levels(&lp, &h, &f).unwrap();
        let text = std::fs::read_to_string(&lp).unwrap();
        assert_eq!(text, "instance_id\tl1\tl2\tl3\n10\t7\t3\t1\n11\t7\t9\t\n");

        let mut rng = SeededRng::seed_from_u64(1);
        let params = ConeParams::new(Geometry::Ec, 0.1).unwrap();
        let model = JointModel {
            labels: EmbeddingTable::random(4, 2, &params, &mut rng),
            map: LinearMap::random(Geometry::Ec, 3, 2, 0.1, &mut rng),
            params,
            margin: 0.5,
        };
        let mp = dir.path().join("model.bin");
        write_model(&mp, &h, &model).unwrap();
        assert_eq!(read_model(&mp, &h).unwrap(), model);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nodes.tsv");
        std::fs::write(&p, "node_id\tlevel\tname\nx\t1\troot\n").unwrap();
        let e = dir.path().join("edges.tsv");
        std::fs::write(&e, "parent_id\tchild_id\n").unwrap();
        assert!(matches!(read_hierarchy(&p, &e), Err(Error::Format(_))));
        let bad = dir.path().join("bad.emb");
        std::fs::write(&bad, b"NOPE").unwrap();
        assert!(matches!(read_embedding(&bad, &tree()), Err(Error::Format(_))));
        assert!(matches!(read_embedding(&dir.path().join("missing"), &tree()), Err(Error::Io(_))));
    }
}
