use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;
use signforge::corpus::{filter_backgrounds, parse_coco_annotations, CorpusError, ExclusionPolicy, Rejection};

const FIVE_IMAGES: &str = r#"{
  "info": {"description": "mini"},
  "images": [
    {"id": 11, "file_name": "a.jpg", "width": 640, "height": 800, "license": 1},
    {"id": 12, "file_name": "b.jpg", "width": 1024, "height": 768},
    {"id": 13, "file_name": "c.jpg", "width": 500, "height": 700},
    {"id": 14, "file_name": "d.jpg", "width": 300, "height": 900},
    {"id": 15, "file_name": "e.jpg", "width": 800, "height": 600}
  ],
  "annotations": [
    {"id": 1, "image_id": 11, "category_id": 1, "bbox": [1, 2, 3, 4], "segmentation": [[1, 2, 3, 4]]},
    {"id": 2, "image_id": 11, "category_id": 18, "bbox": [5, 5, 5, 5]},
    {"id": 3, "image_id": 12, "category_id": 3, "bbox": [0, 0, 9, 9]},
    {"id": 4, "image_id": 12, "category_id": 3, "bbox": [9, 9, 9, 9]},
    {"id": 5, "image_id": 12, "category_id": 1, "bbox": [1, 1, 1, 1]},
    {"id": 6, "image_id": 13, "category_id": 18, "bbox": [2, 2, 2, 2]},
    {"id": 7, "image_id": 14, "category_id": 13, "bbox": [3, 3, 3, 3]},
    {"id": 8, "image_id": 14, "category_id": 1, "bbox": [4, 4, 4, 4]},
    {"id": 9, "image_id": 11, "category_id": 1, "bbox": [6, 6, 6, 6]}
  ],
  "categories": [
    {"id": 1, "name": "person"},
    {"id": 3, "name": "car"},
    {"id": 13, "name": "stop sign"},
    {"id": 18, "name": "dog"}
  ]
}"#;

/// Label sets computed by walking the untyped JSON tree.
fn walk_labels(doc: &str) -> BTreeMap<u64, BTreeSet<String>> {
    let v: Value = serde_json::from_str(doc).unwrap();
    let mut names = BTreeMap::new();
    for c in v["categories"].as_array().unwrap() {
        names.insert(c["id"].as_u64().unwrap(), c["name"].as_str().unwrap().to_string());
    }
    let mut out: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
    for img in v["images"].as_array().unwrap() {
        out.insert(img["id"].as_u64().unwrap(), BTreeSet::new());
    }
    for a in v["annotations"].as_array().unwrap() {
        let name = names[&a["category_id"].as_u64().unwrap()].clone();
        out.get_mut(&a["image_id"].as_u64().unwrap()).unwrap().insert(name);
    }
    out
}

#[test]
fn index_agrees_with_tree_walk() {
    let index = parse_coco_annotations(FIVE_IMAGES.as_bytes()).unwrap();
    assert_eq!(index.images.len(), 5);
    assert_eq!(index.label_map, walk_labels(FIVE_IMAGES));
    assert!(index.labels(15).is_empty());
    let dims: Vec<_> = index.images.iter().map(|i| (i.id, i.width, i.height)).collect();
    assert_eq!(dims, vec![(11, 640, 800), (12, 1024, 768), (13, 500, 700), (14, 300, 900), (15, 800, 600)]);
}

#[test]
fn default_policy_on_five_images() {
    let index = parse_coco_annotations(FIVE_IMAGES.as_bytes()).unwrap();
    // 12 has a car, 14 a stop sign and is narrow.
    assert_eq!(filter_backgrounds(&index, &ExclusionPolicy::default()), vec![11, 13, 15]);
    let policy = ExclusionPolicy::default();
    let verdict = policy.verdict(&index.images[3], index.labels(14));
    assert_eq!(verdict, Err(Rejection::ExcludedLabel("stop sign".into())));
}

#[test]
fn malformed_document_reports_offset() {
    let doc = b"{\"images\": [ {\"id\": 1,, } ]}";
    match parse_coco_annotations(doc) {
        Err(CorpusError::Parse { offset, .. }) => assert_eq!(doc[offset], b','),
        other => panic!("unexpected {other:?}"),
    }
    let missing = br#"{"images": [], "annotations": []}"#;
    assert!(matches!(parse_coco_annotations(missing), Err(CorpusError::Schema(_))));
    let dangling = br#"{"images": [], "annotations": [{"image_id": 4, "category_id": 1}], "categories": [{"id": 1, "name": "x"}]}"#;
    assert!(matches!(parse_coco_annotations(dangling), Err(CorpusError::UnknownImage(4))));
}
