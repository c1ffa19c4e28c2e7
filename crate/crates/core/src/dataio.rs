//! Annotation import, scene selection and file persistence.
//!
//! Native scene files are JSON: `{"schema_version": 1, "scenes": [...]}`,
//! each scene as documented on [`Scene`]'s serde form (boxes as inclusive
//! `[x1, y1, x2, y2]`, masks as row-major `[start, length]` runs of set
//! pixels). Episodes are JSON lines. Reports are CSV files whose leading
//! `#` lines carry the effective configuration.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{EpisodeRecord, Scene, SceneError, SceneObject, SceneRepr};
use crate::geometry::{BBox, Frame};
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;

/// Objects below this area (px²) count as small.
pub const SMALL_AREA: u64 = 100;
/// Scenes with more than this many objects count as dense.
pub const DENSE_COUNT: usize = 15;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u64 },
    #[error("missing or invalid field `{0}`")]
    Field(String),
    #[error("annotation {annotation} references unknown image {image}")]
    DanglingImage { annotation: usize, image: u64 },
    #[error("annotation {annotation} references unknown category {category}")]
    DanglingCategory { annotation: usize, category: u64 },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value, DataError> {
    v.get(key).ok_or_else(|| DataError::Field(format!("{ctx}.{key}")))
}

fn as_u64(v: &Value, key: &str, ctx: &str) -> Result<u64, DataError> {
    field(v, key, ctx)?
        .as_u64()
        .ok_or_else(|| DataError::Field(format!("{ctx}.{key}")))
}

/// Converts a COCO `[x, y, w, h]` box to inclusive corners clipped to the
/// frame; `None` when nothing is left.
fn coco_box(xywh: [f64; 4], frame: Frame) -> Option<BBox> {
    let [x, y, w, h] = xywh;
    if !(w > 0.0 && h > 0.0) {
        return None;
    }
    let x1 = (x.round() as i64).max(0);
    let y1 = (y.round() as i64).max(0);
    let x2 = ((x + w).round() as i64 - 1).min(frame.width as i64 - 1);
    let y2 = ((y + h).round() as i64 - 1).min(frame.height as i64 - 1);
    BBox::new(x1, y1, x2, y2).ok()
}

/// Bounding `[x, y, w, h]` of polygon segmentations (lists of x, y pairs).
fn polygon_xywh(seg: &Value) -> Option<[f64; 4]> {
    let polys = seg.as_array()?;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for poly in polys {
        let coords: Vec<f64> = poly.as_array()?.iter().filter_map(Value::as_f64).collect();
        for pt in coords.chunks_exact(2) {
            x0 = x0.min(pt[0]);
            y0 = y0.min(pt[1]);
            x1 = x1.max(pt[0]);
            y1 = y1.max(pt[1]);
        }
    }
    x0.is_finite().then_some([x0, y0, x1 - x0, y1 - y0])
}

/// Parses COCO-style JSON (`images`, `annotations`, `categories`). Boxes
/// become inclusive corners (`x2 = x + w - 1`); polygon-only annotations get
/// their bounding box; masks are not rasterized. Degenerate boxes are dropped
/// with a warning.
pub fn import_coco_str(text: &str) -> Result<Vec<Scene>, DataError> {
    let root: Value = serde_json::from_str(text)?;
    let list = |key: &str| -> Result<&Vec<Value>, DataError> {
        field(&root, key, "root")?
            .as_array()
            .ok_or_else(|| DataError::Field(format!("root.{key}")))
    };
    let mut categories: HashMap<u64, String> = HashMap::new();
    for c in list("categories")? {
        let name = field(c, "name", "category")?
            .as_str()
            .ok_or_else(|| DataError::Field("category.name".into()))?;
        categories.insert(as_u64(c, "id", "category")?, name.to_string());
    }
    let mut images: BTreeMap<u64, (Frame, Vec<SceneObject>)> = BTreeMap::new();
    for img in list("images")? {
        let frame = Frame::new(
            as_u64(img, "width", "image")? as u32,
            as_u64(img, "height", "image")? as u32,
        )
        .map_err(|e| DataError::Field(format!("image size: {e}")))?;
        images.insert(as_u64(img, "id", "image")?, (frame, Vec::new()));
    }
    for (i, ann) in list("annotations")?.iter().enumerate() {
        let image = as_u64(ann, "image_id", "annotation")?;
        let category = as_u64(ann, "category_id", "annotation")?;
        let (frame, objects) = images
            .get_mut(&image)
            .ok_or(DataError::DanglingImage { annotation: i, image })?;
        let name = categories.get(&category).ok_or(DataError::DanglingCategory {
            annotation: i,
            category,
        })?;
        let xywh = match ann.get("bbox").and_then(Value::as_array) {
            Some(b) if b.len() == 4 => {
                let v: Vec<f64> = b.iter().filter_map(Value::as_f64).collect();
                (v.len() == 4).then(|| [v[0], v[1], v[2], v[3]])
            }
            Some(_) => return Err(DataError::Field(format!("annotations[{i}].bbox"))),
            None => ann.get("segmentation").and_then(polygon_xywh),
        };
        let Some(xywh) = xywh else {
            return Err(DataError::Field(format!("annotations[{i}].bbox")));
        };
        match coco_box(xywh, *frame) {
            Some(b) => objects.push(SceneObject::from_box(b, name.clone())),
            None => log::warn!("dropping annotation {i}: degenerate box {xywh:?}"),
        }
    }
    images
        .into_iter()
        .map(|(id, (frame, objects))| Ok(Scene::new(id, frame, objects, None)?))
        .collect()
}

pub fn import_coco(path: &Path) -> Result<Vec<Scene>, DataError> {
    import_coco_str(&read(path)?)
}

/// Exports scenes as COCO-style JSON; categories are numbered in name order.
pub fn export_coco(scenes: &[Scene]) -> Value {
    let mut names: Vec<&str> = scenes
        .iter()
        .flat_map(|s| s.objects().iter().map(|o| o.category.as_str()))
        .collect();
    names.sort_unstable();
    names.dedup();
    let id_of = |n: &str| names.binary_search(&n).expect("collected above") as u64 + 1;
    let mut annotations = Vec::new();
    for s in scenes {
        for o in s.objects() {
            let b = o.bbox;
            annotations.push(serde_json::json!({
                "id": annotations.len() + 1,
                "image_id": s.scene_id(),
                "category_id": id_of(&o.category),
                "bbox": [b.x1(), b.y1(), b.width(), b.height()],
                "area": o.area,
            }));
        }
    }
    serde_json::json!({
        "images": scenes.iter().map(|s| serde_json::json!({
            "id": s.scene_id(), "width": s.frame().width, "height": s.frame().height,
        })).collect::<Vec<_>>(),
        "annotations": annotations,
        "categories": names.iter().map(|n| serde_json::json!({"id": id_of(n), "name": n})).collect::<Vec<_>>(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    /// Scenes with at least one object under [`SMALL_AREA`].
    Small,
    /// Scenes with more than [`DENSE_COUNT`] objects.
    Dense,
    #[default]
    All,
}

impl std::str::FromStr for SelectionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(Self::Small),
            "dense" => Ok(Self::Dense),
            "all" => Ok(Self::All),
            other => Err(format!("unknown selection rule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: PathBuf,
    /// Optional renaming of source categories.
    #[serde(default)]
    pub category_map: BTreeMap<String, String>,
    #[serde(default)]
    pub rule: SelectionRule,
    /// Maximum scenes per dominant category.
    pub per_category_cap: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.per_category_cap == Some(0) {
            return Err(DataError::Field("per_category_cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Imports the source, renames categories and applies the selection.
    pub fn load(&self) -> Result<Vec<Scene>, DataError> {
        self.validate()?;
        let scenes = import_coco(&self.source)?
            .into_iter()
            .map(|s| rename_categories(s, &self.category_map))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(select_scenes(&scenes, self.rule, self.per_category_cap, self.seed))
    }
}

fn rename_categories(scene: Scene, map: &BTreeMap<String, String>) -> Result<Scene, DataError> {
    if map.is_empty() {
        return Ok(scene);
    }
    let objects = scene
        .objects()
        .iter()
        .cloned()
        .map(|mut o| {
            if let Some(n) = map.get(&o.category) {
                o.category = n.clone();
            }
            o
        })
        .collect();
    Ok(Scene::new(
        scene.scene_id(),
        scene.frame(),
        objects,
        scene.merged_gt_mask().cloned(),
    )?)
}

pub fn passes_rule(scene: &Scene, rule: SelectionRule) -> bool {
    match rule {
        SelectionRule::Small => scene.objects().iter().any(|o| o.area < SMALL_AREA),
        SelectionRule::Dense => scene.objects().len() > DENSE_COUNT,
        SelectionRule::All => true,
    }
}

/// Most frequent category of a scene, ties to the smaller name.
pub fn dominant_category(scene: &Scene) -> Option<&str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for o in scene.objects() {
        *counts.entry(o.category.as_str()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| c)
}

/// Filters by `rule`, then keeps at most `cap` scenes per dominant category,
/// visiting scenes in a seeded shuffle. The result is sorted by scene id.
pub fn select_scenes(scenes: &[Scene], rule: SelectionRule, cap: Option<usize>, seed: u64) -> Vec<Scene> {
    let mut kept: Vec<&Scene> = scenes.iter().filter(|s| passes_rule(s, rule)).collect();
    if let Some(cap) = cap {
        kept.sort_by_key(|s| s.scene_id());
        kept.shuffle(&mut rng::stream(seed, &[rng::label::SELECT]));
        let mut per: HashMap<Option<&str>, usize> = HashMap::new();
        kept.retain(|s| {
            let n = per.entry(dominant_category(s)).or_default();
            *n += 1;
            *n <= cap
        });
    }
    kept.sort_by_key(|s| s.scene_id());
    kept.into_iter().cloned().collect()
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    schema_version: u64,
    scenes: Vec<SceneRepr>,
}

pub fn scenes_to_json(scenes: &[Scene]) -> String {
    let file = SceneFile {
        schema_version: SCHEMA_VERSION as u64,
        scenes: scenes.iter().map(SceneRepr::from).collect(),
    };
    serde_json::to_string(&file).expect("scenes serialize")
}

pub fn scenes_from_json(text: &str) -> Result<Vec<Scene>, DataError> {
    let root: Value = serde_json::from_str(text)?;
    let version = root
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| DataError::Field("schema_version".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(DataError::SchemaVersion { found: version });
    }
    let file: SceneFile = serde_json::from_value(root)?;
    Ok(file
        .scenes
        .into_iter()
        .map(Scene::try_from)
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn save_scenes(path: &Path, scenes: &[Scene]) -> Result<(), DataError> {
    fs::write(path, scenes_to_json(scenes)).map_err(io_err(path))
}

pub fn load_scenes(path: &Path) -> Result<Vec<Scene>, DataError> {
    scenes_from_json(&read(path)?)
}

/// One JSON document per line.
pub fn save_episodes(path: &Path, records: &[EpisodeRecord]) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, DataError> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Writes `rows` as CSV, preceded by `header` lines prefixed with `# `.
pub fn write_csv<T: Serialize>(path: &Path, header: &[String], rows: &[T]) -> Result<(), DataError> {
    let mut buf: Vec<u8> = Vec::new();
    for line in header {
        for part in line.lines() {
            buf.extend_from_slice(format!("# {part}\n").as_bytes());
        }
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(io_err(path))?;
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Reads CSV written by [`write_csv`], skipping `#` lines.
pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}
