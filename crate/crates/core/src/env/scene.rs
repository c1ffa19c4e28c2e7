use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, BitMask, Frame, GeometryError};
use crate::metrics::GroundTruth;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("object {index}: {reason}")]
    InvalidObject { index: usize, reason: String },
    #[error("merged mask is {0}x{1}, scene is {2}x{3}")]
    MergedMaskFrame(u32, u32, u32, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub bbox: BBox,
    pub category: String,
    /// Pixel area: mask popcount when a mask is present, box area otherwise.
    pub area: u64,
    pub instance_mask: Option<BitMask>,
}

impl SceneObject {
    pub fn from_box(bbox: BBox, category: impl Into<String>) -> Self {
        Self {
            bbox,
            category: category.into(),
            area: bbox.area(),
            instance_mask: None,
        }
    }

    /// Object described by a full-frame mask; box and area derive from it.
    pub fn from_mask(mask: BitMask, category: impl Into<String>) -> Option<Self> {
        let bbox = mask.bounding_box()?;
        Some(Self {
            bbox,
            category: category.into(),
            area: mask.count_ones(),
            instance_mask: Some(mask),
        })
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::new(self.bbox, self.category.clone()).with_area(self.area)
    }
}

/// Static environment state: frame size and ground-truth annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    scene_id: u64,
    frame: Frame,
    objects: Vec<SceneObject>,
    merged_gt_mask: Option<BitMask>,
}

impl Scene {
    pub fn new(
        scene_id: u64,
        frame: Frame,
        objects: Vec<SceneObject>,
        merged_gt_mask: Option<BitMask>,
    ) -> Result<Self, SceneError> {
        for (index, o) in objects.iter().enumerate() {
            o.bbox.check_in_frame(frame)?;
            let expected = match &o.instance_mask {
                Some(m) => {
                    if m.frame() != frame {
                        return Err(SceneError::InvalidObject {
                            index,
                            reason: "mask frame differs from scene frame".into(),
                        });
                    }
                    m.count_ones()
                }
                None => o.bbox.area(),
            };
            if o.area != expected {
                return Err(SceneError::InvalidObject {
                    index,
                    reason: format!("area {} does not match {}", o.area, expected),
                });
            }
        }
        if let Some(m) = &merged_gt_mask {
            if m.frame() != frame {
                return Err(SceneError::MergedMaskFrame(
                    m.width(),
                    m.height(),
                    frame.width,
                    frame.height,
                ));
            }
        }
        Ok(Self {
            scene_id,
            frame,
            objects,
            merged_gt_mask,
        })
    }

    pub fn scene_id(&self) -> u64 {
        self.scene_id
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn merged_gt_mask(&self) -> Option<&BitMask> {
        self.merged_gt_mask.as_ref()
    }

    pub fn gt_boxes(&self) -> Vec<BBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.objects.iter().map(SceneObject::ground_truth).collect()
    }

    pub fn with_id(mut self, scene_id: u64) -> Self {
        self.scene_id = scene_id;
        self
    }
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    runs: Vec<[u64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct ObjectRepr {
    bbox: BBox,
    category: String,
    area: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<MaskRepr>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SceneRepr {
    scene_id: u64,
    width: u32,
    height: u32,
    objects: Vec<ObjectRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    merged_gt_mask: Option<MaskRepr>,
}

impl From<&Scene> for SceneRepr {
    fn from(s: &Scene) -> Self {
        let mask = |m: &BitMask| MaskRepr { runs: m.to_runs() };
        SceneRepr {
            scene_id: s.scene_id,
            width: s.frame.width,
            height: s.frame.height,
            objects: s
                .objects
                .iter()
                .map(|o| ObjectRepr {
                    bbox: o.bbox,
                    category: o.category.clone(),
                    area: o.area,
                    mask: o.instance_mask.as_ref().map(mask),
                })
                .collect(),
            merged_gt_mask: s.merged_gt_mask.as_ref().map(mask),
        }
    }
}

impl TryFrom<SceneRepr> for Scene {
    type Error = SceneError;

    fn try_from(r: SceneRepr) -> Result<Self, Self::Error> {
        let frame = Frame::new(r.width, r.height)?;
        let objects = r
            .objects
            .into_iter()
            .map(|o| {
                Ok(SceneObject {
                    bbox: o.bbox,
                    category: o.category,
                    area: o.area,
                    instance_mask: o.mask.map(|m| BitMask::from_runs(frame, &m.runs)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        let merged = r
            .merged_gt_mask
            .map(|m| BitMask::from_runs(frame, &m.runs))
            .transpose()?;
        Scene::new(r.scene_id, frame, objects, merged)
    }
}

impl Serialize for Scene {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SceneRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scene {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = SceneRepr::deserialize(d)?;
        Scene::try_from(repr).map_err(serde::de::Error::custom)
    }
}
