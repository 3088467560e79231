//! Disk cache of teacher artifacts (latent tokens plus explicit maps), keyed
//! by video id and teacher hash so a changed teacher can never be silently
//! mixed with stale artifacts.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::nnkit::checkpoint;
use crate::nnkit::{Arr, ParamStore};
use crate::scenegen::{Modality, VideoTensor};
use crate::teacher4d::TeacherModel;
use crate::{P4dError, Result};

/// Teacher outputs for one video: latent tokens `(N'*h'*w', c')` and one map
/// `(N*H*W, ch)` per modality.
#[derive(Debug, Clone)]
pub struct TeacherArtifacts {
    pub latent_tokens: Array2<f64>,
    pub maps: Vec<(Modality, Array2<f64>)>,
    pub teacher_hash: String,
}

impl TeacherArtifacts {
    pub fn map(&self, m: Modality) -> &Array2<f64> {
        &self.maps.iter().find(|(mm, _)| *mm == m).unwrap().1
    }
}

pub struct TeacherCache {
    dir: PathBuf,
}

fn to2(a: Arr) -> Array2<f64> {
    let s = a.shape().to_vec();
    a.into_shape_with_order((s[0], s[1])).unwrap()
}

impl TeacherCache {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path_for(&self, video_id: &str, teacher_hash: &str) -> PathBuf {
        self.dir.join(format!("{video_id}-{}.ckpt", &teacher_hash[..16.min(teacher_hash.len())]))
    }

    /// Load cached artifacts or compute and persist them.
    pub fn artifacts(
        &self,
        teacher: &TeacherModel,
        video: &VideoTensor,
        video_id: &str,
    ) -> Result<TeacherArtifacts> {
        let hash = teacher
            .frozen_hash()
            .map(str::to_string)
            .unwrap_or_else(|| teacher.content_hash());
        let path = self.path_for(video_id, &hash);
        if path.exists() {
            let (section, store) = checkpoint::load(&path)?;
            if section != "teacher-artifacts" {
                return Err(P4dError::Checkpoint(format!(
                    "{} has section `{section}`, expected teacher artifacts",
                    path.display()
                )));
            }
            let latent_tokens = to2(store.value("latent").clone());
            let maps = Modality::all()
                .into_iter()
                .map(|m| (m, to2(store.value(&format!("p.{}", m.name())).clone())))
                .collect();
            return Ok(TeacherArtifacts { latent_tokens, maps, teacher_hash: hash });
        }

        let latent = teacher.teacher_encode(video, video_id)?;
        let s = latent.values.shape();
        let latent_tokens = latent
            .values
            .clone()
            .into_shape_with_order((s[0] * s[1] * s[2], s[3]))
            .unwrap();
        let mut maps = Vec::with_capacity(4);
        let mut store = ParamStore::new();
        store.add("latent", latent_tokens.clone().into_dyn())?;
        for m in Modality::all() {
            let decoded = teacher.teacher_decode(&latent, m)?;
            let d = decoded.shape();
            let rows = decoded
                .clone()
                .into_shape_with_order((d[0] * d[1] * d[2], d[3]))
                .unwrap();
            store.add(&format!("p.{}", m.name()), rows.clone().into_dyn())?;
            maps.push((m, rows));
        }
        checkpoint::save(&path, "teacher-artifacts", &store)?;
        Ok(TeacherArtifacts { latent_tokens, maps, teacher_hash: hash })
    }
}
