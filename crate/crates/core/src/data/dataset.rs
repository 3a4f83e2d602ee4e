use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{load_off, load_xyz};
use super::shapes::{gen_shape, ShapeFamily};
use crate::error::{Error, Result};
use crate::geometry::{normalize, PointCloud};
use crate::perturb::{mix_seed, rotate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    /// Unique across both splits of a dataset.
    pub id: u64,
    pub cloud: PointCloud,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<LabeledCloud>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for it in &self.items {
            h[it.label] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Balanced synthetic dataset over the first `classes` shape families,
/// split 80/20 within each class by a seeded shuffle.
pub fn make_dataset(
    classes: usize,
    per_class: usize,
    n_points: usize,
    seed: u64,
    random_pose: bool,
) -> Result<DatasetSplits> {
    if classes == 0 || classes > ShapeFamily::ALL.len() {
        return Err(Error::invalid(format!("class count must be in 1..={}, got {classes}", ShapeFamily::ALL.len())));
    }
    if per_class == 0 {
        return Err(Error::invalid("per-class count must be at least 1"));
    }
    let class_names: Vec<String> = ShapeFamily::ALL[..classes].iter().map(|f| f.name().to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = (per_class * 4).div_ceil(5).min(per_class);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, family) in ShapeFamily::ALL[..classes].iter().enumerate() {
        let mut items = Vec::with_capacity(per_class);
        for k in 0..per_class {
            let id = (label * per_class + k) as u64;
            let kind = family.random(&mut rng);
            let mut cloud = gen_shape(&kind, n_points, mix_seed(seed, id))?;
            if random_pose {
                cloud = normalize(&rotate(&cloud, mix_seed(seed ^ 0x5eed, id))?)?;
            }
            items.push(LabeledCloud { id, cloud, label });
        }
        items.shuffle(&mut rng);
        let rest = items.split_off(n_train);
        train.extend(items);
        test.extend(rest);
    }
    Ok(DatasetSplits {
        train: LabeledDataset { items: train, class_names: class_names.clone(), split: Split::Train },
        test: LabeledDataset { items: test, class_names, split: Split::Test },
    })
}

/// Reads `<root>/<class_name>/<split>/<item>.{off,xyz}`. Class labels follow
/// the sorted class-directory names; OFF meshes are sampled to `n_points`.
pub fn load_dataset_dir(root: impl AsRef<Path>, n_points: usize, seed: u64) -> Result<DatasetSplits> {
    let root = root.as_ref();
    let mut class_names: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    class_names.sort();
    if class_names.is_empty() {
        return Err(Error::invalid(format!("no class directories under {}", root.display())));
    }
    let mut next_id = 0u64;
    let mut read_split = |split: Split| -> Result<LabeledDataset> {
        let mut items = Vec::new();
        for (label, name) in class_names.iter().enumerate() {
            let dir = root.join(name).join(split.dir_name());
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<_> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("off" | "xyz")))
                .collect();
            files.sort();
            for path in files {
                let id = next_id;
                next_id += 1;
                let cloud = match path.extension().and_then(|x| x.to_str()) {
                    Some("off") => load_off(&path, n_points, mix_seed(seed, id))?,
                    _ => load_xyz(&path)?,
                };
                items.push(LabeledCloud { id, cloud: normalize(&cloud)?, label });
            }
        }
        Ok(LabeledDataset { items, class_names: class_names.clone(), split })
    };
    let train = read_split(Split::Train)?;
    let test = read_split(Split::Test)?;
    if train.is_empty() {
        return Err(Error::invalid(format!("no training items under {}", root.display())));
    }
    Ok(DatasetSplits { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_balance() {
        let ds = make_dataset(4, 50, 64, 1, false).unwrap();
        assert_eq!(ds.train.len(), 160);
        assert_eq!(ds.test.len(), 40);
        assert_eq!(ds.train.label_histogram(), vec![40; 4]);
        assert_eq!(ds.test.label_histogram(), vec![10; 4]);
        let mut ids: Vec<u64> = ds.train.items.iter().chain(&ds.test.items).map(|i| i.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 200);
    }

    #[test]
    fn seeded() {
        assert_eq!(make_dataset(3, 5, 32, 9, true).unwrap(), make_dataset(3, 5, 32, 9, true).unwrap());
    }

    #[test]
    fn too_many_classes() {
        assert!(make_dataset(7, 5, 32, 9, false).is_err());
    }

    #[test]
    fn directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        for (class, split, name, body) in [
            ("b_tri", "train", "x.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"),
            ("a_pts", "train", "y.xyz", "0 0 0\n1 1 1\n2 0 1\n"),
            ("a_pts", "test", "z.xyz", "0 0 0\n1 1 1\n"),
        ] {
            let d = dir.path().join(class).join(split);
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join(name), body).unwrap();
        }
        let ds = load_dataset_dir(dir.path(), 16, 0).unwrap();
        assert_eq!(ds.train.class_names, vec!["a_pts", "b_tri"]);
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.train.items[1].cloud.len(), 16);
        assert_eq!(ds.test.items[0].label, 0);
    }
}
