use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unpaired domain file lists plus a seeded train/test split.
///
/// `train` and `test` index the combined list `domain_x ++ domain_y`, so an
/// index `i < domain_x.len()` is an X file and anything above is a Y file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domain_x: Vec<PathBuf>,
    pub domain_y: Vec<PathBuf>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// Optional per-file category labels (e.g. `"textual"`); informational only.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    X,
    Y,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.domain_x.len() + self.domain_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn file(&self, index: usize) -> Option<(Domain, &Path)> {
        if index < self.domain_x.len() {
            Some((Domain::X, &self.domain_x[index]))
        } else {
            self.domain_y
                .get(index - self.domain_x.len())
                .map(|p| (Domain::Y, p.as_path()))
        }
    }

    /// Training files of one domain, in manifest order.
    pub fn train_files(&self, domain: Domain) -> Vec<PathBuf> {
        let mut idx = self.train.clone();
        idx.sort_unstable();
        idx.into_iter()
            .filter_map(|i| self.file(i))
            .filter(|(d, _)| *d == domain)
            .map(|(_, p)| p.to_path_buf())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::invalid(format!("manifest index {i} out of range ({n} files)")));
            }
            if seen[i] {
                return Err(Error::invalid(format!("manifest index {i} appears twice")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("manifest index {missing} is in neither split")));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Number of training items for `n` files: `fraction·n` rounded up, except
/// that values within 1e-9 of an integer are taken as that integer.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let nearest = exact.round();
    let count = if (exact - nearest).abs() < 1e-9 { nearest } else { exact.ceil() };
    (count as usize).min(n)
}

/// Seeded shuffle of `0..n` split into `(train, test)`, each sorted.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} must be in (0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = train_count(n, train_fraction);
    let mut train = order[..k].to_vec();
    let mut test = order[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Lists both directories and splits the combined file set.
///
/// An empty test split is an error unless `allow_empty_test` is set.
pub fn build_manifest(
    dir_x: impl AsRef<Path>,
    dir_y: impl AsRef<Path>,
    train_fraction: f64,
    seed: u64,
    allow_empty_test: bool,
) -> Result<DatasetManifest> {
    let domain_x = list_pngs(&dir_x)?;
    let domain_y = list_pngs(&dir_y)?;
    for (dir, files) in [(dir_x.as_ref(), &domain_x), (dir_y.as_ref(), &domain_y)] {
        if files.is_empty() {
            return Err(Error::invalid(format!("no PNG images in {}", dir.display())));
        }
    }
    let (train, test) = split_indices(domain_x.len() + domain_y.len(), train_fraction, seed)?;
    if test.is_empty() && !allow_empty_test {
        return Err(Error::invalid(
            "test split is empty; lower the train fraction or allow an empty test split",
        ));
    }
    Ok(DatasetManifest {
        domain_x,
        domain_y,
        train,
        test,
        seed,
        tags: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_of_8668_files() {
        let (train, test) = split_indices(8668, 5693.0 / 8668.0, 1).unwrap();
        assert_eq!(train.len(), 5693);
        assert_eq!(test.len(), 2975);
    }

    #[test]
    fn rounding_goes_to_train() {
        assert_eq!(train_count(10, 0.55), 6);
        assert_eq!(train_count(3, 0.5), 2);
        assert_eq!(train_count(4, 1.0), 4);
    }

    #[test]
    fn bad_fraction() {
        assert!(split_indices(10, 0.0, 0).is_err());
        assert!(split_indices(10, 1.5, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_partition(n in 1usize..300, frac in 0.01f64..1.0, seed in any::<u64>()) {
            let (train, test) = split_indices(n, frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(split_indices(n, frac, seed).unwrap(), (train, test));
        }
    }
}
