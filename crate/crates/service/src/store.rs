//! Projects, persisted as one directory each:
//! `image.png`, `palette.json`, `assignments.json`, `jobs.json`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use stitchwork_core::colorsplit::{self, ColorRegion, Palette, Rgb};
use stitchwork_core::{Error, Image, Result};

/// Palette parameters together with the palette they produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaletteState {
    pub max_colors: usize,
    pub tolerance: f32,
    pub palette: Palette,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionView {
    pub index: usize,
    pub color: Rgb,
    /// Per-row runs, alternating unset/set, each row starting with an unset run.
    pub mask_rle: Vec<Vec<u32>>,
    pub pixel_count: usize,
}

impl RegionView {
    pub fn from_region(r: &ColorRegion) -> Self {
        Self {
            index: r.index,
            color: r.color,
            mask_rle: r.mask.to_rle_rows(),
            pixel_count: r.pixel_count(),
        }
    }
}

#[derive(Debug)]
pub struct Project {
    pub id: String,
    pub image: Option<Image>,
    pub palette: Option<PaletteState>,
    /// Derived from `image` and `palette`; never persisted.
    pub regions: Vec<ColorRegion>,
    pub assignments: BTreeMap<usize, String>,
    pub jobs: Vec<String>,
    dir: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

impl Project {
    fn create(id: String, dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            id,
            image: None,
            palette: None,
            regions: Vec::new(),
            assignments: BTreeMap::new(),
            jobs: Vec::new(),
            dir,
        })
    }

    fn open(id: String, dir: PathBuf) -> Result<Self> {
        let image_path = dir.join("image.png");
        let image = if image_path.exists() { Some(Image::load(&image_path)?) } else { None };
        let palette: Option<PaletteState> = read_json(&dir.join("palette.json"))?;
        let assignments = read_json(&dir.join("assignments.json"))?.unwrap_or_default();
        let jobs = read_json(&dir.join("jobs.json"))?.unwrap_or_default();
        let regions = match (&image, &palette) {
            (Some(img), Some(p)) => colorsplit::split(img, &p.palette)?,
            _ => Vec::new(),
        };
        Ok(Self {
            id,
            image,
            palette,
            regions,
            assignments,
            jobs,
            dir,
        })
    }

    /// Replaces the image; palette, regions and assignments are dropped.
    pub fn set_image(&mut self, image: Image) -> Result<()> {
        image.save(self.dir.join("image.png"))?;
        self.image = Some(image);
        self.palette = None;
        self.regions.clear();
        self.assignments.clear();
        remove_if_present(&self.dir.join("palette.json"))?;
        remove_if_present(&self.dir.join("assignments.json"))
    }

    /// Recomputes the palette and regions; assignments are dropped.
    pub fn set_palette(&mut self, max_colors: usize, tolerance: f32) -> Result<()> {
        let image = self.image.as_ref().ok_or_else(|| Error::contract("no image uploaded"))?;
        let palette = colorsplit::quantize_palette(image, max_colors, tolerance)?;
        let regions = colorsplit::split(image, &palette)?;
        colorsplit::check_partition(&regions, image.height(), image.width())?;
        let state = PaletteState {
            max_colors,
            tolerance,
            palette,
        };
        write_json(&self.dir.join("palette.json"), &state)?;
        self.palette = Some(state);
        self.regions = regions;
        self.assignments.clear();
        remove_if_present(&self.dir.join("assignments.json"))
    }

    pub fn merge_assignments(&mut self, updates: BTreeMap<usize, String>) -> Result<()> {
        let mut next = self.assignments.clone();
        next.extend(updates);
        write_json(&self.dir.join("assignments.json"), &next)?;
        self.assignments = next;
        Ok(())
    }

    pub fn missing_regions(&self) -> Vec<usize> {
        (0..self.regions.len()).filter(|r| !self.assignments.contains_key(r)).collect()
    }

    pub fn add_job(&mut self, job_id: String) -> Result<()> {
        self.jobs.push(job_id);
        write_json(&self.dir.join("jobs.json"), &self.jobs)
    }

    pub fn region_views(&self) -> Vec<RegionView> {
        self.regions.iter().map(RegionView::from_region).collect()
    }
}

/// All projects, keyed by id. Each project is guarded by its own mutex so
/// mutations of one project are serialized.
pub struct Store {
    root: PathBuf,
    projects: RwLock<HashMap<String, Arc<Mutex<Project>>>>,
}

impl Store {
    /// Opens (or creates) `root` and loads every project directory in it.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let mut projects = HashMap::new();
        for entry in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
            let path = entry.map_err(|e| Error::io(&root, e))?.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
                continue;
            };
            if !path.is_dir() {
                continue;
            }
            match Project::open(id.clone(), path.clone()) {
                Ok(p) => {
                    projects.insert(id, Arc::new(Mutex::new(p)));
                }
                Err(e) => log::warn!("skipping unreadable project {}: {e}", path.display()),
            }
        }
        Ok(Self {
            root,
            projects: RwLock::new(projects),
        })
    }

    pub fn create(&self) -> Result<String> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let project = Project::create(id.clone(), self.root.join(&id))?;
        self.projects
            .write()
            .expect("project table poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(project)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<Project>>> {
        self.projects.read().expect("project table poisoned").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.projects.read().expect("project table poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flag() -> Image {
        Image::from_fn_rgb(6, 8, |_, x| if x < 3 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] }).unwrap()
    }

    #[test]
    fn state_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let store = Store::open(dir.path()).unwrap();
            let id = store.create().unwrap();
            let p = store.get(&id).unwrap();
            let mut p = p.lock().unwrap();
            p.set_image(flag()).unwrap();
            p.set_palette(4, 0.05).unwrap();
            p.merge_assignments([(0, "satin".to_string())].into()).unwrap();
            id
        };
        let store = Store::open(dir.path()).unwrap();
        let p = store.get(&id).unwrap();
        let p = p.lock().unwrap();
        assert_eq!(p.image.as_ref().unwrap(), &flag());
        assert_eq!(p.regions.len(), 2);
        assert_eq!(p.assignments.get(&0).map(String::as_str), Some("satin"));
        assert_eq!(p.missing_regions(), vec![1]);
    }

    #[test]
    fn new_palette_invalidates_assignments() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = store.create().unwrap();
        let p = store.get(&id).unwrap();
        let mut p = p.lock().unwrap();
        assert!(p.set_palette(4, 0.05).is_err());
        p.set_image(flag()).unwrap();
        p.set_palette(4, 0.05).unwrap();
        p.merge_assignments([(0, "a".to_string()), (1, "b".to_string())].into()).unwrap();
        assert!(p.missing_regions().is_empty());
        p.set_palette(1, 0.05).unwrap();
        assert!(p.assignments.is_empty());
        assert_eq!(p.missing_regions(), vec![0]);
    }
}
