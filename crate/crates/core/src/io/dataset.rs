use std::fs;
use std::path::{Path, PathBuf};

use super::{load_pgm, GrayImage};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Aligned infrared/visible file pairs from `<root>/ir` and `<root>/vi`,
/// matched by file name and sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

fn pgm_names(dir: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

impl PairDataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let (ir_dir, vi_dir) = (root.join("ir"), root.join("vi"));
        let ir = pgm_names(&ir_dir)?;
        let vi = pgm_names(&vi_dir)?;
        if ir != vi {
            let missing = ir
                .iter()
                .filter(|n| !vi.contains(n))
                .chain(vi.iter().filter(|n| !ir.contains(n)))
                .next()
                .cloned()
                .unwrap_or_default();
            return Err(Error::Data(format!(
                "{}: ir/ and vi/ hold different file names (first unmatched: {missing})",
                root.display()
            )));
        }
        if ir.is_empty() {
            return Err(Error::Data(format!("{}: no .pgm pairs found", root.display())));
        }
        Ok(PairDataset {
            pairs: ir.iter().map(|n| (ir_dir.join(n), vi_dir.join(n))).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// File stem of pair `i`, used as the image id in reports.
    pub fn id(&self, i: usize) -> String {
        self.pairs[i]
            .0
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    /// Loads pair `i`, checking that both images have the same size.
    pub fn load(&self, i: usize) -> Result<(GrayImage, GrayImage)> {
        let (ir_path, vi_path) = &self.pairs[i];
        let ir = load_pgm(ir_path)?;
        let vi = load_pgm(vi_path)?;
        if (ir.width(), ir.height()) != (vi.width(), vi.height()) {
            return Err(Error::Data(format!(
                "{} is {}×{} but {} is {}×{}",
                ir_path.display(),
                ir.width(),
                ir.height(),
                vi_path.display(),
                vi.width(),
                vi.height()
            )));
        }
        Ok((ir, vi))
    }

    pub fn load_all(&self) -> Result<Vec<(GrayImage, GrayImage)>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

/// Grid crops at identical offsets in both images, shuffled by `seed`.
pub fn crop_patches(
    pair: &(GrayImage, GrayImage),
    size: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<(GrayImage, GrayImage)>> {
    let (ir, vi) = pair;
    if (ir.width(), ir.height()) != (vi.width(), vi.height()) {
        return Err(Error::Data("pair images differ in size".into()));
    }
    if size == 0 || stride == 0 {
        return Err(Error::Parameter(format!("patch size {size} and stride {stride} must be positive")));
    }
    if ir.width() < size || ir.height() < size {
        log::warn!(
            "{}×{} image is smaller than the {size}×{size} patch; no patches taken",
            ir.width(),
            ir.height()
        );
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for y in (0..=ir.height() - size).step_by(stride) {
        for x in (0..=ir.width() - size).step_by(stride) {
            out.push((ir.crop(x, y, size, size)?, vi.crop(x, y, size, size)?));
        }
    }
    Rng::new(seed).shuffle(&mut out);
    Ok(out)
}
