//! Synthetic shape/colour dataset and its on-disk layout.
//!
//! A split directory holds one `<id>.ppm` per image and an
//! `annotations.txt` with one line per image:
//! `image_id class x_min y_min x_max y_max`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::metrics::BoundingBox;
use crate::augment::{read_ppm, write_ppm, Image};
use crate::error::EvalError;
use crate::rng::stream;
use crate::tensor::Tensor;

pub const SHAPES: [&str; 4] = ["square", "circle", "triangle", "cross"];
pub const COLORS: [&str; 3] = ["red", "green", "blue"];
pub const MAX_CLASSES: usize = SHAPES.len() * COLORS.len();
pub const MIN_IMAGE_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub label: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Class `k` is shape `k % 4` in colour `k / 4`.
pub fn class_name(class: usize) -> String {
    format!("{}_{}", COLORS[class / SHAPES.len()], SHAPES[class % SHAPES.len()])
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn images(&self) -> Vec<Image> {
        self.samples.iter().map(|s| s.image.clone()).collect()
    }

    /// Highest label plus one.
    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }
}

/// Stacks same-sized images into an `N x 3 x H x W` tensor.
pub fn images_to_tensor<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor, EvalError> {
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut n = 0;
    for img in images {
        let d = (img.height(), img.width());
        if *dims.get_or_insert(d) != d {
            return Err(EvalError::Degenerate(format!(
                "image {n} is {}x{}, expected {}x{}",
                d.0,
                d.1,
                dims.unwrap().0,
                dims.unwrap().1
            )));
        }
        data.extend(img.to_planar());
        n += 1;
    }
    let (h, w) = dims.ok_or(EvalError::EmptyDataset)?;
    Ok(Tensor::from_vec(&[n, 3, h, w], data).expect("planar copies have 3*h*w values"))
}

pub fn generate_dataset(
    seed: u64,
    n_train: usize,
    n_test: usize,
    image_size: usize,
    n_classes: usize,
) -> Result<DatasetSplits, EvalError> {
    if n_classes == 0 || n_classes > MAX_CLASSES {
        return Err(EvalError::Degenerate(format!(
            "{n_classes} classes requested, supported range is 1..={MAX_CLASSES}"
        )));
    }
    if image_size < MIN_IMAGE_SIZE {
        return Err(EvalError::Degenerate(format!(
            "image size {image_size} below the minimum of {MIN_IMAGE_SIZE}"
        )));
    }
    if n_train < n_classes || n_test < n_classes {
        return Err(EvalError::Degenerate(format!(
            "splits of {n_train}/{n_test} images cannot cover {n_classes} classes"
        )));
    }
    let split = |tag: u64, n: usize, prefix: &str| Dataset {
        samples: (0..n)
            .map(|i| {
                let label = i % n_classes;
                let mut rng = stream(seed, &[tag, i as u64]);
                let (image, bbox) = render(image_size, label, &mut rng);
                Sample {
                    id: format!("{prefix}{i:06}"),
                    image,
                    label,
                    bbox,
                }
            })
            .collect(),
    };
    Ok(DatasetSplits {
        train: split(0, n_train, "train_"),
        test: split(1, n_test, "test_"),
    })
}

fn inside(shape: usize, u: f32, v: f32) -> bool {
    match shape {
        0 => (0.1..=0.9).contains(&u) && (0.1..=0.9).contains(&v),
        1 => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.45 * 0.45,
        2 => (0.1..=0.9).contains(&v) && (u - 0.5).abs() <= 0.45 * (v - 0.1) / 0.8,
        _ => (u - 0.5).abs() <= 0.16 || (v - 0.5).abs() <= 0.16,
    }
}

fn render<R: Rng>(size: usize, label: usize, rng: &mut R) -> (Image, BoundingBox) {
    const BASE: [[f32; 3]; 3] = [[0.85, 0.15, 0.15], [0.15, 0.75, 0.2], [0.15, 0.25, 0.85]];
    let shape = label % SHAPES.len();
    let color = label / SHAPES.len();

    // Low-saturation background: grey level, faint tint, stripes, noise.
    let gray: f32 = rng.random_range(0.3..0.7);
    let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::PI);
    let freq: f32 = rng.random_range(0.3..1.2);
    let (sa, ca) = angle.sin_cos();

    let side = rng.random_range(size * 2 / 5..=size * 3 / 4);
    let x0 = rng.random_range(1..=size - side - 1);
    let y0 = rng.random_range(1..=size - side - 1);
    let bright: f32 = rng.random_range(0.75..1.0);
    let fg: [f32; 3] = std::array::from_fn(|c| (BASE[color][c] + rng.random_range(-0.1..0.1)) * bright);

    let mut img = Image::black(size, size).expect("size >= 16");
    for y in 0..size {
        for x in 0..size {
            let u = (x as f32 + 0.5 - x0 as f32) / side as f32;
            let v = (y as f32 + 0.5 - y0 as f32) / side as f32;
            let hit = (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v) && inside(shape, u, v);
            let noise: f32 = rng.random_range(-0.05..0.05);
            let px = if hit {
                std::array::from_fn(|c| fg[c] + noise)
            } else {
                let stripe = 0.06 * ((x as f32 * ca + y as f32 * sa) * freq).sin();
                std::array::from_fn(|c| gray + tint[c] + stripe + noise)
            };
            // Quantise to 8 bits so the in-memory set equals its PPM copy.
            img.set_pixel(y, x, px.map(|v: f32| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0));
        }
    }
    let bbox = BoundingBox::ground_truth(
        x0 as f32,
        y0 as f32,
        (x0 + side) as f32,
        (y0 + side) as f32,
        label,
    );
    (img, bbox)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn format_annotations(ds: &Dataset) -> String {
    let mut out = String::new();
    for s in &ds.samples {
        let b = &s.bbox;
        let _ = writeln!(out, "{} {} {} {} {} {}", s.id, s.label, b.x_min, b.y_min, b.x_max, b.y_max);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub bbox: BoundingBox,
}

/// Parses annotation lines. Blank lines and lines starting with `#` are
/// skipped. Ids are restricted to `[A-Za-z0-9_.-]` and may not start with
/// a dot, so they are always safe file stems.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| EvalError::Annotation { line: line_no, msg };
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let id = fields[0];
        if id.starts_with('.') || !id.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c)) {
            return Err(err(format!("invalid image id `{id}`")));
        }
        let class: usize = fields[1].parse().map_err(|_| err(format!("bad class `{}`", fields[1])))?;
        let mut coords = [0f32; 4];
        for (k, f) in fields[2..].iter().enumerate() {
            coords[k] = f
                .parse::<f32>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad coordinate `{f}`")))?;
        }
        let [x_min, y_min, x_max, y_max] = coords;
        if !(x_max > x_min && y_max > y_min) {
            return Err(err("box has non-positive extent".into()));
        }
        out.push(Annotation {
            image_id: id.to_string(),
            bbox: BoundingBox::ground_truth(x_min, y_min, x_max, y_max, class),
        });
    }
    Ok(out)
}

pub fn write_split(ds: &Dataset, dir: impl AsRef<Path>) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in &ds.samples {
        write_ppm(&s.image, dir.join(format!("{}.ppm", s.id)))?;
    }
    let ann = dir.join("annotations.txt");
    fs::write(&ann, format_annotations(ds)).map_err(io_err(&ann))
}

/// Loads a split. Each annotated id must have exactly one line.
pub fn read_split(dir: impl AsRef<Path>) -> Result<Dataset, EvalError> {
    let dir = dir.as_ref();
    let ann = dir.join("annotations.txt");
    let text = fs::read_to_string(&ann).map_err(io_err(&ann))?;
    let mut samples = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for a in parse_annotations(&text)? {
        if !seen.insert(a.image_id.clone()) {
            return Err(EvalError::Annotation {
                line: samples.len() + 1,
                msg: format!("image `{}` annotated twice", a.image_id),
            });
        }
        let image = read_ppm(dir.join(format!("{}.ppm", a.image_id)))?;
        samples.push(Sample {
            id: a.image_id,
            label: a.bbox.class,
            image,
            bbox: a.bbox,
        });
    }
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(Dataset { samples })
}

pub fn write_dataset(splits: &DatasetSplits, root: impl AsRef<Path>) -> Result<(), EvalError> {
    let root = root.as_ref();
    write_split(&splits.train, root.join("train"))?;
    write_split(&splits.test, root.join("test"))
}

pub fn read_dataset(root: impl AsRef<Path>) -> Result<DatasetSplits, EvalError> {
    let root = root.as_ref();
    Ok(DatasetSplits {
        train: read_split(root.join("train"))?,
        test: read_split(root.join("test"))?,
    })
}
