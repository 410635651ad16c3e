//! Seeded synthetic image-text corpus.
//!
//! Each class is a colored glyph shape scattered over a noisy water-like
//! background. On top sits one small marker in a cell of a 4 × 4 grid; the
//! cell differs from image to image within a class, so every caption names
//! something visible that sets its image apart. Ground-truth captions come
//! from per-class templates followed by the marker's place. Generated
//! descriptions mix signal words with keywords drawn from a noise pool: one
//! image-level description plus one short fragment per glyph and for the
//! marker standing in for instance-level captions.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{encode_ppm, quantize};
use super::manifest::{save_manifest, ImageRef, InlineImage, ManifestRecord};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
    Bar,
    Dots,
}

impl Shape {
    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
            Shape::Diamond => "diamond",
            Shape::Bar => "stripe",
            Shape::Dots => "dots",
        }
    }

    /// Whether offset `(dx, dy)` from the glyph center, in units of its
    /// half-size, is inked.
    fn covers(self, dx: f64, dy: f64) -> bool {
        let r2 = dx * dx + dy * dy;
        match self {
            Shape::Circle => r2 <= 1.0,
            Shape::Square => dx.abs() <= 0.85 && dy.abs() <= 0.85,
            Shape::Triangle => dy <= 0.9 && dy >= -0.9 && dx.abs() <= (dy + 0.9) / 1.8,
            Shape::Cross => (dx.abs() <= 0.4 && dy.abs() <= 1.0) || (dy.abs() <= 0.4 && dx.abs() <= 1.0),
            Shape::Ring => (0.45..=1.0).contains(&r2),
            Shape::Diamond => dx.abs() + dy.abs() <= 1.0,
            Shape::Bar => dy.abs() <= 0.35 && dx.abs() <= 1.0,
            Shape::Dots => {
                let (fx, fy) = ((dx + 1.0) * 1.5, (dy + 1.0) * 1.5);
                let (cx, cy) = (fx.floor() + 0.5, fy.floor() + 0.5);
                dx.abs() <= 1.0 && dy.abs() <= 1.0 && (fx - cx).powi(2) + (fy - cy).powi(2) <= 0.12
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub color_name: String,
    pub rgb: [f64; 3],
    pub shape: Shape,
    /// Caption templates; `{name}`, `{color}` and `{shape}` are substituted.
    pub templates: Vec<String>,
}

impl ClassSpec {
    pub fn caption(&self, template: &str) -> String {
        template
            .replace("{name}", &self.name)
            .replace("{color}", &self.color_name)
            .replace("{shape}", self.shape.word())
    }

    /// Words tied to this class: name, color and shape.
    pub fn signal_words(&self) -> Vec<String> {
        vec![
            self.name.clone(),
            self.color_name.clone(),
            self.shape.word().to_string(),
        ]
    }
}

/// The small object whose grid cell identifies an image within its class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub name: String,
    pub color_name: String,
    pub rgb: [f64; 3],
    pub shape: Shape,
}

impl MarkerSpec {
    pub fn phrase(&self) -> String {
        format!("{} {}", self.color_name, self.name)
    }
}

impl Default for MarkerSpec {
    fn default() -> Self {
        MarkerSpec {
            name: "stone".into(),
            color_name: "black".into(),
            rgb: [0.02, 0.02, 0.02],
            shape: Shape::Square,
        }
    }
}

/// Side of the marker grid.
pub const GRID: usize = 4;
pub const ROW_WORDS: [&str; GRID] = ["top", "upper", "lower", "bottom"];
pub const COLUMN_WORDS: [&str; GRID] = ["leftmost", "left", "right", "rightmost"];

/// `"upper right"` for the cell in row 1, column 2 (cells are row-major).
pub fn cell_words(cell: usize) -> String {
    format!("{} {}", ROW_WORDS[cell / GRID], COLUMN_WORDS[cell % GRID])
}

/// The grid word naming the mirrored row (vertical flip) or column
/// (horizontal flip); `None` for words that are not grid words.
pub fn mirror_word(word: &str, horizontal: bool, vertical: bool) -> Option<&'static str> {
    let mirror = |table: &[&'static str; GRID], on: bool| {
        table
            .iter()
            .position(|w| *w == word)
            .map(|i| if on { table[GRID - 1 - i] } else { table[i] })
    };
    mirror(&ROW_WORDS, vertical).or_else(|| mirror(&COLUMN_WORDS, horizontal))
}

pub const DEFAULT_TEMPLATES: [&str; 3] = [
    "an image of a {name}",
    "an image of a {color} {name}",
    "an image of a {name} with {color} {shape} marks",
];

pub const NOISE_KEYWORDS: [&str; 16] = [
    "boat", "camera", "blurry", "diver", "bubbles", "shadow", "sunlight", "murky", "surface",
    "rope", "anchor", "plastic", "tripod", "flash", "lens", "wave",
];

/// Eight built-in classes; `num_classes` takes a prefix.
pub fn default_classes() -> Vec<ClassSpec> {
    let table: [(&str, &str, [f64; 3], Shape); 8] = [
        ("coral", "red", [0.85, 0.15, 0.15], Shape::Circle),
        ("turtle", "green", [0.15, 0.75, 0.2], Shape::Square),
        ("jellyfish", "violet", [0.65, 0.3, 0.9], Shape::Triangle),
        ("urchin", "white", [0.95, 0.95, 0.95], Shape::Cross),
        ("starfish", "orange", [0.95, 0.5, 0.1], Shape::Diamond),
        ("shark", "grey", [0.55, 0.55, 0.55], Shape::Bar),
        ("octopus", "pink", [0.95, 0.45, 0.7], Shape::Ring),
        ("seahorse", "yellow", [0.95, 0.85, 0.1], Shape::Dots),
    ];
    table
        .iter()
        .map(|(name, color, rgb, shape)| ClassSpec {
            name: name.to_string(),
            color_name: color.to_string(),
            rgb: *rgb,
            shape: *shape,
            templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassSpec>,
    pub num_pairs: usize,
    pub image_side: usize,
    pub patch_size: usize,
    pub min_glyphs: usize,
    pub max_glyphs: usize,
    /// Half-size range of class glyphs, as a fraction of the image side.
    pub glyph_size: (f64, f64),
    /// `None` leaves images unmarked and captions without a place.
    pub marker: Option<MarkerSpec>,
    /// Half-size of the marker, as a fraction of a grid cell.
    pub marker_size: f64,
    /// Noise keywords injected into each generated description.
    pub noise_per_description: usize,
    pub noise_pool: Vec<String>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(num_classes: usize, num_pairs: usize, seed: u64) -> Self {
        Self {
            classes: default_classes().into_iter().take(num_classes).collect(),
            num_pairs,
            image_side: 64,
            patch_size: 8,
            min_glyphs: 2,
            max_glyphs: 4,
            glyph_size: (0.1, 1.0 / 6.0),
            marker: Some(MarkerSpec::default()),
            marker_size: 0.35,
            noise_per_description: 2,
            noise_pool: NOISE_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            seed,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            side: self.image_side,
            glyphs: (self.min_glyphs, self.max_glyphs),
            glyph_size: self.glyph_size,
            marker_size: self.marker_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("synthetic spec needs at least one class".into()));
        }
        if let Some(c) = self.classes.iter().find(|c| c.templates.is_empty()) {
            return Err(Error::Config(format!("class {} has no caption template", c.name)));
        }
        if self.patch_size == 0 || self.image_side % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_side {} is not divisible by patch_size {}",
                self.image_side, self.patch_size
            )));
        }
        if self.image_side < 2 * GRID {
            return Err(Error::Config(format!("image_side must be at least {}", 2 * GRID)));
        }
        if self.min_glyphs == 0 || self.min_glyphs > self.max_glyphs {
            return Err(Error::Config("need 1 <= min_glyphs <= max_glyphs".into()));
        }
        let (lo, hi) = self.glyph_size;
        if !(lo > 0.0 && lo < hi && hi < 0.5) {
            return Err(Error::Config("glyph_size must satisfy 0 < min < max < 0.5".into()));
        }
        if !(self.marker_size > 0.0 && self.marker_size <= 0.5) {
            return Err(Error::Config("marker_size must be in (0, 0.5]".into()));
        }
        if self.noise_per_description > 0 && self.noise_pool.is_empty() {
            return Err(Error::Config("noise_pool is empty".into()));
        }
        Ok(())
    }
}

/// One generated pair: the manifest record and its (8-bit quantized) image.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub record: ManifestRecord,
    pub image: Tensor,
    pub class: usize,
    /// Grid cell of the marker, if any.
    pub cell: Option<usize>,
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Everything about an image's composition other than its content.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub side: usize,
    /// Inclusive range of the class glyph count.
    pub glyphs: (usize, usize),
    pub glyph_size: (f64, f64),
    pub marker_size: f64,
}

impl Layout {
    /// The default spec's layout at `side` pixels.
    pub fn with_side(side: usize) -> Self {
        Layout {
            side,
            ..SyntheticSpec::new(1, 1, 0).layout()
        }
    }
}

fn stamp(data: &mut [f64], side: usize, rng: &mut ChaCha8Rng, center: (f64, f64), half: f64, shape: Shape, rgb: [f64; 3]) {
    let (cx, cy) = center;
    let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
    let y0 = (cy - half).floor().max(0.0) as usize;
    let x0 = (cx - half).floor().max(0.0) as usize;
    let (y1, x1) = (((cy + half).ceil() as usize).min(side), ((cx + half).ceil() as usize).min(side));
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = (x as f64 + 0.5 - cx) / half;
            let dy = (y as f64 + 0.5 - cy) / half;
            if shape.covers(dx, dy) {
                let i = (y * side + x) * 3;
                for c in 0..3 {
                    data[i + c] = rgb[c] + jitter[c];
                }
            }
        }
    }
}

/// Render one image of `class`, with `marker` drawn on top in grid `cell`;
/// deterministic in its arguments.
pub fn render_image(
    class: &ClassSpec,
    class_index: usize,
    marker: Option<(&MarkerSpec, usize)>,
    seed: u64,
    layout: &Layout,
) -> Tensor {
    render_counted(class, class_index, marker, seed, layout).0
}

/// [`render_image`] plus the number of class glyphs drawn.
pub fn render_counted(
    class: &ClassSpec,
    class_index: usize,
    marker: Option<(&MarkerSpec, usize)>,
    seed: u64,
    layout: &Layout,
) -> (Tensor, usize) {
    let side = layout.side;
    let mut rng = sample_rng(seed, u64::MAX - class_index as u64);
    let mut data = vec![0.0; side * side * 3];
    // background: vertical blue-green gradient plus pixel noise
    for y in 0..side {
        let t = y as f64 / side as f64;
        for x in 0..side {
            let i = (y * side + x) * 3;
            let n: f64 = rng.random_range(-0.06..0.06);
            data[i] = 0.05 + 0.05 * t + n;
            data[i + 1] = 0.35 - 0.15 * t + n;
            data[i + 2] = 0.55 - 0.2 * t + n;
        }
    }
    let count = rng.random_range(layout.glyphs.0..=layout.glyphs.1);
    let s = side as f64;
    for _ in 0..count {
        let half = rng.random_range(s * layout.glyph_size.0..s * layout.glyph_size.1);
        let center = (rng.random_range(half..s - half), rng.random_range(half..s - half));
        stamp(&mut data, side, &mut rng, center, half, class.shape, class.rgb);
    }
    if let Some((m, cell)) = marker {
        let step = s / GRID as f64;
        let half = step * layout.marker_size;
        let slack = step / 2.0 - half;
        let center = (
            (cell % GRID) as f64 * step + step / 2.0 + rng.random_range(-slack..=slack),
            (cell / GRID) as f64 * step + step / 2.0 + rng.random_range(-slack..=slack),
        );
        stamp(&mut data, side, &mut rng, center, half, m.shape, m.rgb);
    }
    let img = Tensor::new(vec![side, side, 3], data).expect("side² × 3 values");
    (quantize(&img), count)
}

/// Marker cell per pair: within a class, cells are dealt from a seeded
/// shuffle so they only repeat once all of them are used.
pub fn cell_assignment(spec: &SyntheticSpec) -> Vec<Option<usize>> {
    if spec.marker.is_none() {
        return vec![None; spec.num_pairs];
    }
    let k = spec.classes.len();
    let orders: Vec<Vec<usize>> = (0..k)
        .map(|c| {
            let mut rng = sample_rng(spec.seed, u64::MAX / 2 + c as u64);
            let mut order: Vec<usize> = (0..GRID * GRID).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    (0..spec.num_pairs)
        .map(|i| {
            let order = &orders[i % k];
            Some(order[(i / k) % order.len()])
        })
        .collect()
}

/// Generate the corpus in memory.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    let k = spec.classes.len();
    let cells = cell_assignment(spec);
    (0..spec.num_pairs)
        .map(|i| {
            let class = i % k;
            let cls = &spec.classes[class];
            let marker = spec.marker.as_ref().zip(cells[i]);
            let mut rng = sample_rng(spec.seed, i as u64);
            let image_seed: u64 = rng.random();
            let template = cls.templates.choose(&mut rng).expect("validated non-empty");
            let place = marker.map(|(m, cell)| format!("a {} in the {} cell", m.phrase(), cell_words(cell)));
            let caption_gt = match &place {
                Some(p) => format!("{} and {p}", cls.caption(template)),
                None => cls.caption(template),
            };
            let noise = |rng: &mut ChaCha8Rng| -> Vec<String> {
                (0..spec.noise_per_description)
                    .map(|_| spec.noise_pool.choose(rng).expect("validated").clone())
                    .collect()
            };
            let n = noise(&mut rng);
            let mut captions_gen = vec![format!(
                "a {} {} {} seen with {}",
                cls.color_name,
                cls.shape.word(),
                cls.name,
                n.join(" and ")
            )];
            let (image, glyphs) = render_counted(cls, class, marker, image_seed, &spec.layout());
            for _ in 0..glyphs {
                let n = noise(&mut rng);
                captions_gen.push(format!(
                    "{} {} near the {}",
                    cls.color_name,
                    cls.shape.word(),
                    n.join(" ")
                ));
            }
            if let Some(p) = &place {
                let n = noise(&mut rng);
                captions_gen.push(format!("{p} near the {}", n.join(" ")));
            }
            let id = format!("syn-{i:06}");
            Ok(SyntheticSample {
                record: ManifestRecord {
                    image: ImageRef::Path(format!("images/{id}.ppm")),
                    id,
                    caption_gt,
                    captions_gen,
                    label: Some(cls.name.clone()),
                    keywords_kept: None,
                    caption_enriched: None,
                    extra: Default::default(),
                },
                image,
                class,
                cell: cells[i],
            })
        })
        .collect()
}

/// Same corpus with inline image references instead of files. Inline images
/// are re-rendered with the built-in class table, marker and layout.
pub fn generate_inline(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    let mut samples = generate(spec)?;
    for (i, s) in samples.iter_mut().enumerate() {
        let mut rng = sample_rng(spec.seed, i as u64);
        let seed: u64 = rng.random();
        s.record.image = ImageRef::Inline {
            synthetic: InlineImage {
                class: s.class,
                seed,
                side: spec.image_side,
                cell: s.cell,
            },
        };
    }
    Ok(samples)
}

/// Write `manifest.jsonl` and `images/*.ppm` under `out_dir`.
pub fn write_corpus(spec: &SyntheticSpec, out_dir: &Path) -> Result<Vec<SyntheticSample>> {
    let samples = generate(spec)?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for s in &samples {
        let path = out_dir.join(match &s.record.image {
            ImageRef::Path(p) => p,
            ImageRef::Inline { .. } => unreachable!("generate writes paths"),
        });
        let bytes = encode_ppm(&s.image)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let records: Vec<ManifestRecord> = samples.iter().map(|s| s.record.clone()).collect();
    save_manifest(out_dir.join("manifest.jsonl"), &records)?;
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let spec = SyntheticSpec::new(4, 12, 7);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn one_class_one_template_gives_constant_captions() {
        let mut spec = SyntheticSpec::new(1, 5, 1);
        spec.classes[0].templates = vec!["a {color} {name}".into()];
        spec.marker = None;
        let out = generate(&spec).unwrap();
        assert!(out.iter().all(|s| s.record.caption_gt == "a red coral"));
    }

    #[test]
    fn descriptions_carry_signal_and_noise() {
        let spec = SyntheticSpec::new(2, 4, 3);
        for s in generate(&spec).unwrap() {
            let cls = &spec.classes[s.class];
            let joined = s.record.captions_gen.join(" ");
            assert!(joined.contains(&cls.name));
            assert!(spec.noise_pool.iter().any(|n| joined.contains(n.as_str())));
            assert!(s.record.captions_gen.len() >= 2 + spec.min_glyphs);
        }
    }

    #[test]
    fn cells_cover_the_grid_before_repeating() {
        let spec = SyntheticSpec::new(4, 64, 11);
        let out = generate(&spec).unwrap();
        for c in 0..4 {
            let mut cells: Vec<usize> = out.iter().filter(|s| s.class == c).map(|s| s.cell.unwrap()).collect();
            cells.sort_unstable();
            assert_eq!(cells, (0..GRID * GRID).collect::<Vec<_>>());
        }
        let captions: std::collections::HashSet<String> = out
            .iter()
            .map(|s| {
                let cls = &spec.classes[s.class];
                s.record.caption_gt.replace(&cls.color_name, "").replace(cls.shape.word(), "")
            })
            .collect();
        assert!(captions.len() >= 64 - 2 * 16);
        assert_eq!(cell_words(6), "upper right");
    }

    #[test]
    fn marker_lands_in_its_cell() {
        let layout = Layout::with_side(32);
        let cls = &default_classes()[0];
        let m = MarkerSpec::default();
        for cell in [0, 5, 15] {
            let img = render_image(cls, 0, Some((&m, cell)), 3, &layout);
            let plain = render_image(cls, 0, None, 3, &layout);
            let step = 32 / GRID;
            let (r, c) = (cell / GRID, cell % GRID);
            for y in 0..32 {
                for x in 0..32 {
                    let i = (y * 32 + x) * 3;
                    if img.data()[i..i + 3] != plain.data()[i..i + 3] {
                        assert_eq!((y / step, x / step), (r, c), "pixel ({y}, {x})");
                    }
                }
            }
        }
    }

    #[test]
    fn mirrored_words_name_the_flipped_cell() {
        for cell in 0..GRID * GRID {
            let (r, c) = (cell / GRID, cell % GRID);
            let words = cell_words(cell);
            let (row, col) = words.split_once(' ').unwrap();
            let flipped = format!(
                "{} {}",
                mirror_word(row, true, true).unwrap(),
                mirror_word(col, true, true).unwrap()
            );
            assert_eq!(flipped, cell_words((GRID - 1 - r) * GRID + GRID - 1 - c));
            assert_eq!(mirror_word(row, true, false), Some(ROW_WORDS[r]));
        }
        assert_eq!(mirror_word("coral", true, true), None);
    }

    #[test]
    fn images_are_quantized_and_in_range() {
        let spec = SyntheticSpec::new(3, 3, 0);
        for s in generate(&spec).unwrap() {
            assert_eq!(s.image.shape(), &[64, 64, 3]);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(quantize(&s.image), s.image);
        }
    }

    #[test]
    fn inline_images_match_rendered() {
        let spec = SyntheticSpec::new(2, 3, 5);
        let inline = generate_inline(&spec).unwrap();
        for s in &inline {
            let ImageRef::Inline { synthetic } = &s.record.image else {
                panic!("expected inline")
            };
            let marker = spec.marker.as_ref().zip(synthetic.cell);
            let img = render_image(
                &spec.classes[synthetic.class],
                synthetic.class,
                marker,
                synthetic.seed,
                &Layout::with_side(synthetic.side),
            );
            assert_eq!(img, s.image);
        }
    }
}
