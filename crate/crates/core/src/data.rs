//! Paired fingerprint / vein samples: PGM (P5) reading and writing, directory
//! ingestion and the synthetic grid generator.
//!
//! Directory layout:
//!
//! ```text
//! root/<class>/fp/<name>.pgm
//! root/<class>/fv/<name>.pgm
//! ```
//!
//! Classes are labelled by sorted directory name; within a class the two
//! modalities are paired by identical file name.
//!
//! # Synthetic generator
//!
//! A grid of `a x b` classes; class `(i, j)` has label `i * b + j`. The
//! fingerprint depends only on the row `i` and the vein only on the column
//! `j`, so either modality alone pins down one grid coordinate and leaves the
//! other uniform, while the pair identifies the class.
//!
//! The clean pattern for index `k` of modality `m` (0 = fp, 1 = fv) is drawn
//! from `Rng::with_stream(textures_seed, (m << 32) | k)` in this order:
//! angle `t ~ U[0, pi)`, frequency `f ~ U[3, 7)`, phase `p ~ U[0, 2 pi)`, blob
//! centre `cy, cx ~ U[0.2, 0.8)`, blob radius `r ~ U[0.1, 0.25)`. With `y, x`
//! the pixel centre divided by the image height and width,
//!
//! ```text
//! v = 0.45 + 0.3 sin(2 pi f (x cos t + y sin t) + p) + 0.25 exp(-d^2 / (2 r^2))
//! d^2 = (y - cy)^2 + (x - cx)^2
//! ```
//!
//! Samples are produced class by class; for each sample every fingerprint
//! pixel then every vein pixel gets `noise_sigma * N(0, 1)` from the caller's
//! generator in raster order. Values are clamped to `[0, 1]` and quantized to
//! bytes, so a dataset written to disk reloads bit-identically.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    /// `(1, 1, h1, w1)` in `[0, 1]`.
    pub fp: Tensor<f32>,
    /// `(1, 1, h2, w2)` in `[0, 1]`.
    pub fv: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<PairedSample>,
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `[h, w]` of the fingerprint images (all samples share it).
    pub fn fp_size(&self) -> [usize; 2] {
        self.samples.first().map_or([0, 0], |s| [s.fp.dims().h, s.fp.dims().w])
    }

    pub fn fv_size(&self) -> [usize; 2] {
        self.samples.first().map_or([0, 0], |s| [s.fv.dims().h, s.fv.dims().w])
    }
}

/// An 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

/// Scales bytes by `1/255` into a `(1, 1, h, w)` tensor.
pub fn preprocess(img: &GrayImage) -> Result<Tensor<f32>> {
    let data = img.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new([1, 1, img.height, img.width], data)
}

/// Inverse of [`preprocess`] for values that came from bytes.
pub fn to_gray(t: &Tensor<f32>) -> Result<GrayImage> {
    let d = t.dims();
    if d.n != 1 || d.c != 1 {
        return Err(Error::Dimension(format!("expected a single-channel image, got {d}")));
    }
    let pixels = t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok(GrayImage { height: d.h, width: d.w, pixels })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses a binary PGM. `path` is only used to locate errors.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::NotP5 { path: path.into() });
    }
    let malformed = |reason: &str| Error::MalformedPgm { path: path.into(), reason: reason.into() };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if k == 0 && pos == 2 {
            return Err(Error::NotP5 { path: path.into() });
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text.parse().map_err(|_| malformed("bad header number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::MaxVal { path: path.into(), maxval });
    }
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing whitespace after maxval"));
    }
    let pixels = &bytes[pos + 1..];
    let want = width as usize * height as usize;
    if pixels.len() != want {
        return Err(malformed(&format!("expected {want} pixel bytes, found {}", pixels.len())));
    }
    Ok(GrayImage { height: height as usize, width: width as usize, pixels: pixels.to_vec() })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn pgm_names(dir: &Path) -> Result<Vec<String>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "pgm"))
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_string))
        .collect())
}

fn check_size(slot: &mut Option<(usize, usize)>, img: &GrayImage, path: &Path) -> Result<()> {
    let found = (img.height, img.width);
    match *slot {
        None => *slot = Some(found),
        Some(expected) if expected != found => {
            return Err(Error::InconsistentSize { path: path.into(), found, expected });
        }
        Some(_) => {}
    }
    Ok(())
}

/// Loads every class directory under `root`.
pub fn ingest_dir(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::EmptyClass { path: root.into() });
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut samples = Vec::new();
    let (mut fp_size, mut fv_size) = (None, None);
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string());
        let (fp_dir, fv_dir) = (dir.join("fp"), dir.join("fv"));
        let fp_names = if fp_dir.is_dir() { pgm_names(&fp_dir)? } else { Vec::new() };
        let fv_names = if fv_dir.is_dir() { pgm_names(&fv_dir)? } else { Vec::new() };
        if let Some(lonely) = fp_names.iter().find(|n| fv_names.binary_search(n).is_err()) {
            return Err(Error::Unpaired { path: fp_dir.join(lonely) });
        }
        if let Some(lonely) = fv_names.iter().find(|n| fp_names.binary_search(n).is_err()) {
            return Err(Error::Unpaired { path: fv_dir.join(lonely) });
        }
        if fp_names.is_empty() {
            return Err(Error::EmptyClass { path: dir.clone() });
        }
        for name in &fp_names {
            let (fp_path, fv_path) = (fp_dir.join(name), fv_dir.join(name));
            let fp = read_pgm(&fp_path)?;
            check_size(&mut fp_size, &fp, &fp_path)?;
            let fv = read_pgm(&fv_path)?;
            check_size(&mut fv_size, &fv, &fv_path)?;
            samples.push(PairedSample { fp: preprocess(&fp)?, fv: preprocess(&fv)?, label });
        }
    }
    Ok(Dataset { class_names, samples })
}

/// Writes `dataset` in the directory layout, numbering pairs within each
/// class as `0000.pgm`, `0001.pgm`, ...
pub fn write_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<usize> {
    let root = root.as_ref();
    let mut counters = vec![0usize; dataset.classes()];
    let mut files = 0;
    for s in &dataset.samples {
        let class_dir = root.join(&dataset.class_names[s.label]);
        let k = counters[s.label];
        counters[s.label] += 1;
        for (modality, img) in [("fp", &s.fp), ("fv", &s.fv)] {
            let dir = class_dir.join(modality);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_pgm(dir.join(format!("{k:04}.pgm")), &to_gray(img)?)?;
            files += 1;
        }
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// `[a, b]`: rows are fingerprint patterns, columns vein patterns.
    pub grid: [usize; 2],
    pub fp_size: [usize; 2],
    pub fv_size: [usize; 2],
    pub noise_sigma: f64,
    pub textures_seed: u64,
    pub samples_per_class: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            grid: [4, 4],
            fp_size: [64, 96],
            fv_size: [48, 80],
            noise_sigma: 0.1,
            textures_seed: 0,
            samples_per_class: 10,
        }
    }
}

impl SynthSpec {
    pub fn classes(&self) -> usize {
        self.grid[0] * self.grid[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.iter().any(|&g| g < 2) {
            return Err(Error::Config(format!("synth grid must be at least 2x2, got {:?}", self.grid)));
        }
        if self.fp_size.contains(&0) || self.fv_size.contains(&0) {
            return Err(Error::Config("synth image sizes must be positive".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// Noise-free pattern for grid index `index` of `modality` (0 = fp, 1 = fv).
pub fn clean_pattern(textures_seed: u64, modality: u64, index: usize, [h, w]: [usize; 2]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut rng = Rng::with_stream(textures_seed, (modality << 32) | index as u64);
    let angle = rng.uniform_in(0.0, PI);
    let freq = rng.uniform_in(3.0, 7.0);
    let phase = rng.uniform_in(0.0, TAU);
    let cy = rng.uniform_in(0.2, 0.8);
    let cx = rng.uniform_in(0.2, 0.8);
    let r = rng.uniform_in(0.1, 0.25);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut out = Vec::with_capacity(h * w);
    for yi in 0..h {
        let y = (yi as f64 + 0.5) / h as f64;
        for xi in 0..w {
            let x = (xi as f64 + 0.5) / w as f64;
            let d2 = (y - cy).powi(2) + (x - cx).powi(2);
            out.push(0.45 + 0.3 * (TAU * freq * (x * ca + y * sa) + phase).sin() + 0.25 * (-d2 / (2.0 * r * r)).exp());
        }
    }
    out
}

fn noisy_image(clean: &[f64], [h, w]: [usize; 2], sigma: f64, rng: &mut Rng) -> Result<Tensor<f32>> {
    let pixels = clean
        .iter()
        .map(|&v| {
            let noisy = if sigma > 0.0 { v + sigma * rng.normal() } else { v };
            (noisy.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    preprocess(&GrayImage { height: h, width: w, pixels })
}

/// Generates `samples_per_class` pairs for each grid class, class-major.
pub fn synth_generate(spec: &SynthSpec, rng: &mut Rng) -> Result<Dataset> {
    spec.validate()?;
    let [a, b] = spec.grid;
    let fp_patterns: Vec<Vec<f64>> = (0..a).map(|i| clean_pattern(spec.textures_seed, 0, i, spec.fp_size)).collect();
    let fv_patterns: Vec<Vec<f64>> = (0..b).map(|j| clean_pattern(spec.textures_seed, 1, j, spec.fv_size)).collect();
    let mut samples = Vec::with_capacity(a * b * spec.samples_per_class);
    for label in 0..a * b {
        let (i, j) = (label / b, label % b);
        for _ in 0..spec.samples_per_class {
            let fp = noisy_image(&fp_patterns[i], spec.fp_size, spec.noise_sigma, rng)?;
            let fv = noisy_image(&fv_patterns[j], spec.fv_size, spec.noise_sigma, rng)?;
            samples.push(PairedSample { fp, fv, label });
        }
    }
    let class_names = (0..a * b).map(|c| format!("c{c:02}")).collect();
    Ok(Dataset { class_names, samples })
}

/// Nearest-centroid classifier fitted on `train` and scored (CIR, percent)
/// on `test`. `features` picks the vector used for each sample.
pub fn nearest_centroid_cir(
    samples: &[PairedSample],
    classes: usize,
    train: &[usize],
    test: &[usize],
    features: impl Fn(&PairedSample) -> Vec<f64>,
) -> f64 {
    let dim = features(&samples[train[0]]).len();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for &i in train {
        let f = features(&samples[i]);
        counts[samples[i].label] += 1;
        for (s, v) in sums[samples[i].label].iter_mut().zip(f) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= c.max(1) as f64;
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let f = features(&samples[i]);
            let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..classes).min_by(|&x, &y| dist(&sums[x]).total_cmp(&dist(&sums[y]))).unwrap();
            best == samples[i].label
        })
        .count();
    100.0 * correct as f64 / test.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::make_split;

    fn tiny_spec() -> SynthSpec {
        SynthSpec { fp_size: [6, 8], fv_size: [5, 7], samples_per_class: 2, ..Default::default() }
    }

    #[test]
    fn preprocess_scaling() {
        let img = GrayImage { height: 1, width: 3, pixels: vec![0, 128, 255] };
        let t = preprocess(&img).unwrap();
        assert_eq!(t.data(), &[0.0, 128.0 / 255.0, 1.0]);
        assert_eq!(to_gray(&t).unwrap(), img);
        assert_eq!(preprocess(&to_gray(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let img = GrayImage { height: 2, width: 3, pixels: vec![0, 1, 2, 250, 255, 9] };
        let p = Path::new("x.pgm");
        assert_eq!(decode_pgm(&encode_pgm(&img), p).unwrap(), img);
        let mut with_comment = b"P5 # made by hand\n3 # width\n2\n255\n".to_vec();
        with_comment.extend_from_slice(&img.pixels);
        assert_eq!(decode_pgm(&with_comment, p).unwrap(), img);
    }

    #[test]
    fn pgm_errors_are_distinct() {
        let p = Path::new("bad.pgm");
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0", p), Err(Error::NotP5 { .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n65535\n\0\0", p), Err(Error::MaxVal { maxval: 65535, .. })));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\0", p), Err(Error::MalformedPgm { .. })));
        assert!(matches!(decode_pgm(b"P5\nx 2\n255\n\0", p), Err(Error::MalformedPgm { .. })));
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let spec = tiny_spec();
        let a = synth_generate(&spec, &mut Rng::new(4)).unwrap();
        let b = synth_generate(&spec, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 32);
        for c in 0..16 {
            assert_eq!(a.samples.iter().filter(|s| s.label == c).count(), 2);
        }
        assert!(a.samples.iter().all(|s| s.fp.data().iter().chain(s.fv.data()).all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn zero_noise_gives_identical_class_members() {
        let spec = SynthSpec { noise_sigma: 0.0, ..tiny_spec() };
        let d = synth_generate(&spec, &mut Rng::new(1)).unwrap();
        for pair in d.samples.chunks(2) {
            assert_eq!(pair[0].fp, pair[1].fp);
            assert_eq!(pair[0].fv, pair[1].fv);
        }
        // classes 0..3 share grid row 0, so share the fingerprint
        assert_eq!(d.samples[0].fp, d.samples[6].fp);
        assert_ne!(d.samples[0].fv, d.samples[6].fv);
        // classes 0 and 4 share column 0
        assert_eq!(d.samples[0].fv, d.samples[8].fv);
    }

    #[test]
    fn centroid_oracle_shows_unimodal_ambiguity() {
        let spec = SynthSpec::default();
        let d = synth_generate(&spec, &mut Rng::new(0)).unwrap();
        let plan = make_split(10, 16, 0).unwrap();
        let (train, test) = (plan.train(), plan.test());
        let fp_only = |s: &PairedSample| s.fp.data().iter().map(|&v| v as f64).collect();
        let fv_only = |s: &PairedSample| s.fv.data().iter().map(|&v| v as f64).collect();
        let both = |s: &PairedSample| s.fp.data().iter().chain(s.fv.data()).map(|&v| v as f64).collect();
        let fp = nearest_centroid_cir(&d.samples, 16, &train, &test, fp_only);
        let fv = nearest_centroid_cir(&d.samples, 16, &train, &test, fv_only);
        let joint = nearest_centroid_cir(&d.samples, 16, &train, &test, both);
        assert!(fp <= 30.0, "fp {fp}");
        assert!(fv <= 30.0, "fv {fv}");
        assert!(joint >= 95.0, "joint {joint}");
    }

    #[test]
    fn ingest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { grid: [2, 2], samples_per_class: 2, ..tiny_spec() };
        let d = synth_generate(&spec, &mut Rng::new(2)).unwrap();
        assert_eq!(write_dataset(&d, dir.path()).unwrap(), 16);
        let back = ingest_dir(dir.path()).unwrap();
        assert_eq!(back, d);

        fs::remove_file(dir.path().join("c01/fv/0001.pgm")).unwrap();
        match ingest_dir(dir.path()) {
            Err(Error::Unpaired { path }) => assert!(path.ends_with("c01/fp/0001.pgm")),
            other => panic!("{other:?}"),
        }
    }
}
