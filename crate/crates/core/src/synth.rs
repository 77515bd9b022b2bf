//! Synthetic "gaming-like" reference clips and the parametric distortion
//! ladder that stands in for a codec bitrate ladder.
//!
//! A reference clip mixes a smooth gradient background, textured patches
//! that drift across the frame, flat hard-edged sprites and a static,
//! high-contrast overlay band along the top (a HUD surrogate). Distorted
//! versions are produced per frame by Gaussian blur, uniform quantization
//! and additive Gaussian noise, in that order, followed by clamping.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, mismatch, Result};
use crate::rng::{self, tag};

pub const MIN_FRAME_DIM: usize = 16;
pub const MAX_LEVEL: u8 = 5;

/// One luma raster, row-major, samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub luma: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, luma: Vec<f32>) -> Result<Self> {
        if width < MIN_FRAME_DIM || height < MIN_FRAME_DIM {
            return Err(invalid!(
                "frame {width}x{height} is below the {MIN_FRAME_DIM}x{MIN_FRAME_DIM} minimum"
            ));
        }
        if luma.len() != width * height {
            return Err(mismatch!(
                "luma length {} does not match {width}x{height}",
                luma.len()
            ));
        }
        if let Some(v) = luma
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(invalid!("luma sample {v} outside [0, 1]"));
        }
        Ok(Frame {
            width,
            height,
            luma,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Frame::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.luma[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.luma.iter().map(|&v| v as f64).collect()
    }
}

/// A sequence of frames sharing one content and one distortion level.
/// Level 0 is the pristine reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub content_id: u32,
    pub distortion_level: u8,
    pub frames: Vec<Frame>,
    pub mos_surrogate: Option<f64>,
}

impl Clip {
    pub fn new(content_id: u32, distortion_level: u8, frames: Vec<Frame>) -> Result<Self> {
        let clip = Clip {
            content_id,
            distortion_level,
            frames,
            mos_surrogate: None,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.distortion_level > MAX_LEVEL {
            return Err(invalid!(
                "distortion level {} > {MAX_LEVEL}",
                self.distortion_level
            ));
        }
        if self.frames.len() < 2 {
            return Err(invalid!(
                "clip needs at least 2 frames, got {}",
                self.frames.len()
            ));
        }
        let first = &self.frames[0];
        if self.frames.iter().any(|f| !f.same_dims(first)) {
            return Err(mismatch!(
                "frames of content {} differ in size",
                self.content_id
            ));
        }
        Ok(())
    }

    pub fn is_reference(&self) -> bool {
        self.distortion_level == 0
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }
}

/// Parameters for one rung of the distortion ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderLevel {
    pub blur_sigma: f64,
    pub quant_step: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderSpec {
    pub levels: [LadderLevel; 5],
}

impl LadderSpec {
    pub fn new(levels: [LadderLevel; 5]) -> Result<Self> {
        let spec = LadderSpec { levels };
        spec.validate()?;
        Ok(spec)
    }

    /// Ladder used for the training (source) domain.
    pub fn default_source() -> Self {
        Self::from_columns(
            [0.5, 0.8, 1.2, 1.8, 2.5],
            [1.0 / 64.0, 1.0 / 48.0, 1.0 / 32.0, 1.0 / 24.0, 1.0 / 16.0],
            [0.002, 0.004, 0.008, 0.012, 0.02],
        )
    }

    /// Noise-heavier, blur-lighter ladder for the shifted target domain.
    pub fn default_target() -> Self {
        Self::from_columns(
            [0.3, 0.5, 0.8, 1.1, 1.5],
            [1.0 / 48.0, 1.0 / 32.0, 1.0 / 24.0, 1.0 / 16.0, 1.0 / 12.0],
            [0.004, 0.008, 0.014, 0.02, 0.03],
        )
    }

    fn from_columns(blur: [f64; 5], quant: [f64; 5], noise: [f64; 5]) -> Self {
        let levels = std::array::from_fn(|i| LadderLevel {
            blur_sigma: blur[i],
            quant_step: quant[i],
            noise_sigma: noise[i],
        });
        LadderSpec { levels }
    }

    pub fn level(&self, level: u8) -> Result<&LadderLevel> {
        if !(1..=MAX_LEVEL).contains(&level) {
            return Err(invalid!("distortion level {level} outside 1..={MAX_LEVEL}"));
        }
        Ok(&self.levels[level as usize - 1])
    }

    /// Each component must either stay constant or increase strictly from
    /// one level to the next.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.levels.iter().enumerate() {
            let ok = l.blur_sigma.is_finite()
                && l.blur_sigma >= 0.0
                && l.quant_step > 0.0
                && l.quant_step <= 1.0
                && l.noise_sigma.is_finite()
                && l.noise_sigma >= 0.0;
            if !ok {
                return Err(invalid!(
                    "ladder level {} has out-of-range parameters {l:?}",
                    i + 1
                ));
            }
        }
        let columns: [(&str, fn(&LadderLevel) -> f64); 3] = [
            ("blur_sigma", |l| l.blur_sigma),
            ("quant_step", |l| l.quant_step),
            ("noise_sigma", |l| l.noise_sigma),
        ];
        for (name, get) in columns {
            let vals: Vec<f64> = self.levels.iter().map(get).collect();
            let constant = vals.windows(2).all(|w| w[0] == w[1]);
            let increasing = vals.windows(2).all(|w| w[0] < w[1]);
            if !constant && !increasing {
                return Err(invalid!(
                    "ladder column {name} is not strictly increasing: {vals:?}"
                ));
            }
        }
        Ok(())
    }
}

/// Knobs that distinguish the source and the shifted target domains.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorStyle {
    pub sprites: (usize, usize),
    pub textured_patches: (usize, usize),
    /// Texture spatial frequency range in cycles per pixel.
    pub texture_freq: (f64, f64),
    /// Overlay band height as a fraction of frame height.
    pub hud_fraction: f64,
    pub hud_contrast: f64,
    /// Maximum per-frame displacement in pixels.
    pub max_speed: f64,
}

impl GeneratorStyle {
    pub fn source() -> Self {
        GeneratorStyle {
            sprites: (2, 4),
            textured_patches: (1, 3),
            texture_freq: (0.04, 0.25),
            hud_fraction: 0.10,
            hud_contrast: 0.7,
            max_speed: 3.0,
        }
    }

    pub fn target() -> Self {
        GeneratorStyle {
            sprites: (5, 9),
            textured_patches: (2, 4),
            texture_freq: (0.06, 0.35),
            hud_fraction: 0.18,
            hud_contrast: 0.9,
            max_speed: 4.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn style(self) -> GeneratorStyle {
        match self {
            Domain::Source => GeneratorStyle::source(),
            Domain::Target => GeneratorStyle::target(),
        }
    }

    pub fn ladder(self) -> LadderSpec {
        match self {
            Domain::Source => LadderSpec::default_source(),
            Domain::Target => LadderSpec::default_target(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(invalid!(
                "unknown domain '{other}' (expected source|target)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
struct Patch {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    freq_x: f64,
    freq_y: f64,
    phase: f64,
    mean: f64,
    amp: f64,
    checker: bool,
}

#[derive(Debug, Clone)]
struct Sprite {
    x: f64,
    y: f64,
    r: f64,
    vx: f64,
    vy: f64,
    luma: f64,
    round: bool,
}

#[derive(Debug, Clone)]
struct Scene {
    width: usize,
    height: usize,
    bg: [f64; 4],
    patches: Vec<Patch>,
    sprites: Vec<Sprite>,
    hud_rows: usize,
    hud: Vec<f64>,
}

impl Scene {
    fn sample(width: usize, height: usize, style: &GeneratorStyle, rng: &mut impl Rng) -> Scene {
        let (w, h) = (width as f64, height as f64);
        let bg = [
            rng.random_range(0.15..0.55),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(0.0..std::f64::consts::TAU),
        ];
        let velocity = |rng: &mut dyn rand::RngCore| {
            let speed = rng.random_range(0.5..style.max_speed);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (speed * angle.cos(), speed * angle.sin())
        };
        let n_patches = rng.random_range(style.textured_patches.0..=style.textured_patches.1);
        let patches = (0..n_patches)
            .map(|_| {
                let (vx, vy) = velocity(rng);
                Patch {
                    x: rng.random_range(0.0..w),
                    y: rng.random_range(0.0..h),
                    w: rng.random_range(0.25..0.6) * w,
                    h: rng.random_range(0.25..0.6) * h,
                    vx,
                    vy,
                    freq_x: rng.random_range(style.texture_freq.0..style.texture_freq.1),
                    freq_y: rng.random_range(style.texture_freq.0..style.texture_freq.1),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    mean: rng.random_range(0.3..0.7),
                    amp: rng.random_range(0.1..0.3),
                    checker: rng.random_bool(0.4),
                }
            })
            .collect();
        let n_sprites = rng.random_range(style.sprites.0..=style.sprites.1);
        let sprites = (0..n_sprites)
            .map(|_| {
                let (vx, vy) = velocity(rng);
                Sprite {
                    x: rng.random_range(0.0..w),
                    y: rng.random_range(0.0..h),
                    r: rng.random_range(0.05..0.14) * w.min(h),
                    vx,
                    vy,
                    luma: if rng.random_bool(0.5) {
                        rng.random_range(0.0..0.2)
                    } else {
                        rng.random_range(0.8..1.0)
                    },
                    round: rng.random_bool(0.5),
                }
            })
            .collect();

        // Overlay band: dark strip with bright text-like blocks that never move.
        let hud_rows = ((style.hud_fraction * h).round() as usize).clamp(2, height / 2);
        let base = 0.5 - style.hud_contrast / 2.0;
        let bright = 0.5 + style.hud_contrast / 2.0;
        let mut hud = vec![base; hud_rows * width];
        let glyph = 4usize;
        let mut gx = 1;
        while gx + glyph < width {
            for gy in (1..hud_rows.saturating_sub(1)).step_by(glyph) {
                if rng.random_bool(0.45) {
                    for yy in gy..(gy + glyph - 1).min(hud_rows - 1) {
                        for xx in gx..gx + glyph - 1 {
                            hud[yy * width + xx] = bright;
                        }
                    }
                }
            }
            gx += glyph;
        }

        Scene {
            width,
            height,
            bg,
            patches,
            sprites,
            hud_rows,
            hud,
        }
    }

    fn render(&self, t: usize) -> Vec<f32> {
        let (w, h) = (self.width as f64, self.height as f64);
        let t = t as f64;
        let mut out = vec![0.0f32; self.width * self.height];
        for py in 0..self.height {
            for px in 0..self.width {
                let (x, y) = (px as f64, py as f64);
                if py < self.hud_rows {
                    out[py * self.width + px] = self.hud[py * self.width + px] as f32;
                    continue;
                }
                let [b0, bx, by, bphase] = self.bg;
                let mut v = b0
                    + bx * x / w
                    + by * y / h
                    + 0.08 * (std::f64::consts::TAU * x / w + bphase + 0.05 * t).sin();
                for p in &self.patches {
                    // Patch origin wraps around the frame as it moves.
                    let ox = (p.x + p.vx * t).rem_euclid(w);
                    let oy = (p.y + p.vy * t).rem_euclid(h);
                    let lx = (x - ox).rem_euclid(w);
                    let ly = (y - oy).rem_euclid(h);
                    if lx < p.w && ly < p.h {
                        let s = (std::f64::consts::TAU * p.freq_x * lx + p.phase).sin()
                            * (std::f64::consts::TAU * p.freq_y * ly).cos();
                        let tex = if p.checker { s.signum() } else { s };
                        v = p.mean + p.amp * tex;
                    }
                }
                for s in &self.sprites {
                    let cx = (s.x + s.vx * t).rem_euclid(w);
                    let cy = (s.y + s.vy * t).rem_euclid(h);
                    let dx = wrapped_delta(x, cx, w);
                    let dy = wrapped_delta(y, cy, h);
                    let inside = if s.round {
                        dx * dx + dy * dy <= s.r * s.r
                    } else {
                        dx.abs() <= s.r && dy.abs() <= s.r
                    };
                    if inside {
                        v = s.luma;
                    }
                }
                out[py * self.width + px] = v.clamp(0.0, 1.0) as f32;
            }
        }
        out
    }
}

fn wrapped_delta(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    if d > period / 2.0 {
        d - period
    } else {
        d
    }
}

fn check_geometry(frames: usize, width: usize, height: usize) -> Result<()> {
    if frames < 2 {
        return Err(invalid!("frames_per_clip must be >= 2, got {frames}"));
    }
    if width < MIN_FRAME_DIM || height < MIN_FRAME_DIM {
        return Err(invalid!(
            "frame size {width}x{height} is below the {MIN_FRAME_DIM}x{MIN_FRAME_DIM} minimum"
        ));
    }
    Ok(())
}

/// Pristine clips in the source domain with content ids `0..n_contents`.
pub fn generate_contents(
    seed: u64,
    n_contents: usize,
    frames_per_clip: usize,
    width: usize,
    height: usize,
) -> Result<Vec<Clip>> {
    generate_contents_styled(
        seed,
        0,
        n_contents,
        frames_per_clip,
        width,
        height,
        &GeneratorStyle::source(),
    )
}

/// Pristine clips with content ids `first_id..first_id + n_contents`.
pub fn generate_contents_styled(
    seed: u64,
    first_id: u32,
    n_contents: usize,
    frames_per_clip: usize,
    width: usize,
    height: usize,
    style: &GeneratorStyle,
) -> Result<Vec<Clip>> {
    if n_contents == 0 {
        return Err(invalid!("n_contents must be >= 1"));
    }
    check_geometry(frames_per_clip, width, height)?;
    (0..n_contents)
        .map(|i| {
            let content_id = first_id + i as u32;
            let mut rng = rng::stream(seed, &[tag::CONTENT, content_id as u64]);
            let scene = Scene::sample(width, height, style, &mut rng);
            let frames = (0..frames_per_clip)
                .map(|t| Frame {
                    width,
                    height,
                    luma: scene.render(t),
                })
                .collect();
            Ok(Clip {
                content_id,
                distortion_level: 0,
                frames,
                mos_surrogate: None,
            })
        })
        .collect()
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma == 0` is the
/// identity.
pub fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            tmp[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * row[clamp(x as isize + k as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(y as isize + k as isize - radius, height) * width + x])
                .sum();
        }
    }
    out
}

/// Applies ladder rung `level` to a reference clip. The noise stream is
/// keyed by `(seed, content_id, level)`.
pub fn distort(clip: &Clip, level: u8, ladder: &LadderSpec, seed: u64) -> Result<Clip> {
    if !clip.is_reference() {
        return Err(invalid!(
            "distort expects a reference clip, got level {}",
            clip.distortion_level
        ));
    }
    let params = *ladder.level(level)?;
    let noise = if params.noise_sigma > 0.0 {
        Some(Normal::new(0.0, params.noise_sigma).map_err(|e| invalid!("noise sigma: {e}"))?)
    } else {
        None
    };
    let mut rng = rng::stream(seed, &[tag::NOISE, clip.content_id as u64, level as u64]);
    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let blurred = gaussian_blur(&f.to_f64(), f.width, f.height, params.blur_sigma);
            let luma = blurred
                .into_iter()
                .map(|v| {
                    let mut q = (v / params.quant_step).round() * params.quant_step;
                    if let Some(n) = &noise {
                        q += n.sample(&mut rng);
                    }
                    q.clamp(0.0, 1.0) as f32
                })
                .collect();
            Frame {
                width: f.width,
                height: f.height,
                luma,
            }
        })
        .collect();
    Ok(Clip {
        content_id: clip.content_id,
        distortion_level: level,
        frames,
        mos_surrogate: None,
    })
}

/// All five distorted versions of `reference`, in level order.
pub fn distort_ladder(reference: &Clip, ladder: &LadderSpec, seed: u64) -> Result<Vec<Clip>> {
    (1..=MAX_LEVEL)
        .map(|level| distort(reference, level, ladder, seed))
        .collect()
}

pub fn mean_abs_deviation(a: &Clip, b: &Clip) -> Result<f64> {
    if a.frames.len() != b.frames.len() || !a.frames[0].same_dims(&b.frames[0]) {
        return Err(mismatch!("clips are not aligned"));
    }
    let (sum, n) = a
        .frames
        .iter()
        .zip(&b.frames)
        .flat_map(|(fa, fb)| fa.luma.iter().zip(&fb.luma))
        .fold((0.0, 0usize), |(s, n), (x, y)| {
            (s + (*x as f64 - *y as f64).abs(), n + 1)
        });
    Ok(sum / n as f64)
}

/// Maps a clip-mean MS-SSIM value onto the 1..5 opinion-score scale used
/// as a stand-in label for protocol testing.
pub fn mos_from_ms_ssim(ms_ssim: f64) -> f64 {
    1.0 + 4.0 * ms_ssim.clamp(0.0, 1.0)
}
