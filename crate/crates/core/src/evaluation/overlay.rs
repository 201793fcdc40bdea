use std::io::{BufRead, Write};

use crate::detector::{DetectionSet, FrameImage, HandClass};
use crate::error::{Error, Result};

/// Box outline color per class: red, blue, green, cyan.
pub fn box_color(class: HandClass) -> [u8; 3] {
    match class {
        HandClass::MyLeft => [255, 0, 0],
        HandClass::MyRight => [0, 0, 255],
        HandClass::YourLeft => [0, 255, 0],
        HandClass::YourRight => [0, 255, 255],
    }
}

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize) -> Self {
        Rgb8Image {
            width,
            height,
            data: vec![0; 3 * width * height],
        }
    }

    /// A frame upscaled by an integer factor with nearest-neighbour sampling.
    pub fn from_frame(frame: &FrameImage, scale: usize) -> Self {
        let scale = scale.max(1);
        let (h, w) = (frame.height(), frame.width());
        let plane = h * w;
        let px = frame.pixels.data();
        let mut img = Rgb8Image::new(w * scale, h * scale);
        for y in 0..img.height {
            for x in 0..img.width {
                let src = (y / scale) * w + x / scale;
                for c in 0..3 {
                    img.data[3 * (y * img.width + x) + c] = (px[c * plane + src].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    /// Images stacked top to bottom with `gap` white rows between them.
    pub fn stack_vertical(images: &[Rgb8Image], gap: usize) -> Result<Rgb8Image> {
        let first = images.first().ok_or_else(|| Error::shape("stack_vertical", "no images"))?;
        if images.iter().any(|i| i.width != first.width) {
            return Err(Error::shape("stack_vertical", "images differ in width"));
        }
        let height = images.iter().map(|i| i.height).sum::<usize>() + gap * (images.len() - 1);
        let mut data = Vec::with_capacity(3 * first.width * height);
        for (n, img) in images.iter().enumerate() {
            if n > 0 {
                data.extend(std::iter::repeat(255u8).take(3 * first.width * gap));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Rgb8Image {
            width: first.width,
            height,
            data,
        })
    }
}

/// Outlines every box in its class color.
pub fn draw_boxes(img: &mut Rgb8Image, dets: &DetectionSet, thickness: usize) {
    let (w, h) = (img.width as f64, img.height as f64);
    for b in &dets.boxes {
        let Some(b) = b.clipped() else { continue };
        let color = box_color(b.class);
        let x0 = (b.left() * w).floor().max(0.0) as usize;
        let y0 = (b.top() * h).floor().max(0.0) as usize;
        let x1 = ((b.right() * w).ceil() as usize).clamp(x0 + 1, img.width) - 1;
        let y1 = ((b.bottom() * h).ceil() as usize).clamp(y0 + 1, img.height) - 1;
        for t in 0..thickness.max(1) {
            for x in x0..=x1 {
                img.set(x, y0 + t, color);
                img.set(x, y1.saturating_sub(t), color);
            }
            for y in y0..=y1 {
                img.set(x0 + t, y, color);
                img.set(x1.saturating_sub(t), y, color);
            }
        }
    }
}

/// Input frame, predictions drawn on the input frame, and predictions drawn
/// on the true future frame, top to bottom.
pub fn triptych(input: &FrameImage, predictions: &DetectionSet, future: &FrameImage, scale: usize) -> Result<Rgb8Image> {
    let plain = Rgb8Image::from_frame(input, scale);
    let mut now = plain.clone();
    draw_boxes(&mut now, predictions, 2);
    let mut later = Rgb8Image::from_frame(future, scale);
    draw_boxes(&mut later, predictions, 2);
    Rgb8Image::stack_vertical(&[plain, now, later], 4)
}

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(out: &mut impl Write, img: &Rgb8Image) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.data)?;
    Ok(())
}

fn header_token(input: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    loop {
        let mut byte = [0u8; 1];
        if input.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            input.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::Format("truncated PPM header".into()));
    }
    Ok(tok)
}

/// Reads a binary PPM with maxval 255.
pub fn read_ppm(input: &mut impl BufRead) -> Result<Rgb8Image> {
    if header_token(input)? != "P6" {
        return Err(Error::Format("not a P6 PPM".into()));
    }
    let mut num = || -> Result<usize> {
        header_token(input)?
            .parse()
            .map_err(|_| Error::Format("bad PPM header number".into()))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    let mut data = vec![0u8; 3 * width * height];
    input
        .read_exact(&mut data)
        .map_err(|_| Error::Format("truncated PPM payload".into()))?;
    Ok(Rgb8Image { width, height, data })
}
