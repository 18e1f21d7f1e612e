//! KITTI depth PNGs: 16-bit grayscale, depth in meters times 256, 0 for no data.
//! Also 8-bit RGB images for the CLI.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use super::{DataError, Rgb};
use crate::depth::DepthMap;

/// Stored value for a valid depth; never 0, so validity survives the roundtrip.
fn stored(depth: f64) -> u16 {
    (depth * 256.0).round().clamp(1.0, 65535.0) as u16
}

pub fn encode_kitti_png(map: &DepthMap) -> Result<Vec<u8>, DataError> {
    let mut raw = Vec::with_capacity(map.depth.len() * 2);
    for (&d, &v) in map.depth.iter().zip(&map.valid) {
        let s = if v { stored(d) } else { 0 };
        raw.extend_from_slice(&s.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, map.width as u32, map.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&raw).map_err(png_err)?;
    }
    Ok(out)
}

pub fn decode_kitti_png(bytes: &[u8]) -> Result<DepthMap, DataError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Sixteen {
        return Err(DataError::Format(format!(
            "expected 16-bit grayscale, found {color:?} at {depth:?}"
        )));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut map = DepthMap::invalid(h, w);
    for i in 0..h * w {
        let s = u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]);
        if s > 0 {
            map.depth[i] = s as f64 / 256.0;
            map.valid[i] = true;
        }
    }
    Ok(map)
}

pub fn write_kitti_png(map: &DepthMap, path: &Path) -> Result<(), DataError> {
    let bytes = encode_kitti_png(map)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_kitti_png(path: &Path) -> Result<DepthMap, DataError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_kitti_png(&bytes)
}

pub fn write_rgb_png(image: &Rgb, path: &Path) -> Result<(), DataError> {
    let plane = image.height * image.width;
    let mut raw = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for ch in 0..3 {
            raw.push((image.values[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let f = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(f, image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&raw).map_err(png_err)?;
    Ok(())
}

/// Reads an 8-bit grayscale, RGB or RGBA PNG into channel planes scaled to `[0, 1]`.
pub fn read_rgb_png(path: &Path) -> Result<Rgb, DataError> {
    let mut decoder = png::Decoder::new(File::open(path)?);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(DataError::Format(format!("unsupported color type {other:?}"))),
    };
    let mut image = Rgb::new(h, w);
    let plane = h * w;
    for i in 0..plane {
        for ch in 0..3 {
            let src = if channels < 3 { 0 } else { ch };
            image.values[ch * plane + i] = buf[i * channels + src] as f64 / 255.0;
        }
    }
    Ok(image)
}

fn png_err<E: std::fmt::Display>(e: E) -> DataError {
    DataError::Format(e.to_string())
}
