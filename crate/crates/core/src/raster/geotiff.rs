//! GeoTIFF reading and writing.
//!
//! Band stacks are written as one single-sample floating-point page per band,
//! each page carrying the band identifier in `ImageDescription` and the full
//! set of GeoTIFF georeferencing tags. Nodata pixels are stored as NaN and
//! flagged with `GDAL_NODATA = "nan"`. Readers also accept pixel-interleaved
//! multi-sample files, integer sample formats and numeric `GDAL_NODATA` values.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;

use super::{Band, BandStack, Crs, MaskRaster, Raster, RasterGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const KEY_MODEL_TYPE: u16 = 1024;
const KEY_RASTER_TYPE: u16 = 1025;
const KEY_GEOGRAPHIC_TYPE: u16 = 2048;
const KEY_PROJECTED_TYPE: u16 = 3072;
const MODEL_TYPE_PROJECTED: u16 = 1;
const MODEL_TYPE_GEOGRAPHIC: u16 = 2;
const RASTER_PIXEL_IS_AREA: u16 = 1;
const RASTER_PIXEL_IS_POINT: u16 = 2;

fn geokeys(crs: Crs) -> Vec<u16> {
    let mut keys = vec![1, 1, 0, 3];
    keys.extend_from_slice(&[KEY_RASTER_TYPE, 0, 1, RASTER_PIXEL_IS_AREA]);
    if crs.is_geographic() {
        keys[3] = 3;
        keys.splice(4..4, [KEY_MODEL_TYPE, 0, 1, MODEL_TYPE_GEOGRAPHIC]);
        keys.extend_from_slice(&[KEY_GEOGRAPHIC_TYPE, 0, 1, crs.epsg()]);
    } else {
        keys.splice(4..4, [KEY_MODEL_TYPE, 0, 1, MODEL_TYPE_PROJECTED]);
        keys.extend_from_slice(&[KEY_PROJECTED_TYPE, 0, 1, crs.epsg()]);
    }
    keys
}

fn tiff_err(path: &Path, e: tiff::TiffError) -> Error {
    match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn open(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Decoder::new(BufReader::new(file)).map(|d| d.with_limits(Limits::unlimited())).map_err(|e| tiff_err(path, e))
}

fn create(path: &Path) -> Result<TiffEncoder<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))
}

fn read_grid(path: &Path, dec: &mut Decoder<BufReader<File>>) -> Result<RasterGrid> {
    let (width, height) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
    let missing = |what: &str| Error::Metadata(format!("{}: no {what} (not georeferenced)", path.display()));
    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)
        .map_err(|e| tiff_err(path, e))?
        .ok_or_else(|| missing("ModelPixelScale"))?
        .into_f64_vec()
        .map_err(|e| tiff_err(path, e))?;
    let tie = dec
        .find_tag(Tag::ModelTiepointTag)
        .map_err(|e| tiff_err(path, e))?
        .ok_or_else(|| missing("ModelTiepoint"))?
        .into_f64_vec()
        .map_err(|e| tiff_err(path, e))?;
    let keys = dec
        .find_tag(Tag::GeoKeyDirectoryTag)
        .map_err(|e| tiff_err(path, e))?
        .ok_or_else(|| missing("GeoKeyDirectory"))?
        .into_u16_vec()
        .map_err(|e| tiff_err(path, e))?;
    if scale.len() < 2 || tie.len() < 6 || keys.len() < 4 {
        return Err(Error::Metadata(format!("{}: truncated georeferencing tags", path.display())));
    }

    let mut epsg = None;
    let mut pixel_is_point = false;
    for entry in keys[4..].chunks_exact(4) {
        let (key, location, value) = (entry[0], entry[1], entry[3]);
        if location != 0 {
            continue;
        }
        match key {
            KEY_RASTER_TYPE => pixel_is_point = value == RASTER_PIXEL_IS_POINT,
            KEY_PROJECTED_TYPE | KEY_GEOGRAPHIC_TYPE => epsg = epsg.or(Some(value)),
            _ => {}
        }
    }
    let epsg = epsg.ok_or_else(|| missing("EPSG code in GeoKeyDirectory"))?;
    let crs = Crs::from_epsg(epsg)?;

    let (dx, dy) = (scale[0], scale[1]);
    let (i, j, x, y) = (tie[0], tie[1], tie[3], tie[4]);
    let mut origin = (x - i * dx, y + j * dy);
    if pixel_is_point {
        origin = (origin.0 - 0.5 * dx, origin.1 + 0.5 * dy);
    }
    RasterGrid::new(origin, (dx, dy), width as usize, height as usize, crs)
}

fn samples_per_pixel(path: &Path, dec: &mut Decoder<BufReader<File>>) -> Result<usize> {
    use tiff::ColorType as C;
    Ok(match dec.colortype().map_err(|e| tiff_err(path, e))? {
        C::Gray(_) => 1,
        C::GrayA(_) => 2,
        C::RGB(_) | C::YCbCr(_) | C::Lab(_) => 3,
        C::RGBA(_) | C::CMYK(_) => 4,
        C::Multiband { num_samples, .. } => num_samples as usize,
        other => return Err(Error::format(path, format!("unsupported colour type {other:?}"))),
    })
}

fn decode_f64(path: &Path, dec: &mut Decoder<BufReader<File>>) -> Result<Vec<f64>> {
    let data = dec.read_image().map_err(|e| tiff_err(path, e))?;
    Ok(match data {
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U64(v) => v.into_iter().map(|x| x as f64).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I64(v) => v.into_iter().map(|x| x as f64).collect(),
        DecodingResult::F16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
    })
}

fn nodata_value(dec: &mut Decoder<BufReader<File>>) -> Option<f64> {
    let text = dec.find_tag(Tag::GdalNodata).ok()??.into_string().ok()?;
    text.trim_matches(char::from(0)).trim().parse::<f64>().ok()
}

/// One decoded page: its grid, interleaved samples and optional description.
struct Page {
    grid: RasterGrid,
    samples: usize,
    data: Vec<f64>,
    nodata: Option<f64>,
    description: Option<String>,
}

fn read_pages(path: &Path) -> Result<Vec<Page>> {
    let mut dec = open(path)?;
    let mut pages = Vec::new();
    loop {
        let grid = read_grid(path, &mut dec)?;
        let samples = samples_per_pixel(path, &mut dec)?;
        let nodata = nodata_value(&mut dec);
        let description = dec
            .find_tag(Tag::ImageDescription)
            .ok()
            .flatten()
            .and_then(|v| v.into_string().ok())
            .map(|s| s.trim_matches(char::from(0)).to_string());
        let data = decode_f64(path, &mut dec)?;
        if data.len() != grid.len() * samples {
            return Err(Error::format(path, "pixel data shorter than image dimensions"));
        }
        pages.push(Page { grid, samples, data, nodata, description });
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| tiff_err(path, e))?;
    }
    Ok(pages)
}

/// Reads every band of a (possibly multi-page, possibly interleaved) GeoTIFF.
///
/// Pixels that are NaN or equal the declared nodata value in any band are
/// marked invalid for the whole stack.
pub fn read_stack<T: Scalar>(path: &Path) -> Result<BandStack<T>> {
    let pages = read_pages(path)?;
    let grid = pages[0].grid.clone();
    let mut bands = Vec::new();
    let mut valid = Array2::from_elem(grid.shape(), true);
    for page in &pages {
        if !page.grid.same_as(&grid) {
            return Err(Error::Shape(format!("{}: pages have different grids", path.display())));
        }
        for s in 0..page.samples {
            let index = bands.len();
            let id = match (&page.description, page.samples) {
                (Some(d), 1) if !d.is_empty() => d.clone(),
                _ => format!("B{}", index + 1),
            };
            let mut values = Array2::from_elem(grid.shape(), T::zero());
            for (k, (v, ok)) in values.iter_mut().zip(valid.iter_mut()).enumerate() {
                let x = page.data[k * page.samples + s];
                let bad = !x.is_finite() || page.nodata.is_some_and(|nd| x == nd);
                if bad {
                    *ok = false;
                } else {
                    *v = T::lit(x);
                }
            }
            bands.push(Band { id, values });
        }
    }
    BandStack::with_validity(grid, bands, valid, None)
}

pub fn read_raster<T: Scalar>(path: &Path) -> Result<Raster<T>> {
    let stack = read_stack::<T>(path)?;
    if stack.bands.len() != 1 {
        return Err(Error::Shape(format!("{}: expected a single-band raster, found {} bands", path.display(), stack.bands.len())));
    }
    let BandStack { grid, mut bands, valid, .. } = stack;
    Raster::with_validity(grid, bands.remove(0).values, valid)
}

/// Reads an integer-valued raster such as a validity mask or a region label map.
pub fn read_labels(path: &Path) -> Result<(RasterGrid, Array2<u32>)> {
    let pages = read_pages(path)?;
    let page = &pages[0];
    if page.samples != 1 {
        return Err(Error::Shape(format!("{}: label raster must have one sample", path.display())));
    }
    let labels = page.data.iter().map(|&v| if v.is_finite() && v > 0.0 { v as u32 } else { 0 }).collect();
    let arr = Array2::from_shape_vec(page.grid.shape(), labels).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((page.grid.clone(), arr))
}

pub fn read_mask(path: &Path) -> Result<MaskRaster> {
    let (grid, labels) = read_labels(path)?;
    MaskRaster::new(grid, labels.mapv(|v| v != 0))
}

fn write_geotags<W: std::io::Write + std::io::Seek, C: colortype::ColorType>(
    img: &mut tiff::encoder::ImageEncoder<'_, W, C, tiff::encoder::TiffKindStandard>,
    grid: &RasterGrid,
) -> tiff::TiffResult<()> {
    let enc = img.encoder();
    enc.write_tag(Tag::ModelPixelScaleTag, &[grid.pixel_size.0, grid.pixel_size.1, 0.0][..])?;
    enc.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, grid.origin.0, grid.origin.1, 0.0][..])?;
    enc.write_tag(Tag::GeoKeyDirectoryTag, &geokeys(grid.crs)[..])?;
    Ok(())
}

fn write_float_page<W: std::io::Write + std::io::Seek, T: Scalar>(
    enc: &mut TiffEncoder<W>,
    grid: &RasterGrid,
    id: &str,
    values: &Array2<T>,
    valid: &Array2<bool>,
) -> tiff::TiffResult<()> {
    let (w, h) = (grid.width as u32, grid.height as u32);
    let masked = values.iter().zip(valid.iter()).map(|(v, ok)| if *ok { v.as_f64() } else { f64::NAN });
    if T::BYTES == 8 {
        let data: Vec<f64> = masked.collect();
        let mut img = enc.new_image::<colortype::Gray64Float>(w, h)?;
        write_geotags(&mut img, grid)?;
        img.encoder().write_tag(Tag::ImageDescription, id)?;
        img.encoder().write_tag(Tag::GdalNodata, "nan")?;
        img.write_data(&data)
    } else {
        let data: Vec<f32> = masked.map(|v| v as f32).collect();
        let mut img = enc.new_image::<colortype::Gray32Float>(w, h)?;
        write_geotags(&mut img, grid)?;
        img.encoder().write_tag(Tag::ImageDescription, id)?;
        img.encoder().write_tag(Tag::GdalNodata, "nan")?;
        img.write_data(&data)
    }
}

/// Writes one page per band; values keep the precision of `T`.
pub fn write_stack<T: Scalar>(path: &Path, stack: &BandStack<T>) -> Result<()> {
    let mut enc = create(path)?;
    for band in &stack.bands {
        write_float_page(&mut enc, &stack.grid, &band.id, &band.values, &stack.valid).map_err(|e| tiff_err(path, e))?;
    }
    Ok(())
}

pub fn write_raster<T: Scalar>(path: &Path, id: &str, raster: &Raster<T>) -> Result<()> {
    let mut enc = create(path)?;
    write_float_page(&mut enc, &raster.grid, id, &raster.values, &raster.valid).map_err(|e| tiff_err(path, e))
}

pub fn write_mask(path: &Path, mask: &MaskRaster) -> Result<()> {
    let data: Vec<u8> = mask.valid.iter().map(|v| u8::from(*v)).collect();
    let mut enc = create(path)?;
    let mut img = enc.new_image::<colortype::Gray8>(mask.grid.width as u32, mask.grid.height as u32).map_err(|e| tiff_err(path, e))?;
    write_geotags(&mut img, &mask.grid).map_err(|e| tiff_err(path, e))?;
    img.encoder().write_tag(Tag::ImageDescription, "valid").map_err(|e| tiff_err(path, e))?;
    img.write_data(&data).map_err(|e| tiff_err(path, e))
}

pub fn write_labels(path: &Path, grid: &RasterGrid, labels: &Array2<u32>) -> Result<()> {
    grid.check_shape(labels.dim(), "labels")?;
    let data: Vec<u32> = labels.iter().copied().collect();
    let mut enc = create(path)?;
    let mut img = enc.new_image::<colortype::Gray32>(grid.width as u32, grid.height as u32).map_err(|e| tiff_err(path, e))?;
    write_geotags(&mut img, grid).map_err(|e| tiff_err(path, e))?;
    img.write_data(&data).map_err(|e| tiff_err(path, e))
}
