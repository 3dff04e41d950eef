use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate reference systems the pipeline can resample between.
///
/// Landsat scenes ship in WGS84 / UTM; every pipeline output is geographic WGS84.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Crs {
    Wgs84,
    Utm { zone: u8, north: bool },
}

impl Crs {
    pub fn epsg(self) -> u16 {
        match self {
            Crs::Wgs84 => 4326,
            Crs::Utm { zone, north: true } => 32600 + zone as u16,
            Crs::Utm { zone, north: false } => 32700 + zone as u16,
        }
    }

    pub fn from_epsg(code: u16) -> Result<Self> {
        match code {
            4326 => Ok(Crs::Wgs84),
            32601..=32660 => Ok(Crs::Utm { zone: (code - 32600) as u8, north: true }),
            32701..=32760 => Ok(Crs::Utm { zone: (code - 32700) as u8, north: false }),
            _ => Err(Error::Metadata(format!("unsupported CRS EPSG:{code}"))),
        }
    }

    pub fn is_geographic(self) -> bool {
        matches!(self, Crs::Wgs84)
    }

    /// Projects a WGS84 (lon, lat) position into this CRS.
    pub fn from_lonlat(self, lon: f64, lat: f64) -> (f64, f64) {
        match self {
            Crs::Wgs84 => (lon, lat),
            Crs::Utm { zone, north } => {
                let (mut northing, easting, _) = utm::to_utm_wgs84(lat, lon, zone);
                // utm picks the false northing from the latitude sign; the zone decides here.
                if north && lat <= 0.0 {
                    northing -= 10_000_000.0;
                } else if !north && lat > 0.0 {
                    northing += 10_000_000.0;
                }
                (easting, northing)
            }
        }
    }

    /// Inverse of [`Crs::from_lonlat`]; `None` outside the projection's valid range.
    pub fn to_lonlat(self, x: f64, y: f64) -> Option<(f64, f64)> {
        match self {
            Crs::Wgs84 => Some((x, y)),
            Crs::Utm { zone, north } => {
                // Any band letter of the right hemisphere selects the false northing.
                let letter = if north { 'N' } else { 'M' };
                utm::wsg84_utm_to_lat_lon(x, y, zone, letter).ok().map(|(lat, lon)| (lon, lat))
            }
        }
    }
}

impl fmt::Display for Crs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EPSG:{}", self.epsg())
    }
}

impl TryFrom<String> for Crs {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        let code = s
            .trim()
            .strip_prefix("EPSG:")
            .and_then(|c| c.parse::<u16>().ok())
            .ok_or_else(|| Error::Metadata(format!("cannot parse CRS `{s}`")))?;
        Crs::from_epsg(code)
    }
}

impl From<Crs> for String {
    fn from(c: Crs) -> String {
        c.to_string()
    }
}
