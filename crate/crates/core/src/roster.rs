//! The fixed county roster used for categorical and trend columns.

use crate::error::{Error, Result};

/// Almond-producing counties, in the order their indicator and trend
/// columns appear in a feature table.
pub const COUNTIES: [&str; 16] = [
    "Butte",
    "Colusa",
    "Fresno",
    "Glenn",
    "Kern",
    "Kings",
    "Madera",
    "Merced",
    "San Joaquin",
    "Solano",
    "Stanislaus",
    "Sutter",
    "Tehama",
    "Tulare",
    "Yolo",
    "Yuba",
];

pub const N_COUNTIES: usize = COUNTIES.len();

/// Position of `name` in [`COUNTIES`].
pub fn county_index(name: &str) -> Result<usize> {
    COUNTIES
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| Error::validation(format!("county `{name}`"), "not in the county roster"))
}

pub fn is_known(name: &str) -> bool {
    COUNTIES.contains(&name)
}
