//! Line profiles through images.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileAxis {
    Row,
    Column,
}

/// Pixel values along row or column `index`.
pub fn intensity_profile(image: &Tensor<f64>, axis: ProfileAxis, index: usize) -> Result<Vec<f64>> {
    let (h, w) = image.dims2()?;
    let limit = if axis == ProfileAxis::Row { h } else { w };
    if index >= limit {
        return Err(Error::invalid(format!("{axis:?} {index} out of range for a {h}x{w} image")));
    }
    Ok(match axis {
        ProfileAxis::Row => image.data()[index * w..(index + 1) * w].to_vec(),
        ProfileAxis::Column => (0..h).map(|y| image[[y, index]]).collect(),
    })
}

/// CSV with a `position` column followed by one column per named profile.
pub fn profiles_csv(profiles: &[(&str, &[f64])]) -> Result<String> {
    let len = profiles.first().map_or(0, |p| p.1.len());
    if profiles.iter().any(|p| p.1.len() != len) {
        return Err(Error::invalid("profiles differ in length"));
    }
    let mut out = String::from("position");
    for (name, _) in profiles {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..len {
        let _ = write!(out, "{i}");
        for (_, p) in profiles {
            let _ = write!(out, ",{:e}", p[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_identity() {
        let img = Tensor::from_fn(&[3, 4], |i| i as f64);
        assert_eq!(intensity_profile(&img, ProfileAxis::Row, 1).unwrap(), vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(intensity_profile(&img, ProfileAxis::Column, 2).unwrap(), vec![2.0, 6.0, 10.0]);
        assert!(intensity_profile(&img, ProfileAxis::Row, 3).is_err());
        assert!(intensity_profile(&img, ProfileAxis::Column, 4).is_err());
        let flat = Tensor::filled(&[5, 5], 0.3);
        assert!(intensity_profile(&flat, ProfileAxis::Row, 2).unwrap().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn csv_layout() {
        let csv = profiles_csv(&[("a", &[1.0, 2.0]), ("b", &[0.5, 0.25])]).unwrap();
        assert_eq!(csv, "position,a,b\n0,1e0,5e-1\n1,2e0,2.5e-1\n");
        assert!(profiles_csv(&[("a", &[1.0]), ("b", &[])]).is_err());
    }
}
