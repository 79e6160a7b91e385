use serde::{Deserialize, Serialize};

use super::scenarios::Scenario;
use crate::error::{Error, Result};
use crate::image::{add_gaussian_noise, Image};
use crate::linop::SpectralOperator;

/// Center crop applied so the image fits the operator and the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub original_width: usize,
    pub original_height: usize,
    pub width: usize,
    pub height: usize,
}

impl std::fmt::Display for CropRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}->{}x{}",
            self.original_width, self.original_height, self.width, self.height
        )
    }
}

/// A ground-truth image together with its simulated observation.
#[derive(Debug, Clone)]
pub struct Degraded {
    pub observed: Image,
    pub truth: Image,
    pub operator: SpectralOperator,
    pub scenario: Scenario,
    pub seed: u64,
    pub crop: Option<CropRecord>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Largest center crop whose sides are multiples of `multiple`.
pub fn crop_to_multiple(image: &Image, multiple: usize) -> Result<(Image, Option<CropRecord>)> {
    let (w, h) = (image.width(), image.height());
    let (cw, ch) = (w / multiple * multiple, h / multiple * multiple);
    if cw == 0 || ch == 0 {
        return Err(Error::InvalidArgument(format!(
            "image {} is smaller than the required multiple {multiple}",
            image.shape_string()
        )));
    }
    if (cw, ch) == (w, h) {
        return Ok((image.clone(), None));
    }
    let record = CropRecord {
        original_width: w,
        original_height: h,
        width: cw,
        height: ch,
    };
    Ok((image.center_crop(cw, ch)?, Some(record)))
}

/// Simulates `y = H x + e` with `e ~ N(0, sigma_sq)`. The image is first
/// center-cropped so both sides are multiples of `lcm(alpha, multiple)`;
/// pass the network's spatial multiple as `multiple`.
pub fn degrade(image: &Image, scenario: &Scenario, seed: u64, multiple: usize) -> Result<Degraded> {
    scenario.validate()?;
    let m = lcm(scenario.alpha, multiple.max(1));
    let (truth, crop) = crop_to_multiple(image, m)?;
    let operator = scenario.operator(truth.plane_shape())?;
    let clean = operator.apply_h(&truth)?;
    let observed = add_gaussian_noise(&clean, scenario.sigma(), seed)?;
    Ok(Degraded {
        observed,
        truth,
        operator,
        scenario: scenario.clone(),
        seed,
        crop,
    })
}
