//! Gaussian denoisers for the plug-and-play z-step.

use std::path::PathBuf;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};

/// Ratio between the ROF weight and the noise standard deviation.
pub const DEFAULT_TV_LAMBDA_SCALE: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserSpec {
    Identity,
    /// ROF model solved by Chambolle's projection algorithm with
    /// `lambda = lambda_scale * noise_level`.
    Tv {
        max_iters: usize,
        tolerance: f64,
        lambda_scale: f64,
    },
    /// `program args...`, where the arguments may contain `{input}`,
    /// `{output}` and `{sigma}`. With no arguments the three are passed in
    /// that order.
    ExternalCommand {
        program: PathBuf,
        args: Vec<String>,
    },
}

impl DenoiserSpec {
    pub fn tv() -> Self {
        DenoiserSpec::Tv {
            max_iters: 200,
            tolerance: 1e-3,
            lambda_scale: DEFAULT_TV_LAMBDA_SCALE,
        }
    }

    pub fn external(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        DenoiserSpec::ExternalCommand {
            program: program.into(),
            args,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DenoiserSpec::Identity => Ok(()),
            DenoiserSpec::Tv {
                max_iters,
                tolerance,
                lambda_scale,
            } => {
                if *max_iters == 0 {
                    return Err(Error::Config("TV max_iters must be at least 1".into()));
                }
                if !(*tolerance >= 0.0) || !(*lambda_scale >= 0.0 && lambda_scale.is_finite()) {
                    return Err(Error::Config(
                        "TV tolerance and lambda_scale must be non-negative".into(),
                    ));
                }
                Ok(())
            }
            DenoiserSpec::ExternalCommand { program, .. } => {
                if program.as_os_str().is_empty() {
                    return Err(Error::Config("external denoiser program is empty".into()));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DenoiserSpec::Identity => "identity",
            DenoiserSpec::Tv { .. } => "tv",
            DenoiserSpec::ExternalCommand { .. } => "external",
        }
    }
}

/// Removes white Gaussian noise of standard deviation `noise_level`
/// (display scale) from `img`.
pub fn denoise(spec: &DenoiserSpec, img: &Image, noise_level: f64) -> Result<Image> {
    if !(noise_level >= 0.0) || !noise_level.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and non-negative, got {noise_level}"
        )));
    }
    spec.validate()?;
    match spec {
        DenoiserSpec::Identity => Ok(img.clone()),
        DenoiserSpec::Tv {
            max_iters,
            tolerance,
            lambda_scale,
        } => Ok(tv_denoise(
            img,
            lambda_scale * noise_level,
            *max_iters,
            *tolerance,
        )),
        DenoiserSpec::ExternalCommand { program, args } => {
            external_denoise(program, args, img, noise_level)
        }
    }
}

/// Chambolle's dual projection for `min_z 0.5 ||z - img||^2 + lambda TV(z)`,
/// isotropic TV per channel with Neumann boundaries. Stops when no sample of
/// `z` moves by more than `tolerance` in one iteration.
pub fn tv_denoise(img: &Image, lambda: f64, max_iters: usize, tolerance: f64) -> Image {
    if lambda <= 0.0 {
        return img.clone();
    }
    let (h, w) = img.plane_shape();
    let n = h * w;
    let tau = 0.125;
    let mut out = img.clone();
    for c in 0..img.channels() {
        let f = img.plane(c);
        let mut px = vec![0.0; n];
        let mut py = vec![0.0; n];
        let mut div = vec![0.0; n];
        let mut z = f.to_vec();
        for _ in 0..max_iters {
            // grad(div p - f / lambda) = -grad(z) / lambda
            for r in 0..h {
                for col in 0..w {
                    let i = r * w + col;
                    let gx = if col + 1 < w { z[i] - z[i + 1] } else { 0.0 } / lambda;
                    let gy = if r + 1 < h { z[i] - z[i + w] } else { 0.0 } / lambda;
                    let norm = (gx * gx + gy * gy).sqrt();
                    let d = 1.0 + tau * norm;
                    px[i] = (px[i] + tau * gx) / d;
                    py[i] = (py[i] + tau * gy) / d;
                }
            }
            divergence(&px, &py, h, w, &mut div);
            let mut change: f64 = 0.0;
            for i in 0..n {
                let v = f[i] - lambda * div[i];
                change = change.max((v - z[i]).abs());
                z[i] = v;
            }
            if change <= tolerance {
                break;
            }
        }
        out.plane_mut(c).copy_from_slice(&z);
    }
    out
}

/// Negative adjoint of the forward-difference gradient with Neumann ends.
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for r in 0..h {
        for col in 0..w {
            let i = r * w + col;
            let dx = if col + 1 < w { px[i] } else { 0.0 } - if col > 0 { px[i - 1] } else { 0.0 };
            let dy = if r + 1 < h { py[i] } else { 0.0 } - if r > 0 { py[i - w] } else { 0.0 };
            out[i] = dx + dy;
        }
    }
}

fn external_denoise(
    program: &std::path::Path,
    args: &[String],
    img: &Image,
    noise_level: f64,
) -> Result<Image> {
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("input.png");
    let output = dir.path().join("output.png");
    save_image(img, &input)?;
    let sigma = format!("{noise_level}");
    let subst = |a: &str| {
        a.replace("{input}", &input.to_string_lossy())
            .replace("{output}", &output.to_string_lossy())
            .replace("{sigma}", &sigma)
    };
    let argv: Vec<String> = if args.is_empty() {
        vec![subst("{input}"), subst("{output}"), sigma.clone()]
    } else {
        args.iter().map(|a| subst(a)).collect()
    };
    let cmdline = format!("{} {}", program.display(), argv.join(" "));
    log::debug!("running external denoiser: {cmdline}");
    let result = Command::new(program).args(&argv).output();
    let out = match result {
        Ok(o) => o,
        Err(e) => {
            return Err(Error::ExternalDenoiser {
                message: format!("failed to start `{}`: {e}", program.display()),
                transcript: format!("$ {cmdline}"),
            })
        }
    };
    let transcript = format!(
        "$ {cmdline}\nstatus: {}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    if !out.status.success() {
        return Err(Error::ExternalDenoiser {
            message: format!("`{}` exited with {}", program.display(), out.status),
            transcript,
        });
    }
    let denoised = load_image(&output).map_err(|e| Error::ExternalDenoiser {
        message: format!("could not read denoiser output: {e}"),
        transcript: transcript.clone(),
    })?;
    if !denoised.same_shape(img) {
        return Err(Error::ExternalDenoiser {
            message: format!(
                "denoiser returned {} for a {} input",
                denoised.shape_string(),
                img.shape_string()
            ),
            transcript,
        });
    }
    Ok(denoised)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{add_gaussian_noise, psnr};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn step_edge() -> Image {
        Image::from_fn(64, 64, 1, |_, _, c| if c < 32 { 60.0 } else { 190.0 })
    }

    #[test]
    fn zero_noise_is_identity() {
        let img = add_gaussian_noise(&step_edge(), 10.0, 1).unwrap();
        let out = denoise(&DenoiserSpec::tv(), &img, 0.0).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(denoise(&DenoiserSpec::Identity, &img, 25.0).unwrap(), img);
    }

    #[test]
    fn constant_image_unchanged() {
        let img = Image::filled(16, 12, 3, 93.0);
        let out = denoise(&DenoiserSpec::tv(), &img, 40.0).unwrap();
        for v in out.data() {
            assert!((v - 93.0).abs() < 1e-9);
        }
    }

    #[test]
    fn step_edge_psnr_improves() {
        let clean = step_edge();
        let noisy = add_gaussian_noise(&clean, 15.0, 3).unwrap();
        let out = denoise(&DenoiserSpec::tv(), &noisy, 15.0).unwrap();
        let before = psnr(&noisy, &clean).unwrap();
        let after = psnr(&out, &clean).unwrap();
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn non_expansive_on_random_pairs() {
        let tol = 1e-4;
        let spec = DenoiserSpec::Tv {
            max_iters: 5000,
            tolerance: tol,
            lambda_scale: DEFAULT_TV_LAMBDA_SCALE,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = Image::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.0..255.0));
            let b = Image::from_fn(16, 16, 1, |c, r, col| {
                a.get(c, r, col) + rng.random_range(-40.0..40.0)
            });
            let da = denoise(&spec, &a, 20.0).unwrap();
            let db = denoise(&spec, &b, 20.0).unwrap();
            let lhs = da.zip_map(&db, |x, y| x - y).unwrap().norm_sq().sqrt();
            let rhs = a.zip_map(&b, |x, y| x - y).unwrap().norm_sq().sqrt();
            assert!(lhs <= rhs + tol * 255.0, "{lhs} > {rhs}");
        }
    }

    #[test]
    fn tv_is_deterministic() {
        let img = add_gaussian_noise(&step_edge(), 15.0, 9).unwrap();
        let a = denoise(&DenoiserSpec::tv(), &img, 15.0).unwrap();
        let b = denoise(&DenoiserSpec::tv(), &img, 15.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_and_levels() {
        let img = Image::zeros(4, 4, 1);
        assert!(denoise(&DenoiserSpec::tv(), &img, -1.0).is_err());
        let bad = DenoiserSpec::Tv {
            max_iters: 0,
            tolerance: 1e-3,
            lambda_scale: 0.75,
        };
        assert!(denoise(&bad, &img, 1.0).is_err());
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let (h, w) = (5, 7);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let z: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let px: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let py: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut div = vec![0.0; h * w];
        divergence(&px, &py, h, w, &mut div);
        let mut lhs = 0.0;
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let gx = if c + 1 < w { z[i + 1] - z[i] } else { 0.0 };
                let gy = if r + 1 < h { z[i + w] - z[i] } else { 0.0 };
                lhs += gx * px[i] + gy * py[i];
            }
        }
        let rhs: f64 = -z.iter().zip(&div).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[cfg(unix)]
    #[test]
    fn external_copy_command() {
        let img = Image::from_fn(6, 5, 3, |c, r, col| (c * 40 + r * 7 + col) as f64);
        let spec = DenoiserSpec::external("cp", vec!["{input}".into(), "{output}".into()]);
        let out = denoise(&spec, &img, 3.0).unwrap();
        assert_eq!(out, img);
    }

    #[cfg(unix)]
    #[test]
    fn external_failure_carries_transcript() {
        let img = Image::zeros(4, 4, 1);
        let spec = DenoiserSpec::external("sh", vec!["-c".into(), "echo oops >&2; exit 3".into()]);
        match denoise(&spec, &img, 1.0) {
            Err(Error::ExternalDenoiser { transcript, .. }) => {
                assert!(transcript.contains("oops"), "{transcript}");
                assert!(transcript.contains('3'));
            }
            other => panic!("expected external failure, got {other:?}"),
        }
        let missing = DenoiserSpec::external("true", vec![]);
        assert!(matches!(
            denoise(&missing, &img, 1.0),
            Err(Error::ExternalDenoiser { .. })
        ));
    }
}
