use std::path::{Path, PathBuf};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::Mode;
use crate::tensor::{sigmoid, Scalar, Tensor};

/// One 8-bit grayscale map ready for writing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionImage {
    pub image: usize,
    /// Module name, e.g. `bam.1`.
    pub module: String,
    /// `attention` for the channel mean of `M`, `spatial` for `σ(Ms)`.
    pub kind: &'static str,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl AttentionImage {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.pgm", self.image, self.module, self.kind)
    }
}

/// Maps `[0, 1]` to a byte with round-half-up.
fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary PGM (`P5`) for 8-bit pixels.
pub fn write_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PGM, returning `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format {
        path: PathBuf::from("<pgm>"),
        message: m.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit maps are supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(bad("pixel data length does not match the header"));
    }
    Ok((w, h, data.to_vec()))
}

/// Renders every attention module's maps for each image of `images`
/// (`[N, 3, H, W]`), with the model in evaluation mode.
pub fn attention_images<T: Scalar>(model: &mut Model<T>, images: &Tensor<T>) -> Result<Vec<AttentionImage>> {
    if model.attention_modules() == 0 {
        return Err(Error::Usage(format!(
            "model `{}` has no attention modules to export",
            model.spec().name
        )));
    }
    let previous = model.mode();
    model.set_mode(Mode::Eval);
    let tape = Tape::new();
    let result = tape.no_grad(|| {
        let x = tape.constant(images.clone());
        let out = model.forward(&tape, &x)?;
        let mut maps = Vec::new();
        for m in &out.attention {
            let &[n, _, h, w] = m.attention.dims() else {
                return Err(Error::shape("attention map is not 4-D"));
            };
            let mean = m.attention.value().reduce_mean(&[1], false)?;
            let spatial = m.spatial_logits.as_ref().map(|s| s.value().clone());
            for i in 0..n {
                let plane = &mean.data()[i * h * w..(i + 1) * h * w];
                maps.push(AttentionImage {
                    image: i,
                    module: m.name.clone(),
                    kind: "attention",
                    width: w,
                    height: h,
                    pixels: plane.iter().map(|v| to_byte(v.to_f64_lossy())).collect(),
                });
                if let Some(s) = &spatial {
                    let plane = &s.data()[i * h * w..(i + 1) * h * w];
                    maps.push(AttentionImage {
                        image: i,
                        module: m.name.clone(),
                        kind: "spatial",
                        width: w,
                        height: h,
                        pixels: plane.iter().map(|&v| to_byte(sigmoid(v).to_f64_lossy())).collect(),
                    });
                }
            }
        }
        Ok(maps)
    });
    model.set_mode(previous);
    result
}

/// Writes [`attention_images`] as PGM files into `out_dir`.
pub fn export_attention<T: Scalar>(model: &mut Model<T>, images: &Tensor<T>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let maps = attention_images(model, images)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(maps.len());
    for m in maps {
        let path = out_dir.join(m.file_name());
        std::fs::write(&path, write_pgm(m.width, m.height, &m.pixels))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bam::BamConfig;
    use crate::models::{Attention, ModelSpec};
    use crate::rng;

    #[test]
    fn half_rounds_up() {
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
    }

    #[test]
    fn pgm_round_trip() {
        let bytes = write_pgm(3, 2, &[0, 1, 2, 3, 4, 255]);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(parse_pgm(&bytes).unwrap(), (3, 2, vec![0, 1, 2, 3, 4, 255]));
        assert!(parse_pgm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn zero_attention_exports_uniform_gray() {
        let spec = ModelSpec::named("tiny")
            .unwrap()
            .with_attention(Attention::Bottleneck)
            .with_bam(BamConfig {
                reduction: 4,
                ..Default::default()
            });
        let mut model = Model::<f32>::build(&spec, 0).unwrap();
        model.zero_attention();
        let x = Tensor::randn([2, 3, 32, 32], 1.0, &mut rng::seeded(0)).unwrap();
        let maps = attention_images(&mut model, &x).unwrap();
        assert_eq!(maps.len(), 2 * 2 * 2);
        for m in &maps {
            assert!(m.pixels.iter().all(|&p| p == 128), "{}", m.file_name());
        }
        let sides: Vec<_> = maps
            .iter()
            .filter(|m| m.image == 0 && m.kind == "attention")
            .map(|m| m.width)
            .collect();
        assert_eq!(sides, [32, 16]);

        let mut plain = Model::<f32>::build(&spec.with_attention(Attention::None), 0).unwrap();
        assert!(matches!(attention_images(&mut plain, &x), Err(Error::Usage(_))));
    }
}
