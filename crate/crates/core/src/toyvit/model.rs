use image::RgbImage;
use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use super::attention::attention;
use super::weights::{BlockWeights, LayerNormParams, Weights};
use super::{ModelConfig, ToyVitError};

pub const LN_EPS: f64 = 1e-6;

/// Maps recorded inside one encoder block, CLS row removed, as `[h, w, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub attn_out: Array3<f64>,
    pub feat_resid: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelTrace {
    pub grid: (usize, usize),
    pub blocks: Vec<BlockTrace>,
    /// Final token features, CLS row included when present.
    pub output: Array2<f64>,
}

/// `[h, w, 3]` array scaled to `[0, 1]`.
pub fn image_to_array(img: &RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
}

/// One row per patch in row-major grid order, each flattened as (py, px, channel).
pub fn patchify(pixels: &Array3<f64>, patch: usize) -> Result<Array2<f64>, ToyVitError> {
    let (h, w, c) = pixels.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(ToyVitError::Shape(format!("{h}x{w} image does not tile into {patch}px patches")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut out = Array2::zeros((gh * gw, patch * patch * c));
    for gy in 0..gh {
        for gx in 0..gw {
            let block = pixels.slice(s![gy * patch..(gy + 1) * patch, gx * patch..(gx + 1) * patch, ..]);
            let mut row = out.row_mut(gy * gw + gx);
            for (dst, src) in row.iter_mut().zip(block.iter()) {
                *dst = *src;
            }
        }
    }
    Ok(out)
}

pub fn layer_norm(x: &Array2<f64>, p: &LayerNormParams) -> Array2<f64> {
    let mut out = x.clone();
    let d = x.ncols() as f64;
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for ((v, g), b) in row.iter_mut().zip(&p.gamma).zip(&p.beta) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    out
}

/// GELU, tanh approximation.
pub fn gelu_tanh(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn multi_head(x: &Array2<f64>, w: &BlockWeights, heads: usize) -> Result<Array2<f64>, ToyVitError> {
    let q = w.query.forward(x);
    let k = w.key.forward(x);
    let v = w.value.forward(x);
    let d = q.ncols();
    let hd = d / heads;
    let mut concat = Array2::zeros((x.nrows(), d));
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let out = attention(q.slice(cols), k.slice(cols), v.slice(cols))?;
        concat.slice_mut(cols).assign(&out);
    }
    Ok(w.proj.forward(&concat))
}

fn check_finite(m: &Array2<f64>, block: usize, what: &str) -> Result<(), ToyVitError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ToyVitError::Numeric {
            block: Some(block),
            what: format!("non-finite {what}"),
        })
    }
}

/// `(output, attention output, features after the attention residual)`
pub type BlockOutputs = (Array2<f64>, Array2<f64>, Array2<f64>);

/// One pre-norm block.
pub fn encoder_block(
    x: &Array2<f64>,
    w: &BlockWeights,
    heads: usize,
    block: usize,
) -> Result<BlockOutputs, ToyVitError> {
    let attn_out = multi_head(&layer_norm(x, &w.norm1), w, heads).map_err(|e| match e {
        ToyVitError::Numeric { what, .. } => ToyVitError::Numeric {
            block: Some(block),
            what,
        },
        other => other,
    })?;
    check_finite(&attn_out, block, "attention output")?;
    let feat_resid = x + &attn_out;
    let hidden = w.fc1.forward(&layer_norm(&feat_resid, &w.norm2)).mapv(gelu_tanh);
    let out = &feat_resid + &w.fc2.forward(&hidden);
    check_finite(&out, block, "block output")?;
    Ok((out, attn_out, feat_resid))
}

fn to_grid(tokens: ArrayView2<f64>, grid: (usize, usize)) -> Array3<f64> {
    tokens
        .to_owned()
        .into_shape_with_order((grid.0, grid.1, tokens.ncols()))
        .expect("token count matches grid")
}

/// Runs the model on a `[image_size, image_size, 3]` array in `[0, 1]`.
pub fn forward(pixels: &Array3<f64>, config: &ModelConfig, weights: &Weights) -> Result<ModelTrace, ToyVitError> {
    let (h, w, c) = pixels.dim();
    if h != config.image_size || w != config.image_size || c != 3 {
        return Err(ToyVitError::Shape(format!(
            "expected a {0}x{0}x3 image, got {h}x{w}x{c}",
            config.image_size
        )));
    }
    if pixels.iter().any(|v| !v.is_finite()) {
        return Err(ToyVitError::Numeric {
            block: None,
            what: "non-finite input pixel".into(),
        });
    }
    let grid = (config.grid(), config.grid());
    let patches = weights.patch_embed.forward(&patchify(pixels, config.patch_size)?);
    let skip = usize::from(config.use_cls_token);
    let mut x = Array2::zeros((config.sequence_len(), config.embed_dim));
    if let Some(cls) = &weights.cls_token {
        x.row_mut(0).assign(cls);
    }
    x.slice_mut(s![skip.., ..]).assign(&patches);
    x += &weights.pos_embed;

    let mut blocks = Vec::with_capacity(weights.blocks.len());
    for (i, bw) in weights.blocks.iter().enumerate() {
        let (out, attn_out, feat_resid) = encoder_block(&x, bw, config.heads, i)?;
        blocks.push(BlockTrace {
            attn_out: to_grid(attn_out.slice(s![skip.., ..]), grid),
            feat_resid: to_grid(feat_resid.slice(s![skip.., ..]), grid),
        });
        x = out;
    }
    Ok(ModelTrace { grid, blocks, output: x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(cls: bool) -> ModelConfig {
        ModelConfig {
            image_size: 32,
            patch_size: 8,
            embed_dim: 16,
            heads: 2,
            blocks: 2,
            use_cls_token: cls,
            ..ModelConfig::default()
        }
    }

    fn random_pixels(n: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((n, n, 3), || rng.random::<f64>())
    }

    #[test]
    fn patch_order_is_row_major() {
        let px = Array3::from_shape_fn((4, 4, 3), |(y, x, c)| (y * 100 + x * 10 + c) as f64);
        let p = patchify(&px, 2).unwrap();
        assert_eq!(p.dim(), (4, 12));
        // patch 1 is the top-right 2x2 block: first pixel (0, 2)
        assert_eq!(p[[1, 0]], 20.0);
        // patch 2, second row of the patch, first pixel (3, 0), channel 1
        assert_eq!(p[[2, 7]], 301.0);
        assert!(patchify(&px, 3).is_err());
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let x = array![[1.0, 2.0, 3.0, 6.0]];
        let p = LayerNormParams {
            gamma: Array1::ones(4),
            beta: Array1::zeros(4),
        };
        let y = layer_norm(&x, &p);
        assert!(y.sum().abs() < 1e-12);
        let var = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_tanh(0.0), 0.0);
        assert!((gelu_tanh(1.0) - 0.841_192).abs() < 1e-6);
        assert!((gelu_tanh(-1.0) + 0.158_808).abs() < 1e-6);
    }

    #[test]
    fn map_shapes_for_default_model() {
        let cfg = ModelConfig::default();
        let w = Weights::init(&cfg).unwrap();
        let trace = forward(&random_pixels(224, 3), &cfg, &w).unwrap();
        assert_eq!(trace.blocks.len(), 4);
        for b in &trace.blocks {
            assert_eq!(b.attn_out.dim(), (14, 14, 64));
            assert_eq!(b.feat_resid.dim(), (14, 14, 64));
        }
        assert_eq!(trace.output.dim(), (197, 64));
    }

    #[test]
    fn zero_projection_makes_block_identity() {
        let cfg = small(true);
        let mut w = Weights::init(&cfg).unwrap();
        for b in &mut w.blocks {
            b.proj.weight.fill(0.0);
            b.fc2.weight.fill(0.0);
        }
        let x = Array2::from_shape_fn((5, 16), |(i, j)| (i as f64 - j as f64) * 0.1);
        let (out, attn, feat) = encoder_block(&x, &w.blocks[0], 2, 0).unwrap();
        assert!(attn.iter().all(|&v| v == 0.0));
        assert_eq!(feat, x);
        assert_eq!(out, x);
    }

    #[test]
    fn block_is_permutation_equivariant() {
        let cfg = small(false);
        let w = Weights::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_simple_fn((6, 16), || rng.random::<f64>() - 0.5);
        let perm = [3, 0, 5, 1, 4, 2];
        let xp = x.select(Axis(0), &perm);
        let (y, _, _) = encoder_block(&x, &w.blocks[0], 2, 0).unwrap();
        let (yp, _, _) = encoder_block(&xp, &w.blocks[0], 2, 0).unwrap();
        let diff = (&y.select(Axis(0), &perm) - &yp).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn forward_is_deterministic_and_checks_size() {
        let cfg = small(true);
        let w = Weights::init(&cfg).unwrap();
        let px = random_pixels(32, 1);
        assert_eq!(forward(&px, &cfg, &w).unwrap(), forward(&px, &cfg, &w).unwrap());
        assert!(matches!(forward(&random_pixels(16, 1), &cfg, &w), Err(ToyVitError::Shape(_))));
    }

    #[test]
    fn nan_weights_report_block() {
        let cfg = small(true);
        let mut w = Weights::init(&cfg).unwrap();
        w.blocks[1].fc2.bias[0] = f64::NAN;
        match forward(&random_pixels(32, 1), &cfg, &w) {
            Err(ToyVitError::Numeric { block: Some(1), .. }) => {}
            other => panic!("expected numeric error in block 1, got {other:?}"),
        }
    }

    #[test]
    fn image_conversion_scales_to_unit() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, image::Rgb([255, 0, 51]));
        let a = image_to_array(&img);
        assert_eq!(a.dim(), (1, 2, 3));
        assert_eq!(a[[0, 1, 0]], 1.0);
        assert_eq!(a[[0, 1, 2]], 0.2);
    }
}
