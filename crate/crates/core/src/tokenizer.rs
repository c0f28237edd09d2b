//! Parameter-free tokenization: split an image into `T` non-overlapping
//! `H/√T × W/√T` patches in row-major order, the inverse rearrangement,
//! ground-truth downsampling to one value per token, and the per-token
//! coordinate grid used for positional encoding.

use crate::data::{GazeMap, Image};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Token counts the model accepts.
pub const SUPPORTED_TOKENS: [usize; 5] = [4, 16, 64, 256, 1024];

/// Side length `√T` of the token grid; `T` must be a power of 4 (a power of 2 and a perfect square).
pub fn grid_side(n_tokens: usize) -> Result<usize> {
    if n_tokens == 0 || !n_tokens.is_power_of_two() || n_tokens.trailing_zeros() % 2 != 0 {
        return Err(Error::Dimension(format!(
            "token count {n_tokens} must be a power of 2 and a perfect square"
        )));
    }
    Ok(1 << (n_tokens.trailing_zeros() / 2))
}

/// `(√T, H/√T, W/√T)` after checking divisibility.
pub fn token_dims(h: usize, w: usize, n_tokens: usize) -> Result<(usize, usize, usize)> {
    let side = grid_side(n_tokens)?;
    if h == 0 || w == 0 || h % side != 0 || w % side != 0 {
        return Err(Error::Dimension(format!(
            "H={h}, W={w} must both be divisible by sqrt(T)={side}"
        )));
    }
    Ok((side, h / side, w / side))
}

/// Tokens laid out as `(T, C, H', W')`; token `r·√T + c` covers rows
/// `[r·H', (r+1)·H')` and columns `[c·W', (c+1)·W')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch<F = f32> {
    pub n_tokens: usize,
    pub channels: usize,
    pub token_h: usize,
    pub token_w: usize,
    pub data: Vec<F>,
}

impl<F: Copy> TokenBatch<F> {
    pub fn grid(&self) -> usize {
        grid_side(self.n_tokens).unwrap_or(1)
    }

    pub fn token(&self, i: usize) -> &[F] {
        let n = self.channels * self.token_h * self.token_w;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn token_len(&self) -> usize {
        self.channels * self.token_h * self.token_w
    }
}

/// Rearrange channel-major planes `(C, H, W)` into `(T, C, H', W')`.
pub fn tokenize_planes<F: Copy>(data: &[F], channels: usize, h: usize, w: usize, n_tokens: usize) -> Result<TokenBatch<F>> {
    let (side, th, tw) = token_dims(h, w, n_tokens)?;
    if data.len() != channels * h * w {
        return Err(Error::Dimension(format!(
            "buffer of {} values does not match {channels}x{h}x{w}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(data.len());
    for r in 0..side {
        for c in 0..side {
            for ch in 0..channels {
                for y in r * th..(r + 1) * th {
                    let row = (ch * h + y) * w;
                    out.extend_from_slice(&data[row + c * tw..row + (c + 1) * tw]);
                }
            }
        }
    }
    Ok(TokenBatch {
        n_tokens,
        channels,
        token_h: th,
        token_w: tw,
        data: out,
    })
}

/// Inverse of [`tokenize_planes`]: back to `(C, H, W)`.
pub fn untokenize_planes<F: Copy + Default>(tokens: &TokenBatch<F>) -> Vec<F> {
    let side = tokens.grid();
    let (th, tw, ch) = (tokens.token_h, tokens.token_w, tokens.channels);
    let (h, w) = (th * side, tw * side);
    let mut out = vec![F::default(); ch * h * w];
    let mut src = tokens.data.iter();
    for r in 0..side {
        for c in 0..side {
            for k in 0..ch {
                for y in r * th..(r + 1) * th {
                    let row = (k * h + y) * w + c * tw;
                    for dst in &mut out[row..row + tw] {
                        *dst = *src.next().unwrap();
                    }
                }
            }
        }
    }
    out
}

pub fn tokenize(image: &Image, n_tokens: usize) -> Result<TokenBatch<f32>> {
    tokenize_planes(image.data(), Image::CHANNELS, image.height(), image.width(), n_tokens)
}

pub fn untokenize(tokens: &TokenBatch<f32>) -> Result<Image> {
    if tokens.channels != Image::CHANNELS {
        return Err(Error::Dimension(format!(
            "image tokens need 3 channels, got {}",
            tokens.channels
        )));
    }
    let side = tokens.grid();
    Image::from_vec(tokens.token_h * side, tokens.token_w * side, untokenize_planes(tokens))
}

/// View the tokens as a batch tensor `(T, C, H', W')` with the token axis as batch axis.
pub fn unfold<F: Scalar>(tokens: &TokenBatch<F>) -> Tensor<F> {
    Tensor::from_vec(
        &[tokens.n_tokens, tokens.channels, tokens.token_h, tokens.token_w],
        tokens.data.clone(),
    )
    .expect("token batch is consistent")
}

/// Inverse of [`unfold`].
pub fn fold<F: Scalar>(stack: &Tensor<F>) -> Result<TokenBatch<F>> {
    let &[n, c, h, w] = stack.shape() else {
        return Err(Error::Dimension(format!(
            "fold expects a (T, C, H', W') stack, got shape {:?}",
            stack.shape()
        )));
    };
    grid_side(n)?;
    Ok(TokenBatch {
        n_tokens: n,
        channels: c,
        token_h: h,
        token_w: w,
        data: stack.data().to_vec(),
    })
}

/// Fold a list of per-token tensors; all items must share one `(C, H', W')` shape.
pub fn fold_items<F: Scalar>(items: &[Tensor<F>]) -> Result<TokenBatch<F>> {
    let first = items
        .first()
        .ok_or_else(|| Error::Dimension("fold needs at least one token".into()))?;
    let &[c, h, w] = first.shape() else {
        return Err(Error::Dimension(format!("token items must be (C, H', W'), got {:?}", first.shape())));
    };
    let mut data = Vec::with_capacity(items.len() * first.len());
    for (i, t) in items.iter().enumerate() {
        if t.shape() != first.shape() {
            return Err(Error::Dimension(format!(
                "ragged token stack: item {i} has shape {:?}, item 0 has {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    grid_side(items.len())?;
    Ok(TokenBatch {
        n_tokens: items.len(),
        channels: c,
        token_h: h,
        token_w: w,
        data,
    })
}

/// One value per token: the downsampled ground truth or a model prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PointVector {
    pub values: Vec<f64>,
}

impl PointVector {
    pub fn new(values: Vec<f64>) -> Self {
        PointVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean gaze value of each token.
pub fn downsample_gaze(gaze: &GazeMap, n_tokens: usize) -> Result<PointVector> {
    let (side, th, tw) = token_dims(gaze.height(), gaze.width(), n_tokens)?;
    let w = gaze.width();
    let mut sums = vec![0.0f64; n_tokens];
    for (y, row) in gaze.data().chunks_exact(w).enumerate() {
        let r = y / th;
        for (c, cell) in row.chunks_exact(tw).enumerate() {
            sums[r * side + c] += cell.iter().map(|&v| f64::from(v)).sum::<f64>();
        }
    }
    let n = (th * tw) as f64;
    Ok(PointVector::new(sums.into_iter().map(|s| s / n).collect()))
}

/// Coordinate of token index `i` along one axis of a `side`-wide grid.
pub fn axis_coord(i: usize, side: usize) -> f64 {
    if side <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (side - 1) as f64
    }
}

/// `2 × H × W` grid: channel 0 is the token's column coordinate, channel 1 its
/// row coordinate, each equally spaced over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub height: usize,
    pub width: usize,
    pub side: usize,
    pub data: Vec<f64>,
}

impl CoordGrid {
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    /// `(x, y)` coordinate pair of token `i`.
    pub fn token_coord(&self, i: usize) -> (f64, f64) {
        (axis_coord(i % self.side, self.side), axis_coord(i / self.side, self.side))
    }
}

pub fn coord_grid(h: usize, w: usize, n_tokens: usize) -> Result<CoordGrid> {
    let (side, th, tw) = token_dims(h, w, n_tokens)?;
    let mut data = vec![0.0; 2 * h * w];
    for y in 0..h {
        let cy = axis_coord(y / th, side);
        for x in 0..w {
            data[y * w + x] = axis_coord(x / tw, side);
            data[(h + y) * w + x] = cy;
        }
    }
    Ok(CoordGrid {
        height: h,
        width: w,
        side,
        data,
    })
}
