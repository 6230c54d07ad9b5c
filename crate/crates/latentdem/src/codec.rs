//! Linear encoder/decoder pair standing in for a latent autoencoder.
//!
//! decode(z) = W z + b reshaped to H×W, encode(x) = W⁺ (vec(x) − b) with
//! W⁺ the Moore-Penrose pseudo-inverse. D = H·W ≥ N, so the latent is a
//! compression. A rank-deficient W makes decode one-to-many on its range,
//! which is the pathology the gluing residual exists to control.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fft::fft2;
use crate::forward::ForwardOperator;
use crate::image::Image;
use crate::rng::{named_stream, normal_vec};

#[derive(Debug, Clone)]
pub struct LinearCodec {
    decode_matrix: DMatrix<f64>,
    encode_matrix: DMatrix<f64>,
    offset: DVector<f64>,
    img_height: usize,
    img_width: usize,
}

impl LinearCodec {
    /// Builds a codec from a D×N decode matrix and a length-D offset.
    pub fn new(
        decode_matrix: DMatrix<f64>,
        offset: DVector<f64>,
        img_height: usize,
        img_width: usize,
    ) -> Result<Self> {
        let (d, n) = decode_matrix.shape();
        if d != img_height * img_width {
            return Err(Error::Dimension(format!(
                "decode matrix has {d} rows but image is {img_height}x{img_width}"
            )));
        }
        if d < n {
            return Err(Error::Dimension(format!(
                "latent dim {n} exceeds pixel dim {d}; latent must be a compression"
            )));
        }
        if offset.len() != d {
            return Err(Error::Dimension("offset length != pixel dim".into()));
        }
        let encode_matrix = decode_matrix
            .clone()
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Singular(format!("pseudo-inverse failed: {e}")))?;
        Ok(Self { decode_matrix, encode_matrix, offset, img_height, img_width })
    }

    /// Identity codec on h×w images (N = D, W = I, b = 0).
    pub fn identity(img_height: usize, img_width: usize) -> Self {
        let d = img_height * img_width;
        Self {
            decode_matrix: DMatrix::identity(d, d),
            encode_matrix: DMatrix::identity(d, d),
            offset: DVector::zeros(d),
            img_height,
            img_width,
        }
    }

    /// Seeded random codec whose columns are orthonormalized band-limited
    /// images, with a constant pixel offset. Good-natured stand-in for a
    /// learned decoder: smooth range, exact pseudo-inverse.
    pub fn random_smooth(
        img_height: usize,
        img_width: usize,
        latent_dim: usize,
        smooth_sigma: f64,
        offset_level: f64,
        seed: u64,
    ) -> Result<Self> {
        let d = img_height * img_width;
        if latent_dim > d {
            return Err(Error::Dimension("latent_dim exceeds pixel count".into()));
        }
        let mut rng = named_stream(seed, "codec-columns");
        let mut cols = DMatrix::zeros(d, latent_dim);
        for j in 0..latent_dim {
            let noise = Image::new(img_height, img_width, normal_vec(&mut rng, d))?;
            let smooth = gaussian_lowpass(&noise, smooth_sigma);
            cols.set_column(j, &DVector::from_column_slice(smooth.data()));
        }
        let q = orthonormalize(&cols)?;
        Self::new(q, DVector::from_element(d, offset_level), img_height, img_width)
    }

    pub fn latent_dim(&self) -> usize {
        self.decode_matrix.ncols()
    }

    pub fn pixel_dim(&self) -> usize {
        self.decode_matrix.nrows()
    }

    pub fn img_shape(&self) -> (usize, usize) {
        (self.img_height, self.img_width)
    }

    pub fn decode_matrix(&self) -> &DMatrix<f64> {
        &self.decode_matrix
    }

    pub fn encode_matrix(&self) -> &DMatrix<f64> {
        &self.encode_matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn decode(&self, z: &DVector<f64>) -> Result<Image> {
        if z.len() != self.latent_dim() {
            return Err(Error::Dimension(format!(
                "latent length {} != codec latent dim {}",
                z.len(),
                self.latent_dim()
            )));
        }
        let px = &self.decode_matrix * z + &self.offset;
        Image::from_vector(self.img_height, self.img_width, &px)
    }

    pub fn encode(&self, x: &Image) -> Result<DVector<f64>> {
        if x.len() != self.pixel_dim() {
            return Err(Error::Dimension(format!(
                "image size {} != codec pixel dim {}",
                x.len(),
                self.pixel_dim()
            )));
        }
        Ok(&self.encode_matrix * (x.to_vector() - &self.offset))
    }

    /// Wᵀ v: pulls an image-space direction back to latent space. This is
    /// the decode Jacobian transpose, not the encoder.
    pub fn decode_transpose(&self, v: &Image) -> Result<DVector<f64>> {
        if v.len() != self.pixel_dim() {
            return Err(Error::Dimension("image size != codec pixel dim".into()));
        }
        Ok(self.decode_matrix.tr_mul(&v.to_vector()))
    }

    /// (W⁺)ᵀ r: pushes a latent-space direction into image space.
    pub fn encode_transpose(&self, r: &DVector<f64>) -> Result<Image> {
        if r.len() != self.latent_dim() {
            return Err(Error::Dimension("latent length != codec latent dim".into()));
        }
        let px = self.encode_matrix.tr_mul(r);
        Image::from_vector(self.img_height, self.img_width, &px)
    }
}

/// Gluing residual r = ẑ_0 − E(Aᵀy + (I − AᵀA)·D(ẑ_0)).
///
/// Returns (‖r‖², ∂‖r‖²/∂ẑ_0); chaining through whatever produced ẑ_0 is
/// the caller's job. Vanishes when D(ẑ_0) is a fixed point of
/// x ↦ Aᵀy + (I − AᵀA)x and the codec inverts exactly on it.
pub fn gluing_residual(
    codec: &LinearCodec,
    z0_hat: &DVector<f64>,
    y: &Image,
    a: &ForwardOperator,
) -> Result<(f64, DVector<f64>)> {
    let decoded = codec.decode(z0_hat)?;
    let at_y = a.transpose_apply(y)?;
    let ata_dec = a.transpose_apply(&a.apply(&decoded)?)?;
    // target = Aᵀy + (I − AᵀA) D(ẑ_0)
    let target = at_y.add(&decoded.sub(&ata_dec)?)?;
    let r = z0_hat - codec.encode(&target)?;
    let value = r.norm_squared();

    // ∂r/∂ẑ_0 = I − W⁺(I − AᵀA)W  ⇒  grad = 2 (r − Wᵀ(I − AᵀA)(W⁺ᵀ r))
    let u = codec.encode_transpose(&r)?;
    let ata_u = a.transpose_apply(&a.apply(&u)?)?;
    let pulled = codec.decode_transpose(&u.sub(&ata_u)?)?;
    let grad = (r - pulled) * 2.0;
    Ok((value, grad))
}

fn gaussian_lowpass(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let spec = fft2(img);
    let mut filtered = spec;
    for i in 0..h {
        for j in 0..w {
            let fy = freq(i, h);
            let fx = freq(j, w);
            let g = (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * (fy * fy + fx * fx))
                .exp();
            filtered[i * w + j] *= g;
        }
    }
    crate::fft::ifft2_real(&filtered, h, w)
}

fn freq(i: usize, n: usize) -> f64 {
    let i = i as f64;
    let n = n as f64;
    if i <= n / 2.0 {
        i / n
    } else {
        (i - n) / n
    }
}

fn orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = m.clone().qr();
    let q = qr.q();
    // QR keeps column count; guard against rank collapse in the input
    let r = qr.r();
    for j in 0..r.ncols() {
        if r[(j, j)].abs() < 1e-10 {
            return Err(Error::Singular("codec columns are rank deficient".into()));
        }
    }
    Ok(q)
}

/// Plain-text matrix file: one row per line, whitespace-separated decimals.
pub fn read_matrix_text(path: &std::path::Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "line {}: ragged matrix row",
                    lineno + 1
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix file".into()));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.into_iter().flatten()))
}

pub fn write_matrix_text(path: &std::path::Path, m: &DMatrix<f64>) -> Result<()> {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Kernel;
    use approx::assert_relative_eq;

    fn random_codec(d_h: usize, d_w: usize, n: usize, seed: u64) -> LinearCodec {
        let mut rng = named_stream(seed, "codec-test");
        let d = d_h * d_w;
        let w = DMatrix::from_vec(d, n, normal_vec(&mut rng, d * n));
        let b = DVector::from_vec(normal_vec(&mut rng, d));
        LinearCodec::new(w, b, d_h, d_w).unwrap()
    }

    #[test]
    fn identity_codec_roundtrips_exactly() {
        let codec = LinearCodec::identity(2, 3);
        let z = DVector::from_vec(vec![1.0, -2.0, 0.5, 4.0, 0.0, 3.0]);
        let img = codec.decode(&z).unwrap();
        assert_eq!(img.to_vector(), z);
        assert_eq!(codec.encode(&img).unwrap(), z);
    }

    #[test]
    fn zero_latent_decodes_to_offset() {
        let codec = random_codec(4, 4, 3, 21);
        let img = codec.decode(&DVector::zeros(3)).unwrap();
        for (a, b) in img.data().iter().zip(codec.offset().iter()) {
            assert_relative_eq!(a, b);
        }
    }

    #[test]
    fn encode_decode_is_projection() {
        // decode ∘ encode ∘ decode = decode for a full-column-rank 16×8 W
        let codec = random_codec(4, 4, 8, 22);
        let mut rng = named_stream(23, "proj");
        let z = DVector::from_vec(normal_vec(&mut rng, 8));
        let img = codec.decode(&z).unwrap();
        let back = codec.decode(&codec.encode(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // and encode ∘ decode = id on latents
        let z_back = codec.encode(&codec.decode(&z).unwrap()).unwrap();
        assert!((&z_back - &z).norm() < 1e-10);
    }

    #[test]
    fn gluing_vanishes_for_identity_operator_on_consistent_state() {
        let codec = random_codec(4, 4, 5, 24);
        let mut rng = named_stream(25, "glue1");
        let z0 = DVector::from_vec(normal_vec(&mut rng, 5));
        let y = codec.decode(&z0).unwrap();
        let a = ForwardOperator::identity(0.1);
        let (value, _) = gluing_residual(&codec, &z0, &y, &a).unwrap();
        assert!(value < 1e-20, "value {value}");
    }

    #[test]
    fn gluing_vanishes_for_zero_operator_injective_codec() {
        let codec = random_codec(4, 4, 5, 26);
        let mut rng = named_stream(27, "glue2");
        let z0 = DVector::from_vec(normal_vec(&mut rng, 5));
        let y = Image::zeros(4, 4);
        let a = ForwardOperator::zero(0.1);
        let (value, _) = gluing_residual(&codec, &z0, &y, &a).unwrap();
        assert!(value < 1e-20, "value {value}");
    }

    #[test]
    fn gluing_matches_dense_evaluation_rank_deficient() {
        // rank-deficient decode: last column duplicates the first
        let mut rng = named_stream(28, "glue3");
        let d = 16;
        let n = 4;
        let mut w = DMatrix::from_vec(d, n, normal_vec(&mut rng, d * n));
        let c0 = w.column(0).into_owned();
        w.set_column(n - 1, &c0);
        let b = DVector::from_vec(normal_vec(&mut rng, d));
        let codec = LinearCodec::new(w.clone(), b.clone(), 4, 4).unwrap();
        let kernel = Kernel::gaussian(3, 0.7).unwrap();
        let a = ForwardOperator::convolution(kernel.clone(), 0.0);
        let z0 = DVector::from_vec(normal_vec(&mut rng, n));
        let y = Image::new(4, 4, normal_vec(&mut rng, d)).unwrap();

        let (value, grad) = gluing_residual(&codec, &z0, &y, &a).unwrap();

        // dense evaluation: materialize A as a matrix via columns
        let mut a_mat = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = Image::zeros(4, 4);
            e.data_mut()[j] = 1.0;
            let col = a.apply(&e).unwrap();
            a_mat.set_column(j, &col.to_vector());
        }
        let wp = codec.encode_matrix().clone();
        let eye = DMatrix::<f64>::identity(d, d);
        let inner = &a_mat.transpose() * y.to_vector()
            + (&eye - &a_mat.transpose() * &a_mat) * (&w * &z0 + &b);
        let r_dense = &z0 - &wp * (inner - &b);
        assert!((value - r_dense.norm_squared()).abs() < 1e-10 * value.max(1.0));

        // gradient vs central finite differences
        let f = |zv: &DVector<f64>| {
            let (v, _) = gluing_residual(&codec, zv, &y, &a).unwrap();
            v
        };
        let h = 1e-6;
        for i in 0..n {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "component {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn matrix_text_roundtrip() {
        let dir = std::env::temp_dir().join("latentdem-mat-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.txt");
        let mut rng = named_stream(29, "mat");
        let m = DMatrix::from_vec(3, 4, normal_vec(&mut rng, 12));
        write_matrix_text(&path, &m).unwrap();
        let back = read_matrix_text(&path).unwrap();
        assert_eq!(m.shape(), back.shape());
        for (a, b) in m.iter().zip(back.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_expansion_codec() {
        let w = DMatrix::<f64>::identity(4, 6);
        assert!(LinearCodec::new(w, DVector::zeros(4), 2, 2).is_err());
    }
}
