//! Modality front-end: a same-length 1-D convolution projecting raw features
//! to a common width, plus sinusoidal positional encoding added to the
//! projected sequence.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Which input stream a sequence carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    Audio,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Video];

    pub fn short(&self) -> &'static str {
        match self {
            Modality::Text => "t",
            Modality::Audio => "a",
            Modality::Video => "v",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }

    pub fn from_short(s: &str) -> Result<Self> {
        match s {
            "t" => Ok(Modality::Text),
            "a" => Ok(Modality::Audio),
            "v" => Ok(Modality::Video),
            other => Err(Error::Config(format!(
                "unknown modality '{other}' (expected t|a|v)"
            ))),
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A length-T sequence of width-d feature rows tagged with its modality.
/// One row per utterance.
#[derive(Debug, Clone)]
pub struct ModalitySequence {
    modality: Modality,
    data: Array2<f64>,
}

impl ModalitySequence {
    pub fn new(modality: Modality, data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "modality sequence needs at least one utterance".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "modality sequence contains a non-finite value".into(),
            ));
        }
        Ok(Self { modality, data })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

/// Same-length 1-D convolution along the utterance axis. The kernel width
/// must be odd so zero padding is symmetric and T is preserved.
///
/// `weight` is `(kernel_width, in_width, out_width)`.
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    modality: Modality,
    pub(crate) weight: Array3<f64>,
    pub(crate) bias: Array1<f64>,
}

impl Conv1dLayer {
    pub fn new(modality: Modality, weight: Array3<f64>, bias: Array1<f64>) -> Result<Self> {
        let (k, _, out_width) = weight.dim();
        if k % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "conv kernel width must be odd, got {k}"
            )));
        }
        if bias.len() != out_width {
            return Err(Error::ShapeMismatch {
                what: "conv bias",
                expected: format!("({out_width},)"),
                got: format!("({},)", bias.len()),
            });
        }
        Ok(Self {
            modality,
            weight,
            bias,
        })
    }

    /// Random layer with weights `~ N(0, 1/(k * in_width))` and zero bias.
    pub fn init<R: Rng>(
        modality: Modality,
        kernel_width: usize,
        in_width: usize,
        out_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let scale = Normal::new(0.0, (1.0 / (kernel_width * in_width) as f64).sqrt()).unwrap();
        let weight =
            Array3::from_shape_fn((kernel_width, in_width, out_width), |_| scale.sample(rng));
        Self::new(modality, weight, Array1::zeros(out_width))
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn kernel_width(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_width(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_width(&self) -> usize {
        self.weight.dim().2
    }

    /// `y[t, o] = bias[o] + sum_{tau, i} weight[tau, i, o] * x[t + tau - k/2, i]`
    /// with zero padding outside the sequence.
    pub fn forward(&self, x: &ModalitySequence) -> Result<ModalitySequence> {
        if x.modality() != self.modality {
            return Err(Error::InvalidParameter(format!(
                "conv layer is for {} input, got {}",
                self.modality,
                x.modality()
            )));
        }
        if x.width() != self.in_width() {
            return Err(Error::ShapeMismatch {
                what: "conv input width",
                expected: format!("{}", self.in_width()),
                got: format!("{}", x.width()),
            });
        }
        let data = self.forward_raw(x.data());
        ModalitySequence::new(self.modality, data)
    }

    pub(crate) fn forward_raw(&self, x: &Array2<f64>) -> Array2<f64> {
        let (k, in_width, out_width) = self.weight.dim();
        let len = x.nrows();
        let half = (k / 2) as isize;
        let mut y = Array2::zeros((len, out_width));
        for t in 0..len {
            for o in 0..out_width {
                let mut acc = self.bias[o];
                for tau in 0..k {
                    let src = t as isize + tau as isize - half;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for i in 0..in_width {
                        acc += self.weight[[tau, i, o]] * x[[src as usize, i]];
                    }
                }
                y[[t, o]] = acc;
            }
        }
        y
    }

    /// Weight and bias gradients for an upstream gradient `gy` of the output.
    pub(crate) fn backward(&self, x: &Array2<f64>, gy: &Array2<f64>) -> Conv1dGrads {
        let (k, in_width, out_width) = self.weight.dim();
        let len = x.nrows();
        let half = (k / 2) as isize;
        let mut gw = Array3::zeros((k, in_width, out_width));
        let mut gb = Array1::zeros(out_width);
        for t in 0..len {
            for o in 0..out_width {
                let g = gy[[t, o]];
                gb[o] += g;
                for tau in 0..k {
                    let src = t as isize + tau as isize - half;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for i in 0..in_width {
                        gw[[tau, i, o]] += g * x[[src as usize, i]];
                    }
                }
            }
        }
        Conv1dGrads {
            weight: gw,
            bias: gb,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv1dGrads {
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

/// Sinusoidal positional encoding: row `pos` holds
/// `sin(pos / 10000^(2i/width))` in column `2i` and
/// `cos(pos / 10000^(2i/width))` in column `2i+1`.
///
/// The width must be even; odd widths leave the trailing column undefined.
pub fn positional_encoding(len: usize, width: usize) -> Result<Array2<f64>> {
    if width % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "positional encoding width must be even, got {width}"
        )));
    }
    let mut pe = Array2::zeros((len, width));
    for pos in 0..len {
        for i in 0..width / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / width as f64);
            pe[[pos, 2 * i]] = angle.sin();
            pe[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    Ok(pe)
}

/// Convolution front-end followed by positional encoding:
/// `embed(x) = conv(x) + PE(T, out_width)`.
pub fn embed(layer: &Conv1dLayer, x: &ModalitySequence) -> Result<ModalitySequence> {
    let conv = layer.forward(x)?;
    let pe = positional_encoding(conv.len(), conv.width())?;
    ModalitySequence::new(layer.modality(), conv.data() + &pe)
}
