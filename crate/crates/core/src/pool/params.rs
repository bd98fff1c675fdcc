use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_HEAD_INIT};

/// How wound tokens are aggregated before the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Softmax weights from `Linear(C, h) -> tanh -> Linear(h, 1)`.
    #[default]
    Attention,
    /// Uniform `1/N` weights; the attention MLP is unused.
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "attention" => Ok(Pooling::Attention),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::Config(format!("unknown pooling {other:?} (attention|mean)"))),
        }
    }
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Attention => "attention",
            Pooling::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadShape {
    pub channels: usize,
    pub hidden: usize,
    pub dim: usize,
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub pw: usize,
    pub pb: usize,
    pub gain: usize,
    pub bias: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(s: HeadShape) -> Self {
        let (c, h, d) = (s.channels, s.hidden, s.dim);
        let w1 = 0;
        let b1 = w1 + c * h;
        let w2 = b1 + h;
        let b2 = w2 + h;
        let pw = b2 + 1;
        let pb = pw + c * d;
        let gain = pb + d;
        let bias = gain + d;
        Layout {
            w1,
            b1,
            w2,
            b2,
            pw,
            pb,
            gain,
            bias,
            total: bias + d,
        }
    }
}

/// Trainable weights of the attention MLP, the linear predictor and the layer norm,
/// stored in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    shape: HeadShape,
    pub(crate) layout: Layout,
    pub(crate) data: Vec<f64>,
    pub pooling: Pooling,
    pub eps_ln: f64,
}

macro_rules! tensor {
    ($name:ident, $name_mut:ident, $start:ident, $end:ident) => {
        pub fn $name(&self) -> &[f64] {
            &self.data[self.layout.$start..self.layout.$end]
        }

        pub fn $name_mut(&mut self) -> &mut [f64] {
            &mut self.data[self.layout.$start..self.layout.$end]
        }
    };
}

impl HeadParams {
    /// Uniform `+-sqrt(1/fan_in)` init for the linear layers, unit gain, zero bias.
    pub fn init(shape: HeadShape, pooling: Pooling, eps_ln: f64, seed: u64) -> Result<Self> {
        validate_shape(shape, eps_ln)?;
        let layout = Layout::new(shape);
        let mut data = vec![0.0; layout.total];
        let mut rng = seeded(seed, STREAM_HEAD_INIT);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = (1.0 / fan_in as f64).sqrt();
            for v in &mut data[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(layout.w1..layout.w2, shape.channels);
        fill(layout.w2..layout.pw, shape.hidden);
        fill(layout.pw..layout.gain, shape.channels);
        data[layout.gain..layout.bias].iter_mut().for_each(|g| *g = 1.0);
        Ok(HeadParams {
            shape,
            layout,
            data,
            pooling,
            eps_ln,
        })
    }

    pub fn from_flat(shape: HeadShape, pooling: Pooling, eps_ln: f64, data: Vec<f64>) -> Result<Self> {
        validate_shape(shape, eps_ln)?;
        let layout = Layout::new(shape);
        if data.len() != layout.total {
            return Err(Error::Dimension(format!(
                "head with shape {shape:?} needs {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("head parameters must be finite".into()));
        }
        Ok(HeadParams {
            shape,
            layout,
            data,
            pooling,
            eps_ln,
        })
    }

    pub fn shape(&self) -> HeadShape {
        self.shape
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    tensor!(attn_w1, attn_w1_mut, w1, b1);
    tensor!(attn_b1, attn_b1_mut, b1, w2);
    tensor!(attn_w2, attn_w2_mut, w2, b2);
    tensor!(pred_w, pred_w_mut, pw, pb);
    tensor!(pred_b, pred_b_mut, pb, gain);
    tensor!(ln_gain, ln_gain_mut, gain, bias);
    tensor!(ln_bias, ln_bias_mut, bias, total);

    pub fn attn_b2(&self) -> f64 {
        self.data[self.layout.b2]
    }

    pub fn set_attn_b2(&mut self, v: f64) {
        self.data[self.layout.b2] = v;
    }

    fn tensors(&self) -> [(&'static str, usize, usize, &[f64]); 8] {
        let HeadShape { channels: c, hidden: h, dim: d } = self.shape;
        [
            ("attn_w1", c, h, self.attn_w1()),
            ("attn_b1", 1, h, self.attn_b1()),
            ("attn_w2", h, 1, self.attn_w2()),
            ("attn_b2", 1, 1, &self.data[self.layout.b2..self.layout.pw]),
            ("pred_w", c, d, self.pred_w()),
            ("pred_b", 1, d, self.pred_b()),
            ("ln_gain", 1, d, self.ln_gain()),
            ("ln_bias", 1, d, self.ln_bias()),
        ]
    }

    /// Text container: a `head,...` line, then per tensor a `tensor,<name>,<rows>,<cols>`
    /// section header followed by `rows` comma-separated lines.
    pub fn to_csv_string(&self) -> String {
        let HeadShape { channels, hidden, dim } = self.shape;
        let mut out = format!(
            "head,channels={channels},hidden={hidden},dim={dim},pooling={},eps_ln={}\n",
            self.pooling.as_str(),
            self.eps_ln
        );
        for (name, rows, cols, values) in self.tensors() {
            let _ = writeln!(out, "tensor,{name},{rows},{cols}");
            for r in 0..rows {
                let row = &values[r * cols..(r + 1) * cols];
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let fail = |line: usize, msg: String| Error::format(origin, Some(line), msg);
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| fail(1, "empty head file".into()))?;
        let mut fields = header.split(',');
        if fields.next() != Some("head") {
            return Err(fail(1, format!("expected `head,...` header, got {header:?}")));
        }
        let mut kv = std::collections::HashMap::new();
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| fail(1, format!("bad header field {f:?}")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| fail(1, format!("header lacks {k}")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| fail(1, format!("bad {k}"))) };
        let shape = HeadShape {
            channels: num("channels")?,
            hidden: num("hidden")?,
            dim: num("dim")?,
        };
        let pooling: Pooling = get("pooling")?.parse()?;
        let eps_ln: f64 = get("eps_ln")?.parse().map_err(|_| fail(1, "bad eps_ln".into()))?;
        let layout = Layout::new(shape);
        let mut data = Vec::with_capacity(layout.total);
        let expected: Vec<(&str, usize, usize)> = vec![
            ("attn_w1", shape.channels, shape.hidden),
            ("attn_b1", 1, shape.hidden),
            ("attn_w2", shape.hidden, 1),
            ("attn_b2", 1, 1),
            ("pred_w", shape.channels, shape.dim),
            ("pred_b", 1, shape.dim),
            ("ln_gain", 1, shape.dim),
            ("ln_bias", 1, shape.dim),
        ];
        for (name, rows, cols) in expected {
            let (ln, sec) = lines
                .next()
                .ok_or_else(|| fail(0, format!("missing tensor section {name}")))?;
            let want = format!("tensor,{name},{rows},{cols}");
            if sec.trim() != want {
                return Err(fail(ln + 1, format!("expected section header {want:?}, got {sec:?}")));
            }
            for _ in 0..rows {
                let (ln, row) = lines.next().ok_or_else(|| fail(0, format!("tensor {name} is truncated")))?;
                let before = data.len();
                for f in row.split(',') {
                    data.push(f.trim().parse::<f64>().map_err(|_| fail(ln + 1, format!("cannot parse {f:?}")))?);
                }
                if data.len() - before != cols {
                    return Err(fail(ln + 1, format!("tensor {name} row has {} values, expected {cols}", data.len() - before)));
                }
            }
        }
        if let Some((ln, extra)) = lines.next() {
            return Err(fail(ln + 1, format!("unexpected trailing line {extra:?}")));
        }
        HeadParams::from_flat(shape, pooling, eps_ln, data)
    }
}

fn validate_shape(shape: HeadShape, eps_ln: f64) -> Result<()> {
    if shape.channels == 0 || shape.hidden == 0 || shape.dim == 0 {
        return Err(Error::Config(format!("head shape must be positive, got {shape:?}")));
    }
    if !(eps_ln >= 0.0 && eps_ln.is_finite()) {
        return Err(Error::Config(format!("eps_ln must be a nonnegative number, got {eps_ln}")));
    }
    if shape.dim == 1 && eps_ln == 0.0 {
        return Err(Error::Config(
            "dim = 1 with eps_ln = 0 divides by zero in layer normalization".into(),
        ));
    }
    Ok(())
}
