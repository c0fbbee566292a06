//! Temporal contrastive features.
//!
//! A trace is cut into overlapping windows, two randomly scaled and noised
//! views of each window are embedded by a small two-layer network, and the
//! network is trained with the InfoNCE loss on cosine similarities so that the
//! two views of a window agree while other windows in the batch act as
//! negatives. The pattern vector of a trace is the elementwise mean and
//! (population) variance of its window embeddings.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;
use crate::Real;

const ENCODER_MAGIC: &str = "lelsim-encoder 1";

/// `L × C` block of consecutive samples, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T = f64> {
    pub samples: Vec<T>,
    pub len: usize,
    pub channels: usize,
    pub origin_index: usize,
}

fn check_segmentation(n: usize, len: usize, stride: usize) -> Result<()> {
    if len < 2 {
        return Err(Error::invalid(format!(
            "window length must be at least 2, got {len}"
        )));
    }
    if stride == 0 || stride > len {
        return Err(Error::invalid(format!(
            "stride must lie in [1, {len}], got {stride}"
        )));
    }
    if n < len {
        return Err(Error::invalid(format!(
            "trace of {n} samples is shorter than the window length {len}"
        )));
    }
    Ok(())
}

/// Default stride: half the window, at least one sample.
pub fn default_stride(len: usize) -> usize {
    (len / 2).max(1)
}

/// Windows over all channels of `trace` at origins `0, stride, 2·stride, …`.
pub fn segment_windows<T: Real>(
    trace: &Trace<T>,
    len: usize,
    stride: usize,
) -> Result<Vec<Window<T>>> {
    let n = trace.len();
    check_segmentation(n, len, stride)?;
    let c = trace.channels.len();
    let windows = (0..=(n - len) / stride)
        .map(|w| {
            let origin = w * stride;
            let mut samples = Vec::with_capacity(len * c);
            for t in origin..origin + len {
                samples.extend(trace.channels.iter().map(|ch| ch.values[t]));
            }
            Window {
                samples,
                len,
                channels: c,
                origin_index: origin,
            }
        })
        .collect();
    Ok(windows)
}

/// Single-channel convenience form of [`segment_windows`].
pub fn segment_series<T: Real>(values: &[T], len: usize, stride: usize) -> Result<Vec<Window<T>>> {
    check_segmentation(values.len(), len, stride)?;
    Ok((0..=(values.len() - len) / stride)
        .map(|w| {
            let origin = w * stride;
            Window {
                samples: values[origin..origin + len].to_vec(),
                len,
                channels: 1,
                origin_index: origin,
            }
        })
        .collect())
}

fn mean_std<T: Real>(x: &[T]) -> (T, T) {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// Two independent views `s·x + ε`, `s ~ U[lo, hi]`,
/// `ε ~ N(0, (noise_frac·std(x))²)`.
pub fn augment<T: Real, R: Rng + ?Sized>(
    window: &Window<T>,
    scale_range: (T, T),
    noise_frac: T,
    rng: &mut R,
) -> (Window<T>, Window<T>) {
    let (_, std) = mean_std(&window.samples);
    let sigma = noise_frac * std;
    let view = |rng: &mut R| {
        let u: f64 = rng.random();
        let s = scale_range.0 + (scale_range.1 - scale_range.0) * T::of(u);
        let samples = window
            .samples
            .iter()
            .map(|&x| {
                let g: f64 = rng.sample(StandardNormal);
                s * x + sigma * T::of(g)
            })
            .collect();
        Window {
            samples,
            ..window.clone()
        }
    };
    let a = view(rng);
    let b = view(rng);
    (a, b)
}

/// Two-layer network `z = W2·tanh(W1·x̂ + b1) + b2` on standardized input
/// `x̂ = (x − input_shift)/input_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T = f64> {
    pub window_len: usize,
    pub channels: usize,
    pub hidden: usize,
    pub dim: usize,
    pub input_shift: T,
    pub input_scale: T,
    /// `hidden × (window_len·channels)`, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// `dim × hidden`, row-major.
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Real> Encoder<T> {
    /// Xavier-uniform weights, zero biases.
    pub fn xavier(
        window_len: usize,
        channels: usize,
        hidden: usize,
        dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = window_len * channels;
        let mut layer = |fan_in: usize, fan_out: usize| -> Vec<T> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out)
                .map(|_| T::of(rng.random_range(-a..a)))
                .collect()
        };
        let w1 = layer(input, hidden);
        let w2 = layer(hidden, dim);
        Self {
            window_len,
            channels,
            hidden,
            dim,
            input_shift: T::zero(),
            input_scale: T::one(),
            w1,
            b1: vec![T::zero(); hidden],
            w2,
            b2: vec![T::zero(); dim],
        }
    }

    pub fn input_len(&self) -> usize {
        self.window_len * self.channels
    }

    fn check(&self, window: &Window<T>) -> Result<()> {
        if window.samples.len() != self.input_len() {
            return Err(Error::invalid(format!(
                "window of {} values does not match encoder input {}×{}",
                window.samples.len(),
                self.window_len,
                self.channels
            )));
        }
        Ok(())
    }

    fn standardize(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .map(|&v| (v - self.input_shift) / self.input_scale)
            .collect()
    }

    /// Forward pass returning `(standardized input, hidden activation, output)`.
    fn forward(&self, x: &[T]) -> ForwardPass<T> {
        let xs = self.standardize(x);
        let m = xs.len();
        let hidden: Vec<T> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * m..(j + 1) * m];
                (dot(row, &xs) + self.b1[j]).tanh()
            })
            .collect();
        let out = (0..self.dim)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                dot(row, &hidden) + self.b2[k]
            })
            .collect();
        (xs, hidden, out)
    }

    pub fn encode(&self, window: &Window<T>) -> Result<Vec<T>> {
        self.check(window)?;
        Ok(self.forward(&window.samples).2)
    }

    pub fn encode_all(&self, windows: &[Window<T>]) -> Result<Vec<Vec<T>>> {
        windows.iter().map(|w| self.encode(w)).collect()
    }

    /// Plain-text record: a header with the shape and activation followed by
    /// one line per parameter block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{ENCODER_MAGIC}");
        let _ = writeln!(out, "window_len {}", self.window_len);
        let _ = writeln!(out, "channels {}", self.channels);
        let _ = writeln!(out, "hidden {}", self.hidden);
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "activation tanh");
        let _ = writeln!(out, "input_shift {}", self.input_shift);
        let _ = writeln!(out, "input_scale {}", self.input_scale);
        for (name, block) in [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ] {
            out.push_str(name);
            for v in block {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(ENCODER_MAGIC) {
            return Err(Error::Parse("not an encoder record".into()));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::MissingField(name.to_string()))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(Error::Parse(format!(
                    "expected `{name}` in encoder record, found `{line}`"
                )));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let int = |v: Vec<String>, name: &str| -> Result<usize> {
            v.first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad `{name}`")))
        };
        let floats = |v: Vec<String>, name: &str, n: usize| -> Result<Vec<T>> {
            let out: Vec<T> = v
                .iter()
                .map(|s| s.parse::<f64>().map(T::of))
                .collect::<Result<_, _>>()
                .map_err(|_| Error::Parse(format!("bad number in `{name}`")))?;
            if out.len() != n {
                return Err(Error::Parse(format!(
                    "`{name}` has {} values, expected {n}",
                    out.len()
                )));
            }
            Ok(out)
        };
        let window_len = int(field("window_len")?, "window_len")?;
        let channels = int(field("channels")?, "channels")?;
        let hidden = int(field("hidden")?, "hidden")?;
        let dim = int(field("dim")?, "dim")?;
        let act = field("activation")?;
        if act.first().map(String::as_str) != Some("tanh") {
            return Err(Error::Parse(format!("unsupported activation {act:?}")));
        }
        let input_shift = floats(field("input_shift")?, "input_shift", 1)?[0];
        let input_scale = floats(field("input_scale")?, "input_scale", 1)?[0];
        let m = window_len * channels;
        Ok(Self {
            window_len,
            channels,
            hidden,
            dim,
            input_shift,
            input_scale,
            w1: floats(field("w1")?, "w1", hidden * m)?,
            b1: floats(field("b1")?, "b1", hidden)?,
            w2: floats(field("w2")?, "w2", dim * hidden)?,
            b2: floats(field("b2")?, "b2", dim)?,
        })
    }
}

fn norm<T: Real>(z: &[T]) -> T {
    z.iter().map(|&v| v * v).sum::<T>().sqrt()
}

fn normalized<T: Real>(rows: &[Vec<T>]) -> Result<(Vec<Vec<T>>, Vec<T>)> {
    let mut units = Vec::with_capacity(rows.len());
    let mut norms = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let n = norm(r);
        if !(n > T::zero()) {
            return Err(Error::invalid(format!("embedding row {i} has zero norm")));
        }
        units.push(r.iter().map(|&v| v / n).collect());
        norms.push(n);
    }
    Ok((units, norms))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let tail = n - n % 4;
    let rest: T = a[tail..].iter().zip(&b[tail..]).map(|(&x, &y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
}

/// Cosine similarity of two vectors.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    dot(a, b) / (norm(a) * norm(b))
}

/// Loss and its gradients with respect to both embedding matrices.
type NceOutput<T> = (T, Vec<Vec<T>>, Vec<Vec<T>>);

/// Input, hidden activation and embedding of one forward pass.
type ForwardPass<T> = (Vec<T>, Vec<T>, Vec<T>);

/// InfoNCE loss with gradients with respect to both embedding matrices.
fn info_nce<T: Real>(z1: &[Vec<T>], z2: &[Vec<T>], temperature: T) -> Result<NceOutput<T>> {
    let n = z1.len();
    if n == 0 || z2.len() != n {
        return Err(Error::invalid(
            "contrastive loss needs two non-empty embedding sets of equal size",
        ));
    }
    if !(temperature > T::zero()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let d = z1[0].len();
    if z1.iter().chain(z2).any(|r| r.len() != d) {
        return Err(Error::invalid(
            "embedding rows have inconsistent dimensions",
        ));
    }
    let (u1, n1) = normalized(z1)?;
    let (u2, n2) = normalized(z2)?;
    let mut loss = T::zero();
    // dL/dsim, with sim = u1_i · u2_j
    let mut g = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        let logits: Vec<T> = (0..n).map(|j| dot(&u1[i], &u2[j]) / temperature).collect();
        let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[i];
        for j in 0..n {
            let p = (logits[j] - lse).exp();
            g[i][j] = (p - if i == j { T::one() } else { T::zero() }) / temperature;
        }
    }
    let back = |units: &[Vec<T>], norms: &[T], grads_u: Vec<Vec<T>>| -> Vec<Vec<T>> {
        grads_u
            .into_iter()
            .enumerate()
            .map(|(i, gu)| {
                let proj = dot(&units[i], &gu);
                gu.iter()
                    .zip(&units[i])
                    .map(|(&gv, &uv)| (gv - uv * proj) / norms[i])
                    .collect()
            })
            .collect()
    };
    let gu1: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let mut acc = vec![T::zero(); d];
            for j in 0..n {
                for (a, &v) in acc.iter_mut().zip(&u2[j]) {
                    *a += g[i][j] * v;
                }
            }
            acc
        })
        .collect();
    let gu2: Vec<Vec<T>> = (0..n)
        .map(|j| {
            let mut acc = vec![T::zero(); d];
            for i in 0..n {
                for (a, &v) in acc.iter_mut().zip(&u1[i]) {
                    *a += g[i][j] * v;
                }
            }
            acc
        })
        .collect();
    Ok((loss, back(&u1, &n1, gu1), back(&u2, &n2, gu2)))
}

/// `Σᵢ −log softmaxⱼ(cos(z1ᵢ, z2ⱼ)/τ)[i]`.
pub fn contrastive_loss<T: Real>(z1: &[Vec<T>], z2: &[Vec<T>], temperature: T) -> Result<T> {
    info_nce(z1, z2, temperature).map(|r| r.0)
}

/// Gradient of a scalar loss with respect to every encoder parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad<T = f64> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Real> EncoderGrad<T> {
    fn zeros(enc: &Encoder<T>) -> Self {
        Self {
            w1: vec![T::zero(); enc.w1.len()],
            b1: vec![T::zero(); enc.b1.len()],
            w2: vec![T::zero(); enc.w2.len()],
            b2: vec![T::zero(); enc.b2.len()],
        }
    }
}

/// Contrastive loss of the encoded view pairs and its exact gradient with
/// respect to the encoder parameters.
pub fn contrastive_loss_and_grad<T: Real>(
    encoder: &Encoder<T>,
    view1: &[Window<T>],
    view2: &[Window<T>],
    temperature: T,
) -> Result<(T, EncoderGrad<T>)> {
    let pass = |views: &[Window<T>]| -> Result<Vec<ForwardPass<T>>> {
        views
            .iter()
            .map(|w| {
                encoder.check(w)?;
                Ok(encoder.forward(&w.samples))
            })
            .collect()
    };
    let f1 = pass(view1)?;
    let f2 = pass(view2)?;
    let z1: Vec<Vec<T>> = f1.iter().map(|f| f.2.clone()).collect();
    let z2: Vec<Vec<T>> = f2.iter().map(|f| f.2.clone()).collect();
    let (loss, g1, g2) = info_nce(&z1, &z2, temperature)?;

    let mut grad = EncoderGrad::zeros(encoder);
    let (h, m) = (encoder.hidden, encoder.input_len());
    for ((xs, a, _), dz) in f1.iter().zip(&g1).chain(f2.iter().zip(&g2)) {
        let mut da = vec![T::zero(); h];
        for (k, &dzk) in dz.iter().enumerate() {
            grad.b2[k] += dzk;
            let row = &encoder.w2[k * h..(k + 1) * h];
            let grow = &mut grad.w2[k * h..(k + 1) * h];
            for j in 0..h {
                grow[j] += dzk * a[j];
                da[j] += row[j] * dzk;
            }
        }
        for j in 0..h {
            let dpre = da[j] * (T::one() - a[j] * a[j]);
            grad.b1[j] += dpre;
            let grow = &mut grad.w1[j * m..(j + 1) * m];
            for (gw, &x) in grow.iter_mut().zip(xs) {
                *gw += dpre * x;
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TclConfig {
    pub window_len: usize,
    /// Defaults to [`default_stride`].
    pub stride: Option<usize>,
    pub dim: usize,
    pub hidden: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub batch: usize,
    pub step_size: f64,
    pub scale_range: (f64, f64),
    pub noise_frac: f64,
}

impl Default for TclConfig {
    fn default() -> Self {
        Self {
            window_len: 5,
            stride: None,
            dim: 64,
            hidden: 128,
            temperature: 0.1,
            epochs: 200,
            batch: 64,
            step_size: 1e-2,
            scale_range: (0.8, 1.2),
            noise_frac: 0.05,
        }
    }
}

impl TclConfig {
    pub fn stride(&self) -> usize {
        self.stride
            .unwrap_or_else(|| default_stride(self.window_len))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2
            || self.dim == 0
            || self.hidden == 0
            || self.epochs == 0
            || self.batch < 2
        {
            return Err(Error::invalid(
                "TCL config needs window_len >= 2, dim, hidden, epochs >= 1 and batch >= 2",
            ));
        }
        if !(self.temperature > 0.0 && self.step_size > 0.0) {
            return Err(Error::invalid("temperature and step_size must be positive"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) || !(self.noise_frac >= 0.0) {
            return Err(Error::invalid(
                "need 0 < scale lo <= hi and noise_frac >= 0",
            ));
        }
        Ok(())
    }
}

/// A trained encoder with its per-epoch mean batch loss.
#[derive(Debug, Clone)]
pub struct TrainedEncoder<T = f64> {
    pub encoder: Encoder<T>,
    pub loss_history: Vec<T>,
}

/// Trains an encoder on `windows` by minibatch gradient descent on the mean
/// per-pair contrastive loss. Bit-reproducible for a fixed seed.
pub fn train_encoder<T: Real>(
    windows: &[Window<T>],
    cfg: &TclConfig,
    seed: u64,
) -> Result<TrainedEncoder<T>> {
    cfg.validate()?;
    if windows.len() < 2 {
        return Err(Error::invalid(
            "contrastive training needs at least two windows",
        ));
    }
    let first = &windows[0];
    if windows
        .iter()
        .any(|w| w.samples.len() != first.samples.len())
    {
        return Err(Error::invalid("windows have inconsistent shapes"));
    }
    let mut encoder = Encoder::xavier(first.len, first.channels, cfg.hidden, cfg.dim, seed);
    let all: Vec<T> = windows
        .iter()
        .flat_map(|w| w.samples.iter().copied())
        .collect();
    let (shift, scale) = mean_std(&all);
    encoder.input_shift = shift;
    encoder.input_scale = if scale > T::zero() { scale } else { T::one() };

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let scale_range = (T::of(cfg.scale_range.0), T::of(cfg.scale_range.1));
    let noise = T::of(cfg.noise_frac);
    let temperature = T::of(cfg.temperature);
    let step = T::of(cfg.step_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let (v1, v2): (Vec<_>, Vec<_>) = chunk
                .iter()
                .map(|&i| augment(&windows[i], scale_range, noise, &mut rng))
                .unzip();
            let (loss, grad) = match contrastive_loss_and_grad(&encoder, &v1, &v2, temperature) {
                Ok(r) => r,
                // a view that encodes to the zero vector carries no direction
                Err(Error::InvalidArgument(_)) => continue,
                Err(e) => return Err(e),
            };
            let n = T::from_usize(chunk.len()).unwrap();
            let lr = step / n;
            for (w, g) in encoder.w1.iter_mut().zip(&grad.w1) {
                *w -= lr * *g;
            }
            for (w, g) in encoder.b1.iter_mut().zip(&grad.b1) {
                *w -= lr * *g;
            }
            for (w, g) in encoder.w2.iter_mut().zip(&grad.w2) {
                *w -= lr * *g;
            }
            for (w, g) in encoder.b2.iter_mut().zip(&grad.b2) {
                *w -= lr * *g;
            }
            epoch_loss += loss / n;
            batches += 1;
        }
        history.push(if batches > 0 {
            epoch_loss / T::from_usize(batches).unwrap()
        } else {
            T::nan()
        });
    }
    Ok(TrainedEncoder {
        encoder,
        loss_history: history,
    })
}

/// First and second elementwise moments of a set of embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternVector<T = f64> {
    pub mean_block: Vec<T>,
    pub var_block: Vec<T>,
}

impl<T: Real> PatternVector<T> {
    /// `[mean_block, var_block]` concatenated.
    pub fn to_vec(&self) -> Vec<T> {
        self.mean_block
            .iter()
            .chain(&self.var_block)
            .copied()
            .collect()
    }

    /// Squared Euclidean distance between the concatenated vectors.
    pub fn distance_sq(&self, other: &Self) -> Result<T> {
        if self.mean_block.len() != other.mean_block.len() {
            return Err(Error::invalid("pattern vectors have different dimensions"));
        }
        Ok(self
            .to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(&a, b)| (a - b) * (a - b))
            .sum())
    }
}

pub fn pattern_vector<T: Real>(embeddings: &[Vec<T>]) -> Result<PatternVector<T>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::invalid("pattern vector needs at least one embedding"))?;
    let d = first.len();
    if embeddings.iter().any(|z| z.len() != d) {
        return Err(Error::invalid("embeddings have inconsistent dimensions"));
    }
    let n = T::from_usize(embeddings.len()).unwrap();
    let mut mean = vec![T::zero(); d];
    for z in embeddings {
        for (m, &v) in mean.iter_mut().zip(z) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); d];
    for z in embeddings {
        for ((s, &v), &m) in var.iter_mut().zip(z).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    Ok(PatternVector {
        mean_block: mean,
        var_block: var,
    })
}

/// Windows `values` and returns the pattern vector under `encoder`.
pub fn series_pattern<T: Real>(
    encoder: &Encoder<T>,
    values: &[T],
    stride: usize,
) -> Result<PatternVector<T>> {
    let windows = segment_series(values, encoder.window_len, stride)?;
    pattern_vector(&encoder.encode_all(&windows)?)
}
