//! Encoder-decoder generator with skip connections.
//!
//! Level `i` of the encoder branches off a 1x1 skip projection and then
//! downsamples with a stride-2 convolution followed by a second convolution.
//! The decoder walks back up: bilinear 2x upsampling, concatenation with the
//! matching skip branch, normalization, a `k x k` and a `1x1` convolution. A
//! final `1x1` convolution maps to `K` channels squashed into `[0, 1]`.
//! Every convolution except the last is followed by normalization and a leaky
//! rectifier.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{self, streams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UdnArchitecture {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub channels: usize,
    pub skip_channels: usize,
    pub kernel_size: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    pub leaky_slope: f64,
    /// Upper bound of the uniform law for the fixed input `z`.
    pub input_scale: f64,
}

impl Default for UdnArchitecture {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            depth: 5,
            channels: 64,
            skip_channels: 4,
            kernel_size: 3,
            input_channels: 32,
            output_channels: 1,
            leaky_slope: 0.2,
            input_scale: 0.1,
        }
    }
}

impl UdnArchitecture {
    /// Default constants for a `(K, H, W)` scene.
    pub fn for_scene(k: usize, h: usize, w: usize) -> Self {
        Self {
            height: h,
            width: w,
            output_channels: k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::invalid("depth too large"))?;
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("scene extents must be positive"));
        }
        if self.height % f != 0 || self.width % f != 0 {
            let pad = |n: usize| n.div_ceil(f) * f;
            return Err(Error::invalid(format!(
                "scene {}x{} is not divisible by 2^{} = {f}; pad to {}x{}",
                self.height,
                self.width,
                self.depth,
                pad(self.height),
                pad(self.width)
            )));
        }
        if self.channels == 0 || self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        if !(self.leaky_slope.is_finite() && self.input_scale.is_finite() && self.input_scale >= 0.0) {
            return Err(Error::invalid("slope and input scale must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Walks the architecture in a fixed order. The same walk drives parameter
/// creation ([`ParamCollector`]) and the forward pass ([`Builder`]), so their
/// orders cannot drift apart.
trait Sink<'a, T: Real> {
    type Act: Copy;
    fn conv(&mut self, name: &str, x: Self::Act, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Result<Self::Act>;
    fn norm(&mut self, name: &str, x: Self::Act, c: usize) -> Result<Self::Act>;
    fn act(&mut self, x: Self::Act) -> Self::Act;
    fn upsample(&mut self, x: Self::Act) -> Result<Self::Act>;
    fn concat(&mut self, a: Self::Act, b: Self::Act) -> Result<Self::Act>;
    fn squash(&mut self, x: Self::Act) -> Self::Act;
}

fn walk<'a, T: Real, S: Sink<'a, T>>(arch: &UdnArchitecture, s: &mut S, z: S::Act) -> Result<S::Act> {
    let (c, sk, k) = (arch.channels, arch.skip_channels, arch.kernel_size);
    let block = |s: &mut S, name: &str, x, cin, cout, k, stride| -> Result<S::Act> {
        let y = s.conv(&format!("{name}.conv"), x, cin, cout, k, stride, false)?;
        let y = s.norm(&format!("{name}.bn"), y, cout)?;
        Ok(s.act(y))
    };
    let mut skips = Vec::with_capacity(arch.depth);
    let mut x = z;
    let mut cin = arch.input_channels;
    for i in 0..arch.depth {
        skips.push(if sk > 0 {
            Some(block(s, &format!("enc{i}.skip"), x, cin, sk, 1, 1)?)
        } else {
            None
        });
        x = block(s, &format!("enc{i}.down"), x, cin, c, k, 2)?;
        x = block(s, &format!("enc{i}.conv"), x, c, c, k, 1)?;
        cin = c;
    }
    for i in (0..arch.depth).rev() {
        x = s.upsample(x)?;
        let mut width = c;
        if let Some(skip) = skips[i] {
            x = s.concat(x, skip)?;
            width += sk;
        }
        x = s.norm(&format!("dec{i}.bn"), x, width)?;
        x = block(s, &format!("dec{i}.conv"), x, width, c, k, 1)?;
        x = block(s, &format!("dec{i}.mix"), x, c, c, 1, 1)?;
    }
    let out = s.conv("out.conv", x, cin, arch.output_channels, 1, 1, true)?;
    Ok(s.squash(out))
}

struct ParamCollector(Vec<ParamSpec>);

impl<'a, T: Real> Sink<'a, T> for ParamCollector {
    type Act = ();

    fn conv(&mut self, name: &str, _: (), cin: usize, cout: usize, k: usize, _: usize, bias: bool) -> Result<()> {
        let fan_in = cin * k * k;
        self.0.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            init: Init::FanIn(fan_in),
        });
        if bias {
            self.0.push(ParamSpec {
                name: format!("{name}.bias"),
                shape: vec![cout],
                init: Init::FanIn(fan_in),
            });
        }
        Ok(())
    }

    fn norm(&mut self, name: &str, _: (), c: usize) -> Result<()> {
        self.0.push(ParamSpec {
            name: format!("{name}.gamma"),
            shape: vec![c],
            init: Init::Ones,
        });
        self.0.push(ParamSpec {
            name: format!("{name}.beta"),
            shape: vec![c],
            init: Init::Zeros,
        });
        Ok(())
    }

    fn act(&mut self, _: ()) {}
    fn upsample(&mut self, _: ()) -> Result<()> {
        Ok(())
    }
    fn concat(&mut self, _: (), _: ()) -> Result<()> {
        Ok(())
    }
    fn squash(&mut self, _: ()) {}
}

struct Builder<'t, 'a, T: Real> {
    tape: &'t mut Tape<'a, T>,
    params: &'a [Tensor<T>],
    next: usize,
    slope: f64,
}

impl<'t, 'a, T: Real> Builder<'t, 'a, T> {
    fn take(&mut self) -> Result<Var> {
        let p = self
            .params
            .get(self.next)
            .ok_or_else(|| Error::invalid("model has fewer parameters than its architecture"))?;
        let v = self.tape.param(self.next, p);
        self.next += 1;
        Ok(v)
    }
}

impl<'t, 'a, T: Real> Sink<'a, T> for Builder<'t, 'a, T> {
    type Act = Var;

    fn conv(&mut self, _: &str, x: Var, _: usize, _: usize, _: usize, stride: usize, bias: bool) -> Result<Var> {
        let w = self.take()?;
        let b = if bias { Some(self.take()?) } else { None };
        self.tape.conv2d(x, w, b, stride)
    }

    fn norm(&mut self, _: &str, x: Var, _: usize) -> Result<Var> {
        let g = self.take()?;
        let b = self.take()?;
        self.tape.batch_norm(x, g, b)
    }

    fn act(&mut self, x: Var) -> Var {
        self.tape.leaky_relu(x, self.slope)
    }

    fn upsample(&mut self, x: Var) -> Result<Var> {
        self.tape.upsample2x(x)
    }

    fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.tape.concat(a, b)
    }

    fn squash(&mut self, x: Var) -> Var {
        self.tape.sigmoid(x)
    }
}

/// Parameter list of an architecture, in forward-pass order.
pub fn param_specs(arch: &UdnArchitecture) -> Vec<ParamSpec> {
    let mut c = ParamCollector(Vec::new());
    walk::<f64, _>(arch, &mut c, ()).expect("collector never fails");
    c.0
}

/// Generator `G(z; W)`: fixed input `z`, trainable weights `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct UdnModel<T> {
    pub arch: UdnArchitecture,
    pub seed: u64,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    z: Tensor<T>,
}

impl<T: Real> UdnModel<T> {
    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.z
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param_shapes(&self) -> Vec<&[usize]> {
        self.params.iter().map(|p| p.shape()).collect()
    }

    /// Rebuilds a model from stored weights and input, checking them against
    /// the architecture.
    pub fn from_parts(arch: UdnArchitecture, seed: u64, params: Vec<Tensor<T>>, z: Tensor<T>) -> Result<Self> {
        arch.validate()?;
        let specs = param_specs(&arch);
        if specs.len() != params.len() {
            return Err(Error::invalid(format!(
                "architecture needs {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            p.expect_shape(&s.shape)?;
        }
        z.expect_shape(&[arch.input_channels, arch.height, arch.width])?;
        Ok(Self {
            names: specs.into_iter().map(|s| s.name).collect(),
            arch,
            seed,
            params,
            z,
        })
    }

    /// Records the forward pass on `tape` and returns the output node.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>) -> Result<Var> {
        let z = tape.input(self.z.clone());
        let mut b = Builder {
            tape,
            params: &self.params,
            next: 0,
            slope: self.arch.leaky_slope,
        };
        let out = walk(&self.arch, &mut b, z)?;
        debug_assert_eq!(b.next, self.params.len());
        Ok(out)
    }

    /// `v_gen = G(z; W)`, shaped `[K, H, W]` with entries in `[0, 1]`.
    pub fn generate(&self) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape)?;
        if let Some(i) = tape.first_non_finite() {
            return Err(Error::NonFinite(format!("generator activation at tape node {i}")));
        }
        Ok(tape.value(out).clone())
    }
}

/// Deterministic initialization from `(arch, seed)`: fan-in scaled uniform
/// convolution weights and biases, unit normalization gains, zero shifts and
/// `z ~ U[0, input_scale]`.
pub fn init_model<T: Real>(arch: &UdnArchitecture, seed: u64) -> Result<UdnModel<T>> {
    arch.validate()?;
    let specs = param_specs(arch);
    let mut wr = rng::seeded(seed, streams::WEIGHTS);
    let params = specs
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let data = match s.init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| T::of(rng::uniform(&mut wr, -bound, bound))).collect()
                }
                Init::Ones => vec![T::one(); n],
                Init::Zeros => vec![T::zero(); n],
            };
            Tensor::from_raw(&s.shape, data)
        })
        .collect();
    let mut zr = rng::seeded(seed, streams::LATENT);
    let zshape = [arch.input_channels, arch.height, arch.width];
    let z = Tensor::from_raw(
        &zshape,
        (0..zshape.iter().product())
            .map(|_| T::of(rng::uniform(&mut zr, 0.0, arch.input_scale)))
            .collect(),
    );
    Ok(UdnModel {
        arch: arch.clone(),
        seed,
        names: specs.into_iter().map(|s| s.name).collect(),
        params,
        z,
    })
}
