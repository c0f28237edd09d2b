//! Parameterized layers that bind registry entries to primitives.

use rand::Rng;

use super::init::{fan_in_uniform, zeros};
use super::ops::{conv2d, conv2d_backward, linear, linear_backward};
use super::{Grads, ParamId, Registry, Scalar, Tensor};
use crate::error::{Error, Result};

pub(crate) fn lookup<F: Scalar>(reg: &Registry<F>, name: &str) -> Result<ParamId> {
    reg.find(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
}

impl Linear {
    pub fn register<F: Scalar>(reg: &mut Registry<F>, name: &str, out_f: usize, in_f: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Linear {
            w: reg.add(format!("{name}.weight"), fan_in_uniform(&[out_f, in_f], in_f, rng))?,
            b: reg.add(format!("{name}.bias"), zeros(&[out_f]))?,
        })
    }

    pub fn bind<F: Scalar>(reg: &Registry<F>, name: &str) -> Result<Self> {
        Ok(Linear {
            w: lookup(reg, &format!("{name}.weight"))?,
            b: lookup(reg, &format!("{name}.bias"))?,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn forward<F: Scalar>(&self, reg: &Registry<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        linear(x, reg.value(self.w), reg.value(self.b))
    }

    pub fn backward<F: Scalar>(&self, reg: &Registry<F>, x: &Tensor<F>, dy: &Tensor<F>, grads: &mut Grads<F>) -> Result<Tensor<F>> {
        let g = linear_backward(x, reg.value(self.w), reg.value(self.b), dy)?;
        grads.accumulate(self.w, g.dw.data());
        grads.accumulate(self.b, g.db.data());
        Ok(g.dx)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn register<F: Scalar>(
        reg: &mut Registry<F>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        Ok(Conv2d {
            w: reg.add(format!("{name}.weight"), fan_in_uniform(&[out_c, in_c, kernel, kernel], fan_in, rng))?,
            b: reg.add(format!("{name}.bias"), zeros(&[out_c]))?,
            stride,
            padding,
        })
    }

    pub fn bind<F: Scalar>(reg: &Registry<F>, name: &str, stride: usize, padding: usize) -> Result<Self> {
        Ok(Conv2d {
            w: lookup(reg, &format!("{name}.weight"))?,
            b: lookup(reg, &format!("{name}.bias"))?,
            stride,
            padding,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn forward<F: Scalar>(&self, reg: &Registry<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        conv2d(x, reg.value(self.w), reg.value(self.b), self.stride, self.padding)
    }

    pub fn backward<F: Scalar>(&self, reg: &Registry<F>, x: &Tensor<F>, dy: &Tensor<F>, grads: &mut Grads<F>) -> Result<Tensor<F>> {
        let g = conv2d_backward(x, reg.value(self.w), reg.value(self.b), self.stride, self.padding, dy)?;
        grads.accumulate(self.w, g.dweight.data());
        grads.accumulate(self.b, g.dbias.data());
        Ok(g.dx)
    }
}
