use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::Real;

/// One named dense array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F> Param<F> {
    /// Conv and dense kernels carry L2 decay; biases and norm affine terms do not.
    pub fn is_weight(&self) -> bool {
        self.name.ends_with(".weight")
    }
}

/// Ordered collection of every model array. This is the unit devices and the
/// coordinator exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
    num_classes: usize,
    fingerprint: u64,
}

/// FNV-1a over layer names, shapes and the class count.
pub fn fingerprint_of<'a>(
    layers: impl IntoIterator<Item = (&'a str, &'a [usize])>,
    num_classes: usize,
) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(&(num_classes as u64).to_le_bytes());
    for (name, shape) in layers {
        feed(&(name.len() as u64).to_le_bytes());
        feed(name.as_bytes());
        feed(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            feed(&(d as u64).to_le_bytes());
        }
    }
    h
}

impl<F: Real> ParamSet<F> {
    pub fn new(params: Vec<Param<F>>, num_classes: usize) -> Result<Self> {
        for p in &params {
            let n: usize = p.shape.iter().product();
            if n != p.data.len() {
                return Err(Error::Shape(alloc::format!(
                    "`{}` has {} values for shape {:?}",
                    p.name,
                    p.data.len(),
                    p.shape
                )));
            }
        }
        let fingerprint = fingerprint_of(
            params.iter().map(|p| (p.name.as_str(), p.shape.as_slice())),
            num_classes,
        );
        Ok(Self {
            params,
            num_classes,
            fingerprint,
        })
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub(crate) fn data(&self, idx: usize) -> &[F] {
        &self.params[idx].data
    }

    pub(crate) fn data_mut(&mut self, idx: usize) -> &mut [F] {
        &mut self.params[idx].data
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![F::zero(); p.data.len()],
                })
                .collect(),
            num_classes: self.num_classes,
            fingerprint: self.fingerprint,
        }
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::Fingerprint {
                expected: self.fingerprint,
                found: other.fingerprint,
            });
        }
        Ok(())
    }

    /// Errors with the first layer holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self
            .params
            .iter()
            .find(|p| p.data.iter().any(|v| !v.is_finite()))
        {
            Some(p) => Err(Error::NonFinite {
                layer: p.name.clone(),
            }),
            None => Ok(()),
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &Self, alpha: F) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: F) {
        for p in &mut self.params {
            p.data.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn flatten(&self) -> Vec<F> {
        self.params
            .iter()
            .flat_map(|p| p.data.iter().copied())
            .collect()
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&v| G::of(v.f64())).collect(),
                })
                .collect(),
            num_classes: self.num_classes,
            fingerprint: self.fingerprint,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.params
            .iter()
            .zip(&other.params)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(x, y)| (x.f64() - y.f64()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn set(vals: &[f32]) -> ParamSet<f32> {
        ParamSet::new(
            vec![Param {
                name: "a.weight".to_string(),
                shape: vec![vals.len()],
                data: vals.to_vec(),
            }],
            2,
        )
        .unwrap()
    }

    #[test]
    fn fingerprint_tracks_shapes() {
        let a = set(&[1.0, 2.0]);
        let b = set(&[3.0, 4.0]);
        let c = set(&[1.0, 2.0, 3.0]);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert!(a.check_compatible(&c).is_err());
    }

    #[test]
    fn finite_check_names_layer() {
        let a = set(&[1.0, f32::INFINITY]);
        assert_eq!(
            a.check_finite(),
            Err(Error::NonFinite {
                layer: "a.weight".to_string()
            })
        );
    }

    #[test]
    fn shape_must_match_data() {
        let p = Param {
            name: "x".to_string(),
            shape: vec![2, 2],
            data: vec![0.0f32; 3],
        };
        assert!(ParamSet::new(vec![p], 2).is_err());
    }
}
