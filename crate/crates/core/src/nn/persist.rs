//! Named parameter sets in safetensors format.

use std::collections::HashMap;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::Module;
use crate::{Error, Result, Scalar};

/// Serializes every parameter of `module` at its native precision.
pub fn to_safetensors<T: Scalar, M: Module<T> + ?Sized>(module: &M) -> Result<Vec<u8>> {
    let dtype = if T::DTYPE == "f64" { Dtype::F64 } else { Dtype::F32 };
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = module
        .params()
        .into_iter()
        .map(|(name, p)| {
            let bytes = p
                .value
                .iter()
                .flat_map(|v| {
                    if dtype == Dtype::F64 {
                        v.as_f64().to_le_bytes().to_vec()
                    } else {
                        (v.as_f64() as f32).to_le_bytes().to_vec()
                    }
                })
                .collect();
            (name, p.value.shape().to_vec(), bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, data)| {
            TensorView::new(dtype, shape.clone(), data)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::format("parameter tensor", e))
        })
        .collect::<Result<HashMap<_, _>>>()?;
    safetensors::serialize(views, &None).map_err(|e| Error::format("parameter tensor", e))
}

/// Overwrites the parameters of `module` from serialized tensors. Names and
/// shapes must match exactly; either float width is accepted.
pub fn load_safetensors<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, bytes: &[u8]) -> Result<()> {
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| Error::format("parameter file", e))?;
    let mut params = module.params_mut();
    if tensors.len() != params.len() {
        return Err(Error::format(
            "parameter file",
            format!("{} tensors stored, module has {}", tensors.len(), params.len()),
        ));
    }
    for (name, p) in params.iter_mut() {
        let view = tensors
            .tensor(name)
            .map_err(|e| Error::format("parameter file", format!("{name}: {e}")))?;
        if view.shape() != p.value.shape() {
            return Err(Error::format(
                "parameter file",
                format!("{name} has shape {:?}, expected {:?}", view.shape(), p.value.shape()),
            ));
        }
        let values: Vec<f64> = match view.dtype() {
            Dtype::F32 => view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")) as f64)
                .collect(),
            Dtype::F64 => view
                .data()
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect(),
            other => return Err(Error::format("parameter file", format!("{name}: unsupported dtype {other:?}"))),
        };
        for (dst, src) in p.value.iter_mut().zip(values) {
            *dst = T::of(src);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_cross_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Linear::<f64>::new(3, 2, 1.0, &mut rng);
        let bytes = to_safetensors(&a).unwrap();
        let mut b = Linear::<f64>::zeros(3, 2);
        load_safetensors(&mut b, &bytes).unwrap();
        assert_eq!(a.weight.value, b.weight.value);
        let mut c = Linear::<f32>::zeros(3, 2);
        load_safetensors(&mut c, &bytes).unwrap();
        assert!((c.weight.value[[1, 2]] as f64 - a.weight.value[[1, 2]]).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Linear::<f32>::zeros(3, 2);
        let mut b = Linear::<f32>::zeros(2, 2);
        let err = load_safetensors(&mut b, &to_safetensors(&a).unwrap()).unwrap_err();
        assert!(err.to_string().contains("weight"));
    }
}
