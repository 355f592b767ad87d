use std::path::Path;

use super::adam::AdamState;
use crate::error::{invalid, ContainerError, Result};
use crate::io::Container;
use crate::network::{build_arch, ArchSpec, NetParams, Variant};
use crate::tensor::Shape;

/// Full training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub n_filters: usize,
    pub params: NetParams<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub fingerprint: [u8; 32],
}

// u64 counters travel as four exact 16-bit chunks.
fn encode_u64(v: u64) -> [f32; 4] {
    [0, 16, 32, 48].map(|s| ((v >> s) & 0xffff) as f32)
}

fn decode_u64(name: &str, v: &[f32]) -> Result<u64> {
    if v.len() != 4
        || v.iter()
            .any(|x| x.fract() != 0.0 || !(0.0..65536.0).contains(x))
    {
        return Err(invalid(format!("'{name}' is not an encoded counter")));
    }
    Ok(v.iter()
        .enumerate()
        .map(|(k, &x)| (x as u64) << (16 * k))
        .sum())
}

impl Checkpoint {
    pub fn arch(&self) -> Result<ArchSpec> {
        build_arch(self.variant, self.n_filters)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.insert_scalars(
            "meta.arch",
            &[self.variant.code() as f32, self.n_filters as f32],
        )?;
        c.insert_scalars("meta.step", &encode_u64(self.adam.step))?;
        c.insert_scalars("meta.epoch", &encode_u64(self.epoch as u64))?;
        let fp: Vec<f32> = self.fingerprint.iter().map(|&b| b as f32).collect();
        c.insert_scalars("meta.fingerprint", &fp)?;
        let named = self.params.named_trainables();
        for (name, t) in &named {
            c.insert_tensor(name.clone(), *t)?;
        }
        for (i, r) in self.params.running.iter().enumerate() {
            if let Some(r) = r {
                c.insert_scalars(format!("bn.{}.mean", i + 1), &r.mean)?;
                c.insert_scalars(format!("bn.{}.var", i + 1), &r.var)?;
            }
        }
        for ((name, _), (m, v)) in named.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            let key = name.trim_start_matches("param.");
            c.insert_tensor(format!("adam.m.{key}"), m)?;
            c.insert_tensor(format!("adam.v.{key}"), v)?;
        }
        Ok(c)
    }

    /// Architecture and weights only; optimizer tensors are ignored.
    pub fn model_from_container(c: &Container) -> Result<(ArchSpec, NetParams<f32>)> {
        let a = c.scalars("meta.arch")?;
        if a.len() != 2 {
            return Err(invalid("'meta.arch' must hold variant and width"));
        }
        let variant = Variant::from_code(a[0] as u32)
            .filter(|v| v.code() as f32 == a[0])
            .ok_or_else(|| invalid(format!("unknown variant code {}", a[0])))?;
        if a[1] < 1.0 || a[1].fract() != 0.0 {
            return Err(invalid(format!("bad filter count {}", a[1])));
        }
        let arch = build_arch(variant, a[1] as usize)?;
        let mut params = NetParams::<f32>::zeros(&arch);
        let names: Vec<(String, Shape)> = params
            .named_trainables()
            .into_iter()
            .map(|(n, t)| (n, t.shape()))
            .collect();
        for ((name, shape), slot) in names.iter().zip(params.trainables_mut()) {
            *slot = c.tensor(name, *shape)?;
        }
        for (i, r) in params.running.iter_mut().enumerate() {
            if let Some(r) = r {
                for (kind, dst) in [("mean", &mut r.mean), ("var", &mut r.var)] {
                    let name = format!("bn.{}.{kind}", i + 1);
                    let v = c.scalars(&name)?;
                    if v.len() != dst.len() {
                        return Err(ContainerError::WrongShape {
                            name,
                            found: vec![v.len()],
                            expected: vec![dst.len()],
                        }
                        .into());
                    }
                    dst.copy_from_slice(v);
                }
            }
        }
        Ok((arch, params))
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let (arch, params) = Self::model_from_container(c)?;
        let fp = c.scalars("meta.fingerprint")?;
        if fp.len() != 32
            || fp
                .iter()
                .any(|v| v.fract() != 0.0 || !(0.0..256.0).contains(v))
        {
            return Err(invalid("'meta.fingerprint' is malformed"));
        }
        let mut fingerprint = [0u8; 32];
        for (d, &v) in fingerprint.iter_mut().zip(fp) {
            *d = v as u8;
        }
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in params.named_trainables() {
            let key = name.trim_start_matches("param.");
            m.push(c.tensor::<f32>(&format!("adam.m.{key}"), t.shape())?);
            v.push(c.tensor::<f32>(&format!("adam.v.{key}"), t.shape())?);
        }
        let known = |n: &str| {
            n.starts_with("meta.")
                || n.starts_with("param.")
                || n.starts_with("bn.")
                || n.starts_with("adam.")
        };
        let expected =
            4 + 3 * params.named_trainables().len() + 2 * params.running.iter().flatten().count();
        if let Some(extra) = c.names().find(|n| !known(n)) {
            return Err(ContainerError::Unexpected(extra.to_string()).into());
        }
        if c.len() != expected {
            return Err(invalid(format!(
                "checkpoint holds {} tensors, expected {expected}",
                c.len()
            )));
        }
        Ok(Checkpoint {
            variant: arch.variant,
            n_filters: arch.layers[0].out_channels,
            params,
            adam: AdamState {
                m,
                v,
                step: decode_u64("meta.step", c.scalars("meta.step")?)?,
            },
            epoch: decode_u64("meta.epoch", c.scalars("meta.epoch")?)? as usize,
            fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Loads a model from a checkpoint or a weights-only container.
pub fn load_model(path: &Path) -> Result<(ArchSpec, NetParams<f32>)> {
    Checkpoint::model_from_container(&Container::load(path)?)
}

/// Weights-only container of a model.
pub fn model_container(arch: &ArchSpec, params: &NetParams<f32>) -> Result<Container> {
    params.check(arch)?;
    let ck = Checkpoint {
        variant: arch.variant,
        n_filters: arch.layers[0].out_channels,
        params: params.clone(),
        adam: AdamState::new(&[]),
        epoch: 0,
        fingerprint: [0; 32],
    };
    let full = ck.to_container()?;
    let mut c = Container::new();
    for t in full.tensors() {
        if !t.name.starts_with("adam.")
            && t.name != "meta.step"
            && t.name != "meta.epoch"
            && t.name != "meta.fingerprint"
        {
            c.insert(t.name.clone(), t.dims.clone(), t.data.clone())?;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_glorot;

    fn sample() -> Checkpoint {
        let arch = build_arch(Variant::DrlE, 3).unwrap();
        let mut params = init_glorot::<f32>(&arch, 1).unwrap();
        params.running[3].as_mut().unwrap().mean[1] = 0.25;
        let shapes: Vec<Shape> = params
            .named_trainables()
            .iter()
            .map(|(_, t)| t.shape())
            .collect();
        let mut adam = AdamState::new(&shapes);
        adam.step = (1 << 40) + 12345;
        adam.m[2].data_mut()[0] = -3.5e-7;
        Checkpoint {
            variant: Variant::DrlE,
            n_filters: 3,
            params,
            adam,
            epoch: 17,
            fingerprint: std::array::from_fn(|i| (i * 9) as u8),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let c = ck.to_container().unwrap();
        assert!(c.get("param.1.w").is_some());
        assert!(c.get("bn.2.mean").is_some());
        assert!(c.get("adam.v.7.gamma").is_some());
        let back =
            Checkpoint::from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn stray_tensor_rejected() {
        let mut c = sample().to_container().unwrap();
        c.insert("junk", vec![1], vec![0.0]).unwrap();
        assert!(Checkpoint::from_container(&c)
            .unwrap_err()
            .to_string()
            .contains("junk"));
    }

    #[test]
    fn weights_only_container_loads_as_model() {
        let ck = sample();
        let arch = ck.arch().unwrap();
        let c = model_container(&arch, &ck.params).unwrap();
        assert!(c.names().all(|n| !n.starts_with("adam.")));
        let (a2, p2) = Checkpoint::model_from_container(&c).unwrap();
        assert_eq!(a2, arch);
        assert_eq!(p2, ck.params);
        assert!(Checkpoint::from_container(&c).is_err());
    }
}
