//! Binary weight checkpoints.
//!
//! Layout: the magic bytes `XMVAE1`, then for every parameter until EOF:
//! `u32` name length, name bytes (UTF-8), `u32` rank, `rank × u64` extents,
//! and the values as little-endian `f64`. All integers are little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::models::{KeypointDecoder, KeypointEncoder, Linear, ModalitySpec, Modality, ModelConfig, ModelSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"XMVAE1";

pub fn write_tensors<W: Write>(w: &mut W, named: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in named {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(false);
            }
            return Err(Error::Format("truncated checkpoint".into()));
        }
        filled += n;
    }
    Ok(true)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    if read_exact_or_eof(r, buf)? {
        Ok(())
    } else {
        Err(Error::Format("truncated checkpoint".into()))
    }
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 6];
    read_exact(r, &mut magic).map_err(|_| Error::Format("missing checkpoint magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut out = Vec::new();
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    while read_exact_or_eof(r, &mut u32buf)? {
        let name_len = u32::from_le_bytes(u32buf) as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        read_exact(r, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        read_exact(r, &mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("{name}: unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact(r, &mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| Error::Format(format!("{name}: implausible shape {shape:?}")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            read_exact(r, &mut u64buf)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save(models: &ModelSet, path: &Path) -> Result<()> {
    let params = models.params();
    let named: Vec<(&str, &Tensor)> = params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, &named)?;
    w.flush()?;
    Ok(())
}

/// Rebuilds a [`ModelSet`] from parameter names and shapes alone.
pub fn load(path: &Path) -> Result<ModelSet> {
    let mut r = BufReader::new(File::open(path)?);
    from_tensors(read_tensors(&mut r)?)
}

fn take(map: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Parameter> {
    map.remove(name)
        .map(|t| Parameter::new(name, t))
        .ok_or_else(|| Error::Format(format!("checkpoint is missing {name}")))
}

fn take_linear(map: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<Linear> {
    let weight = take(map, &format!("{prefix}.weight"))?;
    let bias = take(map, &format!("{prefix}.bias"))?;
    let ws = weight.value.shape();
    if ws.len() != 2 || bias.value.shape() != [ws[1]] {
        return Err(Error::Format(format!("{prefix}: inconsistent weight/bias shapes")));
    }
    Ok(Linear { weight, bias })
}

fn count_hidden(map: &BTreeMap<String, Tensor>, prefix: &str) -> usize {
    (0..).take_while(|i| map.contains_key(&format!("{prefix}.h{i}.weight"))).count()
}

fn chain_ok(layers: &[&Linear]) -> bool {
    layers.windows(2).all(|w| w[0].fan_out() == w[1].fan_in())
}

pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<ModelSet> {
    let mut map: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, t) in tensors {
        if map.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate parameter {name}")));
        }
    }
    let mut encoders = BTreeMap::new();
    let mut decoders = BTreeMap::new();
    let mut latent: Option<usize> = None;
    let mut hidden_widths: Option<Vec<usize>> = None;
    let mut handedness_input: Option<bool> = None;
    let mut agree = |what: &str, latent_dim: usize, widths: Vec<usize>| -> Result<()> {
        if *latent.get_or_insert(latent_dim) != latent_dim {
            return Err(Error::Format(format!("{what}: latent dimension disagrees")));
        }
        if *hidden_widths.get_or_insert_with(|| widths.clone()) != widths {
            return Err(Error::Format(format!("{what}: hidden widths disagree")));
        }
        Ok(())
    };
    for m in Modality::ALL {
        let prefix = format!("enc.{m}");
        if map.contains_key(&format!("{prefix}.mu.weight")) {
            let n = count_hidden(&map, &prefix);
            let hidden = (0..n)
                .map(|i| take_linear(&mut map, &format!("{prefix}.h{i}")))
                .collect::<Result<Vec<_>>>()?;
            let mu_head = take_linear(&mut map, &format!("{prefix}.mu"))?;
            let log_var_head = take_linear(&mut map, &format!("{prefix}.logvar"))?;
            let in_dim = hidden.first().unwrap_or(&mu_head).fan_in();
            let flag = match in_dim.checked_sub(m.flat_dim()) {
                Some(0) => false,
                Some(1) => true,
                _ => return Err(Error::Format(format!("{prefix}: input width {in_dim} does not fit {m}"))),
            };
            if *handedness_input.get_or_insert(flag) != flag {
                return Err(Error::Format("encoders disagree on the handedness input".into()));
            }
            let mut layers: Vec<&Linear> = hidden.iter().collect();
            layers.push(&mu_head);
            if !chain_ok(&layers) || mu_head.weight.value.shape() != log_var_head.weight.value.shape() {
                return Err(Error::Format(format!("{prefix}: layer shapes do not chain")));
            }
            agree(&prefix, mu_head.fan_out(), hidden.iter().map(|l| l.fan_out()).collect())?;
            encoders.insert(
                m,
                KeypointEncoder {
                    spec: ModalitySpec::new(m, flag),
                    hidden,
                    mu_head,
                    log_var_head,
                },
            );
        }
        let prefix = format!("dec.{m}");
        if map.contains_key(&format!("{prefix}.out.weight")) {
            let n = count_hidden(&map, &prefix);
            let hidden = (0..n)
                .map(|i| take_linear(&mut map, &format!("{prefix}.h{i}")))
                .collect::<Result<Vec<_>>>()?;
            let out = take_linear(&mut map, &format!("{prefix}.out"))?;
            if out.fan_out() != m.flat_dim() {
                return Err(Error::Format(format!("{prefix}: output width does not fit {m}")));
            }
            let mut layers: Vec<&Linear> = hidden.iter().collect();
            layers.push(&out);
            if !chain_ok(&layers) {
                return Err(Error::Format(format!("{prefix}: layer shapes do not chain")));
            }
            let latent_dim = hidden.first().unwrap_or(&out).fan_in();
            agree(&prefix, latent_dim, hidden.iter().map(|l| l.fan_out()).collect())?;
            decoders.insert(
                m,
                KeypointDecoder {
                    spec: ModalitySpec::new(m, handedness_input.unwrap_or(false)),
                    hidden,
                    out,
                },
            );
        }
    }
    if let Some(extra) = map.keys().next() {
        return Err(Error::Format(format!("unexpected parameter {extra}")));
    }
    let latent_dim = latent.ok_or_else(|| Error::Format("checkpoint holds no models".into()))?;
    let handedness_input = handedness_input.unwrap_or(false);
    for d in decoders.values_mut() {
        d.spec.handedness_input = handedness_input;
    }
    Ok(ModelSet {
        config: ModelConfig {
            latent_dim,
            hidden: hidden_widths.unwrap_or_default(),
            handedness_input,
        },
        encoders,
        decoders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelSet {
        ModelSet::new(
            ModelConfig {
                latent_dim: 5,
                hidden: vec![7, 6],
                handedness_input: true,
            },
            &Modality::ALL,
            21,
        )
    }

    fn values(s: &ModelSet) -> Vec<(String, Vec<u64>)> {
        s.params()
            .iter()
            .map(|p| (p.name.clone(), p.value.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn save_load_is_bit_exact() {
        let set = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&set, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(values(&back), values(&set));
        assert_eq!(back.config, set.config);
        // Re-saving reproduces the file byte for byte.
        let p2 = dir.path().join("m2.ckpt");
        save(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_magic() {
        let set = small();
        let mut buf = Vec::new();
        let params = set.params();
        let named: Vec<(&str, &Tensor)> = params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        write_tensors(&mut buf, &named).unwrap();
        buf[0] = b'Y';
        assert!(matches!(read_tensors(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file() {
        let set = small();
        let mut buf = Vec::new();
        let params = set.params();
        let named: Vec<(&str, &Tensor)> = params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        write_tensors(&mut buf, &named).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensors(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn missing_parameter() {
        let set = small();
        let params = set.params();
        let named: Vec<(String, Tensor)> = params
            .iter()
            .filter(|p| p.name != "dec.3d.h1.bias")
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        assert!(from_tensors(named).is_err());
    }
}
