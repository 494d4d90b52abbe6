//! Container encodings of models, cases, phantoms and raw acquisitions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{Dtype, NamedTensor, Provenance, TensorContainer, TensorData};
use crate::error::{Error, Result};
use crate::nn::{init_params, ModelState, NetworkSpec};
use crate::recon::{DwiCase, NormalizationRecord};
use crate::sim::{AcquisitionConfig, PhantomCase, RawAcquisition, TissueLabel};
use crate::tensor::{Element, Tensor};

pub const ROLE_MODEL: &str = "model";
pub const ROLE_CASE: &str = "case";
pub const ROLE_PHANTOM: &str = "phantom";
pub const ROLE_RAW: &str = "raw_acquisition";
pub const ROLE_IMAGE: &str = "image";

pub fn write_container(path: &Path, container: &TensorContainer) -> Result<()> {
    let bytes = container.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path, role: &str) -> Result<TensorContainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let c = TensorContainer::from_bytes(&bytes)?;
    if c.role != role {
        return Err(Error::invalid(format!(
            "{} holds a '{}' container, expected '{role}'",
            path.display(),
            c.role
        )));
    }
    Ok(c)
}

fn element_dtype<T: Element>() -> Dtype {
    if T::DTYPE == "f32" {
        Dtype::F32
    } else {
        Dtype::F64
    }
}

fn encode<T: Element>(name: String, t: &Tensor<T>) -> Result<NamedTensor> {
    let data = match element_dtype::<T>() {
        Dtype::F32 => TensorData::F32(t.data().iter().map(|v| v.to_f64_lossy() as f32).collect()),
        _ => TensorData::F64(t.data().iter().map(|v| v.to_f64_lossy()).collect()),
    };
    NamedTensor::new(name, t.shape(), data)
}

fn decode<T: Element>(nt: &NamedTensor) -> Result<Tensor<T>> {
    let want = element_dtype::<T>();
    if nt.data.dtype() != want {
        return Err(Error::invalid(format!(
            "tensor '{}' is stored as {:?}, expected {want:?}",
            nt.name,
            nt.data.dtype()
        )));
    }
    let data: Vec<T> = match &nt.data {
        TensorData::F32(v) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
        TensorData::F64(v) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
        TensorData::Complex128(_) => unreachable!("dtype checked above"),
    };
    Tensor::from_vec(&nt.shape, data)
}

fn f64_tensor(name: &str, t: &Tensor<f64>) -> Result<NamedTensor> {
    NamedTensor::new(name, t.shape(), TensorData::F64(t.data().to_vec()))
}

fn get_f64(c: &TensorContainer, name: &str) -> Result<Tensor<f64>> {
    decode::<f64>(c.get(name)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    spec: NetworkSpec,
    dtype: String,
    step_count: u64,
    /// `(epsilon, momentum)` per BN layer, in layer order.
    batchnorm: Vec<(f64, f64)>,
}

/// Encode parameters, BN running statistics and ADAM state.
pub fn model_to_container<T: Element>(model: &ModelState<T>, provenance: Provenance) -> Result<TensorContainer> {
    let meta = ModelMeta {
        spec: model.spec,
        dtype: T::DTYPE.into(),
        step_count: model.step_count,
        batchnorm: model.layers.iter().filter_map(|l| l.bn.as_ref()).map(|b| (b.epsilon, b.momentum)).collect(),
    };
    let mut c = TensorContainer::new(ROLE_MODEL, provenance, serde_json::to_value(&meta)?);
    for (id, t) in model.state_tensors() {
        c.push(encode(id.to_string(), t)?);
    }
    for (i, (m, v)) in model.adam_m.iter().zip(&model.adam_v).enumerate() {
        c.push(encode(format!("adam_m.{i}"), m)?);
        c.push(encode(format!("adam_v.{i}"), v)?);
    }
    Ok(c)
}

/// Decode a model. When `expected` is given, the stored network layout must
/// match it.
pub fn model_from_container<T: Element>(c: &TensorContainer, expected: Option<&NetworkSpec>) -> Result<ModelState<T>> {
    if c.role != ROLE_MODEL {
        return Err(Error::invalid(format!("container role '{}' is not a model", c.role)));
    }
    let meta: ModelMeta = serde_json::from_value(c.meta.clone())?;
    if meta.dtype != T::DTYPE {
        return Err(Error::invalid(format!("model stored as {}, requested {}", meta.dtype, T::DTYPE)));
    }
    if let Some(spec) = expected {
        if spec.in_channels != meta.spec.in_channels {
            return Err(Error::SpecMismatch(format!(
                "stored model takes {} input channel(s) but the run expects {} ({})",
                meta.spec.in_channels,
                spec.in_channels,
                if spec.is_guided() { "guided" } else { "plain" }
            )));
        }
        if spec != &meta.spec {
            return Err(Error::SpecMismatch(format!("stored network {:?} differs from {:?}", meta.spec, spec)));
        }
    }
    let mut model = init_params::<T>(meta.spec, 0)?;
    for (id, slot) in model.state_tensors_mut() {
        let t = decode::<T>(c.get(&id.to_string())?)?;
        if t.shape() != slot.shape() {
            return Err(Error::SpecMismatch(format!("{id}: stored shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    let bns: Vec<_> = model.layers.iter_mut().filter_map(|l| l.bn.as_mut()).collect();
    if bns.len() != meta.batchnorm.len() {
        return Err(Error::SpecMismatch("batchnorm metadata does not match the layer layout".into()));
    }
    for (bn, &(eps, mom)) in bns.into_iter().zip(&meta.batchnorm) {
        bn.epsilon = eps;
        bn.momentum = mom;
    }
    for i in 0..model.adam_m.len() {
        let m = decode::<T>(c.get(&format!("adam_m.{i}"))?)?;
        let v = decode::<T>(c.get(&format!("adam_v.{i}"))?)?;
        if m.shape() != model.adam_m[i].shape() || v.shape() != model.adam_v[i].shape() {
            return Err(Error::SpecMismatch(format!("ADAM moment {i} has the wrong shape")));
        }
        model.adam_m[i] = m;
        model.adam_v[i] = v;
    }
    model.step_count = meta.step_count;
    Ok(model)
}

pub fn save_model<T: Element>(path: &Path, model: &ModelState<T>, provenance: Provenance) -> Result<()> {
    write_container(path, &model_to_container(model, provenance)?)
}

pub fn load_model<T: Element>(path: &Path, expected: Option<&NetworkSpec>) -> Result<ModelState<T>> {
    model_from_container(&read_container(path, ROLE_MODEL)?, expected)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseMeta {
    id: u64,
    b_low: f64,
    b_high: f64,
    norm: NormalizationRecord,
    selected_averages: Vec<usize>,
}

pub fn case_to_container(case: &DwiCase, provenance: Provenance) -> Result<TensorContainer> {
    let meta = CaseMeta {
        id: case.id,
        b_low: case.b_low,
        b_high: case.b_high,
        norm: case.norm,
        selected_averages: case.selected_averages.clone(),
    };
    let mut c = TensorContainer::new(ROLE_CASE, provenance, serde_json::to_value(&meta)?);
    c.push(f64_tensor("guidance_lb", &case.guidance_lb)?);
    c.push(f64_tensor("noisy_hb", &case.noisy_hb)?);
    c.push(f64_tensor("reference_hb", &case.reference_hb)?);
    Ok(c)
}

pub fn case_from_container(c: &TensorContainer) -> Result<DwiCase> {
    let meta: CaseMeta = serde_json::from_value(c.meta.clone())?;
    Ok(DwiCase {
        id: meta.id,
        guidance_lb: get_f64(c, "guidance_lb")?,
        noisy_hb: get_f64(c, "noisy_hb")?,
        reference_hb: get_f64(c, "reference_hb")?,
        b_low: meta.b_low,
        b_high: meta.b_high,
        norm: meta.norm,
        selected_averages: meta.selected_averages,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhantomMeta {
    warnings: Vec<String>,
}

pub fn phantom_to_container(p: &PhantomCase, provenance: Provenance) -> Result<TensorContainer> {
    let meta = PhantomMeta { warnings: p.warnings.clone() };
    let mut c = TensorContainer::new(ROLE_PHANTOM, provenance, serde_json::to_value(&meta)?);
    c.push(f64_tensor("s0", &p.s0_map)?);
    c.push(f64_tensor("adc_truth", &p.adc_truth)?);
    let labels = Tensor::from_fn(p.s0_map.shape(), |i| p.label_map[i].code() as f64);
    c.push(f64_tensor("labels", &labels)?);
    Ok(c)
}

pub fn phantom_from_container(c: &TensorContainer) -> Result<PhantomCase> {
    let meta: PhantomMeta = serde_json::from_value(c.meta.clone())?;
    let labels = get_f64(c, "labels")?;
    let label_map = labels
        .data()
        .iter()
        .map(|&v| {
            TissueLabel::from_code(v as u8)
                .filter(|_| v.fract() == 0.0 && (0.0..=255.0).contains(&v))
                .ok_or_else(|| Error::invalid(format!("invalid tissue code {v}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomCase {
        s0_map: get_f64(c, "s0")?,
        adc_truth: get_f64(c, "adc_truth")?,
        label_map,
        warnings: meta.warnings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeta {
    config: AcquisitionConfig,
    matrix: (usize, usize),
}

pub fn raw_to_container(raw: &RawAcquisition, provenance: Provenance) -> Result<TensorContainer> {
    let meta = RawMeta {
        config: raw.config,
        matrix: raw.matrix,
    };
    let mut c = TensorContainer::new(ROLE_RAW, provenance, serde_json::to_value(&meta)?);
    let (h, w) = raw.matrix;
    for (name, k) in [("kspace_low", &raw.kspace[0]), ("kspace_high", &raw.kspace[1])] {
        c.push(NamedTensor::new(name, &[k.len() / (h * w), h, w], TensorData::Complex128(k.clone()))?);
    }
    Ok(c)
}

pub fn raw_from_container(c: &TensorContainer) -> Result<RawAcquisition> {
    let meta: RawMeta = serde_json::from_value(c.meta.clone())?;
    let take = |name: &str| -> Result<Vec<num_complex::Complex64>> {
        match &c.get(name)?.data {
            TensorData::Complex128(v) => Ok(v.clone()),
            other => Err(Error::invalid(format!("'{name}' must be complex, found {:?}", other.dtype()))),
        }
    };
    let raw = RawAcquisition {
        config: meta.config,
        matrix: meta.matrix,
        kspace: [take("kspace_low")?, take("kspace_high")?],
    };
    let hw = raw.matrix.0 * raw.matrix.1;
    for b in [crate::sim::BValue::Low, crate::sim::BValue::High] {
        if raw.kspace[b.index()].len() != raw.frames_per_b(b) * hw {
            return Err(Error::invalid("k-space frame count does not match the acquisition config"));
        }
    }
    Ok(raw)
}

/// A single named image, e.g. a denoised output.
pub fn image_to_container(name: &str, image: &Tensor<f64>, meta: serde_json::Value, provenance: Provenance) -> Result<TensorContainer> {
    let mut c = TensorContainer::new(ROLE_IMAGE, provenance, meta);
    c.push(f64_tensor(name, image)?);
    Ok(c)
}

pub fn image_from_container(c: &TensorContainer, name: &str) -> Result<Tensor<f64>> {
    get_f64(c, name)
}
