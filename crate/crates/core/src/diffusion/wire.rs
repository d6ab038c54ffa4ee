//! Binary payload for reaching an out-of-process denoiser.
//!
//! Layout: `b"LDMW"`, `u32` LE header length, UTF-8 JSON header, then each
//! array named in the header as little-endian `f32` in row-major order, in
//! header order. The header names the shape and slot of every array.

use ndarray::{Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{LatentTensor, WeightedControl};
use crate::error::{Error, Result};
use crate::guidance::{ControlKind, Polarity, PromptEmbedding};

const MAGIC: &[u8; 4] = b"LDMW";
pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySlot {
    pub slot: String,
    pub shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireHeader {
    pub version: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub polarity: Option<Polarity>,
    pub arrays: Vec<ArraySlot>,
}

/// A decoded denoise request.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseRequest {
    pub sigma: f64,
    pub latent: Array3<f64>,
    pub controls: Vec<(ControlKind, f64, Array3<f64>)>,
    pub prompt: PromptEmbedding,
}

fn write_payload(header: &WireHeader, arrays: &[ArrayD<f64>]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let floats: usize = arrays.iter().map(|a| a.len()).sum();
    let mut out = Vec::with_capacity(8 + json.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for array in arrays {
        for v in array.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn read_payload(bytes: &[u8]) -> Result<(WireHeader, Vec<ArrayD<f64>>)> {
    let bad = |m: &str| Error::contract(format!("wire payload: {m}"));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(8..8 + header_len).ok_or_else(|| bad("truncated header"))?;
    let header: WireHeader = serde_json::from_slice(body)?;
    if header.version != WIRE_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    let mut offset = 8 + header_len;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for slot in &header.arrays {
        let count: usize = slot.shape.iter().product();
        let end = offset + 4 * count;
        let raw = bytes.get(offset..end).ok_or_else(|| bad("truncated array data"))?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        arrays.push(
            ArrayD::from_shape_vec(IxDyn(&slot.shape), values)
                .map_err(|e| bad(&e.to_string()))?,
        );
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header, arrays))
}

fn kind_from_slot(slot: &str) -> Option<ControlKind> {
    let name = slot.strip_prefix("control:")?;
    serde_json::from_value(serde_json::Value::String(name.to_owned())).ok()
}

pub fn encode_denoise_request(
    x: &LatentTensor,
    sigma: f64,
    controls: &[WeightedControl<'_>],
    prompt: &PromptEmbedding,
) -> Result<Vec<u8>> {
    let mut slots = vec![ArraySlot {
        slot: "latent".into(),
        shape: x.shape().to_vec(),
        weight: None,
    }];
    let mut arrays = vec![x.data().clone().into_dyn()];
    for control in controls {
        slots.push(ArraySlot {
            slot: format!("control:{}", control.signal.kind()),
            shape: control.signal.tensor().shape().to_vec(),
            weight: Some(control.weight),
        });
        arrays.push(control.signal.tensor().clone().into_dyn());
    }
    let dim = prompt.dim().unwrap_or(0);
    let flat: Vec<f64> = prompt.tokens().iter().flatten().copied().collect();
    slots.push(ArraySlot {
        slot: "prompt".into(),
        shape: vec![prompt.len(), dim],
        weight: None,
    });
    arrays.push(
        ArrayD::from_shape_vec(IxDyn(&[prompt.len(), dim]), flat)
            .map_err(|e| Error::contract(e.to_string()))?,
    );
    let header = WireHeader {
        version: WIRE_VERSION,
        sigma: Some(sigma),
        polarity: Some(prompt.polarity()),
        arrays: slots,
    };
    write_payload(&header, &arrays)
}

pub fn decode_denoise_request(bytes: &[u8]) -> Result<DenoiseRequest> {
    let (header, arrays) = read_payload(bytes)?;
    let bad = |m: String| Error::contract(format!("wire payload: {m}"));
    let sigma = header.sigma.ok_or_else(|| bad("request without sigma".into()))?;
    let polarity = header.polarity.unwrap_or(Polarity::Positive);
    let mut latent = None;
    let mut controls = Vec::new();
    let mut prompt = None;
    for (slot, array) in header.arrays.iter().zip(arrays) {
        match slot.slot.as_str() {
            "latent" => latent = Some(into3(array)?),
            "prompt" => {
                let rows: Vec<Vec<f64>> = array
                    .outer_iter()
                    .map(|row| row.iter().copied().collect())
                    .collect();
                prompt = Some(PromptEmbedding::new(rows, polarity)?);
            }
            other => {
                let kind = kind_from_slot(other)
                    .ok_or_else(|| bad(format!("unknown slot `{other}`")))?;
                controls.push((kind, slot.weight.unwrap_or(1.0), into3(array)?));
            }
        }
    }
    Ok(DenoiseRequest {
        sigma,
        latent: latent.ok_or_else(|| bad("missing latent".into()))?,
        controls,
        prompt: prompt.ok_or_else(|| bad("missing prompt".into()))?,
    })
}

pub fn encode_prediction(eps: &Array3<f64>) -> Result<Vec<u8>> {
    let header = WireHeader {
        version: WIRE_VERSION,
        sigma: None,
        polarity: None,
        arrays: vec![ArraySlot {
            slot: "eps".into(),
            shape: eps.shape().to_vec(),
            weight: None,
        }],
    };
    write_payload(&header, &[eps.clone().into_dyn()])
}

pub fn decode_prediction(bytes: &[u8]) -> Result<Array3<f64>> {
    let (header, mut arrays) = read_payload(bytes)?;
    match (header.arrays.first(), arrays.pop()) {
        (Some(slot), Some(array)) if slot.slot == "eps" && header.arrays.len() == 1 => into3(array),
        _ => Err(Error::contract("wire payload: expected a single `eps` array")),
    }
}

fn into3(array: ArrayD<f64>) -> Result<Array3<f64>> {
    array
        .into_dimensionality()
        .map_err(|e| Error::contract(format!("wire payload: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::ControlSignal;

    #[test]
    fn request_round_trip() {
        let x = LatentTensor::new(Array3::from_shape_fn((4, 2, 3), |(c, y, x)| {
            (c * 6 + y * 3 + x) as f64 * 0.25
        }))
        .unwrap();
        let depth = ControlSignal::new(
            ControlKind::Depth,
            Array3::from_elem((1, 16, 24), 0.5),
            ControlKind::Depth.default_settings(),
        )
        .unwrap();
        let prompt =
            PromptEmbedding::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]], Polarity::Negative).unwrap();
        let bytes = encode_denoise_request(
            &x,
            3.5,
            &[WeightedControl {
                signal: &depth,
                weight: 0.5,
            }],
            &prompt,
        )
        .unwrap();
        let req = decode_denoise_request(&bytes).unwrap();
        assert_eq!(req.sigma, 3.5);
        assert_eq!(&req.latent, x.data());
        assert_eq!(req.controls.len(), 1);
        assert_eq!(req.controls[0].0, ControlKind::Depth);
        assert_eq!(req.controls[0].1, 0.5);
        assert_eq!(req.prompt, prompt);

        let eps = Array3::from_elem((4, 2, 3), -1.5);
        assert_eq!(decode_prediction(&encode_prediction(&eps).unwrap()).unwrap(), eps);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let eps = Array3::from_elem((4, 2, 2), 1.0);
        let bytes = encode_prediction(&eps).unwrap();
        assert!(decode_prediction(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_prediction(b"nope").is_err());
    }
}
