use serde::{Deserialize, Serialize};

use super::{Decoding, ScoreError, Scorer};
use crate::http::{EndpointConfig, ExternalError, JsonClient};
use crate::imaging::PixelImage;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub image: String,
    pub reference_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoding: Option<Decoding>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

/// Scorer backed by a remote model. Native scores are rescaled from the
/// reported (or configured) range into `[0, 1]` and clamped.
#[derive(Debug)]
pub struct ExternalScorer {
    client: JsonClient,
    range: Option<[f64; 2]>,
    reference_text: Option<String>,
    decoding: Option<Decoding>,
}

impl ExternalScorer {
    pub fn new(
        endpoint: EndpointConfig,
        range: Option<[f64; 2]>,
        reference_text: Option<String>,
        decoding: Option<Decoding>,
    ) -> Self {
        Self {
            client: JsonClient::new(endpoint),
            range,
            reference_text,
            decoding,
        }
    }

    pub fn normalize(score: f64, range: [f64; 2]) -> Result<f64, ExternalError> {
        let [lo, hi] = range;
        if !score.is_finite() || lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(ExternalError::Malformed(format!("score {score} with range [{lo}, {hi}]")));
        }
        Ok(((score - lo) / (hi - lo)).clamp(0.0, 1.0))
    }
}

impl Scorer for ExternalScorer {
    fn score(&self, image: &PixelImage) -> Result<f64, ScoreError> {
        let request = ScoreRequest {
            image: image
                .to_base64_png()
                .map_err(|e| ExternalError::Malformed(e.to_string()))?,
            reference_text: self.reference_text.clone(),
            decoding: self.decoding.clone(),
        };
        let resp: ScoreResponse = self.client.post_json(&request)?;
        let range = resp.range.or(self.range).unwrap_or([0.0, 1.0]);
        Ok(Self::normalize(resp.score, range)?)
    }

    fn is_remote(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescales_native_range() {
        assert_eq!(ExternalScorer::normalize(3.0, [1.0, 5.0]).unwrap(), 0.5);
        assert_eq!(ExternalScorer::normalize(7.0, [1.0, 5.0]).unwrap(), 1.0);
        assert!(ExternalScorer::normalize(f64::NAN, [0.0, 1.0]).is_err());
        assert!(ExternalScorer::normalize(0.5, [1.0, 1.0]).is_err());
    }

    #[test]
    fn request_omits_absent_decoding() {
        let r = ScoreRequest {
            image: "x".into(),
            reference_text: None,
            decoding: None,
        };
        let v = serde_json::to_value(r).unwrap();
        assert_eq!(v, serde_json::json!({"image": "x", "reference_text": null}));
    }
}
