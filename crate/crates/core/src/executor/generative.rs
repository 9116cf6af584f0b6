use serde::{Deserialize, Serialize};

use crate::http::{EndpointConfig, ExternalError, JsonClient};
use crate::imaging::PixelImage;

/// Instruction-driven image editor reached over the network.
pub trait GenerativeEditor: Send + Sync {
    fn edit(&self, instruction: &str, image: &PixelImage) -> Result<PixelImage, ExternalError>;
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditRequest {
    pub image: String,
    pub instruction: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditResponse {
    pub image: String,
}

#[derive(Debug)]
pub struct HttpEditor {
    client: JsonClient,
}

impl HttpEditor {
    pub fn new(endpoint: EndpointConfig) -> Self {
        Self {
            client: JsonClient::new(endpoint),
        }
    }
}

impl GenerativeEditor for HttpEditor {
    fn edit(&self, instruction: &str, image: &PixelImage) -> Result<PixelImage, ExternalError> {
        apply_generative(&self.client, instruction, image)
    }
}

/// Sends `image` and `instruction` to an editor service and decodes the
/// returned image. Output dimensions may differ from the input.
pub fn apply_generative(client: &JsonClient, instruction: &str, image: &PixelImage) -> Result<PixelImage, ExternalError> {
    let request = EditRequest {
        image: image
            .to_base64_png()
            .map_err(|e| ExternalError::Malformed(e.to_string()))?,
        instruction: instruction.to_string(),
    };
    let resp: EditResponse = client.post_json(&request)?;
    PixelImage::from_base64(&resp.image).map_err(|e| ExternalError::Malformed(e.to_string()))
}
