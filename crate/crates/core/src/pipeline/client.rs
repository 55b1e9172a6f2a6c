use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::templates::raw_from_request;
use crate::error::{Error, Result};
use crate::imageops::ImageRGB;
use crate::util::{fnv1a, mix_seed, rng};

/// Calls made through a client, by capability.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientCounts {
    pub rewrite_text: u64,
    pub text_to_image: u64,
    pub edit_image: u64,
}

impl ClientCounts {
    pub fn total(&self) -> u64 {
        self.rewrite_text + self.text_to_image + self.edit_image
    }
}

/// The three external generator roles: text rewriting, text-to-image and
/// instruction-driven image editing.
pub trait GeneratorClient: Send + Sync {
    fn rewrite_text(&self, request: &str) -> Result<String>;
    fn text_to_image(&self, prompt: &str, seed: u64) -> Result<ImageRGB>;
    fn edit_image(&self, image: &ImageRGB, instruction: &str) -> Result<ImageRGB>;
    fn counts(&self) -> ClientCounts;
}

#[derive(Default)]
struct Counters {
    rewrite_text: AtomicU64,
    text_to_image: AtomicU64,
    edit_image: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> ClientCounts {
        ClientCounts {
            rewrite_text: self.rewrite_text.load(Ordering::SeqCst),
            text_to_image: self.text_to_image.load(Ordering::SeqCst),
            edit_image: self.edit_image.load(Ordering::SeqCst),
        }
    }
}

/// Per-channel affine color change `clamp(gain * x + offset)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorShift {
    pub gain: [f64; 3],
    pub offset: [f64; 3],
}

impl Default for ColorShift {
    fn default() -> Self {
        Self { gain: [0.9, 1.05, 0.88], offset: [0.04, -0.03, 0.06] }
    }
}

impl ColorShift {
    pub fn apply(&self, image: &ImageRGB) -> ImageRGB {
        let data = image
            .data()
            .chunks_exact(3)
            .flat_map(|p| std::array::from_fn::<f64, 3, _>(|c| (self.gain[c] * p[c] + self.offset[c]).clamp(0.0, 1.0)))
            .collect();
        ImageRGB::new(image.height(), image.width(), data).expect("same shape")
    }
}

/// Deterministic offline stand-in for the generator services.
///
/// Rewrites echo the raw prompt with a fixed realism phrase, images are
/// procedural objects on white seeded from the prompt, and edits apply a fixed
/// [`ColorShift`].
pub struct MockClient {
    pub image_size: usize,
    pub shift: ColorShift,
    counters: Counters,
}

impl Default for MockClient {
    fn default() -> Self {
        Self::new(64, ColorShift::default())
    }
}

impl MockClient {
    pub fn new(image_size: usize, shift: ColorShift) -> Self {
        Self { image_size, shift, counters: Counters::default() }
    }
}

/// A white-background image of a few overlapping soft ellipses.
pub fn procedural_object(size: usize, seed: u64) -> ImageRGB {
    use rand::Rng;
    let mut r = rng(seed);
    let blobs: Vec<([f64; 2], [f64; 2], [f64; 3])> = (0..3)
        .map(|_| {
            let centre = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
            let radii = [r.random_range(0.15..0.4), r.random_range(0.15..0.4)];
            let color = [r.random_range(0.05..0.85), r.random_range(0.05..0.85), r.random_range(0.05..0.85)];
            (centre, radii, color)
        })
        .collect();
    ImageRGB::from_fn(size, size, |y, x| {
        let u = -1.0 + (x as f64 + 0.5) * 2.0 / size as f64;
        let v = 1.0 - (y as f64 + 0.5) * 2.0 / size as f64;
        let mut c = [1.0; 3];
        for (centre, radii, color) in &blobs {
            let d = ((u - centre[0]) / radii[0]).powi(2) + ((v - centre[1]) / radii[1]).powi(2);
            let a = (1.0 - d).clamp(0.0, 1.0).sqrt();
            let shade = 0.75 + 0.25 * v;
            for ch in 0..3 {
                c[ch] = a * (color[ch] * shade) + (1.0 - a) * c[ch];
            }
        }
        c
    })
    .expect("positive size")
}

impl GeneratorClient for MockClient {
    fn rewrite_text(&self, request: &str) -> Result<String> {
        self.counters.rewrite_text.fetch_add(1, Ordering::SeqCst);
        let raw = raw_from_request(request).unwrap_or(request);
        Ok(format!("{raw}, a single photorealistic physical object with realistic materials and detailed textures"))
    }

    fn text_to_image(&self, prompt: &str, seed: u64) -> Result<ImageRGB> {
        self.counters.text_to_image.fetch_add(1, Ordering::SeqCst);
        Ok(procedural_object(self.image_size, mix_seed(fnv1a(prompt.as_bytes()), seed)))
    }

    fn edit_image(&self, image: &ImageRGB, _instruction: &str) -> Result<ImageRGB> {
        self.counters.edit_image.fetch_add(1, Ordering::SeqCst);
        Ok(self.shift.apply(image))
    }

    fn counts(&self) -> ClientCounts {
        self.counters.snapshot()
    }
}

/// Serves previously recorded service responses from a directory:
/// `rewrite/<key>.txt`, `text_to_image/<key>.png` and `edit_image/<key>.png`,
/// where `<key>` is [`replay_key`] of the request.
pub struct ReplayClient {
    root: PathBuf,
    counters: Counters,
}

/// Hex SHA-256 over a capability name and its request payload parts.
pub fn replay_key(capability: &str, parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    h.update(capability.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn image_bytes(image: &ImageRGB) -> Vec<u8> {
    let q = image.quantized();
    let mut out = Vec::with_capacity(q.data().len() + 16);
    out.extend((q.height() as u64).to_le_bytes());
    out.extend((q.width() as u64).to_le_bytes());
    out.extend(q.data().iter().map(|v| (v * 255.0).round() as u8));
    out
}

impl ReplayClient {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::config(format!("replay directory {} does not exist", root.display())));
        }
        Ok(Self { root, counters: Counters::default() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, capability: &str, key: &str, ext: &str) -> PathBuf {
        self.root.join(capability).join(format!("{key}.{ext}"))
    }

    fn missing(path: &Path) -> Error {
        Error::Client(format!("no recorded response at {}", path.display()))
    }
}

impl GeneratorClient for ReplayClient {
    fn rewrite_text(&self, request: &str) -> Result<String> {
        self.counters.rewrite_text.fetch_add(1, Ordering::SeqCst);
        let path = self.path("rewrite", &replay_key("rewrite", &[request.as_bytes()]), "txt");
        let text = std::fs::read_to_string(&path).map_err(|_| Self::missing(&path))?;
        Ok(text.trim_end_matches('\n').to_string())
    }

    fn text_to_image(&self, prompt: &str, seed: u64) -> Result<ImageRGB> {
        self.counters.text_to_image.fetch_add(1, Ordering::SeqCst);
        let key = replay_key("text_to_image", &[prompt.as_bytes(), &seed.to_le_bytes()]);
        let path = self.path("text_to_image", &key, "png");
        if !path.exists() {
            return Err(Self::missing(&path));
        }
        ImageRGB::load_png(&path)
    }

    fn edit_image(&self, image: &ImageRGB, instruction: &str) -> Result<ImageRGB> {
        self.counters.edit_image.fetch_add(1, Ordering::SeqCst);
        let key = replay_key("edit_image", &[&image_bytes(image), instruction.as_bytes()]);
        let path = self.path("edit_image", &key, "png");
        if !path.exists() {
            return Err(Self::missing(&path));
        }
        ImageRGB::load_png(&path)
    }

    fn counts(&self) -> ClientCounts {
        self.counters.snapshot()
    }
}

/// Bounds the number of requests in flight through `inner`.
pub struct CappedClient {
    inner: Arc<dyn GeneratorClient>,
    cap: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
    peak: AtomicUsize,
}

impl CappedClient {
    pub fn new(inner: Arc<dyn GeneratorClient>, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::config("concurrent request cap must be at least 1"));
        }
        Ok(Self { inner, cap, in_flight: Mutex::new(0), released: Condvar::new(), peak: AtomicUsize::new(0) })
    }

    /// Largest number of simultaneous requests observed.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn with_slot<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut n = self.in_flight.lock().expect("cap lock");
            while *n >= self.cap {
                n = self.released.wait(n).expect("cap lock");
            }
            *n += 1;
            self.peak.fetch_max(*n, Ordering::SeqCst);
        }
        let out = f();
        *self.in_flight.lock().expect("cap lock") -= 1;
        self.released.notify_one();
        out
    }
}

impl GeneratorClient for CappedClient {
    fn rewrite_text(&self, request: &str) -> Result<String> {
        self.with_slot(|| self.inner.rewrite_text(request))
    }

    fn text_to_image(&self, prompt: &str, seed: u64) -> Result<ImageRGB> {
        self.with_slot(|| self.inner.text_to_image(prompt, seed))
    }

    fn edit_image(&self, image: &ImageRGB, instruction: &str) -> Result<ImageRGB> {
        self.with_slot(|| self.inner.edit_image(image, instruction))
    }

    fn counts(&self) -> ClientCounts {
        self.inner.counts()
    }
}

/// Mock or live service selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    #[default]
    Mock,
    Live,
}

pub const ENV_MODE: &str = "REALISM3D_CLIENT";
pub const ENV_ENDPOINT: &str = "REALISM3D_ENDPOINT";
pub const ENV_CREDENTIAL: &str = "REALISM3D_API_KEY";

/// Client settings from the environment. The credential is kept out of
/// `Debug` output and is never serialized.
#[derive(Clone, Default)]
pub struct ClientSettings {
    pub mode: ClientMode,
    pub endpoint: Option<String>,
    credential: Option<String>,
}

impl std::fmt::Debug for ClientSettings {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientSettings")
            .field("mode", &self.mode)
            .field("endpoint", &self.endpoint)
            .field("credential", &self.credential.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl ClientSettings {
    /// The mode named by the environment, if any.
    pub fn mode_from_env() -> Result<Option<ClientMode>> {
        match std::env::var(ENV_MODE).ok().as_deref() {
            None | Some("") => Ok(None),
            Some("mock") => Ok(Some(ClientMode::Mock)),
            Some("live") => Ok(Some(ClientMode::Live)),
            Some(other) => Err(Error::config(format!("{ENV_MODE}={other}: expected `mock` or `live`"))),
        }
    }

    pub fn from_env() -> Result<Self> {
        Ok(Self {
            mode: Self::mode_from_env()?.unwrap_or_default(),
            endpoint: std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty()),
            credential: std::env::var(ENV_CREDENTIAL).ok().filter(|s| !s.is_empty()),
        })
    }

    pub fn with_mode(mut self, mode: ClientMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_credential(mut self, credential: impl Into<String>) -> Self {
        self.credential = Some(credential.into());
        self
    }

    pub fn has_credential(&self) -> bool {
        self.credential.is_some()
    }

    /// Live mode replays recorded responses from the `endpoint` directory.
    pub fn build(&self, mock: MockClient) -> Result<Arc<dyn GeneratorClient>> {
        match self.mode {
            ClientMode::Mock => Ok(Arc::new(mock)),
            ClientMode::Live => {
                let dir = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| Error::config(format!("live mode needs {ENV_ENDPOINT} pointing at a response directory")))?;
                Ok(Arc::new(ReplayClient::new(dir)?))
            }
        }
    }
}
