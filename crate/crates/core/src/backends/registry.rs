use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::pool::Pool;
use super::{
    fakes, remote, BackendDescriptor, Capability, DepthEstimator, Detector, Generator, Interpreter,
    Segmenter,
};
use crate::error::{Error, Result};

type Factory<T> = Box<dyn Fn() -> Result<Arc<T>> + Send + Sync>;

struct Slot<T: ?Sized> {
    descriptor: BackendDescriptor,
    factory: Factory<T>,
}

/// Backend ids per capability, as written in config files and `--backend`
/// flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSelection {
    pub detect: String,
    pub segment: String,
    pub interpret: String,
    pub depth: String,
    pub generate: String,
}

impl Default for BackendSelection {
    fn default() -> Self {
        Self {
            detect: remote::GROUNDING_DINO.into(),
            segment: remote::SAM.into(),
            interpret: remote::GEMINI.into(),
            depth: remote::MIDAS.into(),
            generate: remote::SDXL_DEPTH_INPAINT.into(),
        }
    }
}

impl BackendSelection {
    /// Every capability backed by a shipped fake.
    pub fn fakes() -> Self {
        Self {
            detect: fakes::SALIENT.into(),
            segment: fakes::THRESHOLD.into(),
            interpret: fakes::SHAPE.into(),
            depth: fakes::LUMINANCE.into(),
            generate: fakes::TEXTURE.into(),
        }
    }

    pub fn get(&self, capability: Capability) -> &str {
        match capability {
            Capability::Detect => &self.detect,
            Capability::Segment => &self.segment,
            Capability::Interpret => &self.interpret,
            Capability::Depth => &self.depth,
            Capability::Generate => &self.generate,
        }
    }

    pub fn set(&mut self, capability: Capability, id: impl Into<String>) {
        let id = id.into();
        match capability {
            Capability::Detect => self.detect = id,
            Capability::Segment => self.segment = id,
            Capability::Interpret => self.interpret = id,
            Capability::Depth => self.depth = id,
            Capability::Generate => self.generate = id,
        }
    }

    /// Applies a `capability=id` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (cap, id) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("backend override `{spec}` is not capability=id")))?;
        let cap: Capability = cap.trim().parse().map_err(Error::Config)?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::Config(format!("backend override `{spec}` has an empty id")));
        }
        self.set(cap, id);
        Ok(())
    }
}

/// One resolved adapter per capability.
#[derive(Clone)]
pub struct BackendSet {
    pub detector: Arc<dyn Detector>,
    pub segmenter: Arc<dyn Segmenter>,
    pub interpreter: Arc<dyn Interpreter>,
    pub depth: Arc<dyn DepthEstimator>,
    pub generator: Arc<dyn Generator>,
}

impl BackendSet {
    pub fn id(&self, capability: Capability) -> String {
        match capability {
            Capability::Detect => self.detector.descriptor().id,
            Capability::Segment => self.segmenter.descriptor().id,
            Capability::Interpret => self.interpreter.descriptor().id,
            Capability::Depth => self.depth.descriptor().id,
            Capability::Generate => self.generator.descriptor().id,
        }
    }
}

pub enum AnyBackend {
    Detector(Arc<dyn Detector>),
    Segmenter(Arc<dyn Segmenter>),
    Interpreter(Arc<dyn Interpreter>),
    Depth(Arc<dyn DepthEstimator>),
    Generator(Arc<dyn Generator>),
}

impl AnyBackend {
    pub fn descriptor(&self) -> BackendDescriptor {
        match self {
            AnyBackend::Detector(b) => b.descriptor(),
            AnyBackend::Segmenter(b) => b.descriptor(),
            AnyBackend::Interpreter(b) => b.descriptor(),
            AnyBackend::Depth(b) => b.descriptor(),
            AnyBackend::Generator(b) => b.descriptor(),
        }
    }
}

#[derive(Default)]
pub struct Registry {
    detectors: BTreeMap<String, Slot<dyn Detector>>,
    segmenters: BTreeMap<String, Slot<dyn Segmenter>>,
    interpreters: BTreeMap<String, Slot<dyn Interpreter>>,
    depth: BTreeMap<String, Slot<dyn DepthEstimator>>,
    generators: BTreeMap<String, Slot<dyn Generator>>,
}

fn insert<T: ?Sized>(
    map: &mut BTreeMap<String, Slot<T>>,
    expected: Capability,
    descriptor: BackendDescriptor,
    factory: Factory<T>,
) -> Result<()> {
    if descriptor.capability != expected {
        return Err(Error::Config(format!(
            "descriptor for `{}` declares capability {}, registered as {expected}",
            descriptor.id, descriptor.capability
        )));
    }
    if map.contains_key(&descriptor.id) {
        return Err(Error::Config(format!(
            "{expected} backend `{}` is already registered",
            descriptor.id
        )));
    }
    map.insert(descriptor.id.clone(), Slot { descriptor, factory });
    Ok(())
}

fn lookup<'a, T: ?Sized>(
    map: &'a BTreeMap<String, Slot<T>>,
    capability: Capability,
    id: &str,
) -> Result<&'a Slot<T>> {
    map.get(id).ok_or_else(|| {
        let known: Vec<&str> = map.keys().map(String::as_str).collect();
        Error::Config(format!(
            "unknown {capability} backend `{id}`; known: {}",
            known.join(", ")
        ))
    })
}

/// Instances to place in a pool, or `None` when the adapter can be shared
/// as-is.
fn instances<T: ?Sized>(slot: &Slot<T>, requested: Option<u32>) -> Result<Option<Vec<Arc<T>>>> {
    let d = &slot.descriptor;
    if !d.thread_safe {
        let n = requested.unwrap_or(1).max(1);
        return (0..n).map(|_| (slot.factory)()).collect::<Result<_>>().map(Some);
    }
    match requested.or(d.max_in_flight) {
        None => Ok(None),
        Some(n) => {
            let shared = (slot.factory)()?;
            Ok(Some((0..n.max(1)).map(|_| shared.clone()).collect()))
        }
    }
}

macro_rules! capability_methods {
    ($register:ident, $resolve:ident, $field:ident, $cap:expr, $tr:ident) => {
        pub fn $register(
            &mut self,
            descriptor: BackendDescriptor,
            factory: impl Fn() -> Result<Arc<dyn $tr>> + Send + Sync + 'static,
        ) -> Result<()> {
            insert(&mut self.$field, $cap, descriptor, Box::new(factory))
        }

        /// Resolves an adapter, wrapping it in an instance pool when it is
        /// not thread-safe or when a concurrency limit applies.
        pub fn $resolve(&self, id: &str, pool_size: Option<u32>) -> Result<Arc<dyn $tr>> {
            let slot = lookup(&self.$field, $cap, id)?;
            Ok(match instances(slot, pool_size)? {
                None => (slot.factory)()?,
                Some(list) => Arc::new(Pool::<dyn $tr>::new(slot.descriptor.clone(), list)),
            })
        }
    };
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding every shipped fake and reference adapter.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        fakes::register(&mut r).expect("fake ids are unique");
        remote::register(&mut r).expect("reference ids are unique");
        r
    }

    capability_methods!(register_detector, detector, detectors, Capability::Detect, Detector);
    capability_methods!(register_segmenter, segmenter, segmenters, Capability::Segment, Segmenter);
    capability_methods!(register_interpreter, interpreter, interpreters, Capability::Interpret, Interpreter);
    capability_methods!(register_depth, depth, depth, Capability::Depth, DepthEstimator);
    capability_methods!(register_generator, generator, generators, Capability::Generate, Generator);

    pub fn resolve(&self, capability: Capability, id: &str) -> Result<AnyBackend> {
        Ok(match capability {
            Capability::Detect => AnyBackend::Detector(self.detector(id, None)?),
            Capability::Segment => AnyBackend::Segmenter(self.segmenter(id, None)?),
            Capability::Interpret => AnyBackend::Interpreter(self.interpreter(id, None)?),
            Capability::Depth => AnyBackend::Depth(self.depth(id, None)?),
            Capability::Generate => AnyBackend::Generator(self.generator(id, None)?),
        })
    }

    pub fn descriptor(&self, capability: Capability, id: &str) -> Result<&BackendDescriptor> {
        Ok(match capability {
            Capability::Detect => &lookup(&self.detectors, capability, id)?.descriptor,
            Capability::Segment => &lookup(&self.segmenters, capability, id)?.descriptor,
            Capability::Interpret => &lookup(&self.interpreters, capability, id)?.descriptor,
            Capability::Depth => &lookup(&self.depth, capability, id)?.descriptor,
            Capability::Generate => &lookup(&self.generators, capability, id)?.descriptor,
        })
    }

    pub fn descriptors(&self) -> Vec<&BackendDescriptor> {
        let mut out: Vec<&BackendDescriptor> = Vec::new();
        out.extend(self.detectors.values().map(|s| &s.descriptor));
        out.extend(self.segmenters.values().map(|s| &s.descriptor));
        out.extend(self.interpreters.values().map(|s| &s.descriptor));
        out.extend(self.depth.values().map(|s| &s.descriptor));
        out.extend(self.generators.values().map(|s| &s.descriptor));
        out
    }

    pub fn resolve_set(
        &self,
        selection: &BackendSelection,
        pool_sizes: &BTreeMap<Capability, u32>,
    ) -> Result<BackendSet> {
        let size = |c: Capability| pool_sizes.get(&c).copied();
        Ok(BackendSet {
            detector: self.detector(&selection.detect, size(Capability::Detect))?,
            segmenter: self.segmenter(&selection.segment, size(Capability::Segment))?,
            interpreter: self.interpreter(&selection.interpret, size(Capability::Interpret))?,
            depth: self.depth(&selection.depth, size(Capability::Depth))?,
            generator: self.generator(&selection.generate, size(Capability::Generate))?,
        })
    }
}
