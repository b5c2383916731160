use std::sync::{Arc, Condvar, Mutex};

use super::{
    BackendDescriptor, BackendError, DepthEstimator, Detector, Generator, Interpreter, Segmenter,
};
use crate::concept::ConceptRequest;
use crate::generation::GenerationRequest;
use crate::imaging::{BoundingBox, Mask, Raster};

/// Fixed set of adapter instances; each call checks one out exclusively.
/// A single-instance pool serializes a non-thread-safe adapter.
pub(crate) struct Pool<T: ?Sized> {
    descriptor: BackendDescriptor,
    free: Mutex<Vec<Arc<T>>>,
    returned: Condvar,
}

impl<T: ?Sized> Pool<T> {
    pub(crate) fn new(descriptor: BackendDescriptor, instances: Vec<Arc<T>>) -> Self {
        assert!(!instances.is_empty(), "pool needs at least one instance");
        Self {
            descriptor,
            free: Mutex::new(instances),
            returned: Condvar::new(),
        }
    }

    fn with<R>(&self, f: impl FnOnce(&T) -> R) -> R {
        let instance = {
            let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
            loop {
                if let Some(i) = free.pop() {
                    break i;
                }
                free = self.returned.wait(free).unwrap_or_else(|p| p.into_inner());
            }
        };
        let checkout = Checkout {
            pool: self,
            instance: Some(instance),
        };
        f(checkout.instance.as_deref().expect("instance present until drop"))
    }
}

struct Checkout<'a, T: ?Sized> {
    pool: &'a Pool<T>,
    instance: Option<Arc<T>>,
}

impl<T: ?Sized> Drop for Checkout<'_, T> {
    fn drop(&mut self) {
        if let Some(i) = self.instance.take() {
            self.pool.free.lock().unwrap_or_else(|p| p.into_inner()).push(i);
            self.pool.returned.notify_one();
        }
    }
}

impl Detector for Pool<dyn Detector> {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn detect(&self, image: &Raster, vocabulary: &[String]) -> Result<Vec<BoundingBox>, BackendError> {
        self.with(|d| d.detect(image, vocabulary))
    }
}

impl Segmenter for Pool<dyn Segmenter> {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn segment(&self, image: &Raster, prompt: &BoundingBox) -> Result<Mask, BackendError> {
        self.with(|s| s.segment(image, prompt))
    }
}

impl Interpreter for Pool<dyn Interpreter> {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn interpret(&self, request: &ConceptRequest) -> Result<String, BackendError> {
        self.with(|i| i.interpret(request))
    }
}

impl DepthEstimator for Pool<dyn DepthEstimator> {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn estimate(&self, image: &Raster) -> Result<Vec<f32>, BackendError> {
        self.with(|d| d.estimate(image))
    }
}

impl Generator for Pool<dyn Generator> {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Raster, BackendError> {
        self.with(|g| g.generate(request))
    }
}
