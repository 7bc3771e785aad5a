use std::ops::{Deref, DerefMut};

use super::Element;

const POOL_LIMIT: usize = 8;

/// Work buffer borrowed from a per-thread pool. Contents are unspecified
/// on creation; callers overwrite every element they read.
pub(crate) struct Scratch<T: Element> {
    buf: Vec<T>,
    len: usize,
}

impl<T: Element> Scratch<T> {
    pub fn take(len: usize) -> Self {
        let mut buf = T::scratch_pool()
            .with(|p| {
                let mut p = p.borrow_mut();
                // prefer a buffer that is already large enough
                let pos = p.iter().position(|b| b.len() >= len);
                pos.map(|i| p.swap_remove(i)).or_else(|| p.pop())
            })
            .unwrap_or_default();
        if buf.len() < len {
            buf.resize(len, T::zero());
        }
        Scratch { buf, len }
    }
}

impl<T: Element> Deref for Scratch<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.buf[..self.len]
    }
}

impl<T: Element> DerefMut for Scratch<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.buf[..self.len]
    }
}

impl<T: Element> Drop for Scratch<T> {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.buf);
        let _ = T::scratch_pool().try_with(|p| {
            let mut p = p.borrow_mut();
            if p.len() < POOL_LIMIT {
                p.push(buf);
            }
        });
    }
}
