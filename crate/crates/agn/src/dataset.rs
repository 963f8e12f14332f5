//! Labeled image datasets.

use crate::error::{AgnError, Result};
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LabeledDataset<F: Scalar> {
    items: Vec<(Image<F>, usize)>,
    class_count: usize,
}

impl<F: Scalar> LabeledDataset<F> {
    pub fn new(items: Vec<(Image<F>, usize)>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(AgnError::InvalidValue("class_count must be positive".into()));
        }
        for (i, (_, label)) in items.iter().enumerate() {
            if *label >= class_count {
                return Err(AgnError::InvalidValue(format!(
                    "item {i} has label {label} >= class_count {class_count}"
                )));
            }
        }
        Ok(Self { items, class_count })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(Image<F>, usize)] {
        &self.items
    }

    pub fn images(&self) -> impl Iterator<Item = &Image<F>> {
        self.items.iter().map(|(img, _)| img)
    }

    pub fn push(&mut self, image: Image<F>, label: usize) -> Result<()> {
        if label >= self.class_count {
            return Err(AgnError::InvalidValue(format!(
                "label {label} >= class_count {}",
                self.class_count
            )));
        }
        self.items.push((image, label));
        Ok(())
    }

    /// Items belonging to one class.
    pub fn filter_class(&self, class: usize) -> Vec<&Image<F>> {
        self.items
            .iter()
            .filter(|(_, l)| *l == class)
            .map(|(img, _)| img)
            .collect()
    }

    /// Deterministic split: every k-th item (by position) goes to the second
    /// half, the rest to the first.
    pub fn split_holdout(&self, every_kth: usize) -> (Self, Self) {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            if every_kth > 0 && i % every_kth == every_kth - 1 {
                held.push(item.clone());
            } else {
                train.push(item.clone());
            }
        }
        (
            Self {
                items: train,
                class_count: self.class_count,
            },
            Self {
                items: held,
                class_count: self.class_count,
            },
        )
    }
}
