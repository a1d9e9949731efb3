//! Event data model, temporal splitting and voxel grids.

mod split;
mod voxel;

pub use split::{split_events, SplitEvents, SplitWindows};
pub use voxel::{build_voxel_grid, normalize_timestamps, voxelize_with_range, VoxelGrid};

use crate::error::{Error, Result};

/// One brightness-change record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    /// `+1` or `-1`.
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: i8) -> Self {
        Self { x, y, t, p }
    }
}

/// Time-sorted events from a `width × height` sensor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::Usage(format!(
                    "event {i} at ({}, {}) outside {width}×{height} sensor",
                    e.x, e.y
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::Usage(format!("event {i} has polarity {}", e.p)));
            }
            if i > 0 && events[i - 1].t > e.t {
                return Err(Error::Usage(format!("event {i} breaks timestamp order")));
            }
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `start <= t < end`.
    pub fn window(&self, start: u64, end: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < start);
        let hi = self.events.partition_point(|e| e.t < end);
        &self.events[lo..hi.max(lo)]
    }
}
