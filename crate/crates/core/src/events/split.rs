use super::{Event, EventStream};
use crate::error::{Error, Result};

/// `g` equal segments covering `[t0, t1)` preceded by one auxiliary
/// reference segment `[t0 - dt, t0)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitWindows {
    pub segments: usize,
    /// Microseconds per segment.
    pub dt: u64,
    /// `segments + 1` half-open `(start, end)` windows, auxiliary first.
    pub windows: Vec<(u64, u64)>,
}

impl SplitWindows {
    /// Boundaries are `t0 + i·(t1 - t0)/g` rounded down to whole
    /// microseconds, so segments are exactly equal when `g` divides the span.
    /// The auxiliary start saturates at zero.
    pub fn new(t0: u64, t1: u64, segments: usize) -> Result<Self> {
        if t1 <= t0 {
            return Err(Error::Usage(format!("split needs t1 > t0, got [{t0}, {t1})")));
        }
        if segments == 0 {
            return Err(Error::Usage("split needs at least one segment".into()));
        }
        let span = t1 - t0;
        let g = segments as u64;
        let dt = span / g;
        let boundary = |i: u64| t0 + (i as u128 * span as u128 / g as u128) as u64;
        let mut windows = Vec::with_capacity(segments + 1);
        windows.push((t0.saturating_sub(dt), t0));
        for i in 1..=g {
            windows.push((boundary(i - 1), boundary(i)));
        }
        Ok(Self {
            segments,
            dt,
            windows,
        })
    }

    pub fn auxiliary(&self) -> (u64, u64) {
        self.windows[0]
    }

    /// The evaluated interval `[t0, t1)`.
    pub fn span(&self) -> (u64, u64) {
        (self.windows[1].0, self.windows[self.segments].1)
    }
}

/// A split plus the events falling in each window.
#[derive(Clone, Debug)]
pub struct SplitEvents<'a> {
    pub windows: SplitWindows,
    pub slices: Vec<&'a [Event]>,
}

pub fn split_events(stream: &EventStream, t0: u64, t1: u64, segments: usize) -> Result<SplitEvents<'_>> {
    let windows = SplitWindows::new(t0, t1, segments)?;
    let slices = windows
        .windows
        .iter()
        .map(|&(s, e)| stream.window(s, e))
        .collect();
    Ok(SplitEvents { windows, slices })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_for_five_segments() {
        let w = SplitWindows::new(10_000, 60_000, 5).unwrap();
        assert_eq!(w.dt, 10_000);
        let bounds: Vec<u64> = w.windows.iter().map(|&(s, _)| s).chain([w.windows[5].1]).collect();
        assert_eq!(bounds, vec![0, 10_000, 20_000, 30_000, 40_000, 50_000, 60_000]);
        assert_eq!(w.auxiliary(), (0, 10_000));
        assert_eq!(w.span(), (10_000, 60_000));
    }

    #[test]
    fn single_segment_gives_two_windows() {
        let w = SplitWindows::new(100, 200, 1).unwrap();
        assert_eq!(w.windows, vec![(0, 100), (100, 200)]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(SplitWindows::new(5, 5, 2).is_err());
        assert!(SplitWindows::new(0, 5, 0).is_err());
    }

    #[test]
    fn empty_stream_gives_empty_slices() {
        let s = EventStream::empty(8, 8);
        let split = split_events(&s, 10, 60, 5).unwrap();
        assert_eq!(split.slices.len(), 6);
        assert!(split.slices.iter().all(|sl| sl.is_empty()));
    }

    #[test]
    fn auxiliary_window_saturates_before_stream_start() {
        let w = SplitWindows::new(3, 53, 5).unwrap();
        assert_eq!(w.auxiliary(), (0, 3));
    }

    #[test]
    fn boundary_event_goes_to_next_window() {
        let ev = vec![Event::new(0, 0, 19_999, 1), Event::new(0, 0, 20_000, 1)];
        let s = EventStream::new(1, 1, ev).unwrap();
        let split = split_events(&s, 10_000, 60_000, 5).unwrap();
        assert_eq!(split.slices[1].len(), 1);
        assert_eq!(split.slices[2][0].t, 20_000);
    }
}
