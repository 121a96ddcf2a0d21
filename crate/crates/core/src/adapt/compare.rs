use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::sim::Trace;

/// Which channels take part in a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub vacuum: bool,
    pub signals: bool,
}

impl Channels {
    pub const ALL: Channels = Channels {
        vacuum: true,
        signals: true,
    };
    pub const VACUUM: Channels = Channels {
        vacuum: true,
        signals: false,
    };
    pub const SIGNALS: Channels = Channels {
        vacuum: false,
        signals: true,
    };
}

/// Deviation between a measured and a virtual trace over their common time
/// range. Vacuum metrics are time-weighted (trapezoidal over the measured
/// timestamps); signal mismatch is the time during which H2 or H1 disagree.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviationReport {
    pub rmse_mbar: f64,
    pub max_abs_mbar: f64,
    pub cumulative_abs_mbar_s: f64,
    pub h2_mismatch: bool,
    pub h1_mismatch: bool,
    pub h2_mismatch_s: f64,
    pub h1_mismatch_s: f64,
    /// Length of the compared time range, s.
    pub overlap_s: f64,
    pub samples: usize,
}

impl DeviationReport {
    /// Fraction of the compared time during which at least one of the two
    /// signals was wrong (upper bound: the sum of both).
    pub fn signal_mismatch_fraction(&self) -> f64 {
        if self.overlap_s > 0.0 {
            ((self.h2_mismatch_s + self.h1_mismatch_s) / self.overlap_s).min(1.0)
        } else if self.h1_mismatch || self.h2_mismatch {
            1.0
        } else {
            0.0
        }
    }
}

/// Compare `virtual_` against `measured`, resampling the virtual trace onto
/// the measured timestamps (linear for vacuum, zero-order hold for signals).
pub fn compare_traces(
    measured: &Trace,
    virtual_: &Trace,
    channels: Channels,
) -> Result<DeviationReport, AdaptError> {
    if measured.frames.is_empty() || virtual_.frames.is_empty() {
        return Err(AdaptError::Incomparable("a trace has no frames".into()));
    }
    let lo = measured.start().max(virtual_.start());
    let hi = measured.end().min(virtual_.end());
    if lo > hi {
        return Err(AdaptError::Incomparable(format!(
            "time ranges do not overlap (measured {}..{} s, virtual {}..{} s)",
            measured.start(),
            measured.end(),
            virtual_.start(),
            virtual_.end()
        )));
    }
    let first = measured.frames.partition_point(|f| f.t < lo);
    let last = measured.frames.partition_point(|f| f.t <= hi);
    let frames = &measured.frames[first..last];
    if frames.is_empty() {
        return Err(AdaptError::Incomparable(
            "no measured sample inside the common time range".into(),
        ));
    }

    let mut report = DeviationReport {
        samples: frames.len(),
        overlap_s: frames[frames.len() - 1].t - frames[0].t,
        ..Default::default()
    };
    let mut sq_integral = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (i, m) in frames.iter().enumerate() {
        if channels.vacuum {
            let v = virtual_.vacuum_at(m.t).expect("timestamp inside virtual range");
            let e = (m.vacuum_mbar - v).abs();
            report.max_abs_mbar = report.max_abs_mbar.max(e);
            if let Some((tp, ep)) = prev {
                let h = m.t - tp;
                report.cumulative_abs_mbar_s += 0.5 * h * (e + ep);
                sq_integral += 0.5 * h * (e * e + ep * ep);
            }
            prev = Some((m.t, e));
        }
        if channels.signals {
            let v = virtual_.frame_at(m.t).expect("timestamp inside virtual range");
            let hold = frames.get(i + 1).map_or(0.0, |n| n.t - m.t);
            if v.part_present != m.part_present {
                report.h2_mismatch = true;
                report.h2_mismatch_s += hold;
            }
            if v.in_control != m.in_control {
                report.h1_mismatch = true;
                report.h1_mismatch_s += hold;
            }
        }
    }
    if channels.vacuum {
        report.rmse_mbar = if report.overlap_s > 0.0 {
            (sq_integral / report.overlap_s).sqrt()
        } else {
            report.max_abs_mbar
        };
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Inputs, Outputs, SignalFrame};
    use crate::sim::TraceMeta;
    use proptest::prelude::*;

    fn trace(points: &[(f64, f64, bool)]) -> Trace {
        Trace {
            meta: TraceMeta::default(),
            frames: points
                .iter()
                .map(|&(t, v, h2)| {
                    SignalFrame::new(
                        t,
                        Inputs::IDLE,
                        Outputs {
                            part_present: h2,
                            in_control: false,
                            vacuum_mbar: v,
                            power_w: 0.0,
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn constant_offset() {
        let ts: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
        let m = trace(&ts.iter().map(|&t| (t, 100.0 + 10.0 * t, false)).collect::<Vec<_>>());
        let v = trace(&ts.iter().map(|&t| (t, 90.0 + 10.0 * t, false)).collect::<Vec<_>>());
        let r = compare_traces(&m, &v, Channels::ALL).unwrap();
        assert!((r.rmse_mbar - 10.0).abs() < 1e-9);
        assert!((r.max_abs_mbar - 10.0).abs() < 1e-9);
        assert!((r.cumulative_abs_mbar_s - 20.0).abs() < 1e-9);
        assert!(!r.h1_mismatch && !r.h2_mismatch);
    }

    #[test]
    fn virtual_is_interpolated() {
        let m = trace(&[(0.0, 0.0, false), (0.5, 5.0, false), (1.0, 10.0, false)]);
        let v = trace(&[(0.0, 0.0, false), (1.0, 10.0, false)]);
        assert_eq!(compare_traces(&m, &v, Channels::ALL).unwrap().max_abs_mbar, 0.0);
    }

    #[test]
    fn signal_mismatch_time() {
        let m = trace(&[(0.0, 0.0, false), (1.0, 0.0, true), (2.0, 0.0, true)]);
        let v = trace(&[(0.0, 0.0, false), (1.5, 0.0, true), (2.0, 0.0, true)]);
        let r = compare_traces(&m, &v, Channels::SIGNALS).unwrap();
        assert!(r.h2_mismatch && !r.h1_mismatch);
        assert_eq!(r.h2_mismatch_s, 1.0);
        assert_eq!(r.signal_mismatch_fraction(), 0.5);
        assert_eq!(r.rmse_mbar, 0.0);
    }

    #[test]
    fn disjoint_ranges_are_incomparable() {
        let m = trace(&[(0.0, 0.0, false), (1.0, 0.0, false)]);
        let v = trace(&[(2.0, 0.0, false), (3.0, 0.0, false)]);
        assert!(matches!(
            compare_traces(&m, &v, Channels::ALL),
            Err(AdaptError::Incomparable(_))
        ));
        let empty = Trace {
            meta: TraceMeta::default(),
            frames: vec![],
        };
        assert!(compare_traces(&m, &empty, Channels::ALL).is_err());
    }

    proptest! {
        #[test]
        fn self_comparison_is_zero(
            values in proptest::collection::vec((0.0f64..700.0, any::<bool>()), 1..60),
            step in 1e-4f64..0.1,
        ) {
            let pts: Vec<(f64, f64, bool)> = values
                .iter()
                .enumerate()
                .map(|(i, &(v, b))| (i as f64 * step, v, b))
                .collect();
            let x = trace(&pts);
            let r = compare_traces(&x, &x, Channels::ALL).unwrap();
            prop_assert_eq!(r.rmse_mbar, 0.0);
            prop_assert_eq!(r.max_abs_mbar, 0.0);
            prop_assert_eq!(r.cumulative_abs_mbar_s, 0.0);
            prop_assert!(!r.h1_mismatch && !r.h2_mismatch);
        }

        #[test]
        fn metrics_non_negative(
            a in proptest::collection::vec(0.0f64..700.0, 2..40),
            shift in -0.05f64..0.05,
        ) {
            let m = trace(&a.iter().enumerate().map(|(i, &v)| (i as f64 * 0.01, v, v > 300.0)).collect::<Vec<_>>());
            let v = trace(&a.iter().enumerate().map(|(i, &v)| (i as f64 * 0.01 + shift, v * 0.9, v > 350.0)).collect::<Vec<_>>());
            if let Ok(r) = compare_traces(&m, &v, Channels::ALL) {
                prop_assert!(r.rmse_mbar >= 0.0 && r.max_abs_mbar >= 0.0 && r.cumulative_abs_mbar_s >= 0.0);
                prop_assert!(r.rmse_mbar <= r.max_abs_mbar + 1e-9);
            }
        }
    }
}
