use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::domain::{SignalTier, WorkloadProfile};
use crate::envsim::{InterferenceState, NetworkSample};
use crate::fedcore::ClientDataset;

macro_rules! bin_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $label:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn label(self) -> &'static str {
                match self { $($name::$var => $label),+ }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = ControllerError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($label => Ok($name::$var),)+
                    _ => Err(ControllerError::Parse(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), s
                    ))),
                }
            }
        }
    };
}

bin_enum!(ConvBin { Small => "small", Medium => "medium", Large => "large", Larger => "larger" });
bin_enum!(FcBin { Small => "small", Large => "large" });
bin_enum!(RcBin { Small => "small", Medium => "medium", Large => "large" });
bin_enum!(
    /// Co-runner CPU or memory load.
    UtilBin { None => "none", Small => "small", Medium => "medium", Large => "large" }
);
bin_enum!(NetBin { Regular => "regular", Bad => "bad" });
bin_enum!(DataBin { Small => "small", Medium => "medium", Large => "large" });

impl ConvBin {
    /// `[30, 40)` has no bin of its own and is folded into `Large`.
    pub fn of(count: u32) -> Self {
        match count {
            0..=9 => ConvBin::Small,
            10..=19 => ConvBin::Medium,
            20..=39 => ConvBin::Large,
            _ => ConvBin::Larger,
        }
    }
}

impl FcBin {
    pub fn of(count: u32) -> Self {
        if count < 10 {
            FcBin::Small
        } else {
            FcBin::Large
        }
    }
}

impl RcBin {
    pub fn of(count: u32) -> Self {
        match count {
            0..=4 => RcBin::Small,
            5..=9 => RcBin::Medium,
            _ => RcBin::Large,
        }
    }
}

impl UtilBin {
    pub fn of(fraction: f64) -> Self {
        if fraction <= 0.0 {
            UtilBin::None
        } else if fraction < 0.25 {
            UtilBin::Small
        } else if fraction < 0.75 {
            UtilBin::Medium
        } else {
            UtilBin::Large
        }
    }
}

impl NetBin {
    pub fn of(net: NetworkSample) -> Self {
        match net.signal_tier {
            SignalTier::Regular => NetBin::Regular,
            SignalTier::Bad => NetBin::Bad,
        }
    }
}

impl DataBin {
    pub fn of(present: usize, total: usize) -> Self {
        if present >= total {
            DataBin::Large
        } else if (present as f64) < 0.25 * total as f64 {
            DataBin::Small
        } else {
            DataBin::Medium
        }
    }
}

/// Discretized controller state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateVector {
    pub conv: ConvBin,
    pub fc: FcBin,
    pub rc: RcBin,
    pub co_cpu: UtilBin,
    pub co_mem: UtilBin,
    pub network: NetBin,
    pub data: DataBin,
}

/// Number of distinct states.
pub const STATE_COUNT: usize = 4 * 2 * 3 * 4 * 4 * 2 * 3;

impl StateVector {
    /// Mixed-radix index in `0..STATE_COUNT`, conv most significant.
    pub fn index(&self) -> usize {
        let digits = [
            (self.conv.index(), 4),
            (self.fc.index(), 2),
            (self.rc.index(), 3),
            (self.co_cpu.index(), 4),
            (self.co_mem.index(), 4),
            (self.network.index(), 2),
            (self.data.index(), 3),
        ];
        digits.iter().fold(0, |acc, &(d, radix)| acc * radix + d)
    }

    pub fn from_index(mut idx: usize) -> Option<Self> {
        if idx >= STATE_COUNT {
            return None;
        }
        let mut take = |radix: usize| {
            let d = idx % radix;
            idx /= radix;
            d
        };
        let data = DataBin::ALL[take(3)];
        let network = NetBin::ALL[take(2)];
        let co_mem = UtilBin::ALL[take(4)];
        let co_cpu = UtilBin::ALL[take(4)];
        let rc = RcBin::ALL[take(3)];
        let fc = FcBin::ALL[take(2)];
        let conv = ConvBin::ALL[take(4)];
        Some(Self {
            conv,
            fc,
            rc,
            co_cpu,
            co_mem,
            network,
            data,
        })
    }

    /// Modal bin per runtime component over `states`; ties go to the lower
    /// bin. Workload bins are taken from `workload`.
    pub fn modal(workload: &WorkloadProfile, states: &[StateVector]) -> Option<Self> {
        fn mode<T: Copy>(all: &[T], values: impl Iterator<Item = usize>) -> T {
            let mut counts = vec![0usize; all.len()];
            for v in values {
                counts[v] += 1;
            }
            let best = counts
                .iter()
                .enumerate()
                .fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
            all[best]
        }
        if states.is_empty() {
            return None;
        }
        Some(Self {
            conv: ConvBin::of(workload.conv_layers),
            fc: FcBin::of(workload.fc_layers),
            rc: RcBin::of(workload.rc_layers),
            co_cpu: mode(UtilBin::ALL, states.iter().map(|s| s.co_cpu.index())),
            co_mem: mode(UtilBin::ALL, states.iter().map(|s| s.co_mem.index())),
            network: mode(NetBin::ALL, states.iter().map(|s| s.network.index())),
            data: mode(DataBin::ALL, states.iter().map(|s| s.data.index())),
        })
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.conv, self.fc, self.rc, self.co_cpu, self.co_mem, self.network, self.data
        )
    }
}

impl FromStr for StateVector {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 7 {
            return Err(ControllerError::Parse(format!(
                "state `{s}` must have 7 components"
            )));
        }
        Ok(Self {
            conv: parts[0].parse()?,
            fc: parts[1].parse()?,
            rc: parts[2].parse()?,
            co_cpu: parts[3].parse()?,
            co_mem: parts[4].parse()?,
            network: parts[5].parse()?,
            data: parts[6].parse()?,
        })
    }
}

/// Bins one device's raw round inputs.
pub fn observe_state(
    workload: &WorkloadProfile,
    interference: InterferenceState,
    net: NetworkSample,
    data: &ClientDataset,
    n_classes_total: usize,
) -> StateVector {
    StateVector {
        conv: ConvBin::of(workload.conv_layers),
        fc: FcBin::of(workload.fc_layers),
        rc: RcBin::of(workload.rc_layers),
        co_cpu: UtilBin::of(interference.co_cpu),
        co_mem: UtilBin::of(interference.co_mem),
        network: NetBin::of(net),
        data: DataBin::of(data.classes_present(), n_classes_total),
    }
}
