//! Discrete-event model of client wire, NIC, PCIe, optional memory, and
//! run-to-completion cores, with slicing at the NIC boundary.
//!
//! Time is integer picoseconds. Events are ordered by `(time, sequence)`.

mod config;
mod histogram;
mod queue;
mod run;
mod sweep;

pub use config::{
    Ddio, LinksSection, LoadStream, MeasuringStream, Saturation, SimConfig, SimSection, SizeWeight, SlicingMode,
    SlicingSection, StreamsSection,
};
pub use histogram::{LatencyHistogram, LatencySummary};
pub use queue::QueueModel;
pub use run::{pcie_traffic, run, PcieTraffic, SimReport, StreamReport};
pub use sweep::{csv_row, report_row, sweep, SweepAxis, SweepRow, SweepTable, CSV_COLUMNS, FIXED_SLICE_MARKS};
