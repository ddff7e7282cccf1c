/// FIFO store-and-forward server. A job arriving at `t` departs at
/// `max(t + base, previous departure) + service`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueModel {
    ps_per_byte: f64,
    base_ps: u64,
    last_departure_ps: u64,
    busy_ps: u64,
    bytes: u64,
    jobs: u64,
    max_sojourn_ps: u64,
}

impl QueueModel {
    /// `gbps` may be infinite for a pure delay or compute server.
    pub fn new(gbps: f64, base_ns: f64) -> Self {
        QueueModel {
            ps_per_byte: 8000.0 / gbps,
            base_ps: (base_ns * 1000.0).round() as u64,
            last_departure_ps: 0,
            busy_ps: 0,
            bytes: 0,
            jobs: 0,
            max_sojourn_ps: 0,
        }
    }

    pub fn serialization_ps(&self, bytes: usize) -> u64 {
        (bytes as f64 * self.ps_per_byte).round() as u64
    }

    /// Earliest time service could begin for a job arriving now.
    pub fn start_time(&self, arrival_ps: u64) -> u64 {
        (arrival_ps + self.base_ps).max(self.last_departure_ps)
    }

    /// Serves a job with an explicit service time; returns its departure.
    pub fn serve(&mut self, arrival_ps: u64, service_ps: u64) -> u64 {
        let departure = self.start_time(arrival_ps) + service_ps;
        self.last_departure_ps = departure;
        self.busy_ps += service_ps;
        self.jobs += 1;
        self.max_sojourn_ps = self.max_sojourn_ps.max(departure - arrival_ps);
        departure
    }

    /// Serves a transfer of `bytes`; returns its departure.
    pub fn transfer(&mut self, arrival_ps: u64, bytes: usize) -> u64 {
        self.bytes += bytes as u64;
        let ser = self.serialization_ps(bytes);
        self.serve(arrival_ps, ser)
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn jobs(&self) -> u64 {
        self.jobs
    }

    pub fn max_sojourn_ps(&self) -> u64 {
        self.max_sojourn_ps
    }

    /// Busy share of `[0, horizon)`, capped at 1.
    pub fn utilization(&self, horizon_ps: u64) -> f64 {
        if horizon_ps == 0 {
            return 0.0;
        }
        (self.busy_ps as f64 / horizon_ps as f64).min(1.0)
    }
}
