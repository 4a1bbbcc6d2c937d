//! Deterministic serialization of the communicating processes.
//!
//! Sends go to a one-place buffer per channel and block while it is full;
//! receives block while it is empty. The running process continues until it
//! blocks or terminates, then control passes to the next process (in
//! declaration order, cyclically) that can make progress. The sequence of
//! executed lines is eventually periodic; it is returned as a finite prefix
//! followed by the repeating period.

use std::collections::HashMap;
use std::fmt;

use super::{SpecError, Stmt, SystemSpec};

/// One executed line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub process: usize,
    pub line: usize,
    pub label: String,
    /// For a receive, the label of the send whose value it took; for a
    /// send that had to wait, the receive that emptied the buffer.
    pub unlocked_by: Option<String>,
    /// The process had tried this line earlier and was blocked.
    pub blocked: bool,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)?;
        if let Some(u) = &self.unlocked_by {
            write!(f, "[{u}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub prefix: Vec<Event>,
    /// Empty when every process terminates.
    pub period: Vec<Event>,
}

impl Schedule {
    /// Prefix followed by `periods` copies of the period.
    pub fn unrolled(&self, periods: usize) -> Vec<&Event> {
        let mut out: Vec<&Event> = self.prefix.iter().collect();
        for _ in 0..periods {
            out.extend(self.period.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.period.is_empty()
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |es: &[Event]| {
            es.iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        write!(f, "prefix: {}", join(&self.prefix))?;
        if self.period.is_empty() {
            write!(f, "\nperiod: (terminates)")
        } else {
            write!(f, "\nperiod: {}", join(&self.period))
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Config {
    current: usize,
    pcs: Vec<usize>,
    buffers: Vec<Option<String>>,
    blocked: Vec<bool>,
}

struct Machine<'a> {
    spec: &'a SystemSpec,
    channel_index: HashMap<&'a str, usize>,
    pcs: Vec<usize>,
    buffers: Vec<Option<String>>,
    /// Label of the receive that last emptied each buffer.
    drained_by: Vec<Option<String>>,
    blocked: Vec<bool>,
}

impl<'a> Machine<'a> {
    fn new(spec: &'a SystemSpec) -> Self {
        let channel_index = spec
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.as_str(), i))
            .collect();
        let n = spec.processes.len();
        Machine {
            spec,
            channel_index,
            pcs: vec![0; n],
            buffers: vec![None; spec.channels.len()],
            drained_by: vec![None; spec.channels.len()],
            blocked: vec![false; n],
        }
    }

    fn terminated(&self, p: usize) -> bool {
        self.pcs[p] >= self.spec.processes[p].lines.len()
    }

    fn can_progress(&self, p: usize) -> bool {
        if self.terminated(p) {
            return false;
        }
        match self.spec.line(p, self.pcs[p]).communication() {
            Some(Stmt::Send { channel }) => {
                self.buffers[self.channel_index[channel.as_str()]].is_none()
            }
            Some(Stmt::Receive { channel }) => {
                self.buffers[self.channel_index[channel.as_str()]].is_some()
            }
            _ => true,
        }
    }

    /// Executes the line at the pc of `p`, which must be able to progress.
    fn step(&mut self, p: usize) -> Event {
        let li = self.pcs[p];
        let process = &self.spec.processes[p];
        let line = &process.lines[li];
        let mut unlocked_by = None;
        match line.communication() {
            Some(Stmt::Send { channel }) => {
                let c = self.channel_index[channel.as_str()];
                self.buffers[c] = Some(line.label.clone());
                if self.blocked[p] {
                    unlocked_by = self.drained_by[c].clone();
                }
            }
            Some(Stmt::Receive { channel }) => {
                let c = self.channel_index[channel.as_str()];
                unlocked_by = self.buffers[c].take();
                self.drained_by[c] = Some(line.label.clone());
            }
            _ => {}
        }
        self.pcs[p] = if line.is_end() {
            process.loop_bounds().map_or(li + 1, |(head, _)| head)
        } else {
            li + 1
        };
        let ev = Event {
            process: p,
            line: li,
            label: line.label.clone(),
            unlocked_by,
            blocked: self.blocked[p],
        };
        self.blocked[p] = false;
        ev
    }

    fn config(&self, current: usize) -> Config {
        Config {
            current,
            pcs: self.pcs.clone(),
            buffers: self.buffers.clone(),
            blocked: self.blocked.clone(),
        }
    }
}

/// Computes the execution order of the system.
///
/// Fails with [`SpecError::Deadlock`] when every unfinished process is
/// blocked.
pub fn serialize_order(spec: &SystemSpec) -> Result<Schedule, SpecError> {
    let n = spec.processes.len();
    let mut m = Machine::new(spec);
    let mut events: Vec<Event> = Vec::new();
    // Repetition is detected at context switches so that the period starts
    // where a process resumes; runs that never switch are keyed per event.
    let mut switches: HashMap<Config, usize> = HashMap::new();
    let mut in_run: HashMap<Config, usize> = HashMap::new();
    let mut current = spec.start_index();
    let mut run_start = true;
    loop {
        if !m.can_progress(current) {
            if !m.terminated(current) {
                m.blocked[current] = true;
            }
            let next = (1..=n)
                .map(|k| (current + k) % n)
                .find(|&q| m.can_progress(q));
            match next {
                Some(q) => {
                    current = q;
                    run_start = true;
                }
                None if (0..n).all(|q| m.terminated(q)) => {
                    return Ok(Schedule {
                        prefix: events,
                        period: Vec::new(),
                    })
                }
                None => {
                    let blocked = (0..n)
                        .filter(|&q| !m.terminated(q))
                        .map(|q| {
                            let l = spec.line(q, m.pcs[q]);
                            format!(
                                "{} blocked at {}: {}",
                                spec.processes[q].name,
                                l.label,
                                l.code()
                            )
                        })
                        .collect();
                    return Err(SpecError::Deadlock { blocked });
                }
            }
            continue;
        }
        let key = m.config(current);
        let seen = if run_start {
            in_run.clear();
            &mut switches
        } else {
            &mut in_run
        };
        if let Some(&start) = seen.get(&key) {
            let period = events.split_off(start);
            return Ok(Schedule {
                prefix: events,
                period,
            });
        }
        seen.insert(key, events.len());
        run_start = false;
        events.push(m.step(current));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_spec, BENCHMARK_SYS};

    fn render(es: &[Event]) -> Vec<String> {
        es.iter()
            .map(|e| {
                let mut s = e.to_string();
                if e.blocked {
                    s.push('*');
                }
                s
            })
            .collect()
    }

    #[test]
    fn benchmark_order() {
        let s = serialize_order(&parse_spec(BENCHMARK_SYS).unwrap()).unwrap();
        let prefix = "1p 2p 3p 4p 5p 6p 1c 2c 3c 4c 5c[6p] 6c 7c 8c 9c 10c";
        let period = "7p[10c]* 8p 9p 4p 5p 6p 11c[6p]* 12c 6c 7c 8c 9c 10c";
        assert_eq!(render(&s.prefix).join(" "), prefix);
        assert_eq!(render(&s.period).join(" "), period);
    }

    #[test]
    fn every_loop_line_runs_once_per_period() {
        let spec = parse_spec(BENCHMARK_SYS).unwrap();
        let s = serialize_order(&spec).unwrap();
        for (pi, p) in spec.processes.iter().enumerate() {
            let (head, end) = p.loop_bounds().unwrap();
            for li in head..=end {
                let k = s
                    .period
                    .iter()
                    .filter(|e| e.process == pi && e.line == li)
                    .count();
                assert_eq!(k, 1, "{}", p.lines[li].label);
            }
        }
        let unrolled = s.unrolled(3);
        let sends = unrolled.iter().filter(|e| e.label == "6p").count();
        let recvs = unrolled
            .iter()
            .filter(|e| e.label == "5c" || e.label == "11c")
            .count();
        assert_eq!(sends, recvs);
        // A receive always takes the value of the most recent matching send.
        let mut last_send: HashMap<&str, &str> = HashMap::new();
        for e in &unrolled {
            match spec.line(e.process, e.line).communication() {
                Some(Stmt::Send { channel }) => {
                    last_send.insert(channel, &e.label);
                }
                Some(Stmt::Receive { channel }) => {
                    assert_eq!(
                        e.unlocked_by.as_deref(),
                        last_send.get(channel.as_str()).copied()
                    );
                }
                _ => {}
            }
        }
    }

    #[test]
    fn mutual_receive_deadlocks() {
        let t = "[variables]\na = 1\nb = 1\n[channels]\na = p -> q\nb = q -> p\n\
                 [process p]\n1p: receive(b)\n2p: send(a)\n[process q]\n1q: receive(a)\n2q: send(b)\n";
        match serialize_order(&parse_spec(t).unwrap()) {
            Err(SpecError::Deadlock { blocked }) => {
                assert_eq!(blocked.len(), 2);
                assert!(blocked[0].contains("1p"));
                assert!(blocked[1].contains("1q"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn straight_line_programs_terminate() {
        let t = "[variables]\na = 1\n[channels]\na = p -> q\n\
                 [process p]\n1p: a = 2\n2p: send(a)\n[process q]\n1q: receive(a)\n";
        let s = serialize_order(&parse_spec(t).unwrap()).unwrap();
        assert!(s.is_finite());
        assert_eq!(render(&s.prefix).join(" "), "1p 2p 1q[2p]");
        let spin =
            parse_spec("[variables]\nx = 1\n[process a]\n1a: while (1)\n2a: x = 0.5*x\n3a: end\n")
                .unwrap();
        let s = serialize_order(&spin).unwrap();
        assert_eq!(render(&s.prefix).join(" "), "1a");
        assert_eq!(render(&s.period).join(" "), "2a 3a 1a");
        let empty = parse_spec("[variables]\nx = 1\n[process a]\n").unwrap();
        assert!(serialize_order(&empty).unwrap().prefix.is_empty());
    }

    #[test]
    fn full_buffer_blocks_the_sender() {
        let t = "[variables]\na = 1\n[channels]\na = p -> q\n\
                 [process p]\n1p: while (1)\n2p: send(a)\n3p: end\n\
                 [process q]\n1q: while (1)\n2q: receive(a)\n3q: end\n";
        let s = serialize_order(&parse_spec(t).unwrap()).unwrap();
        assert_eq!(render(&s.prefix).join(" "), "1p 2p 3p 1p 1q 2q[2p] 3q 1q");
        assert_eq!(render(&s.period).join(" "), "2p[2q]* 3p 1p 2q[2p]* 3q 1q");
    }
}
