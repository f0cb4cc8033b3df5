//! Install agent rollouts over simulated hosts.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::campaign::{host_endpoint, server_endpoint};
use super::net::{AfterAttempt, Exchange, Net, Queue};
use super::{NetworkModel, SimError, TraceEvent, SERVER_LINK};
use crate::agent::{
    step_agent, AgentEvent, AgentId, AgentSnapshot, AgentStatus, InstallReportEntry, SeededIds,
};
use crate::clock::ManualClock;
use crate::host::{AppliedConfig, HostPlatform, Outbound};
use crate::server::{ServerConfig, ServerNode};
use crate::wire::{Message, RetryPolicy, WireError};

#[derive(Debug, Clone, PartialEq)]
pub struct InstallCampaign {
    /// Hosts `h1`..`hN`, visited in order.
    pub hosts: usize,
    pub payload: BTreeMap<String, String>,
    pub network: NetworkModel,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone)]
pub struct InstallOutcome {
    pub agent_id: AgentId,
    /// The report as recorded by the server; None if the agent never made
    /// it home.
    pub report: Option<Vec<InstallReportEntry>>,
    pub configs: BTreeMap<String, AppliedConfig>,
    pub trace: Vec<TraceEvent>,
}

enum Purpose {
    /// The server sending its copy to the current hop.
    ServerDispatch,
    Forward(usize),
    Return(usize),
}

enum Ev {
    Attempt(usize),
    Arrive { x: usize, reply: bool, frame: Vec<u8> },
    GiveUp(usize),
}

struct World {
    policy: RetryPolicy,
    server: ServerNode,
    hosts: Vec<HostPlatform>,
    names: Vec<String>,
    /// The server's copy while it is still looking for a first hop.
    outgoing: AgentSnapshot,
    busy: Vec<bool>,
    net: Net,
    q: Queue<Ev>,
    xs: Vec<Exchange<Purpose>>,
}

pub fn run_install(c: &InstallCampaign) -> Result<InstallOutcome, SimError> {
    if c.hosts == 0 {
        return Err(SimError::InvalidConfig("no hosts".into()));
    }
    let names: Vec<String> = (1..=c.hosts).map(|i| format!("h{i}")).collect();
    c.network.validate(&names)?;
    let clock = ManualClock::new(0);
    let mut config = ServerConfig::new(server_endpoint());
    config.policy = c.retry;
    let mut server =
        ServerNode::in_memory(config, BTreeMap::new(), Box::new(SeededIds::new(c.network.seed)));
    let itinerary = names.iter().map(|n| host_endpoint(n)).collect();
    let snapshot = server.dispatch_install(c.payload.clone(), itinerary, 0)?;
    let agent_id = snapshot.agent_id;
    let mut w = World {
        policy: c.retry,
        server,
        hosts: names
            .iter()
            .map(|n| HostPlatform::in_memory(host_endpoint(n), Arc::new(clock.clone())))
            .collect(),
        busy: vec![false; names.len()],
        names,
        outgoing: snapshot,
        net: Net::new(c.network.clone()),
        q: Queue::new(),
        xs: Vec::new(),
    };
    w.server_send(0)?;
    while let Some((now, ev)) = w.q.pop() {
        clock.set(now);
        w.step(now, ev)?;
    }
    Ok(InstallOutcome {
        agent_id,
        report: w.server.install(&agent_id).and_then(|r| r.report.clone()),
        configs: w
            .names
            .iter()
            .cloned()
            .zip(w.hosts.iter().map(|h| h.applied_config().clone()))
            .collect(),
        trace: w.net.trace,
    })
}

impl World {
    fn link_of(&self, snapshot: &AgentSnapshot) -> Option<usize> {
        let hop = snapshot.current_hop()?;
        self.hosts.iter().position(|h| h.endpoint() == hop)
    }

    fn open(&mut self, now: u64, from: String, to: String, msg: Message, give_up_at: u64, purpose: Purpose) -> Result<(), SimError> {
        let frame = msg.encode().map_err(WireError::from)?;
        let schedule = self.net.schedule(self.policy, now, give_up_at);
        self.xs.push(Exchange {
            from,
            to,
            msg: msg.msg_type().name(),
            frame,
            schedule,
            done: false,
            purpose,
        });
        self.q.push(now, Ev::Attempt(self.xs.len() - 1));
        Ok(())
    }

    /// Sends the server's copy to its current hop, or takes it home when
    /// every hop was skipped.
    fn server_send(&mut self, now: u64) -> Result<(), SimError> {
        if self.outgoing.status == AgentStatus::Returning {
            self.server.ingest_return(&self.outgoing)?;
            return Ok(());
        }
        let to = self.link_of(&self.outgoing).expect("itinerary names a simulated host");
        let give_up = now + self.policy.install_hop_budget_ms;
        let msg = Message::Dispatch(self.outgoing.clone());
        self.open(now, SERVER_LINK.into(), self.names[to].clone(), msg, give_up, Purpose::ServerDispatch)
    }

    fn server_skip(&mut self, now: u64) -> Result<(), SimError> {
        let hop = self.outgoing.current_hop().cloned().expect("hop in flight");
        self.outgoing = step_agent(&self.outgoing, AgentEvent::HopDone(InstallReportEntry::skipped(hop)))?;
        self.server_send(now)
    }

    fn pump(&mut self, now: u64, i: usize) -> Result<(), SimError> {
        if self.busy[i] {
            return Ok(());
        }
        let Some(out) = self.hosts[i].outbound().into_iter().next() else {
            return Ok(());
        };
        self.busy[i] = true;
        let from = self.names[i].clone();
        match out {
            Outbound::Forward { snapshot, .. } => {
                let to = self.names[self.link_of(&snapshot).expect("next hop is simulated")].clone();
                let give_up = now + self.policy.install_hop_budget_ms;
                self.open(now, from, to, Message::Dispatch(snapshot), give_up, Purpose::Forward(i))
            }
            Outbound::Return { snapshot, .. } => {
                let give_up = self.policy.give_up_at(snapshot.deadline);
                self.open(now, from, SERVER_LINK.into(), Message::Return(snapshot), give_up, Purpose::Return(i))
            }
        }
    }

    fn step(&mut self, now: u64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Attempt(x) => {
                if self.xs[x].done {
                    return Ok(());
                }
                let (sent, after) = self.xs[x].attempt(&mut self.net, now);
                if let Some(at) = sent.arrives_at {
                    let frame = self.xs[x].frame.clone();
                    self.q.push(at, Ev::Arrive { x, reply: false, frame });
                }
                match after {
                    AfterAttempt::RetryAt(at) => self.q.push(at, Ev::Attempt(x)),
                    AfterAttempt::GiveUpAt(at) => self.q.push(at, Ev::GiveUp(x)),
                }
            }
            Ev::Arrive { x, reply: false, frame } => {
                let msg = Message::decode(&frame)?;
                let (from, to) = (self.xs[x].from.clone(), self.xs[x].to.clone());
                let (reply, host) = if to == SERVER_LINK {
                    (self.server.handle_message(msg, now), None)
                } else {
                    let i = self.names.iter().position(|n| *n == to).expect("simulated host");
                    (self.hosts[i].handle_message(msg), Some(i))
                };
                let bytes = reply.encode().map_err(WireError::from)?;
                let sent = self.net.send(now, &to, &from, reply.msg_type().name(), bytes.len(), false);
                if let Some(at) = sent.arrives_at {
                    self.q.push(at, Ev::Arrive { x, reply: true, frame: bytes });
                }
                if let Some(i) = host {
                    self.pump(now, i)?;
                }
            }
            Ev::Arrive { x, reply: true, frame } => {
                if self.xs[x].done {
                    return Ok(());
                }
                self.xs[x].done = true;
                let ok = matches!(
                    Message::decode(&frame)?,
                    Message::DispatchAck(_) | Message::ReturnAck(_)
                );
                self.settle(now, x, ok)?;
            }
            Ev::GiveUp(x) => {
                if self.xs[x].done {
                    return Ok(());
                }
                self.xs[x].done = true;
                let e = &self.xs[x];
                self.net.note(TraceEvent::GaveUp {
                    at: now,
                    from: e.from.clone(),
                    to: e.to.clone(),
                    msg: e.msg.to_owned(),
                });
                self.settle(now, x, false)?;
            }
        }
        Ok(())
    }

    /// A hop that refuses the agent counts as unreachable.
    fn settle(&mut self, now: u64, x: usize, ok: bool) -> Result<(), SimError> {
        let id = self.outgoing.agent_id;
        match self.xs[x].purpose {
            Purpose::ServerDispatch if ok => {}
            Purpose::ServerDispatch => self.server_skip(now)?,
            Purpose::Forward(i) => {
                self.busy[i] = false;
                if ok {
                    self.hosts[i].on_forwarded(&id)?;
                } else {
                    self.hosts[i].on_forward_failed(&id)?;
                }
                self.pump(now, i)?;
            }
            Purpose::Return(i) => {
                self.busy[i] = false;
                if ok {
                    self.hosts[i].on_return_acked(&id)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::InstallOutcome as Hop;
    use crate::sim::Partition;

    fn campaign(down: &[&str]) -> InstallCampaign {
        let mut network = NetworkModel::clean(20, 4);
        for d in down {
            network.partitions.push(Partition {
                link: (*d).into(),
                start_ms: 0,
                end_ms: u64::MAX,
            });
        }
        InstallCampaign {
            hosts: 3,
            payload: BTreeMap::from([("max_agents".into(), "4".into())]),
            network,
            retry: RetryPolicy::default(),
        }
    }

    fn outcomes(o: &InstallOutcome) -> Vec<Hop> {
        o.report.as_ref().unwrap().iter().map(|e| e.outcome).collect()
    }

    #[test]
    fn all_hosts_up() {
        let o = run_install(&campaign(&[])).unwrap();
        assert_eq!(outcomes(&o), [Hop::Applied; 3]);
        assert!(o.configs.values().all(|c| c.version == 1));
    }

    #[test]
    fn middle_host_down_is_skipped() {
        let o = run_install(&campaign(&["h2"])).unwrap();
        assert_eq!(outcomes(&o), [Hop::Applied, Hop::Skipped, Hop::Applied]);
        assert_eq!(o.configs["h1"].version, 1);
        assert_eq!(o.configs["h2"].version, 0);
        assert_eq!(o.configs["h3"].values["max_agents"], "4");
    }

    #[test]
    fn first_host_down_is_skipped_by_the_server() {
        let o = run_install(&campaign(&["h1"])).unwrap();
        assert_eq!(outcomes(&o), [Hop::Skipped, Hop::Applied, Hop::Applied]);
    }
}
