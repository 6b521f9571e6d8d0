//! Deterministic superstep message passing between in-process ranks.
//!
//! Messages are buffered per `(source, destination)` channel and become
//! visible only at [`Transport::exchange`]. Every non-empty channel is packed
//! into one binary block, so the byte counters measure real payload volume.
//!
//! Wire format, all integers and reals little-endian:
//!
//! ```text
//! block   := count:u32 message*
//! message := tag:u8 id:u64 payload
//! ```
//!
//! Reals are IEEE-754 `f64`; ranks and counts are `u64`. Payloads by tag:
//!
//! | tag | kind                | payload                                             |
//! |-----|---------------------|-----------------------------------------------------|
//! | 1   | CreateShadow        | kinematics, radius, inv_mass, inv_inertia, owner    |
//! | 2   | UpdateShadow        | kinematics                                          |
//! | 3   | RemoveShadow        | (none)                                              |
//! | 4   | TransferOwnership   | kinematics, radius, inv_mass, inv_inertia, n, rank×n|
//! | 5   | OwnerChanged        | new owner                                           |
//! | 6   | ForceContribution   | n, (source_kind:u8, source:u64, force×3, torque×3)×n|
//! | 7   | ShadowDeleted       | (none)                                              |
//! | 8   | RegisterShadowOwner | shadow owner rank                                   |
//!
//! `kinematics` is position×3, orientation×4 (w,x,y,z), velocity×3,
//! angular velocity×3. Source kinds: 0 particle, 1 wall, 2 external.

use std::io::Write;

use thiserror::Error;

use crate::geometry::Vec3;
use crate::particle::{ForceEntry, ForceSource, Kinematics, ParticleId, ParticleState, Quat};
use crate::partition::Rank;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("rank {rank} is out of range for {count} ranks")]
    InvalidRank { rank: Rank, count: usize },
    #[error("malformed block: {0}")]
    Malformed(&'static str),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("dump failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageKind {
    CreateShadow = 1,
    UpdateShadow = 2,
    RemoveShadow = 3,
    TransferOwnership = 4,
    OwnerChanged = 5,
    ForceContribution = 6,
    ShadowDeleted = 7,
    RegisterShadowOwner = 8,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::CreateShadow,
        MessageKind::UpdateShadow,
        MessageKind::RemoveShadow,
        MessageKind::TransferOwnership,
        MessageKind::OwnerChanged,
        MessageKind::ForceContribution,
        MessageKind::ShadowDeleted,
        MessageKind::RegisterShadowOwner,
    ];

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag.wrapping_sub(1) as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::CreateShadow => "CreateShadow",
            MessageKind::UpdateShadow => "UpdateShadow",
            MessageKind::RemoveShadow => "RemoveShadow",
            MessageKind::TransferOwnership => "TransferOwnership",
            MessageKind::OwnerChanged => "OwnerChanged",
            MessageKind::ForceContribution => "ForceContribution",
            MessageKind::ShadowDeleted => "ShadowDeleted",
            MessageKind::RegisterShadowOwner => "RegisterShadowOwner",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    CreateShadow { state: ParticleState, owner: Rank },
    UpdateShadow { id: ParticleId, kinematics: Kinematics },
    RemoveShadow { id: ParticleId },
    TransferOwnership { state: ParticleState, shadow_owners: Vec<Rank> },
    OwnerChanged { id: ParticleId, new_owner: Rank },
    ForceContribution { id: ParticleId, entries: Vec<ForceEntry> },
    ShadowDeleted { id: ParticleId },
    RegisterShadowOwner { id: ParticleId, shadow_owner: Rank },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::CreateShadow { .. } => MessageKind::CreateShadow,
            Message::UpdateShadow { .. } => MessageKind::UpdateShadow,
            Message::RemoveShadow { .. } => MessageKind::RemoveShadow,
            Message::TransferOwnership { .. } => MessageKind::TransferOwnership,
            Message::OwnerChanged { .. } => MessageKind::OwnerChanged,
            Message::ForceContribution { .. } => MessageKind::ForceContribution,
            Message::ShadowDeleted { .. } => MessageKind::ShadowDeleted,
            Message::RegisterShadowOwner { .. } => MessageKind::RegisterShadowOwner,
        }
    }

    pub fn id(&self) -> ParticleId {
        match self {
            Message::CreateShadow { state, .. } | Message::TransferOwnership { state, .. } => state.id,
            Message::UpdateShadow { id, .. }
            | Message::RemoveShadow { id }
            | Message::OwnerChanged { id, .. }
            | Message::ForceContribution { id, .. }
            | Message::ShadowDeleted { id }
            | Message::RegisterShadowOwner { id, .. } => *id,
        }
    }

    /// Encoded size in bytes.
    pub fn wire_len(&self) -> usize {
        const HEADER: usize = 1 + 8;
        const KIN: usize = 13 * 8;
        const FULL: usize = KIN + 3 * 8;
        HEADER
            + match self {
                Message::CreateShadow { .. } => FULL + 8,
                Message::UpdateShadow { .. } => KIN,
                Message::RemoveShadow { .. } | Message::ShadowDeleted { .. } => 0,
                Message::TransferOwnership { shadow_owners, .. } => FULL + 8 + 8 * shadow_owners.len(),
                Message::OwnerChanged { .. } | Message::RegisterShadowOwner { .. } => 8,
                Message::ForceContribution { entries, .. } => 8 + entries.len() * (1 + 8 + 6 * 8),
            }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.id().0.to_le_bytes());
        match self {
            Message::CreateShadow { state, owner } => {
                put_full(out, state);
                put_u64(out, owner.0 as u64);
            }
            Message::UpdateShadow { kinematics, .. } => put_kinematics(out, kinematics),
            Message::RemoveShadow { .. } | Message::ShadowDeleted { .. } => {}
            Message::TransferOwnership { state, shadow_owners } => {
                put_full(out, state);
                put_u64(out, shadow_owners.len() as u64);
                for r in shadow_owners {
                    put_u64(out, r.0 as u64);
                }
            }
            Message::OwnerChanged { new_owner, .. } => put_u64(out, new_owner.0 as u64),
            Message::ForceContribution { entries, .. } => {
                put_u64(out, entries.len() as u64);
                for e in entries {
                    let (kind, v) = match e.source {
                        ForceSource::Particle(p) => (0u8, p.0),
                        ForceSource::Wall(w) => (1, w as u64),
                        ForceSource::External(x) => (2, x as u64),
                    };
                    out.push(kind);
                    put_u64(out, v);
                    put_vec(out, e.force);
                    put_vec(out, e.torque);
                }
            }
            Message::RegisterShadowOwner { shadow_owner, .. } => put_u64(out, shadow_owner.0 as u64),
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Message, TransportError> {
        let tag = r.u8()?;
        let kind = MessageKind::from_tag(tag).ok_or(TransportError::UnknownTag(tag))?;
        let id = ParticleId(r.u64()?);
        Ok(match kind {
            MessageKind::CreateShadow => {
                let state = get_full(r, id)?;
                let owner = r.rank()?;
                Message::CreateShadow { state, owner }
            }
            MessageKind::UpdateShadow => Message::UpdateShadow {
                id,
                kinematics: get_kinematics(r)?,
            },
            MessageKind::RemoveShadow => Message::RemoveShadow { id },
            MessageKind::TransferOwnership => {
                let state = get_full(r, id)?;
                let n = r.len()?;
                let shadow_owners = (0..n).map(|_| r.rank()).collect::<Result<_, _>>()?;
                Message::TransferOwnership { state, shadow_owners }
            }
            MessageKind::OwnerChanged => Message::OwnerChanged {
                id,
                new_owner: r.rank()?,
            },
            MessageKind::ForceContribution => {
                let n = r.len()?;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let kind = r.u8()?;
                    let v = r.u64()?;
                    let source = match kind {
                        0 => ForceSource::Particle(ParticleId(v)),
                        1 => ForceSource::Wall(v as u32),
                        2 => ForceSource::External(v as u32),
                        _ => return Err(TransportError::Malformed("force source kind")),
                    };
                    let force = r.vec3()?;
                    let torque = r.vec3()?;
                    entries.push(ForceEntry { source, force, torque });
                }
                Message::ForceContribution { id, entries }
            }
            MessageKind::ShadowDeleted => Message::ShadowDeleted { id },
            MessageKind::RegisterShadowOwner => Message::RegisterShadowOwner {
                id,
                shadow_owner: r.rank()?,
            },
        })
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_vec(out: &mut Vec<u8>, v: Vec3) {
    put_f64(out, v.x);
    put_f64(out, v.y);
    put_f64(out, v.z);
}

fn put_kinematics(out: &mut Vec<u8>, k: &Kinematics) {
    put_vec(out, k.position);
    for c in k.orientation.0 {
        put_f64(out, c);
    }
    put_vec(out, k.velocity);
    put_vec(out, k.angular_velocity);
}

fn put_full(out: &mut Vec<u8>, s: &ParticleState) {
    put_kinematics(out, &s.kinematics());
    put_f64(out, s.radius);
    put_f64(out, s.inv_mass);
    put_f64(out, s.inv_inertia);
}

fn get_kinematics(r: &mut Reader<'_>) -> Result<Kinematics, TransportError> {
    let position = r.vec3()?;
    let orientation = Quat([r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
    let velocity = r.vec3()?;
    let angular_velocity = r.vec3()?;
    Ok(Kinematics {
        position,
        orientation,
        velocity,
        angular_velocity,
    })
}

fn get_full(r: &mut Reader<'_>, id: ParticleId) -> Result<ParticleState, TransportError> {
    let k = get_kinematics(r)?;
    Ok(ParticleState {
        id,
        position: k.position,
        velocity: k.velocity,
        angular_velocity: k.angular_velocity,
        orientation: k.orientation,
        radius: r.f64()?,
        inv_mass: r.f64()?,
        inv_inertia: r.f64()?,
    })
}

/// Cursor over an encoded block.
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], TransportError> {
        if self.buf.len() < N {
            return Err(TransportError::Malformed("truncated"));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, TransportError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, TransportError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, TransportError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, TransportError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn vec3(&mut self) -> Result<Vec3, TransportError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn rank(&mut self) -> Result<Rank, TransportError> {
        let v = self.u64()?;
        u32::try_from(v)
            .map(Rank)
            .map_err(|_| TransportError::Malformed("rank exceeds u32"))
    }

    fn len(&mut self) -> Result<usize, TransportError> {
        let n = self.u64()? as usize;
        // every element takes at least 8 bytes
        if n > self.buf.len() / 8 {
            return Err(TransportError::Malformed("length prefix"));
        }
        Ok(n)
    }
}

/// Pack one channel's messages into an aggregated block.
pub fn encode_block(msgs: &[Message]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + msgs.iter().map(Message::wire_len).sum::<usize>());
    out.extend_from_slice(&(msgs.len() as u32).to_le_bytes());
    for m in msgs {
        m.encode(&mut out);
    }
    out
}

pub fn decode_block(buf: &[u8]) -> Result<Vec<Message>, TransportError> {
    let mut r = Reader::new(buf);
    let n = r.u32()? as usize;
    let mut msgs = Vec::with_capacity(n.min(buf.len() / 9));
    for _ in 0..n {
        msgs.push(Message::decode(&mut r)?);
    }
    if !r.is_empty() {
        return Err(TransportError::Malformed("trailing bytes"));
    }
    Ok(msgs)
}

/// One rank's send side: a buffer per destination.
#[derive(Debug)]
pub struct Outbox {
    src: Rank,
    channels: Vec<Vec<Message>>,
}

impl Outbox {
    fn new(src: Rank, ranks: usize) -> Self {
        Self {
            src,
            channels: (0..ranks).map(|_| Vec::new()).collect(),
        }
    }

    pub fn src(&self) -> Rank {
        self.src
    }

    pub fn enqueue(&mut self, dst: Rank, msg: Message) -> Result<(), TransportError> {
        let count = self.channels.len();
        match self.channels.get_mut(dst.index()) {
            Some(ch) => {
                ch.push(msg);
                Ok(())
            }
            None => Err(TransportError::InvalidRank { rank: dst, count }),
        }
    }

    pub fn pending(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }
}

/// Counters for one exchange.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExchangeStats {
    pub messages: u64,
    /// Number of non-empty channels, i.e. aggregated blocks sent.
    pub blocks: u64,
    pub bytes: u64,
    pub by_kind: [u64; 8],
}

impl ExchangeStats {
    pub fn merge(&mut self, o: &ExchangeStats) {
        self.messages += o.messages;
        self.blocks += o.blocks;
        self.bytes += o.bytes;
        for (a, b) in self.by_kind.iter_mut().zip(o.by_kind) {
            *a += b;
        }
    }

    pub fn count(&self, kind: MessageKind) -> u64 {
        self.by_kind[kind as usize - 1]
    }
}

/// Messages delivered to one rank, ordered by source rank and then FIFO.
pub type Inbox = Vec<(Rank, Message)>;

pub struct Transport {
    outboxes: Vec<Outbox>,
    exchanges: u64,
    totals: ExchangeStats,
    dump: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transport")
            .field("ranks", &self.outboxes.len())
            .field("exchanges", &self.exchanges)
            .field("totals", &self.totals)
            .finish()
    }
}

impl Transport {
    pub fn new(ranks: usize) -> Self {
        Self {
            outboxes: (0..ranks as u32).map(|r| Outbox::new(Rank(r), ranks)).collect(),
            exchanges: 0,
            totals: ExchangeStats::default(),
            dump: None,
        }
    }

    pub fn rank_count(&self) -> usize {
        self.outboxes.len()
    }

    /// Write every block to `w` as `src:u32 dst:u32 len:u32 block`.
    pub fn set_dump(&mut self, w: Box<dyn Write + Send>) {
        self.dump = Some(w);
    }

    pub fn outbox_mut(&mut self, src: Rank) -> Result<&mut Outbox, TransportError> {
        let count = self.outboxes.len();
        self.outboxes
            .get_mut(src.index())
            .ok_or(TransportError::InvalidRank { rank: src, count })
    }

    pub fn outboxes_mut(&mut self) -> &mut [Outbox] {
        &mut self.outboxes
    }

    pub fn enqueue(&mut self, src: Rank, dst: Rank, msg: Message) -> Result<(), TransportError> {
        self.outbox_mut(src)?.enqueue(dst, msg)
    }

    pub fn exchange_count(&self) -> u64 {
        self.exchanges
    }

    pub fn totals(&self) -> &ExchangeStats {
        &self.totals
    }

    /// Deliver every buffered message exactly once. Channels are encoded to
    /// blocks and decoded on the receiving side.
    pub fn exchange(&mut self) -> Result<(Vec<Inbox>, ExchangeStats), TransportError> {
        let n = self.outboxes.len();
        let mut inboxes: Vec<Inbox> = (0..n).map(|_| Vec::new()).collect();
        let mut stats = ExchangeStats::default();
        for outbox in &mut self.outboxes {
            let src = outbox.src;
            for (dst, ch) in outbox.channels.iter_mut().enumerate() {
                if ch.is_empty() {
                    continue;
                }
                let block = encode_block(ch);
                stats.blocks += 1;
                stats.messages += ch.len() as u64;
                stats.bytes += block.len() as u64;
                for m in ch.iter() {
                    stats.by_kind[m.kind() as usize - 1] += 1;
                }
                ch.clear();
                if let Some(w) = self.dump.as_mut() {
                    w.write_all(&src.0.to_le_bytes())?;
                    w.write_all(&(dst as u32).to_le_bytes())?;
                    w.write_all(&(block.len() as u32).to_le_bytes())?;
                    w.write_all(&block)?;
                }
                inboxes[dst].extend(decode_block(&block)?.into_iter().map(|m| (src, m)));
            }
        }
        self.exchanges += 1;
        self.totals.merge(&stats);
        Ok((inboxes, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(id: u64) -> ParticleState {
        ParticleState::sphere(ParticleId(id), Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.1, -0.2, 0.3), 0.4, 1.0)
    }

    #[test]
    fn messages_are_invisible_before_exchange() {
        let mut t = Transport::new(3);
        t.enqueue(Rank(0), Rank(2), Message::RemoveShadow { id: ParticleId(1) }).unwrap();
        assert_eq!(t.outbox_mut(Rank(0)).unwrap().pending(), 1);
        let (inboxes, stats) = t.exchange().unwrap();
        assert_eq!(inboxes[2].len(), 1);
        assert_eq!(stats.blocks, 1);
        let (inboxes, stats) = t.exchange().unwrap();
        assert!(inboxes.iter().all(Vec::is_empty));
        assert_eq!(stats, ExchangeStats::default());
    }

    #[test]
    fn fifo_within_channel() {
        let mut t = Transport::new(2);
        for i in 0..5 {
            t.enqueue(Rank(1), Rank(0), Message::ShadowDeleted { id: ParticleId(i) }).unwrap();
        }
        let (inboxes, _) = t.exchange().unwrap();
        let ids: Vec<u64> = inboxes[0].iter().map(|(_, m)| m.id().0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn inbox_sorted_by_source() {
        let mut t = Transport::new(6);
        for src in [2u32, 0, 1] {
            t.enqueue(Rank(src), Rank(5), Message::RemoveShadow { id: ParticleId(src as u64) })
                .unwrap();
        }
        let (inboxes, stats) = t.exchange().unwrap();
        let srcs: Vec<u32> = inboxes[5].iter().map(|(s, _)| s.0).collect();
        assert_eq!(srcs, vec![0, 1, 2]);
        assert_eq!(stats.blocks, 3);
    }

    #[test]
    fn invalid_rank_rejected() {
        let mut t = Transport::new(2);
        assert!(matches!(
            t.enqueue(Rank(0), Rank(2), Message::RemoveShadow { id: ParticleId(0) }),
            Err(TransportError::InvalidRank { .. })
        ));
        assert!(t.enqueue(Rank(9), Rank(0), Message::RemoveShadow { id: ParticleId(0) }).is_err());
    }

    #[test]
    fn update_is_smaller_than_create() {
        let s = state(3);
        let create = Message::CreateShadow { state: s, owner: Rank(1) };
        let update = Message::UpdateShadow {
            id: s.id,
            kinematics: s.kinematics(),
        };
        assert!(update.wire_len() < create.wire_len());
        let mut a = Vec::new();
        let mut b = Vec::new();
        create.encode(&mut a);
        update.encode(&mut b);
        // the update payload is a prefix of the create payload
        assert_eq!(&a[9..b.len()], &b[9..]);
    }

    #[test]
    fn block_byte_count_matches_wire_len() {
        let s = state(4);
        let msgs = vec![
            Message::CreateShadow { state: s, owner: Rank(3) },
            Message::TransferOwnership {
                state: s,
                shadow_owners: vec![Rank(1), Rank(7)],
            },
            Message::ForceContribution {
                id: s.id,
                entries: vec![ForceEntry {
                    source: ForceSource::Wall(2),
                    force: Vec3::new(1.0, 0.0, 0.0),
                    torque: Vec3::ZERO,
                }],
            },
            Message::OwnerChanged { id: s.id, new_owner: Rank(2) },
        ];
        let block = encode_block(&msgs);
        assert_eq!(block.len(), 4 + msgs.iter().map(Message::wire_len).sum::<usize>());
        assert_eq!(decode_block(&block).unwrap(), msgs);
    }

    #[test]
    fn truncated_block_is_rejected() {
        let block = encode_block(&[Message::CreateShadow { state: state(1), owner: Rank(0) }]);
        assert!(decode_block(&block[..block.len() - 1]).is_err());
        let mut bad = block.clone();
        bad[4] = 99;
        assert!(matches!(decode_block(&bad), Err(TransportError::UnknownTag(99))));
    }

    #[test]
    fn dump_writes_frames() {
        use std::sync::{Arc, Mutex};
        #[derive(Clone, Default)]
        struct Sink(Arc<Mutex<Vec<u8>>>);
        impl Write for Sink {
            fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let sink = Sink::default();
        let mut t = Transport::new(2);
        t.set_dump(Box::new(sink.clone()));
        t.enqueue(Rank(1), Rank(0), Message::ShadowDeleted { id: ParticleId(5) }).unwrap();
        t.exchange().unwrap();
        let bytes = sink.0.lock().unwrap().clone();
        assert_eq!(&bytes[0..4], &1u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &0u32.to_le_bytes());
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 12 + len);
    }
}
