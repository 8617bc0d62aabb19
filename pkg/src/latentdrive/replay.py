"""Episode replay with termination-priority sequence sampling.

Every batch slot flips a fair coin: heads draws a uniformly random window
from the whole store, tails draws the window ending exactly on the final
record of a terminated episode. Windows never cross episode boundaries;
episodes shorter than the window are front-padded with blank records
(zero observation, action 0, ``first`` set) that the validity mask switches off.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

import numpy as np
import torch

from .errors import UnavailableError, ValidationError


@dataclass
class TransitionRecord:
    """``obs`` is ``(C, H, W)`` uint8; ``prev_action`` led to it; ``reward``/``done`` belong to that step."""

    obs: np.ndarray
    meas: np.ndarray
    prev_action: int
    reward: float
    done: bool
    first: bool


@dataclass
class SequenceBatch:
    obs: torch.Tensor  # (B, L, C, H, W) float32 in {0, 1}
    meas: torch.Tensor  # (B, L, M)
    prev_action: torch.Tensor  # (B, L) int64
    reward: torch.Tensor  # (B, L)
    done: torch.Tensor  # (B, L)
    first: torch.Tensor  # (B, L) bool
    mask: torch.Tensor  # (B, L) bool, False on padding
    anchored: np.ndarray  # (B,) bool, True for termination-anchored windows
    index: list  # per slot (episode id, start, stop)

    def __len__(self):
        return self.obs.shape[0]


class Episode:
    __slots__ = ("id", "shape", "obs", "meas", "prev_action", "reward", "done", "first")

    def __init__(self, eid: int, shape):
        self.id = eid
        self.shape = tuple(shape)
        self.obs: list = []
        self.meas: list = []
        self.prev_action: list = []
        self.reward: list = []
        self.done: list = []
        self.first: list = []

    def __len__(self):
        return len(self.reward)

    @property
    def terminated(self) -> bool:
        return bool(self.done) and self.done[-1]

    def add(self, rec: TransitionRecord):
        obs = np.asarray(rec.obs, dtype=np.uint8)
        if obs.shape != self.shape:
            raise ValidationError(f"observation shape {obs.shape} != {self.shape}")
        self.obs.append(np.packbits(obs.reshape(-1)))
        self.meas.append(np.asarray(rec.meas, dtype=np.float32))
        self.prev_action.append(int(rec.prev_action))
        self.reward.append(float(rec.reward))
        self.done.append(bool(rec.done))
        self.first.append(bool(rec.first))


class ReplayBuffer:
    def __init__(self, capacity: int = 500_000):
        if capacity < 1:
            raise ValidationError("capacity must be >= 1")
        self.capacity = capacity
        self.episodes: dict[int, Episode] = {}
        self.terminations: list[tuple[int, int]] = []  # (episode id, final index)
        self.size = 0
        self.transitions = 0  # stored records that are not episode starts
        self._next_id = 0
        self._open: dict = {}  # stream key -> episode id still being written
        self._lock = threading.Lock()

    def __len__(self):
        return self.size

    # writing --------------------------------------------------------------
    @staticmethod
    def _check(records):
        if not records:
            raise ValidationError("episode must be nonempty")
        for r in records[:-1]:
            if r.done:
                raise ValidationError("done=true before the final record of an episode")

    def append(self, episode: list[TransitionRecord]):
        """Store a complete episode; at most its final record may be done."""
        self._check(episode)
        with self._lock:
            ep = self._new_episode(episode[0].obs.shape)
            for r in episode:
                self._add(ep, r)
            self._close(ep)
            self._evict()

    def extend(self, stream, records: list[TransitionRecord]):
        """Grow the open episode of ``stream``; a done record closes it."""
        if not records:
            return
        self._check(records)
        with self._lock:
            eid = self._open.get(stream)
            ep = self.episodes.get(eid) if eid is not None else None
            if ep is None or records[0].first:
                ep = self._new_episode(records[0].obs.shape)
                self._open[stream] = ep.id
            for r in records:
                self._add(ep, r)
            if ep.terminated:
                self._close(ep)
                self._open.pop(stream, None)
            self._evict()

    def _new_episode(self, shape):
        ep = Episode(self._next_id, shape)
        self._next_id += 1
        self.episodes[ep.id] = ep
        return ep

    def _add(self, ep, rec):
        ep.add(rec)
        self.size += 1
        self.transitions += 0 if rec.first else 1

    def _close(self, ep):
        if ep.terminated:
            self.terminations.append((ep.id, len(ep) - 1))

    def _evict(self):
        while self.size > self.capacity and len(self.episodes) > 1:
            eid = next(iter(self.episodes))
            ep = self.episodes.pop(eid)
            self.size -= len(ep)
            self.transitions -= sum(1 for f in ep.first if not f)
            self.terminations = [t for t in self.terminations if t[0] != eid]
        if self.size > self.capacity:
            raise ValidationError(f"a single episode of {self.size} records exceeds capacity {self.capacity}")

    # reading --------------------------------------------------------------
    def sample(self, batch: int, seq_len: int, rng) -> SequenceBatch:
        with self._lock:
            if not self.episodes:
                raise UnavailableError("replay buffer is empty")
            eps = list(self.episodes.values())
            starts = np.array([max(len(e) - seq_len, 0) + 1 for e in eps], dtype=np.int64)
            cum = np.cumsum(starts)
            slots = []
            anchored = np.zeros(batch, dtype=bool)
            for b in range(batch):
                if self.terminations and rng.random() < 0.5:
                    eid, last = self.terminations[int(rng.integers(len(self.terminations)))]
                    stop = last + 1
                    slots.append((eid, max(stop - seq_len, 0), stop))
                    anchored[b] = True
                else:
                    k = int(rng.integers(cum[-1]))
                    e = int(np.searchsorted(cum, k, side="right"))
                    start = k - (cum[e - 1] if e else 0)
                    ep = eps[e]
                    slots.append((ep.id, int(start), int(min(start + seq_len, len(ep)))))
            return self._gather(slots, seq_len, anchored)

    def _gather(self, slots, seq_len, anchored):
        first_ep = self.episodes[slots[0][0]]
        shape = first_ep.shape
        n_bits = int(np.prod(shape))
        B = len(slots)
        packed = np.zeros((B, seq_len, (n_bits + 7) // 8), dtype=np.uint8)
        meas = np.zeros((B, seq_len, len(first_ep.meas[0])), dtype=np.float32)
        act = np.zeros((B, seq_len), dtype=np.int64)
        rew = np.zeros((B, seq_len), dtype=np.float32)
        done = np.zeros((B, seq_len), dtype=np.float32)
        first = np.ones((B, seq_len), dtype=bool)
        mask = np.zeros((B, seq_len), dtype=bool)
        for b, (eid, start, stop) in enumerate(slots):
            ep = self.episodes[eid]
            n = stop - start
            off = seq_len - n
            packed[b, off:] = np.stack(ep.obs[start:stop])
            meas[b, off:] = np.stack(ep.meas[start:stop])
            act[b, off:] = ep.prev_action[start:stop]
            rew[b, off:] = ep.reward[start:stop]
            done[b, off:] = ep.done[start:stop]
            first[b, off:] = ep.first[start:stop]
            mask[b, off:] = True
        obs = np.unpackbits(packed, axis=-1, count=n_bits).reshape(B, seq_len, *shape)
        return SequenceBatch(
            obs=torch.from_numpy(obs.astype(np.float32)),
            meas=torch.from_numpy(meas),
            prev_action=torch.from_numpy(act),
            reward=torch.from_numpy(rew),
            done=torch.from_numpy(done),
            first=torch.from_numpy(first),
            mask=torch.from_numpy(mask),
            anchored=anchored,
            index=list(slots),
        )

    # spill to disk ----------------------------------------------------------
    MAGIC = b"T2DR"
    VERSION = 1

    def save(self, path: str):
        """Length-prefixed little-endian episode records after a versioned header."""
        with self._lock, open(path, "wb") as fh:
            fh.write(self.MAGIC + struct.pack("<II", self.VERSION, len(self.episodes)))
            for ep in self.episodes.values():
                header = struct.pack("<I", len(ep)) + struct.pack("<I", len(ep.shape)) + struct.pack(
                    f"<{len(ep.shape)}I", *ep.shape
                )
                body = b"".join(
                    [
                        np.stack(ep.obs).tobytes(),
                        np.stack(ep.meas).astype("<f4").tobytes(),
                        np.asarray(ep.prev_action, dtype="<i4").tobytes(),
                        np.asarray(ep.reward, dtype="<f4").tobytes(),
                        np.asarray(ep.done, dtype=np.uint8).tobytes(),
                        np.asarray(ep.first, dtype=np.uint8).tobytes(),
                        struct.pack("<I", len(ep.meas[0])),
                    ]
                )
                fh.write(struct.pack("<Q", len(header) + len(body)) + header + body)

    @classmethod
    def load(cls, path: str, capacity: int = 500_000) -> "ReplayBuffer":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != cls.MAGIC:
            raise ValidationError(f"{path}: not a replay file")
        version, count = struct.unpack("<II", data[4:12])
        if version != cls.VERSION:
            raise ValidationError(f"{path}: unsupported replay version {version}")
        buf = cls(capacity)
        pos = 12
        for _ in range(count):
            (size,) = struct.unpack("<Q", data[pos : pos + 8])
            rec = data[pos + 8 : pos + 8 + size]
            pos += 8 + size
            n, ndim = struct.unpack("<II", rec[:8])
            shape = struct.unpack(f"<{ndim}I", rec[8 : 8 + 4 * ndim])
            p = 8 + 4 * ndim
            nbytes = (int(np.prod(shape)) + 7) // 8
            (m,) = struct.unpack("<I", rec[-4:])
            obs = np.frombuffer(rec[p : p + n * nbytes], dtype=np.uint8).reshape(n, nbytes)
            p += n * nbytes
            meas = np.frombuffer(rec[p : p + 4 * n * m], dtype="<f4").reshape(n, m)
            p += 4 * n * m
            act = np.frombuffer(rec[p : p + 4 * n], dtype="<i4")
            p += 4 * n
            rew = np.frombuffer(rec[p : p + 4 * n], dtype="<f4")
            p += 4 * n
            done = np.frombuffer(rec[p : p + n], dtype=np.uint8)
            p += n
            first = np.frombuffer(rec[p : p + n], dtype=np.uint8)
            ep = buf._new_episode(shape)
            ep.obs = [row.copy() for row in obs]
            ep.meas = [row.copy() for row in meas]
            ep.prev_action = [int(a) for a in act]
            ep.reward = [float(r) for r in rew]
            ep.done = [bool(d) for d in done]
            ep.first = [bool(f) for f in first]
            buf.size += n
            buf.transitions += int(np.sum(first == 0))
            buf._close(ep)
        buf._evict()
        return buf
