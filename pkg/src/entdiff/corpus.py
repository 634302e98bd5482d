"""Post ingestion and the read-only corpus store.

A store is built once from newline-delimited post records and is immutable
afterwards.  On disk it is an append-only record log (``posts.jsonl``) plus
an index file that can always be rebuilt from the log.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import pickle
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional

log = logging.getLogger(__name__)

DELETED_AUTHORS = frozenset({"", "[deleted]", "[removed]"})

# canonical field -> accepted aliases, in lookup order
_ALIASES = {
    "post_id": ("post_id", "id"),
    "parent_id": ("parent_id",),
    "thread_id": ("thread_id", "link_id"),
    "author": ("author",),
    "subreddit": ("subreddit",),
    "created_at": ("created_at", "created_utc"),
    "body": ("body", "text", "selftext"),
}

LOG_FILE = "posts.jsonl"
INDEX_FILE = "index.pkl"
MENTIONS_FILE = "mentions.jsonl"


class RecordError(ValueError):
    """A post record is malformed."""


@dataclass(frozen=True)
class Post:
    post_id: str
    parent_id: Optional[str]
    thread_id: str
    author: str
    subreddit: str
    created_at: int
    body: str


@dataclass(frozen=True)
class Interaction:
    source: str
    target: str
    at: int
    post_id: str


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: int = 0
    filtered: int = 0
    reasons: dict = None

    def __post_init__(self):
        if self.reasons is None:
            self.reasons = {}


def entity_key(mention: str) -> str:
    """Identity key for an entity surface form: lowercased, single-spaced."""
    return " ".join(mention.lower().split())


def is_user(author: Optional[str]) -> bool:
    return author is not None and author not in DELETED_AUTHORS


def _strip_fullname(value):
    # reddit fullnames carry a type prefix: t1_ comment, t3_ submission
    if value is None:
        return None
    value = str(value)
    if len(value) > 3 and value[0] == "t" and value[1].isdigit() and value[2] == "_":
        return value[3:]
    return value


def _field(record, name):
    for alias in _ALIASES[name]:
        if alias in record:
            return record[alias]
    return None


def parse_record(record: Mapping) -> Post:
    """Convert one raw record (canonical or reddit-dump field names) to a Post."""
    if not isinstance(record, Mapping):
        raise RecordError("record is not a mapping")
    post_id = _strip_fullname(_field(record, "post_id"))
    if not post_id:
        raise RecordError("missing id")
    author = _field(record, "author")
    if not isinstance(author, str):
        raise RecordError("missing author")
    subreddit = _field(record, "subreddit")
    if not isinstance(subreddit, str) or not subreddit:
        raise RecordError("missing subreddit")
    created = _field(record, "created_at")
    if isinstance(created, bool) or created is None:
        raise RecordError("missing created_utc")
    try:
        created = int(created)
    except (TypeError, ValueError):
        raise RecordError(f"bad created_utc {created!r}") from None
    body = _field(record, "body")
    if body is None:
        body = ""
    if not isinstance(body, str):
        raise RecordError("body is not text")
    parent_id = _strip_fullname(_field(record, "parent_id"))
    thread_id = _strip_fullname(_field(record, "thread_id"))
    if parent_id == post_id:
        raise RecordError("post is its own parent")
    if thread_id is None:
        thread_id = post_id if parent_id is None else parent_id
    return Post(post_id, parent_id or None, thread_id, author, subreddit, created, body)


def post_to_record(post: Post) -> dict:
    return asdict(post)


def _time_key(post: Post):
    return (post.created_at, post.post_id)


class CorpusStore:
    """Immutable post table with reply, author, interaction, community and mention indexes."""

    def __init__(self, posts: Iterable[Post] = ()):
        self.posts: dict[str, Post] = {}
        for p in posts:
            if p.post_id in self.posts:
                raise RecordError(f"duplicate post id {p.post_id}")
            self.posts[p.post_id] = p
        self.mentions: dict[str, list[str]] = {}
        self._build()

    # -- construction -------------------------------------------------

    def _build(self):
        posts = self.posts
        ordered = sorted(posts.values(), key=_time_key)
        self.children: dict[str, list[str]] = defaultdict(list)
        self.roots: list[str] = []
        self.anomalies: list[str] = []
        self.by_author: dict[str, list[str]] = defaultdict(list)
        # (u, v) -> times at which u replied to a post by v
        self.interactions: dict[tuple, list[int]] = defaultdict(list)
        # u -> times of every reply u made (to any post in the store)
        self.reply_times: dict[str, list[int]] = defaultdict(list)
        # u -> {v: earliest interaction time in either direction}
        self._first_contact: dict[str, dict[str, int]] = defaultdict(dict)
        # u -> {subreddit: sorted post times}
        self.communities: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))

        for p in ordered:
            parent = posts.get(p.parent_id) if p.parent_id is not None else None
            if parent is None:
                self.roots.append(p.post_id)
            else:
                self.children[parent.post_id].append(p.post_id)
                if p.created_at < parent.created_at:
                    self.anomalies.append(p.post_id)
            if not is_user(p.author):
                continue
            self.by_author[p.author].append(p.post_id)
            self.communities[p.author][p.subreddit].append(p.created_at)
            if parent is None:
                continue
            self.reply_times[p.author].append(p.created_at)
            if is_user(parent.author) and parent.author != p.author:
                u, v = p.author, parent.author
                self.interactions[(u, v)].append(p.created_at)
                for a, b in ((u, v), (v, u)):
                    seen = self._first_contact[a].get(b)
                    if seen is None or p.created_at < seen:
                        self._first_contact[a][b] = p.created_at
        self._detach_cycles(ordered)
        self.children = dict(self.children)
        self.by_author = dict(self.by_author)
        self.interactions = dict(self.interactions)
        self.reply_times = dict(self.reply_times)
        self._first_contact = dict(self._first_contact)
        self.communities = {u: dict(c) for u, c in self.communities.items()}
        self._build_mention_index()

    def _detach_cycles(self, ordered):
        # parent links that loop never reach a root; cut the earliest post
        # of each unreachable group loose so every post hangs off a root
        self._detached = set()
        reached = set()
        stack = list(self.roots)
        while True:
            while stack:
                cur = stack.pop()
                reached.add(cur)
                stack.extend(self.children.get(cur, ()))
            if len(reached) == len(self.posts):
                return
            p = next(p for p in ordered if p.post_id not in reached)
            self.children[p.parent_id].remove(p.post_id)
            self._detached.add(p.post_id)
            self.roots.append(p.post_id)
            self.anomalies.append(p.post_id)
            log.warning("reply cycle through %s; treating it as a thread root", p.post_id)
            stack = [p.post_id]

    def _build_mention_index(self):
        index = defaultdict(list)
        for post_id, keys in self.mentions.items():
            p = self.posts[post_id]
            for key in keys:
                index[key].append((p.post_id, p.author, p.created_at))
        for key in index:
            index[key].sort(key=lambda item: (item[2], item[0]))
        self.mention_index: dict[str, list[tuple]] = dict(index)

    def attach_mentions(self, mentions: Iterable[tuple[str, Iterable[str]]]) -> int:
        """Attach entity mentions, given as (post_id, [surface form, ...]) pairs.

        Each post cites an entity at most once regardless of repeats.  Unknown
        post ids are skipped.  Returns the number of posts with mentions.
        """
        attached = {}
        for post_id, texts in mentions:
            if post_id not in self.posts:
                log.warning("mention for unknown post %s skipped", post_id)
                continue
            keys = attached.setdefault(post_id, [])
            for text in texts:
                key = entity_key(text)
                if key and key not in keys:
                    keys.append(key)
        self.mentions = {pid: sorted(keys) for pid, keys in attached.items() if keys}
        self._build_mention_index()
        return len(self.mentions)

    # -- queries ------------------------------------------------------

    def __len__(self):
        return len(self.posts)

    def __contains__(self, post_id):
        return post_id in self.posts

    def users(self) -> list[str]:
        return sorted(self.by_author)

    def parent(self, post_id: str) -> Optional[str]:
        p = self.posts[post_id]
        if p.parent_id is not None and p.parent_id in self.posts and post_id not in self._detached:
            return p.parent_id
        return None

    def iter_interactions(self) -> Iterator[Interaction]:
        for p in sorted(self.posts.values(), key=_time_key):
            parent_id = self.parent(p.post_id)
            if parent_id is None:
                continue
            q = self.posts[parent_id]
            if is_user(p.author) and is_user(q.author) and p.author != q.author:
                yield Interaction(p.author, q.author, p.created_at, p.post_id)

    def neighbors_before(self, u: str, t: int) -> set[str]:
        """Users who interacted with ``u`` (either direction) strictly before ``t``."""
        contacts = self._first_contact.get(u)
        if not contacts:
            return set()
        return {v for v, first in contacts.items() if first < t}

    def neighbor_contacts(self, u: str) -> dict[str, int]:
        """Map of neighbour -> earliest interaction time."""
        return dict(self._first_contact.get(u, {}))

    def interactions_count(self, u: str, v: str, window: Optional[tuple] = None) -> tuple[int, int]:
        """(replies by u to posts of v, all replies by u), optionally within [t0, t1)."""
        to_v = self.interactions.get((u, v), [])
        total = self.reply_times.get(u, [])
        if window is None:
            return len(to_v), len(total)
        t0, t1 = window
        if t1 <= t0:
            return 0, 0
        return _count_in(to_v, t0, t1), _count_in(total, t0, t1)

    def community_set(self, u: str, window: Optional[tuple] = None) -> set[str]:
        """Subreddits ``u`` posted in, optionally restricted to posts within [t0, t1)."""
        comms = self.communities.get(u, {})
        if window is None:
            return set(comms)
        t0, t1 = window
        if t1 <= t0:
            return set()
        return {s for s, times in comms.items() if _count_in(times, t0, t1)}

    def first_post_times(self, u: str) -> dict[str, int]:
        return {s: times[0] for s, times in self.communities.get(u, {}).items()}

    def entity_posts(self, key: str) -> list[tuple]:
        """Time-ordered (post_id, author, created_at) for posts citing ``key``."""
        return self.mention_index.get(key, [])

    def cites(self, post_id: str, key: str) -> bool:
        return key in self.mentions.get(post_id, ())

    def entity_counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.mention_index.items()}

    def depth(self, post_id: str) -> int:
        d = 0
        cur = self.parent(post_id)
        while cur is not None:
            d += 1
            cur = self.parent(cur)
        return d

    # -- persistence --------------------------------------------------

    def export_records(self) -> list[dict]:
        return [post_to_record(p) for p in self.posts.values()]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        log_path = directory / LOG_FILE
        with open(log_path, "w", encoding="utf-8") as fh:
            for rec in self.export_records():
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
        digest = _file_digest(log_path)
        with open(directory / INDEX_FILE, "wb") as fh:
            pickle.dump((digest, self._index_state()), fh, protocol=4)

    def save_mentions(self, path) -> None:
        write_mentions(path, sorted(self.mentions.items()))

    def _index_state(self):
        def sorted_map(d):
            return {k: d[k] for k in sorted(d)}

        return {
            "children": sorted_map(self.children),
            "roots": list(self.roots),
            "anomalies": list(self.anomalies),
            "detached": sorted(self._detached),
            "by_author": sorted_map(self.by_author),
            "interactions": sorted_map(self.interactions),
            "reply_times": sorted_map(self.reply_times),
            "first_contact": {u: sorted_map(c) for u, c in sorted(self._first_contact.items())},
            "communities": {u: sorted_map(c) for u, c in sorted(self.communities.items())},
        }

    @classmethod
    def load(cls, directory) -> "CorpusStore":
        directory = Path(directory)
        log_path = directory / LOG_FILE
        if not log_path.exists():
            raise FileNotFoundError(f"no store at {directory}")
        posts = []
        with open(log_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    posts.append(Post(**json.loads(line)))
        store = cls.__new__(cls)
        store.posts = {p.post_id: p for p in posts}
        store.mentions = {}
        index_path = directory / INDEX_FILE
        state = None
        if index_path.exists():
            try:
                with open(index_path, "rb") as fh:
                    digest, state = pickle.load(fh)
                if digest != _file_digest(log_path):
                    state = None
            except Exception:  # stale or unreadable index; rebuild from the log
                state = None
        if state is None:
            store._build()
        else:
            store.children = state["children"]
            store.roots = state["roots"]
            store.anomalies = state["anomalies"]
            store._detached = set(state["detached"])
            store.by_author = state["by_author"]
            store.interactions = state["interactions"]
            store.reply_times = state["reply_times"]
            store._first_contact = state["first_contact"]
            store.communities = state["communities"]
            store._build_mention_index()
        mentions_path = directory / MENTIONS_FILE
        if mentions_path.exists():
            store.attach_mentions(read_mentions(mentions_path))
        return store


def _count_in(times: list, t0, t1) -> int:
    return bisect.bisect_left(times, t1) - bisect.bisect_left(times, t0)


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def iter_jsonl(path) -> Iterator:
    """Yield parsed lines of a JSON-lines file; unparsable lines yield the raw string."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                yield line


def ingest(records: Iterable, subreddits: Optional[Iterable[str]] = None) -> tuple[CorpusStore, IngestReport]:
    """Build a store from raw records, keeping only posts in ``subreddits``.

    ``subreddits`` of None keeps everything.  Malformed records and repeated
    post ids are rejected and counted; the reason is logged.
    """
    keep = None if subreddits is None else set(subreddits)
    report = IngestReport()
    accepted: dict[str, Post] = {}
    for n, raw in enumerate(records):
        if isinstance(raw, str):
            try:
                raw = json.loads(raw)
            except json.JSONDecodeError:
                _reject(report, n, "invalid json")
                continue
        try:
            post = parse_record(raw)
        except RecordError as exc:
            _reject(report, n, str(exc))
            continue
        if keep is not None and post.subreddit not in keep:
            report.filtered += 1
            continue
        if post.post_id in accepted:
            _reject(report, n, "duplicate id")
            continue
        accepted[post.post_id] = post
    report.accepted = len(accepted)
    store = CorpusStore(accepted.values())
    if store.anomalies:
        log.warning("%d replies predate their parent", len(store.anomalies))
    return store, report


def _reject(report, n, reason):
    report.rejected += 1
    report.reasons[reason] = report.reasons.get(reason, 0) + 1
    log.info("record %d rejected: %s", n, reason)


def read_subreddits(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.startswith("#")]


def read_mentions(path) -> Iterator[tuple[str, list[str]]]:
    for rec in iter_jsonl(path):
        if isinstance(rec, dict) and "post_id" in rec:
            texts = [m["text"] if isinstance(m, dict) else m for m in rec.get("mentions", [])]
            yield rec["post_id"], texts


def write_mentions(path, items: Iterable[tuple[str, list]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for post_id, mentions in items:
            fh.write(json.dumps({"post_id": post_id, "mentions": list(mentions)},
                                sort_keys=True, ensure_ascii=False) + "\n")
