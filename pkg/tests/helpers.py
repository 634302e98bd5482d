from entdiff.corpus import ingest


def store_of(records, mentions=()):
    """Store with mentions attached; ``records`` may be a SyntheticCorpus."""
    if hasattr(records, "records"):
        records, mentions = records.records, records.mentions
    store, _ = ingest(records)
    store.attach_mentions(mentions)
    return store


def rec(pid, author, t, parent=None, sub="A", thread="T"):
    return {"id": pid, "parent_id": parent, "link_id": thread, "author": author,
            "subreddit": sub, "created_utc": t, "body": ""}
