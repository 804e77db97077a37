pub(crate) const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS processes (
    pid       TEXT PRIMARY KEY,
    name      TEXT NOT NULL,
    document  TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS subjects (
    sid             TEXT PRIMARY KEY,
    pid             TEXT NOT NULL REFERENCES processes(pid),
    name            TEXT NOT NULL,
    can_be_started  INTEGER NOT NULL,
    position        INTEGER NOT NULL,
    UNIQUE (pid, name)
);

CREATE TABLE IF NOT EXISTS users (
    username  TEXT PRIMARY KEY CHECK (username <> '')
);

CREATE TABLE IF NOT EXISTS user_roles (
    username      TEXT NOT NULL REFERENCES users(username),
    pid           TEXT NOT NULL REFERENCES processes(pid),
    subject_name  TEXT NOT NULL,
    PRIMARY KEY (username, pid, subject_name)
);

CREATE TABLE IF NOT EXISTS process_instances (
    piid        TEXT PRIMARY KEY,
    pid         TEXT NOT NULL REFERENCES processes(pid),
    terminated  INTEGER NOT NULL DEFAULT 0
);

CREATE TABLE IF NOT EXISTS subject_instances (
    siid             TEXT PRIMARY KEY,
    sid              TEXT NOT NULL REFERENCES subjects(sid),
    piid             TEXT NOT NULL REFERENCES process_instances(piid),
    owner            TEXT,
    is_in_end_state  INTEGER NOT NULL DEFAULT 0,
    terminated       INTEGER NOT NULL DEFAULT 0,
    snapshot         TEXT,
    UNIQUE (sid, piid)
);

CREATE TABLE IF NOT EXISTS tasks (
    tid         TEXT PRIMARY KEY,
    siid        TEXT NOT NULL REFERENCES subject_instances(siid),
    kind        TEXT NOT NULL CHECK (kind IN ('function', 'send', 'receive')),
    name        TEXT NOT NULL,
    state_id    TEXT NOT NULL,
    done        INTEGER NOT NULL DEFAULT 0,
    to_subject  TEXT,
    mtype       TEXT
);

-- A subject instance waits in exactly one state.
CREATE UNIQUE INDEX IF NOT EXISTS tasks_one_open ON tasks(siid) WHERE done = 0;

CREATE TABLE IF NOT EXISTS task_transitions (
    tid       TEXT NOT NULL REFERENCES tasks(tid),
    position  INTEGER NOT NULL,
    label     TEXT NOT NULL,
    PRIMARY KEY (tid, position)
);

CREATE TABLE IF NOT EXISTS task_params (
    tid       TEXT NOT NULL REFERENCES tasks(tid),
    position  INTEGER NOT NULL,
    name      TEXT NOT NULL,
    value     TEXT NOT NULL,
    writable  INTEGER NOT NULL,
    PRIMARY KEY (tid, name)
);

CREATE TABLE IF NOT EXISTS task_mtypes (
    tid       TEXT NOT NULL REFERENCES tasks(tid),
    position  INTEGER NOT NULL,
    mtype     TEXT NOT NULL,
    PRIMARY KEY (tid, mtype)
);

CREATE TABLE IF NOT EXISTS messages (
    mid         TEXT PRIMARY KEY,
    mtype       TEXT NOT NULL,
    from_siid   TEXT NOT NULL REFERENCES subject_instances(siid),
    to_subject  TEXT NOT NULL,
    to_siid     TEXT NOT NULL REFERENCES subject_instances(siid),
    received    INTEGER NOT NULL DEFAULT 0
);

CREATE INDEX IF NOT EXISTS messages_pool ON messages(to_siid, received);

CREATE TABLE IF NOT EXISTS message_params (
    mid    TEXT NOT NULL REFERENCES messages(mid),
    name   TEXT NOT NULL CHECK (name <> ''),
    value  TEXT NOT NULL,
    PRIMARY KEY (mid, name)
);

CREATE TABLE IF NOT EXISTS events (
    seq           INTEGER PRIMARY KEY AUTOINCREMENT,
    kind          TEXT NOT NULL,
    pid           TEXT,
    piid          TEXT,
    siid          TEXT,
    tid           TEXT,
    mid           TEXT,
    mtype         TEXT,
    username      TEXT,
    timestamp_ms  INTEGER NOT NULL
);

CREATE INDEX IF NOT EXISTS events_piid ON events(piid, seq);

-- Flags only ever move forward.
CREATE TRIGGER IF NOT EXISTS tasks_done_monotone BEFORE UPDATE OF done ON tasks
WHEN OLD.done = 1 AND NEW.done = 0
BEGIN SELECT RAISE(ABORT, 'task done flag cannot revert'); END;

CREATE TRIGGER IF NOT EXISTS messages_received_monotone BEFORE UPDATE OF received ON messages
WHEN OLD.received = 1 AND NEW.received = 0
BEGIN SELECT RAISE(ABORT, 'message received flag cannot revert'); END;

CREATE TRIGGER IF NOT EXISTS instances_end_monotone BEFORE UPDATE OF is_in_end_state ON subject_instances
WHEN OLD.is_in_end_state = 1 AND NEW.is_in_end_state = 0
BEGIN SELECT RAISE(ABORT, 'end state flag cannot revert'); END;

CREATE TRIGGER IF NOT EXISTS instances_owner_monotone BEFORE UPDATE OF owner ON subject_instances
WHEN OLD.owner IS NOT NULL AND (NEW.owner IS NULL OR NEW.owner <> OLD.owner)
BEGIN SELECT RAISE(ABORT, 'owner cannot change once set'); END;
"#;
